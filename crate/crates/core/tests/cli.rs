use std::path::Path;
use std::process::{Command, Output};

fn fibersr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fibersr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = fibersr(dir, args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let none = fibersr(dir.path(), &[]);
    assert_eq!(none.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&none.stderr).contains("Usage"));
    assert_eq!(fibersr(dir.path(), &["metrics", "a.pgm"]).status.code(), Some(1));
    assert_eq!(fibersr(dir.path(), &["bogus"]).status.code(), Some(1));
    assert_eq!(fibersr(dir.path(), &["--threads", "0", "samplesize", "--p", "0.8"]).status.code(), Some(1));
    assert_eq!(fibersr(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fibersr(dir.path(), &["metrics", "missing.pgm", "missing.pgm"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.pgm"), b"P2\n2 2\n255\n0 0 0 0\n").unwrap();
    assert_eq!(fibersr(dir.path(), &["metrics", "bad.pgm", "bad.pgm"]).status.code(), Some(2));
    let o = fibersr(dir.path(), &["samplesize", "--p", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn samplesize_prints_count() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ok(dir.path(), &["samplesize", "--power", "0.8", "--alpha", "0.05", "--limit", "0.15", "--p", "0.8"]).trim(), "122");
}

#[test]
fn metrics_of_identical_images() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["phantom", "--width", "32", "--height", "32", "--out", "a.pgm"]);
    assert_eq!(ok(dir.path(), &["metrics", "a.pgm", "a.pgm"]).trim(), "inf,1.000000");
}

#[test]
fn pipeline_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (split, seed) in [("train", "11"), ("val", "12")] {
        ok(d, &["--seed", seed, "phantom", "--width", "48", "--height", "48", "--count", "3", "--out", &format!("data/{split}/hr")]);
        ok(d, &["--seed", seed, "degrade", "--input", &format!("data/{split}/hr"), "--output", &format!("data/{split}/lr"), "--m", "4", "--s", "8"]);
    }
    let train = |threads: &str, weights: &str| {
        ok(
            d,
            &[
                "--threads", threads, "train", "--data", "data", "--weights", weights, "--history", "h.csv",
                "--desk", "--epochs", "2", "--patch-size", "24", "--patches-per-image", "2",
            ],
        )
    };
    let line = train("1", "w1.srcw");
    assert!(line.starts_with("best_epoch="), "{line}");
    train("2", "w2.srcw");
    assert_eq!(std::fs::read(d.join("w1.srcw")).unwrap(), std::fs::read(d.join("w2.srcw")).unwrap());
    assert_eq!(std::fs::read_to_string(d.join("h.csv")).unwrap().lines().count(), 4);

    ok(d, &["infer", "--weights", "w1.srcw", "--input", "data/val/lr/phantom_0000.pgm", "--output", "sr.pgm"]);
    let m = ok(d, &["metrics", "data/val/hr/phantom_0000.pgm", "sr.pgm"]);
    let parts: Vec<f64> = m.trim().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(parts[0].is_finite() && (-1.0..=1.0).contains(&parts[1]));

    let cmp = ok(d, &["compare", "--hr", "data/val/hr/phantom_0000.pgm", "--lr", "data/val/lr/phantom_0000.pgm", "--sr", "sr.pgm"]);
    assert_eq!(cmp.lines().count(), 2);
    assert_eq!(cmp.lines().next().unwrap(), "psnr_lr,psnr_sr,ssim_lr,ssim_sr,delta_psnr,delta_ssim");

    ok(d, &["profile", "--input", "data/val/lr/phantom_0000.pgm", "--row", "3", "--output", "p.csv"]);
    let prof = std::fs::read_to_string(d.join("p.csv")).unwrap();
    assert_eq!(prof.lines().count(), 49);
}

#[test]
fn degrade_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--width", "40", "--height", "40", "--out", "hr.pgm", "--centers", "c.csv"]);
    assert!(std::fs::read_to_string(d.join("c.csv")).unwrap().starts_with("row,col\n"));
    let run = |seed: &str, out: &str| {
        ok(d, &["--seed", seed, "degrade", "--input", "hr.pgm", "--output", out, "--m", "4", "--s", "8", "--d", "4", "--samples", "s.csv", "--sparse", "sp.pgm"]);
        std::fs::read(d.join(out)).unwrap()
    };
    assert_eq!(run("5", "a.pgm"), run("5", "b.pgm"));
    assert_ne!(run("5", "a.pgm"), run("6", "c.pgm"));
    let samples = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 100);
}

#[test]
fn preprocess_and_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--width", "32", "--height", "32", "--out", "hr.pgm"]);
    ok(d, &["--out-dir", "results", "preprocess", "--input", "hr.pgm", "--output", "pp.pgm", "--tile-rows", "2", "--tile-cols", "2"]);
    assert!(d.join("results/pp.pgm").exists());
    assert_eq!(fibersr(d, &["preprocess", "--input", "hr.pgm", "--output", "x.pgm", "--clip", "0"]).status.code(), Some(2));
}

#[test]
fn readerstats_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("image_id,reader_id,modality,call,confidence,truth\n");
    for reader in ["r1", "r2", "r3"] {
        for (i, truth) in ["neoplastic", "non_neoplastic", "neoplastic", "neoplastic"].iter().enumerate() {
            for modality in ["HR", "SR"] {
                let call = if (i + reader.len() + modality.len()) % 3 == 0 { "non_neoplastic" } else { truth };
                csv.push_str(&format!("img{i},{reader},{modality},{call},high,{truth}\n"));
            }
        }
    }
    std::fs::write(d.join("reads.csv"), csv).unwrap();
    ok(d, &["readerstats", "--reads", "reads.csv", "--out", "stats"]);
    for f in ["reader_summary.csv", "confidence_rates.csv", "ttests.csv"] {
        assert!(d.join("stats").join(f).exists(), "{f}");
    }
    std::fs::write(d.join("bad.csv"), "image_id,reader\n").unwrap();
    assert_eq!(fibersr(d, &["readerstats", "--reads", "bad.csv", "--out", "stats"]).status.code(), Some(2));
}

#[test]
fn sweep_from_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = serde_json::json!({
        "phantom_specs": [fibersr::phantom::PhantomSpec::non_neoplastic(24, 24)],
        "train_count": 1,
        "val_count": 1,
        "test_count": 1,
        "mode": "factorial",
        "offset_um": [0.0],
        "inter_fiber_distance_um": [8.0],
        "fiber_diameter_um": [4.0],
        "train": {"epochs": 1, "patch_size": 16, "patches_per_image": 1, "shape": {"filters": [4, 2], "kernels": [3, 1, 3]}}
    });
    std::fs::write(d.join("sweep.json"), cfg.to_string()).unwrap();
    let out = ok(d, &["sweep", "--config", "sweep.json", "--out", "sw"]);
    assert!(out.contains("1 cells"), "{out}");
    let results = std::fs::read_to_string(d.join("sw/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 2);
    std::fs::write(d.join("bad.json"), r#"{"train_count": 1, "nope": 2}"#).unwrap();
    assert_eq!(fibersr(d, &["sweep", "--config", "bad.json", "--out", "sw2"]).status.code(), Some(2));
}

#[test]
fn shipped_desk_config_matches() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_sweep.json");
    let cfg: fibersr::harness::SweepConfig = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    assert_eq!(cfg, fibersr::harness::SweepConfig::desk());
}
