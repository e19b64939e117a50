//! Degradation sweeps over offset, inter-fiber distance and fiber diameter,
//! with one freshly trained model per grid cell, plus line profiles and
//! per-image comparison reports.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{degrade, DegradationConfig, DegradeError};
use crate::fsutil::write_atomic;
use crate::image::{save_pgm, Image, PgmDepth};
use crate::metrics::{psnr, ssim, MetricsError, Psnr, SsimConfig};
use crate::phantom::{generate_phantom, PhantomError, PhantomSpec};
use crate::preprocess::{preprocess, PreprocessConfig, PreprocessError};
use crate::srcnn::{infer, save_weights, train, write_history_csv, ImagePair, SrcnnError, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid sweep configuration: {0}")]
    Config(String),
    #[error("cell {cell}: {source}")]
    InvalidCell { cell: String, source: DegradeError },
    #[error("profile row {row}, columns {col_start}..{col_end} outside {width}x{height} image")]
    ProfileOutOfBounds {
        row: usize,
        col_start: usize,
        col_end: usize,
        width: usize,
        height: usize,
    },
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Degrade(#[from] DegradeError),
    #[error(transparent)]
    Srcnn(#[from] SrcnnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Vary one axis at a time with the other two at their baselines.
    #[default]
    OneAtATime,
    /// Full Cartesian product of the three lists.
    Factorial,
}

/// Held-fixed values used while another axis is swept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub fiber_diameter_um: f64,
    pub inter_fiber_distance_um: f64,
    pub offset_um: f64,
}

impl Default for Baseline {
    fn default() -> Self {
        Self {
            fiber_diameter_um: 6.0,
            inter_fiber_distance_um: 12.0,
            offset_um: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub phantom_specs: Vec<PhantomSpec>,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub pixel_size_um: f64,
    pub mode: SweepMode,
    pub offset_um: Vec<f64>,
    pub inter_fiber_distance_um: Vec<f64>,
    pub fiber_diameter_um: Vec<f64>,
    pub baseline: Baseline,
    pub train: TrainConfig,
    /// Applied to every phantom before degradation when set.
    pub preprocess: Option<PreprocessConfig>,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Row used for line profiles; the middle row when unset.
    pub profile_row: Option<usize>,
}

impl Default for SweepConfig {
    /// Full-scale counts and training on full-size phantoms.
    fn default() -> Self {
        Self {
            phantom_specs: vec![
                PhantomSpec::non_neoplastic(1280, 960),
                PhantomSpec::neoplastic(1280, 960),
            ],
            train_count: 206,
            val_count: 50,
            test_count: 300,
            pixel_size_um: 2.0,
            mode: SweepMode::OneAtATime,
            offset_um: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            inter_fiber_distance_um: vec![8.0, 12.0, 16.0, 20.0, 24.0],
            fiber_diameter_um: vec![4.0, 6.0, 8.0, 10.0, 12.0],
            baseline: Baseline::default(),
            train: TrainConfig::default(),
            preprocess: None,
            base_seed: 20_240_601,
            output_dir: None,
            profile_row: None,
        }
    }
}

impl SweepConfig {
    /// 20/5/10 phantoms at 128x128, 200 epochs on 64x64 patches.
    pub fn desk() -> Self {
        Self {
            phantom_specs: vec![
                PhantomSpec::non_neoplastic(128, 128),
                PhantomSpec::neoplastic(128, 128),
            ],
            train_count: 20,
            val_count: 5,
            test_count: 10,
            train: TrainConfig::desk(),
            ..Self::default()
        }
    }

    fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.phantom_specs.is_empty() {
            return bad("at least one phantom spec is required");
        }
        if self.train_count == 0 || self.val_count == 0 || self.test_count == 0 {
            return bad("train, validation and test counts must be at least 1");
        }
        if self.offset_um.is_empty() || self.inter_fiber_distance_um.is_empty() || self.fiber_diameter_um.is_empty() {
            return bad("every axis needs at least one value");
        }
        for spec in &self.phantom_specs {
            spec.validate()?;
        }
        self.preprocess.as_ref().map(PreprocessConfig::validate).transpose()?;
        self.train.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Offset,
    InterFiberDistance,
    FiberDiameter,
    /// A factorial cell.
    Grid,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Offset => "offset",
            Axis::InterFiberDistance => "inter_fiber_distance",
            Axis::FiberDiameter => "fiber_diameter",
            Axis::Grid => "grid",
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub axis: Axis,
    pub m_um: f64,
    pub s_um: f64,
    pub d_um: f64,
    /// Positions in the offset, distance and diameter lists (`None` for baselines).
    pub grid_index: [Option<usize>; 3],
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}_m{}_s{}_d{}", self.axis.as_str(), self.m_um, self.s_um, self.d_um)
    }

    pub fn degradation(&self, pixel_size_um: f64) -> DegradationConfig {
        DegradationConfig {
            pixel_size_um,
            ..DegradationConfig::new(self.m_um, self.s_um, self.d_um)
        }
    }
}

/// Offset axis first, then inter-fiber distance, then fiber diameter. In
/// factorial mode the offset is the outermost loop.
pub fn enumerate_cells(cfg: &SweepConfig) -> Vec<Cell> {
    let b = cfg.baseline;
    match cfg.mode {
        SweepMode::OneAtATime => {
            let mut cells = Vec::new();
            for (i, &d) in cfg.offset_um.iter().enumerate() {
                cells.push(Cell {
                    axis: Axis::Offset,
                    m_um: b.fiber_diameter_um,
                    s_um: b.inter_fiber_distance_um,
                    d_um: d,
                    grid_index: [Some(i), None, None],
                });
            }
            for (i, &s) in cfg.inter_fiber_distance_um.iter().enumerate() {
                cells.push(Cell {
                    axis: Axis::InterFiberDistance,
                    m_um: b.fiber_diameter_um,
                    s_um: s,
                    d_um: b.offset_um,
                    grid_index: [None, Some(i), None],
                });
            }
            for (i, &m) in cfg.fiber_diameter_um.iter().enumerate() {
                cells.push(Cell {
                    axis: Axis::FiberDiameter,
                    m_um: m,
                    s_um: b.inter_fiber_distance_um,
                    d_um: b.offset_um,
                    grid_index: [None, None, Some(i)],
                });
            }
            cells
        }
        SweepMode::Factorial => {
            let mut cells = Vec::new();
            for (i, &d) in cfg.offset_um.iter().enumerate() {
                for (j, &s) in cfg.inter_fiber_distance_um.iter().enumerate() {
                    for (k, &m) in cfg.fiber_diameter_um.iter().enumerate() {
                        cells.push(Cell {
                            axis: Axis::Grid,
                            m_um: m,
                            s_um: s,
                            d_um: d,
                            grid_index: [Some(i), Some(j), Some(k)],
                        });
                    }
                }
            }
            cells
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_seq(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base), |h, &p| mix64(h ^ p))
}

pub fn cell_seed(base_seed: u64, cell: &Cell) -> u64 {
    let idx = |i: Option<usize>| i.map_or(u64::MAX, |v| v as u64);
    hash_seq(
        base_seed,
        &[
            cell.axis.code(),
            idx(cell.grid_index[0]),
            idx(cell.grid_index[1]),
            idx(cell.grid_index[2]),
        ],
    )
}

/// Mean and unbiased standard deviation. Any infinite sample makes the mean
/// infinite; the spread is 0 when every sample is infinite and infinite when
/// only some are. A single sample has spread 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let infinite = xs.iter().filter(|v| v.is_infinite()).count();
    if infinite > 0 {
        let spread = if infinite == n { 0.0 } else { f64::INFINITY };
        return (f64::INFINITY, spread);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub axis: Axis,
    pub m_um: f64,
    pub s_um: f64,
    pub d_um: f64,
    pub seed: u64,
    pub psnr_lr_mean: f64,
    pub psnr_lr_std: f64,
    pub psnr_sr_mean: f64,
    pub psnr_sr_std: f64,
    pub ssim_lr_mean: f64,
    pub ssim_lr_std: f64,
    pub ssim_sr_mean: f64,
    pub ssim_sr_std: f64,
    /// Kept out of the results table so it stays reproducible.
    pub train_seconds: f64,
}

pub const RESULTS_HEADER: [&str; 13] = [
    "axis",
    "m_um",
    "s_um",
    "d_um",
    "seed",
    "psnr_lr_mean",
    "psnr_lr_std",
    "psnr_sr_mean",
    "psnr_sr_std",
    "ssim_lr_mean",
    "ssim_lr_std",
    "ssim_sr_mean",
    "ssim_sr_std",
];

pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), HarnessError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(RESULTS_HEADER)?;
    for r in rows {
        let nums = [
            r.m_um,
            r.s_um,
            r.d_um,
            r.seed as f64,
            r.psnr_lr_mean,
            r.psnr_lr_std,
            r.psnr_sr_mean,
            r.psnr_sr_std,
            r.ssim_lr_mean,
            r.ssim_lr_std,
            r.ssim_sr_mean,
            r.ssim_sr_std,
        ];
        let mut rec = vec![r.axis.as_str().to_string()];
        rec.extend(nums[..3].iter().map(f64::to_string));
        rec.push(r.seed.to_string());
        rec.extend(nums[4..].iter().map(f64::to_string));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_timings_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), HarnessError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["axis", "m_um", "s_um", "d_um", "train_seconds"])?;
    for r in rows {
        wtr.write_record([
            r.axis.as_str().to_string(),
            r.m_um.to_string(),
            r.s_um.to_string(),
            r.d_um.to_string(),
            format!("{:.3}", r.train_seconds),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Intensities of `image` along `row` for columns `col_start..col_end`.
pub fn line_profile(image: &Image, row: usize, col_start: usize, col_end: usize) -> Result<Vec<f64>, HarnessError> {
    let (w, h) = image.dims();
    if row >= h || col_start >= col_end || col_end > w {
        return Err(HarnessError::ProfileOutOfBounds {
            row,
            col_start,
            col_end,
            width: w,
            height: h,
        });
    }
    Ok(image.row(row)[col_start..col_end].to_vec())
}

/// Two columns: `col,intensity`.
pub fn write_profile_csv<W: Write>(profile: &[f64], col_start: usize, out: W) -> Result<(), HarnessError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["col", "intensity"])?;
    for (i, v) in profile.iter().enumerate() {
        wtr.write_record([(col_start + i).to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareReport {
    pub psnr_lr: Psnr,
    pub psnr_sr: Psnr,
    pub ssim_lr: f64,
    pub ssim_sr: f64,
}

pub const COMPARE_HEADER: &str = "psnr_lr,psnr_sr,ssim_lr,ssim_sr,delta_psnr,delta_ssim";

impl CompareReport {
    /// SR minus LR; two infinite values differ by 0.
    pub fn delta_psnr(&self) -> f64 {
        match (self.psnr_sr, self.psnr_lr) {
            (Psnr::Infinite, Psnr::Infinite) => 0.0,
            (a, b) => a.value() - b.value(),
        }
    }

    pub fn delta_ssim(&self) -> f64 {
        self.ssim_sr - self.ssim_lr
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.psnr_lr,
            self.psnr_sr,
            self.ssim_lr,
            self.ssim_sr,
            self.delta_psnr(),
            self.delta_ssim()
        )
    }
}

pub fn compare_report(hr: &Image, lr: &Image, sr: &Image) -> Result<CompareReport, HarnessError> {
    let cfg = SsimConfig::default();
    Ok(CompareReport {
        psnr_lr: psnr(hr, lr, 1.0)?,
        psnr_sr: psnr(hr, sr, 1.0)?,
        ssim_lr: ssim(hr, lr, &cfg)?,
        ssim_sr: ssim(hr, sr, &cfg)?,
    })
}

/// HR images for the three splits. Specs are interleaved round-robin so every
/// split stays class balanced, and each split draws from its own seed range.
#[derive(Debug, Clone)]
pub struct SweepData {
    pub train: Vec<Image>,
    pub val: Vec<Image>,
    pub test: Vec<Image>,
}

pub fn generate_sweep_data(cfg: &SweepConfig) -> Result<SweepData, HarnessError> {
    let split = |tag: u64, count: usize| -> Result<Vec<Image>, HarnessError> {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let spec = &cfg.phantom_specs[i % cfg.phantom_specs.len()];
                let seed = hash_seq(cfg.base_seed, &[0xDA7A, tag, i as u64]);
                let image = generate_phantom(spec, seed)?.image;
                match &cfg.preprocess {
                    Some(p) => Ok(preprocess(&image, p)?),
                    None => Ok(image),
                }
            })
            .collect()
    };
    Ok(SweepData {
        train: split(0, cfg.train_count)?,
        val: split(1, cfg.val_count)?,
        test: split(2, cfg.test_count)?,
    })
}

fn degrade_split(hr: &[Image], deg: &DegradationConfig, seed: u64, tag: u64) -> Result<Vec<ImagePair>, HarnessError> {
    hr.iter()
        .enumerate()
        .map(|(i, img)| {
            let cfg = deg.clone().with_seed(hash_seq(seed, &[tag, i as u64]));
            Ok((degrade(img, &cfg)?.lr, img.clone()))
        })
        .collect()
}

/// Per-cell products beyond the summary row.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub row: ResultRow,
    pub weights: Vec<u8>,
    pub history_csv: Vec<u8>,
    /// First test image: HR, LR and SR.
    pub sample: [Image; 3],
}

pub fn run_cell(cfg: &SweepConfig, data: &SweepData, cell: &Cell) -> Result<CellOutcome, HarnessError> {
    let seed = cell_seed(cfg.base_seed, cell);
    let deg = cell.degradation(cfg.pixel_size_um);
    let train_pairs = degrade_split(&data.train, &deg, seed, 0)?;
    let val_pairs = degrade_split(&data.val, &deg, seed, 1)?;
    let test_pairs = degrade_split(&data.test, &deg, seed, 2)?;

    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let started = Instant::now();
    let outcome = train(&train_pairs, &val_pairs, &tcfg)?;
    let train_seconds = started.elapsed().as_secs_f64();

    let ssim_cfg = SsimConfig::default();
    let mut metrics = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut sample = None;
    for (lr, hr) in &test_pairs {
        let sr = infer(&outcome.model, lr);
        metrics[0].push(psnr(hr, lr, 1.0)?.value());
        metrics[1].push(psnr(hr, &sr, 1.0)?.value());
        metrics[2].push(ssim(hr, lr, &ssim_cfg)?);
        metrics[3].push(ssim(hr, &sr, &ssim_cfg)?);
        if sample.is_none() {
            sample = Some([hr.clone(), lr.clone(), sr]);
        }
    }
    let [pl, ps, sl, ss] = metrics.map(|v| mean_std(&v));
    let row = ResultRow {
        axis: cell.axis,
        m_um: cell.m_um,
        s_um: cell.s_um,
        d_um: cell.d_um,
        seed,
        psnr_lr_mean: pl.0,
        psnr_lr_std: pl.1,
        psnr_sr_mean: ps.0,
        psnr_sr_std: ps.1,
        ssim_lr_mean: sl.0,
        ssim_lr_std: sl.1,
        ssim_sr_mean: ss.0,
        ssim_sr_std: ss.1,
        train_seconds,
    };
    let mut history_csv = Vec::new();
    write_history_csv(&outcome.history, &mut history_csv)?;
    log::info!(
        "{}: PSNR lr {:.3} sr {:.3}, SSIM lr {:.4} sr {:.4} ({:.1}s)",
        cell.name(),
        row.psnr_lr_mean,
        row.psnr_sr_mean,
        row.ssim_lr_mean,
        row.ssim_sr_mean,
        train_seconds
    );
    Ok(CellOutcome {
        cell: *cell,
        row,
        weights: save_weights(&outcome.model),
        history_csv,
        sample: sample.expect("test split is non-empty"),
    })
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellOutcome>,
}

impl SweepOutcome {
    pub fn results_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut buf = Vec::new();
        write_results_csv(&self.rows, &mut buf)?;
        Ok(buf)
    }
}

/// Validates every cell, then trains and evaluates each one. Cells run in
/// parallel; rows come back in enumeration order. Files are written when
/// `cfg.output_dir` is set.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome, HarnessError> {
    cfg.check()?;
    let cells = enumerate_cells(cfg);
    for cell in &cells {
        cell.degradation(cfg.pixel_size_um)
            .validate()
            .map_err(|source| HarnessError::InvalidCell {
                cell: cell.name(),
                source,
            })?;
    }
    if let Some(spec) = cfg
        .phantom_specs
        .iter()
        .find(|s| s.width < cfg.train.patch_size || s.height < cfg.train.patch_size)
    {
        return Err(HarnessError::Config(format!(
            "patch size {} exceeds phantom canvas {}x{}",
            cfg.train.patch_size, spec.width, spec.height
        )));
    }

    let data = generate_sweep_data(cfg)?;
    let outcomes = cells
        .par_iter()
        .map(|cell| run_cell(cfg, &data, cell))
        .collect::<Result<Vec<_>, _>>()?;
    let result = SweepOutcome {
        rows: outcomes.iter().map(|c| c.row.clone()).collect(),
        cells: outcomes,
    };
    if let Some(dir) = &cfg.output_dir {
        write_sweep_outputs(cfg, &result, dir)?;
    }
    Ok(result)
}

#[derive(Serialize)]
struct SweepMeta<'a> {
    mode: SweepMode,
    baseline: Baseline,
    baseline_note: &'a str,
    pixel_size_um: f64,
    base_seed: u64,
    train_count: usize,
    val_count: usize,
    test_count: usize,
    cells: usize,
}

pub fn write_sweep_outputs(cfg: &SweepConfig, outcome: &SweepOutcome, dir: &Path) -> Result<(), HarnessError> {
    write_atomic(&dir.join("results.csv"), &outcome.results_csv()?)?;
    let mut timings = Vec::new();
    write_timings_csv(&outcome.rows, &mut timings)?;
    write_atomic(&dir.join("timings.csv"), &timings)?;

    let meta = SweepMeta {
        mode: cfg.mode,
        baseline: cfg.baseline,
        baseline_note: "held-fixed values for one-at-a-time sweeps are an assumption; the source study does not state them",
        pixel_size_um: cfg.pixel_size_um,
        base_seed: cfg.base_seed,
        train_count: cfg.train_count,
        val_count: cfg.val_count,
        test_count: cfg.test_count,
        cells: outcome.cells.len(),
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    write_atomic(&dir.join("sweep_meta.json"), &json)?;

    for (i, c) in outcome.cells.iter().enumerate() {
        let cell_dir = dir.join("cells").join(format!("{i:03}_{}", c.cell.name()));
        write_atomic(&cell_dir.join("weights.srcw"), &c.weights)?;
        write_atomic(&cell_dir.join("history.csv"), &c.history_csv)?;
        let (w, h) = c.sample[0].dims();
        let row = cfg.profile_row.unwrap_or(h / 2).min(h - 1);
        for (name, img) in ["hr", "lr", "sr"].iter().zip(&c.sample) {
            write_atomic(&cell_dir.join(format!("{name}.pgm")), &save_pgm(img, PgmDepth::Sixteen))?;
            let mut buf = Vec::new();
            write_profile_csv(&line_profile(img, row, 0, w)?, 0, &mut buf)?;
            write_atomic(&cell_dir.join(format!("profile_{name}.csv")), &buf)?;
        }
        let report = compare_report(&c.sample[0], &c.sample[1], &c.sample[2])?;
        let line = format!("{COMPARE_HEADER}\n{}\n", report.csv_line());
        write_atomic(&cell_dir.join("compare.csv"), line.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::degrade;
    use crate::srcnn::ModelShape;

    /// Tiny model and data so cells run in well under a second.
    fn micro() -> SweepConfig {
        SweepConfig {
            phantom_specs: vec![PhantomSpec::non_neoplastic(24, 24), PhantomSpec::neoplastic(24, 24)],
            train_count: 2,
            val_count: 1,
            test_count: 2,
            offset_um: vec![0.0],
            inter_fiber_distance_um: vec![12.0],
            fiber_diameter_um: vec![6.0],
            train: TrainConfig {
                epochs: 2,
                patch_size: 16,
                patches_per_image: 2,
                batch_size: 2,
                shape: ModelShape {
                    filters: [4, 2],
                    kernels: [3, 1, 3],
                },
                ..TrainConfig::default()
            },
            ..SweepConfig::desk()
        }
    }

    #[test]
    fn one_at_a_time_order() {
        let cfg = SweepConfig {
            offset_um: vec![0.0, 4.0],
            inter_fiber_distance_um: vec![8.0, 16.0, 24.0],
            fiber_diameter_um: vec![4.0],
            ..SweepConfig::desk()
        };
        let cells = enumerate_cells(&cfg);
        let axes: Vec<_> = cells.iter().map(|c| c.axis).collect();
        assert_eq!(
            axes,
            [
                Axis::Offset,
                Axis::Offset,
                Axis::InterFiberDistance,
                Axis::InterFiberDistance,
                Axis::InterFiberDistance,
                Axis::FiberDiameter
            ]
        );
        assert_eq!((cells[1].m_um, cells[1].s_um, cells[1].d_um), (6.0, 12.0, 4.0));
        assert_eq!((cells[4].m_um, cells[4].s_um, cells[4].d_um), (6.0, 24.0, 2.0));
        assert_eq!((cells[5].m_um, cells[5].s_um, cells[5].d_um), (4.0, 12.0, 2.0));
    }

    #[test]
    fn factorial_cardinality_and_seeds() {
        let cfg = SweepConfig {
            mode: SweepMode::Factorial,
            offset_um: vec![0.0, 2.0, 4.0],
            inter_fiber_distance_um: vec![12.0],
            fiber_diameter_um: vec![6.0],
            ..SweepConfig::desk()
        };
        let cells = enumerate_cells(&cfg);
        assert_eq!(cells.len(), 3);
        let seeds: std::collections::HashSet<_> = cells.iter().map(|c| cell_seed(7, c)).collect();
        assert_eq!(seeds.len(), 3);
        assert_eq!(cell_seed(7, &cells[0]), cell_seed(7, &cells[0]));
        assert_ne!(cell_seed(7, &cells[0]), cell_seed(8, &cells[0]));
    }

    #[test]
    fn mean_std_conventions() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[f64::INFINITY, f64::INFINITY]), (f64::INFINITY, 0.0));
        let (m, s) = mean_std(&[f64::INFINITY, 3.0]);
        assert!(m.is_infinite() && s.is_infinite());
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }

    #[test]
    fn invalid_cell_fails_fast_with_name() {
        let cfg = SweepConfig {
            inter_fiber_distance_um: vec![4.0],
            ..micro()
        };
        let err = run_sweep(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, HarnessError::InvalidCell { .. }));
        assert!(msg.contains("inter_fiber_distance_m6_s4_d2"), "{msg}");
    }

    #[test]
    fn identity_cell_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SweepConfig {
            baseline: Baseline {
                fiber_diameter_um: 2.0,
                inter_fiber_distance_um: 2.0,
                offset_um: 0.0,
            },
            mode: SweepMode::Factorial,
            offset_um: vec![0.0],
            inter_fiber_distance_um: vec![2.0],
            fiber_diameter_um: vec![2.0],
            output_dir: Some(dir.path().to_path_buf()),
            ..micro()
        };
        let out = run_sweep(&cfg).unwrap();
        assert_eq!(out.rows.len(), 1);
        let r = &out.rows[0];
        assert!(r.psnr_lr_mean.is_infinite() && r.psnr_lr_std == 0.0);
        assert_eq!(r.ssim_lr_mean, 1.0);
        assert!(r.psnr_sr_mean.is_finite());
        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().contains(",inf,0,"));

        let cell_dir = dir.path().join("cells").join("000_grid_m2_s2_d0");
        for f in ["weights.srcw", "history.csv", "hr.pgm", "lr.pgm", "sr.pgm", "profile_sr.csv", "compare.csv"] {
            assert!(cell_dir.join(f).exists(), "{f}");
        }
        let meta: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("sweep_meta.json")).unwrap()).unwrap();
        assert_eq!(meta["baseline"]["fiber_diameter_um"], 2.0);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let cfg = micro();
        let a = run_sweep(&cfg).unwrap().results_csv().unwrap();
        let b = run_sweep(&cfg).unwrap().results_csv().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn profiles() {
        let img = Image::filled(10, 4, 0.25).unwrap();
        let p = line_profile(&img, 2, 3, 9).unwrap();
        assert_eq!(p, vec![0.25; 6]);
        assert!(line_profile(&img, 4, 0, 1).is_err());
        assert!(line_profile(&img, 0, 5, 11).is_err());
        assert!(line_profile(&img, 0, 5, 5).is_err());

        let mut buf = Vec::new();
        write_profile_csv(&[0.5, 0.75], 4, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "col,intensity\n4,0.5\n5,0.75\n");
    }

    #[test]
    fn lr_profile_runs_are_tile_multiples() {
        let spec = PhantomSpec::neoplastic(61, 20);
        let hr = generate_phantom(&spec, 5).unwrap().image;
        let cfg = DegradationConfig::new(4.0, 10.0, 0.0);
        let lr = degrade(&hr, &cfg).unwrap().lr;
        let s_px = cfg.tile_px();
        let covered = (61 / s_px) * s_px;
        let p = line_profile(&lr, 7, 0, covered).unwrap();
        let mut runs = Vec::new();
        let mut len = 1;
        for pair in p.windows(2) {
            if pair[0] == pair[1] {
                len += 1;
            } else {
                runs.push(len);
                len = 1;
            }
        }
        runs.push(len);
        assert!(runs.iter().all(|r| r % s_px == 0), "{runs:?}");
    }

    #[test]
    fn compare_report_cases() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
        let mut rand_img = || {
            use rand::Rng;
            Image::new(16, 16, (0..256).map(|_| rng.random::<f64>()).collect()).unwrap()
        };
        let (hr, lr, sr) = (rand_img(), rand_img(), rand_img());

        let r = compare_report(&hr, &lr, &hr).unwrap();
        assert_eq!(r.psnr_sr, Psnr::Infinite);
        assert_eq!(r.delta_ssim(), 1.0 - ssim(&hr, &lr, &SsimConfig::default()).unwrap());

        let r = compare_report(&hr, &lr, &lr).unwrap();
        assert_eq!((r.delta_psnr(), r.delta_ssim()), (0.0, 0.0));
        let r = compare_report(&hr, &hr, &hr).unwrap();
        assert_eq!(r.delta_psnr(), 0.0);

        let r = compare_report(&hr, &lr, &sr).unwrap();
        let c = SsimConfig::default();
        assert_eq!(r.psnr_lr, psnr(&hr, &lr, 1.0).unwrap());
        assert_eq!(r.psnr_sr, psnr(&hr, &sr, 1.0).unwrap());
        assert_eq!(r.ssim_lr, ssim(&hr, &lr, &c).unwrap());
        assert_eq!(r.ssim_sr, ssim(&hr, &sr, &c).unwrap());
        assert_eq!(r.csv_line().split(',').count(), COMPARE_HEADER.split(',').count());

        let small = Image::filled(15, 16, 0.0).unwrap();
        assert!(compare_report(&hr, &small, &sr).is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let json = r#"{"train_count": 3, "bogus": 1}"#;
        assert!(serde_json::from_str::<SweepConfig>(json).is_err());
        let json = r#"{"train_count": 3, "mode": "factorial", "train": {"epochs": 5}}"#;
        let cfg: SweepConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.train_count, 3);
        assert_eq!(cfg.mode, SweepMode::Factorial);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.patch_size, 512);
    }
}
