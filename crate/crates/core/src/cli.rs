//! Command-line front end. Every subcommand parses its inputs, calls into the
//! library and writes files atomically.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::degrade::{degrade, write_samples_csv, DegradationConfig};
use crate::fsutil::write_atomic;
use crate::harness::{self, compare_report, line_profile, write_profile_csv, SweepConfig, COMPARE_HEADER};
use crate::image::{load_pgm, save_pgm, Image, PgmDepth};
use crate::metrics::{psnr, ssim, SsimConfig};
use crate::phantom::{generate_phantom, PhantomSpec};
use crate::preprocess::{preprocess, PreprocessConfig};
use crate::readerstats::{equivalence_sample_size, parse_reads, report_tables, study_report, TTestKind};
use crate::srcnn::{infer, load_weights, save_weights, train, write_history_csv, ImagePair, TrainConfig};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Parser)]
#[command(
    name = "fibersr",
    version,
    about = "Fiber-probe degradation simulation and SRCNN super-resolution",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOptions,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOptions {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads, or "auto". Results do not depend on it.
    #[arg(long, global = true, default_value = "auto")]
    pub threads: Threads,
    #[arg(long, global = true, value_enum, default_value_t = Verbosity::Warn)]
    pub verbosity: Verbosity,
    /// Base directory for relative output paths.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    Auto,
    Count(usize),
}

impl std::str::FromStr for Threads {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Threads::Count(n)),
            _ => Err(format!("expected a positive count or \"auto\", got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Verbosity {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl Verbosity {
    fn filter(self) -> log::LevelFilter {
        match self {
            Verbosity::Error => log::LevelFilter::Error,
            Verbosity::Warn => log::LevelFilter::Warn,
            Verbosity::Info => log::LevelFilter::Info,
            Verbosity::Debug => log::LevelFilter::Debug,
            Verbosity::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    Neoplastic,
    NonNeoplastic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic nuclei phantoms.
    Phantom {
        #[arg(long, value_enum, default_value_t = ClassArg::NonNeoplastic)]
        class: ClassArg,
        /// JSON phantom spec; overrides --class, --width and --height.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1280)]
        width: usize,
        #[arg(long, default_value_t = 960)]
        height: usize,
        /// With more than one image, --out is a directory.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Optional CSV of nucleus centers (single image only).
        #[arg(long)]
        centers: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gaussian comb removal followed by CLAHE. Accepts a file or a directory.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// JSON preprocessing config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        clip: Option<f64>,
        #[arg(long)]
        tile_rows: Option<usize>,
        #[arg(long)]
        tile_cols: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Simulate fiber-probe acquisition. Accepts a file or a directory.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        /// Low-resolution reconstitution.
        #[arg(long)]
        output: PathBuf,
        /// Fiber diameter m in um.
        #[arg(long)]
        m: f64,
        /// Inter-fiber distance s in um.
        #[arg(long)]
        s: f64,
        /// Maximum deformation offset d in um.
        #[arg(long, default_value_t = 0.0)]
        d: f64,
        #[arg(long, default_value_t = 2.0)]
        pixel_size: f64,
        /// Sparse acquisition image (single file only).
        #[arg(long)]
        sparse: Option<PathBuf>,
        /// Per-fiber sample log CSV (single file only).
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Train an SRCNN on <data>/{train,val}/{hr,lr}/*.pgm.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        /// JSON training config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from the desk-scale profile (200 epochs, 64 px patches).
        #[arg(long)]
        desk: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        patches_per_image: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        validation_interval: Option<usize>,
    },
    /// Run a trained model on one image.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print "psnr_db,ssim" for a reference and a test image.
    Metrics { reference: PathBuf, test: PathBuf },
    /// Print a one-line HR/LR/SR comparison with header.
    Compare {
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        lr: PathBuf,
        #[arg(long)]
        sr: PathBuf,
    },
    /// Run a degradation sweep from a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write an intensity profile along one image row.
    Profile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        row: usize,
        #[arg(long, default_value_t = 0)]
        col_start: usize,
        /// Defaults to the image width.
        #[arg(long)]
        col_end: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Reader-study summaries and HR vs SR t-tests.
    Readerstats {
        #[arg(long)]
        reads: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Welch's t-test instead of the pooled-variance test.
        #[arg(long)]
        welch: bool,
    },
    /// Per-arm sample size for a TOST equivalence test on two proportions.
    Samplesize {
        #[arg(long, default_value_t = 0.8)]
        power: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.15)]
        limit: f64,
        #[arg(long)]
        p: f64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Output lines go to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    0
                }
                _ => {
                    // help and usage errors both go to stderr
                    let _ = e.print();
                    1
                }
            };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.global.verbosity.filter())
        .try_init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Threads::Count(n) = cli.global.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 2;
        }
    };
    let mut out = Vec::new();
    let result = pool.install(|| dispatch(&cli, &mut out));
    let _ = stdout.write_all(&out);
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx<'a> {
    global: &'a GlobalOptions,
}

impl Ctx<'_> {
    fn out_path(&self, p: &Path) -> PathBuf {
        match &self.global.out_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn write(&self, p: &Path, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.out_path(p);
        write_atomic(&path, bytes).map_err(data(path.display()))
    }
}

fn read_image(p: &Path) -> Result<Image, CliError> {
    let bytes = std::fs::read(p).map_err(data(p.display()))?;
    load_pgm(&bytes).map_err(data(p.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(p).map_err(data(p.display()))?;
    serde_json::from_slice(&bytes).map_err(data(p.display()))
}

/// Sorted `*.pgm` files in a directory.
fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(data(dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    files.sort();
    Ok(files)
}

fn file_name(p: &Path) -> &std::ffi::OsStr {
    p.file_name().expect("listed files have names")
}

fn dispatch(cli: &Cli, stdout: &mut Vec<u8>) -> Result<(), CliError> {
    let ctx = Ctx { global: &cli.global };
    let seed = cli.global.seed;
    let mut say = |line: String| -> Result<(), CliError> {
        stdout.extend_from_slice(line.as_bytes());
        stdout.push(b'\n');
        Ok(())
    };
    match &cli.command {
        Command::Phantom {
            class,
            spec,
            width,
            height,
            count,
            centers,
            out,
        } => {
            let spec = match spec {
                Some(p) => read_json::<PhantomSpec>(p)?,
                None => match class {
                    ClassArg::Neoplastic => PhantomSpec::neoplastic(*width, *height),
                    ClassArg::NonNeoplastic => PhantomSpec::non_neoplastic(*width, *height),
                },
            };
            if *count == 0 {
                return Err(CliError::Usage("--count must be at least 1".into()));
            }
            if *count > 1 && centers.is_some() {
                return Err(CliError::Usage("--centers needs --count 1".into()));
            }
            for i in 0..*count {
                let phantom = generate_phantom(&spec, seed.wrapping_add(i as u64)).map_err(data("phantom"))?;
                let path = if *count == 1 {
                    out.clone()
                } else {
                    out.join(format!("phantom_{i:04}.pgm"))
                };
                ctx.write(&path, &save_pgm(&phantom.image, PgmDepth::Sixteen))?;
                if let Some(c) = centers {
                    let mut buf = String::from("row,col\n");
                    for (r, col) in phantom.centers() {
                        buf.push_str(&format!("{r},{col}\n"));
                    }
                    ctx.write(c, buf.as_bytes())?;
                }
            }
            Ok(())
        }
        Command::Preprocess {
            input,
            output,
            config,
            sigma,
            clip,
            tile_rows,
            tile_cols,
            bins,
        } => {
            let mut cfg = match config {
                Some(p) => read_json::<PreprocessConfig>(p)?,
                None => PreprocessConfig::default(),
            };
            if let Some(v) = sigma {
                cfg.gaussian_sigma_px = *v;
            }
            if let Some(v) = clip {
                cfg.clahe_clip_limit = *v;
            }
            if let Some(v) = tile_rows {
                cfg.clahe_tiles.0 = *v;
            }
            if let Some(v) = tile_cols {
                cfg.clahe_tiles.1 = *v;
            }
            if let Some(v) = bins {
                cfg.clahe_bins = *v;
            }
            cfg.validate().map_err(data("preprocess config"))?;
            let jobs = if input.is_dir() {
                pgm_files(input)?
                    .into_iter()
                    .map(|f| {
                        let dst = output.join(file_name(&f));
                        (f, dst)
                    })
                    .collect()
            } else {
                vec![(input.clone(), output.clone())]
            };
            for (src, dst) in jobs {
                let img = read_image(&src)?;
                let out = preprocess(&img, &cfg).map_err(data(src.display()))?;
                ctx.write(&dst, &save_pgm(&out, PgmDepth::Sixteen))?;
            }
            Ok(())
        }
        Command::Degrade {
            input,
            output,
            m,
            s,
            d,
            pixel_size,
            sparse,
            samples,
        } => {
            let base = DegradationConfig {
                pixel_size_um: *pixel_size,
                ..DegradationConfig::new(*m, *s, *d)
            };
            base.validate().map_err(data("degradation config"))?;
            if input.is_dir() {
                if sparse.is_some() || samples.is_some() {
                    return Err(CliError::Usage("--sparse and --samples need a single input file".into()));
                }
                for (i, f) in pgm_files(input)?.into_iter().enumerate() {
                    let img = read_image(&f)?;
                    let cfg = base.clone().with_seed(harness::mix64(seed ^ i as u64));
                    let pair = degrade(&img, &cfg).map_err(data(f.display()))?;
                    ctx.write(&output.join(file_name(&f)), &save_pgm(&pair.lr, PgmDepth::Sixteen))?;
                }
                return Ok(());
            }
            let img = read_image(input)?;
            let pair = degrade(&img, &base.with_seed(seed)).map_err(data(input.display()))?;
            ctx.write(output, &save_pgm(&pair.lr, PgmDepth::Sixteen))?;
            if let Some(p) = sparse {
                ctx.write(p, &save_pgm(&pair.sparse, PgmDepth::Sixteen))?;
            }
            if let Some(p) = samples {
                let mut buf = Vec::new();
                write_samples_csv(&pair.samples, &mut buf).map_err(data("samples"))?;
                ctx.write(p, &buf)?;
            }
            Ok(())
        }
        Command::Train {
            data: dir,
            weights,
            history,
            config,
            desk,
            epochs,
            batch_size,
            patch_size,
            patches_per_image,
            learning_rate,
            validation_interval,
        } => {
            let mut cfg = match (config, desk) {
                (Some(p), _) => read_json::<TrainConfig>(p)?,
                (None, true) => TrainConfig::desk(),
                (None, false) => TrainConfig::default(),
            };
            cfg.seed = seed;
            let set = |dst: &mut usize, v: &Option<usize>| {
                if let Some(v) = v {
                    *dst = *v;
                }
            };
            set(&mut cfg.epochs, epochs);
            set(&mut cfg.batch_size, batch_size);
            set(&mut cfg.patch_size, patch_size);
            set(&mut cfg.patches_per_image, patches_per_image);
            set(&mut cfg.validation_interval, validation_interval);
            if let Some(v) = learning_rate {
                cfg.learning_rate = *v;
            }
            let train_pairs = load_pairs(&dir.join("train"))?;
            let val_pairs = load_pairs(&dir.join("val"))?;
            let outcome = train(&train_pairs, &val_pairs, &cfg).map_err(data("train"))?;
            ctx.write(weights, &save_weights(&outcome.model))?;
            if let Some(h) = history {
                let mut buf = Vec::new();
                write_history_csv(&outcome.history, &mut buf).map_err(data("history"))?;
                ctx.write(h, &buf)?;
            }
            say(format!(
                "best_epoch={},best_val_mse={}",
                outcome.best_epoch, outcome.best_val_mse
            ))
        }
        Command::Infer { weights, input, output } => {
            let bytes = std::fs::read(weights).map_err(data(weights.display()))?;
            let model = load_weights::<f32>(&bytes).map_err(data(weights.display()))?;
            let img = read_image(input)?;
            ctx.write(output, &save_pgm(&infer(&model, &img), PgmDepth::Sixteen))
        }
        Command::Metrics { reference, test } => {
            let a = read_image(reference)?;
            let b = read_image(test)?;
            let p = psnr(&a, &b, 1.0).map_err(data("psnr"))?;
            let s = ssim(&a, &b, &SsimConfig::default()).map_err(data("ssim"))?;
            say(format!("{p},{s:.6}"))
        }
        Command::Compare { hr, lr, sr } => {
            let r = compare_report(&read_image(hr)?, &read_image(lr)?, &read_image(sr)?).map_err(data("compare"))?;
            say(COMPARE_HEADER.to_string())?;
            say(r.csv_line())
        }
        Command::Sweep { config, out } => {
            let mut cfg = read_json::<SweepConfig>(config)?;
            cfg.output_dir = Some(ctx.out_path(out));
            let outcome = harness::run_sweep(&cfg).map_err(data("sweep"))?;
            say(format!("{} cells written to {}", outcome.rows.len(), ctx.out_path(out).display()))
        }
        Command::Profile {
            input,
            row,
            col_start,
            col_end,
            output,
        } => {
            let img = read_image(input)?;
            let end = col_end.unwrap_or(img.width());
            let profile = line_profile(&img, *row, *col_start, end).map_err(data("profile"))?;
            let mut buf = Vec::new();
            write_profile_csv(&profile, *col_start, &mut buf).map_err(data("profile"))?;
            ctx.write(output, &buf)
        }
        Command::Readerstats { reads, out, welch } => {
            let file = std::fs::File::open(reads).map_err(data(reads.display()))?;
            let records = parse_reads(std::io::BufReader::new(file)).map_err(data(reads.display()))?;
            let kind = if *welch { TTestKind::Welch } else { TTestKind::Pooled };
            let report = study_report(&records, kind).map_err(data("readerstats"))?;
            for (name, bytes) in report_tables(&report).map_err(data("readerstats"))? {
                ctx.write(&out.join(name), &bytes)?;
            }
            Ok(())
        }
        Command::Samplesize { power, alpha, limit, p } => {
            let n = equivalence_sample_size(*power, *alpha, *limit, *p).map_err(data("samplesize"))?;
            say(n.to_string())
        }
    }
}

/// Pairs `lr/<name>.pgm` with `hr/<name>.pgm` under `split`.
fn load_pairs(split: &Path) -> Result<Vec<ImagePair>, CliError> {
    let hr_dir = split.join("hr");
    let lr_dir = split.join("lr");
    let files = pgm_files(&hr_dir)?;
    if files.is_empty() {
        return Err(CliError::Data(format!("no .pgm files in {}", hr_dir.display())));
    }
    files
        .iter()
        .map(|hr_path| {
            let lr_path = lr_dir.join(file_name(hr_path));
            Ok((read_image(&lr_path)?, read_image(hr_path)?))
        })
        .collect()
}
