//! Patch-based MSE training with Adam and best-validation checkpointing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{ModelShape, SrcnnModel};
use super::tensor::Tensor4;
use super::SrcnnError;
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Validate every this many epochs (the final epoch is always validated).
    pub validation_interval: usize,
    pub lrelu_slope: f64,
    pub init_std: f64,
    pub shape: ModelShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 300,
            batch_size: 8,
            patch_size: 512,
            patches_per_image: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            validation_interval: 1,
            lrelu_slope: 0.01,
            init_std: 1e-3,
            shape: ModelShape::default(),
        }
    }
}

impl TrainConfig {
    /// 200 epochs on 64x64 patches.
    pub fn desk() -> Self {
        Self {
            epochs: 200,
            patch_size: 64,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<(), SrcnnError> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("patch_size", self.patch_size),
            ("patches_per_image", self.patches_per_image),
            ("validation_interval", self.validation_interval),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(SrcnnError::Config(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SrcnnError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(SrcnnError::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(SrcnnError::Config("adam eps must be positive".into()));
        }
        if !(self.lrelu_slope > 0.0 && self.lrelu_slope < 1.0) {
            return Err(SrcnnError::Config("lrelu slope must lie in (0, 1)".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(SrcnnError::Config("init std must be >= 0".into()));
        }
        Ok(())
    }
}

/// One row of the training history. Epoch 0 is the freshly initialized model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: Option<f64>,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation MSE seen.
    pub model: SrcnnModel<f32>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub history: Vec<EpochRecord>,
}

/// An `(lr, hr)` training pair.
pub type ImagePair = (Image, Image);

struct FramePair {
    width: usize,
    height: usize,
    lr: Vec<f32>,
    hr: Vec<f32>,
}

impl FramePair {
    fn new((lr, hr): &ImagePair) -> Result<Self, SrcnnError> {
        if !lr.same_dims(hr) {
            return Err(SrcnnError::Shape(format!(
                "lr {:?} and hr {:?} differ in size",
                lr.dims(),
                hr.dims()
            )));
        }
        Ok(Self {
            width: lr.width(),
            height: lr.height(),
            lr: lr.data().iter().map(|&v| v as f32).collect(),
            hr: hr.data().iter().map(|&v| v as f32).collect(),
        })
    }

    fn patch(&self, x0: usize, y0: usize, size: usize) -> (Vec<f32>, Vec<f32>) {
        let mut lr = Vec::with_capacity(size * size);
        let mut hr = Vec::with_capacity(size * size);
        for row in y0..y0 + size {
            let start = row * self.width + x0;
            lr.extend_from_slice(&self.lr[start..start + size]);
            hr.extend_from_slice(&self.hr[start..start + size]);
        }
        (lr, hr)
    }
}

/// Full-frame MSE pooled over every pixel of every pair.
pub fn validation_mse(model: &SrcnnModel<f32>, pairs: &[ImagePair]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (lr, hr) in pairs {
        let frame: Vec<f32> = lr.data().iter().map(|&v| v as f32).collect();
        let out = model.forward_frame(&frame, lr.width(), lr.height());
        for (&p, &t) in out.iter().zip(hr.data()) {
            let r = f64::from(p) - f64::from(t as f32);
            sum += r * r;
        }
        count += out.len();
    }
    sum / count as f64
}

/// Trains a freshly initialized model.
///
/// Each epoch draws `patches_per_image` aligned crops from every training
/// pair, shuffles them, and takes one Adam step per batch. Validation runs on
/// full frames; the returned model is the snapshot with minimum validation MSE
/// (including the initial weights).
pub fn train(
    pairs: &[ImagePair],
    val_pairs: &[ImagePair],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, SrcnnError> {
    cfg.validate()?;
    if pairs.is_empty() || val_pairs.is_empty() {
        return Err(SrcnnError::EmptyDataset);
    }
    let frames = pairs.iter().map(FramePair::new).collect::<Result<Vec<_>, _>>()?;
    for (lr, hr) in val_pairs {
        if !lr.same_dims(hr) {
            return Err(SrcnnError::Shape("validation pair differs in size".into()));
        }
    }
    if let Some(f) = frames
        .iter()
        .find(|f| f.width < cfg.patch_size || f.height < cfg.patch_size)
    {
        return Err(SrcnnError::PatchTooLarge {
            patch: cfg.patch_size,
            width: f.width,
            height: f.height,
        });
    }

    let mut model =
        SrcnnModel::<f32>::init(cfg.shape, cfg.lrelu_slope, cfg.init_std, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_DA7A_0000_0001);
    let adam = cfg.adam();
    let mut state = AdamState::for_params(&model.param_slices());
    let size = cfg.patch_size;

    let initial = validation_mse(&model, val_pairs);
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_mse: None,
        val_mse: Some(initial),
    }];
    let mut best = (model.clone(), 0usize, initial);

    for epoch in 1..=cfg.epochs {
        let mut windows = Vec::with_capacity(frames.len() * cfg.patches_per_image);
        for (i, f) in frames.iter().enumerate() {
            for _ in 0..cfg.patches_per_image {
                let origin = Image::random_crop_origin_in(f.width, f.height, size, &mut rng)
                    .expect("patch size checked");
                windows.push((i, origin));
            }
        }
        windows.shuffle(&mut rng);

        let mut sq_sum = 0.0;
        let mut seen = 0usize;
        for batch in windows.chunks(cfg.batch_size) {
            let (inputs, targets): (Vec<_>, Vec<_>) = batch
                .iter()
                .map(|&(i, (x0, y0))| frames[i].patch(x0, y0, size))
                .unzip();
            let x = Tensor4::from_items(1, size, size, inputs)?;
            let t = Tensor4::from_items(1, size, size, targets)?;
            let (grads, loss) = model.backward(&x, &t)?;
            let n = x.data().len();
            sq_sum += loss * n as f64;
            seen += n;
            let mut params = model.param_slices_mut();
            adam_step(&mut params, &grads.slices(), &mut state, &adam)?;
        }
        let train_mse = sq_sum / seen as f64;

        let validate_now = epoch % cfg.validation_interval == 0 || epoch == cfg.epochs;
        let val_mse = validate_now.then(|| validation_mse(&model, val_pairs));
        if let Some(v) = val_mse {
            if v < best.2 {
                best = (model.clone(), epoch, v);
            }
            log::debug!("epoch {epoch}: train {train_mse:.6e}, val {v:.6e}");
        }
        history.push(EpochRecord {
            epoch,
            train_mse: Some(train_mse),
            val_mse,
        });
    }

    let (model, best_epoch, best_val_mse) = best;
    log::info!("best validation MSE {best_val_mse:.6e} at epoch {best_epoch}");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_mse,
        history,
    })
}

/// Writes `epoch,train_mse,val_mse`; missing values are empty.
pub fn write_history_csv<W: std::io::Write>(history: &[EpochRecord], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["epoch", "train_mse", "val_mse"])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        wtr.write_record([r.epoch.to_string(), fmt(r.train_mse), fmt(r.val_mse)])?;
    }
    wtr.flush()?;
    Ok(())
}
