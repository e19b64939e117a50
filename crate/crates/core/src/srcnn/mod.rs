//! Three-layer super-resolution CNN built on a small CPU tensor engine.

mod adam;
mod conv;
mod model;
mod tensor;
mod train;
mod weights;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv2d, lrelu, ConvLayer};
pub use model::{infer, mse_loss, Gradients, ModelShape, SrcnnModel};
pub use tensor::{Real, Tensor4};
pub use train::{train, validation_mse, write_history_csv, EpochRecord, ImagePair, TrainConfig, TrainOutcome};
pub use weights::{load_weights, save_weights, WeightsError, MAGIC, VERSION};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SrcnnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training and validation sets must be non-empty")]
    EmptyDataset,
    #[error("patch size {patch} exceeds image {width}x{height}")]
    PatchTooLarge {
        patch: usize,
        width: usize,
        height: usize,
    },
}
