//! Self-supervised representation learning on skeleton clouds: colorization,
//! masking, a masked repainting auto-encoder with optional coarse-fine
//! alignment, and downstream evaluation protocols.

pub mod cloud;
pub mod losses;
pub mod masking;
pub mod model;
pub mod optim;
pub mod probe;
pub mod seed;
pub mod skeleton;
pub mod trainer;

pub use cloud::{
    build_cloud, colorize, order_color, CloudKind, ColorScheme, SkeletonCloud, Stream,
};
pub use masking::{apply_mask, MaskSpec, MaskStrategy};
pub use model::{Checkpoint, Decoder, Encoder, EncoderConfig, ModelConfig};
pub use probe::{EvalConfig, EvalMode, EvalReport, Fusion};
pub use skeleton::{LabeledDataset, SkeletonSequence};
pub use trainer::{TrainConfig, TrainReport};
