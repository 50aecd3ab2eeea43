//! The flow-prediction network: a U-shaped hierarchy of window-attention blocks with
//! dilated convolutional keys/values, skip fusion between encoder and decoder, and
//! flow plus three-class segmentation heads.

pub mod block;
pub mod checkpoint;
pub mod config;
pub mod feature;
pub mod layers;
pub mod model;
pub mod weights;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use config::{BlockPlan, HeadSpec, ModelConfig};
pub use feature::{FeatureMap, Layout};
pub use model::{backward, forward, forward_with_tape, Prediction, SegLogits, StageShape, Tape};
pub use weights::{init_weights, param_schema, InitKind, ModelWeights, ParamSpec};
