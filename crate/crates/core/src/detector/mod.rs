//! A small single-stage, anchor-free detector.
//!
//! Four strided convolution blocks produce a 16x-downsampled feature map
//! (the representation). A linear per-class sigmoid classifier and a
//! class-agnostic box regressor read every feature location.

mod array;
mod checkpoint;
mod decode;
mod forward;
mod freeze;
mod loss;
mod optim;
mod params;
mod targets;
mod train;

pub use array::{image_to_tensor, Array};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use decode::{decode_and_nms, nms, DecodeConfig, Detection};
pub use forward::{backward, features, forward, forward_image, forward_train, head, zero_grads, ForwardCache, Grads, Predictions};
pub use freeze::{apply_freeze_policy, FreezePolicy, ParamPartition};
pub use loss::{supervised_loss, LossBreakdown, LossConfig, LossOutput};
pub use optim::{lr_at, Sgd, SgdConfig};
pub use params::{
    prior_bias, reinit_head, Arch, DetectorParams, CLASSIFIER_BIAS, CLASSIFIER_WEIGHT, PRIOR_PROB, REGRESSOR_BIAS,
    REGRESSOR_WEIGHT, REPRESENTATION, STRIDE,
};
pub use targets::{assign_targets, decode_deltas, encode_deltas, grid_for, GridSpec, LocationTarget, TargetBox};
pub use train::{weighted_loss_and_grads, LossGroup};
