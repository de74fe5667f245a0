//! Staged training: head pre-training, tail transfer, head-tail fusion and
//! k-shot fine-tuning, plus run manifests and ablation suites.

mod ablation;
mod config;
mod fusion;
mod stages;
mod train;

pub use ablation::*;
pub use config::*;
pub use fusion::fuse_heads;
pub use stages::*;
pub use train::{annotation_targets, predict, train_stage, unlabeled_pair, LogEntry, StageInputs, StageLog};
