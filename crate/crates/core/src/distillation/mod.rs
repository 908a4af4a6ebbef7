//! Knowledge-distillation losses and training schemes.
//!
//! Response KD compares temperature-softened head outputs with
//! `KL(teacher ‖ student)` scaled by `T²`. Feature KD matches tap
//! activations, through a learned linear map when widths differ. Relation KD
//! matches pairwise distance structure within a minibatch.
//!
//! Schemes: offline ([`distill_offline`]), online ([`mutual_learn`]) and
//! self-distillation across epoch snapshots ([`self_distill`]), plus
//! edge fine-tuning with a rehearsal buffer ([`finetune`]).

mod config;
mod losses;
mod train;

pub use config::{KdConfig, Knowledge, TrainConfig};
pub use losses::{
    combined_loss, feature_kd_grad, feature_kd_loss, relation_kd_grad, relation_kd_loss, response_kd_grad,
    response_kd_loss,
};
pub use train::{
    distill_offline, distill_offline_inputs, finetune, mutual_learn, self_distill, train_supervised,
    train_supervised_monitored, History, Monitor, Peer, Rehearsal,
};
