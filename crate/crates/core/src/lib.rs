//! Knowledge-distillation-based collaborative learning between a server and
//! heterogeneous edge nodes, simulated deterministically.
//!
//! The crate is layered bottom-up:
//!
//! - [`numerics`]: dense tensors, losses, SGD, a counter-based RNG and a
//!   finite-difference gradient oracle.
//! - [`models`]: multi-head dense classifiers (shared trunk plus one head per
//!   prediction slot), parameter/FLOP accounting and the `.mdl` wire format.
//! - [`distillation`]: response, feature and relation KD losses, and the
//!   offline, online (mutual) and self-distillation training schemes.
//! - [`scenario`]: a synthetic multi-modal beam-tracking data generator and
//!   the `.scn` container.
//! - [`orchestrator`]: centralized, decentralized and semi-centralized
//!   distilling protocols with an event-sourced cost ledger.
//! - [`harness`]: top-k metrics, experiment configuration, CSV reports and
//!   the `simulate` command-line surface.
//!
//! Runnable walkthroughs of each capability live under `examples/`.

pub mod distillation;
pub mod error;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod orchestrator;
pub mod scenario;

pub use error::{Error, Result};
