//! Synthetic multi-modal beam-tracking data.
//!
//! A user moves along a bounded angular random walk. Models see `history_len`
//! past observations rendered through two sensing modalities and predict the
//! beam index for the current slot and `num_slots − 1` future slots. Labels
//! quantize the ground-truth angle; future slots get harder because walk
//! noise accumulates.

mod config;
mod dataset;
mod format;
mod generate;

pub use config::{Modality, ScenarioConfig, TrajectoryConfig};
pub use dataset::{Dataset, FeatureLayout, Sample};
pub use format::{dump, load, read_scenario, write_scenario, SCENARIO_MAGIC, SCENARIO_VERSION};
pub use generate::{
    beam_label, distribution_params, generate_scenario, render_modalities, simulate_trajectory, DistributionParams,
    ImageLift, Scenario, SERVER_ORIGIN,
};
