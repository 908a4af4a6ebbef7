use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// What the student is taught to match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knowledge {
    /// Temperature-softened output distributions.
    Response,
    /// Activations at the feature tap.
    Feature,
    /// Pairwise sample distances at the feature tap.
    Relation,
    None,
}

impl Knowledge {
    pub fn name(self) -> &'static str {
        match self {
            Knowledge::Response => "response",
            Knowledge::Feature => "feature",
            Knowledge::Relation => "relation",
            Knowledge::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdConfig {
    pub knowledge: Knowledge,
    pub temperature: f64,
    /// Weight of the KD term; the task term gets `1 − alpha`.
    pub alpha: f64,
    /// Multiplier on the KD loss before mixing. Relation and feature losses
    /// live on a much smaller scale than the summed cross-entropy.
    pub kd_weight: f64,
    /// Per-slot weight of the response term. Empty means 1.0 for every slot.
    pub horizon_weights: Vec<f64>,
    /// Learn a linear map from student to teacher tap width when they differ.
    pub feature_projection: bool,
    /// Divide each distance matrix by its mean off-diagonal entry.
    pub relation_normalize: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            knowledge: Knowledge::None,
            temperature: 4.0,
            alpha: 0.5,
            kd_weight: 1.0,
            horizon_weights: Vec::new(),
            feature_projection: true,
            relation_normalize: true,
        }
    }
}

impl KdConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn response(temperature: f64, alpha: f64) -> Self {
        Self {
            knowledge: Knowledge::Response,
            temperature,
            alpha,
            ..Self::default()
        }
    }

    pub fn relation(alpha: f64) -> Self {
        Self {
            knowledge: Knowledge::Relation,
            alpha,
            kd_weight: 300.0,
            ..Self::default()
        }
    }

    pub fn feature(alpha: f64) -> Self {
        Self {
            knowledge: Knowledge::Feature,
            alpha,
            kd_weight: 10.0,
            ..Self::default()
        }
    }

    /// Whether any KD term enters the loss.
    pub fn active(&self) -> bool {
        self.knowledge != Knowledge::None && self.alpha > 0.0
    }

    pub fn with_weight(self, kd_weight: f64) -> Self {
        Self { kd_weight, ..self }
    }

    /// Horizon weights expanded to `num_slots` entries.
    pub fn weights(&self, num_slots: usize) -> Vec<f64> {
        if self.horizon_weights.is_empty() {
            vec![1.0; num_slots]
        } else {
            self.horizon_weights.clone()
        }
    }

    /// Weights rising linearly from `1/H` at t0 to 1 at the last slot, so
    /// far-future heads lean most on the teacher.
    pub fn linear_horizon(num_slots: usize) -> Vec<f64> {
        (1..=num_slots).map(|s| s as f64 / num_slots as f64).collect()
    }

    pub fn validate(&self, num_slots: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("kd.alpha", format!("{} outside [0, 1]", self.alpha)));
        }
        if !(self.kd_weight >= 0.0 && self.kd_weight.is_finite()) {
            return Err(Error::config("kd.kd_weight", "must be finite and non-negative"));
        }
        if self.knowledge == Knowledge::Response && !(self.temperature >= 1e-3 && self.temperature.is_finite()) {
            return Err(Error::config("kd.temperature", format!("{} must be at least 1e-3", self.temperature)));
        }
        if !self.horizon_weights.is_empty() && self.horizon_weights.len() != num_slots {
            return Err(Error::config(
                "kd.horizon_weights",
                format!("{} entries for {num_slots} slots", self.horizon_weights.len()),
            ));
        }
        if self.horizon_weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::config("kd.horizon_weights", "entries must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Stream id under which initialisation and shuffling draws are taken.
    pub stream: u64,
    /// Self-distillation snapshot cadence in epochs.
    pub self_kd_snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 0.05,
            stream: 0,
            self_kd_snapshot_every: 5,
        }
    }
}

impl TrainConfig {
    pub fn with_stream(&self, stream: u64) -> Self {
        Self {
            stream,
            ..self.clone()
        }
    }

    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        self.validate_steps(dataset_len)
    }

    fn validate_steps(&self, dataset_len: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.batch_size > dataset_len {
            return Err(Error::config(
                "train.batch_size",
                format!("{} exceeds dataset size {dataset_len}", self.batch_size),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be finite and non-negative"));
        }
        if self.self_kd_snapshot_every == 0 {
            return Err(Error::config("train.self_kd_snapshot_every", "must be at least 1"));
        }
        Ok(())
    }
}
