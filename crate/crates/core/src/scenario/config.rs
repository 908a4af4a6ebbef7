use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Img,
    Radar,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Img => "img",
            Modality::Radar => "radar",
        }
    }
}

/// Angular random-walk parameters shared by every party before
/// heterogeneity and staleness shifts are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    /// Mean angular step per slot (radians).
    pub drift: f64,
    /// Standard deviation of the per-step noise (radians).
    pub step_std: f64,
    /// Centre of the starting-angle distribution.
    pub start_center: f64,
    /// Half-width of the uniform starting-angle distribution.
    pub start_spread: f64,
    /// Walk is clamped to `[−bound, bound]`; at most π/2.
    pub bound: f64,
    /// Drift shift per unit heterogeneity, scaled by each node's draw in [−1, 1].
    pub node_drift_scale: f64,
    /// Start-centre shift per unit heterogeneity.
    pub node_center_scale: f64,
    /// Server drift displacement per unit staleness.
    pub stale_drift_scale: f64,
    /// Server start-centre displacement per unit staleness.
    pub stale_center_scale: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            drift: 0.0,
            step_std: 0.1,
            start_center: 0.0,
            start_spread: 1.3,
            bound: FRAC_PI_2,
            node_drift_scale: 0.2,
            node_center_scale: 0.6,
            stale_drift_scale: 0.05,
            stale_center_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub num_beams: usize,
    pub num_slots: usize,
    pub history_len: usize,
    pub modalities: Vec<Modality>,
    pub img_dim: usize,
    pub img_noise: f64,
    pub radar_dim: usize,
    pub radar_noise: f64,
    pub num_nodes: usize,
    pub samples_per_node: usize,
    pub samples_server: usize,
    pub samples_holdout: usize,
    pub heterogeneity: f64,
    pub staleness: f64,
    pub trajectory: TrajectoryConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_beams: 8,
            num_slots: 4,
            history_len: 4,
            modalities: vec![Modality::Img, Modality::Radar],
            img_dim: 32,
            img_noise: 2.0,
            radar_dim: 4,
            radar_noise: 0.3,
            num_nodes: 3,
            samples_per_node: 2000,
            samples_server: 16000,
            samples_holdout: 3000,
            heterogeneity: 0.0,
            staleness: 0.0,
            trajectory: TrajectoryConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn has(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    /// Enabled modalities in canonical order (img before radar).
    pub fn canonical_modalities(&self) -> Vec<Modality> {
        [Modality::Img, Modality::Radar]
            .into_iter()
            .filter(|m| self.has(*m))
            .collect()
    }

    pub fn modality_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Img => self.img_dim,
            Modality::Radar => self.radar_dim,
        }
    }

    /// Feature width: enabled modality dims summed, times `history_len`.
    pub fn input_dim(&self) -> usize {
        let per_step: usize = self.canonical_modalities().iter().map(|&m| self.modality_dim(m)).sum();
        per_step * self.history_len
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("scenario.{name}");
        if self.num_beams < 4 {
            return Err(Error::config(field("num_beams"), "must be at least 4"));
        }
        if self.num_beams > u16::MAX as usize {
            return Err(Error::config(field("num_beams"), "must fit in 16 bits"));
        }
        if self.num_slots == 0 {
            return Err(Error::config(field("num_slots"), "must be at least 1"));
        }
        if self.history_len == 0 {
            return Err(Error::config(field("history_len"), "must be at least 1"));
        }
        if self.modalities.is_empty() {
            return Err(Error::config(field("modalities"), "at least one modality must be enabled"));
        }
        if self.has(Modality::Img) && self.img_dim == 0 {
            return Err(Error::config(field("img_dim"), "must be at least 1"));
        }
        if self.has(Modality::Radar) && self.radar_dim < 3 {
            return Err(Error::config(field("radar_dim"), "must be at least 3 (sin, cos, rate)"));
        }
        for (name, v) in [("img_noise", self.img_noise), ("radar_noise", self.radar_noise)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field(name), "must be finite and non-negative"));
            }
        }
        if self.num_nodes == 0 {
            return Err(Error::config(field("num_nodes"), "must be at least 1"));
        }
        if self.num_nodes > u16::MAX as usize {
            return Err(Error::config(field("num_nodes"), "must fit in 16 bits"));
        }
        if self.samples_per_node == 0 {
            return Err(Error::config(field("samples_per_node"), "must be at least 1"));
        }
        if self.samples_server == 0 {
            return Err(Error::config(field("samples_server"), "must be at least 1"));
        }
        if self.samples_holdout < self.num_nodes {
            return Err(Error::config(field("samples_holdout"), "needs at least one sample per node"));
        }
        for (name, v) in [("heterogeneity", self.heterogeneity), ("staleness", self.staleness)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field(name), "must be finite and non-negative"));
            }
        }
        let t = &self.trajectory;
        if !(t.bound > 0.0 && t.bound <= FRAC_PI_2) {
            return Err(Error::config(field("trajectory.bound"), "must lie in (0, π/2]"));
        }
        if !(t.step_std >= 0.0) || !(t.start_spread >= 0.0) {
            return Err(Error::config(field("trajectory"), "step_std and start_spread must be non-negative"));
        }
        let all = [
            t.drift,
            t.step_std,
            t.start_center,
            t.start_spread,
            t.node_drift_scale,
            t.node_center_scale,
            t.stale_drift_scale,
            t.stale_center_scale,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::config(field("trajectory"), "all parameters must be finite"));
        }
        Ok(())
    }
}
