use std::fmt;

use serde::{Deserialize, Serialize};

use crate::distillation::{KdConfig, Knowledge, TrainConfig};
use crate::models::ModelSpec;
use crate::scenario::{Modality, Scenario};
use crate::{Error, Result};

/// Fine-tuning settings used only by the semi-centralized topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemiSettings {
    pub finetune: TrainConfig,
    /// Weight of the rehearsal distillation term during fine-tuning.
    pub finetune_alpha: f64,
    pub finetune_temperature: f64,
    /// Rehearsal rows per local row, as a fraction in `[0, 1]`.
    pub rehearsal_fraction: f64,
}

impl Default for SemiSettings {
    fn default() -> Self {
        Self {
            finetune: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            finetune_alpha: 0.5,
            finetune_temperature: 4.0,
            rehearsal_fraction: 0.2,
        }
    }
}

impl SemiSettings {
    pub(crate) fn kd(&self) -> KdConfig {
        KdConfig {
            knowledge: Knowledge::Response,
            alpha: self.finetune_alpha,
            temperature: self.finetune_temperature,
            ..KdConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Topology {
    /// Teacher and students trained at the server; students shipped.
    Centralized,
    /// Teacher shipped; each node distills its own student.
    Decentralized,
    /// Centralized training, then local fine-tuning with rehearsal.
    SemiCentralized(SemiSettings),
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Centralized => "centralized",
            Topology::Decentralized => "decentralized",
            Topology::SemiCentralized(_) => "semi_centralized",
        }
    }

    /// Topology by name; semi-centralized gets default fine-tune settings.
    pub fn from_name(name: &str) -> Option<Topology> {
        match name {
            "centralized" => Some(Topology::Centralized),
            "decentralized" => Some(Topology::Decentralized),
            "semi_centralized" => Some(Topology::SemiCentralized(SemiSettings::default())),
            _ => None,
        }
    }

    pub fn semi(&self) -> Option<&SemiSettings> {
        match self {
            Topology::SemiCentralized(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything a topology run needs besides the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyPlan {
    pub topology: Topology,
    pub teacher_spec: ModelSpec,
    pub student_spec: ModelSpec,
    pub kd: KdConfig,
    pub teacher_train: TrainConfig,
    pub student_train: TrainConfig,
    /// Restrict every party to these modalities; `None` keeps all.
    pub modalities: Option<Vec<Modality>>,
    pub seed: u64,
    /// Simulated wire size of one parameter or feature value.
    pub bytes_per_value: usize,
    /// Nodes upload their local data to the server before training, which
    /// then trains on server and uploaded data together.
    pub upload_node_data: bool,
    /// Top-k values evaluated after deployment.
    pub ks: Vec<usize>,
}

impl TopologyPlan {
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let width = match &self.modalities {
            None => scenario.input_dim(),
            Some(m) => {
                if m.is_empty() {
                    return Err(Error::config("modalities", "selection is empty"));
                }
                let mut reduced = scenario.config.clone();
                reduced.modalities = m.clone();
                reduced.input_dim()
            }
        };
        for (name, spec) in [("teacher_spec", &self.teacher_spec), ("student_spec", &self.student_spec)] {
            spec.validate()?;
            if spec.input_dim != width {
                return Err(Error::config(name, format!("input_dim {} but features are {width} wide", spec.input_dim)));
            }
            if spec.num_slots != scenario.config.num_slots || spec.num_beams != scenario.config.num_beams {
                return Err(Error::config(name, "slots/beams disagree with the scenario"));
            }
        }
        self.kd.validate(self.student_spec.num_slots)?;
        if let Some(s) = self.topology.semi() {
            if !(0.0..=1.0).contains(&s.rehearsal_fraction) {
                return Err(Error::config("rehearsal_fraction", "must lie in [0, 1]"));
            }
            s.kd().validate(self.student_spec.num_slots)?;
        }
        if self.bytes_per_value == 0 {
            return Err(Error::config("bytes_per_value", "must be positive"));
        }
        if self.ks.is_empty() || self.ks.iter().any(|&k| k == 0 || k > self.student_spec.num_beams) {
            return Err(Error::config("metric_ks", "each k must lie in [1, num_beams]"));
        }
        Ok(())
    }

    /// Same plan with another topology.
    pub fn with_topology(&self, topology: Topology) -> Self {
        Self {
            topology,
            ..self.clone()
        }
    }

    /// Same plan with another KD configuration.
    pub fn with_kd(&self, kd: KdConfig) -> Self {
        Self { kd, ..self.clone() }
    }
}
