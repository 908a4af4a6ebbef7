use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::distillation::{KdConfig, TrainConfig};
use crate::models::ModelSpec;
use crate::orchestrator::Topology;
use crate::scenario::{Modality, ScenarioConfig};
use crate::{Error, Result};

/// Model ids produced by the runner itself, never by a `[[students]]` entry.
pub const TEACHER_ID: &str = "teacher";
pub const TEACHER_SELFKD_ID: &str = "teacher_selfkd";

/// Trunk widths and training budget of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    /// Trunk layer used by feature and relation KD; last layer when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_tap: Option<usize>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ArchConfig {
    pub fn new(hidden: Vec<usize>, train: TrainConfig) -> Self {
        Self {
            hidden,
            feature_tap: None,
            train,
        }
    }

    pub fn spec(&self, input_dim: usize, num_slots: usize, num_beams: usize) -> ModelSpec {
        let spec = ModelSpec::new(input_dim, self.hidden.clone(), num_slots, num_beams);
        match self.feature_tap {
            Some(t) => spec.with_tap(t),
            None => spec,
        }
    }
}

/// One student trained per topology, identified by `id` in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentRole {
    pub id: String,
    /// `knowledge = "none"` gives the non-distilled student.
    #[serde(default)]
    pub kd: KdConfig,
}

impl StudentRole {
    pub fn new(id: impl Into<String>, kd: KdConfig) -> Self {
        Self { id: id.into(), kd }
    }
}

/// Everything `run_experiment` needs; every table maps to a struct that
/// rejects unknown keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: ScenarioConfig,
    pub seeds: Vec<u64>,
    pub metric_ks: Vec<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Model id the improvement column is measured against.
    pub baseline: String,
    #[serde(default = "default_teacher")]
    pub teacher: ArchConfig,
    #[serde(default = "default_student")]
    pub student: ArchConfig,
    /// When present, a self-distilled teacher is also trained and reported
    /// as `teacher_selfkd`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_self_kd: Option<KdConfig>,
    pub topologies: Vec<Topology>,
    pub students: Vec<StudentRole>,
    /// Modality restrictions run side by side; empty means the scenario's
    /// own modalities only.
    #[serde(default)]
    pub modality_sets: Vec<Vec<Modality>>,
    #[serde(default = "default_bytes_per_value")]
    pub bytes_per_value: usize,
    #[serde(default)]
    pub upload_node_data: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_bytes_per_value() -> usize {
    4
}

fn default_teacher() -> ArchConfig {
    ExperimentConfig::default().teacher
}

fn default_student() -> ArchConfig {
    ExperimentConfig::default().student
}

impl Default for ExperimentConfig {
    /// The tuned synthetic study: centralized topology, response, relation
    /// and non-distilled students, with and without a self-distilled teacher.
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            seeds: (0..5).collect(),
            metric_ks: vec![2, 5],
            output_dir: default_output_dir(),
            baseline: "student_baseline".into(),
            teacher: ArchConfig::new(
                vec![128, 96],
                TrainConfig {
                    epochs: 10,
                    lr: 0.02,
                    ..TrainConfig::default()
                },
            ),
            student: ArchConfig::new(
                vec![12],
                TrainConfig {
                    epochs: 60,
                    lr: 0.05,
                    ..TrainConfig::default()
                },
            ),
            teacher_self_kd: Some(KdConfig::response(4.0, 0.5)),
            topologies: vec![Topology::Centralized],
            students: vec![
                StudentRole::new("student_response", KdConfig::response(4.0, 0.5)),
                StudentRole::new("student_relation", KdConfig::relation(0.5)),
                StudentRole::new("student_baseline", KdConfig::none()),
            ],
            modality_sets: Vec::new(),
            bytes_per_value: default_bytes_per_value(),
            upload_node_data: false,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; syntax and unknown-key errors carry line and column.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let at = e.span().map(|s| {
                let before = &text[..s.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                format!("line {line}, column {col}: ")
            });
            Error::config("config", format!("{}{}", at.unwrap_or_default(), e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The exact resolved configuration, as written to `config_echo.toml`.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Command-line overrides: replace the seed list, and keep only the
    /// named topology (taken from the file when listed there).
    pub fn apply_overrides(&mut self, seeds: Option<Vec<u64>>, topology: Option<&str>) -> Result<()> {
        if let Some(s) = seeds {
            self.seeds = s;
        }
        if let Some(name) = topology {
            let t = match self.topologies.iter().find(|t| t.name() == name) {
                Some(t) => t.clone(),
                None => Topology::from_name(name)
                    .ok_or_else(|| Error::config("topology", format!("unknown topology `{name}`")))?,
            };
            self.topologies = vec![t];
        }
        self.validate()
    }

    /// Modality sets actually run, in report order.
    pub fn resolved_modality_sets(&self) -> Vec<Vec<Modality>> {
        if self.modality_sets.is_empty() {
            vec![self.scenario.canonical_modalities()]
        } else {
            self.modality_sets
                .iter()
                .map(|m| {
                    let mut m = m.clone();
                    m.sort();
                    m.dedup();
                    m
                })
                .collect()
        }
    }

    /// Report id of a role under a modality set. With a single set the bare
    /// role is used; otherwise the set is appended after `@`.
    pub fn model_id(&self, role: &str, modalities: &[Modality]) -> String {
        if self.modality_sets.is_empty() {
            role.to_string()
        } else {
            format!("{role}@{}", modality_tag(modalities))
        }
    }

    /// All role names in report order.
    pub fn roles(&self) -> Vec<String> {
        let mut out = vec![TEACHER_ID.to_string()];
        if self.teacher_self_kd.is_some() {
            out.push(TEACHER_SELFKD_ID.to_string());
        }
        out.extend(self.students.iter().map(|s| s.id.clone()));
        out
    }

    /// Cheap structural checks; plan-level checks that need the scenario's
    /// feature width happen when the experiment starts.
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        let beams = self.scenario.num_beams;
        if self.metric_ks.is_empty() || self.metric_ks.iter().any(|&k| k == 0 || k > beams) {
            return Err(Error::config("metric_ks", format!("need at least one k, each in [1, {beams}]")));
        }
        if self.metric_ks.iter().collect::<BTreeSet<_>>().len() != self.metric_ks.len() {
            return Err(Error::config("metric_ks", "values must be distinct"));
        }
        if self.topologies.is_empty() {
            return Err(Error::config("topologies", "at least one topology is required"));
        }
        let mut names = BTreeSet::new();
        for t in &self.topologies {
            if !names.insert(t.name()) {
                return Err(Error::config("topologies", format!("{} listed twice", t.name())));
            }
        }
        if self.students.is_empty() {
            return Err(Error::config("students", "at least one student role is required"));
        }
        let mut ids = BTreeSet::new();
        for s in &self.students {
            let bad = s.id.is_empty() || s.id.contains(['@', ',', '"', '\n']) || s.id == TEACHER_ID || s.id == TEACHER_SELFKD_ID;
            if bad {
                return Err(Error::config("students.id", format!("`{}` is empty, reserved or contains @ , \" or newline", s.id)));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::config("students.id", format!("`{}` listed twice", s.id)));
            }
            s.kd.validate(self.scenario.num_slots)?;
        }
        if !self.roles().contains(&self.baseline) {
            return Err(Error::config("baseline", format!("`{}` is not one of {:?}", self.baseline, self.roles())));
        }
        if let Some(kd) = &self.teacher_self_kd {
            kd.validate(self.scenario.num_slots)?;
        }
        for m in &self.modality_sets {
            if m.is_empty() || m.iter().any(|x| !self.scenario.has(*x)) {
                return Err(Error::config("modality_sets", "each set must be a nonempty subset of scenario.modalities"));
            }
        }
        if self.resolved_modality_sets().iter().collect::<BTreeSet<_>>().len() != self.resolved_modality_sets().len() {
            return Err(Error::config("modality_sets", "sets must be distinct"));
        }
        if self.bytes_per_value == 0 {
            return Err(Error::config("bytes_per_value", "must be positive"));
        }
        for (field, a) in [("teacher", &self.teacher), ("student", &self.student)] {
            a.spec(1, self.scenario.num_slots, beams)
                .validate()
                .map_err(|e| Error::config(field, e.to_string()))?;
        }
        Ok(())
    }
}

/// `img`, `radar` or `img+radar`.
pub fn modality_tag(m: &[Modality]) -> String {
    m.iter().map(|x| x.name()).collect::<Vec<_>>().join("+")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"
seeds = [7]
metric_ks = [2]
baseline = "plain"

[teacher]
hidden = [16]

[student]
hidden = [4]

[[topologies]]
kind = "centralized"

[[topologies]]
kind = "semi_centralized"
rehearsal_fraction = 0.1
finetune_alpha = 0.5
finetune_temperature = 2.0
finetune = { epochs = 2 }

[[students]]
id = "plain"
"#
    }

    #[test]
    fn parses_minimal_toml() {
        let c = ExperimentConfig::from_toml_str(minimal()).unwrap();
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.topologies.len(), 2);
        let semi = c.topologies[1].semi().unwrap();
        assert_eq!(semi.rehearsal_fraction, 0.1);
        assert_eq!(semi.finetune.epochs, 2);
        assert!(!c.students[0].kd.active());
        assert_eq!(c.roles(), vec!["teacher", "plain"]);
    }

    #[test]
    fn unknown_key_is_rejected_with_position() {
        let text = minimal().replace("[student]\n", "[student]\nhiden = [3]\n");
        let e = ExperimentConfig::from_toml_str(&text).unwrap_err();
        let msg = e.to_string();
        assert!(e.is_config());
        assert!(msg.contains("hiden") && msg.contains("line 10"), "{msg}");
    }

    #[test]
    fn unknown_key_inside_topology_is_rejected() {
        let text = minimal().replace("rehearsal_fraction = 0.1", "rehearsal_fractoin = 0.1");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn zero_k_names_metric_ks() {
        let text = minimal().replace("metric_ks = [2]", "metric_ks = [0]");
        match ExperimentConfig::from_toml_str(&text).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "metric_ks"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn empty_seeds_and_unknown_baseline_are_rejected() {
        let c = ExperimentConfig {
            seeds: vec![],
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "seeds"));
        let c = ExperimentConfig {
            baseline: "nobody".into(),
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "baseline"));
    }

    #[test]
    fn overrides_replace_seeds_and_topology() {
        let mut c = ExperimentConfig::from_toml_str(minimal()).unwrap();
        c.apply_overrides(Some(vec![1, 2]), Some("semi_centralized")).unwrap();
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.topologies.len(), 1);
        assert_eq!(c.topologies[0].semi().unwrap().rehearsal_fraction, 0.1);
        c.apply_overrides(None, Some("decentralized")).unwrap();
        assert_eq!(c.topologies, vec![Topology::Decentralized]);
        assert!(c.apply_overrides(None, Some("mesh")).is_err());
    }

    #[test]
    fn reserved_ids_are_rejected() {
        let mut c = ExperimentConfig::default();
        c.students.push(StudentRole::new("teacher", KdConfig::none()));
        assert!(c.validate().is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        let c = ExperimentConfig::from_toml_str(minimal()).unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn model_ids_carry_modality_only_when_sets_are_listed() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.model_id("teacher", &[Modality::Img]), "teacher");
        c.modality_sets = vec![vec![Modality::Img], vec![Modality::Radar, Modality::Img]];
        c.validate().unwrap();
        assert_eq!(c.resolved_modality_sets()[1], vec![Modality::Img, Modality::Radar]);
        assert_eq!(c.model_id("teacher", &[Modality::Img, Modality::Radar]), "teacher@img+radar");
    }
}
