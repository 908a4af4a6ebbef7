use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::compare::improvement;
use super::config::{modality_tag, ExperimentConfig, TEACHER_ID, TEACHER_SELFKD_ID};
use super::metrics::{evaluate, Evaluation};
use crate::distillation::{self_distill, KdConfig};
use crate::models::{count_flops, count_params, serialized_len, Model};
use crate::numerics::Rng;
use crate::orchestrator::{run_with_teacher, train_teacher, CostLedger, TopologyPlan};
use crate::scenario::{generate_scenario, Dataset, Modality, Scenario};
use crate::{Error, Result};

/// Value of the `node` column for the pooled node hold-out row that
/// `summary.csv` aggregates.
pub const POOLED_NODE: &str = "all";
/// Value of the `node` column for global hold-out rows.
pub const GLOBAL_NODE: &str = "global";

/// Exit status for invalid configuration.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for a runtime contract violation or I/O failure.
pub const EXIT_RUNTIME: i32 = 3;

pub fn exit_code<T>(r: &Result<T>) -> i32 {
    match r {
        Ok(_) => 0,
        Err(e) if e.is_config() => EXIT_CONFIG,
        Err(_) => EXIT_RUNTIME,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub seed: u64,
    pub topology: String,
    /// `node{k}`, `all` or `global`.
    pub node: String,
    pub model_id: String,
    pub slot: usize,
    pub k: usize,
    pub accuracy: f64,
}

/// One line of `summary.csv`: seed statistics of the pooled node rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub topology: String,
    pub model_id: String,
    pub slot: usize,
    pub k: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
    pub improvement_vs_baseline: f64,
}

/// Size and per-row inference cost of each model id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelRow {
    pub model_id: String,
    pub params: usize,
    pub flops: u64,
    pub bytes: usize,
}

/// Ledger of one `(seed, topology, student role)` run.
#[derive(Debug, Clone)]
pub struct RunLedger {
    pub seed: u64,
    pub topology: String,
    pub model_id: String,
    pub ledger: CostLedger,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub metrics: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    pub models: Vec<ModelRow>,
    pub ledgers: Vec<RunLedger>,
}

/// Staged output of one `(modality set, seed)` cell.
struct Cell {
    metrics: Vec<MetricRow>,
    ledgers: Vec<RunLedger>,
}

struct Holdouts {
    nodes: Vec<Dataset>,
    global: Dataset,
}

fn holdouts(s: &Scenario, modalities: &[Modality]) -> Result<Holdouts> {
    let nodes = (0..s.node_sets.len())
        .map(|k| s.node_holdout(k)?.select_modalities(modalities))
        .collect::<Result<Vec<_>>>()?;
    Ok(Holdouts {
        nodes,
        global: s.holdout.select_modalities(modalities)?,
    })
}

/// Per-node, pooled and global evaluations of one model per node.
struct Scores {
    per_node: Vec<Evaluation>,
    global: Evaluation,
}

impl Scores {
    fn of_one(m: &Model, h: &Holdouts, ks: &[usize]) -> Result<Self> {
        Ok(Self {
            per_node: h.nodes.iter().map(|d| evaluate(m, d, ks)).collect::<Result<_>>()?,
            global: evaluate(m, &h.global, ks)?,
        })
    }

    fn of_deployed(node_eval: &[Evaluation], global_eval: &[Evaluation]) -> Result<Self> {
        Ok(Self {
            per_node: node_eval.to_vec(),
            global: pool(global_eval)?,
        })
    }

    fn rows(&self, seed: u64, topology: &str, model_id: &str, out: &mut Vec<MetricRow>) -> Result<()> {
        let pooled = pool(&self.per_node)?;
        let mut named: Vec<(String, &Evaluation)> = self.per_node.iter().enumerate().map(|(k, e)| (format!("node{k}"), e)).collect();
        named.push((POOLED_NODE.into(), &pooled));
        named.push((GLOBAL_NODE.into(), &self.global));
        for (node, e) in named {
            for slot in 0..e.hits.len() {
                for (ki, &k) in e.ks.iter().enumerate() {
                    out.push(MetricRow {
                        seed,
                        topology: topology.into(),
                        node: node.clone(),
                        model_id: model_id.into(),
                        slot,
                        k,
                        accuracy: e.accuracy(slot, ki),
                    });
                }
            }
        }
        Ok(())
    }
}

fn pool(evals: &[Evaluation]) -> Result<Evaluation> {
    let (first, rest) = evals.split_first().ok_or_else(|| Error::Contract("nothing to pool".into()))?;
    rest.iter().try_fold(first.clone(), |acc, e| acc.merge(e))
}

fn base_plan(cfg: &ExperimentConfig, scenario: &Scenario, modalities: &[Modality], seed: u64) -> TopologyPlan {
    let mut reduced = scenario.config.clone();
    reduced.modalities = modalities.to_vec();
    let (h, b) = (reduced.num_slots, reduced.num_beams);
    TopologyPlan {
        topology: cfg.topologies[0].clone(),
        teacher_spec: cfg.teacher.spec(reduced.input_dim(), h, b),
        student_spec: cfg.student.spec(reduced.input_dim(), h, b),
        kd: KdConfig::none(),
        teacher_train: cfg.teacher.train.clone(),
        student_train: cfg.student.train.clone(),
        modalities: (!cfg.modality_sets.is_empty()).then(|| modalities.to_vec()),
        seed,
        bytes_per_value: cfg.bytes_per_value,
        upload_node_data: cfg.upload_node_data,
        ks: cfg.metric_ks.clone(),
    }
}

/// Rows the teacher trains on, i.e. the server set plus any uploads.
fn teacher_data(plan: &TopologyPlan, s: &Scenario, modalities: &[Modality]) -> Result<Dataset> {
    let server = s.server_set.select_modalities(modalities)?;
    if !plan.upload_node_data {
        return Ok(server);
    }
    let nodes = s.node_sets.iter().map(|d| d.select_modalities(modalities)).collect::<Result<Vec<_>>>()?;
    let mut parts = vec![&server];
    parts.extend(nodes.iter());
    Dataset::concat(&parts)
}

fn run_cell(cfg: &ExperimentConfig, scenario: &Scenario, modalities: &[Modality], seed: u64) -> Result<Cell> {
    let plan = base_plan(cfg, scenario, modalities, seed);
    let hold = holdouts(scenario, modalities)?;
    let teacher = train_teacher(&plan, scenario)?;
    let mut fixed = vec![(cfg.model_id(TEACHER_ID, modalities), Scores::of_one(&teacher.model, &hold, &cfg.metric_ks)?)];
    if let Some(kd) = &cfg.teacher_self_kd {
        let data = teacher_data(&plan, scenario, modalities)?;
        let rng = Rng::new(seed, 0).child("teacher-selfkd", 0);
        let (m, _) = self_distill(&plan.teacher_spec, &data, kd, &plan.teacher_train, &rng)?;
        fixed.push((cfg.model_id(TEACHER_SELFKD_ID, modalities), Scores::of_one(&m, &hold, &cfg.metric_ks)?));
    }
    let mut metrics = Vec::new();
    let mut ledgers = Vec::new();
    for topology in &cfg.topologies {
        let name = topology.name();
        for (id, scores) in &fixed {
            scores.rows(seed, name, id, &mut metrics)?;
        }
        for role in &cfg.students {
            let p = plan.with_topology(topology.clone()).with_kd(role.kd.clone());
            let out = run_with_teacher(&p, scenario, &teacher)?;
            let id = cfg.model_id(&role.id, modalities);
            Scores::of_deployed(&out.node_eval, &out.global_eval)?.rows(seed, name, &id, &mut metrics)?;
            ledgers.push(RunLedger {
                seed,
                topology: name.into(),
                model_id: id,
                ledger: out.ledger,
            });
        }
    }
    Ok(Cell { metrics, ledgers })
}

/// Generates scenarios, runs every `(modality set, seed)` cell and merges
/// the staged rows in configuration order. Nothing is written to disk.
pub fn execute(cfg: &ExperimentConfig, execution: Execution) -> Result<ExperimentReport> {
    cfg.validate()?;
    let sets = cfg.resolved_modality_sets();
    let gen = |&seed: &u64| generate_scenario(&cfg.scenario, seed);
    let scenarios: Vec<Scenario> = match execution {
        Execution::Serial => cfg.seeds.iter().map(gen).collect::<Result<_>>()?,
        Execution::Parallel => cfg.seeds.par_iter().map(gen).collect::<Result<_>>()?,
    };
    for m in &sets {
        let plan = base_plan(cfg, &scenarios[0], m, cfg.seeds[0]);
        for t in &cfg.topologies {
            for role in &cfg.students {
                plan.with_topology(t.clone()).with_kd(role.kd.clone()).validate(&scenarios[0])?;
            }
        }
    }
    let cells: Vec<(usize, usize)> = (0..sets.len()).flat_map(|m| (0..cfg.seeds.len()).map(move |s| (m, s))).collect();
    let work = |&(m, s): &(usize, usize)| run_cell(cfg, &scenarios[s], &sets[m], cfg.seeds[s]);
    let staged: Vec<Cell> = match execution {
        Execution::Serial => cells.iter().map(work).collect::<Result<_>>()?,
        Execution::Parallel => cells.par_iter().map(work).collect::<Result<_>>()?,
    };
    let mut metrics = Vec::new();
    let mut ledgers = Vec::new();
    for c in staged {
        metrics.extend(c.metrics);
        ledgers.extend(c.ledgers);
    }
    let mut models = Vec::new();
    for m in &sets {
        let plan = base_plan(cfg, &scenarios[0], m, cfg.seeds[0]);
        for role in cfg.roles() {
            let spec = if role == TEACHER_ID || role == TEACHER_SELFKD_ID { &plan.teacher_spec } else { &plan.student_spec };
            models.push(ModelRow {
                model_id: cfg.model_id(&role, m),
                params: count_params(spec),
                flops: count_flops(spec),
                bytes: serialized_len(spec),
            });
        }
    }
    let summary = summarize(cfg, &metrics)?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        metrics,
        summary,
        models,
        ledgers,
    })
}

fn summarize(cfg: &ExperimentConfig, metrics: &[MetricRow]) -> Result<Vec<SummaryRow>> {
    let mut groups: BTreeMap<(&str, &str, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in metrics.iter().filter(|r| r.node == POOLED_NODE) {
        groups.entry((&r.topology, &r.model_id, r.slot, r.k)).or_default().push(r.accuracy);
    }
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        (mean, std)
    };
    let mut out = Vec::new();
    for t in &cfg.topologies {
        for m in cfg.resolved_modality_sets() {
            let baseline = cfg.model_id(&cfg.baseline, &m);
            for role in cfg.roles() {
                let id = cfg.model_id(&role, &m);
                for slot in 0..cfg.scenario.num_slots {
                    for &k in &cfg.metric_ks {
                        let key = (t.name(), id.as_str(), slot, k);
                        let v = groups.get(&key).ok_or_else(|| Error::Contract(format!("no rows for {key:?}")))?;
                        let b = &groups[&(t.name(), baseline.as_str(), slot, k)];
                        let (mean, std) = stats(v);
                        out.push(SummaryRow {
                            topology: t.name().into(),
                            model_id: id.clone(),
                            slot,
                            k,
                            mean,
                            std,
                            improvement_vs_baseline: improvement(mean, stats(b).0),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

impl ExperimentReport {
    pub fn metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed", "topology", "node", "model_id", "slot", "k", "accuracy"])?;
        for r in &self.metrics {
            w.write_record([r.seed.to_string(), r.topology.clone(), r.node.clone(), r.model_id.clone(), r.slot.to_string(), r.k.to_string(), r.accuracy.to_string()])?;
        }
        into_string(w)
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["topology", "model_id", "slot", "k", "mean", "std", "improvement_vs_baseline"])?;
        for r in &self.summary {
            w.write_record([
                r.topology.clone(),
                r.model_id.clone(),
                r.slot.to_string(),
                r.k.to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                format!("{:.2}", r.improvement_vs_baseline),
            ])?;
        }
        into_string(w)
    }

    /// Every run's ledger, keyed by seed, topology and student id.
    pub fn ledger_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed", "topology", "model_id", "step", "kind", "from", "to", "bytes", "flops", "phase", "label"])?;
        for l in &self.ledgers {
            l.ledger.write_rows(&mut w, Some(&[l.seed.to_string(), l.topology.clone(), l.model_id.clone()]))?;
        }
        into_string(w)
    }

    pub fn models_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model_id", "params", "flops", "bytes"])?;
        for m in &self.models {
            w.write_record([m.model_id.clone(), m.params.to_string(), m.flops.to_string(), m.bytes.to_string()])?;
        }
        into_string(w)
    }

    /// Writes `metrics.csv`, `ledger.csv`, `summary.csv`, `models.csv` and
    /// `config_echo.toml` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv()?)?;
        std::fs::write(dir.join("ledger.csv"), self.ledger_csv()?)?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv()?)?;
        std::fs::write(dir.join("models.csv"), self.models_csv()?)?;
        std::fs::write(dir.join("config_echo.toml"), self.config.to_toml_string()?)?;
        Ok(())
    }

    /// Seed-mean pooled node accuracy of a model id, averaged over slots.
    pub fn mean_over_slots(&self, topology: &str, model_id: &str, k: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .summary
            .iter()
            .filter(|r| r.topology == topology && r.model_id == model_id && r.k == k)
            .map(|r| r.mean)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Summary row lookup.
    pub fn cell(&self, topology: &str, model_id: &str, slot: usize, k: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.topology == topology && r.model_id == model_id && r.slot == slot && r.k == k)
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Contract(e.to_string()))
}

/// Runs the experiment and writes its report into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let report = execute(cfg, Execution::Parallel)?;
    report.write(&cfg.output_dir)?;
    Ok(report)
}

/// Model roles of the grouped-bar accuracy figure, in plotting order.
pub const FIG3_ROLES: [&str; 5] = [TEACHER_ID, TEACHER_SELFKD_ID, "student_response", "student_relation", "student_baseline"];

/// Grouped-bars CSV `modality_set,model,slot,k,accuracy` with one row per
/// modality set, figure role, slot and k, read from the seed means of one
/// topology.
pub fn emit_fig3_table(report: &ExperimentReport, topology: &str) -> Result<String> {
    let cfg = &report.config;
    let mut out = String::from("modality_set,model,slot,k,accuracy\n");
    for m in cfg.resolved_modality_sets() {
        for role in FIG3_ROLES {
            let id = cfg.model_id(role, &m);
            if !report.summary.iter().any(|r| r.topology == topology && r.model_id == id) {
                return Err(Error::Contract(format!("report lacks model role `{role}` under {topology}")));
            }
            for slot in 0..cfg.scenario.num_slots {
                for &k in &cfg.metric_ks {
                    let r = report.cell(topology, &id, slot, k).ok_or_else(|| Error::Contract(format!("missing cell {id} slot {slot} k {k}")))?;
                    writeln!(out, "{},{role},{slot},{k},{}", modality_tag(&m), r.mean).expect("write to String");
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distillation::TrainConfig;
    use crate::harness::config::{ArchConfig, StudentRole};
    use crate::orchestrator::Topology;
    use crate::scenario::ScenarioConfig;

    pub(crate) fn tiny() -> ExperimentConfig {
        let scenario = ScenarioConfig {
            num_nodes: 2,
            samples_per_node: 60,
            samples_server: 120,
            samples_holdout: 40,
            img_dim: 6,
            ..ScenarioConfig::default()
        };
        let short = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            scenario,
            seeds: vec![3, 4],
            metric_ks: vec![1, 2],
            teacher: ArchConfig::new(vec![10], short.clone()),
            student: ArchConfig::new(vec![3], short),
            topologies: vec![Topology::Centralized, Topology::Decentralized],
            students: vec![
                StudentRole::new("student_response", KdConfig::response(2.0, 0.5)),
                StudentRole::new("student_relation", KdConfig::relation(0.5)),
                StudentRole::new("student_baseline", KdConfig::none()),
            ],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn summary_has_one_row_per_cell() {
        let cfg = tiny();
        let r = execute(&cfg, Execution::Serial).unwrap();
        let h = cfg.scenario.num_slots;
        assert_eq!(r.summary.len(), cfg.topologies.len() * cfg.roles().len() * h * cfg.metric_ks.len());
        // node0, node1, all, global per (seed, topology, model, slot, k)
        assert_eq!(r.metrics.len(), cfg.seeds.len() * cfg.topologies.len() * cfg.roles().len() * 4 * h * cfg.metric_ks.len());
        assert!(r.metrics.iter().all(|m| (0.0..=1.0).contains(&m.accuracy)));
        assert_eq!(r.ledgers.len(), cfg.seeds.len() * cfg.topologies.len() * cfg.students.len());
    }

    #[test]
    fn summary_means_are_seed_means_of_pooled_rows() {
        let cfg = tiny();
        let r = execute(&cfg, Execution::Serial).unwrap();
        for s in &r.summary {
            let v: Vec<f64> = r
                .metrics
                .iter()
                .filter(|m| m.node == POOLED_NODE && m.topology == s.topology && m.model_id == s.model_id && m.slot == s.slot && m.k == s.k)
                .map(|m| m.accuracy)
                .collect();
            assert_eq!(v.len(), cfg.seeds.len());
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            assert!((mean - s.mean).abs() < 1e-12);
        }
        let base = r.cell("centralized", "student_baseline", 0, 1).unwrap();
        assert_eq!(base.improvement_vs_baseline, 0.0);
        let t = r.cell("centralized", "teacher", 0, 1).unwrap();
        assert_eq!(t.improvement_vs_baseline, improvement(t.mean, base.mean));
    }

    #[test]
    fn serial_and_parallel_reports_match() {
        let cfg = tiny();
        let a = execute(&cfg, Execution::Serial).unwrap();
        let b = execute(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a.metrics_csv().unwrap(), b.metrics_csv().unwrap());
        assert_eq!(a.ledger_csv().unwrap(), b.ledger_csv().unwrap());
        assert_eq!(a.summary_csv().unwrap(), b.summary_csv().unwrap());
    }

    #[test]
    fn fig3_table_needs_every_role() {
        let cfg = tiny();
        let r = execute(&cfg, Execution::Serial).unwrap();
        let table = emit_fig3_table(&r, "centralized").unwrap();
        assert_eq!(table.lines().count() - 1, 5 * cfg.scenario.num_slots * cfg.metric_ks.len());
        let mut less = cfg.clone();
        less.teacher_self_kd = None;
        let r = execute(&less, Execution::Serial).unwrap();
        let e = emit_fig3_table(&r, "centralized").unwrap_err();
        assert!(e.to_string().contains("teacher_selfkd"), "{e}");
    }

    #[test]
    fn bad_plan_is_a_config_error() {
        let mut cfg = tiny();
        cfg.student.feature_tap = Some(3);
        let r = execute(&cfg, Execution::Serial);
        assert_eq!(exit_code(&r), EXIT_CONFIG);
    }
}
