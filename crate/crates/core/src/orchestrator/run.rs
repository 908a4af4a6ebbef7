use std::path::Path;

use super::ledger::{CostLedger, PartyId, Phase};
use super::party::{select_student, Party};
use super::plan::{Topology, TopologyPlan};
use crate::distillation::{distill_offline, finetune, train_supervised, History, Rehearsal};
use crate::harness::{evaluate, Evaluation};
use crate::models::{count_flops, save, serialized_len, Model, ModelSpec};
use crate::numerics::Rng;
use crate::scenario::{Dataset, Scenario};
use crate::{Error, Result};

/// Forward plus backward is counted as three forward passes per row.
pub fn train_flops(spec: &ModelSpec, samples: u64) -> u64 {
    3 * count_flops(spec) * samples
}

fn distill_flops(student: &ModelSpec, teacher: &ModelSpec, h: &History) -> u64 {
    train_flops(student, h.samples_processed) + count_flops(teacher) * h.teacher_samples
}

/// Data each party sees after the plan's modality restriction.
struct Views {
    server: Dataset,
    nodes: Vec<Dataset>,
    node_holdouts: Vec<Dataset>,
    holdout: Dataset,
}

fn views(plan: &TopologyPlan, scenario: &Scenario) -> Result<Views> {
    let pick = |d: &Dataset| match &plan.modalities {
        Some(m) => d.select_modalities(m),
        None => Ok(d.clone()),
    };
    let nodes = scenario.node_sets.iter().map(pick).collect::<Result<Vec<_>>>()?;
    let holdout = pick(&scenario.holdout)?;
    let node_holdouts = (0..nodes.len()).map(|k| holdout.node_slice(k)).collect::<Result<Vec<_>>>()?;
    let mut server = pick(&scenario.server_set)?;
    if plan.upload_node_data {
        let mut parts = vec![&server];
        parts.extend(nodes.iter());
        server = Dataset::concat(&parts)?;
    }
    Ok(Views {
        server,
        nodes,
        node_holdouts,
        holdout,
    })
}

fn plan_rng(plan: &TopologyPlan) -> Rng {
    Rng::new(plan.seed, 0).child("plan", 0)
}

/// Wire size of raw labelled rows.
fn data_bytes(d: &Dataset, bytes_per_value: usize) -> u64 {
    (d.len() * (d.input_dim() * bytes_per_value + 2 * d.num_slots())) as u64
}

fn model_bytes(spec: &ModelSpec, bytes_per_value: usize) -> u64 {
    // Header plus one value per parameter; equals the `.mdl` size at 4 bytes.
    let header = serialized_len(spec) - 4 * crate::models::count_params(spec);
    (header + bytes_per_value * crate::models::count_params(spec)) as u64
}

/// A teacher trained for a plan, reusable across topologies that share the
/// teacher's spec, budget, seed and training data.
#[derive(Debug, Clone)]
pub struct TrainedTeacher {
    pub model: Model,
    pub history: History,
    key: TeacherKey,
}

#[derive(Debug, Clone, PartialEq)]
struct TeacherKey {
    spec: ModelSpec,
    train: crate::distillation::TrainConfig,
    seed: u64,
    upload: bool,
    modalities: Option<Vec<crate::scenario::Modality>>,
}

fn teacher_key(plan: &TopologyPlan) -> TeacherKey {
    TeacherKey {
        spec: plan.teacher_spec.clone(),
        train: plan.teacher_train.clone(),
        seed: plan.seed,
        upload: plan.upload_node_data,
        modalities: plan.modalities.clone(),
    }
}

/// Supervised teacher training on the server set.
pub fn train_teacher(plan: &TopologyPlan, scenario: &Scenario) -> Result<TrainedTeacher> {
    plan.validate(scenario)?;
    let v = views(plan, scenario)?;
    let (model, history) = train_supervised(&plan.teacher_spec, &v.server, &plan.teacher_train, &plan_rng(plan).child("teacher", 0))?;
    Ok(TrainedTeacher {
        model,
        history,
        key: teacher_key(plan),
    })
}

/// Result of executing one topology.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub plan: TopologyPlan,
    pub teacher: Model,
    /// Deployed student per node.
    pub students: Vec<Model>,
    pub nodes: Vec<Party>,
    pub ledger: CostLedger,
    /// Deployed students on their own node's hold-out slice.
    pub node_eval: Vec<Evaluation>,
    /// Deployed students on the global hold-out.
    pub global_eval: Vec<Evaluation>,
    /// Semi-centralized only: students on the global hold-out before
    /// fine-tuning.
    pub pre_finetune_global_eval: Option<Vec<Evaluation>>,
}

impl RunOutcome {
    /// Writes `node{k}.mdl` per deployed student and `ledger.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (k, m) in self.students.iter().enumerate() {
            save(m, dir.join(format!("node{k}.mdl")))?;
        }
        self.ledger.save_csv(dir.join("ledger.csv"))
    }

    /// All node hold-out evaluations pooled.
    pub fn pooled_node_eval(&self) -> Result<Evaluation> {
        let mut it = self.node_eval.iter();
        let first = it.next().ok_or_else(|| Error::Contract("no nodes".into()))?.clone();
        it.try_fold(first, |acc, e| acc.merge(e))
    }
}

pub fn run(plan: &TopologyPlan, scenario: &Scenario) -> Result<RunOutcome> {
    let teacher = train_teacher(plan, scenario)?;
    run_with_teacher(plan, scenario, &teacher)
}

pub fn run_with_teacher(plan: &TopologyPlan, scenario: &Scenario, teacher: &TrainedTeacher) -> Result<RunOutcome> {
    match plan.topology {
        Topology::Centralized => run_centralized_with_teacher(plan, scenario, teacher),
        Topology::Decentralized => run_decentralized_with_teacher(plan, scenario, teacher),
        Topology::SemiCentralized(_) => run_semi_centralized_with_teacher(plan, scenario, teacher),
    }
}

pub fn run_centralized(plan: &TopologyPlan, scenario: &Scenario) -> Result<RunOutcome> {
    expect(plan, "centralized")?;
    run(plan, scenario)
}

pub fn run_decentralized(plan: &TopologyPlan, scenario: &Scenario) -> Result<RunOutcome> {
    expect(plan, "decentralized")?;
    run(plan, scenario)
}

pub fn run_semi_centralized(plan: &TopologyPlan, scenario: &Scenario) -> Result<RunOutcome> {
    expect(plan, "semi_centralized")?;
    run(plan, scenario)
}

fn expect(plan: &TopologyPlan, name: &str) -> Result<()> {
    if plan.topology.name() != name {
        return Err(Error::config("topology", format!("plan is {}, expected {name}", plan.topology)));
    }
    Ok(())
}

/// Shared opening: validation, optional data upload, teacher cost.
fn begin(plan: &TopologyPlan, scenario: &Scenario, teacher: &TrainedTeacher) -> Result<(Views, CostLedger, Vec<Party>)> {
    plan.validate(scenario)?;
    if teacher.key != teacher_key(plan) {
        return Err(Error::Contract("teacher was trained for a different plan".into()));
    }
    let v = views(plan, scenario)?;
    let mut ledger = CostLedger::new();
    if plan.upload_node_data {
        for (k, d) in v.nodes.iter().enumerate() {
            ledger.transfer(PartyId::Node(k), PartyId::Server, data_bytes(d, plan.bytes_per_value), Phase::Train, "upload data");
        }
    }
    ledger.compute(
        PartyId::Server,
        train_flops(&plan.teacher_spec, teacher.history.samples_processed),
        Phase::Train,
        "train teacher",
    );
    let nodes = (0..v.nodes.len()).map(|k| Party::new(PartyId::Node(k))).collect();
    Ok((v, ledger, nodes))
}

/// Students distilled at the server on the server set and shipped.
fn server_students(
    plan: &TopologyPlan,
    v: &Views,
    teacher: &Model,
    ledger: &mut CostLedger,
    nodes: &mut [Party],
) -> Result<Vec<Model>> {
    let rng = plan_rng(plan);
    let mut out = Vec::with_capacity(nodes.len());
    for (k, party) in nodes.iter_mut().enumerate() {
        let (student, h) = distill_offline(teacher, &plan.student_spec, &v.server, &plan.kd, &plan.student_train, &rng.child("student", k as u64))?;
        ledger.compute(PartyId::Server, distill_flops(&plan.student_spec, teacher.spec(), &h), Phase::Train, format!("distill student for node{k}"));
        ledger.transfer(PartyId::Server, party.id, model_bytes(student.spec(), plan.bytes_per_value), Phase::Train, "student");
        party.registry.insert("student", student.clone());
        out.push(student);
    }
    Ok(out)
}

/// Selection, inference cost and evaluation on every node.
fn finish(
    plan: &TopologyPlan,
    v: &Views,
    teacher: &TrainedTeacher,
    frozen: &Model,
    mut ledger: CostLedger,
    nodes: Vec<Party>,
    pre_finetune_global_eval: Option<Vec<Evaluation>>,
) -> Result<RunOutcome> {
    if !teacher.model.bitwise_eq(frozen) {
        return Err(Error::Contract("teacher parameters changed during student training".into()));
    }
    let mut students = Vec::with_capacity(nodes.len());
    let mut node_eval = Vec::with_capacity(nodes.len());
    let mut global_eval = Vec::with_capacity(nodes.len());
    for (k, party) in nodes.iter().enumerate() {
        let id = select_student(party, &party.context, &mut ledger)?;
        let m = party.registry.get(&id).expect("selected id is registered").clone();
        let hold = &v.node_holdouts[k];
        ledger.compute(party.id, count_flops(m.spec()) * hold.len() as u64, Phase::Inference, format!("infer {id}"));
        node_eval.push(evaluate(&m, hold, &plan.ks)?);
        global_eval.push(evaluate(&m, &v.holdout, &plan.ks)?);
        students.push(m);
    }
    Ok(RunOutcome {
        plan: plan.clone(),
        teacher: teacher.model.clone(),
        students,
        nodes,
        ledger,
        node_eval,
        global_eval,
        pre_finetune_global_eval,
    })
}

pub fn run_centralized_with_teacher(plan: &TopologyPlan, scenario: &Scenario, teacher: &TrainedTeacher) -> Result<RunOutcome> {
    expect(plan, "centralized")?;
    let (v, mut ledger, mut nodes) = begin(plan, scenario, teacher)?;
    if v.server.is_empty() {
        return Err(Error::Contract("server set is empty".into()));
    }
    let frozen = teacher.model.clone();
    server_students(plan, &v, &frozen, &mut ledger, &mut nodes)?;
    finish(plan, &v, teacher, &frozen, ledger, nodes, None)
}

pub fn run_decentralized_with_teacher(plan: &TopologyPlan, scenario: &Scenario, teacher: &TrainedTeacher) -> Result<RunOutcome> {
    expect(plan, "decentralized")?;
    let (v, mut ledger, mut nodes) = begin(plan, scenario, teacher)?;
    let frozen = teacher.model.clone();
    let rng = plan_rng(plan);
    let tbytes = model_bytes(&plan.teacher_spec, plan.bytes_per_value);
    for (k, party) in nodes.iter_mut().enumerate() {
        let local = &v.nodes[k];
        if local.is_empty() {
            return Err(Error::Contract(format!("{} has no local data", party.id)));
        }
        ledger.transfer(PartyId::Server, party.id, tbytes, Phase::Train, "teacher");
        party.registry.insert("teacher", frozen.clone());
        let held = party.registry.get("teacher").expect("just inserted");
        let (student, h) = distill_offline(held, &plan.student_spec, local, &plan.kd, &plan.student_train, &rng.child("student", k as u64))?;
        ledger.compute(party.id, distill_flops(&plan.student_spec, &plan.teacher_spec, &h), Phase::Train, "distill student");
        party.registry.remove("teacher");
        if party.registry.contains("teacher") {
            return Err(Error::Contract(format!("{} kept the teacher after training", party.id)));
        }
        party.registry.insert("student", student);
    }
    finish(plan, &v, teacher, &frozen, ledger, nodes, None)
}

pub fn run_semi_centralized_with_teacher(plan: &TopologyPlan, scenario: &Scenario, teacher: &TrainedTeacher) -> Result<RunOutcome> {
    expect(plan, "semi_centralized")?;
    let semi = plan.topology.semi().expect("checked topology").clone();
    let (v, mut ledger, mut nodes) = begin(plan, scenario, teacher)?;
    let frozen = teacher.model.clone();
    let students = server_students(plan, &v, &frozen, &mut ledger, &mut nodes)?;
    let rng = plan_rng(plan);
    let kd = semi.kd();
    let mut pre = Vec::with_capacity(nodes.len());
    for (k, party) in nodes.iter_mut().enumerate() {
        let local = &v.nodes[k];
        if local.is_empty() {
            return Err(Error::Contract(format!("{} has no local data", party.id)));
        }
        pre.push(evaluate(&students[k], &v.holdout, &plan.ks)?);
        let rehearsal = Rehearsal::build(&frozen, &v.server, semi.rehearsal_fraction, local.len(), &mut rng.child("rehearsal", k as u64))?;
        if let Some(r) = &rehearsal {
            ledger.compute(PartyId::Server, count_flops(&plan.teacher_spec) * r.len() as u64, Phase::Train, "rehearsal logits");
            ledger.transfer(PartyId::Server, party.id, r.payload_bytes(plan.bytes_per_value), Phase::Train, "rehearsal");
        }
        let (tuned, h) = finetune(&students[k], local, rehearsal.as_ref(), &kd, &semi.finetune, &rng.child("finetune", k as u64))?;
        if h.samples_processed > 0 {
            ledger.compute(party.id, train_flops(&plan.student_spec, h.samples_processed), Phase::Train, "fine-tune student");
        }
        party.registry.insert("student", tuned);
    }
    finish(plan, &v, teacher, &frozen, ledger, nodes, Some(pre))
}
