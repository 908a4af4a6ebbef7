use super::compare::{improvement, CompressionSummary};
use super::experiment::{execute, Execution};
use super::metrics::topk_accuracy;
use crate::distillation::{
    combined_loss, feature_kd_grad, feature_kd_loss, relation_kd_grad, relation_kd_loss, response_kd_grad, response_kd_loss,
};
use crate::models::{deserialize, init_model, serialize, ModelSpec};
use crate::numerics::{cross_entropy, cross_entropy_grad, grad_check, Rng, Tensor};
use crate::scenario::{dump, generate_scenario, load, ScenarioConfig};

/// Outcome of one named invariant check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }
}

fn random(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| scale * rng.normal()).collect()).expect("shape matches data")
}

fn labels(rng: &mut Rng, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|_| (rng.uniform() * c as f64) as usize % c).collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const GRAD_TOL: f64 = 1e-4;
const CASES: usize = 100;

fn grad_ok(name: &str, err: crate::Result<f64>) -> Result<(), String> {
    let e = err.map_err(|e| e.to_string())?;
    ensure(e < GRAD_TOL, || format!("{name}: relative error {e:.3e}"))
}

fn e<T>(r: crate::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn gradients(rng: &mut Rng) -> Result<(), String> {
    for _ in 0..5 {
        let (b, c) = (4, 5);
        let z = random(rng, b, c, 1.5);
        let y = labels(rng, b, c);
        let (_, g) = e(cross_entropy_grad(&z, &y))?;
        grad_ok("cross entropy", grad_check(|p| cross_entropy(&p[0], &y).unwrap(), std::slice::from_ref(&z), &[g], 1e-5))?;

        let t = random(rng, b, c, 1.5);
        let w = [0.7];
        let (_, g) = e(response_kd_grad(std::slice::from_ref(&z), std::slice::from_ref(&t), 3.0, &w))?;
        grad_ok("response KD", grad_check(|p| response_kd_loss(&p[..1], std::slice::from_ref(&t), 3.0, &w).unwrap(), std::slice::from_ref(&z), &g, 1e-5))?;

        let fs = random(rng, 6, 3, 1.0);
        let ft = random(rng, 6, 7, 1.0);
        for normalize in [true, false] {
            let (_, g) = e(relation_kd_grad(&fs, &ft, normalize))?;
            grad_ok("relation KD", grad_check(|p| relation_kd_loss(&p[0], &ft, normalize).unwrap(), std::slice::from_ref(&fs), &[g], 1e-5))?;
        }
        let proj = random(rng, 7, 3, 0.5);
        let (_, ds, dp) = e(feature_kd_grad(&fs, &ft, Some(&proj)))?;
        let dp = dp.ok_or("feature KD returned no projection gradient")?;
        grad_ok(
            "feature KD",
            grad_check(|p| feature_kd_loss(&p[0], &ft, Some(&p[1])).unwrap(), &[fs.clone(), proj.clone()], &[ds, dp], 1e-5),
        )?;

        let spec = ModelSpec::new(3, vec![5, 4], 2, c).with_tap(0);
        let m = e(init_model(&spec, rng))?;
        let x = random(rng, b, 3, 1.0);
        let ys = [labels(rng, b, c), labels(rng, b, c)];
        let trace = e(m.trace(&x))?;
        let dz = ys
            .iter()
            .zip(&trace.logits)
            .map(|(y, z)| cross_entropy_grad(z, y).map(|(_, g)| g))
            .collect::<crate::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let grads = e(m.backward(&x, &trace, &dz, None))?;
        let loss = |p: &[Tensor]| {
            let mm = m.with_params(p.to_vec()).unwrap();
            let f = mm.forward(&x).unwrap();
            f.logits_per_slot.iter().zip(&ys).map(|(z, y)| cross_entropy(z, y).unwrap()).sum::<f64>()
        };
        grad_ok("model backward", grad_check(loss, m.params(), &grads, 1e-5))?;
    }
    Ok(())
}

fn loss_identities(rng: &mut Rng) -> Result<(), String> {
    for case in 0..CASES {
        let (b, c, d) = (3 + case % 4, 2 + case % 6, 1 + case % 5);
        let z = random(rng, b, c, 2.0);
        let t = random(rng, b, c, 2.0);
        let temp = 0.5 + 4.0 * rng.uniform();
        let w = [1.0];
        let same = response_kd_loss(std::slice::from_ref(&z), std::slice::from_ref(&z), temp, &w).map_err(|e| e.to_string())?;
        ensure(same.abs() < 1e-10, || format!("response KD at identity is {same}"))?;
        let kl = response_kd_loss(std::slice::from_ref(&z), std::slice::from_ref(&t), temp, &w).map_err(|e| e.to_string())?;
        ensure(kl >= -1e-12, || format!("response KD negative: {kl}"))?;

        let fs = random(rng, b, d, 1.0);
        let ft = random(rng, b, d + 1, 1.0);
        let rel_same = relation_kd_loss(&fs, &fs, true).map_err(|e| e.to_string())?;
        ensure(rel_same.abs() < 1e-10, || format!("relation KD at identity is {rel_same}"))?;
        let rel = relation_kd_loss(&fs, &ft, true).map_err(|e| e.to_string())?;
        ensure(rel >= 0.0, || format!("relation KD negative: {rel}"))?;
        let s = 0.1 + 10.0 * rng.uniform();
        let mut scaled = ft.clone();
        scaled.data_mut().iter_mut().for_each(|v| *v *= s);
        let rel_scaled = relation_kd_loss(&fs, &scaled, true).map_err(|e| e.to_string())?;
        ensure((rel - rel_scaled).abs() <= 1e-9 * (1.0 + rel.abs()), || format!("relation KD not scale invariant: {rel} vs {rel_scaled}"))?;
        let perm = rng.permutation(b);
        let rel_perm = relation_kd_loss(&fs.select_rows(&perm), &ft.select_rows(&perm), true).map_err(|e| e.to_string())?;
        ensure((rel - rel_perm).abs() <= 1e-9 * (1.0 + rel.abs()), || format!("relation KD not permutation invariant: {rel} vs {rel_perm}"))?;

        let feat_same = feature_kd_loss(&fs, &fs, None).map_err(|e| e.to_string())?;
        ensure(feat_same == 0.0, || format!("feature KD at identity is {feat_same}"))?;

        let (task, kd) = (rng.uniform() * 3.0, rng.uniform() * 3.0);
        let (a1, a2) = (rng.uniform(), rng.uniform());
        let mid = combined_loss(task, kd, 0.5 * (a1 + a2));
        let avg = 0.5 * (combined_loss(task, kd, a1) + combined_loss(task, kd, a2));
        ensure((mid - avg).abs() < 1e-12, || "combined loss not linear in alpha".into())?;
        ensure(combined_loss(task, kd, 0.0) == task, || "alpha=0 must give the task loss".into())?;
    }
    Ok(())
}

fn topk_properties(rng: &mut Rng) -> Result<(), String> {
    for _ in 0..CASES {
        let c = 2 + (rng.uniform() * 8.0) as usize;
        let z = random(rng, 10, c, 1.0);
        let y = labels(rng, 10, c);
        let mut prev = 0.0;
        for k in 1..=c {
            let a = topk_accuracy(&z, &y, k).map_err(|e| e.to_string())?;
            ensure(a >= prev, || format!("top-{k} accuracy decreased"))?;
            prev = a;
        }
        ensure(prev == 1.0, || "top-C accuracy must be 1".into())?;
    }
    Ok(())
}

fn quoted_arithmetic() -> Result<(), String> {
    let a = CompressionSummary::from_totals(1.787, 0.095, 157.83, 92.25, 1.0, 1.0);
    let b = CompressionSummary::from_totals(2.931, 0.106, 179.25, 42.72, 1.0, 1.0);
    let got = [a.param_ratio, a.flop_reduction_pct, b.param_ratio, b.flop_reduction_pct, improvement(0.6472, 0.5912), improvement(0.6830, 0.6061)];
    let want = [18.8, 41.6, 27.7, 76.2, 5.60, 7.69];
    ensure(got == want, || format!("got {got:?}, want {want:?}"))
}

fn small_scenario() -> ScenarioConfig {
    ScenarioConfig {
        num_nodes: 2,
        samples_per_node: 40,
        samples_server: 80,
        samples_holdout: 30,
        img_dim: 6,
        ..ScenarioConfig::default()
    }
}

fn formats(rng: &mut Rng) -> Result<(), String> {
    let spec = ModelSpec::new(6, vec![4, 3], 2, 5);
    let m = init_model(&spec, rng).map_err(|e| e.to_string())?;
    // Parameters are stored as f32, so only the second trip is exact.
    let once = deserialize(&serialize(&m)).map_err(|e| e.to_string())?;
    let twice = deserialize(&serialize(&once)).map_err(|e| e.to_string())?;
    ensure(twice.bitwise_eq(&once), || "model round trip is not idempotent".into())?;
    let s = generate_scenario(&small_scenario(), 11).map_err(|e| e.to_string())?;
    let bytes = dump(&s);
    let again = dump(&load(&bytes).map_err(|e| e.to_string())?);
    ensure(bytes == again, || "scenario round trip changed bytes".into())?;
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    ensure(load(&bad).is_err(), || "corrupted scenario was accepted".into())
}

fn determinism() -> Result<(), String> {
    use super::config::{ArchConfig, ExperimentConfig, StudentRole};
    use crate::distillation::{KdConfig, TrainConfig};
    use crate::orchestrator::{SemiSettings, Topology};
    let short = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let cfg = ExperimentConfig {
        scenario: small_scenario(),
        seeds: vec![1, 2],
        metric_ks: vec![1, 2],
        teacher: ArchConfig::new(vec![8], short.clone()),
        student: ArchConfig::new(vec![3], short),
        teacher_self_kd: None,
        topologies: vec![Topology::Centralized, Topology::Decentralized, Topology::SemiCentralized(SemiSettings::default())],
        students: vec![StudentRole::new("student_response", KdConfig::response(2.0, 0.5)), StudentRole::new("student_baseline", KdConfig::none())],
        ..ExperimentConfig::default()
    };
    let a = execute(&cfg, Execution::Serial).map_err(|e| e.to_string())?;
    let b = execute(&cfg, Execution::Parallel).map_err(|e| e.to_string())?;
    let same = |x: crate::Result<String>, y: crate::Result<String>| x.ok() == y.ok();
    ensure(same(a.metrics_csv(), b.metrics_csv()), || "metrics differ between runs".into())?;
    ensure(same(a.ledger_csv(), b.ledger_csv()), || "ledgers differ between runs".into())?;
    ensure(same(a.summary_csv(), b.summary_csv()), || "summaries differ between runs".into())
}

/// Runs the fast invariant suite behind `simulate selftest`.
pub fn selftest() -> Vec<Check> {
    let rng = Rng::new(0x5e1f, 0);
    vec![
        Check {
            name: "analytic gradients match finite differences",
            outcome: gradients(&mut rng.child("grad", 0)),
        },
        Check {
            name: "loss identities over randomized cases",
            outcome: loss_identities(&mut rng.child("loss", 0)),
        },
        Check {
            name: "top-k accuracy is monotone in k",
            outcome: topk_properties(&mut rng.child("topk", 0)),
        },
        Check {
            name: "quoted compression and improvement arithmetic",
            outcome: quoted_arithmetic(),
        },
        Check {
            name: "model and scenario containers round-trip",
            outcome: formats(&mut rng.child("format", 0)),
        },
        Check {
            name: "serial and parallel experiments agree",
            outcome: determinism(),
        },
    ]
}
