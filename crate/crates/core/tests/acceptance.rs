//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails or exceeds its time budget.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use kdcollab::distillation::{
    combined_loss, distill_offline, feature_kd_grad, feature_kd_loss, relation_kd_grad, relation_kd_loss, response_kd_grad,
    response_kd_loss, KdConfig, TrainConfig,
};
use kdcollab::harness::{
    compression_summary, execute, improvement, run_experiment, CompressionSummary, Execution, ExperimentConfig,
    ExperimentReport, StudentRole,
};
use kdcollab::models::{init_model, serialized_len, ModelSpec};
use kdcollab::numerics::{cross_entropy, cross_entropy_grad, grad_check, Rng, Tensor};
use kdcollab::orchestrator::{ledger_summary, run_with_teacher, train_teacher, SemiSettings, Topology, TopologyPlan};
use kdcollab::scenario::{generate_scenario, ScenarioConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const MINUTE: Duration = Duration::from_secs(60);

fn topologies() -> Vec<Topology> {
    vec![Topology::Centralized, Topology::Decentralized, Topology::SemiCentralized(SemiSettings::default())]
}

/// The default study with only the students needed by the distillation
/// criteria, deployed as in the single-edge-node setting: teacher trained
/// at the server, students distilled on each node's local data.
fn distillation_study() -> ExperimentConfig {
    ExperimentConfig {
        seeds: SEEDS.to_vec(),
        metric_ks: vec![2],
        teacher_self_kd: None,
        topologies: vec![Topology::Decentralized],
        ..ExperimentConfig::default()
    }
}

fn topology_study(heterogeneity: f64) -> ExperimentConfig {
    let mut cfg = distillation_study();
    cfg.scenario.heterogeneity = heterogeneity;
    cfg.topologies = topologies();
    cfg.students = vec![StudentRole::new("student_response", KdConfig::response(4.0, 0.5))];
    cfg.baseline = "student_response".into();
    cfg
}

fn c1_quoted_arithmetic() -> String {
    let img = CompressionSummary::from_totals(1.787, 0.095, 157.83, 92.25, 1.0, 1.0);
    let both = CompressionSummary::from_totals(2.931, 0.106, 179.25, 42.72, 1.0, 1.0);
    assert_eq!(img.param_ratio, 18.8);
    assert_eq!(both.param_ratio, 27.7);
    assert_eq!(img.flop_reduction_pct, 41.6);
    assert_eq!(both.flop_reduction_pct, 76.2);
    assert_eq!(improvement(0.6472, 0.5912), 5.60);
    assert_eq!(improvement(0.6830, 0.6061), 7.69);
    "18.8x 27.7x 41.6% 76.2% 5.60 7.69".into()
}

fn c2_distillation_benefit(r: &ExperimentReport) -> String {
    let m = |id: &str| r.mean_over_slots("decentralized", id, 2).unwrap();
    let (base, resp, rel) = (m("student_baseline"), m("student_response"), m("student_relation"));
    let (dr, dl) = (improvement(resp, base), improvement(rel, base));
    let msg = format!("baseline {base:.4}, response {resp:.4} (+{dr:.2}), relation {rel:.4} (+{dl:.2})");
    assert!(dr >= 1.5 && dl >= 1.5, "{msg}");
    msg
}

fn c3_compression_retention(r: &ExperimentReport) -> String {
    let cfg = &r.config;
    let d = cfg.scenario.input_dim();
    let (h, b) = (cfg.scenario.num_slots, cfg.scenario.num_beams);
    let c = compression_summary(&cfg.teacher.spec(d, h, b), &cfg.student.spec(d, h, b));
    let teacher = r.mean_over_slots("decentralized", "teacher", 2).unwrap();
    let student = r.mean_over_slots("decentralized", "student_response", 2).unwrap();
    let gap = 100.0 * (teacher - student);
    let msg = format!("param ratio {:.1}x, teacher {teacher:.4}, student {student:.4}, gap {gap:.2} points", c.param_ratio);
    assert!(c.param_ratio >= 15.0 && gap <= 6.0, "{msg}");
    msg
}

/// A plan whose teacher outweighs a shipped student plus its rehearsal
/// buffer; training budgets are cut since only costs are compared.
fn ledger_plan(cfg: &ScenarioConfig, topology: Topology) -> TopologyPlan {
    let d = cfg.input_dim();
    TopologyPlan {
        topology,
        teacher_spec: ModelSpec::new(d, vec![256, 256], cfg.num_slots, cfg.num_beams),
        student_spec: ModelSpec::new(d, vec![12], cfg.num_slots, cfg.num_beams),
        kd: KdConfig::response(4.0, 0.5),
        teacher_train: TrainConfig { epochs: 1, ..TrainConfig::default() },
        student_train: TrainConfig { epochs: 1, ..TrainConfig::default() },
        modalities: None,
        seed: 0,
        bytes_per_value: 4,
        upload_node_data: false,
        ks: vec![2],
    }
}

fn c4_ledger_orderings() -> String {
    let cfg = ScenarioConfig::default();
    let s = generate_scenario(&cfg, 0).unwrap();
    let base = ledger_plan(&cfg, Topology::Centralized);
    let ratio = serialized_len(&base.teacher_spec) as f64 / serialized_len(&base.student_spec) as f64;
    assert!(ratio >= 15.0, "byte ratio {ratio}");
    let teacher = train_teacher(&base, &s).unwrap();
    let sums: Vec<_> = topologies()
        .into_iter()
        .map(|t| ledger_summary(&run_with_teacher(&base.with_topology(t), &s, &teacher).unwrap().ledger))
        .collect();
    let (c, d, m) = (&sums[0], &sums[1], &sums[2]);
    let msg = format!(
        "bytes dec {} > semi {} >= cen {}; edge train flops dec {} > semi {} > cen {}",
        d.bytes_total, m.bytes_total, c.bytes_total, d.edge_train_flops, m.edge_train_flops, c.edge_train_flops
    );
    assert!(d.bytes_total > m.bytes_total && m.bytes_total >= c.bytes_total, "{msg}");
    assert_eq!(c.edge_train_flops, 0, "{msg}");
    assert!(d.edge_train_flops > m.edge_train_flops && m.edge_train_flops > 0, "{msg}");
    format!("byte ratio {ratio:.1}x; {msg}")
}

fn c5_heterogeneity() -> String {
    let mean = |r: &ExperimentReport, t: &str| r.mean_over_slots(t, "student_response", 2).unwrap();
    let het = execute(&topology_study(1.0), Execution::Parallel).unwrap();
    let (c, d, m) = (mean(&het, "centralized"), mean(&het, "decentralized"), mean(&het, "semi_centralized"));
    let flat = execute(&topology_study(0.0), Execution::Parallel).unwrap();
    let f = [mean(&flat, "centralized"), mean(&flat, "decentralized"), mean(&flat, "semi_centralized")];
    let spread = 100.0 * (f.iter().cloned().fold(f64::MIN, f64::max) - f.iter().cloned().fold(f64::MAX, f64::min));
    let msg = format!(
        "het=1: cen {c:.4}, dec {d:.4}, semi {m:.4}; het=0: cen {:.4}, dec {:.4}, semi {:.4}, spread {spread:.2} points",
        f[0], f[1], f[2]
    );
    assert!(d > c && m > c, "{msg}");
    assert!(spread <= 1.0, "{msg}");
    msg
}

fn c6_forgetting() -> String {
    let cfg = ScenarioConfig {
        heterogeneity: 1.0,
        ..ScenarioConfig::default()
    };
    let study = ExperimentConfig::default();
    let mut kept = [0.0; 2];
    let mut drop = [0.0; 2];
    for &seed in &SEEDS {
        let s = generate_scenario(&cfg, seed).unwrap();
        let d = s.input_dim();
        let plan = TopologyPlan {
            topology: Topology::Centralized,
            teacher_spec: study.teacher.spec(d, cfg.num_slots, cfg.num_beams),
            student_spec: study.student.spec(d, cfg.num_slots, cfg.num_beams),
            kd: KdConfig::response(4.0, 0.5),
            teacher_train: study.teacher.train.clone(),
            student_train: study.student.train.clone(),
            modalities: None,
            seed,
            bytes_per_value: 4,
            upload_node_data: false,
            ks: vec![2],
        };
        let teacher = train_teacher(&plan, &s).unwrap();
        for (i, fraction) in [0.2, 0.0].into_iter().enumerate() {
            let t = Topology::SemiCentralized(SemiSettings {
                rehearsal_fraction: fraction,
                ..SemiSettings::default()
            });
            let o = run_with_teacher(&plan.with_topology(t), &s, &teacher).unwrap();
            let avg = |e: &[kdcollab::harness::Evaluation]| e.iter().map(|x| x.mean_over_slots(0)).sum::<f64>() / e.len() as f64;
            let after = avg(&o.global_eval);
            kept[i] += after / SEEDS.len() as f64;
            drop[i] += (avg(o.pre_finetune_global_eval.as_ref().unwrap()) - after) / SEEDS.len() as f64;
        }
    }
    let msg = format!(
        "global top-2 after fine-tuning: rehearsal 0.2 {:.4} (drop {:.4}), none {:.4} (drop {:.4})",
        kept[0], drop[0], kept[1], drop[1]
    );
    assert!(kept[0] > kept[1], "{msg}");
    msg
}

fn rand_tensor(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
}

fn c7_numeric_soundness() -> String {
    const CASES: u32 = 128;
    let mut runner = TestRunner::new(PropConfig { failure_persistence: None, ..PropConfig::with_cases(CASES) });
    let worst = std::cell::Cell::new(0.0f64);
    let track = |e: f64| -> Result<(), TestCaseError> {
        worst.set(worst.get().max(e));
        prop_assert!(e < 1e-4, "gradient error {}", e);
        Ok(())
    };
    runner
        .run(&(any::<u64>(), 0.5..6.0f64, 0.0..1.0f64), |(seed, temp, alpha)| {
            let mut rng = Rng::new(seed, 0);
            let (b, c) = (4, 5);
            let z = rand_tensor(&mut rng, b, c);
            let t = rand_tensor(&mut rng, b, c);
            let y: Vec<usize> = (0..b).map(|i| (i * 3 + seed as usize) % c).collect();

            let (_, g) = cross_entropy_grad(&z, &y).unwrap();
            track(grad_check(|p| cross_entropy(&p[0], &y).unwrap(), std::slice::from_ref(&z), &[g], 1e-5).unwrap())?;
            let (_, g) = response_kd_grad(std::slice::from_ref(&z), std::slice::from_ref(&t), temp, &[1.0]).unwrap();
            track(grad_check(|p| response_kd_loss(p, std::slice::from_ref(&t), temp, &[1.0]).unwrap(), std::slice::from_ref(&z), &g, 1e-5).unwrap())?;

            let fs = rand_tensor(&mut rng, 5, 3);
            let ft = rand_tensor(&mut rng, 5, 6);
            for normalize in [true, false] {
                let (_, g) = relation_kd_grad(&fs, &ft, normalize).unwrap();
                track(grad_check(|p| relation_kd_loss(&p[0], &ft, normalize).unwrap(), std::slice::from_ref(&fs), &[g], 1e-5).unwrap())?;
            }
            let proj = rand_tensor(&mut rng, 6, 3);
            let (_, ds, dp) = feature_kd_grad(&fs, &ft, Some(&proj)).unwrap();
            track(grad_check(|p| feature_kd_loss(&p[0], &ft, Some(&p[1])).unwrap(), &[fs.clone(), proj.clone()], &[ds, dp.unwrap()], 1e-5).unwrap())?;
            let fsq = rand_tensor(&mut rng, 5, 6);
            let (_, ds, _) = feature_kd_grad(&fsq, &ft, None).unwrap();
            track(grad_check(|p| feature_kd_loss(&p[0], &ft, None).unwrap(), &[fsq], &[ds], 1e-5).unwrap())?;

            // Whole-model objective: CE on every head mixed with response KD.
            let spec = ModelSpec::new(3, vec![4, 3], 2, c).with_tap(0);
            let m = init_model(&spec, &mut rng).unwrap();
            let x = rand_tensor(&mut rng, b, 3);
            let tl = [rand_tensor(&mut rng, b, c), rand_tensor(&mut rng, b, c)];
            let trace = m.trace(&x).unwrap();
            let (_, gk) = response_kd_grad(&trace.logits, &tl, temp, &[1.0, 1.0]).unwrap();
            let dz: Vec<Tensor> = trace
                .logits
                .iter()
                .zip(&gk)
                .map(|(zz, k)| {
                    let (_, mut g) = cross_entropy_grad(zz, &y).unwrap();
                    g.data_mut().iter_mut().zip(k.data()).for_each(|(a, kv)| *a = (1.0 - alpha) * *a + alpha * kv);
                    g
                })
                .collect();
            let grads = m.backward(&x, &trace, &dz, None).unwrap();
            let loss = |p: &[Tensor]| {
                let f = m.with_params(p.to_vec()).unwrap().forward(&x).unwrap();
                let task: f64 = f.logits_per_slot.iter().map(|zz| cross_entropy(zz, &y).unwrap()).sum();
                combined_loss(task, response_kd_loss(&f.logits_per_slot, &tl, temp, &[1.0, 1.0]).unwrap(), alpha)
            };
            track(grad_check(loss, m.params(), &grads, 1e-5).unwrap())?;
            Ok(())
        })
        .unwrap();

    let mut runner = TestRunner::new(PropConfig { failure_persistence: None, ..PropConfig::with_cases(CASES) });
    runner
        .run(&(any::<u64>(), 0.5..8.0f64, 0.01..100.0f64, 0.0..1.0f64, 0.0..1.0f64), |(seed, temp, scale, a1, a2)| {
            let mut rng = Rng::new(seed, 1);
            let z = rand_tensor(&mut rng, 4, 6);
            let t = rand_tensor(&mut rng, 4, 6);
            prop_assert!(response_kd_loss(std::slice::from_ref(&z), std::slice::from_ref(&z), temp, &[1.0]).unwrap().abs() < 1e-12);
            prop_assert!(response_kd_loss(std::slice::from_ref(&z), &[t], temp, &[1.0]).unwrap() >= 0.0);
            let fs = rand_tensor(&mut rng, 6, 3);
            let ft = rand_tensor(&mut rng, 6, 5);
            prop_assert!(relation_kd_loss(&fs, &fs, true).unwrap().abs() < 1e-12);
            prop_assert_eq!(feature_kd_loss(&fs, &fs, None).unwrap(), 0.0);
            let base = relation_kd_loss(&fs, &ft, true).unwrap();
            prop_assert!(base >= 0.0);
            let scaled = Tensor::matrix(6, 5, ft.data().iter().map(|v| v * scale).collect()).unwrap();
            prop_assert!((relation_kd_loss(&fs, &scaled, true).unwrap() - base).abs() < 1e-10 * (1.0 + base));
            let perm = rng.permutation(6);
            prop_assert!((relation_kd_loss(&fs.select_rows(&perm), &ft.select_rows(&perm), true).unwrap() - base).abs() < 1e-10 * (1.0 + base));
            let (task, kd) = (rng.uniform() * 5.0, rng.uniform() * 5.0);
            let mid = combined_loss(task, kd, 0.5 * (a1 + a2));
            prop_assert!((mid - 0.5 * (combined_loss(task, kd, a1) + combined_loss(task, kd, a2))).abs() < 1e-12);
            Ok(())
        })
        .unwrap();
    let worst = worst.get();
    format!("{CASES} gradient cases (worst relative error {worst:.2e}) and {CASES} identity cases")
}

fn c8_determinism() -> String {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        seeds: vec![7],
        topologies: topologies(),
        ..ExperimentConfig::default()
    };
    cfg.teacher.train.epochs = 3;
    cfg.student.train.epochs = 10;
    let files = ["metrics.csv", "ledger.csv", "summary.csv"];
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        cfg.output_dir = dir.path().join(name);
        run_experiment(&cfg).unwrap();
        outputs.push(files.map(|f| std::fs::read(cfg.output_dir.join(f)).unwrap()));
    }
    assert!(outputs[0] == outputs[1], "reruns differ");
    let serial = execute(&cfg, Execution::Serial).unwrap();
    let serial = [serial.metrics_csv().unwrap(), serial.ledger_csv().unwrap(), serial.summary_csv().unwrap()];
    for (f, (s, p)) in files.iter().zip(serial.iter().zip(&outputs[0])) {
        assert!(s.as_bytes() == p.as_slice(), "{f}: serial and parallel differ");
    }
    let rows = String::from_utf8_lossy(&outputs[0][0]).lines().count() - 1;
    format!("two runs and a serial run agree byte-for-byte ({rows} metric rows)")
}

fn c9_teacher_immutable_and_absent() -> String {
    let cfg = ScenarioConfig {
        samples_per_node: 300,
        samples_server: 1200,
        samples_holdout: 300,
        heterogeneity: 0.5,
        ..ScenarioConfig::default()
    };
    let s = generate_scenario(&cfg, 3).unwrap();
    let base = ledger_plan(&cfg, Topology::Centralized);
    let teacher = train_teacher(&base, &s).unwrap();
    let before = teacher.model.clone();
    let tbytes = serialized_len(&base.teacher_spec) as u64;
    let mut checked = 0;
    for t in topologies() {
        let name = t.name();
        for kd in [KdConfig::response(4.0, 0.5), KdConfig::relation(0.5), KdConfig::feature(0.5), KdConfig::none()] {
            let o = run_with_teacher(&base.with_topology(t.clone()).with_kd(kd), &s, &teacher).unwrap();
            assert!(o.teacher.bitwise_eq(&before) && teacher.model.bitwise_eq(&before), "{name}: teacher changed");
            if name != "decentralized" {
                assert!(o.ledger.transfers().all(|e| e.bytes != tbytes), "{name}: teacher-sized transfer");
            }
            checked += 1;
        }
    }
    // Direct distillation call as well.
    let d = s.node_sets[0].clone();
    let _ = distill_offline(&teacher.model, &base.student_spec, &d, &KdConfig::relation(0.5), &base.student_train, &Rng::new(1, 0)).unwrap();
    assert!(teacher.model.bitwise_eq(&before));
    format!("{checked} runs, teacher bitwise unchanged; no {tbytes}-byte transfer in centralized or semi-centralized ledgers")
}

struct Outcome {
    passed: bool,
}

fn criterion<F: FnOnce() -> String>(id: u8, name: &str, budget: Duration, f: F) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let took = start.elapsed();
    let (passed, detail) = match result {
        Ok(detail) if took <= budget => (true, detail),
        Ok(detail) => (false, format!("{detail}; over budget {budget:?}")),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, msg)
        }
    };
    println!("criterion {id} {name}: {} [{:.1}s] {detail}", if passed { "PASS" } else { "FAIL" }, took.as_secs_f64());
    Outcome { passed }
}

fn main() {
    let mut outcomes = Vec::new();
    outcomes.push(criterion(1, "quoted arithmetic", Duration::from_secs(1), c1_quoted_arithmetic));

    // Criteria 2 and 3 read the same seed-averaged study.
    let start = Instant::now();
    let study = catch_unwind(|| execute(&distillation_study(), Execution::Parallel).unwrap());
    let study_time = start.elapsed();
    match &study {
        Ok(r) => {
            let budget = (5 * MINUTE).saturating_sub(study_time);
            outcomes.push(criterion(2, "distillation benefit", budget, || {
                format!("{} [study {:.1}s]", c2_distillation_benefit(r), study_time.as_secs_f64())
            }));
            outcomes.push(criterion(3, "compression with retention", budget, || c3_compression_retention(r)));
        }
        Err(_) => {
            for (id, name) in [(2, "distillation benefit"), (3, "compression with retention")] {
                outcomes.push(criterion(id, name, MINUTE, || panic!("study failed to run")));
            }
        }
    }
    outcomes.push(criterion(4, "topology ledger orderings", MINUTE, c4_ledger_orderings));
    outcomes.push(criterion(5, "heterogeneity adaptation", 10 * MINUTE, c5_heterogeneity));
    outcomes.push(criterion(6, "forgetting mitigation", 5 * MINUTE, c6_forgetting));
    outcomes.push(criterion(7, "numeric soundness", 2 * MINUTE, c7_numeric_soundness));
    outcomes.push(criterion(8, "determinism", 10 * MINUTE, c8_determinism));
    outcomes.push(criterion(9, "teacher immutability and absence", MINUTE, c9_teacher_immutable_and_absent));

    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
