//! Train a wide teacher on server data, then distill compact students on one
//! edge node's samples with response and relation knowledge.
//!
//! cargo run --release --example distill_teacher_student

use kdcollab::distillation::{distill_offline, train_supervised, KdConfig, TrainConfig};
use kdcollab::harness::{evaluate, ExperimentConfig};
use kdcollab::numerics::Rng;
use kdcollab::scenario::generate_scenario;

fn main() -> kdcollab::Result<()> {
    let study = ExperimentConfig::default();
    let cfg = &study.scenario;
    let scenario = generate_scenario(cfg, 0)?;
    let (d, h, b) = (scenario.input_dim(), cfg.num_slots, cfg.num_beams);

    let teacher_spec = study.teacher.spec(d, h, b);
    let (teacher, _) = train_supervised(&teacher_spec, &scenario.server_set, &study.teacher.train, &Rng::new(0, 0))?;

    let local = &scenario.node_sets[0];
    let holdout = scenario.holdout.node_slice(0)?;
    let student_spec = study.student.spec(d, h, b);
    let train: &TrainConfig = &study.student.train;

    let top2 = |m: &kdcollab::models::Model| evaluate(m, &holdout, &[2]).map(|e| e.mean_over_slots(0));
    println!("teacher               top-2 {:.4}", top2(&teacher)?);
    for (name, kd) in [
        ("no distillation", KdConfig::none()),
        ("response (T=4)", KdConfig::response(4.0, 0.5)),
        ("relation", KdConfig::relation(0.5)),
    ] {
        let (student, history) = distill_offline(&teacher, &student_spec, local, &kd, train, &Rng::new(0, 1))?;
        let last = history.train_loss.last().copied().unwrap_or(f64::NAN);
        println!("student {name:<15} top-2 {:.4}  final loss {last:.4}", top2(&student)?);
    }
    Ok(())
}
