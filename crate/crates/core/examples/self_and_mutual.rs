//! Teacher-free variants: self-distillation from the model's own earlier
//! snapshots, and mutual learning between edge nodes that exchange only
//! softened outputs.
//!
//! cargo run --release --example self_and_mutual

use kdcollab::distillation::{mutual_learn, self_distill, train_supervised, KdConfig, Peer, TrainConfig};
use kdcollab::harness::evaluate;
use kdcollab::models::ModelSpec;
use kdcollab::numerics::Rng;
use kdcollab::scenario::{generate_scenario, ScenarioConfig};

fn main() -> kdcollab::Result<()> {
    let cfg = ScenarioConfig::default();
    let scenario = generate_scenario(&cfg, 1)?;
    let spec = ModelSpec::new(scenario.input_dim(), vec![12], cfg.num_slots, cfg.num_beams);
    let train = TrainConfig { epochs: 40, ..TrainConfig::default() };
    let kd = KdConfig::response(4.0, 0.5);
    let rng = Rng::new(1, 0);
    let top2 = |m: &kdcollab::models::Model| evaluate(m, &scenario.holdout, &[2]).map(|e| e.mean_over_slots(0));

    let (plain, _) = train_supervised(&spec, &scenario.server_set, &train, &rng)?;
    let (selfkd, h) = self_distill(&spec, &scenario.server_set, &kd, &train, &rng)?;
    println!("server model, supervised     top-2 {:.4}", top2(&plain)?);
    println!(
        "server model, self-distilled top-2 {:.4} (snapshot every {} epochs, {} snapshot rows)",
        top2(&selfkd)?,
        train.self_kd_snapshot_every,
        h.teacher_samples
    );

    let peers: Vec<Peer> = scenario
        .node_sets
        .iter()
        .enumerate()
        .map(|(k, data)| Peer { spec: &spec, data, stream: k as u64 })
        .collect();
    let alone = mutual_learn(&peers, &KdConfig::response(4.0, 0.0), &train, &rng)?;
    let mutual = mutual_learn(&peers, &kd, &train, &rng)?;
    for (k, ((a, _), (m, _))) in alone.iter().zip(&mutual).enumerate() {
        let own = scenario.holdout.node_slice(k)?;
        let acc = |x| evaluate(x, &own, &[2]).map(|e| e.mean_over_slots(0));
        println!("node{k}: independent top-2 {:.4}, mutual top-2 {:.4}", acc(a)?, acc(m)?);
    }
    Ok(())
}
