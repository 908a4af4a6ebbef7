//! Run one teacher through the centralized, decentralized and
//! semi-centralized protocols and compare their communication and compute
//! ledgers.
//!
//! cargo run --release --example topology_ledger -- [ledger-dir]

use kdcollab::distillation::{KdConfig, TrainConfig};
use kdcollab::models::ModelSpec;
use kdcollab::orchestrator::{ledger_summary, run_with_teacher, train_teacher, PartyId, Phase, SemiSettings, Topology, TopologyPlan};
use kdcollab::scenario::{generate_scenario, ScenarioConfig};

fn main() -> kdcollab::Result<()> {
    let out = std::env::args().nth(1);
    let cfg = ScenarioConfig {
        heterogeneity: 1.0,
        ..ScenarioConfig::default()
    };
    let scenario = generate_scenario(&cfg, 0)?;
    let d = scenario.input_dim();
    let plan = TopologyPlan {
        topology: Topology::Centralized,
        teacher_spec: ModelSpec::new(d, vec![128, 96], cfg.num_slots, cfg.num_beams),
        student_spec: ModelSpec::new(d, vec![12], cfg.num_slots, cfg.num_beams),
        kd: KdConfig::response(4.0, 0.5),
        teacher_train: TrainConfig { epochs: 10, lr: 0.02, ..TrainConfig::default() },
        student_train: TrainConfig { epochs: 60, ..TrainConfig::default() },
        modalities: None,
        seed: 0,
        bytes_per_value: 4,
        upload_node_data: false,
        ks: vec![2],
    };
    let teacher = train_teacher(&plan, &scenario)?;

    println!("{:<18} {:>12} {:>16} {:>16} {:>8} {:>8}", "topology", "bytes", "edge train flops", "server train", "node", "global");
    for topology in [Topology::Centralized, Topology::Decentralized, Topology::SemiCentralized(SemiSettings::default())] {
        let outcome = run_with_teacher(&plan.with_topology(topology.clone()), &scenario, &teacher)?;
        let s = ledger_summary(&outcome.ledger);
        let mean = |e: &[kdcollab::harness::Evaluation]| e.iter().map(|x| x.mean_over_slots(0)).sum::<f64>() / e.len() as f64;
        println!(
            "{:<18} {:>12} {:>16} {:>16} {:>8.4} {:>8.4}",
            topology.name(),
            s.bytes_total,
            s.edge_train_flops,
            s.server_train_flops,
            mean(&outcome.node_eval),
            mean(&outcome.global_eval)
        );
        let node0 = s.party(PartyId::Node(0), Phase::Train);
        println!("    node0 train: {} bytes in, {} flops", node0.bytes_received, node0.flops);
        if let Some(dir) = &out {
            outcome.save(std::path::Path::new(dir).join(topology.name()))?;
        }
    }
    Ok(())
}
