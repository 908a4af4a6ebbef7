//! A full seeded experiment across modality subsets: teacher, self-distilled
//! teacher and three students per subset, reported as CSV files and as a
//! per-slot accuracy table.
//!
//! cargo run --release --example modality_study -- [out-dir]

use kdcollab::harness::{emit_fig3_table, run_experiment, ExperimentConfig};
use kdcollab::orchestrator::Topology;
use kdcollab::scenario::Modality;

fn main() -> kdcollab::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/modality_study".into());
    let mut cfg = ExperimentConfig {
        seeds: vec![0, 1],
        topologies: vec![Topology::Decentralized],
        modality_sets: vec![vec![Modality::Img], vec![Modality::Radar], vec![Modality::Img, Modality::Radar]],
        output_dir: out.into(),
        ..ExperimentConfig::default()
    };
    cfg.scenario.samples_server = 6000;
    cfg.teacher.train.epochs = 6;
    cfg.student.train.epochs = 30;
    let report = run_experiment(&cfg)?;
    println!("reports written to {}", cfg.output_dir.display());
    print!("{}", emit_fig3_table(&report, "decentralized")?);
    Ok(())
}
