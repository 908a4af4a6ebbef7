//! Generate a synthetic beam-tracking scenario, write it as a `.scn` file,
//! read it back and print per-party beam histograms.
//!
//! cargo run --release --example scenario_files -- [out.scn]

use kdcollab::scenario::{generate_scenario, read_scenario, write_scenario, Modality, ScenarioConfig};

fn main() -> kdcollab::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("demo.scn").display().to_string());
    let cfg = ScenarioConfig {
        heterogeneity: 1.0,
        samples_per_node: 500,
        samples_server: 2000,
        samples_holdout: 600,
        ..ScenarioConfig::default()
    };
    let scenario = generate_scenario(&cfg, 42)?;
    write_scenario(&scenario, &path)?;
    let back = read_scenario(&path)?;
    let stored = |d: &kdcollab::scenario::Dataset| d.features().data().iter().map(|&v| v as f32).collect::<Vec<_>>();
    assert_eq!(stored(&back.server_set), stored(&scenario.server_set), "features survive at f32 precision");
    println!("wrote {path}: {} features per row", back.input_dim());
    for m in cfg.canonical_modalities() {
        println!("  {:<5} {} values", m.name(), cfg.modality_dim(m));
    }

    let radar_only = back.server_set.select_modalities(&[Modality::Radar])?;
    println!("radar-only view: {} features per row", radar_only.input_dim());

    let mut parties = vec![("server".to_string(), &back.server_set)];
    parties.extend(back.node_sets.iter().enumerate().map(|(k, d)| (format!("node{k}"), d)));
    println!("beam histogram at the first prediction slot");
    for (name, d) in parties {
        let h = &d.class_histogram()[0];
        let bars: Vec<String> = h.iter().map(|&c| format!("{:>4}", c)).collect();
        println!("  {name:<7} {}", bars.join(""));
    }
    Ok(())
}
