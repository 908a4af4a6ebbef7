use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kdcollab::harness::{exit_code, run_experiment, selftest, ExperimentConfig};
use kdcollab::scenario::read_scenario;

#[derive(Parser)]
#[command(name = "simulate", about = "Knowledge-distillation collaborative learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds replacing the configured list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Run only this topology: centralized, decentralized or semi_centralized.
        #[arg(long)]
        topology: Option<String>,
    },
    /// Print a scenario file's configuration and class histogram.
    Inspect {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run the fast invariant suite.
    Selftest,
}

fn run(config: PathBuf, out: PathBuf, seeds: Option<Vec<u64>>, topology: Option<String>) -> kdcollab::Result<()> {
    let mut cfg = ExperimentConfig::load(&config)?;
    cfg.apply_overrides(seeds, topology.as_deref())?;
    cfg.output_dir = out;
    let report = run_experiment(&cfg)?;
    println!("wrote {} metric rows to {}", report.metrics.len(), cfg.output_dir.display());
    let k = cfg.metric_ks[0];
    for t in &cfg.topologies {
        for m in cfg.resolved_modality_sets() {
            for role in cfg.roles() {
                let id = cfg.model_id(&role, &m);
                if let Some(acc) = report.mean_over_slots(t.name(), &id, k) {
                    println!("{:<18} {:<28} top-{k} {:.4}", t.name(), id, acc);
                }
            }
        }
    }
    Ok(())
}

fn inspect(path: PathBuf) -> kdcollab::Result<()> {
    let s = read_scenario(&path)?;
    println!("seed = {}", s.seed);
    print!("{}", toml::to_string(&s.config).map_err(|e| kdcollab::Error::Contract(e.to_string()))?);
    let mut sets = vec![("server".to_string(), &s.server_set)];
    sets.extend(s.node_sets.iter().enumerate().map(|(k, d)| (format!("node{k}"), d)));
    sets.push(("holdout".to_string(), &s.holdout));
    println!();
    println!("class histogram (rows per beam)");
    for (name, d) in sets {
        for (slot, h) in d.class_histogram().iter().enumerate() {
            let counts: Vec<String> = h.iter().map(|c| c.to_string()).collect();
            println!("{name:<8} t{slot} n={:<6} {}", d.len(), counts.join(" "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            topology,
        } => run(config, out, seeds, topology),
        Command::Inspect { scenario } => inspect(scenario),
        Command::Selftest => {
            let checks = selftest();
            for c in &checks {
                match &c.outcome {
                    Ok(()) => println!("PASS {}", c.name),
                    Err(e) => println!("FAIL {}: {e}", c.name),
                }
            }
            return if checks.iter().all(|c| c.passed()) { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
    };
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    ExitCode::from(exit_code(&result) as u8)
}
