//! End-to-end checks of the `simulate` binary.

use std::path::Path;
use std::process::{Command, Output};

use kdcollab::scenario::{generate_scenario, write_scenario, ScenarioConfig};

const TINY: &str = r#"
seeds = [1, 2]
metric_ks = [1, 2]
baseline = "student_baseline"

[scenario]
num_nodes = 2
samples_per_node = 48
samples_server = 96
samples_holdout = 32
img_dim = 6

[teacher]
hidden = [12]
train = { epochs = 2, batch_size = 16 }

[student]
hidden = [3]
train = { epochs = 2, batch_size = 16 }

[[topologies]]
kind = "centralized"

[[topologies]]
kind = "decentralized"

[[students]]
id = "student_response"
kd = { knowledge = "response", temperature = 2.0, alpha = 0.5 }

[[students]]
id = "student_baseline"
kd = { knowledge = "none" }
"#;

fn simulate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simulate")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn run_writes_every_declared_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = simulate(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let header = |f: &str| csv::Reader::from_path(out.join(f)).unwrap().headers().unwrap().clone();
    assert_eq!(header("metrics.csv").iter().collect::<Vec<_>>(), ["seed", "topology", "node", "model_id", "slot", "k", "accuracy"]);
    assert_eq!(header("summary.csv").iter().collect::<Vec<_>>(), ["topology", "model_id", "slot", "k", "mean", "std", "improvement_vs_baseline"]);
    assert!(header("ledger.csv").iter().any(|h| h == "bytes"));
    assert_eq!(rows(&out.join("models.csv")).len(), 3);
    let echo = std::fs::read_to_string(out.join("config_echo.toml")).unwrap();
    assert!(kdcollab::harness::ExperimentConfig::from_toml_str(&echo).is_ok());
    // 2 topologies, 3 models, 4 slots, 2 ks
    assert_eq!(rows(&out.join("summary.csv")).len(), 2 * 3 * 4 * 2);
    for r in rows(&out.join("metrics.csv")) {
        let acc: f64 = r[6].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn summary_rows_join_to_metrics_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    assert_eq!(simulate(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let metrics = rows(&out.join("metrics.csv"));
    for s in rows(&out.join("summary.csv")) {
        let matched: Vec<f64> = metrics
            .iter()
            .filter(|m| &m[2] == "all" && m[1] == s[0] && m[3] == s[1] && m[4] == s[2] && m[5] == s[3])
            .map(|m| m[6].parse().unwrap())
            .collect();
        assert_eq!(matched.len(), 2, "one row per seed");
        let mean: f64 = s[4].parse().unwrap();
        assert!((matched.iter().sum::<f64>() / 2.0 - mean).abs() < 1e-12);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        assert_eq!(simulate(&["run", "--config", &cfg, "--out", o.to_str().unwrap(), "--seeds", "7"]).status.code(), Some(0));
    }
    for f in ["metrics.csv", "ledger.csv", "summary.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(std::fs::read_to_string(a.join("config_echo.toml")).unwrap().contains("seeds = [7]"));
}

#[test]
fn topology_flag_restricts_the_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = simulate(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--topology", "semi_centralized"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(rows(&out.join("summary.csv")).iter().all(|r| &r[0] == "semi_centralized"));
}

#[test]
fn invalid_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = simulate(&["run", "--config", &write_config(dir.path(), &TINY.replace("metric_ks = [1, 2]", "metric_ks = [0]")), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("metric_ks"));

    let o = simulate(&["run", "--config", &write_config(dir.path(), &TINY.replace("img_dim = 6", "img_dims = 6")), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("img_dims") && err.contains("line 11"), "{err}");

    let o = simulate(&["run", "--config", &write_config(dir.path(), TINY), "--out", out.to_str().unwrap(), "--topology", "ring"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inspect_prints_config_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        num_nodes: 2,
        samples_per_node: 40,
        samples_server: 50,
        samples_holdout: 20,
        ..ScenarioConfig::default()
    };
    let path = dir.path().join("x.scn");
    write_scenario(&generate_scenario(&cfg, 4).unwrap(), &path).unwrap();
    let o = simulate(&["inspect", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("seed = 4") && text.contains("samples_per_node = 40"));
    assert!(text.contains("class histogram") && text.contains("node1"));

    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert_eq!(simulate(&["inspect", "--scenario", path.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn selftest_passes() {
    let o = simulate(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
