//! Parameter, FLOP and wire-size accounting for teacher and student
//! architectures under each modality combination.
//!
//! cargo run --release --example compression

use kdcollab::harness::{compression_summary, ExperimentConfig};
use kdcollab::models::{count_flops, count_params, serialized_len};
use kdcollab::scenario::{Modality, ScenarioConfig};

fn main() {
    let study = ExperimentConfig::default();
    let cfg = &study.scenario;
    let (h, b) = (cfg.num_slots, cfg.num_beams);
    for mods in [vec![Modality::Img], vec![Modality::Radar], vec![Modality::Img, Modality::Radar]] {
        let d = ScenarioConfig { modalities: mods.clone(), ..cfg.clone() }.input_dim();
        let (t, s) = (study.teacher.spec(d, h, b), study.student.spec(d, h, b));
        let c = compression_summary(&t, &s);
        let tag: Vec<&str> = mods.iter().map(|m| m.name()).collect();
        println!("{} (input width {d})", tag.join("+"));
        println!("  teacher {:>7} params {:>8} flops {:>8} bytes", count_params(&t), count_flops(&t), serialized_len(&t));
        println!("  student {:>7} params {:>8} flops {:>8} bytes", count_params(&s), count_flops(&s), serialized_len(&s));
        println!(
            "  {:.1}x fewer parameters, {:.1}% fewer flops, {:.1}x smaller on the wire",
            c.param_ratio, c.flop_reduction_pct, c.byte_ratio
        );
    }
}
