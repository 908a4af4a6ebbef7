use crate::models::{count_flops, count_params, serialized_len, ModelSpec};

fn round_to(x: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (x * s).round() / s
}

/// Percentage-point gain of `acc_model` over `acc_baseline`, to 2 decimals.
pub fn improvement(acc_model: f64, acc_baseline: f64) -> f64 {
    round_to(100.0 * (acc_model - acc_baseline), 2)
}

/// Teacher-to-student size and cost comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionSummary {
    /// Teacher parameters per student parameter, to 1 decimal.
    pub param_ratio: f64,
    /// FLOPs saved by the student as a percentage of the teacher's, to 1
    /// decimal.
    pub flop_reduction_pct: f64,
    /// Serialized teacher length per serialized student length, unrounded.
    pub byte_ratio: f64,
}

impl CompressionSummary {
    /// From raw totals, e.g. counts quoted in millions.
    pub fn from_totals(teacher_params: f64, student_params: f64, teacher_flops: f64, student_flops: f64, teacher_bytes: f64, student_bytes: f64) -> Self {
        Self {
            param_ratio: round_to(teacher_params / student_params, 1),
            flop_reduction_pct: round_to(100.0 * (1.0 - student_flops / teacher_flops), 1),
            byte_ratio: teacher_bytes / student_bytes,
        }
    }
}

pub fn compression_summary(teacher: &ModelSpec, student: &ModelSpec) -> CompressionSummary {
    CompressionSummary::from_totals(
        count_params(teacher) as f64,
        count_params(student) as f64,
        count_flops(teacher) as f64,
        count_flops(student) as f64,
        serialized_len(teacher) as f64,
        serialized_len(student) as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoted_accuracy_gains() {
        assert_eq!(improvement(0.6472, 0.5912), 5.60);
        assert_eq!(improvement(0.6830, 0.6061), 7.69);
        assert_eq!(improvement(0.5, 0.5), 0.0);
        assert_eq!(improvement(0.5, 0.6), -10.0);
    }

    #[test]
    fn quoted_size_and_cost_reductions() {
        let img = CompressionSummary::from_totals(1.787, 0.095, 157.83, 92.25, 1.0, 1.0);
        assert_eq!(img.param_ratio, 18.8);
        assert_eq!(img.flop_reduction_pct, 41.6);
        let both = CompressionSummary::from_totals(2.931, 0.106, 179.25, 42.72, 1.0, 1.0);
        assert_eq!(both.param_ratio, 27.7);
        assert_eq!(both.flop_reduction_pct, 76.2);
    }

    #[test]
    fn identical_specs_compress_nothing() {
        let s = ModelSpec::new(10, vec![8], 2, 4);
        let c = compression_summary(&s, &s);
        assert_eq!(c.param_ratio, 1.0);
        assert_eq!(c.flop_reduction_pct, 0.0);
        assert_eq!(c.byte_ratio, 1.0);
    }

    #[test]
    fn spec_comparison_uses_counted_totals() {
        let t = ModelSpec::new(144, vec![128, 96], 4, 8);
        let s = ModelSpec::new(144, vec![12], 4, 8);
        let c = compression_summary(&t, &s);
        assert_eq!(c.param_ratio, (34048.0f64 / 2156.0 * 10.0).round() / 10.0);
        assert!(c.byte_ratio > 15.0);
        assert!(c.flop_reduction_pct > 90.0);
    }
}
