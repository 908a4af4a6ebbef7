use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture of a multi-head classifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Width of the concatenated modality features.
    pub input_dim: usize,
    /// Hidden widths of the tanh trunk, input side first.
    pub trunk_dims: Vec<usize>,
    /// Number of prediction slots (one head each).
    pub num_slots: usize,
    /// Classes per head.
    pub num_beams: usize,
    /// Trunk layer whose activations serve as features for feature and
    /// relation KD.
    pub feature_tap: usize,
}

impl ModelSpec {
    /// Spec with the feature tap on the last trunk layer.
    pub fn new(input_dim: usize, trunk_dims: Vec<usize>, num_slots: usize, num_beams: usize) -> Self {
        let feature_tap = trunk_dims.len().saturating_sub(1);
        Self {
            input_dim,
            trunk_dims,
            num_slots,
            num_beams,
            feature_tap,
        }
    }

    pub fn with_tap(mut self, tap: usize) -> Self {
        self.feature_tap = tap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if self.trunk_dims.is_empty() || self.trunk_dims.contains(&0) {
            return Err(Error::config("trunk_dims", "needs at least one positive width"));
        }
        if self.feature_tap >= self.trunk_dims.len() {
            return Err(Error::config(
                "feature_tap",
                format!("{} must index one of {} trunk layers", self.feature_tap, self.trunk_dims.len()),
            ));
        }
        if self.num_slots == 0 {
            return Err(Error::config("num_slots", "must be at least 1"));
        }
        if self.num_beams < 2 {
            return Err(Error::config("num_beams", "must be at least 2"));
        }
        Ok(())
    }

    /// `(in, out)` of every dense layer: trunk layers in order, then heads.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.trunk_dims.len() + self.num_slots);
        let mut prev = self.input_dim;
        for &d in &self.trunk_dims {
            shapes.push((prev, d));
            prev = d;
        }
        shapes.extend(std::iter::repeat_n((prev, self.num_beams), self.num_slots));
        shapes
    }

    pub fn tap_width(&self) -> usize {
        self.trunk_dims[self.feature_tap]
    }

    pub fn trunk_out(&self) -> usize {
        *self.trunk_dims.last().expect("validated spec has a trunk")
    }
}

/// `Σ (in·out + out)` over trunk layers and all heads.
pub fn count_params(spec: &ModelSpec) -> usize {
    spec.layer_shapes().iter().map(|&(i, o)| i * o + o).sum()
}

/// Cost of one dense layer for a single sample: `2·in·out` for the
/// multiply-adds, plus `out` for the bias add and `out` for the activation.
/// Heads count their output nonlinearity (softmax) under the same constant.
pub fn dense_layer_flops(inp: usize, out: usize) -> u64 {
    (2 * inp * out + out + out) as u64
}

/// Forward-pass FLOPs for one input sample.
pub fn count_flops(spec: &ModelSpec) -> u64 {
    spec.layer_shapes().iter().map(|&(i, o)| dense_layer_flops(i, o)).sum()
}
