use crate::models::Model;
use crate::numerics::Tensor;
use crate::scenario::Dataset;
use crate::{Error, Result};

/// Rank of `label` in a row under the total order "larger logit first, lower
/// index first among equals".
fn label_rank(row: &[f64], label: usize) -> usize {
    let v = row[label];
    row.iter()
        .enumerate()
        .filter(|&(j, &x)| x > v || (x == v && j < label))
        .count()
}

/// Fraction of rows whose label is among the `k` highest logits.
pub fn topk_accuracy(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    Ok(topk_hits(logits, labels, k)? as f64 / labels.len() as f64)
}

pub(crate) fn topk_hits(logits: &Tensor, labels: &[usize], k: usize) -> Result<usize> {
    let c = logits.cols();
    if k == 0 || k > c {
        return Err(Error::param("k", format!("{k} outside [1, {c}]")));
    }
    if labels.len() != logits.rows() {
        return Err(Error::dim("topk_accuracy labels", logits.shape(), &[labels.len()]));
    }
    let mut hits = 0;
    for (r, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(Error::Index { index: l, bound: c });
        }
        if label_rank(logits.row(r), l) < k {
            hits += 1;
        }
    }
    Ok(hits)
}

/// Hit counts per `(slot, k)` on one dataset; counts pool exactly across
/// datasets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub ks: Vec<usize>,
    pub samples: usize,
    /// `[slot][k index]`
    pub hits: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn accuracy(&self, slot: usize, k_index: usize) -> f64 {
        self.hits[slot][k_index] as f64 / self.samples as f64
    }

    /// Accuracy at `k` averaged over slots.
    pub fn mean_over_slots(&self, k_index: usize) -> f64 {
        let h = self.hits.len();
        (0..h).map(|s| self.accuracy(s, k_index)).sum::<f64>() / h as f64
    }

    pub fn merge(&self, other: &Evaluation) -> Result<Evaluation> {
        if self.ks != other.ks || self.hits.len() != other.hits.len() {
            return Err(Error::Contract("merging evaluations with different slots or ks".into()));
        }
        let hits = self
            .hits
            .iter()
            .zip(&other.hits)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Evaluation {
            ks: self.ks.clone(),
            samples: self.samples + other.samples,
            hits,
        })
    }
}

/// Top-k hit counts of a model on every slot of a dataset.
pub fn evaluate(model: &Model, data: &Dataset, ks: &[usize]) -> Result<Evaluation> {
    evaluate_inputs(model, data.features(), data, ks)
}

/// As [`evaluate`] but feeding `inputs` (row-aligned with `data`) to the
/// model, for students that see a reduced feature set.
pub fn evaluate_inputs(model: &Model, inputs: &Tensor, data: &Dataset, ks: &[usize]) -> Result<Evaluation> {
    if data.num_slots() != model.spec().num_slots {
        return Err(Error::dim("evaluate slots", &[data.num_slots()], &[model.spec().num_slots]));
    }
    let out = model.forward(inputs)?;
    let hits = out
        .logits_per_slot
        .iter()
        .enumerate()
        .map(|(s, z)| ks.iter().map(|&k| topk_hits(z, data.labels(s), k)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        ks: ks.to_vec(),
        samples: data.len(),
        hits,
    })
}
