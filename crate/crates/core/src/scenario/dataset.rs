use serde::{Deserialize, Serialize};

use super::config::Modality;
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Column layout of a feature row: `history_len` steps, each holding the
/// listed modality blocks in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub history_len: usize,
    pub blocks: Vec<(Modality, usize)>,
}

impl FeatureLayout {
    pub fn step_width(&self) -> usize {
        self.blocks.iter().map(|b| b.1).sum()
    }

    pub fn width(&self) -> usize {
        self.step_width() * self.history_len
    }

    /// Column indices, in row order, of the kept modalities.
    fn columns(&self, keep: &[Modality]) -> Vec<usize> {
        let sw = self.step_width();
        let mut cols = Vec::new();
        for step in 0..self.history_len {
            let mut off = step * sw;
            for &(m, d) in &self.blocks {
                if keep.contains(&m) {
                    cols.extend(off..off + d);
                }
                off += d;
            }
        }
        cols
    }
}

/// One training example in row form.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Beam index for slots `t0..t_{H−1}`.
    pub labels: Vec<usize>,
}

/// Column-oriented collection of samples with shared width and slot count.
///
/// Ground-truth slot angles and the originating node are kept next to the
/// features for cross-checks and per-node slicing; models never see them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    /// `[slot][sample]`
    labels: Vec<Vec<usize>>,
    num_beams: usize,
    /// `[sample][slot]`, flattened; empty when unknown.
    angles: Vec<f64>,
    origin: Vec<u16>,
    layout: Option<FeatureLayout>,
}

impl Dataset {
    /// Builds a dataset from a feature matrix and per-slot labels.
    pub fn new(features: Tensor, labels: Vec<Vec<usize>>, num_beams: usize) -> Result<Self> {
        let n = features.rows();
        if labels.is_empty() {
            return Err(Error::Contract("dataset needs at least one slot".into()));
        }
        for slot in &labels {
            if slot.len() != n {
                return Err(Error::dim("Dataset labels", &[slot.len()], &[n]));
            }
            if let Some(&bad) = slot.iter().find(|&&l| l >= num_beams) {
                return Err(Error::Index {
                    index: bad,
                    bound: num_beams,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            num_beams,
            angles: Vec::new(),
            origin: vec![0; n],
            layout: None,
        })
    }

    pub(crate) fn with_meta(mut self, angles: Vec<f64>, origin: Vec<u16>, layout: Option<FeatureLayout>) -> Self {
        debug_assert!(angles.is_empty() || angles.len() == self.len() * self.num_slots());
        debug_assert_eq!(origin.len(), self.len());
        self.angles = angles;
        self.origin = origin;
        self.layout = layout;
        self
    }

    pub fn from_samples(samples: &[Sample], num_beams: usize) -> Result<Self> {
        let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
        let features = Tensor::from_rows(&rows)?;
        let slots = samples.first().map(|s| s.labels.len()).unwrap_or(0);
        let mut labels = vec![Vec::with_capacity(samples.len()); slots];
        for s in samples {
            if s.labels.len() != slots {
                return Err(Error::dim("Dataset::from_samples", &[slots], &[s.labels.len()]));
            }
            for (slot, &l) in s.labels.iter().enumerate() {
                labels[slot].push(l);
            }
        }
        Dataset::new(features, labels, num_beams)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_slots(&self) -> usize {
        self.labels.len()
    }

    pub fn num_beams(&self) -> usize {
        self.num_beams
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self, slot: usize) -> &[usize] {
        &self.labels[slot]
    }

    pub fn layout(&self) -> Option<&FeatureLayout> {
        self.layout.as_ref()
    }

    /// Ground-truth angle behind `labels(slot)[i]`, if recorded.
    pub fn angle(&self, i: usize, slot: usize) -> Option<f64> {
        self.angles.get(i * self.num_slots() + slot).copied()
    }

    #[cfg(test)]
    pub(crate) fn angles_raw(&self) -> &[f64] {
        &self.angles
    }

    /// Index of the node whose distribution produced sample `i`.
    pub fn origin(&self, i: usize) -> usize {
        usize::from(self.origin[i])
    }

    pub(crate) fn origins(&self) -> &[u16] {
        &self.origin
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            features: self.features.row(i).to_vec(),
            labels: self.labels.iter().map(|s| s[i]).collect(),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Gathers a minibatch: features plus per-slot labels.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<Vec<usize>>) {
        let x = self.features.select_rows(idx);
        let y = self
            .labels
            .iter()
            .map(|slot| idx.iter().map(|&i| slot[i]).collect())
            .collect();
        (x, y)
    }

    /// Rows `idx` as a new dataset, metadata included.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::Contract("empty subset".into()));
        }
        let (features, labels) = self.batch(idx);
        let h = self.num_slots();
        let angles = if self.angles.is_empty() {
            Vec::new()
        } else {
            idx.iter().flat_map(|&i| self.angles[i * h..(i + 1) * h].iter().copied()).collect()
        };
        let origin = idx.iter().map(|&i| self.origin[i]).collect();
        Ok(Dataset {
            features,
            labels,
            num_beams: self.num_beams,
            angles,
            origin,
            layout: self.layout.clone(),
        })
    }

    /// Samples that came from node `node`.
    pub fn node_slice(&self, node: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.origin(i) == node).collect();
        self.subset(&idx)
    }

    /// Concatenates datasets with identical width, slots and classes.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero datasets".into()))?;
        for p in parts {
            if p.num_slots() != first.num_slots() || p.num_beams != first.num_beams {
                return Err(Error::dim(
                    "Dataset::concat",
                    &[first.num_slots(), first.num_beams],
                    &[p.num_slots(), p.num_beams],
                ));
            }
        }
        let feats: Vec<&Tensor> = parts.iter().map(|p| &p.features).collect();
        let features = Tensor::vstack(&feats)?;
        let labels = (0..first.num_slots())
            .map(|s| parts.iter().flat_map(|p| p.labels[s].iter().copied()).collect())
            .collect();
        let angles = if parts.iter().all(|p| !p.angles.is_empty()) {
            parts.iter().flat_map(|p| p.angles.iter().copied()).collect()
        } else {
            Vec::new()
        };
        let origin = parts.iter().flat_map(|p| p.origin.iter().copied()).collect();
        Ok(Dataset {
            features,
            labels,
            num_beams: first.num_beams,
            angles,
            origin,
            layout: first.layout.clone(),
        })
    }

    /// Keeps only the columns of the given modalities.
    pub fn select_modalities(&self, keep: &[Modality]) -> Result<Dataset> {
        let layout = self
            .layout
            .as_ref()
            .ok_or_else(|| Error::Contract("dataset has no modality layout".into()))?;
        let cols = layout.columns(keep);
        if cols.is_empty() {
            return Err(Error::config("modalities", "selection keeps no columns"));
        }
        let n = self.len();
        let mut data = Vec::with_capacity(n * cols.len());
        for i in 0..n {
            let row = self.features.row(i);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        let blocks = layout.blocks.iter().filter(|(m, _)| keep.contains(m)).cloned().collect();
        Ok(Dataset {
            features: Tensor::from_parts(vec![n, cols.len()], data),
            labels: self.labels.clone(),
            num_beams: self.num_beams,
            angles: self.angles.clone(),
            origin: self.origin.clone(),
            layout: Some(FeatureLayout {
                history_len: layout.history_len,
                blocks,
            }),
        })
    }

    /// Per-slot counts of each beam index.
    pub fn class_histogram(&self) -> Vec<Vec<usize>> {
        self.labels
            .iter()
            .map(|slot| {
                let mut h = vec![0; self.num_beams];
                for &l in slot {
                    h[l] += 1;
                }
                h
            })
            .collect()
    }
}
