//! In-memory labeled feature sets and mini-batch ordering.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `N` single-channel feature maps with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    features: Tensor<f32>,
    labels: Vec<f32>,
}

impl Samples {
    /// `features` is `[N,C,H,W]`, `labels` has `N` entries in `{0,1}`.
    pub fn new(features: Tensor<f32>, labels: Vec<f32>) -> Result<Self> {
        let s = features.shape();
        if s.len() != 4 || s[0] != labels.len() {
            return Err(Error::shape("samples", format!("features {s:?} vs {} labels", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
        }
        Ok(Samples { features, labels })
    }

    /// Stacks `[H,W]` maps (row-major, equal sizes) into a one-channel set.
    pub fn from_maps(maps: &[Vec<f32>], h: usize, w: usize, labels: Vec<f32>) -> Result<Self> {
        let mut data = Vec::with_capacity(maps.len() * h * w);
        for m in maps {
            if m.len() != h * w {
                return Err(Error::shape("samples", format!("map of {} values, expected {h}x{w}", m.len())));
            }
            data.extend_from_slice(m);
        }
        if maps.is_empty() {
            return Err(Error::Empty("no feature maps".into()));
        }
        Samples::new(Tensor::new(vec![maps.len(), 1, h, w], data)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[f32] {
        &self.labels
    }

    /// Per-sample `[C,H,W]`.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.features.shape();
        [s[1], s[2], s[3]]
    }

    /// Features and labels of the given rows, in order.
    pub fn gather(&self, rows: &[usize]) -> (Tensor<f32>, Vec<f32>) {
        (gather_rows(&self.features, rows), rows.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Rows `rows` of a tensor whose first axis indexes samples.
pub fn gather_rows(t: &Tensor<f32>, rows: &[usize]) -> Tensor<f32> {
    let mut shape = t.shape().to_vec();
    let per = t.numel() / shape[0];
    let mut data = Vec::with_capacity(per * rows.len());
    for &r in rows {
        data.extend_from_slice(&t.data()[r * per..(r + 1) * per]);
    }
    shape[0] = rows.len();
    Tensor::new(shape, data).expect("gathered shape")
}

/// Index batches over `0..n`, shuffled when `rng` is given. A trailing batch
/// smaller than 3 is merged into the one before it so relational losses
/// always see enough samples.
pub fn batch_indices(n: usize, batch_size: usize, rng: Option<&mut Rng>) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(r) = rng {
        order.shuffle(r);
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 3) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}
