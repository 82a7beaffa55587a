//! Model evaluation on labeled spectrogram sets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::score::{auc_score, f1_score};
use crate::audio::{LoadedSplit, PLAYBACK_DISTANCES_M};
use crate::distill::data::batch_indices;
use crate::distill::Samples;
use crate::error::{Error, Result};
use crate::tensor::ops::sigmoid;
use crate::tensor::Tensor;
use crate::zoo::Model;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Reported distance-wise F1 of the distilled Student 1 on the recorded
/// playback set, for context only.
pub const PLAYBACK_REFERENCE_F1: [(u32, f64); 4] = [(1, 0.94595), (5, 0.93945), (10, 0.93875), (20, 0.79895)];

/// Anything producing one logit per input.
pub trait Classifier {
    fn logits(&self, batch: &Tensor<f32>) -> Result<Vec<f32>>;
}

impl Classifier for Model<f32> {
    fn logits(&self, batch: &Tensor<f32>) -> Result<Vec<f32>> {
        self.predict_logits(batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub auc: f64,
    pub f1: f64,
    pub n: usize,
}

/// Sigmoid scores of every sample, in order.
pub fn scores(model: &dyn Classifier, samples: &Samples, batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for rows in batch_indices(samples.len(), batch_size, None) {
        let (x, _) = samples.gather(&rows);
        out.extend(model.logits(&x)?.into_iter().map(|z| sigmoid(z as f64)));
    }
    Ok(out)
}

pub fn metrics_from_scores(scores: &[f64], labels: &[bool], threshold: f64) -> Result<SplitMetrics> {
    let preds: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    Ok(SplitMetrics { auc: auc_score(scores, labels)?, f1: f1_score(&preds, labels)?, n: labels.len() })
}

fn bool_labels(samples: &Samples) -> Vec<bool> {
    samples.labels().iter().map(|&y| y == 1.0).collect()
}

/// AUC of sigmoid scores and F1 at `threshold`.
pub fn evaluate(model: &dyn Classifier, samples: &Samples, threshold: f64) -> Result<SplitMetrics> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    metrics_from_scores(&scores(model, samples, 32)?, &bool_labels(samples), threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceF1 {
    pub distance_m: u32,
    pub f1: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackReport {
    pub distances: Vec<DistanceF1>,
    pub mean_f1: f64,
}

impl PlaybackReport {
    pub fn f1_at(&self, distance_m: u32) -> Option<f64> {
        self.distances.iter().find(|d| d.distance_m == distance_m).map(|d| d.f1)
    }
}

/// F1 per playback distance and their mean.
pub fn evaluate_playback(model: &dyn Classifier, set: &LoadedSplit, threshold: f64) -> Result<PlaybackReport> {
    let all = scores(model, &set.samples, 32)?;
    let labels = bool_labels(&set.samples);
    let mut groups: BTreeMap<u32, (Vec<bool>, Vec<bool>)> = BTreeMap::new();
    for ((d, s), y) in set.distances.iter().zip(&all).zip(&labels) {
        let d = d.ok_or_else(|| Error::Metric("playback record without a distance".into()))?;
        let g = groups.entry(d).or_default();
        g.0.push(*s >= threshold);
        g.1.push(*y);
    }
    let mut distances = Vec::with_capacity(PLAYBACK_DISTANCES_M.len());
    for d in PLAYBACK_DISTANCES_M {
        let (p, y) = groups.remove(&d).ok_or_else(|| Error::Metric(format!("no playback clips at {d} m")))?;
        distances.push(DistanceF1 { distance_m: d, f1: f1_score(&p, &y)?, n: y.len() });
    }
    if let Some(extra) = groups.keys().next() {
        return Err(Error::Metric(format!("unexpected playback distance {extra} m")));
    }
    let mean_f1 = mean(&distances.iter().map(|d| d.f1).collect::<Vec<_>>());
    Ok(PlaybackReport { distances, mean_f1 })
}

/// Arithmetic mean summed in ascending order, so the result does not depend
/// on the order of the inputs.
pub fn mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}
