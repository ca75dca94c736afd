//! Peak estimation, timestamp conversion and boundary F1 at a relative
//! distance threshold.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::{BoundaryAnnotation, BoundaryClass};
use crate::error::{GebdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakConfig {
    /// Neighbor span on each side.
    pub k: usize,
    pub threshold: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self { k: 1, threshold: 0.3 }
    }
}

impl PeakConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(GebdError::Config("peak span K must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(GebdError::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// Indices `t` with `p[t] >= threshold` that are strictly higher than every
/// existing neighbor within `k`. Plateaus produce no peak.
pub fn estimate_peaks(p: &[f64], cfg: &PeakConfig) -> Vec<usize> {
    let n = p.len();
    (0..n)
        .filter(|&t| {
            p[t] >= cfg.threshold
                && (1..=cfg.k).all(|d| (t < d || p[t] > p[t - d]) && (t + d >= n || p[t] > p[t + d]))
        })
        .collect()
}

pub fn indices_to_timestamps(indices: &[usize], snippet_rate: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = indices.iter().map(|&i| i as f64 / snippet_rate).collect();
    ts.sort_by(f64::total_cmp);
    ts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(matches: usize, n_pred: usize, n_gt: usize) -> Self {
        if n_pred == 0 && n_gt == 0 {
            return Self { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let ratio = |n: usize| if n == 0 { 0.0 } else { matches as f64 / n as f64 };
        let (precision, recall) = (ratio(n_pred), ratio(n_gt));
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1 }
    }
}

/// Greedy one-to-one matching. Ground-truth boundaries are visited in time
/// order; each takes the nearest unmatched prediction within `tolerance`,
/// the earlier one on ties. Returns `(pred_index, gt_index)` pairs.
pub fn match_boundaries(pred: &[f64], gt: &[f64], tolerance: f64) -> Vec<(usize, usize)> {
    let mut gt_order: Vec<usize> = (0..gt.len()).collect();
    gt_order.sort_by(|&a, &b| gt[a].total_cmp(&gt[b]));
    let mut pred_order: Vec<usize> = (0..pred.len()).collect();
    pred_order.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]));
    let mut used = vec![false; pred.len()];
    let mut pairs = Vec::new();
    for gi in gt_order {
        let mut best: Option<(usize, f64)> = None;
        for &pi in &pred_order {
            if used[pi] {
                continue;
            }
            let d = (pred[pi] - gt[gi]).abs();
            if d <= tolerance && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((pi, d));
            }
        }
        if let Some((pi, _)) = best {
            used[pi] = true;
            pairs.push((pi, gi));
        }
    }
    pairs
}

pub fn f1_at_rel_dis(pred: &[f64], gt: &[f64], duration: f64, rel: f64) -> Prf {
    let matches = match_boundaries(pred, gt, rel * duration).len();
    Prf::from_counts(matches, pred.len(), gt.len())
}

/// Predicted boundaries of one class in one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub class: BoundaryClass,
    pub timestamps: Vec<f64>,
}

/// Peak-estimated boundaries for each class of a `3 x L` probability array.
pub fn prediction_records(video_id: &str, probs: ArrayView2<f64>, snippet_rate: f64, cfg: &PeakConfig) -> Vec<PredictionRecord> {
    BoundaryClass::ALL
        .iter()
        .map(|&class| {
            let row = probs.row(class.index()).to_vec();
            PredictionRecord {
                video_id: video_id.to_string(),
                class,
                timestamps: indices_to_timestamps(&estimate_peaks(&row, cfg), snippet_rate),
            }
        })
        .collect()
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(records)?)?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    pub num_pred: usize,
    pub num_gt: usize,
    /// One entry per threshold in `EvalReport::rel_dis`.
    pub scores: Vec<Prf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class: BoundaryClass,
    pub rel_dis: Vec<f64>,
    pub num_videos: usize,
    pub total_pred: usize,
    pub total_gt: usize,
    /// Unweighted means over videos, one per threshold.
    pub mean: Vec<Prf>,
    pub videos: Vec<VideoMetrics>,
}

impl EvalReport {
    pub fn mean_f1(&self, rel_index: usize) -> f64 {
        self.mean[rel_index].f1
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("class: {}  videos: {}  predicted: {}  ground truth: {}\n", self.class, self.num_videos, self.total_pred, self.total_gt);
        out.push_str(&format!("{:<10}", "metric"));
        for r in &self.rel_dis {
            out.push_str(&format!("{:>10}", format!("@{r}")));
        }
        out.push('\n');
        for (name, pick) in [
            ("precision", (|p: &Prf| p.precision) as fn(&Prf) -> f64),
            ("recall", |p| p.recall),
            ("f1", |p| p.f1),
        ] {
            out.push_str(&format!("{name:<10}"));
            for p in &self.mean {
                out.push_str(&format!("{:>10.3}", pick(p)));
            }
            out.push('\n');
        }
        out
    }
}

/// Scores every prediction record of `class` against its annotation.
/// Videos are reported in id order, so the result does not depend on input
/// order. Annotations without a prediction record are not scored.
pub fn evaluate_dataset(
    predictions: &[PredictionRecord],
    annotations: &[BoundaryAnnotation],
    rel_dis: &[f64],
    class: BoundaryClass,
) -> Result<EvalReport> {
    if rel_dis.is_empty() || rel_dis.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(GebdError::Config(format!("relative distance thresholds must be positive: {rel_dis:?}")));
    }
    let by_id: HashMap<&str, &BoundaryAnnotation> = annotations.iter().map(|a| (a.video_id.as_str(), a)).collect();
    let mut selected: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    for rec in predictions.iter().filter(|r| r.class == class) {
        if selected.insert(rec.video_id.as_str(), rec).is_some() {
            return Err(GebdError::Input(format!("duplicate {class} predictions for video {}", rec.video_id)));
        }
    }
    let mut videos = Vec::with_capacity(selected.len());
    for (id, rec) in selected {
        let ann = by_id.get(id).ok_or_else(|| GebdError::Input(format!("no annotation for video {id}")))?;
        let mut pred = rec.timestamps.clone();
        pred.sort_by(f64::total_cmp);
        let gt = ann.boundaries(class);
        videos.push(VideoMetrics {
            video_id: id.to_string(),
            num_pred: pred.len(),
            num_gt: gt.len(),
            scores: rel_dis.iter().map(|&r| f1_at_rel_dis(&pred, gt, ann.duration, r)).collect(),
        });
    }
    let n = videos.len();
    let mean = (0..rel_dis.len())
        .map(|k| {
            let avg = |f: fn(&Prf) -> f64| if n == 0 { 0.0 } else { videos.iter().map(|v| f(&v.scores[k])).sum::<f64>() / n as f64 };
            Prf { precision: avg(|p| p.precision), recall: avg(|p| p.recall), f1: avg(|p| p.f1) }
        })
        .collect();
    Ok(EvalReport {
        class,
        rel_dis: rel_dis.to_vec(),
        num_videos: n,
        total_pred: videos.iter().map(|v| v.num_pred).sum(),
        total_gt: videos.iter().map(|v| v.num_gt).sum(),
        mean,
        videos,
    })
}
