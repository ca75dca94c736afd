//! Domain types for snippet feature sequences and their boundary annotations.

mod dataset;
mod folds;
mod io;
mod synth;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{GebdError, Result};

pub use dataset::{read_feature_dir, Dataset, ANNOTATION_FILE, FEATURE_DIR, FEATURE_EXT};
pub use folds::{make_folds, DatasetSplit};
pub use io::{read_annotations, read_feature_file, write_annotations, write_feature_file, AnnotationRecord};
pub use synth::{generate_synthetic_dataset, SynthConfig};

/// Boundary class. The order here is the order of prediction rows, label
/// rows and encoder stream groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryClass {
    Action,
    Shot,
    Whole,
}

impl BoundaryClass {
    pub const ALL: [BoundaryClass; 3] = [BoundaryClass::Action, BoundaryClass::Shot, BoundaryClass::Whole];

    pub fn index(self) -> usize {
        match self {
            BoundaryClass::Action => 0,
            BoundaryClass::Shot => 1,
            BoundaryClass::Whole => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryClass::Action => "action",
            BoundaryClass::Shot => "shot",
            BoundaryClass::Whole => "whole",
        }
    }
}

impl fmt::Display for BoundaryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundaryClass {
    type Err = GebdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "action" => Ok(BoundaryClass::Action),
            "shot" => Ok(BoundaryClass::Shot),
            "whole" => Ok(BoundaryClass::Whole),
            other => Err(GebdError::Config(format!("unknown boundary class '{other}'"))),
        }
    }
}

/// Snippet-level features of one video, `L x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    /// Snippets per second.
    pub snippet_rate: f64,
    /// Seconds.
    pub duration: f64,
    pub features: Array2<f32>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (l, d) = self.features.dim();
        if l < 2 || d < 1 {
            return Err(GebdError::Input(format!("{}: need L >= 2 and D >= 1, got {l}x{d}", self.video_id)));
        }
        if !(self.snippet_rate > 0.0 && self.snippet_rate.is_finite()) {
            return Err(GebdError::Input(format!("{}: snippet rate must be positive", self.video_id)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(GebdError::Input(format!("{}: duration must be positive", self.video_id)));
        }
        let expected = (self.duration * self.snippet_rate).round();
        if (expected - l as f64).abs() > 1.0 {
            return Err(GebdError::Input(format!(
                "{}: {l} snippets inconsistent with duration {} s at {} snippets/s",
                self.video_id, self.duration, self.snippet_rate
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(GebdError::Input(format!("{}: non-finite feature value", self.video_id)));
        }
        Ok(())
    }

    /// Features widened for the model.
    pub fn features_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }
}

/// Boundary timestamps (seconds) of one video for the three classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryAnnotation {
    pub video_id: String,
    pub duration: f64,
    pub action_boundaries: Vec<f64>,
    pub shot_boundaries: Vec<f64>,
    pub whole_boundaries: Vec<f64>,
}

impl BoundaryAnnotation {
    /// Builds an annotation, deriving the whole class as the sorted union of
    /// action and shot boundaries where boundaries closer than `merge_window`
    /// seconds collapse to the earlier one. Pass one snippet period as the
    /// window; zero merges exact duplicates only.
    pub fn new(
        video_id: impl Into<String>,
        duration: f64,
        mut action: Vec<f64>,
        mut shot: Vec<f64>,
        merge_window: f64,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(GebdError::Input(format!("{video_id}: duration must be positive")));
        }
        for &t in action.iter().chain(shot.iter()) {
            if !(t > 0.0 && t < duration) {
                return Err(GebdError::Input(format!("{video_id}: boundary {t} outside (0, {duration})")));
            }
        }
        action.sort_by(f64::total_cmp);
        shot.sort_by(f64::total_cmp);
        let whole = merge_boundaries(&action, &shot, merge_window);
        Ok(Self { video_id, duration, action_boundaries: action, shot_boundaries: shot, whole_boundaries: whole })
    }

    pub fn boundaries(&self, class: BoundaryClass) -> &[f64] {
        match class {
            BoundaryClass::Action => &self.action_boundaries,
            BoundaryClass::Shot => &self.shot_boundaries,
            BoundaryClass::Whole => &self.whole_boundaries,
        }
    }
}

/// Sorted union with near-duplicates (gap `< window`, or equal) merged.
pub fn merge_boundaries(a: &[f64], b: &[f64], window: f64) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    all.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for t in all {
        match out.last() {
            Some(&last) if t - last < window || t == last => {}
            _ => out.push(t),
        }
    }
    out
}

/// Per-class 0/1 targets, shape `3 x L` (rows ordered as [`BoundaryClass::ALL`]).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSeries {
    pub labels: Array2<f64>,
}

impl LabelSeries {
    pub fn len(&self) -> usize {
        self.labels.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.ncols() == 0
    }

    pub fn class(&self, class: BoundaryClass) -> ndarray::ArrayView1<'_, f64> {
        self.labels.row(class.index())
    }

    /// Indices labelled 1 for `class`.
    pub fn indices(&self, class: BoundaryClass) -> Vec<usize> {
        self.class(class).iter().enumerate().filter(|(_, &v)| v > 0.5).map(|(i, _)| i).collect()
    }

    /// Spreads each positive to `width` neighbors on either side with value
    /// `value` (existing higher values are kept). Width 0 is the identity.
    pub fn smoothed(&self, width: usize, value: f64) -> LabelSeries {
        let mut out = self.labels.clone();
        if width == 0 {
            return LabelSeries { labels: out };
        }
        let l = self.len();
        for c in 0..3 {
            for k in 0..l {
                if self.labels[[c, k]] > 0.5 {
                    for d in 1..=width {
                        for j in [k.checked_sub(d), Some(k + d)].into_iter().flatten() {
                            if j < l && out[[c, j]] < value {
                                out[[c, j]] = value;
                            }
                        }
                    }
                }
            }
        }
        LabelSeries { labels: out }
    }
}

/// Index of the snippet a timestamp maps to: nearest index, clamped to
/// `[0, len - 1]`.
pub fn timestamp_to_index(t: f64, snippet_rate: f64, len: usize) -> usize {
    let k = (t * snippet_rate).round();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(len - 1)
    }
}

/// Maps every boundary timestamp to its snippet index; collisions merge.
pub fn snippetize_labels(ann: &BoundaryAnnotation, len: usize, snippet_rate: f64) -> LabelSeries {
    assert!(len >= 2 && snippet_rate > 0.0, "need L >= 2 and a positive snippet rate");
    let mut labels = Array2::zeros((3, len));
    for class in BoundaryClass::ALL {
        for &t in ann.boundaries(class) {
            labels[[class.index(), timestamp_to_index(t, snippet_rate, len)]] = 1.0;
        }
    }
    LabelSeries { labels }
}
