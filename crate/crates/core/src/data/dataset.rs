use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::io::{read_annotations, read_feature_file, write_annotations, write_feature_file};
use super::{snippetize_labels, BoundaryAnnotation, FeatureSequence, LabelSeries};
use crate::error::{GebdError, Result};

pub const FEATURE_DIR: &str = "features";
pub const ANNOTATION_FILE: &str = "annotations.json";
pub const FEATURE_EXT: &str = "gebf";

/// Feature sequences paired one-to-one with their annotations, kept in
/// insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    videos: Vec<FeatureSequence>,
    annotations: Vec<BoundaryAnnotation>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(videos: Vec<FeatureSequence>, annotations: Vec<BoundaryAnnotation>) -> Result<Self> {
        if videos.len() != annotations.len() {
            return Err(GebdError::Input(format!("{} feature sequences but {} annotations", videos.len(), annotations.len())));
        }
        let by_id: HashMap<&str, &BoundaryAnnotation> = annotations.iter().map(|a| (a.video_id.as_str(), a)).collect();
        let mut index = HashMap::with_capacity(videos.len());
        let mut ordered = Vec::with_capacity(videos.len());
        for (i, v) in videos.iter().enumerate() {
            v.validate()?;
            if index.insert(v.video_id.clone(), i).is_some() {
                return Err(GebdError::Input(format!("duplicate video id {}", v.video_id)));
            }
            let ann = by_id.get(v.video_id.as_str()).ok_or_else(|| GebdError::Input(format!("no annotation for video {}", v.video_id)))?;
            ordered.push((*ann).clone());
        }
        Ok(Self { videos, annotations: ordered, index })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.video_id.clone()).collect()
    }

    pub fn videos(&self) -> &[FeatureSequence] {
        &self.videos
    }

    pub fn annotations(&self) -> &[BoundaryAnnotation] {
        &self.annotations
    }

    pub fn get(&self, id: &str) -> Option<(&FeatureSequence, &BoundaryAnnotation)> {
        self.index.get(id).map(|&i| (&self.videos[i], &self.annotations[i]))
    }

    pub fn require(&self, id: &str) -> Result<(&FeatureSequence, &BoundaryAnnotation)> {
        self.get(id).ok_or_else(|| GebdError::Input(format!("unknown video id {id}")))
    }

    pub fn labels(&self, id: &str) -> Result<LabelSeries> {
        let (v, a) = self.require(id)?;
        Ok(snippetize_labels(a, v.len(), v.snippet_rate))
    }

    /// Subset in the order of `ids`.
    pub fn subset(&self, ids: &[String]) -> Result<Dataset> {
        let mut videos = Vec::with_capacity(ids.len());
        let mut annotations = Vec::with_capacity(ids.len());
        for id in ids {
            let (v, a) = self.require(id)?;
            videos.push(v.clone());
            annotations.push(a.clone());
        }
        Dataset::new(videos, annotations)
    }

    /// Writes `features/<id>.gebf` files and `annotations.json` under `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let feat_dir = dir.join(FEATURE_DIR);
        fs::create_dir_all(&feat_dir)?;
        let mut written = Vec::with_capacity(self.len() + 1);
        for v in &self.videos {
            let path = feat_dir.join(format!("{}.{FEATURE_EXT}", v.video_id));
            write_feature_file(&path, v)?;
            written.push(path);
        }
        let ann_path = dir.join(ANNOTATION_FILE);
        write_annotations(&ann_path, &self.annotations)?;
        written.push(ann_path);
        Ok(written)
    }

    /// Reads a directory written by [`Dataset::save_dir`]. Videos are ordered
    /// by id. The whole class is re-derived with a one-snippet merge window.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let mut videos = read_feature_dir(dir.join(FEATURE_DIR))?;
        videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let records = read_annotations(dir.join(ANNOTATION_FILE))?;
        let rates: HashMap<&str, f64> = videos.iter().map(|v| (v.video_id.as_str(), v.snippet_rate)).collect();
        let mut annotations = Vec::with_capacity(records.len());
        for rec in records {
            let Some(&rate) = rates.get(rec.video_id.as_str()) else {
                return Err(GebdError::Input(format!("annotation for {} has no feature file", rec.video_id)));
            };
            annotations.push(rec.into_annotation(1.0 / rate)?);
        }
        Dataset::new(videos, annotations)
    }
}

/// Every `*.gebf` file in `dir`, in file-name order.
pub fn read_feature_dir(dir: impl AsRef<Path>) -> Result<Vec<FeatureSequence>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == FEATURE_EXT))
        .collect();
    paths.sort();
    paths.iter().map(read_feature_file).collect()
}
