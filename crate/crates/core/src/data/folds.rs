use serde::{Deserialize, Serialize};

use super::synth::seeded_shuffle;
use crate::error::{GebdError, Result};

/// One train/validation split of a k-fold partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Shuffles `video_ids` by `seed` and cuts them into `k` groups whose sizes
/// differ by at most one (the first `n % k` groups take the extra id). Group
/// `g` is the validation set of fold `g`.
pub fn make_folds(video_ids: &[String], k: usize, seed: u64) -> Result<Vec<DatasetSplit>> {
    if k < 2 {
        return Err(GebdError::Config(format!("k must be at least 2, got {k}")));
    }
    if k > video_ids.len() {
        return Err(GebdError::Config(format!("k = {k} exceeds the {} available videos", video_ids.len())));
    }
    let mut ids = video_ids.to_vec();
    seeded_shuffle(&mut ids, seed);

    let n = ids.len();
    let (base, extra) = (n / k, n % k);
    let mut groups = Vec::with_capacity(k);
    let mut start = 0;
    for g in 0..k {
        let size = base + usize::from(g < extra);
        groups.push(ids[start..start + size].to_vec());
        start += size;
    }

    Ok((0..k)
        .map(|fold| DatasetSplit {
            fold_index: fold,
            train_ids: groups
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != fold)
                .flat_map(|(_, ids)| ids.iter().cloned())
                .collect(),
            val_ids: groups[fold].clone(),
        })
        .collect())
}
