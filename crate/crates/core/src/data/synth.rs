//! Piecewise-stationary synthetic feature sequences with exact boundary
//! ground truth.
//!
//! Every snippet is `base + content(segment) + noise`. The base vector is
//! shared by all snippets of a video. At an action boundary the content
//! vector takes a small step in a random direction; at a shot boundary it is
//! re-drawn from scratch with a large magnitude.

use ndarray::Array2;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BoundaryAnnotation, FeatureSequence};
use crate::error::{GebdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub dim: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub min_segment_len: usize,
    pub snippet_rate: f64,
    /// Standard deviation of the per-dimension Gaussian noise.
    pub noise: f64,
    /// Norm of the content step at an action boundary.
    pub action_shift: f64,
    /// Norm of the freshly drawn content vector at a shot boundary.
    pub shot_shift: f64,
    /// Norm of the per-video shared offset.
    pub base_scale: f64,
    pub shot_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            min_len: 40,
            max_len: 80,
            dim: 64,
            min_segments: 2,
            max_segments: 5,
            min_segment_len: 6,
            snippet_rate: 4.0,
            noise: 0.5,
            action_shift: 3.0,
            shot_shift: 4.0,
            base_scale: 6.0,
            shot_probability: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(GebdError::Config(m));
        if self.min_len < 2 || self.min_len > self.max_len {
            return fail(format!("length range [{}, {}] invalid (need 2 <= min <= max)", self.min_len, self.max_len));
        }
        if self.dim == 0 {
            return fail("feature dimension must be positive".into());
        }
        if self.min_segments < 1 || self.min_segments > self.max_segments {
            return fail(format!("segment range [{}, {}] invalid", self.min_segments, self.max_segments));
        }
        if self.min_segment_len == 0 || self.max_segments * self.min_segment_len > self.min_len {
            return fail(format!(
                "{} segments of at least {} snippets do not fit in {} snippets",
                self.max_segments, self.min_segment_len, self.min_len
            ));
        }
        if !(self.snippet_rate > 0.0 && self.snippet_rate.is_finite()) {
            return fail("snippet rate must be positive".into());
        }
        for (name, v) in [
            ("noise", self.noise),
            ("action_shift", self.action_shift),
            ("shot_shift", self.shot_shift),
            ("base_scale", self.base_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.shot_probability) {
            return fail("shot_probability must lie in [0, 1]".into());
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Draws segment lengths: each at least `min_len`, summing to `total`.
fn segment_lengths(rng: &mut ChaCha8Rng, total: usize, segments: usize, min_len: usize) -> Vec<usize> {
    let spare = total - segments * min_len;
    let mut cuts: Vec<usize> = (0..segments - 1).map(|_| rng.gen_range(0..=spare)).collect();
    cuts.sort_unstable();
    let mut lengths = Vec::with_capacity(segments);
    let mut prev = 0;
    for &c in cuts.iter().chain(std::iter::once(&spare)) {
        lengths.push(min_len + c - prev);
        prev = c;
    }
    lengths
}

/// Generates `num_videos` videos. Deterministic given `seed`.
pub fn generate_synthetic_dataset(
    num_videos: usize,
    seed: u64,
    config: &SynthConfig,
) -> Result<(Vec<FeatureSequence>, Vec<BoundaryAnnotation>)> {
    config.validate()?;
    if num_videos == 0 {
        return Err(GebdError::Config("num_videos must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut videos = Vec::with_capacity(num_videos);
    let mut annotations = Vec::with_capacity(num_videos);
    let d = config.dim;
    let rate = config.snippet_rate;

    for v in 0..num_videos {
        let video_id = format!("synth_{v:05}");
        let len = rng.gen_range(config.min_len..=config.max_len);
        let segments = rng.gen_range(config.min_segments..=config.max_segments);
        let lengths = segment_lengths(&mut rng, len, segments, config.min_segment_len);

        let base: Vec<f64> = unit_vector(&mut rng, d).into_iter().map(|x| x * config.base_scale).collect();
        let mut content: Vec<f64> = unit_vector(&mut rng, d).into_iter().map(|x| x * config.shot_shift).collect();
        let mut features = Array2::<f32>::zeros((len, d));
        let mut action = Vec::new();
        let mut shot = Vec::new();
        let mut start = 0;
        for (s, &seg_len) in lengths.iter().enumerate() {
            if s > 0 {
                let t = start as f64 / rate;
                if rng.gen_bool(config.shot_probability) {
                    content = unit_vector(&mut rng, d).into_iter().map(|x| x * config.shot_shift).collect();
                    shot.push(t);
                } else {
                    let step = unit_vector(&mut rng, d);
                    for (c, s) in content.iter_mut().zip(step) {
                        *c += s * config.action_shift;
                    }
                    action.push(t);
                }
            }
            for k in start..start + seg_len {
                for j in 0..d {
                    let noise: f64 = if config.noise > 0.0 { rng.sample::<f64, _>(StandardNormal) * config.noise } else { 0.0 };
                    features[[k, j]] = (base[j] + content[j] + noise) as f32;
                }
            }
            start += seg_len;
        }

        let duration = len as f64 / rate;
        annotations.push(BoundaryAnnotation::new(video_id.clone(), duration, action, shot, 1.0 / rate)?);
        videos.push(FeatureSequence { video_id, snippet_rate: rate, duration, features });
    }
    Ok((videos, annotations))
}

/// Shuffles `items` reproducibly.
pub(crate) fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
}
