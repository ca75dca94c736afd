//! Training loop, checkpoints and fold-ensemble averaging.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::{BoundaryClass, Dataset, DatasetSplit, FeatureSequence, LabelSeries};
use crate::error::{GebdError, Result};
use crate::eval::{evaluate_dataset, prediction_records, EvalReport, PeakConfig};
use crate::heads::{LossWeights, PassPredictions};
use crate::model::{class_masks, GebdModel, ModelConfig};
use crate::params::{clip_grad_norm, AdamW, AdamWConfig, ParamStore};
use crate::similarity::ContrastiveMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Contrastive local range `w`.
    pub local_range: usize,
    pub loss_weights: LossWeights,
    /// Gradients of this many videos are averaged per optimizer step.
    pub videos_per_step: usize,
    /// Relative distance thresholds reported each epoch; the first one drives
    /// model selection.
    pub eval_rel_dis: Vec<f64>,
    pub selection_class: BoundaryClass,
    /// Stop after this many epochs without improvement; 0 disables.
    pub patience: usize,
    pub peak: PeakConfig,
    /// Pick the peak threshold that maximizes validation F1 after training.
    pub tune_threshold: bool,
    pub grad_clip: Option<f64>,
    /// Also apply BCE to each pass separately.
    pub aux_pass_bce: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            local_range: 4,
            loss_weights: LossWeights::default(),
            videos_per_step: 1,
            eval_rel_dis: vec![0.05],
            selection_class: BoundaryClass::Whole,
            patience: 0,
            peak: PeakConfig::default(),
            tune_threshold: false,
            grad_clip: Some(5.0),
            aux_pass_bce: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(GebdError::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.local_range == 0 {
            return fail("local range must be at least 1".into());
        }
        if self.videos_per_step == 0 {
            return fail("videos per step must be at least 1".into());
        }
        if self.eval_rel_dis.is_empty() || self.eval_rel_dis.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return fail(format!("eval thresholds must be positive: {:?}", self.eval_rel_dis));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return fail(format!("gradient clip must be positive, got {c}"));
            }
        }
        self.loss_weights.validate()?;
        self.peak.validate()
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { learning_rate: self.learning_rate, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean total loss over the epoch's training videos.
    pub train_loss: f64,
    /// Mean contrastive term (before the lambda weight).
    pub contrastive_loss: f64,
    /// Validation F1 of the selection class, one per `eval_rel_dis` entry.
    pub val_f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub in_dim: usize,
    pub train_config: TrainConfig,
    pub fold_index: usize,
    pub history: Vec<EpochMetrics>,
    /// Index into `history` of the returned parameters.
    pub best_epoch: usize,
    /// Post-processing to use with these parameters.
    pub peak: PeakConfig,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model_config: ModelConfig,
    in_dim: usize,
    train_config: TrainConfig,
    fold_index: usize,
    history: Vec<EpochMetrics>,
    best_epoch: usize,
    peak: PeakConfig,
}

const CKPT_MAGIC: &[u8; 4] = b"GEBC";
const CKPT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn model(&self) -> Result<GebdModel> {
        let (model, fresh) = GebdModel::build(self.in_dim, &self.model_config, 0)?;
        if fresh.len() != self.params.len() {
            return Err(GebdError::Format { offset: 0, message: format!("checkpoint has {} tensors, model needs {}", self.params.len(), fresh.len()) });
        }
        for id in 0..fresh.len() {
            if fresh.name(id) != self.params.name(id) || fresh.value(id).dim() != self.params.value(id).dim() {
                return Err(GebdError::Format {
                    offset: 0,
                    message: format!("tensor {id}: expected {} {:?}, found {} {:?}", fresh.name(id), fresh.value(id).dim(), self.params.name(id), self.params.value(id).dim()),
                });
            }
        }
        Ok(model)
    }

    pub fn predict(&self, features: &FeatureSequence) -> Result<PassPredictions> {
        self.model()?.predict(&self.params, features.features_f64().view())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CheckpointMeta {
            model_config: self.model_config.clone(),
            in_dim: self.in_dim,
            train_config: self.train_config.clone(),
            fold_index: self.fold_index,
            history: self.history.clone(),
            best_epoch: self.best_epoch,
            peak: self.peak,
        };
        let json = serde_json::to_vec(&meta)?;
        let mut buf = Vec::with_capacity(json.len() + 8 * self.params.num_scalars() + 64);
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, value) in self.params.iter() {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&2u32.to_le_bytes());
            let (r, c) = value.dim();
            buf.extend_from_slice(&(r as u64).to_le_bytes());
            buf.extend_from_slice(&(c as u64).to_le_bytes());
            for v in value.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CKPT_MAGIC {
            return Err(GebdError::Format { offset: 0, message: "not a checkpoint (bad magic)".into() });
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(GebdError::Format { offset: 4, message: format!("unsupported checkpoint version {version}") });
        }
        let json_len = r.u64()? as usize;
        let json_at = r.pos;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| GebdError::Format { offset: json_at as u64, message: format!("config block: {e}") })?;
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name_len = r.u16()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| GebdError::Format { offset: at as u64, message: format!("tensor name: {e}") })?
                .to_string();
            let ndim = r.u32()?;
            if ndim != 2 {
                return Err(GebdError::Format { offset: r.pos as u64, message: format!("{name}: expected 2 dims, found {ndim}") });
            }
            let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
            let count = rows.checked_mul(cols).ok_or_else(|| GebdError::Format { offset: r.pos as u64, message: format!("{name}: size overflow") })?;
            let raw = r.take(count.saturating_mul(8))?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            params.insert(name, Array2::from_shape_vec((rows, cols), values).expect("length checked"));
        }
        if r.pos != bytes.len() {
            return Err(GebdError::Format { offset: r.pos as u64, message: format!("{} trailing bytes", bytes.len() - r.pos) });
        }
        let ckpt = Checkpoint {
            model_config: meta.model_config,
            in_dim: meta.in_dim,
            train_config: meta.train_config,
            fold_index: meta.fold_index,
            history: meta.history,
            best_epoch: meta.best_epoch,
            peak: meta.peak,
            params,
        };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Writes one JSON object per epoch.
    pub fn write_metrics_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        for m in &self.history {
            serde_json::to_writer(&mut out, m)?;
            out.write_all(b"\n")?;
        }
        fs::write(path, out)?;
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(GebdError::Format {
                offset: self.bytes.len() as u64,
                message: format!("truncated checkpoint: need {n} bytes at offset {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

struct Example {
    features: Array2<f64>,
    labels: LabelSeries,
    masks: Option<[ContrastiveMask; 3]>,
}

/// Scores `p_final` of every video in `data` after peak estimation.
pub fn evaluate_model(
    model: &GebdModel,
    store: &ParamStore,
    data: &Dataset,
    peak: &PeakConfig,
    rel_dis: &[f64],
    class: BoundaryClass,
) -> Result<EvalReport> {
    let probs = data
        .videos()
        .iter()
        .map(|v| model.predict(store, v.features_f64().view()).map(|p| p.p_final))
        .collect::<Result<Vec<_>>>()?;
    evaluate_probabilities(data, &probs, peak, rel_dis, class)
}

/// Scores precomputed `3 x L` probabilities, one per video of `data` in order.
pub fn evaluate_probabilities(
    data: &Dataset,
    probs: &[Array2<f64>],
    peak: &PeakConfig,
    rel_dis: &[f64],
    class: BoundaryClass,
) -> Result<EvalReport> {
    let mut records = Vec::with_capacity(probs.len());
    for (v, p) in data.videos().iter().zip(probs) {
        records.extend(prediction_records(&v.video_id, p.view(), v.snippet_rate, peak).into_iter().filter(|r| r.class == class));
    }
    evaluate_dataset(&records, data.annotations(), rel_dis, class)
}

/// Trains one fold. The checkpoint holds the epoch with the best validation
/// F1 (first threshold, selection class), ties keeping the earlier epoch;
/// without validation videos it holds the last epoch.
pub fn train_fold(split: &DatasetSplit, data: &Dataset, model_config: &ModelConfig, config: &TrainConfig) -> Result<Checkpoint> {
    train_fold_with(split, data, model_config, config, |_| {})
}

/// [`train_fold`] with a callback after every epoch.
pub fn train_fold_with(
    split: &DatasetSplit,
    data: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Checkpoint> {
    config.validate()?;
    model_config.validate()?;
    if split.train_ids.is_empty() {
        return Err(GebdError::Config(format!("fold {} has no training videos", split.fold_index)));
    }
    let train = data.subset(&split.train_ids)?;
    let val = data.subset(&split.val_ids)?;
    let in_dim = train.videos()[0].dim();
    if let Some(v) = train.videos().iter().chain(val.videos()).find(|v| v.dim() != in_dim) {
        return Err(GebdError::Shape(format!("video {} has D = {}, expected {in_dim}", v.video_id, v.dim())));
    }

    let use_contrastive = config.loss_weights.lambda_contra > 0.0;
    let examples = train
        .videos()
        .iter()
        .map(|v| {
            let labels = train.labels(&v.video_id)?;
            let masks = if use_contrastive { Some(class_masks(&labels, config.local_range)?) } else { None };
            Ok(Example { features: v.features_f64(), labels, masks })
        })
        .collect::<Result<Vec<_>>>()?;

    let (model, mut store) = GebdModel::build(in_dim, model_config, config.seed)?;
    let mut optimizer = AdamW::new(config.optimizer(), &store);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut contra_sum) = (0.0, 0.0);
        for chunk in order.chunks(config.videos_per_step) {
            let mut acc: Vec<Option<Array2<f64>>> = vec![None; store.len()];
            for &i in chunk {
                let ex = &examples[i];
                let mut g = Graph::with_params(&store);
                let out = model.forward(&mut g, ex.features.clone(), ex.masks.as_ref())?;
                let loss = model.loss(&mut g, &out, &ex.labels, &config.loss_weights, config.aux_pass_bce)?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(GebdError::Divergence { epoch, step, loss: value });
                }
                loss_sum += value;
                contra_sum += out.contrastive.map_or(0.0, |c| g.scalar(c));
                for (slot, grad) in acc.iter_mut().zip(g.backward(loss).into_param_grads()) {
                    match (slot.as_mut(), grad) {
                        (Some(a), Some(gr)) => *a += &gr,
                        (None, Some(gr)) => *slot = Some(gr),
                        _ => {}
                    }
                }
            }
            if chunk.len() > 1 {
                let inv = 1.0 / chunk.len() as f64;
                acc.iter_mut().flatten().for_each(|a| *a *= inv);
            }
            if let Some(max_norm) = config.grad_clip {
                clip_grad_norm(&mut acc, max_norm);
            }
            optimizer.step(&mut store, &acc);
            step += 1;
        }

        let val_f1 = if val.is_empty() {
            Vec::new()
        } else {
            let report = evaluate_model(&model, &store, &val, &config.peak, &config.eval_rel_dis, config.selection_class)?;
            report.mean.iter().map(|p| p.f1).collect()
        };
        let n = examples.len() as f64;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            contrastive_loss: contra_sum / n,
            val_f1: val_f1.clone(),
        };
        on_epoch(&metrics);
        history.push(metrics);

        let score = val_f1.first().copied().unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((_, s, _)) => score > *s || val.is_empty(),
        };
        if improved {
            best = Some((epoch, score, store.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if config.patience > 0 && epoch - best_epoch >= config.patience {
            break;
        }
    }

    let (best_epoch, _, params) = best.expect("at least one epoch ran");
    let mut peak = config.peak;
    if config.tune_threshold && !val.is_empty() {
        peak = tune_threshold(&model, &params, &val, config)?;
    }
    Ok(Checkpoint {
        model_config: model_config.clone(),
        in_dim,
        train_config: config.clone(),
        fold_index: split.fold_index,
        history,
        best_epoch,
        peak,
        params,
    })
}

/// Grid search over thresholds 0.05, 0.10, ..., 0.95; ties keep the lower
/// threshold.
fn tune_threshold(model: &GebdModel, store: &ParamStore, val: &Dataset, config: &TrainConfig) -> Result<PeakConfig> {
    let probs = val
        .videos()
        .iter()
        .map(|v| model.predict(store, v.features_f64().view()).map(|p| p.p_final))
        .collect::<Result<Vec<_>>>()?;
    let mut best = (f64::NEG_INFINITY, config.peak);
    for step in 1..20 {
        let peak = PeakConfig { k: config.peak.k, threshold: step as f64 * 0.05 };
        let f1 = evaluate_probabilities(val, &probs, &peak, &config.eval_rel_dis[..1], config.selection_class)?.mean_f1(0);
        if f1 > best.0 {
            best = (f1, peak);
        }
    }
    Ok(best.1)
}

/// Free-function form of [`Checkpoint::predict`].
pub fn predict(ckpt: &Checkpoint, features: &FeatureSequence) -> Result<PassPredictions> {
    ckpt.predict(features)
}

/// Elementwise mean of same-shaped probability arrays.
pub fn ensemble_average(predictions: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    let first = predictions.first().ok_or_else(|| GebdError::Input("cannot average zero predictions".into()))?;
    let mut sum = first.to_owned();
    for p in &predictions[1..] {
        if p.dim() != sum.dim() {
            return Err(GebdError::Input(format!("prediction shapes differ: {:?} vs {:?}", sum.dim(), p.dim())));
        }
        sum += p;
    }
    Ok(sum / predictions.len() as f64)
}

/// Peak settings for an ensemble: the members' mean threshold. All members
/// must use the same `k`.
pub fn ensemble_peak(peaks: &[PeakConfig]) -> Result<PeakConfig> {
    let first = peaks.first().ok_or_else(|| GebdError::Input("cannot combine zero peak settings".into()))?;
    if let Some(p) = peaks.iter().find(|p| p.k != first.k) {
        return Err(GebdError::Input(format!("peak window differs between members: {} vs {}", first.k, p.k)));
    }
    let threshold = peaks.iter().map(|p| p.threshold).sum::<f64>() / peaks.len() as f64;
    Ok(PeakConfig { k: first.k, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, make_folds, SynthConfig};
    use crate::heads::{DecoderConfig, DirectHeadConfig};
    use crate::encoder::EncoderConfig;
    use crate::model::PassMode;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig { d_enc: 4, transformer_layers: 1, transformer_heads: 2, ..Default::default() },
            simsiam_hidden: 4,
            decoder: DecoderConfig { c_decoder: 4, stage_widths: vec![4, 4, 4, 4], blocks_per_stage: 1 },
            tsm_head_hidden: 4,
            direct_head: DirectHeadConfig { layers: 1, heads: 2, ff_mult: 1 },
            passes: PassMode::Both,
            stop_gradient: true,
        }
    }

    fn tiny_data(n: usize) -> Dataset {
        let cfg = SynthConfig { min_len: 12, max_len: 16, dim: 8, max_segments: 2, min_segment_len: 4, ..Default::default() };
        let (v, a) = generate_synthetic_dataset(n, 3, &cfg).unwrap();
        Dataset::new(v, a).unwrap()
    }

    fn tiny_run(epochs: usize) -> (Dataset, Checkpoint) {
        let data = tiny_data(5);
        let split = make_folds(&data.ids(), 5, 0).unwrap().remove(0);
        let cfg = TrainConfig { epochs, ..Default::default() };
        let ckpt = train_fold(&split, &data, &tiny_model(), &cfg).unwrap();
        (data, ckpt)
    }

    #[test]
    fn tiny_run_bookkeeping() {
        let (_, ckpt) = tiny_run(2);
        assert_eq!(ckpt.history.len(), 2);
        assert!(ckpt.best_epoch < 2);
        let best = ckpt.history[ckpt.best_epoch].val_f1[0];
        assert!(ckpt.history.iter().all(|m| m.val_f1[0] <= best));
        assert!(ckpt.history.iter().all(|m| m.train_loss.is_finite()));
    }

    #[test]
    fn ensemble_peak_averages_thresholds() {
        let p = |k, threshold| PeakConfig { k, threshold };
        assert_eq!(ensemble_peak(&[p(1, 0.2), p(1, 0.4)]).unwrap(), p(1, 0.30000000000000004));
        assert_eq!(ensemble_peak(&[p(2, 0.5)]).unwrap(), p(2, 0.5));
        assert!(ensemble_peak(&[p(1, 0.2), p(2, 0.2)]).is_err());
        assert!(ensemble_peak(&[]).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let (_, a) = tiny_run(2);
        let (_, b) = tiny_run(2);
        assert_eq!(a.params, b.params);
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap().as_slice());
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let (data, ckpt) = tiny_run(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gebc");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let v = &data.videos()[0];
        let (p0, p1) = (ckpt.predict(v).unwrap(), back.predict(v).unwrap());
        assert_eq!(p0, p1);
        assert_eq!(p0, predict(&ckpt, v).unwrap());

        let jsonl = dir.path().join("m.jsonl");
        ckpt.write_metrics_jsonl(&jsonl).unwrap();
        assert_eq!(fs::read_to_string(&jsonl).unwrap().lines().count(), 1);

        let bytes = ckpt.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(GebdError::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(GebdError::Format { offset: 0, .. })));
    }

    #[test]
    fn predict_rejects_wrong_dimension() {
        let (_, ckpt) = tiny_run(1);
        let seq = FeatureSequence { video_id: "x".into(), snippet_rate: 1.0, duration: 17.0, features: Array2::zeros((17, 3)) };
        assert!(matches!(ckpt.predict(&seq), Err(GebdError::Shape(_))));
        let ok = FeatureSequence { features: Array2::zeros((17, 8)), ..seq };
        assert_eq!(ckpt.predict(&ok).unwrap().p_final.dim(), (3, 17));
    }

    #[test]
    fn empty_train_split_is_config_error() {
        let data = tiny_data(2);
        let split = DatasetSplit { fold_index: 0, train_ids: vec![], val_ids: data.ids() };
        let r = train_fold(&split, &data, &tiny_model(), &TrainConfig::default());
        assert!(matches!(r, Err(GebdError::Config(_))));
    }

    #[test]
    fn divergence_names_step() {
        let data = tiny_data(3);
        let split = make_folds(&data.ids(), 3, 0).unwrap().remove(0);
        let cfg = TrainConfig { epochs: 1, loss_weights: LossWeights { action: f64::MAX, shot: f64::MAX, whole: f64::MAX, lambda_contra: 0.0 }, ..Default::default() };
        match train_fold(&split, &data, &tiny_model(), &cfg) {
            Err(GebdError::Divergence { epoch: 0, step: 0, loss }) => assert!(!loss.is_finite()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn ensemble_examples() {
        let a = Array2::from_elem((3, 4), 0.2);
        let b = Array2::from_elem((3, 4), 0.6);
        assert_eq!(ensemble_average(&[a.view()]).unwrap(), a);
        let m = ensemble_average(&[a.view(), b.view()]).unwrap();
        assert!(m.iter().all(|v| (v - 0.4).abs() < 1e-15));
        assert_eq!(ensemble_average(&[b.view(), b.view(), b.view()]).unwrap(), b);
        assert!(matches!(ensemble_average(&[]), Err(GebdError::Input(_))));
        let c = Array2::zeros((3, 5));
        assert!(ensemble_average(&[a.view(), c.view()]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { eval_rel_dis: vec![], ..Default::default() }.validate().is_err());
        let json = serde_json::to_string(&TrainConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), TrainConfig::default());
    }
}
