//! Prediction heads.
//!
//! The TSM pass runs a residual 2-D network over the stacked similarity
//! matrices, keeps the diagonal, and classifies it with a shallow temporal
//! convolution stack. The direct pass concatenates the encoder streams and
//! classifies them with a transformer. A learned per-class convex weight
//! blends the two.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Graph, Var};
use crate::data::{BoundaryClass, LabelSeries};
use crate::encoder::{EncodedBank, NUM_STREAMS};
use crate::error::{shape_err, GebdError, Result};
use crate::layers::{Conv1d, Conv2d, Linear, TransformerEncoder};
use crate::params::{Initializer, ParamStore};
use crate::similarity::SimilarityStack;

/// Probability clamp used inside the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub c_decoder: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { c_decoder: 64, stage_widths: vec![32, 32, 64, 64], blocks_per_stage: 2 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.len() != 4 || self.stage_widths.contains(&0) {
            return Err(GebdError::Config(format!("need 4 positive stage widths, got {:?}", self.stage_widths)));
        }
        if self.c_decoder == 0 || self.blocks_per_stage == 0 {
            return Err(GebdError::Config("decoder sizes must be positive".into()));
        }
        Ok(())
    }

    /// Number of 3x3 convolutions on the longest path.
    pub fn depth(&self) -> usize {
        1 + 2 * self.blocks_per_stage * self.stage_widths.len()
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl BasicBlock {
    fn forward(&self, g: &mut Graph, x: Var, l: usize) -> Var {
        let h = self.conv1.forward(g, x, l, l);
        let h = g.relu(h);
        let h = self.conv2.forward(g, h, l, l);
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(g, x, l, l),
            None => x,
        };
        let y = g.add(h, skip);
        g.relu(y)
    }
}

/// ResNet-style stack with every stride set to 1 and no pooling, so the
/// `L x L` extent survives to the output.
#[derive(Debug, Clone)]
pub struct ResidualDecoder {
    pub in_channels: usize,
    pub out_channels: usize,
    stem: Conv2d,
    blocks: Vec<BasicBlock>,
    head: Conv2d,
}

impl ResidualDecoder {
    pub fn new(init: &mut Initializer, in_channels: usize, config: &DecoderConfig) -> Result<Self> {
        config.validate()?;
        let w0 = config.stage_widths[0];
        let stem = Conv2d::new(init, "decoder.stem", in_channels, w0, 3);
        let mut blocks = Vec::new();
        let mut width = w0;
        for (s, &w) in config.stage_widths.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let name = format!("decoder.stage{s}.block{b}");
                blocks.push(BasicBlock {
                    conv1: Conv2d::new(init, &format!("{name}.conv1"), width, w, 3),
                    conv2: Conv2d::new(init, &format!("{name}.conv2"), w, w, 3),
                    shortcut: (width != w).then(|| Conv2d::new(init, &format!("{name}.shortcut"), width, w, 1)),
                });
                width = w;
            }
        }
        let head = Conv2d::new(init, "decoder.head", width, config.c_decoder, 1);
        Ok(Self { in_channels, out_channels: config.c_decoder, stem, blocks, head })
    }

    /// `x` is the channels-last `[l * l, C_in]` map; output `[l * l, c_decoder]`.
    pub fn forward(&self, g: &mut Graph, x: Var, l: usize) -> Var {
        let h = self.stem.forward(g, x, l, l);
        let mut h = g.relu(h);
        for block in &self.blocks {
            h = block.forward(g, h, l);
        }
        self.head.forward(g, h, l, l)
    }
}

/// Runs the decoder on a similarity stack; returns `c_decoder x L x L`.
pub fn decode_tsm(stack: &SimilarityStack, decoder: &ResidualDecoder, store: &ParamStore) -> Result<Array3<f64>> {
    let (c, l, l2) = stack.tsm.dim();
    if c != decoder.in_channels || l != l2 {
        return shape_err(format!("decoder expects {} x L x L, got {c} x {l} x {l2}", decoder.in_channels));
    }
    let mut g = Graph::with_params(store);
    let x = g.constant(stack.to_channels_last());
    let y = decoder.forward(&mut g, x, l);
    let out = g.value(y);
    Ok(Array3::from_shape_fn((decoder.out_channels, l, l), |(ch, i, j)| out[[i * l + j, ch]]))
}

/// `out[c][k] = t[c][k][k]`.
pub fn gather_diagonal(t: &Array3<f64>) -> Result<Array2<f64>> {
    let (c, h, w) = t.dim();
    if h != w {
        return shape_err(format!("gather_diagonal needs square maps, got {h} x {w}"));
    }
    Ok(Array2::from_shape_fn((c, h), |(ch, k)| t[[ch, k, k]]))
}

/// Two temporal convolutions (kernel 3) ending in three logits per snippet.
#[derive(Debug, Clone)]
pub struct TsmClassifier {
    pub in_channels: usize,
    conv1: Conv1d,
    conv2: Conv1d,
}

impl TsmClassifier {
    pub fn new(init: &mut Initializer, in_channels: usize, hidden: usize) -> Self {
        Self {
            in_channels,
            conv1: Conv1d::new(init, "tsm_head.conv1", in_channels, hidden, 3),
            conv2: Conv1d::new(init, "tsm_head.conv2", hidden, 3, 3),
        }
    }

    /// `[L, C]` diagonal features to `[L, 3]` logits.
    pub fn logits(&self, g: &mut Graph, diag: Var) -> Var {
        let h = self.conv1.forward(g, diag);
        let h = g.relu(h);
        self.conv2.forward(g, h)
    }
}

/// `diag` is `c_decoder x L`; returns `3 x L` probabilities.
pub fn tsm_classify(diag: ArrayView2<f64>, head: &TsmClassifier, store: &ParamStore) -> Result<Array2<f64>> {
    if diag.nrows() != head.in_channels {
        return shape_err(format!("tsm head expects {} channels, got {}", head.in_channels, diag.nrows()));
    }
    let mut g = Graph::with_params(store);
    let x = g.constant(diag.t().to_owned());
    let z = head.logits(&mut g, x);
    let p = g.sigmoid(z);
    Ok(g.value(p).t().to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirectHeadConfig {
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of the model width.
    pub ff_mult: usize,
}

impl Default for DirectHeadConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 4, ff_mult: 1 }
    }
}

/// Transformer over the concatenated streams, then a per-class logistic
/// readout.
#[derive(Debug, Clone)]
pub struct DirectClassifier {
    pub width: usize,
    body: TransformerEncoder,
    out: Linear,
}

impl DirectClassifier {
    pub fn new(init: &mut Initializer, width: usize, config: &DirectHeadConfig) -> Result<Self> {
        if config.layers == 0 || config.heads == 0 || !width.is_multiple_of(config.heads) || config.ff_mult == 0 {
            return Err(GebdError::Config(format!("direct head {config:?} incompatible with width {width}")));
        }
        Ok(Self {
            width,
            body: TransformerEncoder::new(init, "direct_head", width, config.layers, config.heads, width * config.ff_mult),
            out: Linear::new(init, "direct_head.out", width, 3),
        })
    }

    /// Streams `[L, d_enc]` each, concatenated to `[L, 12 d_enc]`; `[L, 3]` logits.
    pub fn logits(&self, g: &mut Graph, streams: &[Var]) -> Var {
        let x = g.concat_cols(streams);
        let h = self.body.forward(g, x);
        self.out.forward(g, h)
    }
}

/// `3 x L` probabilities from the direct pass.
pub fn direct_classify(bank: &EncodedBank, head: &DirectClassifier, store: &ParamStore) -> Result<Array2<f64>> {
    if bank.streams.len() != NUM_STREAMS {
        return shape_err(format!("expected {NUM_STREAMS} streams, got {}", bank.streams.len()));
    }
    let width: usize = bank.streams.iter().map(Array2::ncols).sum();
    if width != head.width {
        return shape_err(format!("direct head expects width {}, got {width}", head.width));
    }
    let mut g = Graph::with_params(store);
    let vars: Vec<Var> = bank.streams.iter().map(|s| g.constant(s.clone())).collect();
    let z = head.logits(&mut g, &vars);
    let p = g.sigmoid(z);
    Ok(g.value(p).t().to_owned())
}

/// Probability series of both passes and their blend, each `3 x L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PassPredictions {
    pub p_tsm: Option<Array2<f64>>,
    pub p_direct: Option<Array2<f64>>,
    pub p_final: Array2<f64>,
    /// Per-class weight of the TSM pass, in (0, 1).
    pub alpha: Option<[f64; 3]>,
}

impl PassPredictions {
    pub fn len(&self) -> usize {
        self.p_final.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class(&self, class: BoundaryClass) -> ndarray::ArrayView1<'_, f64> {
        self.p_final.row(class.index())
    }
}

/// `p_final[c] = a[c] p_tsm[c] + (1 - a[c]) p_direct[c]` with
/// `a = logistic(raw_alpha)`.
pub fn combine(p_tsm: &Array2<f64>, p_direct: &Array2<f64>, raw_alpha: [f64; 3]) -> Result<PassPredictions> {
    if p_tsm.dim() != p_direct.dim() || p_tsm.nrows() != 3 {
        return shape_err(format!("cannot combine {:?} with {:?}", p_tsm.dim(), p_direct.dim()));
    }
    let alpha = raw_alpha.map(sigmoid);
    let a = Array1::from(alpha.to_vec()).insert_axis(Axis(1));
    let p_final = p_direct + &(&(p_tsm - p_direct) * &a);
    Ok(PassPredictions { p_tsm: Some(p_tsm.clone()), p_direct: Some(p_direct.clone()), p_final, alpha: Some(alpha) })
}

/// Graph form of [`combine`] on `[L, 3]` probabilities and a `[1, 3]` raw
/// weight.
pub fn combine_graph(g: &mut Graph, p_tsm: Var, p_direct: Var, raw_alpha: Var) -> Var {
    let alpha = g.sigmoid(raw_alpha);
    let diff = g.sub(p_tsm, p_direct);
    let scaled = g.mul_row(diff, alpha);
    g.add(p_direct, scaled)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub action: f64,
    pub shot: f64,
    pub whole: f64,
    pub lambda_contra: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { action: 1.0, shot: 1.0, whole: 1.0, lambda_contra: 1.0 }
    }
}

impl LossWeights {
    pub fn class_weight(&self, class: BoundaryClass) -> f64 {
        match class {
            BoundaryClass::Action => self.action,
            BoundaryClass::Shot => self.shot,
            BoundaryClass::Whole => self.whole,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.action, self.shot, self.whole, self.lambda_contra].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(GebdError::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy with the probability clamp.
pub fn bce(p: &[f64], y: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            let q = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(yi * q.ln() + (1.0 - yi) * (1.0 - q).ln())
        })
        .sum::<f64>()
        / n
}

/// `sum_c w_c BCE(p_final[c], y[c]) + lambda * l_contra`.
pub fn total_loss(preds: &PassPredictions, labels: &LabelSeries, l_contra: f64, weights: &LossWeights) -> Result<f64> {
    if preds.p_final.dim() != labels.labels.dim() {
        return shape_err(format!("predictions {:?} vs labels {:?}", preds.p_final.dim(), labels.labels.dim()));
    }
    let mut total = weights.lambda_contra * l_contra;
    for class in BoundaryClass::ALL {
        let p = preds.p_final.row(class.index()).to_vec();
        let y = labels.labels.row(class.index()).to_vec();
        total += weights.class_weight(class) * bce(&p, &y);
    }
    Ok(total)
}

/// Weighted per-class BCE of `[L, 3]` probabilities against `3 x L` labels.
pub fn bce_graph(g: &mut Graph, probs: Var, labels: &Array2<f64>, weights: &LossWeights) -> Option<Var> {
    let mut total: Option<Var> = None;
    for class in BoundaryClass::ALL {
        let w = weights.class_weight(class);
        if w == 0.0 {
            continue;
        }
        let c = class.index();
        let col = g.slice_cols(probs, c, 1);
        let y = labels.row(c).to_owned().insert_axis(Axis(1));
        let term = g.bce(col, y, BCE_EPS);
        let term = g.scale(term, w);
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_decoder(c_decoder: usize) -> (ParamStore, ResidualDecoder) {
        let mut store = ParamStore::new();
        let cfg = DecoderConfig { c_decoder, stage_widths: vec![4, 4, 8, 8], blocks_per_stage: 1 };
        let dec = {
            let mut init = Initializer::new(&mut store, 0);
            ResidualDecoder::new(&mut init, 12, &cfg).unwrap()
        };
        (store, dec)
    }

    fn random_stack(rng: &mut ChaCha8Rng, l: usize) -> SimilarityStack {
        SimilarityStack { tsm: Array3::from_shape_fn((12, l, l), |_| rng.gen_range(-1.0..1.0)), degenerate: false }
    }

    #[test]
    fn decoder_preserves_extent() {
        let (store, dec) = small_decoder(16);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = decode_tsm(&random_stack(&mut rng, 24), &dec, &store).unwrap();
        assert_eq!(out.dim(), (16, 24, 24));
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_decoder_shape() {
        let mut store = ParamStore::new();
        let dec = {
            let mut init = Initializer::new(&mut store, 0);
            ResidualDecoder::new(&mut init, 12, &DecoderConfig::default()).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = decode_tsm(&random_stack(&mut rng, 10), &dec, &store).unwrap();
        assert_eq!(out.dim(), (64, 10, 10));
    }

    #[test]
    fn zero_input_gives_finite_output() {
        let (store, dec) = small_decoder(8);
        let stack = SimilarityStack { tsm: Array3::zeros((12, 6, 6)), degenerate: false };
        let out = decode_tsm(&stack, &dec, &store).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn output_depends_on_every_channel() {
        let (store, dec) = small_decoder(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = random_stack(&mut rng, 8);
        let base = decode_tsm(&stack, &dec, &store).unwrap();
        for c in 0..12 {
            let mut ablated = stack.clone();
            ablated.tsm.index_axis_mut(Axis(0), c).fill(0.0);
            let out = decode_tsm(&ablated, &dec, &store).unwrap();
            assert_ne!(out, base, "channel {c} had no effect");
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let (store, dec) = small_decoder(8);
        let stack = SimilarityStack { tsm: Array3::zeros((11, 5, 5)), degenerate: false };
        assert!(matches!(decode_tsm(&stack, &dec, &store), Err(GebdError::Shape(_))));
    }

    #[test]
    fn diagonal_examples() {
        let eye = Array3::from_shape_fn((2, 4, 4), |(_, i, j)| f64::from(u8::from(i == j)));
        assert_eq!(gather_diagonal(&eye).unwrap(), Array2::<f64>::ones((2, 4)));
        let t = Array3::from_shape_fn((3, 5, 5), |(_, i, j)| (i + j) as f64);
        let d = gather_diagonal(&t).unwrap();
        for c in 0..3 {
            for k in 0..5 {
                assert_eq!(d[[c, k]], 2.0 * k as f64);
            }
        }
        let single = Array3::from_elem((1, 1, 1), 4.5);
        assert_eq!(gather_diagonal(&single).unwrap(), array![[4.5]]);
        assert!(matches!(gather_diagonal(&Array3::zeros((1, 2, 3))), Err(GebdError::Shape(_))));
    }

    #[test]
    fn diagonal_matches_loop_oracle_and_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let c = rng.gen_range(1..5);
            let l = rng.gen_range(1..9);
            let t = Array3::from_shape_fn((c, l, l), |_| rng.gen_range(-5.0..5.0));
            let d = gather_diagonal(&t).unwrap();
            let mut g = Graph::new();
            let flat = Array2::from_shape_fn((l * l, c), |(p, ch)| t[[ch, p / l, p % l]]);
            let x = g.constant(flat);
            let gd = g.gather_diag(x, l);
            for ch in 0..c {
                for k in 0..l {
                    assert_eq!(d[[ch, k]], t[[ch, k, k]]);
                    assert_eq!(g.value(gd)[[k, ch]], t[[ch, k, k]]);
                }
            }
        }
    }

    #[test]
    fn tsm_classifier_range_and_shape() {
        let mut store = ParamStore::new();
        let head = {
            let mut init = Initializer::new(&mut store, 5);
            TsmClassifier::new(&mut init, 16, 8)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let diag = Array2::from_shape_fn((16, 30), |_| rng.gen_range(-3.0..3.0));
        let p = tsm_classify(diag.view(), &head, &store).unwrap();
        assert_eq!(p.dim(), (3, 30));
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(tsm_classify(Array2::zeros((15, 4)).view(), &head, &store).is_err());

        // Zeroed weights and biases: logits 0, probabilities 0.5.
        for id in 0..store.len() {
            store.value_mut(id).fill(0.0);
        }
        let p = tsm_classify(diag.view(), &head, &store).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    fn direct_head(d_enc: usize) -> (ParamStore, DirectClassifier) {
        let mut store = ParamStore::new();
        let head = {
            let mut init = Initializer::new(&mut store, 6);
            DirectClassifier::new(&mut init, 12 * d_enc, &DirectHeadConfig::default()).unwrap()
        };
        (store, head)
    }

    fn bank(rng: &mut ChaCha8Rng, l: usize, d: usize) -> EncodedBank {
        EncodedBank {
            streams: (0..12).map(|_| Array2::from_shape_fn((l, d), |_| rng.gen_range(-1.0..1.0))).collect(),
            stream_meta: crate::encoder::stream_meta(&crate::encoder::ModuleKind::LADDER),
        }
    }

    #[test]
    fn direct_head_width_and_range() {
        let (store, head) = direct_head(32);
        assert_eq!(head.width, 384);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = direct_classify(&bank(&mut rng, 9, 32), &head, &store).unwrap();
        assert_eq!(p.dim(), (3, 9));
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(direct_classify(&bank(&mut rng, 9, 8), &head, &store).is_err());
    }

    #[test]
    fn direct_head_is_position_aware() {
        let (store, head) = direct_head(4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = bank(&mut rng, 10, 4);
        let p = direct_classify(&b, &head, &store).unwrap();
        let order: Vec<usize> = (0..10).rev().collect();
        let permuted = EncodedBank {
            streams: b.streams.iter().map(|s| s.select(Axis(0), &order)).collect(),
            stream_meta: b.stream_meta.clone(),
        };
        let pp = direct_classify(&permuted, &head, &store).unwrap();
        let unpermuted = pp.select(Axis(1), &order);
        let max_diff = p.iter().zip(unpermuted.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_diff > 1e-6, "outputs commute with permutation");
    }

    #[test]
    fn combine_examples() {
        let pt = Array2::from_elem((3, 4), 0.2);
        let pd = Array2::from_elem((3, 4), 0.6);
        let c = combine(&pt, &pd, [0.0; 3]).unwrap();
        assert_eq!(c.alpha, Some([0.5; 3]));
        assert!(c.p_final.iter().all(|&v| (v - 0.4).abs() < 1e-15));
        let sat = combine(&pt, &pd, [60.0; 3]).unwrap();
        assert!(sat.p_final.iter().all(|&v| (v - 0.2).abs() < 1e-12));
        let same = combine(&pd, &pd, [1.3, -2.0, 0.4]).unwrap();
        assert!(same.p_final.iter().zip(pd.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(combine(&pt, &Array2::zeros((3, 5)), [0.0; 3]).is_err());
    }

    #[test]
    fn combine_is_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let pt = Array2::from_shape_fn((3, 6), |_| rng.gen_range(0.0..1.0));
            let pd = Array2::from_shape_fn((3, 6), |_| rng.gen_range(0.0..1.0));
            let raw = [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)];
            let c = combine(&pt, &pd, raw).unwrap();
            for ((&f, &a), &b) in c.p_final.iter().zip(pt.iter()).zip(pd.iter()) {
                assert!(f >= a.min(b) - 1e-15 && f <= a.max(b) + 1e-15);
            }
            let mut g = Graph::new();
            let (a, b) = (g.constant(pt.t().to_owned()), g.constant(pd.t().to_owned()));
            let r = g.constant(Array2::from_shape_vec((1, 3), raw.to_vec()).unwrap());
            let f = combine_graph(&mut g, a, b, r);
            for (x, y) in g.value(f).t().iter().zip(c.p_final.iter()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    fn labels(l: usize, ones: &[usize]) -> LabelSeries {
        let mut y = Array2::zeros((3, l));
        for &k in ones {
            for c in 0..3 {
                y[[c, k]] = 1.0;
            }
        }
        LabelSeries { labels: y }
    }

    fn preds(p: Array2<f64>) -> PassPredictions {
        PassPredictions { p_tsm: None, p_direct: None, p_final: p, alpha: None }
    }

    #[test]
    fn loss_examples() {
        let y = labels(6, &[2]);
        let perfect = preds(y.labels.clone());
        let l = total_loss(&perfect, &y, 0.0, &LossWeights::default()).unwrap();
        assert!(l >= 0.0 && l <= 3.0 * -(1.0 - BCE_EPS).ln() + 1e-15);

        let half = preds(Array2::from_elem((3, 6), 0.5));
        let l = total_loss(&half, &y, 0.0, &LossWeights::default()).unwrap();
        assert!((l - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);

        let zero_bce = LossWeights { action: 0.0, shot: 0.0, whole: 0.0, lambda_contra: 1.0 };
        let l = total_loss(&half, &y, -0.8, &zero_bce).unwrap();
        assert!((l + 0.8).abs() < 1e-15);

        assert!(total_loss(&half, &labels(5, &[]), 0.0, &LossWeights::default()).is_err());
    }

    #[test]
    fn graph_bce_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = Array2::from_shape_fn((3, 7), |_| rng.gen_range(0.01..0.99));
        let y = labels(7, &[1, 5]);
        let w = LossWeights { action: 0.5, shot: 2.0, whole: 1.0, lambda_contra: 0.0 };
        let plain = total_loss(&preds(p.clone()), &y, 0.0, &w).unwrap();
        let mut g = Graph::new();
        let pv = g.constant(p.t().to_owned());
        let l = bce_graph(&mut g, pv, &y.labels, &w).unwrap();
        assert!((g.scalar(l) - plain).abs() < 1e-12);
    }
}
