//! Full network: encoder bank, projection heads, TSM pass, direct pass and
//! their blend.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Graph, Var};
use crate::data::{BoundaryClass, LabelSeries};
use crate::encoder::{EncoderBank, EncoderConfig, NUM_STREAMS};
use crate::error::{shape_err, GebdError, Result};
use crate::heads::{
    bce_graph, combine_graph, DecoderConfig, DirectClassifier, DirectHeadConfig, LossWeights, PassPredictions,
    ResidualDecoder, TsmClassifier,
};
use crate::params::{Initializer, ParamStore};
use crate::similarity::{
    build_contrastive_mask, contrastive_loss_graph, contrastive_matrix, self_similarity, ContrastiveMask, SimSiamHead,
};

/// Which prediction paths are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassMode {
    Direct,
    Tsm,
    #[default]
    Both,
}

impl PassMode {
    pub fn has_tsm(self) -> bool {
        matches!(self, PassMode::Tsm | PassMode::Both)
    }

    pub fn has_direct(self) -> bool {
        matches!(self, PassMode::Direct | PassMode::Both)
    }
}

impl fmt::Display for PassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PassMode::Direct => "direct",
            PassMode::Tsm => "tsm",
            PassMode::Both => "both",
        })
    }
}

impl FromStr for PassMode {
    type Err = GebdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(PassMode::Direct),
            "tsm" => Ok(PassMode::Tsm),
            "both" => Ok(PassMode::Both),
            other => Err(GebdError::Config(format!("unknown pass mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub simsiam_hidden: usize,
    pub decoder: DecoderConfig,
    pub tsm_head_hidden: usize,
    pub direct_head: DirectHeadConfig,
    pub passes: PassMode,
    /// Detach the target branch of the contrastive similarity.
    pub stop_gradient: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            simsiam_hidden: 32,
            decoder: DecoderConfig::default(),
            tsm_head_hidden: 32,
            direct_head: DirectHeadConfig::default(),
            passes: PassMode::Both,
            stop_gradient: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.simsiam_hidden == 0 || self.tsm_head_hidden == 0 {
            return Err(GebdError::Config("head widths must be positive".into()));
        }
        Ok(())
    }
}

/// Graph nodes of one forward pass. Probabilities are `[L, 3]`.
#[derive(Debug, Clone)]
pub struct ForwardGraph {
    pub streams: Vec<Var>,
    pub p_tsm: Option<Var>,
    pub p_direct: Option<Var>,
    pub p_final: Var,
    pub contrastive: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct GebdModel {
    pub config: ModelConfig,
    pub in_dim: usize,
    pub encoder: EncoderBank,
    pub simsiam: Vec<SimSiamHead>,
    pub decoder: Option<ResidualDecoder>,
    pub tsm_head: Option<TsmClassifier>,
    pub direct_head: Option<DirectClassifier>,
    /// Per-class pre-logistic blend weight, `[1, 3]`.
    pub raw_alpha: Option<usize>,
}

impl GebdModel {
    pub fn new(init: &mut Initializer, in_dim: usize, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 {
            return Err(GebdError::Config("feature dimension must be positive".into()));
        }
        let encoder = EncoderBank::new(init, in_dim, &config.encoder)?;
        let d = config.encoder.d_enc;
        let simsiam = encoder
            .meta()
            .iter()
            .map(|m| SimSiamHead::new(init, &format!("simsiam.{}.{}", m.class, m.kind), d, config.simsiam_hidden))
            .collect();
        let (decoder, tsm_head) = if config.passes.has_tsm() {
            let dec = ResidualDecoder::new(init, NUM_STREAMS, &config.decoder)?;
            let head = TsmClassifier::new(init, config.decoder.c_decoder, config.tsm_head_hidden);
            (Some(dec), Some(head))
        } else {
            (None, None)
        };
        let direct_head = if config.passes.has_direct() {
            Some(DirectClassifier::new(init, NUM_STREAMS * d, &config.direct_head)?)
        } else {
            None
        };
        let raw_alpha = (config.passes == PassMode::Both).then(|| init.constant("combine.raw_alpha", (1, 3), 0.0));
        Ok(Self { config: config.clone(), in_dim, encoder, simsiam, decoder, tsm_head, direct_head, raw_alpha })
    }

    /// Builds the model and a freshly initialized parameter store.
    pub fn build(in_dim: usize, config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let model = {
            let mut init = Initializer::new(&mut store, seed);
            Self::new(&mut init, in_dim, config)?
        };
        Ok((model, store))
    }

    fn check_input(&self, features: ArrayView2<f64>) -> Result<()> {
        let (l, d) = features.dim();
        if d != self.in_dim {
            return shape_err(format!("model expects D = {}, got {d}", self.in_dim));
        }
        if l < 2 {
            return shape_err(format!("need at least 2 snippets, got {l}"));
        }
        Ok(())
    }

    /// Builds the forward graph. The contrastive term is added only when
    /// `masks` (indexed by class) is given.
    pub fn forward(&self, g: &mut Graph, features: Array2<f64>, masks: Option<&[ContrastiveMask; 3]>) -> Result<ForwardGraph> {
        self.check_input(features.view())?;
        let l = features.nrows();
        if let Some(m) = masks {
            if m.iter().any(|m| m.len() != l) {
                return shape_err(format!("contrastive masks do not match L = {l}"));
            }
        }
        let x = g.constant(features);
        let streams = self.encoder.forward(g, x);

        let contrastive = match masks {
            Some(masks) => {
                let meta = self.encoder.meta();
                let mats: Vec<Var> = streams
                    .iter()
                    .zip(&self.simsiam)
                    .map(|(&s, head)| contrastive_matrix(g, s, head, self.config.stop_gradient))
                    .collect();
                let per_stream: Vec<&ContrastiveMask> = meta.iter().map(|m| &masks[m.class.index()]).collect();
                contrastive_loss_graph(g, &mats, &per_stream)
            }
            None => None,
        };

        let p_tsm = match (&self.decoder, &self.tsm_head) {
            (Some(dec), Some(head)) => {
                let tsms: Vec<Var> = streams.iter().map(|&s| self_similarity(g, s)).collect();
                let stacked = g.stack_channels(&tsms);
                let decoded = dec.forward(g, stacked, l);
                let diag = g.gather_diag(decoded, l);
                let z = head.logits(g, diag);
                Some(g.sigmoid(z))
            }
            _ => None,
        };
        let p_direct = self.direct_head.as_ref().map(|head| {
            let z = head.logits(g, &streams);
            g.sigmoid(z)
        });
        let p_final = match (p_tsm, p_direct, self.raw_alpha) {
            (Some(t), Some(d), Some(a)) => {
                let a = g.param(a);
                combine_graph(g, t, d, a)
            }
            (Some(t), None, _) => t,
            (None, Some(d), _) => d,
            _ => unreachable!("at least one pass is always built"),
        };
        Ok(ForwardGraph { streams, p_tsm, p_direct, p_final, contrastive })
    }

    /// Weighted BCE on the blended output plus `lambda * L_contra`. With
    /// `aux_pass_bce` the same BCE is also applied to each pass separately.
    pub fn loss(&self, g: &mut Graph, out: &ForwardGraph, labels: &LabelSeries, weights: &LossWeights, aux_pass_bce: bool) -> Result<Var> {
        let l = g.shape(out.p_final).0;
        if labels.len() != l {
            return shape_err(format!("labels have length {}, predictions {l}", labels.len()));
        }
        let mut terms = Vec::new();
        terms.extend(bce_graph(g, out.p_final, &labels.labels, weights));
        if aux_pass_bce && self.config.passes == PassMode::Both {
            for p in [out.p_tsm, out.p_direct].into_iter().flatten() {
                terms.extend(bce_graph(g, p, &labels.labels, weights));
            }
        }
        if let Some(c) = out.contrastive {
            if weights.lambda_contra > 0.0 {
                terms.push(g.scale(c, weights.lambda_contra));
            }
        }
        let mut total = match terms.first() {
            Some(&t) => t,
            None => return Ok(g.constant(Array2::zeros((1, 1)))),
        };
        for &t in &terms[1..] {
            total = g.add(total, t);
        }
        Ok(total)
    }

    /// Inference forward pass; returns `3 x L` series.
    pub fn predict(&self, store: &ParamStore, features: ArrayView2<f64>) -> Result<PassPredictions> {
        let mut g = Graph::with_params(store);
        let out = self.forward(&mut g, features.to_owned(), None)?;
        let take = |v: Var| g.value(v).t().to_owned();
        Ok(PassPredictions {
            p_tsm: out.p_tsm.map(take),
            p_direct: out.p_direct.map(take),
            p_final: take(out.p_final),
            alpha: self.raw_alpha.map(|id| {
                let raw = store.value(id);
                [sigmoid(raw[[0, 0]]), sigmoid(raw[[0, 1]]), sigmoid(raw[[0, 2]])]
            }),
        })
    }

    /// Parameter ids that belong to the encoder bank.
    pub fn encoder_param_ids(&self, store: &ParamStore) -> Vec<usize> {
        (0..store.len()).filter(|&id| store.name(id).starts_with("encoder.")).collect()
    }
}

/// One contrastive mask per class, from the snippet-level labels.
pub fn class_masks(labels: &LabelSeries, local_range: usize) -> Result<[ContrastiveMask; 3]> {
    let build = |c: BoundaryClass| build_contrastive_mask(&labels.indices(c), labels.len(), local_range);
    Ok([build(BoundaryClass::Action)?, build(BoundaryClass::Shot)?, build(BoundaryClass::Whole)?])
}
