//! Bank of parallel temporal encoders: four module kinds for each of the
//! three boundary classes, twelve streams in all. Streams are kept apart;
//! nothing here concatenates them.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::BoundaryClass;
use crate::error::{GebdError, Result};
use crate::layers::{Conv1d, Linear, TransformerEncoder};
use crate::params::{Initializer, ParamStore};

pub const NUM_KINDS: usize = 4;
pub const NUM_STREAMS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    /// Kernel-1 projection.
    Pointwise,
    /// Kernel-3 convolution.
    SmallConv,
    /// Kernel-7 convolution.
    MidConv,
    /// Self-attention over the whole sequence.
    Transformer,
}

impl ModuleKind {
    pub const LADDER: [ModuleKind; NUM_KINDS] =
        [ModuleKind::Pointwise, ModuleKind::SmallConv, ModuleKind::MidConv, ModuleKind::Transformer];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleKind::Pointwise => "pointwise",
            ModuleKind::SmallConv => "small_conv",
            ModuleKind::MidConv => "mid_conv",
            ModuleKind::Transformer => "transformer",
        }
    }

    fn kernel(self) -> Option<usize> {
        match self {
            ModuleKind::Pointwise => Some(1),
            ModuleKind::SmallConv => Some(3),
            ModuleKind::MidConv => Some(7),
            ModuleKind::Transformer => None,
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleKind {
    type Err = GebdError;

    fn from_str(s: &str) -> Result<Self> {
        ModuleKind::LADDER
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GebdError::Config(format!("unknown module kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceptiveField {
    Finite(usize),
    Unbounded,
}

/// Number of input snippets one output snippet can see.
pub fn receptive_field(kind: ModuleKind) -> ReceptiveField {
    match kind.kernel() {
        Some(k) => ReceptiveField::Finite(k),
        None => ReceptiveField::Unbounded,
    }
}

/// [`receptive_field`] for a kind given by name.
pub fn receptive_field_of(kind: &str) -> Result<ReceptiveField> {
    Ok(receptive_field(kind.parse()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_enc: usize,
    pub module_kinds: Vec<ModuleKind>,
    pub transformer_layers: usize,
    pub transformer_heads: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { d_enc: 32, module_kinds: ModuleKind::LADDER.to_vec(), transformer_layers: 2, transformer_heads: 4 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.module_kinds.len() != NUM_KINDS {
            return Err(GebdError::Config(format!("expected {NUM_KINDS} module kinds, got {}", self.module_kinds.len())));
        }
        if self.d_enc == 0 || self.transformer_layers == 0 || self.transformer_heads == 0 {
            return Err(GebdError::Config("encoder sizes must be positive".into()));
        }
        if self.module_kinds.contains(&ModuleKind::Transformer) && !self.d_enc.is_multiple_of(self.transformer_heads) {
            return Err(GebdError::Config(format!(
                "d_enc {} not divisible by {} heads",
                self.d_enc, self.transformer_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamMeta {
    pub class: BoundaryClass,
    pub kind: ModuleKind,
}

/// Stream `i` serves class `i / 4` with module kind `i % 4` (class-major).
pub fn stream_meta(kinds: &[ModuleKind]) -> Vec<StreamMeta> {
    BoundaryClass::ALL
        .iter()
        .flat_map(|&class| kinds.iter().map(move |&kind| StreamMeta { class, kind }))
        .collect()
}

#[derive(Debug, Clone)]
enum StreamModule {
    /// Kernel-k convolution, ReLU, kernel-1 convolution.
    Conv { first: Conv1d, second: Conv1d },
    Transformer { proj: Linear, body: TransformerEncoder },
}

impl StreamModule {
    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        match self {
            StreamModule::Conv { first, second } => {
                let h = first.forward(g, x);
                let h = g.relu(h);
                second.forward(g, h)
            }
            StreamModule::Transformer { proj, body } => {
                let h = proj.forward(g, x);
                body.forward(g, h)
            }
        }
    }
}

/// Twelve encoded streams, each `L x d_enc`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBank {
    pub streams: Vec<Array2<f64>>,
    pub stream_meta: Vec<StreamMeta>,
}

impl EncodedBank {
    pub fn len(&self) -> usize {
        self.streams.first().map_or(0, Array2::nrows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct EncoderBank {
    pub in_dim: usize,
    pub d_enc: usize,
    meta: Vec<StreamMeta>,
    modules: Vec<StreamModule>,
}

impl EncoderBank {
    pub fn new(init: &mut Initializer, in_dim: usize, config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let meta = stream_meta(&config.module_kinds);
        let d = config.d_enc;
        let modules = meta
            .iter()
            .map(|m| {
                let name = format!("encoder.{}.{}", m.class, m.kind);
                match m.kind.kernel() {
                    Some(k) => StreamModule::Conv {
                        first: Conv1d::new(init, &format!("{name}.conv"), in_dim, d, k),
                        second: Conv1d::new(init, &format!("{name}.proj"), d, d, 1),
                    },
                    None => StreamModule::Transformer {
                        proj: Linear::new(init, &format!("{name}.input"), in_dim, d),
                        body: TransformerEncoder::new(
                            init,
                            &name,
                            d,
                            config.transformer_layers,
                            config.transformer_heads,
                            2 * d,
                        ),
                    },
                }
            })
            .collect();
        Ok(Self { in_dim, d_enc: d, meta, modules })
    }

    pub fn meta(&self) -> &[StreamMeta] {
        &self.meta
    }

    /// Graph-level forward: one `[L, d_enc]` node per stream.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Vec<Var> {
        self.modules.iter().map(|m| m.forward(g, x)).collect()
    }

    /// Forward pass without gradient bookkeeping.
    pub fn encode(&self, store: &ParamStore, features: ArrayView2<f64>) -> Result<EncodedBank> {
        let (l, d) = features.dim();
        if d != self.in_dim {
            return Err(GebdError::Shape(format!("encoder expects D = {}, got {d}", self.in_dim)));
        }
        if l < 2 {
            return Err(GebdError::Shape(format!("need at least 2 snippets, got {l}")));
        }
        let mut g = Graph::with_params(store);
        let x = g.constant(features.to_owned());
        let vars = self.forward(&mut g, x);
        Ok(EncodedBank { streams: vars.iter().map(|&v| g.value(v).clone()).collect(), stream_meta: self.meta.clone() })
    }
}
