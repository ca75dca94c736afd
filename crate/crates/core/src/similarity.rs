//! Pairwise cosine similarity, the stacked self-similarity input of the
//! decoder, the projection head used for the contrastive branch, the ternary
//! sample mask and the masked contrastive loss.

use ndarray::{Array2, Array3, ArrayView2};

use crate::autograd::{row_norms, Graph, Var};
use crate::encoder::{EncodedBank, NUM_STREAMS};
use crate::error::{shape_err, GebdError, Result};
use crate::layers::Linear;
use crate::params::{Initializer, ParamStore};

/// Cosine similarities between all row pairs of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseSimilarity {
    pub matrix: Array2<f64>,
    /// Set when some row had zero norm; its similarities are reported as 0.
    pub degenerate: bool,
}

fn unit_rows(x: ArrayView2<f64>) -> (Array2<f64>, bool) {
    let norms = row_norms(x);
    let mut out = x.to_owned();
    let mut degenerate = false;
    for (mut row, &n) in out.rows_mut().into_iter().zip(norms.iter()) {
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        } else {
            degenerate = true;
        }
    }
    (out, degenerate)
}

pub fn pairwise_similarity(stream: ArrayView2<f64>) -> PairwiseSimilarity {
    let (u, degenerate) = unit_rows(stream);
    let mut matrix = u.dot(&u.t());
    // Exact symmetry and clamping against rounding.
    let l = matrix.nrows();
    for i in 0..l {
        for j in i + 1..l {
            let v = matrix[[i, j]].clamp(-1.0, 1.0);
            matrix[[i, j]] = v;
            matrix[[j, i]] = v;
        }
        matrix[[i, i]] = matrix[[i, i]].clamp(-1.0, 1.0);
    }
    PairwiseSimilarity { matrix, degenerate }
}

/// Twelve-channel self-similarity tensor, `12 x L x L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityStack {
    pub tsm: Array3<f64>,
    pub degenerate: bool,
}

impl SimilarityStack {
    pub fn len(&self) -> usize {
        self.tsm.dim().1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Channels-last layout `[L * L, C]` used by the decoder graph.
    pub fn to_channels_last(&self) -> Array2<f64> {
        let (c, l, _) = self.tsm.dim();
        Array2::from_shape_fn((l * l, c), |(p, ch)| self.tsm[[ch, p / l, p % l]])
    }
}

/// Channel `c` is the self-similarity of stream `c`, in stream order.
pub fn stack_tsm(bank: &EncodedBank) -> Result<SimilarityStack> {
    if bank.streams.len() != NUM_STREAMS {
        return shape_err(format!("expected {NUM_STREAMS} streams, got {}", bank.streams.len()));
    }
    let l = bank.len();
    if bank.streams.iter().any(|s| s.nrows() != l) {
        return shape_err("streams disagree on sequence length");
    }
    let mut tsm = Array3::zeros((NUM_STREAMS, l, l));
    let mut degenerate = false;
    for (c, s) in bank.streams.iter().enumerate() {
        let sim = pairwise_similarity(s.view());
        degenerate |= sim.degenerate;
        tsm.index_axis_mut(ndarray::Axis(0), c).assign(&sim.matrix);
    }
    Ok(SimilarityStack { tsm, degenerate })
}

/// Graph form of the self-similarity of one stream: `[L, L]`.
pub fn self_similarity(g: &mut Graph, stream: Var) -> Var {
    let u = g.normalize_rows(stream);
    g.matmul_t(u, false, u, true)
}

/// Two pointwise layers with a ReLU in between, applied to every snippet.
#[derive(Debug, Clone)]
pub struct SimSiamHead {
    pub dim: usize,
    first: Linear,
    second: Linear,
}

impl SimSiamHead {
    pub fn new(init: &mut Initializer, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            first: Linear::new(init, &format!("{name}.layer1"), dim, hidden),
            second: Linear::new(init, &format!("{name}.layer2"), hidden, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.first.forward(g, x);
        let h = g.relu(h);
        self.second.forward(g, h)
    }
}

pub fn simsiam_project(stream: ArrayView2<f64>, head: &SimSiamHead, store: &ParamStore) -> Result<Array2<f64>> {
    if stream.ncols() != head.dim {
        return shape_err(format!("projection head expects width {}, got {}", head.dim, stream.ncols()));
    }
    let mut g = Graph::with_params(store);
    let x = g.constant(stream.to_owned());
    let y = head.forward(&mut g, x);
    Ok(g.value(y).clone())
}

/// `sim[i][j] = cos(target_i, head(stream)_j)` where the target branch is the
/// stream itself, detached from the backward pass when `stop_gradient`.
pub fn contrastive_matrix(g: &mut Graph, stream: Var, head: &SimSiamHead, stop_gradient: bool) -> Var {
    let target = if stop_gradient { g.detach(stream) } else { stream };
    let projected = head.forward(g, stream);
    let t = g.normalize_rows(target);
    let p = g.normalize_rows(projected);
    g.matmul_t(t, false, p, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskCell {
    Positive,
    Negative,
    Neutral,
}

/// Ternary `L x L` labelling of a similarity matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveMask {
    len: usize,
    local_range: usize,
    boundaries: Vec<usize>,
    cells: Vec<MaskCell>,
}

impl ContrastiveMask {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn local_range(&self) -> usize {
        self.local_range
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn get(&self, i: usize, j: usize) -> MaskCell {
        self.cells[i * self.len + j]
    }

    pub fn count(&self, cell: MaskCell) -> usize {
        self.cells.iter().filter(|&&c| c == cell).count()
    }

    /// Per-cell gradient of this stream's loss term with respect to the
    /// similarity matrix: `1/n` on negatives, `-1/m` on positives, 0
    /// elsewhere. `None` when either sample set is empty.
    pub fn loss_weights(&self) -> Option<Array2<f64>> {
        let m = self.count(MaskCell::Positive);
        let n = self.count(MaskCell::Negative);
        if m == 0 || n == 0 {
            return None;
        }
        let (wp, wn) = (-1.0 / m as f64, 1.0 / n as f64);
        Some(Array2::from_shape_fn((self.len, self.len), |(i, j)| match self.get(i, j) {
            MaskCell::Positive => wp,
            MaskCell::Negative => wn,
            MaskCell::Neutral => 0.0,
        }))
    }

    /// Text rendering: `+` positive, `-` negative, `0` neutral, `#` on the
    /// diagonal at a boundary.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.len * (self.len + 1));
        for i in 0..self.len {
            for j in 0..self.len {
                let ch = if i == j && self.boundaries.binary_search(&i).is_ok() {
                    '#'
                } else {
                    match self.get(i, j) {
                        MaskCell::Positive => '+',
                        MaskCell::Negative => '-',
                        MaskCell::Neutral => '0',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

/// Cells farther apart than `local_range`, on the diagonal, or in a boundary
/// row or column are neutral. Remaining cells are negative when a boundary
/// lies strictly between `i` and `j`, positive otherwise.
pub fn build_contrastive_mask(boundary_indices: &[usize], len: usize, local_range: usize) -> Result<ContrastiveMask> {
    if local_range == 0 {
        return Err(GebdError::Input("local range must be at least 1".into()));
    }
    if let Some(&b) = boundary_indices.iter().find(|&&b| b >= len) {
        return Err(GebdError::Input(format!("boundary index {b} outside [0, {len})")));
    }
    let mut boundaries = boundary_indices.to_vec();
    boundaries.sort_unstable();
    boundaries.dedup();
    let mut is_boundary = vec![false; len];
    for &b in &boundaries {
        is_boundary[b] = true;
    }
    // before[k] = number of boundaries with index < k.
    let mut before = vec![0usize; len + 1];
    for k in 0..len {
        before[k + 1] = before[k] + usize::from(is_boundary[k]);
    }
    let mut cells = vec![MaskCell::Neutral; len * len];
    for i in 0..len {
        if is_boundary[i] {
            continue;
        }
        let hi = (i + local_range).min(len.saturating_sub(1));
        for j in i + 1..=hi {
            if is_boundary[j] {
                continue;
            }
            // Boundaries strictly inside (i, j).
            let between = before[j] - before[i + 1];
            let cell = if between > 0 { MaskCell::Negative } else { MaskCell::Positive };
            cells[i * len + j] = cell;
            cells[j * len + i] = cell;
        }
    }
    Ok(ContrastiveMask { len, local_range, boundaries, cells })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    pub value: f64,
    /// d value / d matrix, one per input matrix.
    pub grads: Vec<Array2<f64>>,
    pub streams_used: usize,
    /// Set when every stream was skipped and the loss defaulted to 0.
    pub degenerate: bool,
}

/// Mean over usable streams of `mean(negative cells) - mean(positive cells)`.
pub fn contrastive_loss(matrices: &[Array2<f64>], masks: &[&ContrastiveMask]) -> Result<ContrastiveLoss> {
    if matrices.len() != masks.len() {
        return shape_err(format!("{} matrices but {} masks", matrices.len(), masks.len()));
    }
    let mut per_stream = Vec::with_capacity(matrices.len());
    for (m, mask) in matrices.iter().zip(masks) {
        if m.dim() != (mask.len(), mask.len()) {
            return shape_err(format!("matrix {:?} does not match mask length {}", m.dim(), mask.len()));
        }
        per_stream.push(mask.loss_weights());
    }
    let used = per_stream.iter().filter(|w| w.is_some()).count();
    if used == 0 {
        return Ok(ContrastiveLoss {
            value: 0.0,
            grads: matrices.iter().map(|m| Array2::zeros(m.dim())).collect(),
            streams_used: 0,
            degenerate: true,
        });
    }
    let scale = 1.0 / used as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(matrices.len());
    for (m, w) in matrices.iter().zip(per_stream) {
        match w {
            Some(w) => {
                value += (&w * m).sum() * scale;
                grads.push(w * scale);
            }
            None => grads.push(Array2::zeros(m.dim())),
        }
    }
    Ok(ContrastiveLoss { value, grads, streams_used: used, degenerate: false })
}

/// Graph form of [`contrastive_loss`]. Returns `None` when every stream is
/// skipped.
pub fn contrastive_loss_graph(g: &mut Graph, matrices: &[Var], masks: &[&ContrastiveMask]) -> Option<Var> {
    assert_eq!(matrices.len(), masks.len(), "one mask per matrix");
    let weights: Vec<Option<Array2<f64>>> = masks.iter().map(|m| m.loss_weights()).collect();
    let used = weights.iter().filter(|w| w.is_some()).count();
    if used == 0 {
        return None;
    }
    let scale = 1.0 / used as f64;
    let mut total: Option<Var> = None;
    for (&m, w) in matrices.iter().zip(weights) {
        let Some(w) = w else { continue };
        let term = g.weighted_sum(m, w * scale);
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
    }
    total
}
