//! Tape-based reverse-mode differentiation over 2-D `f64` arrays.
//!
//! Every value in the graph is an `Array2<f64>`. Higher-rank data is laid out
//! position-major with channels last: a sequence is `[L, C]`, a feature map
//! over an `H x W` grid is `[H * W, C]`. Scalars are `[1, 1]`.
//!
//! A [`Graph`] is built fresh for each forward pass. Parameters are borrowed
//! from a [`ParamStore`] rather than copied into the tape.

use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView2, Axis, Zip};

use crate::params::ParamStore;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var },
    NormalizeRows(Var),
    Im2Col1d { x: Var, k: usize },
    Im2Col2d { x: Var, h: usize, w: usize, k: usize },
    GatherDiag { x: Var, l: usize },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    StackChannels(Vec<Var>),
    WeightedSum { x: Var, weights: Array2<f64> },
    Sum(Var),
    Bce { p: Var, y: Array2<f64>, eps: f64 },
}

#[derive(Debug)]
enum Value {
    Owned(Array2<f64>),
    Param(usize),
}

#[derive(Debug)]
struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
    /// Auxiliary forward results the backward rule needs (normalized
    /// activations, row norms).
    cache: Option<Array2<f64>>,
}

/// Forward tape.
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Default for Graph<'p> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { params: None, nodes: Vec::new(), param_vars: Vec::new() }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self { params: Some(params), nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a,
            Value::Param(id) => self.params.expect("param node without store").value(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.push_cached(value, op, needs_grad, None)
    }

    fn push_cached(
        &mut self,
        value: Array2<f64>,
        op: Op,
        needs_grad: bool,
        cache: Option<Array2<f64>>,
    ) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad, cache });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Copy of `v` cut off from the backward pass.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Leaf bound to parameter `id` of the store. Repeated calls return the
    /// same node.
    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param, needs_grad: true, cache: None });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    /// `op(a) . op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let out = gemm(self.value(a).view(), ta, self.value(b).view(), tb);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by a `[1, n]` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) * self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Per-row layer normalization with affine `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let xv = self.value(x);
        let (m, n) = xv.dim();
        let mut xhat = Array2::zeros((m, n));
        let mut inv = Array2::zeros((m, 1));
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / n as f64;
            let var = row.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / n as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv[[r, 0]] = is;
            for (c, &v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * is;
            }
        }
        let out = &(&xhat * self.value(gamma)) + self.value(beta);
        let mut cache = Array2::zeros((m, n + 1));
        cache.slice_mut(s![.., ..n]).assign(&xhat);
        cache.slice_mut(s![.., n..]).assign(&inv);
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push_cached(out, Op::LayerNorm { x, gamma, beta }, ng, Some(cache))
    }

    /// Scales each row to unit Euclidean norm. Zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let norms = row_norms(xv.view());
        let mut out = xv.clone();
        for (mut row, &nrm) in out.rows_mut().into_iter().zip(norms.iter()) {
            if nrm > 0.0 {
                row.mapv_inplace(|v| v / nrm);
            }
        }
        let ng = self.needs(x);
        self.push_cached(out, Op::NormalizeRows(x), ng, Some(norms))
    }

    /// Unfolds a `[L, C]` sequence into `[L, k * C]` windows with zero
    /// padding of `k / 2` on each side. `k` must be odd.
    pub fn im2col_1d(&mut self, x: Var, k: usize) -> Var {
        assert!(k % 2 == 1, "kernel size must be odd");
        let out = im2col_1d(self.value(x).view(), k);
        let ng = self.needs(x);
        self.push(out, Op::Im2Col1d { x, k }, ng)
    }

    /// Unfolds a `[h * w, C]` map into `[h * w, k * k * C]` patches with zero
    /// padding, stride 1.
    pub fn im2col_2d(&mut self, x: Var, h: usize, w: usize, k: usize) -> Var {
        assert!(k % 2 == 1, "kernel size must be odd");
        let out = im2col_2d(self.value(x).view(), h, w, k);
        let ng = self.needs(x);
        self.push(out, Op::Im2Col2d { x, h, w, k }, ng)
    }

    /// Picks the diagonal positions of an `[l * l, C]` map, giving `[l, C]`.
    pub fn gather_diag(&mut self, x: Var, l: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.nrows(), l * l, "gather_diag expects an l*l map");
        let mut out = Array2::zeros((l, xv.ncols()));
        for k in 0..l {
            out.row_mut(k).assign(&xv.row(k * l + k));
        }
        let ng = self.needs(x);
        self.push(out, Op::GatherDiag { x, l }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![.., start..start + len]).to_owned();
        let ng = self.needs(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    /// Stacks `[l, l]` matrices as channels of an `[l * l, C]` map.
    pub fn stack_channels(&mut self, parts: &[Var]) -> Var {
        let (l, l2) = self.shape(parts[0]);
        let mut out = Array2::zeros((l * l2, parts.len()));
        for (c, &p) in parts.iter().enumerate() {
            let pv = self.value(p);
            assert_eq!(pv.dim(), (l, l2), "channel shapes must agree");
            for (dst, &src) in out.column_mut(c).iter_mut().zip(pv.iter()) {
                *dst = src;
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::StackChannels(parts.to_vec()), ng)
    }

    /// `sum(weights * x)` as a `[1, 1]` scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Array2<f64>) -> Var {
        let total = Zip::from(self.value(x)).and(&weights).fold(0.0, |acc, &a, &w| acc + a * w);
        let ng = self.needs(x);
        self.push(Array2::from_elem((1, 1), total), Op::WeightedSum { x, weights }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        let ng = self.needs(x);
        self.push(Array2::from_elem((1, 1), total), Op::Sum(x), ng)
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 targets,
    /// with probabilities clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, p: Var, y: Array2<f64>, eps: f64) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.dim(), y.dim(), "bce shapes must agree");
        let n = pv.len() as f64;
        let total = Zip::from(pv).and(&y).fold(0.0, |acc, &pi, &yi| {
            let q = pi.clamp(eps, 1.0 - eps);
            acc - (yi * q.ln() + (1.0 - yi) * (1.0 - q).ln())
        });
        let ng = self.needs(p);
        self.push(Array2::from_elem((1, 1), total / n), Op::Bce { p, y, eps }, ng)
    }

    /// Reverse pass from a `[1, 1]` root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else { continue };
            self.backprop_node(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        let mut param_grads = vec![None; self.param_vars.len()];
        for (id, slot) in self.param_vars.iter().enumerate() {
            if let Some(v) = slot {
                param_grads[id] = grads[v.0].take();
            }
        }
        Gradients { nodes: grads, params: param_grads }
    }

    fn backprop_node(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        let out = match &node.value {
            Value::Owned(a) => a,
            Value::Param(_) => return,
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a).view(), self.value(*b).view());
                if self.needs(*a) {
                    let da = if *ta { gemm(bv, *tb, g.view(), true) } else { gemm(g.view(), false, bv, !*tb) };
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = if *tb { gemm(g.view(), true, av, *ta) } else { gemm(av, !*ta, g.view(), false) };
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.acc_if(grads, *a, || g.clone());
                self.acc_if(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc_if(grads, *a, || g.clone());
                self.acc_if(grads, *b, || -g);
            }
            Op::Mul(a, b) => {
                self.acc_if(grads, *a, || g * self.value(*b));
                self.acc_if(grads, *b, || g * self.value(*a));
            }
            Op::AddRow(a, row) => {
                self.acc_if(grads, *a, || g.clone());
                self.acc_if(grads, *row, || g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulRow(a, row) => {
                self.acc_if(grads, *a, || g * self.value(*row));
                self.acc_if(grads, *row, || (g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, c) => self.acc_if(grads, *a, || g * *c),
            Op::Relu(a) => {
                let av = self.value(*a);
                self.acc_if(grads, *a, || {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(av).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    d
                });
            }
            Op::Sigmoid(a) => {
                self.acc_if(grads, *a, || {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(out).for_each(|d, &y| *d *= y * (1.0 - y));
                    d
                });
            }
            Op::SoftmaxRows(a) => {
                self.acc_if(grads, *a, || {
                    let mut d = g * out;
                    let dots = d.sum_axis(Axis(1));
                    Zip::from(d.rows_mut()).and(out.rows()).and(&dots).for_each(|mut dr, yr, &dot| {
                        Zip::from(&mut dr).and(&yr).for_each(|dv, &y| *dv -= y * dot);
                    });
                    d
                });
            }
            Op::LayerNorm { x, gamma, beta } => {
                let cache = node.cache.as_ref().expect("layer norm cache");
                let n = g.ncols();
                let xhat = cache.slice(s![.., ..n]);
                let inv = cache.slice(s![.., n..]);
                self.acc_if(grads, *gamma, || (g * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                self.acc_if(grads, *beta, || g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                if self.needs(*x) {
                    let dxhat = g * self.value(*gamma);
                    let mut dx = Array2::zeros(g.dim());
                    let nf = n as f64;
                    for r in 0..g.nrows() {
                        let dr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_d = dr.sum();
                        let sum_dx = dr.dot(&xr);
                        let is = inv[[r, 0]];
                        for c in 0..n {
                            dx[[r, c]] = is / nf * (nf * dr[c] - sum_d - xr[c] * sum_dx);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::NormalizeRows(x) => {
                let norms = node.cache.as_ref().expect("norm cache");
                self.acc_if(grads, *x, || {
                    let mut dx = g.clone();
                    for r in 0..dx.nrows() {
                        let nrm = norms[[r, 0]];
                        if nrm > 0.0 {
                            let dot = g.row(r).dot(&out.row(r));
                            let mut row = dx.row_mut(r);
                            Zip::from(&mut row).and(out.row(r)).for_each(|d, &y| *d = (*d - y * dot) / nrm);
                        }
                    }
                    dx
                });
            }
            Op::Im2Col1d { x, k } => {
                let c = self.value(*x).ncols();
                self.acc_if(grads, *x, || col2im_1d(g.view(), *k, c));
            }
            Op::Im2Col2d { x, h, w, k } => {
                let c = self.value(*x).ncols();
                self.acc_if(grads, *x, || col2im_2d(g.view(), *h, *w, *k, c));
            }
            Op::GatherDiag { x, l } => {
                self.acc_if(grads, *x, || {
                    let mut dx = Array2::zeros((l * l, g.ncols()));
                    for k in 0..*l {
                        dx.row_mut(k * l + k).assign(&g.row(k));
                    }
                    dx
                });
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let width = self.value(p).ncols();
                    if self.needs(p) {
                        accumulate(grads, p, g.slice(s![.., start..start + width]).to_owned());
                    }
                    start += width;
                }
            }
            Op::SliceCols { x, start } => {
                self.acc_if(grads, *x, || {
                    let mut dx = Array2::zeros(self.value(*x).dim());
                    dx.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                    dx
                });
            }
            Op::StackChannels(parts) => {
                for (c, &p) in parts.iter().enumerate() {
                    if self.needs(p) {
                        let dim = self.value(p).dim();
                        let col = g.column(c).to_owned();
                        accumulate(grads, p, col.into_shape_with_order(dim).expect("channel reshape"));
                    }
                }
            }
            Op::WeightedSum { x, weights } => {
                let s = g[[0, 0]];
                self.acc_if(grads, *x, || weights * s);
            }
            Op::Sum(x) => {
                let s = g[[0, 0]];
                self.acc_if(grads, *x, || Array2::from_elem(self.value(*x).dim(), s));
            }
            Op::Bce { p, y, eps } => {
                let s = g[[0, 0]];
                let pv = self.value(*p);
                let n = pv.len() as f64;
                self.acc_if(grads, *p, || {
                    let mut d = Array2::zeros(pv.dim());
                    Zip::from(&mut d).and(pv).and(y).for_each(|d, &pi, &yi| {
                        if pi > *eps && pi < 1.0 - *eps {
                            *d = -s / n * (yi / pi - (1.0 - yi) / (1.0 - pi));
                        }
                    });
                    d
                });
            }
        }
    }

    fn acc_if(&self, grads: &mut [Option<Array2<f64>>], v: Var, f: impl FnOnce() -> Array2<f64>) {
        if self.needs(v) {
            accumulate(grads, v, f());
        }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, d: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &d,
        slot @ None => *slot = Some(d),
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Array2<f64>>>,
    params: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to an arbitrary node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].as_ref()
    }

    /// Per-parameter gradients indexed by parameter id. `None` means the
    /// parameter did not take part in the graph.
    pub fn into_param_grads(self) -> Vec<Option<Array2<f64>>> {
        self.params
    }

    pub fn param(&self, id: usize) -> Option<&Array2<f64>> {
        self.params.get(id).and_then(Option::as_ref)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `op(a) . op(b)` via the blocked kernel behind `ndarray`.
pub fn gemm(a: ArrayView2<f64>, ta: bool, b: ArrayView2<f64>, tb: bool) -> Array2<f64> {
    let a = if ta { a.reversed_axes() } else { a };
    let b = if tb { b.reversed_axes() } else { b };
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, &a, &b, 0.0, &mut out);
    out
}

/// Euclidean norm of every row, as an `[m, 1]` column.
pub fn row_norms(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), 1));
    for (r, row) in x.rows().into_iter().enumerate() {
        out[[r, 0]] = row.dot(&row).sqrt();
    }
    out
}

fn im2col_1d(x: ArrayView2<f64>, k: usize) -> Array2<f64> {
    let (l, c) = x.dim();
    let pad = k / 2;
    let mut out = Array2::zeros((l, k * c));
    for t in 0..l {
        for tap in 0..k {
            let src = t + tap;
            if src < pad || src - pad >= l {
                continue;
            }
            out.slice_mut(s![t, tap * c..(tap + 1) * c]).assign(&x.row(src - pad));
        }
    }
    out
}

fn col2im_1d(g: ArrayView2<f64>, k: usize, c: usize) -> Array2<f64> {
    let l = g.nrows();
    let pad = k / 2;
    let mut dx = Array2::zeros((l, c));
    for t in 0..l {
        for tap in 0..k {
            let src = t + tap;
            if src < pad || src - pad >= l {
                continue;
            }
            let mut row = dx.row_mut(src - pad);
            row += &g.slice(s![t, tap * c..(tap + 1) * c]);
        }
    }
    dx
}

fn im2col_2d(x: ArrayView2<f64>, h: usize, w: usize, k: usize) -> Array2<f64> {
    let c = x.ncols();
    assert_eq!(x.nrows(), h * w, "im2col_2d expects an h*w map");
    let pad = k / 2;
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("contiguous");
    let width = k * k * c;
    let mut out = vec![0.0; h * w * width];
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * width;
            for di in 0..k {
                let si = i + di;
                if si < pad || si - pad >= h {
                    continue;
                }
                let si = si - pad;
                for dj in 0..k {
                    let sj = j + dj;
                    if sj < pad || sj - pad >= w {
                        continue;
                    }
                    let src = (si * w + sj - pad) * c;
                    let dst = base + (di * k + dj) * c;
                    out[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                }
            }
        }
    }
    Array2::from_shape_vec((h * w, width), out).expect("im2col shape")
}

fn col2im_2d(g: ArrayView2<f64>, h: usize, w: usize, k: usize, c: usize) -> Array2<f64> {
    let pad = k / 2;
    let gs = g.as_standard_layout();
    let gs = gs.as_slice().expect("contiguous");
    let width = k * k * c;
    let mut dx = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * width;
            for di in 0..k {
                let si = i + di;
                if si < pad || si - pad >= h {
                    continue;
                }
                let si = si - pad;
                for dj in 0..k {
                    let sj = j + dj;
                    if sj < pad || sj - pad >= w {
                        continue;
                    }
                    let dst = (si * w + sj - pad) * c;
                    let src = base + (di * k + dj) * c;
                    for (d, s) in dx[dst..dst + c].iter_mut().zip(&gs[src..src + c]) {
                        *d += s;
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((h * w, c), dx).expect("col2im shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference check of d(build(x))/dx for a scalar-valued builder.
    fn check_grad(x0: Array2<f64>, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let x = g.push(x0.clone(), Op::Constant, true);
        let y = build(&mut g, x);
        let grads = g.backward(y);
        let analytic = grads.wrt(x).cloned().unwrap_or_else(|| Array2::zeros(x0.dim()));
        let h = 1e-6;
        for idx in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.as_slice_mut().unwrap()[idx] += delta;
                let mut g = Graph::new();
                let x = g.constant(xp);
                let y = build(&mut g, x);
                g.scalar(y)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-7);
            assert!((a - numeric).abs() / denom < 1e-5, "idx {idx}: analytic {a} numeric {numeric}");
        }
    }

    fn readout(g: &mut Graph, v: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = g.shape(v);
        g.weighted_sum(v, random(&mut rng, r, c))
    }

    #[test]
    fn matmul_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m, k, n) = (2, 4, 3);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a_shape = if ta { (k, m) } else { (m, k) };
            let b_shape = if tb { (n, k) } else { (k, n) };
            let a0 = random(&mut rng, a_shape.0, a_shape.1);
            let b0 = random(&mut rng, b_shape.0, b_shape.1);
            let bf = b0.clone();
            check_grad(a0.clone(), move |g, x| {
                let bv = g.constant(bf.clone());
                let y = g.matmul_t(x, ta, bv, tb);
                readout(g, y, 9)
            });
            check_grad(b0, move |g, x| {
                let av = g.constant(a0.clone());
                let y = g.matmul_t(av, ta, x, tb);
                readout(g, y, 10)
            });
        }
    }

    #[test]
    fn elementwise_and_row_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let other = random(&mut rng, 3, 4);
        let row = random(&mut rng, 1, 4);
        let x0 = random(&mut rng, 3, 4);
        let o = other.clone();
        check_grad(x0.clone(), move |g, x| {
            let b = g.constant(o.clone());
            let p = g.mul(x, b);
            let q = g.sub(p, x);
            let r = g.add(q, b);
            let s = g.scale(r, 1.7);
            readout(g, s, 3)
        });
        let rw = row.clone();
        check_grad(x0.clone(), move |g, x| {
            let b = g.constant(rw.clone());
            let p = g.mul_row(x, b);
            let q = g.add_row(p, b);
            let s = g.sigmoid(q);
            readout(g, s, 4)
        });
        let xx = x0.clone();
        check_grad(row, move |g, r| {
            let x = g.constant(xx.clone());
            let p = g.mul_row(x, r);
            let q = g.add_row(p, r);
            readout(g, q, 5)
        });
        check_grad(x0, |g, x| {
            let y = g.relu(x);
            let z = g.softmax_rows(y);
            readout(g, z, 6)
        });
    }

    #[test]
    fn normalization_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gamma = random(&mut rng, 1, 5);
        let beta = random(&mut rng, 1, 5);
        let x0 = random(&mut rng, 4, 5);
        let (gm, bt) = (gamma.clone(), beta.clone());
        check_grad(x0.clone(), move |g, x| {
            let gv = g.constant(gm.clone());
            let bv = g.constant(bt.clone());
            let y = g.layer_norm(x, gv, bv);
            readout(g, y, 7)
        });
        let xx = x0.clone();
        check_grad(gamma, move |g, gv| {
            let x = g.constant(xx.clone());
            let bv = g.constant(beta.clone());
            let y = g.layer_norm(x, gv, bv);
            readout(g, y, 8)
        });
        check_grad(x0, |g, x| {
            let y = g.normalize_rows(x);
            let s = g.matmul_t(y, false, y, true);
            readout(g, s, 11)
        });
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check_grad(random(&mut rng, 6, 2), |g, x| {
            let y = g.im2col_1d(x, 3);
            readout(g, y, 12)
        });
        check_grad(random(&mut rng, 12, 2), |g, x| {
            let y = g.im2col_2d(x, 3, 4, 3);
            readout(g, y, 13)
        });
        check_grad(random(&mut rng, 9, 2), |g, x| {
            let y = g.gather_diag(x, 3);
            readout(g, y, 14)
        });
        check_grad(random(&mut rng, 3, 3), |g, x| {
            let s = g.slice_cols(x, 1, 2);
            let c = g.concat_cols(&[x, s]);
            let t = g.stack_channels(&[x, x]);
            let a = readout(g, c, 15);
            let b = readout(g, t, 16);
            g.add(a, b)
        });
        check_grad(random(&mut rng, 2, 3).mapv(|v| 0.5 + 0.4 * v), |g, p| {
            g.bce(p, array![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]], 1e-7)
        });
    }

    #[test]
    fn im2col_2d_places_neighbors() {
        // 2x2 map, one channel, values 1..4.
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let cols = im2col_2d(x.view(), 2, 2, 3);
        // Position (0, 0): taps (1,1)=1, (1,2)=2, (2,1)=3, (2,2)=4; rest padding.
        assert_eq!(cols.row(0).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.push(array![[2.0]], Op::Constant, true);
        let d = g.detach(x);
        let y = g.mul(x, d);
        let grads = g.backward(y);
        assert_eq!(grads.wrt(x).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn zero_rows_normalize_to_zero() {
        let mut g = Graph::new();
        let x = g.constant(array![[0.0, 0.0], [3.0, 4.0]]);
        let y = g.normalize_rows(x);
        assert_eq!(g.value(y), &array![[0.0, 0.0], [0.6, 0.8]]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }
}
