//! Reverse-mode automatic differentiation over a small, fixed operator set.
//!
//! A [`Tape`] records every executed operation together with the activations
//! its backward rule needs. Nodes are appended in execution order, so the node
//! list is already topologically sorted and [`Tape::backward`] is a single
//! reverse sweep.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{dot, log_sum_exp, sq_dist, Precision, Tensor};

/// Variance floor used by batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics decay used by batch normalization.
pub const BN_MOMENTUM: f64 = 0.9;
/// Norm floor used by row normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// Trainable; always receives a gradient.
    Param,
    /// Data input; receives a gradient only when requested.
    Input,
    /// Never differentiated.
    Const,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnState {
    pub fn new(dim: usize) -> Self {
        BnState { running_mean: vec![0.0; dim], running_var: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    pub fn update(&mut self, stats: &BatchStats) {
        for (r, m) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(&stats.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }
}

/// Per-feature batch statistics observed by a train-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Which negatives the contrastive loss uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ContrastiveVariant {
    /// One direction; anchor `i` is contrasted with its second view and with
    /// the other `M - 1` anchors of the same view.
    #[default]
    AnchorView,
    /// Both directions; every row of either view is an anchor with its partner
    /// as positive and the remaining `2(M - 1)` rows as negatives.
    NtXent,
}

impl std::fmt::Display for ContrastiveVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ContrastiveVariant::AnchorView => "anchor_view",
            ContrastiveVariant::NtXent => "nt_xent",
        })
    }
}

impl std::str::FromStr for ContrastiveVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anchor_view" => Ok(ContrastiveVariant::AnchorView),
            "nt_xent" => Ok(ContrastiveVariant::NtXent),
            _ => Err(Error::invalid(format!("unknown contrastive variant '{s}'"))),
        }
    }
}

impl ContrastiveVariant {
    fn anchors(self, m: usize) -> usize {
        match self {
            ContrastiveVariant::AnchorView => m,
            ContrastiveVariant::NtXent => 2 * m,
        }
    }

    /// Row of the positive and the candidate rows (positive first) of an anchor,
    /// indexing the stacked `[anchors; positives]` matrix.
    fn candidates(self, m: usize, a: usize, out: &mut Vec<usize>) {
        out.clear();
        match self {
            ContrastiveVariant::AnchorView => {
                out.push(m + a);
                out.extend((0..m).filter(|&j| j != a));
            }
            ContrastiveVariant::NtXent => {
                let partner = (a + m) % (2 * m);
                out.push(partner);
                out.extend((0..2 * m).filter(|&j| j != a && j != partner));
            }
        }
    }
}

enum Op {
    Leaf(LeafKind),
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, coupled: bool },
    L2Normalize { x: Var, norms: Vec<f64> },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Contrastive { a: Var, p: Var, variant: ContrastiveVariant, tau: f64, probs: Vec<f64> },
    SliceRows { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    Scale(Var, f64),
    Add(Var, Var),
    KdeLogScore { x: Var, refs: Arc<Tensor>, gamma: f64, weights: Vec<f64> },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Execution record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

/// Gradients produced by [`Tape::backward`], addressed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Removes and returns the gradient of `v`.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape { nodes: Vec::new(), precision }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, mut value: Tensor, name: &'static str) -> Result<Var> {
        value.round_to(self.precision);
        value.ensure_finite(name)?;
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor, kind: LeafKind) -> Result<Var> {
        self.push(Op::Leaf(kind), value, "leaf")
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, LeafKind::Param)
    }

    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, LeafKind::Input)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, LeafKind::Const)
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.rank() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    /// `out[b, j] = Σ_i x[b, i] · w[i, j] + bias[j]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, inp) = self.matrix_dims(x, "affine")?;
        let (win, out) = self.matrix_dims(w, "affine")?;
        let bias = self.value(b);
        if win != inp || bias.len() != out || bias.rank() != 1 {
            return Err(Error::shape(
                "affine",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    self.value(x).shape(),
                    self.value(w).shape(),
                    bias.shape()
                ),
            ));
        }
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), bias.data());
        let mut y = vec![0.0; batch * out];
        for r in 0..batch {
            let yr = &mut y[r * out..(r + 1) * out];
            yr.copy_from_slice(bd);
            for (i, &xv) in xd[r * inp..(r + 1) * inp].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (yj, wj) in yr.iter_mut().zip(&wd[i * out..(i + 1) * out]) {
                    *yj += xv * wj;
                }
            }
        }
        let value = Tensor::matrix(batch, out, y)?;
        self.push(Op::Affine { x, w, b }, value, "affine")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu(x), value, "relu")
    }

    /// Batch normalization with learnable scale and shift.
    ///
    /// Train mode normalizes with the biased batch statistics and returns them so
    /// the caller can fold them into `state`; eval mode uses `state` as-is.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        state: &BnState,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (n, d) = self.matrix_dims(x, "batch_norm")?;
        if self.value(gamma).len() != d || self.value(beta).len() != d || state.dim() != d {
            return Err(Error::shape("batch_norm", format!("feature dim {d} vs scale/shift/state")));
        }
        let xd = self.value(x).data();
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::invalid("batch_norm in train mode needs a batch of at least 2"));
                }
                let mut mean = vec![0.0; d];
                for r in 0..n {
                    for (m, v) in mean.iter_mut().zip(&xd[r * d..(r + 1) * d]) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; d];
                for r in 0..n {
                    for j in 0..d {
                        let c = xd[r * d + j] - mean[j];
                        var[j] += c * c;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var)
            }
            Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; n * d];
        let mut y = vec![0.0; n * d];
        for r in 0..n {
            for j in 0..d {
                let h = (xd[r * d + j] - mean[j]) * inv_std[j];
                xhat[r * d + j] = h;
                y[r * d + j] = g[j] * h + bt[j];
            }
        }
        let value = Tensor::matrix(n, d, y)?;
        let coupled = mode == Mode::Train;
        let v = self.push(Op::BatchNorm { x, gamma, beta, xhat, inv_std, coupled }, value, "batch_norm")?;
        Ok((v, coupled.then_some(BatchStats { mean, var })))
    }

    /// Divides each row by `max(‖row‖₂, NORM_EPS)`.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.matrix_dims(x, "l2_normalize_rows")?;
        let xt = self.value(x);
        let mut norms = Vec::with_capacity(n);
        let mut y = xt.data().to_vec();
        for r in 0..n {
            let row = &mut y[r * d..(r + 1) * d];
            let norm = dot(row, row).sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let value = Tensor::matrix(n, d, y)?;
        self.push(Op::L2Normalize { x, norms }, value, "l2_normalize_rows")
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.matrix_dims(logits, "softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::shape("softmax_cross_entropy", format!("{} labels for batch {n}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &ld[r * k..(r + 1) * k];
            let lse = log_sum_exp(row);
            loss += lse - row[labels[r]];
            for (p, l) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = (l - lse).exp();
            }
        }
        let value = Tensor::scalar(loss / n as f64);
        self.push(Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs }, value, "softmax_cross_entropy")
    }

    /// Contrastive negative log-likelihood over already-normalized embeddings.
    ///
    /// Row `i` of `positives` is the second view of the instance in row `i` of
    /// `anchors`. Returns the mean over anchors.
    pub fn contrastive_nll(
        &mut self,
        anchors: Var,
        positives: Var,
        tau: f64,
        variant: ContrastiveVariant,
    ) -> Result<Var> {
        let (m, d) = self.matrix_dims(anchors, "contrastive")?;
        if self.value(positives).shape() != [m, d] {
            return Err(Error::shape("contrastive", "anchor and positive views differ in shape"));
        }
        if m < 2 {
            return Err(Error::invalid("contrastive loss needs at least 2 instances"));
        }
        if !(tau > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
        }
        let stacked = stack_rows(self.value(anchors), self.value(positives));
        let n_anchor = variant.anchors(m);
        let mut cand = Vec::new();
        let mut probs = Vec::new();
        let mut logits = Vec::new();
        let mut loss = 0.0;
        for a in 0..n_anchor {
            variant.candidates(m, a, &mut cand);
            let ea = &stacked[a * d..(a + 1) * d];
            logits.clear();
            logits.extend(cand.iter().map(|&c| dot(ea, &stacked[c * d..(c + 1) * d]) / tau));
            let lse = log_sum_exp(&logits);
            loss += lse - logits[0];
            probs.extend(logits.iter().map(|l| (l - lse).exp()));
        }
        let value = Tensor::scalar(loss / n_anchor as f64);
        self.push(Op::Contrastive { a: anchors, p: positives, variant, tau, probs }, value, "contrastive")
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.matrix_dims(x, "slice_rows")?;
        if start >= end || end > n {
            return Err(Error::shape("slice_rows", format!("range {start}..{end} of {n} rows")));
        }
        let value = Tensor::matrix(end - start, d, self.value(x).data()[start * d..end * d].to_vec())?;
        self.push(Op::SliceRows { x, start }, value, "slice_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), value, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(Op::Mean(x), value, "mean")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).scale(c);
        self.push(Op::Scale(x, c), value, "scale")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Add(a, b), value, "add")
    }

    /// Sum over query rows of the KDE log-score
    /// `ln((1/γ) Σ_i exp(-γ‖x - r_i‖²))`.
    pub fn kde_log_score(&mut self, x: Var, refs: Arc<Tensor>, gamma: f64) -> Result<Var> {
        let (b, d) = self.matrix_dims(x, "kde_log_score")?;
        if refs.cols() != d {
            return Err(Error::shape("kde_log_score", format!("query dim {d}, reference dim {}", refs.cols())));
        }
        let n = refs.rows();
        let xd = self.value(x).data();
        let mut weights = vec![0.0; b * n];
        let mut total = 0.0;
        let mut logits = vec![0.0; n];
        for r in 0..b {
            let q = &xd[r * d..(r + 1) * d];
            for (i, l) in logits.iter_mut().enumerate() {
                *l = -gamma * sq_dist(q, refs.row(i));
            }
            let lse = log_sum_exp(&logits);
            total += lse - gamma.ln();
            for (w, l) in weights[r * n..(r + 1) * n].iter_mut().zip(&logits) {
                *w = (l - lse).exp();
            }
        }
        self.push(Op::KdeLogScore { x, refs, gamma, weights }, Tensor::scalar(total), "kde_log_score")
    }

    /// Reverse sweep from a scalar `root`.
    ///
    /// Every parameter leaf gets a gradient (zero when unreachable from `root`);
    /// input leaves get one only when `want_input_grad` is set.
    pub fn backward(&self, root: Var, want_input_grad: bool) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward", format!("root has shape {:?}", self.value(root).shape())));
        }
        let n = root.0 + 1;
        let mut need = vec![false; n];
        for (i, node) in self.nodes[..n].iter().enumerate() {
            need[i] = match &node.op {
                Op::Leaf(LeafKind::Param) => true,
                Op::Leaf(LeafKind::Input) => want_input_grad,
                Op::Leaf(LeafKind::Const) => false,
                op => inputs(op).iter().any(|v| need[v.0]),
            };
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));

        for i in (0..n).rev() {
            if !need[i] {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf(_) => {
                    grads[i] = Some(gy);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let (xt, wt) = (self.value(*x), self.value(*w));
                    let (batch, inp, out) = (xt.rows(), xt.cols(), wt.cols());
                    let g = gy.data();
                    if need[x.0] {
                        let mut dx = vec![0.0; batch * inp];
                        for r in 0..batch {
                            let gr = &g[r * out..(r + 1) * out];
                            for k in 0..inp {
                                dx[r * inp + k] = dot(gr, &wt.data()[k * out..(k + 1) * out]);
                            }
                        }
                        accumulate(&mut grads, *x, Tensor::matrix(batch, inp, dx)?);
                    }
                    if need[w.0] {
                        let mut dw = vec![0.0; inp * out];
                        for r in 0..batch {
                            let gr = &g[r * out..(r + 1) * out];
                            for (k, &xv) in xt.row(r).iter().enumerate() {
                                if xv == 0.0 {
                                    continue;
                                }
                                for (d, gv) in dw[k * out..(k + 1) * out].iter_mut().zip(gr) {
                                    *d += xv * gv;
                                }
                            }
                        }
                        accumulate(&mut grads, *w, Tensor::matrix(inp, out, dw)?);
                    }
                    if need[b.0] {
                        let mut db = vec![0.0; out];
                        for r in 0..batch {
                            for (d, gv) in db.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                                *d += gv;
                            }
                        }
                        accumulate(&mut grads, *b, Tensor::vector(db)?);
                    }
                }
                Op::Relu(x) => {
                    let mut dx = gy;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, coupled } => {
                    let (nrow, d) = (node.value.rows(), node.value.cols());
                    let g = gy.data();
                    let gam = self.value(*gamma).data();
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for r in 0..nrow {
                        for j in 0..d {
                            dgamma[j] += g[r * d + j] * xhat[r * d + j];
                            dbeta[j] += g[r * d + j];
                        }
                    }
                    if need[x.0] {
                        let mut dx = vec![0.0; nrow * d];
                        let nf = nrow as f64;
                        for j in 0..d {
                            if *coupled {
                                // dxhat = g·γ; Σ dxhat = γ·dβ; Σ dxhat·xhat = γ·dγ
                                let s1 = gam[j] * dbeta[j];
                                let s2 = gam[j] * dgamma[j];
                                for r in 0..nrow {
                                    let dh = g[r * d + j] * gam[j];
                                    dx[r * d + j] = inv_std[j] / nf * (nf * dh - s1 - xhat[r * d + j] * s2);
                                }
                            } else {
                                for r in 0..nrow {
                                    dx[r * d + j] = g[r * d + j] * gam[j] * inv_std[j];
                                }
                            }
                        }
                        accumulate(&mut grads, *x, Tensor::matrix(nrow, d, dx)?);
                    }
                    if need[gamma.0] {
                        accumulate(&mut grads, *gamma, Tensor::vector(dgamma)?);
                    }
                    if need[beta.0] {
                        accumulate(&mut grads, *beta, Tensor::vector(dbeta)?);
                    }
                }
                Op::L2Normalize { x, norms } => {
                    let (nrow, d) = (node.value.rows(), node.value.cols());
                    let y = node.value.data();
                    let mut dx = gy.into_data();
                    for (r, &norm) in norms.iter().enumerate().take(nrow) {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &mut dx[r * d..(r + 1) * d];
                        if norm > NORM_EPS {
                            let proj = dot(yr, gr);
                            for (gv, yv) in gr.iter_mut().zip(yr) {
                                *gv = (*gv - yv * proj) / norm;
                            }
                        } else {
                            gr.iter_mut().for_each(|gv| *gv /= norm);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::matrix(nrow, d, dx)?);
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let nrow = labels.len();
                    let k = probs.len() / nrow;
                    let scale = gy.item() / nrow as f64;
                    let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &l) in labels.iter().enumerate() {
                        dl[r * k + l] -= scale;
                    }
                    accumulate(&mut grads, *logits, Tensor::matrix(nrow, k, dl)?);
                }
                Op::Contrastive { a, p, variant, tau, probs } => {
                    let (m, d) = (self.value(*a).rows(), self.value(*a).cols());
                    let stacked = stack_rows(self.value(*a), self.value(*p));
                    let n_anchor = variant.anchors(m);
                    let coef = gy.item() / (n_anchor as f64 * tau);
                    let mut ds = vec![0.0; 2 * m * d];
                    let mut cand = Vec::new();
                    let mut off = 0;
                    for an in 0..n_anchor {
                        variant.candidates(m, an, &mut cand);
                        for (ci, &c) in cand.iter().enumerate() {
                            let dl = probs[off + ci] - if ci == 0 { 1.0 } else { 0.0 };
                            let s = coef * dl;
                            for t in 0..d {
                                ds[an * d + t] += s * stacked[c * d + t];
                                ds[c * d + t] += s * stacked[an * d + t];
                            }
                        }
                        off += cand.len();
                    }
                    let dp = ds.split_off(m * d);
                    if need[a.0] {
                        accumulate(&mut grads, *a, Tensor::matrix(m, d, ds)?);
                    }
                    if need[p.0] {
                        accumulate(&mut grads, *p, Tensor::matrix(m, d, dp)?);
                    }
                }
                Op::SliceRows { x, start } => {
                    let xt = self.value(*x);
                    let d = xt.cols();
                    let mut dx = Tensor::zeros(xt.shape());
                    dx.data_mut()[start * d..start * d + gy.len()].copy_from_slice(gy.data());
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let dx = Tensor::filled(self.value(*x).shape(), gy.item());
                    accumulate(&mut grads, *x, dx);
                }
                Op::Mean(x) => {
                    let xt = self.value(*x);
                    let dx = Tensor::filled(xt.shape(), gy.item() / xt.len() as f64);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Scale(x, c) => accumulate(&mut grads, *x, gy.scale(*c)),
                Op::Add(a, b) => {
                    if need[a.0] {
                        accumulate(&mut grads, *a, gy.clone());
                    }
                    if need[b.0] {
                        accumulate(&mut grads, *b, gy);
                    }
                }
                Op::KdeLogScore { x, refs, gamma, weights } => {
                    let xt = self.value(*x);
                    let (nrow, d, nref) = (xt.rows(), xt.cols(), refs.rows());
                    let s = gy.item();
                    let mut dx = vec![0.0; nrow * d];
                    for r in 0..nrow {
                        let q = xt.row(r);
                        for i in 0..nref {
                            let w = weights[r * nref + i];
                            if w == 0.0 {
                                continue;
                            }
                            for (t, (qv, rv)) in q.iter().zip(refs.row(i)).enumerate() {
                                dx[r * d + t] -= s * 2.0 * gamma * w * (qv - rv);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::matrix(nrow, d, dx)?);
                }
            }
        }

        for (i, node) in self.nodes[..n].iter().enumerate() {
            let wanted = match node.op {
                Op::Leaf(LeafKind::Param) => true,
                Op::Leaf(LeafKind::Input) => want_input_grad,
                _ => false,
            };
            if wanted {
                if grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf(_) => vec![],
        Op::Affine { x, w, b } => vec![*x, *w, *b],
        Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Contrastive { a, p, .. } => vec![*a, *p],
        Op::Add(a, b) => vec![*a, *b],
        Op::Relu(x)
        | Op::L2Normalize { x, .. }
        | Op::SoftmaxCrossEntropy { logits: x, .. }
        | Op::SliceRows { x, .. }
        | Op::Sum(x)
        | Op::Mean(x)
        | Op::Scale(x, _)
        | Op::KdeLogScore { x, .. } => vec![*x],
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot => *slot = Some(g),
    }
}

fn stack_rows(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut s = Vec::with_capacity(a.len() + b.len());
    s.extend_from_slice(a.data());
    s.extend_from_slice(b.data());
    s
}
