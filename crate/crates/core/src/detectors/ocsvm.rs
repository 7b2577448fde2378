//! ν-one-class SVM solved in the dual with pairwise (SMO) updates.
//!
//! Dual: minimize `½ αᵀKα` subject to `Σα = 1`, `0 ≤ α ≤ 1/(νn)`.
//! The working pair is the maximal KKT violator; the decision function is
//! `s(x) = Σ αᵢ k(xᵢ, x) − ρ`, positive inside the estimated support.

use super::KernelSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_NU: f64 = 0.5;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
/// Largest `n` whose kernel matrix is cached in full.
pub const FULL_CACHE_LIMIT: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct OcsvmModel {
    pub support_vectors: Tensor,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub kernel: KernelSpec,
    pub nu: f64,
}

/// Full solver output, including the multipliers of non-support points.
#[derive(Clone, Debug)]
pub struct OcsvmFit {
    pub model: OcsvmModel,
    pub alpha: Vec<f64>,
    /// Indices of the training points kept as support vectors.
    pub support: Vec<usize>,
    /// Maximal KKT violation at the returned solution.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// `½ αᵀKα`.
    pub objective: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

enum Gram<'a> {
    Full(Vec<f64>),
    OnTheFly { reps: &'a Tensor, kernel: KernelSpec, diag: Vec<f64> },
}

impl Gram<'_> {
    fn new(reps: &Tensor, kernel: KernelSpec) -> Gram<'_> {
        let n = reps.rows();
        if n <= FULL_CACHE_LIMIT {
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = kernel.eval(reps.row(i), reps.row(j));
                    k[i * n + j] = v;
                    k[j * n + i] = v;
                }
            }
            Gram::Full(k)
        } else {
            let diag = (0..n).map(|i| kernel.eval(reps.row(i), reps.row(i))).collect();
            Gram::OnTheFly { reps, kernel, diag }
        }
    }

    fn column(&self, i: usize, n: usize, out: &mut Vec<f64>) {
        match self {
            Gram::Full(k) => {
                out.clear();
                out.extend_from_slice(&k[i * n..(i + 1) * n]);
            }
            Gram::OnTheFly { reps, kernel, .. } => {
                out.clear();
                out.extend((0..n).map(|j| kernel.eval(reps.row(i), reps.row(j))));
            }
        }
    }

    fn diag(&self, i: usize, n: usize) -> f64 {
        match self {
            Gram::Full(k) => k[i * n + i],
            Gram::OnTheFly { diag, .. } => diag[i],
        }
    }

    fn gradient(&self, alpha: &[f64], n: usize) -> Vec<f64> {
        let mut g = vec![0.0; n];
        let mut col = Vec::with_capacity(n);
        for (j, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                self.column(j, n, &mut col);
                for (gi, kij) in g.iter_mut().zip(&col) {
                    *gi += a * kij;
                }
            }
        }
        g
    }
}

/// Working pair `(i, j)` and its violation `G_j − G_i`, where `i` can grow and `j` can shrink.
fn max_violating_pair(alpha: &[f64], grad: &[f64], c: f64) -> Option<(usize, usize, f64)> {
    let mut up: Option<(usize, f64)> = None;
    let mut low: Option<(usize, f64)> = None;
    for (t, (&a, &g)) in alpha.iter().zip(grad).enumerate() {
        if a < c && up.is_none_or(|(_, v)| g < v) {
            up = Some((t, g));
        }
        if a > 0.0 && low.is_none_or(|(_, v)| g > v) {
            low = Some((t, g));
        }
    }
    let ((i, gi), (j, gj)) = (up?, low?);
    Some((i, j, gj - gi))
}

pub fn fit_ocsvm(reps: &Tensor, nu: f64, kernel: KernelSpec) -> Result<OcsvmModel> {
    Ok(fit_ocsvm_with(reps, nu, kernel, SolverSettings::default())?.model)
}

pub fn fit_ocsvm_with(reps: &Tensor, nu: f64, kernel: KernelSpec, settings: SolverSettings) -> Result<OcsvmFit> {
    kernel.validate()?;
    let n = reps.rows();
    if reps.rank() != 2 || n < 2 {
        return Err(Error::invalid("one-class SVM needs a matrix of at least 2 rows"));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::invalid(format!("nu must lie in (0, 1], got {nu}")));
    }
    if nu * (n as f64) < 1.0 {
        return Err(Error::invalid(format!("nu·n = {} < 1", nu * n as f64)));
    }
    let c = 1.0 / (nu * n as f64);
    let gram = Gram::new(reps, kernel);

    // Fill the first ⌊νn⌋ multipliers to the box and put the remainder on the next one.
    let mut alpha = vec![0.0; n];
    let mut left = 1.0;
    for a in alpha.iter_mut() {
        if left <= 0.0 {
            break;
        }
        *a = c.min(left);
        left -= *a;
    }
    let mut grad = gram.gradient(&alpha, n);
    let mut col_i = Vec::with_capacity(n);
    let mut col_j = Vec::with_capacity(n);

    let mut iterations = 0;
    let residual = loop {
        let Some((i, j, gap)) = max_violating_pair(&alpha, &grad, c) else { break 0.0 };
        if gap < settings.tol {
            // refresh against accumulated drift before declaring convergence
            grad = gram.gradient(&alpha, n);
            match max_violating_pair(&alpha, &grad, c) {
                Some((_, _, g)) if g >= settings.tol => {}
                Some((_, _, g)) => break g.max(0.0),
                None => break 0.0,
            }
            continue;
        }
        if iterations >= settings.max_iter {
            return Err(Error::NotConverged { iterations, residual: gap });
        }
        iterations += 1;
        gram.column(i, n, &mut col_i);
        gram.column(j, n, &mut col_j);
        let eta = gram.diag(i, n) + gram.diag(j, n) - 2.0 * col_i[j];
        let room_i = c - alpha[i];
        let room_j = alpha[j];
        let mut delta = if eta > 1e-12 { gap / eta } else { f64::INFINITY };
        if delta >= room_i {
            delta = room_i;
        }
        if delta >= room_j {
            delta = room_j;
        }
        if delta == room_i {
            alpha[i] = c;
        } else {
            alpha[i] += delta;
        }
        if delta == room_j {
            alpha[j] = 0.0;
        } else {
            alpha[j] -= delta;
        }
        for ((g, ki), kj) in grad.iter_mut().zip(&col_i).zip(&col_j) {
            *g += delta * (ki - kj);
        }
    };

    let free: Vec<f64> = alpha
        .iter()
        .zip(&grad)
        .filter(|(&a, _)| a > 0.0 && a < c)
        .map(|(_, &g)| g)
        .collect();
    let rho = if free.is_empty() {
        let ub = alpha.iter().zip(&grad).filter(|(&a, _)| a < c).map(|(_, &g)| g).fold(f64::INFINITY, f64::min);
        let lb = alpha.iter().zip(&grad).filter(|(&a, _)| a > 0.0).map(|(_, &g)| g).fold(f64::NEG_INFINITY, f64::max);
        match (ub.is_finite(), lb.is_finite()) {
            (true, true) => 0.5 * (ub + lb),
            (true, false) => ub,
            _ => lb,
        }
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();

    let alpha_tol = 1e-12 * c;
    let support: Vec<usize> = (0..n).filter(|&i| alpha[i] > alpha_tol).collect();
    let model = OcsvmModel {
        support_vectors: reps.select_rows(&support)?,
        alphas: support.iter().map(|&i| alpha[i]).collect(),
        rho,
        kernel,
        nu,
    };
    Ok(OcsvmFit { model, alpha, support, kkt_residual: residual, iterations, objective })
}

impl OcsvmModel {
    /// `Σ αᵢ k(xᵢ, x) − ρ` per query row; higher is more normal.
    pub fn score(&self, queries: &Tensor) -> Result<Vec<f64>> {
        if queries.cols() != self.support_vectors.cols() {
            return Err(Error::shape(
                "score_ocsvm",
                format!("query dim {}, model dim {}", queries.cols(), self.support_vectors.cols()),
            ));
        }
        Ok((0..queries.rows())
            .map(|q| {
                let x = queries.row(q);
                self.alphas
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * self.kernel.eval(self.support_vectors.row(i), x))
                    .sum::<f64>()
                    - self.rho
            })
            .collect())
    }
}

pub fn score_ocsvm(model: &OcsvmModel, queries: &Tensor) -> Result<Vec<f64>> {
    model.score(queries)
}
