//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use occ_core::network::ModelBundle;
use occ_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

/// Central differences of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

pub fn flat_params(model: &ModelBundle) -> Vec<f64> {
    model.params().iter().flat_map(|(t, _)| t.data().to_vec()).collect()
}

pub fn with_params(model: &ModelBundle, flat: &[f64]) -> ModelBundle {
    let mut m = model.clone();
    let mut at = 0;
    for (t, _) in m.params_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
    m
}

/// Adds uniform noise in `[-scale, scale]` to every parameter, so biases are
/// non-zero and no activation sits exactly on a ReLU kink.
pub fn jitter(model: &ModelBundle, rng: &mut ChaCha8Rng, scale: f64) -> ModelBundle {
    let p: Vec<f64> = flat_params(model).into_iter().map(|v| v + rng.gen_range(-scale..scale)).collect();
    with_params(model, &p)
}

/// Finite-difference gradient of `loss` over every model parameter, flattened in parameter order.
pub fn model_fd(model: &ModelBundle, loss: impl Fn(&ModelBundle) -> f64, h: f64) -> Vec<f64> {
    central_diff(|p| loss(&with_params(model, p)), &flat_params(model), h)
}

/// `P(inlier > outlier) + ½ P(tie)` by enumerating every pair.
pub fn auc_pairwise(scores: &[f64], inlier: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (si, &li) in scores.iter().zip(inlier) {
        for (so, &lo) in scores.iter().zip(inlier) {
            if li && !lo {
                pairs += 1.0;
                if si > so {
                    wins += 1.0;
                } else if si == so {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// `ln((1/γ) Σ exp(−γ‖x − r‖²))` summed directly.
pub fn kde_direct(refs: &[Vec<f64>], gamma: f64, x: &[f64]) -> f64 {
    let s: f64 = refs
        .iter()
        .map(|r| (-gamma * r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp())
        .sum();
    (s / gamma).ln()
}

/// Gaussian log-density with MLE mean and covariance plus `ridge·I`, via explicit inverse and determinant.
pub fn gaussian_logpdf_direct(data: &[Vec<f64>], ridge: f64, x: &[f64]) -> f64 {
    let n = data.len();
    let d = data[0].len();
    let mean = DVector::from_fn(d, |j, _| data.iter().map(|r| r[j]).sum::<f64>() / n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for r in data {
        let c = DVector::from_column_slice(r) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n as f64;
    cov += DMatrix::identity(d, d) * ridge;
    let inv = cov.clone().try_inverse().expect("invertible covariance");
    let diff = DVector::from_column_slice(x) - &mean;
    let maha = (diff.transpose() * inv * &diff)[(0, 0)];
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + maha)
}

pub fn rbf_gram(x: &[Vec<f64>], gamma: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        (-gamma * d2).exp()
    })
}

/// Minimum of `½ αᵀKα` over `0 ≤ α ≤ c`, `Σα = 1`, by enumerating every
/// assignment of each multiplier to {0, c, free} and solving the equality-
/// constrained problem on the free set.
pub fn ocsvm_dual_bruteforce(k: &DMatrix<f64>, c: f64) -> f64 {
    let n = k.nrows();
    let mut best = f64::INFINITY;
    let mut state = vec![0u8; n];
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let upper: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
        let mut alpha = vec![0.0; n];
        for &i in &upper {
            alpha[i] = c;
        }
        let remaining = 1.0 - c * upper.len() as f64;
        let feasible = if free.is_empty() {
            remaining.abs() < 1e-12
        } else {
            let f = free.len();
            let mut a = DMatrix::zeros(f + 1, f + 1);
            let mut rhs = DVector::zeros(f + 1);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = k[(i, j)];
                }
                a[(r, f)] = -1.0;
                a[(f, r)] = 1.0;
                rhs[r] = -upper.iter().map(|&j| k[(i, j)] * c).sum::<f64>();
            }
            rhs[f] = remaining;
            match a.lu().solve(&rhs) {
                Some(sol) => {
                    let ok = (0..f).all(|r| sol[r] >= -1e-12 && sol[r] <= c + 1e-12);
                    for (r, &i) in free.iter().enumerate() {
                        alpha[i] = sol[r];
                    }
                    ok
                }
                None => false,
            }
        };
        if feasible {
            let av = DVector::from_vec(alpha);
            let obj = 0.5 * (av.transpose() * k * &av)[(0, 0)];
            best = best.min(obj);
        }
        let mut t = 0;
        loop {
            if t == n {
                return best;
            }
            state[t] += 1;
            if state[t] < 3 {
                break;
            }
            state[t] = 0;
            t += 1;
        }
    }
}

/// Largest KKT violation `max_{α_j>0} G_j − min_{α_i<c} G_i` with `G = Kα`.
pub fn kkt_violation(k: &DMatrix<f64>, alpha: &[f64], c: f64) -> f64 {
    let g = k * DVector::from_column_slice(alpha);
    let mut up = f64::INFINITY;
    let mut low = f64::NEG_INFINITY;
    for (i, &a) in alpha.iter().enumerate() {
        if a < c {
            up = up.min(g[i]);
        }
        if a > 0.0 {
            low = low.max(g[i]);
        }
    }
    (low - up).max(0.0)
}
