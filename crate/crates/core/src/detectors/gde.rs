//! Single multivariate Gaussian density estimator.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RIDGE: f64 = 1e-6;
const MAX_RIDGE_ESCALATIONS: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct GdeModel {
    pub mean: Vec<f64>,
    /// Lower-triangular Cholesky factor of the covariance, row-major `d × d`.
    pub chol: Vec<f64>,
    pub log_det: f64,
}

/// Lower-triangular `L` with `L Lᵀ = a`, or `None` if `a` is not positive definite.
pub(crate) fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// MLE mean and covariance plus a ridge; the ridge is escalated tenfold
/// until the Cholesky factorization succeeds.
pub fn fit_gde(reps: &Tensor) -> Result<GdeModel> {
    let (n, d) = (reps.rows(), reps.cols());
    if reps.rank() != 2 || n < 2 {
        return Err(Error::invalid("Gaussian density estimation needs at least 2 rows"));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(reps.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        let row = reps.row(r);
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in 0..=i {
                cov[i * d + j] += ci * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            cov[i * d + j] /= n as f64;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let mut ridge = RIDGE;
    for _ in 0..=MAX_RIDGE_ESCALATIONS {
        let mut a = cov.clone();
        for i in 0..d {
            a[i * d + i] += ridge;
        }
        if let Some(chol) = cholesky(&a, d) {
            let log_det = 2.0 * (0..d).map(|i| chol[i * d + i].ln()).sum::<f64>();
            return Ok(GdeModel { mean, chol, log_det });
        }
        ridge *= 10.0;
    }
    Err(Error::Numerical(format!("covariance not positive definite even with ridge {:e}", ridge / 10.0)))
}

impl GdeModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Full Gaussian log-density per query row.
    pub fn score(&self, queries: &Tensor) -> Result<Vec<f64>> {
        let d = self.dim();
        if queries.cols() != d {
            return Err(Error::shape("score_gde", format!("query dim {}, model dim {d}", queries.cols())));
        }
        let norm = d as f64 * (2.0 * PI).ln() + self.log_det;
        let mut z = vec![0.0; d];
        Ok((0..queries.rows())
            .map(|q| {
                let x = queries.row(q);
                // forward substitution L z = x − μ
                for i in 0..d {
                    let row = &self.chol[i * d..i * d + i];
                    let s = x[i] - self.mean[i] - row.iter().zip(&z[..i]).map(|(l, zk)| l * zk).sum::<f64>();
                    z[i] = s / self.chol[i * d + i];
                }
                -0.5 * (norm + z.iter().map(|v| v * v).sum::<f64>())
            })
            .collect())
    }
}

pub fn score_gde(model: &GdeModel, queries: &Tensor) -> Result<Vec<f64>> {
    model.score(queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_mode() {
        let m = GdeModel { mean: vec![0.0, 0.0], chol: vec![1.0, 0.0, 0.0, 1.0], log_det: 0.0 };
        let s = m.score(&Tensor::zeros(&[1, 2])).unwrap()[0];
        assert!((s + (2.0 * PI).ln()).abs() < 1e-15);
        assert!((s + 1.8379).abs() < 1e-4);
    }

    #[test]
    fn two_point_mle() {
        let m = fit_gde(&Tensor::from_rows(&[[-1.0], [1.0]]).unwrap()).unwrap();
        assert_eq!(m.mean, vec![0.0]);
        assert!((m.chol[0] * m.chol[0] - (1.0 + 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_data_uses_ridge() {
        let x = Tensor::from_rows(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        let m = fit_gde(&x).unwrap();
        assert!(m.log_det.is_finite());
        assert!(fit_gde(&Tensor::from_rows(&[[1.0]]).unwrap()).is_err());
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
        let l = cholesky(&[4.0, 2.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(l[0], 2.0);
        assert_eq!(l[2], 1.0);
        assert!((l[3] - 2f64.sqrt()).abs() < 1e-15);
    }
}
