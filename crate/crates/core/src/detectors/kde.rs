//! Gaussian kernel density estimation, scored in log space.

use std::sync::Arc;

use super::default_gamma;
use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, sq_dist, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct KdeModel {
    pub references: Arc<Tensor>,
    pub gamma: f64,
}

/// Fits a KDE; `gamma` defaults to [`default_gamma`] of the references.
pub fn fit_kde(reps: &Tensor, gamma: Option<f64>) -> Result<KdeModel> {
    if reps.rank() != 2 {
        return Err(Error::shape("fit_kde", format!("expected a matrix, got {:?}", reps.shape())));
    }
    let gamma = match gamma {
        Some(g) if g > 0.0 && g.is_finite() => g,
        Some(g) => return Err(Error::invalid(format!("gamma must be positive, got {g}"))),
        None => default_gamma(reps)?,
    };
    Ok(KdeModel { references: Arc::new(reps.clone()), gamma })
}

impl KdeModel {
    /// `ln((1/γ) Σᵢ exp(−γ‖x − rᵢ‖²))` per query row.
    pub fn score(&self, queries: &Tensor) -> Result<Vec<f64>> {
        let d = self.references.cols();
        if queries.cols() != d {
            return Err(Error::shape("score_kde", format!("query dim {}, reference dim {d}", queries.cols())));
        }
        let n = self.references.rows();
        let mut logits = vec![0.0; n];
        Ok((0..queries.rows())
            .map(|q| {
                let x = queries.row(q);
                for (i, l) in logits.iter_mut().enumerate() {
                    *l = -self.gamma * sq_dist(x, self.references.row(i));
                }
                log_sum_exp(&logits) - self.gamma.ln()
            })
            .collect())
    }
}

pub fn score_kde(model: &KdeModel, queries: &Tensor) -> Result<Vec<f64>> {
    model.score(queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_reference_at_query() {
        let r = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let m = fit_kde(&r, Some(0.5)).unwrap();
        let s = m.score(&r).unwrap()[0];
        assert!((s.exp() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_equidistant_references() {
        let r = Tensor::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let m = fit_kde(&r, Some(0.7)).unwrap();
        let s = m.score(&Tensor::from_rows(&[[0.0, 0.0]]).unwrap()).unwrap()[0];
        let want = (2.0 / 0.7) * (-0.7f64).exp();
        assert!((s.exp() - want).abs() < 1e-14);
    }

    #[test]
    fn far_queries_stay_finite() {
        let r = Tensor::from_rows(&[[0.0]]).unwrap();
        let m = fit_kde(&r, Some(10.0)).unwrap();
        let s = m.score(&Tensor::from_rows(&[[100.0]]).unwrap()).unwrap()[0];
        assert!(s.is_finite());
        assert!((s - (-1e5 - 10f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn validation() {
        let r = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(fit_kde(&r, Some(-1.0)).is_err());
        let m = fit_kde(&r, None).unwrap();
        assert!(m.score(&Tensor::zeros(&[1, 3])).is_err());
    }
}
