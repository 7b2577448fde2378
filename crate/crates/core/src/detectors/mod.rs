//! One-class detectors fitted on frozen representations.

mod gde;
mod kde;
mod ocsvm;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

pub use gde::{fit_gde, score_gde, GdeModel, RIDGE};
pub use kde::{fit_kde, score_kde, KdeModel};
pub use ocsvm::{
    fit_ocsvm, fit_ocsvm_with, score_ocsvm, OcsvmFit, OcsvmModel, SolverSettings, DEFAULT_MAX_ITER, DEFAULT_NU,
    DEFAULT_TOL, FULL_CACHE_LIMIT,
};

use crate::augment::{rot90, ImageBatch};
use crate::autodiff::Mode;
use crate::error::{Error, Result};
use crate::io::{self, put_tensor, Reader};
use crate::network::ModelBundle;
use crate::tensor::{log_sum_exp, sq_dist, Tensor};

pub const DETECTOR_MAGIC: &[u8; 4] = b"OCD1";
pub const DETECTOR_VERSION: u16 = 1;
/// Multiplier applied to the library-default bandwidth `1/(d·Var)`.
pub const GAMMA_SCALE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(Error::invalid(format!("rbf gamma must be positive, got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => crate::tensor::dot(x, y),
            KernelSpec::Rbf { gamma } => (-gamma * sq_dist(x, y)).exp(),
        }
    }
}

/// How `Var(f)` in the bandwidth heuristic is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VarianceRule {
    /// Variance of all `n·d` values pooled together.
    #[default]
    Pooled,
    /// Mean of the per-dimension variances.
    PerDimMean,
}

impl fmt::Display for VarianceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceRule::Pooled => "pooled",
            VarianceRule::PerDimMean => "per_dim_mean",
        })
    }
}

impl FromStr for VarianceRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(VarianceRule::Pooled),
            "per_dim_mean" => Ok(VarianceRule::PerDimMean),
            _ => Err(Error::invalid(format!("unknown variance rule '{s}'"))),
        }
    }
}

/// `10 / (d · Var)` with pooled variance.
pub fn default_gamma(reps: &Tensor) -> Result<f64> {
    gamma_heuristic(reps, VarianceRule::Pooled, GAMMA_SCALE)
}

pub fn gamma_heuristic(reps: &Tensor, rule: VarianceRule, scale: f64) -> Result<f64> {
    let (n, d) = (reps.rows(), reps.cols());
    if reps.rank() != 2 || n < 2 {
        return Err(Error::invalid("bandwidth heuristic needs at least 2 rows"));
    }
    let var = match rule {
        VarianceRule::Pooled => {
            let m = reps.sum() / reps.len() as f64;
            reps.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / reps.len() as f64
        }
        VarianceRule::PerDimMean => {
            let mut total = 0.0;
            for j in 0..d {
                let m = (0..n).map(|i| reps.row(i)[j]).sum::<f64>() / n as f64;
                total += (0..n).map(|i| (reps.row(i)[j] - m).powi(2)).sum::<f64>() / n as f64;
            }
            total / d as f64
        }
    };
    if !(var > 0.0) {
        return Err(Error::invalid("representations have zero variance"));
    }
    Ok(scale / (d as f64 * var))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurrogateVariant {
    ZeroOnly,
    SumAll,
}

impl fmt::Display for SurrogateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurrogateVariant::ZeroOnly => "zero_only",
            SurrogateVariant::SumAll => "sum_all",
        })
    }
}

impl FromStr for SurrogateVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_only" => Ok(SurrogateVariant::ZeroOnly),
            "sum_all" => Ok(SurrogateVariant::SumAll),
            _ => Err(Error::invalid(format!("unknown surrogate variant '{s}'"))),
        }
    }
}

fn softmax_column(logits: &Tensor, class: usize) -> Vec<f64> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            (row[class] - log_sum_exp(row)).exp()
        })
        .collect()
}

/// Normality score from the rotation classifier's own probabilities.
pub fn rotation_surrogate_score(model: &ModelBundle, x: &ImageBatch, variant: SurrogateVariant) -> Result<Vec<f64>> {
    if model.config.q_outputs != 4 {
        return Err(Error::invalid(format!(
            "rotation surrogate needs 4 classifier outputs, model has {}",
            model.config.q_outputs
        )));
    }
    match variant {
        SurrogateVariant::ZeroOnly => Ok(softmax_column(&model.forward_q(&x.to_tensor(), Mode::Eval)?, 0)),
        SurrogateVariant::SumAll => {
            let mut total = vec![0.0; x.count()];
            for y in 0..4 {
                let p = softmax_column(&model.forward_q(&rot90(x, y)?.to_tensor(), Mode::Eval)?, y);
                total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
            }
            Ok(total)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectorKind {
    Ocsvm,
    Kde,
    Gde,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Ocsvm => "ocsvm",
            DetectorKind::Kde => "kde",
            DetectorKind::Gde => "gde",
        })
    }
}

impl FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ocsvm" => Ok(DetectorKind::Ocsvm),
            "kde" => Ok(DetectorKind::Kde),
            "gde" => Ok(DetectorKind::Gde),
            _ => Err(Error::invalid(format!("unknown detector '{s}'"))),
        }
    }
}

/// A fitted detector of any kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Detector {
    Ocsvm(OcsvmModel),
    Kde(KdeModel),
    Gde(GdeModel),
}

impl Detector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::Ocsvm(_) => DetectorKind::Ocsvm,
            Detector::Kde(_) => DetectorKind::Kde,
            Detector::Gde(_) => DetectorKind::Gde,
        }
    }

    pub fn score(&self, queries: &Tensor) -> Result<Vec<f64>> {
        match self {
            Detector::Ocsvm(m) => m.score(queries),
            Detector::Kde(m) => m.score(queries),
            Detector::Gde(m) => m.score(queries),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut p = Vec::new();
        let (tag, kernel, tensors): (u8, Option<KernelSpec>, Vec<Tensor>) = match self {
            Detector::Ocsvm(m) => (
                1,
                Some(m.kernel),
                vec![
                    m.support_vectors.clone(),
                    Tensor::vector(m.alphas.clone()).expect("support set is non-empty"),
                    Tensor::vector(vec![m.rho, m.nu]).unwrap(),
                ],
            ),
            Detector::Kde(m) => (
                2,
                Some(KernelSpec::Rbf { gamma: m.gamma }),
                vec![m.references.as_ref().clone()],
            ),
            Detector::Gde(m) => {
                let d = m.dim();
                (
                    3,
                    None,
                    vec![
                        Tensor::vector(m.mean.clone()).unwrap(),
                        Tensor::matrix(d, d, m.chol.clone()).unwrap(),
                        Tensor::scalar(m.log_det),
                    ],
                )
            }
        };
        p.push(tag);
        match kernel {
            None => p.extend_from_slice(&[0u8; 9]),
            Some(KernelSpec::Linear) => {
                p.push(1);
                p.extend_from_slice(&0f64.to_le_bytes());
            }
            Some(KernelSpec::Rbf { gamma }) => {
                p.push(2);
                p.extend_from_slice(&gamma.to_le_bytes());
            }
        }
        p.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in &tensors {
            put_tensor(&mut p, t);
        }
        io::seal(DETECTOR_MAGIC, DETECTOR_VERSION, &p)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, payload) = io::unseal(DETECTOR_MAGIC, DETECTOR_VERSION, bytes)?;
        let mut r = Reader::new(payload);
        let tag = r.u8()?;
        let ktag = r.u8()?;
        let kparam = r.f64()?;
        let kernel = match ktag {
            0 => None,
            1 => Some(KernelSpec::Linear),
            2 => Some(KernelSpec::Rbf { gamma: kparam }),
            t => return Err(Error::Format(format!("unknown kernel tag {t}"))),
        };
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(16));
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        if !r.is_done() {
            return Err(Error::Format("trailing bytes in detector file".into()));
        }
        let bad = || Error::Format("detector payload does not match its kind".into());
        let detector = match (tag, kernel, tensors.as_slice()) {
            (1, Some(kernel), [sv, alphas, extra]) if extra.len() == 2 && alphas.len() == sv.rows() => {
                Detector::Ocsvm(OcsvmModel {
                    support_vectors: sv.clone(),
                    alphas: alphas.data().to_vec(),
                    rho: extra.data()[0],
                    kernel,
                    nu: extra.data()[1],
                })
            }
            (2, Some(KernelSpec::Rbf { gamma }), [refs]) => {
                Detector::Kde(KdeModel { references: Arc::new(refs.clone()), gamma })
            }
            (3, None, [mean, chol, log_det]) if chol.len() == mean.len() * mean.len() => Detector::Gde(GdeModel {
                mean: mean.data().to_vec(),
                chol: chol.data().to_vec(),
                log_det: log_det.item(),
            }),
            (1..=3, _, _) => return Err(bad()),
            (t, _, _) => return Err(Error::Format(format!("unknown detector tag {t}"))),
        };
        Ok(detector)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_artifact(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;

    #[test]
    fn gamma_arithmetic() {
        // pooled variance of {0, 1} repeated is 0.25
        let x = Tensor::from_rows(&[[0.0, 1.0, 0.0, 1.0], [1.0, 0.0, 1.0, 0.0]]).unwrap();
        assert!((default_gamma(&x).unwrap() - 10.0).abs() < 1e-12);
        let g2 = default_gamma(&x.scale(3.0)).unwrap();
        assert!((g2 - 10.0 / 9.0).abs() < 1e-12);
        assert!(default_gamma(&Tensor::filled(&[3, 2], 1.5)).is_err());
        let pd = gamma_heuristic(&x, VarianceRule::PerDimMean, 10.0).unwrap();
        assert!((pd - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rbf_kernel_properties() {
        let k = KernelSpec::Rbf { gamma: 0.4 };
        let (a, b) = ([1.0, -2.0], [0.5, 3.0]);
        assert_eq!(k.eval(&a, &a), 1.0);
        assert_eq!(k.eval(&a, &b), k.eval(&b, &a));
        assert!(KernelSpec::Rbf { gamma: 0.0 }.validate().is_err());
    }

    fn zero_classifier() -> ModelBundle {
        let cfg = NetworkConfig {
            input_dim: 16,
            encoder_widths: vec![8],
            head_depth: 0,
            head_output_dim: 8,
            ..NetworkConfig::default()
        };
        let mut m = ModelBundle::init(cfg).unwrap();
        m.classifier.weight.data_mut().fill(0.0);
        m.classifier.bias.data_mut().fill(0.0);
        m
    }

    #[test]
    fn uniform_classifier_surrogate() {
        let m = zero_classifier();
        let x = ImageBatch::new(3, 1, 4, 4, (0..48).map(|i| i as f64 / 48.0).collect()).unwrap();
        for s in rotation_surrogate_score(&m, &x, SurrogateVariant::ZeroOnly).unwrap() {
            assert!((s - 0.25).abs() < 1e-15);
        }
        for s in rotation_surrogate_score(&m, &x, SurrogateVariant::SumAll).unwrap() {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn surrogate_needs_four_outputs() {
        let cfg = NetworkConfig { input_dim: 16, encoder_widths: vec![8], q_outputs: 3, ..NetworkConfig::default() };
        let m = ModelBundle::init(cfg).unwrap();
        let x = ImageBatch::new(1, 1, 4, 4, vec![0.0; 16]).unwrap();
        assert!(rotation_surrogate_score(&m, &x, SurrogateVariant::ZeroOnly).is_err());
    }

    #[test]
    fn detector_round_trip() {
        let x = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.5], [0.3, -0.2], [2.0, 1.0]]).unwrap();
        let all = [
            Detector::Ocsvm(fit_ocsvm(&x, 0.5, KernelSpec::Rbf { gamma: 0.5 }).unwrap()),
            Detector::Ocsvm(fit_ocsvm(&x, 0.5, KernelSpec::Linear).unwrap()),
            Detector::Kde(fit_kde(&x, None).unwrap()),
            Detector::Gde(fit_gde(&x).unwrap()),
        ];
        for d in all {
            let bytes = d.to_bytes();
            let back = Detector::from_bytes(&bytes).unwrap();
            assert_eq!(back, d);
            assert_eq!(back.score(&x).unwrap(), d.score(&x).unwrap());
            let mut bad = bytes.clone();
            bad[9] ^= 1;
            assert!(matches!(Detector::from_bytes(&bad), Err(Error::Checksum { .. })));
        }
    }
}
