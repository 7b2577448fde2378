//! Input attributions for the one-class decision.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::autodiff::{LeafKind, Tape};
use crate::detectors::KdeModel;
use crate::error::{Error, Result};
use crate::network::ModelBundle;
use crate::tensor::Tensor;

pub const DEFAULT_IG_STEPS: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    /// Same shape as the explained input.
    pub values: Tensor,
    pub score_at_input: f64,
    pub score_at_baseline: Option<f64>,
}

impl Attribution {
    /// `|Σ attributions − (score(x) − score(baseline))|`, when a baseline exists.
    pub fn completeness_gap(&self) -> Option<f64> {
        self.score_at_baseline.map(|b| (self.values.sum() - (self.score_at_input - b)).abs())
    }
}

/// A scalar score with its gradient, over a flattened input.
pub trait DifferentiableScore {
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> DifferentiableScore for F
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScoreMode {
    /// KDE log-score, as returned by the detector.
    #[default]
    Log,
    /// `(1/γ) Σ exp(−γ‖f(x) − r‖²)` itself.
    Raw,
}

impl std::fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreMode::Log => "log",
            ScoreMode::Raw => "raw",
        })
    }
}

impl FromStr for ScoreMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(ScoreMode::Log),
            "raw" => Ok(ScoreMode::Raw),
            _ => Err(Error::invalid(format!("unknown score mode '{s}'"))),
        }
    }
}

/// KDE score of `f(x)`; with no model the input itself is the representation.
pub struct KdeScore<'a> {
    pub model: Option<&'a ModelBundle>,
    pub kde: &'a KdeModel,
    pub mode: ScoreMode,
}

impl DifferentiableScore for KdeScore<'_> {
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let xv = tape.input(Tensor::matrix(1, x.len(), x.to_vec())?)?;
        let h = match self.model {
            Some(m) => {
                let bound = m.bind(&mut tape, LeafKind::Const)?;
                m.encode_on(&mut tape, &bound, xv)?
            }
            None => xv,
        };
        let d = tape.value(h).cols();
        if d != self.kde.references.cols() {
            return Err(Error::shape(
                "kde_input_gradient",
                format!("representation dim {d}, KDE reference dim {}", self.kde.references.cols()),
            ));
        }
        let s = tape.kde_log_score(h, self.kde.references.clone(), self.kde.gamma)?;
        let mut grads = tape.backward(s, true)?;
        let log_score = tape.value(s).item();
        let g = grads.take(xv).expect("input gradient requested").into_data();
        Ok(match self.mode {
            ScoreMode::Log => (log_score, g),
            ScoreMode::Raw => {
                let raw = log_score.exp();
                (raw, g.into_iter().map(|v| raw * v).collect())
            }
        })
    }
}

/// Gradient of the KDE score of `f(x)` with respect to a single input `x`.
pub fn kde_input_gradient(model: &ModelBundle, kde: &KdeModel, x: &Tensor, mode: ScoreMode) -> Result<Attribution> {
    let score = KdeScore { model: Some(model), kde, mode };
    let (v, g) = score.value_and_grad(x.data())?;
    Ok(Attribution { values: Tensor::new(x.shape().to_vec(), g)?, score_at_input: v, score_at_baseline: None })
}

/// Integrated gradients along the straight path from `baseline` to `x`,
/// with the midpoint rule over `steps` segments.
pub fn integrated_gradients(
    score: &impl DifferentiableScore,
    x: &Tensor,
    baseline: &Tensor,
    steps: usize,
) -> Result<Attribution> {
    if steps == 0 {
        return Err(Error::invalid("integrated gradients needs at least one step"));
    }
    if x.shape() != baseline.shape() {
        return Err(Error::shape(
            "integrated_gradients",
            format!("input {:?}, baseline {:?}", x.shape(), baseline.shape()),
        ));
    }
    let (xd, bd) = (x.data(), baseline.data());
    let mut acc = vec![0.0; xd.len()];
    let mut point = vec![0.0; xd.len()];
    for t in 1..=steps {
        let a = (t as f64 - 0.5) / steps as f64;
        for ((p, xi), bi) in point.iter_mut().zip(xd).zip(bd) {
            *p = bi + a * (xi - bi);
        }
        let (_, g) = score.value_and_grad(&point)?;
        if g.len() != acc.len() {
            return Err(Error::shape("integrated_gradients", "score gradient length differs from input"));
        }
        acc.iter_mut().zip(&g).for_each(|(s, gi)| *s += gi);
    }
    let values: Vec<f64> = acc
        .iter()
        .zip(xd.iter().zip(bd))
        .map(|(s, (xi, bi))| (xi - bi) * s / steps as f64)
        .collect();
    let (at_input, _) = score.value_and_grad(xd)?;
    let (at_baseline, _) = score.value_and_grad(bd)?;
    Ok(Attribution {
        values: Tensor::new(x.shape().to_vec(), values)?,
        score_at_input: at_input,
        score_at_baseline: Some(at_baseline),
    })
}

/// Attribution values laid out `width` per line.
pub fn grid_csv(values: &Tensor, width: usize) -> Result<String> {
    if width == 0 || !values.len().is_multiple_of(width) {
        return Err(Error::shape("grid_csv", format!("{} values do not fill rows of {width}", values.len())));
    }
    let mut out = String::new();
    for row in values.data().chunks(width) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    Ok(out)
}

const RAMP: &[u8] = b" .:-=+*#%@";

/// Attribution magnitudes as characters, darkest at the largest magnitude.
pub fn ascii_heatmap(values: &Tensor, width: usize) -> Result<String> {
    if width == 0 || !values.len().is_multiple_of(width) {
        return Err(Error::shape("ascii_heatmap", format!("{} values do not fill rows of {width}", values.len())));
    }
    let max = values.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = String::new();
    for row in values.data().chunks(width) {
        for v in row {
            let level = if max > 0.0 { (v.abs() / max * (RAMP.len() - 1) as f64).round() as usize } else { 0 };
            out.push(RAMP[level] as char);
        }
        out.push('\n');
    }
    Ok(out)
}
