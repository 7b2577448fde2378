//! ROC-AUC, MMD to the uniform hypersphere, and score ensembling.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::NORM_EPS;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{sq_dist, Tensor};

/// Scores (higher = more normal) with inlier labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape("scored_set", format!("{} scores, {} labels", scores.len(), labels.len())));
        }
        Ok(ScoredSet { scores, labels })
    }
}

/// Mann-Whitney AUC: `P(inlier > outlier) + ½ P(tie)`.
pub fn auc(set: &ScoredSet) -> Result<f64> {
    if set.scores.len() != set.labels.len() {
        return Err(Error::shape("auc", "scores and labels differ in length"));
    }
    if set.scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("AUC of NaN scores"));
    }
    let n_in = set.labels.iter().filter(|&&l| l).count() as u64;
    let n_out = set.labels.len() as u64 - n_in;
    if n_in == 0 || n_out == 0 {
        return Err(Error::invalid("AUC needs at least one inlier and one outlier"));
    }
    let mut order: Vec<usize> = (0..set.scores.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));
    // twice the number of winning pairs, counting a tie as one
    let mut twice = 0u64;
    let mut outliers_below = 0u64;
    let mut start = 0;
    while start < order.len() {
        let s = set.scores[order[start]];
        let mut end = start;
        let (mut tin, mut tout) = (0u64, 0u64);
        // -0.0 and 0.0 tie
        while end < order.len() && set.scores[order[end]] == s {
            if set.labels[order[end]] {
                tin += 1;
            } else {
                tout += 1;
            }
            end += 1;
        }
        twice += 2 * tin * outliers_below + tin * tout;
        outliers_below += tout;
        start = end;
    }
    Ok(twice as f64 / (2 * n_in * n_out) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled sample.
    Median,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Estimator {
    /// V-statistic; zero for identical samples.
    #[default]
    Biased,
    /// U-statistic; unbiased but can be negative.
    Unbiased,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Biased => "biased",
            Estimator::Unbiased => "unbiased",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biased" => Ok(Estimator::Biased),
            "unbiased" => Ok(Estimator::Unbiased),
            _ => Err(Error::invalid(format!("unknown MMD estimator '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmdConfig {
    pub bandwidth: Bandwidth,
    pub estimator: Estimator,
    /// Uniform reference points; `None` draws as many as there are representations.
    pub uniform_samples: Option<usize>,
    pub seed: u64,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig { bandwidth: Bandwidth::Median, estimator: Estimator::Biased, uniform_samples: None, seed: 0 }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median Euclidean distance over distinct pairs of the pooled sample.
pub fn median_bandwidth(x: &Tensor, y: &Tensor) -> Result<f64> {
    let rows: Vec<&[f64]> = (0..x.rows()).map(|i| x.row(i)).chain((0..y.rows()).map(|i| y.row(i))).collect();
    let mut d = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return Err(Error::invalid("median bandwidth needs at least two points"));
    }
    let sigma = median(d);
    if !(sigma > 0.0) {
        return Err(Error::invalid("median pairwise distance is zero"));
    }
    Ok(sigma)
}

fn kernel_mean(a: &Tensor, b: &Tensor, inv: f64, skip_diagonal: bool) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            if skip_diagonal && i == j {
                continue;
            }
            total += (-sq_dist(a.row(i), b.row(j)) * inv).exp();
        }
    }
    let pairs = if skip_diagonal { a.rows() * (a.rows() - 1) } else { a.rows() * b.rows() };
    total / pairs as f64
}

/// Squared MMD between two samples under `exp(−‖x−y‖²/(2σ²))`.
pub fn mmd2(x: &Tensor, y: &Tensor, sigma: f64, estimator: Estimator) -> Result<f64> {
    if x.cols() != y.cols() {
        return Err(Error::shape("mmd", format!("dims {} and {}", x.cols(), y.cols())));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("MMD bandwidth must be positive, got {sigma}")));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(match estimator {
        Estimator::Biased => kernel_mean(x, x, inv, false) + kernel_mean(y, y, inv, false) - 2.0 * kernel_mean(x, y, inv, false),
        Estimator::Unbiased => {
            if x.rows() < 2 || y.rows() < 2 {
                return Err(Error::invalid("unbiased MMD needs at least 2 points per sample"));
            }
            kernel_mean(x, x, inv, true) + kernel_mean(y, y, inv, true) - 2.0 * kernel_mean(x, y, inv, false)
        }
    })
}

/// Projects each row onto the unit sphere.
pub fn normalize_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// `count` points drawn uniformly from the unit sphere in `dim` dimensions.
pub fn uniform_sphere(count: usize, dim: usize, seed: u64) -> Result<Tensor> {
    let mut r = rng::stream(seed, "uniform_sphere");
    let raw: Vec<f64> = (0..count * dim).map(|_| StandardNormal.sample(&mut r)).collect();
    Ok(normalize_rows(&Tensor::matrix(count, dim, raw)?))
}

pub fn mmd_to_uniform(reps: &Tensor, config: &MmdConfig) -> Result<f64> {
    let (n, d) = (reps.rows(), reps.cols());
    if reps.rank() != 2 || n < 2 {
        return Err(Error::invalid("MMD needs at least 2 representations"));
    }
    if d < 2 {
        return Err(Error::invalid("MMD to the sphere needs dimension ≥ 2"));
    }
    let x = normalize_rows(reps);
    let u = uniform_sphere(config.uniform_samples.unwrap_or(n), d, config.seed)?;
    let sigma = match config.bandwidth {
        Bandwidth::Median => median_bandwidth(&x, &u)?,
        Bandwidth::Fixed(s) => s,
    };
    mmd2(&x, &u, sigma, config.estimator)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Normalization {
    #[default]
    ZScore,
    None,
}

impl FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" => Ok(Normalization::ZScore),
            "none" => Ok(Normalization::None),
            _ => Err(Error::invalid(format!("unknown normalization '{s}'"))),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::ZScore => "zscore",
            Normalization::None => "none",
        })
    }
}

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// Elementwise mean of score arrays, optionally z-scored first.
pub fn ensemble_scores(score_vectors: &[Vec<f64>], normalization: Normalization) -> Result<Vec<f64>> {
    let first = score_vectors.first().ok_or_else(|| Error::invalid("ensemble of zero score arrays"))?;
    let len = first.len();
    if score_vectors.iter().any(|s| s.len() != len) {
        return Err(Error::shape("ensemble_scores", "score arrays differ in length"));
    }
    let mut out = vec![0.0; len];
    for s in score_vectors {
        match normalization {
            Normalization::None => out.iter_mut().zip(s).for_each(|(o, v)| *o += v),
            Normalization::ZScore => {
                let (m, sd) = mean_std(s);
                if sd > 0.0 {
                    out.iter_mut().zip(s).for_each(|(o, v)| *o += (v - m) / sd);
                }
            }
        }
    }
    let m = score_vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= m);
    Ok(out)
}

/// Per-sample scores of one evaluation split.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ids: Vec<usize>,
    pub set: ScoredSet,
}

impl EvalReport {
    pub fn new(set: ScoredSet) -> Self {
        EvalReport { ids: (0..set.scores.len()).collect(), set }
    }

    pub fn auc(&self) -> Result<f64> {
        auc(&self.set)
    }

    /// `sample_id,score,label` rows followed by a `# auc=` summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,score,label\n");
        for ((id, s), l) in self.ids.iter().zip(&self.set.scores).zip(&self.set.labels) {
            let _ = writeln!(out, "{id},{s},{}", u8::from(*l));
        }
        match self.auc() {
            Ok(a) => {
                let _ = writeln!(out, "# auc={a}");
            }
            Err(_) => out.push_str("# auc=undefined\n"),
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut ids = Vec::new();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if i == 0 || line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad("expected sample_id,score,label"));
            }
            ids.push(f[0].parse().map_err(|_| bad("bad sample id"))?);
            scores.push(f[1].parse().map_err(|_| bad("bad score"))?);
            labels.push(match f[2] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label must be 0 or 1")),
            });
        }
        Ok(EvalReport { ids, set: ScoredSet { scores, labels } })
    }
}

/// `batch_size_or_tag,mmd` rows.
pub fn mmd_sweep_csv(rows: &[(String, f64)]) -> String {
    let mut out = String::from("batch_size_or_tag,mmd\n");
    for (tag, v) in rows {
        let _ = writeln!(out, "{tag},{v}");
    }
    out
}
