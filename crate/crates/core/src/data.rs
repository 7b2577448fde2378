//! Synthetic one-class datasets with optional training-set contamination.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::augment::{Batch, ImageBatch};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// Oriented bars on a square canvas.
    ShapesImages,
    GaussianBlobs,
    Ring,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::ShapesImages => "shapes_images",
            DatasetKind::GaussianBlobs => "gaussian_blobs",
            DatasetKind::Ring => "ring",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shapes_images" => Ok(DatasetKind::ShapesImages),
            "gaussian_blobs" => Ok(DatasetKind::GaussianBlobs),
            "ring" => Ok(DatasetKind::Ring),
            _ => Err(Error::invalid(format!("unknown dataset kind '{s}'"))),
        }
    }
}

/// Shape class drawn for outlier images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutlierShape {
    /// Two perpendicular bars.
    Cross,
    /// The inlier bar turned by `outlier_angle` degrees.
    RotatedBar,
}

impl fmt::Display for OutlierShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutlierShape::Cross => "cross",
            OutlierShape::RotatedBar => "rotated_bar",
        })
    }
}

impl FromStr for OutlierShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(OutlierShape::Cross),
            "rotated_bar" => Ok(OutlierShape::RotatedBar),
            _ => Err(Error::invalid(format!("unknown outlier shape '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Canvas side in pixels.
    pub image_size: usize,
    /// Mean inlier bar orientation in degrees, counterclockwise from horizontal.
    pub inlier_angle: f64,
    /// Standard deviation of the bar orientation in degrees.
    pub angle_jitter: f64,
    pub outlier: OutlierShape,
    pub outlier_angle: f64,
    /// Maximum bar-centre offset in pixels along each axis.
    pub center_jitter: f64,
    /// Relative jitter of bar length and thickness.
    pub stroke_jitter: f64,
    /// Bar length as a fraction of the canvas side.
    pub bar_length: f64,
    /// Bar thickness in pixels.
    pub bar_thickness: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Dimension of vector datasets.
    pub dim: usize,
    /// Distance of the outlier cluster from the inlier mean (blobs) or
    /// radius of the outlier cluster (ring, relative to the unit ring).
    pub outlier_shift: f64,
    pub n_train: usize,
    pub n_test_in: usize,
    pub n_test_out: usize,
    pub contamination_ratio: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::ShapesImages,
            image_size: 12,
            inlier_angle: 0.0,
            angle_jitter: 10.0,
            outlier: OutlierShape::RotatedBar,
            outlier_angle: 90.0,
            center_jitter: 1.0,
            stroke_jitter: 0.15,
            bar_length: 0.7,
            bar_thickness: 1.5,
            noise: 0.05,
            dim: 8,
            outlier_shift: 3.0,
            n_train: 256,
            n_test_in: 128,
            n_test_out: 128,
            contamination_ratio: 0.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.contamination_ratio) {
            return Err(Error::invalid(format!(
                "contamination_ratio must lie in [0, 1), got {}",
                self.contamination_ratio
            )));
        }
        if self.n_train == 0 || self.n_test_in == 0 || self.n_test_out == 0 {
            return Err(Error::invalid("every split needs at least one sample"));
        }
        match self.kind {
            DatasetKind::ShapesImages => {
                if self.image_size < 4 {
                    return Err(Error::invalid("image_size must be at least 4"));
                }
                if !(self.bar_length > 0.0 && self.bar_thickness > 0.0) {
                    return Err(Error::invalid("bar length and thickness must be positive"));
                }
                if !(0.0..1.0).contains(&self.stroke_jitter) || self.center_jitter < 0.0 || self.angle_jitter < 0.0 {
                    return Err(Error::invalid("jitter parameters out of range"));
                }
            }
            DatasetKind::Ring if self.dim < 2 => return Err(Error::invalid("ring data needs dim ≥ 2")),
            _ if self.dim == 0 => return Err(Error::invalid("dim must be positive")),
            _ => {}
        }
        if self.noise < 0.0 {
            return Err(Error::invalid("noise must be non-negative"));
        }
        Ok(())
    }

    /// Number of outlier-class samples mixed into the training split.
    pub fn contaminated_count(&self) -> usize {
        (self.contamination_ratio * self.n_train as f64).floor() as usize
    }
}

/// Generated splits; provenance `true` marks inlier-class samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Batch,
    pub train_inlier: Vec<bool>,
    pub test: Batch,
    pub test_inlier: Vec<bool>,
}

fn dist_to_segment(px: f64, py: f64, cx: f64, cy: f64, dx: f64, dy: f64, half: f64) -> f64 {
    // segment centred at (cx, cy) with unit direction (dx, dy) and half-length `half`
    let (rx, ry) = (px - cx, py - cy);
    let t = (rx * dx + ry * dy).clamp(-half, half);
    ((rx - t * dx).powi(2) + (ry - t * dy).powi(2)).sqrt()
}

struct Stroke {
    angle_deg: f64,
}

fn draw(spec: &DatasetSpec, strokes: &[Stroke], rng: &mut Rng, out: &mut Vec<f64>) {
    let s = spec.image_size;
    let mid = (s as f64 - 1.0) / 2.0;
    let cj = spec.center_jitter;
    let (cx, cy) = if cj > 0.0 { (mid + rng.gen_range(-cj..=cj), mid + rng.gen_range(-cj..=cj)) } else { (mid, mid) };
    let sj = spec.stroke_jitter;
    let mut factor = || if sj > 0.0 { 1.0 + rng.gen_range(-sj..=sj) } else { 1.0 };
    let half_len = 0.5 * spec.bar_length * s as f64 * factor();
    let half_thick = 0.5 * spec.bar_thickness * factor();
    let dirs: Vec<(f64, f64)> = strokes
        .iter()
        .map(|st| {
            let a = st.angle_deg.to_radians();
            // image rows grow downwards
            (a.cos(), -a.sin())
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).unwrap();
    for i in 0..s {
        for j in 0..s {
            let (px, py) = (j as f64, i as f64);
            let d = dirs
                .iter()
                .map(|&(dx, dy)| dist_to_segment(px, py, cx, cy, dx, dy, half_len))
                .fold(f64::INFINITY, f64::min);
            let ink = (half_thick + 0.5 - d).clamp(0.0, 1.0);
            let n = if spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
            out.push((ink + n).clamp(0.0, 1.0));
        }
    }
}

fn bar_angle(spec: &DatasetSpec, base: f64, rng: &mut Rng) -> f64 {
    if spec.angle_jitter > 0.0 {
        base + spec.angle_jitter * Distribution::<f64>::sample(&StandardNormal, rng)
    } else {
        base
    }
}

fn sample_images(spec: &DatasetSpec, inlier: &[bool], rng: &mut Rng) -> Result<Batch> {
    let s = spec.image_size;
    let mut pixels = Vec::with_capacity(inlier.len() * s * s);
    for &is_in in inlier {
        let strokes = if is_in {
            vec![Stroke { angle_deg: bar_angle(spec, spec.inlier_angle, rng) }]
        } else {
            match spec.outlier {
                OutlierShape::RotatedBar => {
                    vec![Stroke { angle_deg: bar_angle(spec, spec.inlier_angle + spec.outlier_angle, rng) }]
                }
                OutlierShape::Cross => {
                    let a = bar_angle(spec, spec.inlier_angle, rng);
                    vec![Stroke { angle_deg: a }, Stroke { angle_deg: a + 90.0 }]
                }
            }
        };
        draw(spec, &strokes, rng, &mut pixels);
    }
    Ok(Batch::Images(ImageBatch::new(inlier.len(), 1, s, s, pixels)?))
}

fn sample_vectors(spec: &DatasetSpec, inlier: &[bool], rng: &mut Rng) -> Result<Batch> {
    let d = spec.dim;
    let mut data = Vec::with_capacity(inlier.len() * d);
    for &is_in in inlier {
        match spec.kind {
            DatasetKind::GaussianBlobs => {
                for k in 0..d {
                    let z: f64 = StandardNormal.sample(rng);
                    data.push(if !is_in && k == 0 { z + spec.outlier_shift } else { z });
                }
            }
            DatasetKind::Ring => {
                let sd = spec.noise.max(0.0);
                let (r, theta) = if is_in {
                    (1.0, rng.gen_range(0.0..std::f64::consts::TAU))
                } else {
                    (rng.gen_range(0.0..=spec.outlier_shift.min(1.0)), rng.gen_range(0.0..std::f64::consts::TAU))
                };
                let mut g = || sd * Distribution::<f64>::sample(&StandardNormal, rng);
                data.push(r * theta.cos() + g());
                data.push(r * theta.sin() + g());
                for _ in 2..d {
                    data.push(g());
                }
            }
            DatasetKind::ShapesImages => unreachable!("images use sample_images"),
        }
    }
    Ok(Batch::Vectors(Tensor::matrix(inlier.len(), d, data)?))
}

fn sample(spec: &DatasetSpec, inlier: &[bool], rng: &mut Rng) -> Result<Batch> {
    match spec.kind {
        DatasetKind::ShapesImages => sample_images(spec, inlier, rng),
        _ => sample_vectors(spec, inlier, rng),
    }
}

/// Draws all splits from the spec's seed.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, "data");
    let k = spec.contaminated_count();
    let mut train_inlier: Vec<bool> = (0..spec.n_train).map(|i| i >= k).collect();
    train_inlier.shuffle(&mut r);
    let mut test_inlier: Vec<bool> = (0..spec.n_test_in + spec.n_test_out).map(|i| i < spec.n_test_in).collect();
    test_inlier.shuffle(&mut r);
    let train = sample(spec, &train_inlier, &mut r)?;
    let test = sample(spec, &test_inlier, &mut r)?;
    Ok(Dataset { train, train_inlier, test, test_inlier })
}

pub const TRAIN_FILE: &str = "train.oct";
pub const TEST_FILE: &str = "test.oct";
pub const TRAIN_MANIFEST: &str = "train_manifest.csv";
pub const TEST_MANIFEST: &str = "test_manifest.csv";

fn provenance(inlier: bool) -> &'static str {
    if inlier {
        "inlier"
    } else {
        "outlier"
    }
}

pub fn batch_to_tensor(b: &Batch) -> Tensor {
    match b {
        Batch::Images(img) => img.to_tensor4(),
        Batch::Vectors(t) => t.clone(),
    }
}

/// Rank-4 tensors load as images, anything else as row vectors.
pub fn tensor_to_batch(t: Tensor) -> Result<Batch> {
    if t.rank() == 4 {
        Ok(Batch::Images(ImageBatch::from_tensor4(&t)?))
    } else if t.rank() == 2 {
        Ok(Batch::Vectors(t))
    } else {
        Err(Error::shape("dataset", format!("expected rank 2 or 4, got {:?}", t.shape())))
    }
}

pub fn train_manifest(inlier: &[bool]) -> String {
    let mut s = String::from("sample_id,provenance\n");
    for (i, &l) in inlier.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", provenance(l));
    }
    s
}

pub fn test_manifest(inlier: &[bool]) -> String {
    let mut s = String::from("sample_id,label,provenance\n");
    for (i, &l) in inlier.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{}", u8::from(l), provenance(l));
    }
    s
}

fn parse_manifest(text: &str) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let tag = line.rsplit(',').next().unwrap_or("");
        out.push(match tag.trim() {
            "inlier" => true,
            "outlier" => false,
            _ => return Err(Error::Parse { line: i + 1, msg: format!("unknown provenance '{tag}'") }),
        });
    }
    Ok(out)
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_tensor(&dir.join(TRAIN_FILE), &batch_to_tensor(&self.train))?;
        io::write_tensor(&dir.join(TEST_FILE), &batch_to_tensor(&self.test))?;
        io::write_atomic(&dir.join(TRAIN_MANIFEST), train_manifest(&self.train_inlier).as_bytes())?;
        io::write_atomic(&dir.join(TEST_MANIFEST), test_manifest(&self.test_inlier).as_bytes())?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let train = tensor_to_batch(io::read_tensor(&dir.join(TRAIN_FILE))?)?;
        let test = tensor_to_batch(io::read_tensor(&dir.join(TEST_FILE))?)?;
        let text = |name: &str| -> Result<String> {
            String::from_utf8(io::read_artifact(&dir.join(name))?)
                .map_err(|_| Error::Format(format!("{name} is not UTF-8")))
        };
        let train_inlier = parse_manifest(&text(TRAIN_MANIFEST)?)?;
        let test_inlier = parse_manifest(&text(TEST_MANIFEST)?)?;
        if train_inlier.len() != train.len() || test_inlier.len() != test.len() {
            return Err(Error::Format("manifest length differs from its split".into()));
        }
        Ok(Dataset { train, train_inlier, test, test_inlier })
    }
}

pub fn gen_data(spec: &DatasetSpec, out_dir: &Path) -> Result<Dataset> {
    let ds = generate(spec)?;
    ds.write(out_dir)?;
    Ok(ds)
}

/// Indices of `k` inlier-provenance training samples, drawn without replacement.
pub fn clean_subset(train_inlier: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut pool: Vec<usize> = (0..train_inlier.len()).filter(|&i| train_inlier[i]).collect();
    if k > pool.len() {
        return Err(Error::invalid(format!("asked for {k} clean inliers, only {} available", pool.len())));
    }
    pool.shuffle(&mut rng::stream(seed, "subset"));
    pool.truncate(k);
    pool.sort_unstable();
    Ok(pool)
}
