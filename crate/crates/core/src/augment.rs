//! View augmentation and the distribution-augmentation transform set.
//!
//! View augmentations are stochastic and produce the two views a contrastive
//! pair is built from. Distribution transforms are deterministic members of
//! the dihedral group of the square (rotations by multiples of 90° and the
//! horizontal flip); each transformed copy of an image is a new instance.
//!
//! Rotation is counter-clockwise: one step maps `out[c, i, j] = in[c, j, W-1-i]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Batch of square images laid out as `[count][channels][size][size]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    count: usize,
    channels: usize,
    size: usize,
    pixels: Vec<f64>,
}

impl ImageBatch {
    pub fn new(count: usize, channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if count == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape("image_batch", "zero dimension"));
        }
        if height != width {
            return Err(Error::shape("image_batch", format!("non-square images {height}x{width}")));
        }
        if pixels.len() != count * channels * height * width {
            return Err(Error::shape("image_batch", format!("{} pixels for {count}x{channels}x{height}x{width}", pixels.len())));
        }
        Ok(ImageBatch { count, channels, size: width, pixels })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Values per image.
    pub fn image_len(&self) -> usize {
        self.channels * self.size * self.size
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    fn image_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.image_len();
        &mut self.pixels[i * n..(i + 1) * n]
    }

    pub fn select(&self, idx: &[usize]) -> Result<ImageBatch> {
        let mut pixels = Vec::with_capacity(idx.len() * self.image_len());
        for &i in idx {
            if i >= self.count {
                return Err(Error::shape("select", format!("image {i} of {}", self.count)));
            }
            pixels.extend_from_slice(self.image(i));
        }
        ImageBatch::new(idx.len(), self.channels, self.size, self.size, pixels)
    }

    /// Flattened `[count, channels·size·size]` matrix for the encoder.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.count, self.image_len(), self.pixels.clone()).unwrap()
    }

    /// Inverse of [`ImageBatch::to_tensor`]; the rank-4 `[n, c, h, w]` form is also accepted.
    pub fn from_tensor(t: &Tensor, channels: usize, size: usize) -> Result<Self> {
        ImageBatch::new(t.rows(), channels, size, size, t.data().to_vec())
    }

    /// Rank-4 `[n, c, h, w]` tensor.
    pub fn to_tensor4(&self) -> Tensor {
        Tensor::new(vec![self.count, self.channels, self.size, self.size], self.pixels.clone()).unwrap()
    }

    pub fn from_tensor4(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[n, c, h, w] => ImageBatch::new(n, c, h, w, t.data().to_vec()),
            s => Err(Error::shape("image_batch", format!("expected rank-4 tensor, got {s:?}"))),
        }
    }

    fn map_images(&self, f: impl Fn(&[f64], &mut [f64], usize, usize)) -> ImageBatch {
        let mut out = self.clone();
        let (c, w) = (self.channels, self.size);
        for i in 0..self.count {
            f(self.image(i), out.image_mut(i), c, w);
        }
        out
    }
}

/// Rotates every image counter-clockwise by `k` quarter turns.
pub fn rot90(img: &ImageBatch, k: usize) -> Result<ImageBatch> {
    if k > 3 {
        return Err(Error::invalid(format!("rotation count {k} not in 0..=3")));
    }
    let mut out = img.clone();
    for _ in 0..k {
        out = out.map_images(|src, dst, c, w| {
            for ch in 0..c {
                let base = ch * w * w;
                for i in 0..w {
                    for j in 0..w {
                        dst[base + i * w + j] = src[base + j * w + (w - 1 - i)];
                    }
                }
            }
        });
    }
    Ok(out)
}

/// Mirrors every image left-to-right.
pub fn hflip(img: &ImageBatch) -> ImageBatch {
    img.map_images(|src, dst, c, w| {
        for ch in 0..c {
            let base = ch * w * w;
            for i in 0..w {
                for j in 0..w {
                    dst[base + i * w + j] = src[base + i * w + (w - 1 - j)];
                }
            }
        }
    })
}

/// Element of the dihedral group: optional horizontal flip, then `rotation`
/// counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DistTransform {
    pub rotation: u8,
    pub flip: bool,
}

impl DistTransform {
    pub const IDENTITY: DistTransform = DistTransform { rotation: 0, flip: false };

    pub fn new(rotation: u8, flip: bool) -> Result<Self> {
        if rotation > 3 {
            return Err(Error::invalid(format!("rotation {rotation} not in 0..=3")));
        }
        Ok(DistTransform { rotation, flip })
    }

    pub fn apply(&self, img: &ImageBatch) -> ImageBatch {
        let base = if self.flip { hflip(img) } else { img.clone() };
        rot90(&base, self.rotation as usize).expect("rotation validated at construction")
    }
}

impl fmt::Display for DistTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.rotation, self.flip) {
            (0, false) => write!(f, "identity"),
            (0, true) => write!(f, "hflip"),
            (r, false) => write!(f, "rot{}", 90 * r as u32),
            (r, true) => write!(f, "rot{}+hflip", 90 * r as u32),
        }
    }
}

impl FromStr for DistTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (rot, flip) = match s.strip_suffix("+hflip") {
            Some(r) => (r, true),
            None if s == "hflip" => ("identity", true),
            None => (s, false),
        };
        let rotation = match rot {
            "identity" | "rot0" => 0,
            "rot90" => 1,
            "rot180" => 2,
            "rot270" => 3,
            _ => return Err(Error::invalid(format!("unknown distribution transform {s:?}"))),
        };
        DistTransform::new(rotation, flip)
    }
}

/// Ordered set of distribution transforms; always contains the identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistSet(Vec<DistTransform>);

impl DistSet {
    pub fn new(transforms: Vec<DistTransform>) -> Result<Self> {
        if !transforms.contains(&DistTransform::IDENTITY) {
            return Err(Error::invalid("distribution set must contain the identity"));
        }
        for (i, t) in transforms.iter().enumerate() {
            if transforms[..i].contains(t) {
                return Err(Error::invalid(format!("duplicate distribution transform {t}")));
            }
        }
        Ok(DistSet(transforms))
    }

    pub fn identity() -> Self {
        DistSet(vec![DistTransform::IDENTITY])
    }

    /// `{identity, rot90, rot180, rot270}`.
    pub fn rotations() -> Self {
        DistSet((0..4).map(|r| DistTransform { rotation: r, flip: false }).collect())
    }

    /// `{identity, hflip, rot90, rot90+hflip}`.
    pub fn flip_rotations() -> Self {
        DistSet(vec![
            DistTransform::IDENTITY,
            DistTransform { rotation: 0, flip: true },
            DistTransform { rotation: 1, flip: false },
            DistTransform { rotation: 1, flip: true },
        ])
    }

    pub fn transforms(&self) -> &[DistTransform] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0 == [DistTransform::IDENTITY]
    }

    pub fn has_flip(&self) -> bool {
        self.0.iter().any(|t| t.flip)
    }
}

impl fmt::Display for DistSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", names.join(","))
    }
}

impl FromStr for DistSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rotations" => Ok(DistSet::rotations()),
            "flip_rotations" => Ok(DistSet::flip_rotations()),
            list => DistSet::new(list.split(',').map(str::parse).collect::<Result<_>>()?),
        }
    }
}

/// One stochastic step of the view augmentation.
#[derive(Clone, Debug, PartialEq)]
pub enum ViewOp {
    /// Random crop covering an area fraction in `[min, max]`, resized back bilinearly.
    CropResize { min: f64, max: f64 },
    HFlip { p: f64 },
    /// Additive brightness in `[-brightness, brightness]`, contrast factor in `[1-contrast, 1+contrast]`.
    ColorJitter { brightness: f64, contrast: f64 },
    Grayscale { p: f64 },
    Blur { sigma_min: f64, sigma_max: f64 },
    GaussianNoise { sigma: f64 },
    ScaleJitter { min: f64, max: f64 },
}

impl ViewOp {
    fn is_image_op(&self) -> bool {
        !matches!(self, ViewOp::GaussianNoise { .. } | ViewOp::ScaleJitter { .. })
    }

    fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let ok = match *self {
            ViewOp::CropResize { min, max } => min > 0.0 && min <= max && max <= 1.0,
            ViewOp::HFlip { p } | ViewOp::Grayscale { p } => prob(p),
            ViewOp::ColorJitter { brightness, contrast } => brightness >= 0.0 && (0.0..=1.0).contains(&contrast),
            ViewOp::Blur { sigma_min, sigma_max } => sigma_min >= 0.0 && sigma_min <= sigma_max,
            ViewOp::GaussianNoise { sigma } => sigma >= 0.0,
            ViewOp::ScaleJitter { min, max } => min > 0.0 && min <= max,
        };
        if ok && [self.params()].iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid view operation parameters {self:?}")))
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            ViewOp::CropResize { min, max } | ViewOp::ScaleJitter { min, max } => vec![min, max],
            ViewOp::HFlip { p } | ViewOp::Grayscale { p } => vec![p],
            ViewOp::ColorJitter { brightness, contrast } => vec![brightness, contrast],
            ViewOp::Blur { sigma_min, sigma_max } => vec![sigma_min, sigma_max],
            ViewOp::GaussianNoise { sigma } => vec![sigma],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan {
    pub view_ops: Vec<ViewOp>,
    pub dist_set: DistSet,
    pub seed: u64,
}

impl AugmentPlan {
    /// Crop, flip, jitter, grayscale and blur with the default ranges.
    pub fn image_default() -> Self {
        AugmentPlan {
            view_ops: vec![
                ViewOp::CropResize { min: 0.6, max: 1.0 },
                ViewOp::HFlip { p: 0.5 },
                ViewOp::ColorJitter { brightness: 0.2, contrast: 0.2 },
                ViewOp::Grayscale { p: 0.1 },
                ViewOp::Blur { sigma_min: 0.0, sigma_max: 1.0 },
            ],
            dist_set: DistSet::identity(),
            seed: 0,
        }
    }

    pub fn vector_default() -> Self {
        AugmentPlan {
            view_ops: vec![ViewOp::GaussianNoise { sigma: 0.05 }, ViewOp::ScaleJitter { min: 0.9, max: 1.1 }],
            dist_set: DistSet::identity(),
            seed: 0,
        }
    }

    pub fn identity() -> Self {
        AugmentPlan { view_ops: Vec::new(), dist_set: DistSet::identity(), seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        for op in &self.view_ops {
            op.validate()?;
        }
        let flips_views = self.view_ops.iter().any(|op| matches!(op, ViewOp::HFlip { p } if *p > 0.0));
        if flips_views && self.dist_set.has_flip() {
            return Err(Error::invalid(
                "hflip cannot be both a view augmentation and a distribution transform",
            ));
        }
        Ok(())
    }
}

/// Data a view augmentation can act on.
#[derive(Clone, Debug, PartialEq)]
pub enum Batch {
    Images(ImageBatch),
    Vectors(Tensor),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Images(b) => b.count(),
            Batch::Vectors(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Result<Batch> {
        Ok(match self {
            Batch::Images(b) => Batch::Images(b.select(idx)?),
            Batch::Vectors(t) => Batch::Vectors(t.select_rows(idx)?),
        })
    }

    /// Flattened encoder input.
    pub fn to_tensor(&self) -> Tensor {
        match self {
            Batch::Images(b) => b.to_tensor(),
            Batch::Vectors(t) => t.clone().flatten_rows(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Batch::Images(b) => b.image_len(),
            Batch::Vectors(t) => t.cols(),
        }
    }
}

/// Applies the plan's view operations in order, with parameters sampled
/// independently for every sample.
pub fn sample_view(plan: &AugmentPlan, x: &Batch, rng: &mut Rng) -> Result<Batch> {
    plan.validate()?;
    match x {
        Batch::Images(img) => {
            if let Some(op) = plan.view_ops.iter().find(|op| !op.is_image_op()) {
                return Err(Error::invalid(format!("{op:?} does not apply to images")));
            }
            let mut out = img.clone();
            let (c, w) = (img.channels(), img.size());
            for i in 0..img.count() {
                let px = out.image_mut(i);
                for op in &plan.view_ops {
                    apply_image_op(op, px, c, w, rng);
                    px.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                }
            }
            Ok(Batch::Images(out))
        }
        Batch::Vectors(t) => {
            if let Some(op) = plan.view_ops.iter().find(|op| op.is_image_op()) {
                return Err(Error::invalid(format!("{op:?} does not apply to vectors")));
            }
            let mut out = t.clone();
            let unit = Normal::new(0.0, 1.0).unwrap();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                for op in &plan.view_ops {
                    match *op {
                        ViewOp::GaussianNoise { sigma } => {
                            for v in row.iter_mut() {
                                *v += sigma * unit.sample(rng);
                            }
                        }
                        ViewOp::ScaleJitter { min, max } => {
                            let s = uniform(rng, min, max);
                            row.iter_mut().for_each(|v| *v *= s);
                        }
                        _ => unreachable!(),
                    }
                }
            }
            Ok(Batch::Vectors(out))
        }
    }
}

/// [`sample_view`] with a fresh stream seeded by `seed`.
pub fn sample_view_seeded(plan: &AugmentPlan, x: &Batch, seed: u64) -> Result<Batch> {
    sample_view(plan, x, &mut crate::rng::seeded(seed))
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn apply_image_op(op: &ViewOp, px: &mut [f64], c: usize, w: usize, rng: &mut Rng) {
    match *op {
        ViewOp::CropResize { min, max } => {
            let area = uniform(rng, min, max);
            let span = area.sqrt() * (w as f64 - 1.0);
            let room = w as f64 - 1.0 - span;
            let x0 = uniform(rng, 0.0, room.max(0.0));
            let y0 = uniform(rng, 0.0, room.max(0.0));
            if w > 1 && (span - (w as f64 - 1.0)).abs() > 0.0 {
                crop_resize(px, c, w, x0, y0, span);
            }
        }
        ViewOp::HFlip { p } => {
            if rng.gen::<f64>() < p {
                for ch in 0..c {
                    for i in 0..w {
                        px[ch * w * w + i * w..ch * w * w + (i + 1) * w].reverse();
                    }
                }
            }
        }
        ViewOp::ColorJitter { brightness, contrast } => {
            let b = uniform(rng, -brightness, brightness);
            let k = uniform(rng, 1.0 - contrast, 1.0 + contrast);
            let mean = px.iter().sum::<f64>() / px.len() as f64;
            for v in px.iter_mut() {
                *v = (*v - mean) * k + mean + b;
            }
        }
        ViewOp::Grayscale { p } => {
            if rng.gen::<f64>() < p && c == 3 {
                let plane = w * w;
                for k in 0..plane {
                    let y = 0.299 * px[k] + 0.587 * px[plane + k] + 0.114 * px[2 * plane + k];
                    px[k] = y;
                    px[plane + k] = y;
                    px[2 * plane + k] = y;
                }
            }
        }
        ViewOp::Blur { sigma_min, sigma_max } => {
            let sigma = uniform(rng, sigma_min, sigma_max);
            if sigma > 1e-6 {
                gaussian_blur(px, c, w, sigma);
            }
        }
        ViewOp::GaussianNoise { .. } | ViewOp::ScaleJitter { .. } => unreachable!(),
    }
}

/// Bilinear resampling of the square window `[x0, x0+span] × [y0, y0+span]`
/// (pixel-centre coordinates) onto the full `w × w` grid, corners aligned.
fn crop_resize(px: &mut [f64], c: usize, w: usize, x0: f64, y0: f64, span: f64) {
    let src = px.to_vec();
    let step = span / (w as f64 - 1.0);
    let last = (w - 1) as f64;
    for ch in 0..c {
        let plane = &src[ch * w * w..(ch + 1) * w * w];
        for i in 0..w {
            let sy = (y0 + i as f64 * step).clamp(0.0, last);
            let (y_lo, fy) = (sy.floor() as usize, sy - sy.floor());
            let y_hi = (y_lo + 1).min(w - 1);
            for j in 0..w {
                let sx = (x0 + j as f64 * step).clamp(0.0, last);
                let (x_lo, fx) = (sx.floor() as usize, sx - sx.floor());
                let x_hi = (x_lo + 1).min(w - 1);
                let top = plane[y_lo * w + x_lo] * (1.0 - fx) + plane[y_lo * w + x_hi] * fx;
                let bot = plane[y_hi * w + x_lo] * (1.0 - fx) + plane[y_hi * w + x_hi] * fx;
                px[ch * w * w + i * w + j] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
}

fn gaussian_blur(px: &mut [f64], c: usize, w: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / z).collect();
    let clamp = |v: isize| v.clamp(0, w as isize - 1) as usize;
    let mut tmp = vec![0.0; w * w];
    for ch in 0..c {
        let plane = &mut px[ch * w * w..(ch + 1) * w * w];
        for i in 0..w {
            for j in 0..w {
                tmp[i * w + j] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * plane[i * w + clamp(j as isize + k as isize - radius)])
                    .sum();
            }
        }
        for i in 0..w {
            for j in 0..w {
                plane[i * w + j] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * tmp[clamp(i as isize + k as isize - radius) * w + j])
                    .sum();
            }
        }
    }
}

/// Distribution-expanded dataset: `|dist_set| · n` instances in transform-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Expanded {
    pub data: Batch,
    /// Index of the original sample of each instance.
    pub source: Vec<usize>,
    /// Index into the distribution set of each instance.
    pub transform: Vec<usize>,
}

pub fn expand_distribution(data: &Batch, dist: &DistSet) -> Result<Expanded> {
    let n = data.len();
    let k = dist.len();
    let source = (0..k).flat_map(|_| 0..n).collect();
    let transform = (0..k).flat_map(|t| std::iter::repeat_n(t, n)).collect();
    let data = match data {
        Batch::Images(img) => {
            let mut pixels = Vec::with_capacity(k * img.pixels().len());
            for t in dist.transforms() {
                pixels.extend_from_slice(t.apply(img).pixels());
            }
            Batch::Images(ImageBatch::new(k * n, img.channels(), img.size(), img.size(), pixels)?)
        }
        Batch::Vectors(t) => {
            if !dist.is_identity() {
                return Err(Error::invalid("distribution transforms other than identity need image data"));
            }
            Batch::Vectors(t.clone())
        }
    };
    Ok(Expanded { data, source, transform })
}
