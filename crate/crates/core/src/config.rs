//! Plain-text pipeline configuration: `[section]` headers and `key = value` lines.

use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::{AugmentPlan, DistSet, ViewOp};
use crate::autodiff::ContrastiveVariant;
use crate::data::{DatasetKind, DatasetSpec, OutlierShape};
use crate::detectors::{DetectorKind, SurrogateVariant, VarianceRule, DEFAULT_NU, GAMMA_SCALE};
use crate::error::{Error, Result};
use crate::evaluate::{Bandwidth, Estimator, MmdConfig, Normalization};
use crate::explain::{ScoreMode, DEFAULT_IG_STEPS};
use crate::network::NetworkConfig;
use crate::objectives::{DEFAULT_BATCH_SIZE, DEFAULT_TEMPERATURE};
use crate::optim::{Objective, TrainRun, DEFAULT_EPOCHS, DEFAULT_LR, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY};
use crate::tensor::Precision;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSection {
    pub encoder_widths: Vec<usize>,
    pub head_depth: usize,
    pub head_hidden_width: usize,
    pub head_output_dim: usize,
    pub head_batch_norm: bool,
    pub q_outputs: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = NetworkConfig::default();
        NetworkSection {
            encoder_widths: n.encoder_widths,
            head_depth: n.head_depth,
            head_hidden_width: n.head_hidden_width,
            head_output_dim: n.head_output_dim,
            head_batch_norm: n.use_batch_norm_in_head,
            q_outputs: n.q_outputs,
        }
    }
}

/// View-augmentation ranges; an operation is dropped when its strength is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSection {
    pub crop_min: f64,
    pub crop_max: f64,
    pub hflip_p: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub grayscale_p: f64,
    pub blur_sigma_max: f64,
    pub noise_sigma: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub distribution: DistSet,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            crop_min: 0.6,
            crop_max: 1.0,
            hflip_p: 0.5,
            brightness: 0.2,
            contrast: 0.2,
            grayscale_p: 0.1,
            blur_sigma_max: 1.0,
            noise_sigma: 0.05,
            scale_min: 0.9,
            scale_max: 1.1,
            distribution: DistSet::rotations(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSection {
    pub kind: Objective,
    pub temperature: f64,
    pub variant: ContrastiveVariant,
    pub batch_size: usize,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            kind: Objective::ContrastiveDistAug,
            temperature: DEFAULT_TEMPERATURE,
            variant: ContrastiveVariant::AnchorView,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSection {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub steps: Option<usize>,
    pub checkpoint_every: Option<usize>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            epochs: DEFAULT_EPOCHS,
            steps: None,
            checkpoint_every: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Linear,
    Rbf,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
        })
    }
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelKind::Linear),
            "rbf" => Ok(KernelKind::Rbf),
            _ => Err(Error::invalid(format!("unknown kernel '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    pub nu: f64,
    pub kernel: KernelKind,
    /// Fixed bandwidth; `None` uses the variance heuristic.
    pub gamma: Option<f64>,
    pub gamma_variance: VarianceRule,
    pub gamma_scale: f64,
    /// Fit on this many clean inliers instead of the whole training split.
    pub train_subset: Option<usize>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            kind: DetectorKind::Kde,
            nu: DEFAULT_NU,
            kernel: KernelKind::Rbf,
            gamma: None,
            gamma_variance: VarianceRule::Pooled,
            gamma_scale: GAMMA_SCALE,
            train_subset: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationSection {
    pub ensemble: Normalization,
    pub mmd_batch_sizes: Vec<usize>,
    /// Step budget of each batch-size sweep run.
    pub mmd_steps: usize,
    pub mmd_estimator: Estimator,
    pub mmd_bandwidth: Bandwidth,
    pub mmd_uniform_samples: Option<usize>,
    pub explain_samples: Vec<usize>,
    pub ig_steps: usize,
    pub explain_mode: ScoreMode,
    pub surrogate: Option<SurrogateVariant>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            ensemble: Normalization::ZScore,
            mmd_batch_sizes: vec![8, 32, 128],
            mmd_steps: 400,
            mmd_estimator: Estimator::Biased,
            mmd_bandwidth: Bandwidth::Median,
            mmd_uniform_samples: None,
            explain_samples: vec![0],
            ig_steps: DEFAULT_IG_STEPS,
            explain_mode: ScoreMode::Log,
            surrogate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    /// Root seed; the dataset and the MMD reference sample derive from it.
    pub seed: u64,
    /// Training seeds; several seeds produce a mean ± std summary and an ensemble.
    pub seeds: Vec<u64>,
    pub precision: Precision,
    pub dataset: DatasetSpec,
    pub network: NetworkSection,
    pub augment: AugmentSection,
    pub objective: ObjectiveSection,
    pub optimizer: OptimizerSection,
    pub detector: DetectorSection,
    pub evaluation: EvaluationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
            seeds: vec![0],
            precision: Precision::F64,
            dataset: DatasetSpec::default(),
            network: NetworkSection::default(),
            augment: AugmentSection::default(),
            objective: ObjectiveSection::default(),
            optimizer: OptimizerSection::default(),
            detector: DetectorSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse '{v}'"))
}

fn parse_enum<T: FromStr<Err = Error>>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|e| e.to_string())
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(s.trim())).collect()
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn parse_opt<T: FromStr>(v: &str, none: &str) -> std::result::Result<Option<T>, String> {
    if v == none {
        Ok(None)
    } else {
        parse(v).map(Some)
    }
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt<T: Display>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), |x| x.to_string())
}

impl PipelineConfig {
    fn set(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        let d = &mut self.dataset;
        let n = &mut self.network;
        let a = &mut self.augment;
        let o = &mut self.objective;
        let op = &mut self.optimizer;
        let det = &mut self.detector;
        let e = &mut self.evaluation;
        match (section, key) {
            ("pipeline", "output_dir") => self.output_dir = PathBuf::from(v),
            ("pipeline", "seed") => self.seed = parse(v)?,
            ("pipeline", "seeds") => self.seeds = parse_list(v)?,
            ("pipeline", "precision") => self.precision = parse_enum(v)?,

            ("dataset", "kind") => d.kind = parse_enum::<DatasetKind>(v)?,
            ("dataset", "image_size") => d.image_size = parse(v)?,
            ("dataset", "inlier_angle") => d.inlier_angle = parse(v)?,
            ("dataset", "angle_jitter") => d.angle_jitter = parse(v)?,
            ("dataset", "outlier") => d.outlier = parse_enum::<OutlierShape>(v)?,
            ("dataset", "outlier_angle") => d.outlier_angle = parse(v)?,
            ("dataset", "center_jitter") => d.center_jitter = parse(v)?,
            ("dataset", "stroke_jitter") => d.stroke_jitter = parse(v)?,
            ("dataset", "bar_length") => d.bar_length = parse(v)?,
            ("dataset", "bar_thickness") => d.bar_thickness = parse(v)?,
            ("dataset", "noise") => d.noise = parse(v)?,
            ("dataset", "dim") => d.dim = parse(v)?,
            ("dataset", "outlier_shift") => d.outlier_shift = parse(v)?,
            ("dataset", "n_train") => d.n_train = parse(v)?,
            ("dataset", "n_test_in") => d.n_test_in = parse(v)?,
            ("dataset", "n_test_out") => d.n_test_out = parse(v)?,
            ("dataset", "contamination_ratio") => d.contamination_ratio = parse(v)?,

            ("network", "encoder_widths") => n.encoder_widths = parse_list(v)?,
            ("network", "head_depth") => n.head_depth = parse(v)?,
            ("network", "head_hidden_width") => n.head_hidden_width = parse(v)?,
            ("network", "head_output_dim") => n.head_output_dim = parse(v)?,
            ("network", "head_batch_norm") => n.head_batch_norm = parse_bool(v)?,
            ("network", "q_outputs") => n.q_outputs = parse(v)?,

            ("augment", "crop_min") => a.crop_min = parse(v)?,
            ("augment", "crop_max") => a.crop_max = parse(v)?,
            ("augment", "hflip_p") => a.hflip_p = parse(v)?,
            ("augment", "brightness") => a.brightness = parse(v)?,
            ("augment", "contrast") => a.contrast = parse(v)?,
            ("augment", "grayscale_p") => a.grayscale_p = parse(v)?,
            ("augment", "blur_sigma_max") => a.blur_sigma_max = parse(v)?,
            ("augment", "noise_sigma") => a.noise_sigma = parse(v)?,
            ("augment", "scale_min") => a.scale_min = parse(v)?,
            ("augment", "scale_max") => a.scale_max = parse(v)?,
            ("augment", "distribution") => a.distribution = parse_enum(v)?,

            ("objective", "kind") => o.kind = parse_enum(v)?,
            ("objective", "temperature") => o.temperature = parse(v)?,
            ("objective", "variant") => o.variant = parse_enum(v)?,
            ("objective", "batch_size") => o.batch_size = parse(v)?,

            ("optimizer", "lr") => op.lr = parse(v)?,
            ("optimizer", "momentum") => op.momentum = parse(v)?,
            ("optimizer", "weight_decay") => op.weight_decay = parse(v)?,
            ("optimizer", "epochs") => op.epochs = parse(v)?,
            ("optimizer", "steps") => op.steps = parse_opt(v, "auto")?,
            ("optimizer", "checkpoint_every") => op.checkpoint_every = parse_opt(v, "none")?,

            ("detector", "kind") => det.kind = parse_enum(v)?,
            ("detector", "nu") => det.nu = parse(v)?,
            ("detector", "kernel") => det.kernel = parse_enum(v)?,
            ("detector", "gamma") => det.gamma = parse_opt(v, "auto")?,
            ("detector", "gamma_variance") => det.gamma_variance = parse_enum(v)?,
            ("detector", "gamma_scale") => det.gamma_scale = parse(v)?,
            ("detector", "detector_train_subset") => det.train_subset = parse_opt(v, "all")?,

            ("evaluation", "ensemble") => e.ensemble = parse_enum(v)?,
            ("evaluation", "mmd_batch_sizes") => e.mmd_batch_sizes = parse_list(v)?,
            ("evaluation", "mmd_steps") => e.mmd_steps = parse(v)?,
            ("evaluation", "mmd_estimator") => e.mmd_estimator = parse_enum(v)?,
            ("evaluation", "mmd_bandwidth") => {
                e.mmd_bandwidth = if v == "median" { Bandwidth::Median } else { Bandwidth::Fixed(parse(v)?) }
            }
            ("evaluation", "mmd_uniform_samples") => e.mmd_uniform_samples = parse_opt(v, "auto")?,
            ("evaluation", "explain_samples") => e.explain_samples = parse_list(v)?,
            ("evaluation", "ig_steps") => e.ig_steps = parse(v)?,
            ("evaluation", "explain_mode") => e.explain_mode = parse_enum(v)?,
            ("evaluation", "surrogate") => {
                e.surrogate = if v == "none" { None } else { Some(parse_enum(v)?) }
            }
            _ => return Err(format!("unknown key '{key}' in section [{section}]")),
        }
        Ok(())
    }

    fn sections(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        let d = &self.dataset;
        let n = &self.network;
        let a = &self.augment;
        let o = &self.objective;
        let op = &self.optimizer;
        let det = &self.detector;
        let e = &self.evaluation;
        vec![
            (
                "pipeline",
                vec![
                    ("output_dir", self.output_dir.display().to_string()),
                    ("seed", self.seed.to_string()),
                    ("seeds", list(&self.seeds)),
                    ("precision", self.precision.to_string()),
                ],
            ),
            (
                "dataset",
                vec![
                    ("kind", d.kind.to_string()),
                    ("image_size", d.image_size.to_string()),
                    ("inlier_angle", d.inlier_angle.to_string()),
                    ("angle_jitter", d.angle_jitter.to_string()),
                    ("outlier", d.outlier.to_string()),
                    ("outlier_angle", d.outlier_angle.to_string()),
                    ("center_jitter", d.center_jitter.to_string()),
                    ("stroke_jitter", d.stroke_jitter.to_string()),
                    ("bar_length", d.bar_length.to_string()),
                    ("bar_thickness", d.bar_thickness.to_string()),
                    ("noise", d.noise.to_string()),
                    ("dim", d.dim.to_string()),
                    ("outlier_shift", d.outlier_shift.to_string()),
                    ("n_train", d.n_train.to_string()),
                    ("n_test_in", d.n_test_in.to_string()),
                    ("n_test_out", d.n_test_out.to_string()),
                    ("contamination_ratio", d.contamination_ratio.to_string()),
                ],
            ),
            (
                "network",
                vec![
                    ("encoder_widths", list(&n.encoder_widths)),
                    ("head_depth", n.head_depth.to_string()),
                    ("head_hidden_width", n.head_hidden_width.to_string()),
                    ("head_output_dim", n.head_output_dim.to_string()),
                    ("head_batch_norm", n.head_batch_norm.to_string()),
                    ("q_outputs", n.q_outputs.to_string()),
                ],
            ),
            (
                "augment",
                vec![
                    ("crop_min", a.crop_min.to_string()),
                    ("crop_max", a.crop_max.to_string()),
                    ("hflip_p", a.hflip_p.to_string()),
                    ("brightness", a.brightness.to_string()),
                    ("contrast", a.contrast.to_string()),
                    ("grayscale_p", a.grayscale_p.to_string()),
                    ("blur_sigma_max", a.blur_sigma_max.to_string()),
                    ("noise_sigma", a.noise_sigma.to_string()),
                    ("scale_min", a.scale_min.to_string()),
                    ("scale_max", a.scale_max.to_string()),
                    ("distribution", a.distribution.to_string()),
                ],
            ),
            (
                "objective",
                vec![
                    ("kind", o.kind.to_string()),
                    ("temperature", o.temperature.to_string()),
                    ("variant", o.variant.to_string()),
                    ("batch_size", o.batch_size.to_string()),
                ],
            ),
            (
                "optimizer",
                vec![
                    ("lr", op.lr.to_string()),
                    ("momentum", op.momentum.to_string()),
                    ("weight_decay", op.weight_decay.to_string()),
                    ("epochs", op.epochs.to_string()),
                    ("steps", opt(&op.steps, "auto")),
                    ("checkpoint_every", opt(&op.checkpoint_every, "none")),
                ],
            ),
            (
                "detector",
                vec![
                    ("kind", det.kind.to_string()),
                    ("nu", det.nu.to_string()),
                    ("kernel", det.kernel.to_string()),
                    ("gamma", opt(&det.gamma, "auto")),
                    ("gamma_variance", det.gamma_variance.to_string()),
                    ("gamma_scale", det.gamma_scale.to_string()),
                    ("detector_train_subset", opt(&det.train_subset, "all")),
                ],
            ),
            (
                "evaluation",
                vec![
                    ("ensemble", e.ensemble.to_string()),
                    ("mmd_batch_sizes", list(&e.mmd_batch_sizes)),
                    ("mmd_steps", e.mmd_steps.to_string()),
                    ("mmd_estimator", e.mmd_estimator.to_string()),
                    (
                        "mmd_bandwidth",
                        match e.mmd_bandwidth {
                            Bandwidth::Median => "median".to_string(),
                            Bandwidth::Fixed(s) => s.to_string(),
                        },
                    ),
                    ("mmd_uniform_samples", opt(&e.mmd_uniform_samples, "auto")),
                    ("explain_samples", list(&e.explain_samples)),
                    ("ig_steps", e.ig_steps.to_string()),
                    ("explain_mode", e.explain_mode.to_string()),
                    ("surrogate", opt(&e.surrogate, "none")),
                ],
            ),
        ]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| Error::Config { line: Some(line_no), msg };
            let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?;
                section = Some(name.trim().to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.as_deref().ok_or_else(|| err(format!("key '{key}' outside any section")))?;
            if !seen.insert((sec.to_string(), key.to_string())) {
                return Err(err(format!("duplicate key '{key}' in [{sec}]")));
            }
            cfg.set(sec, key, value).map_err(err)?;
        }
        cfg.dataset.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::parse(&text)
    }

    /// Canonical text form listing every key.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (i, (name, entries)) in self.sections().into_iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::config(e.to_string());
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must list at least one seed"));
        }
        self.dataset.validate().map_err(wrap)?;
        self.network_config(0).validate().map_err(wrap)?;
        let da = self.objective.kind == Objective::ContrastiveDistAug;
        let mut plan = self.augment_plan();
        if !da {
            plan.dist_set = DistSet::identity();
        }
        plan.validate().map_err(wrap)?;
        if self.objective.kind == Objective::Rotation && self.network.q_outputs != 4 {
            return Err(Error::config("rotation prediction needs q_outputs = 4"));
        }
        if self.objective.kind == Objective::Rotation && self.dataset.kind != DatasetKind::ShapesImages {
            return Err(Error::config("rotation prediction needs image data"));
        }
        if da && self.dataset.kind != DatasetKind::ShapesImages {
            return Err(Error::config("distribution transforms need image data"));
        }
        if da && self.augment.distribution.is_identity() {
            return Err(Error::config("contrastive_distaug needs a distribution set beyond the identity"));
        }
        if !(self.objective.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        if self.objective.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if !(self.optimizer.lr > 0.0) || self.optimizer.momentum < 0.0 || self.optimizer.weight_decay < 0.0 {
            return Err(Error::config("optimizer settings out of range"));
        }
        if !(self.detector.nu > 0.0 && self.detector.nu <= 1.0) {
            return Err(Error::config("nu must lie in (0, 1]"));
        }
        if matches!(self.detector.gamma, Some(g) if !(g > 0.0)) || !(self.detector.gamma_scale > 0.0) {
            return Err(Error::config("gamma settings must be positive"));
        }
        if matches!(self.evaluation.mmd_bandwidth, Bandwidth::Fixed(s) if !(s > 0.0)) {
            return Err(Error::config("mmd_bandwidth must be positive"));
        }
        if self.evaluation.mmd_batch_sizes.iter().any(|&b| b < 2) {
            return Err(Error::config("MMD sweep batch sizes must be at least 2"));
        }
        if self.evaluation.ig_steps == 0 {
            return Err(Error::config("ig_steps must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self.dataset.kind {
            DatasetKind::ShapesImages => self.dataset.image_size * self.dataset.image_size,
            _ => self.dataset.dim,
        }
    }

    /// Network for a training seed; initialisation draws from the seed's `init` stream.
    pub fn network_config(&self, seed: u64) -> NetworkConfig {
        NetworkConfig {
            input_dim: self.input_dim(),
            encoder_widths: self.network.encoder_widths.clone(),
            head_depth: self.network.head_depth,
            head_hidden_width: self.network.head_hidden_width,
            head_output_dim: self.network.head_output_dim,
            q_outputs: self.network.q_outputs,
            use_batch_norm_in_head: self.network.head_batch_norm,
            seed: crate::rng::derive_seed(seed, "init"),
        }
    }

    pub fn augment_plan(&self) -> AugmentPlan {
        let a = &self.augment;
        let mut ops = Vec::new();
        if self.dataset.kind == DatasetKind::ShapesImages {
            if a.crop_min < 1.0 {
                ops.push(ViewOp::CropResize { min: a.crop_min, max: a.crop_max });
            }
            if a.hflip_p > 0.0 {
                ops.push(ViewOp::HFlip { p: a.hflip_p });
            }
            if a.brightness > 0.0 || a.contrast > 0.0 {
                ops.push(ViewOp::ColorJitter { brightness: a.brightness, contrast: a.contrast });
            }
            if a.grayscale_p > 0.0 {
                ops.push(ViewOp::Grayscale { p: a.grayscale_p });
            }
            if a.blur_sigma_max > 0.0 {
                ops.push(ViewOp::Blur { sigma_min: 0.0, sigma_max: a.blur_sigma_max });
            }
        } else {
            if a.noise_sigma > 0.0 {
                ops.push(ViewOp::GaussianNoise { sigma: a.noise_sigma });
            }
            if a.scale_min != 1.0 || a.scale_max != 1.0 {
                ops.push(ViewOp::ScaleJitter { min: a.scale_min, max: a.scale_max });
            }
        }
        AugmentPlan { view_ops: ops, dist_set: a.distribution.clone(), seed: 0 }
    }

    pub fn train_run(&self, seed: u64) -> TrainRun {
        TrainRun {
            objective: self.objective.kind,
            epochs: self.optimizer.epochs,
            steps: self.optimizer.steps,
            batch_size: self.objective.batch_size,
            seed,
            lr: self.optimizer.lr,
            momentum: self.optimizer.momentum,
            weight_decay: self.optimizer.weight_decay,
            temperature: self.objective.temperature,
            variant: self.objective.variant,
            plan: self.augment_plan(),
            precision: self.precision,
            checkpoint_every: self.optimizer.checkpoint_every,
            checkpoint_dir: None,
        }
    }

    pub fn mmd_config(&self) -> MmdConfig {
        MmdConfig {
            bandwidth: self.evaluation.mmd_bandwidth,
            estimator: self.evaluation.mmd_estimator,
            uniform_samples: self.evaluation.mmd_uniform_samples,
            seed: crate::rng::derive_seed(self.seed, "mmd"),
        }
    }
}
