//! Momentum SGD with a single cosine learning-rate cycle, coupled L2 weight
//! decay, and the epoch loop that drives either proxy objective.

use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::augment::{expand_distribution, AugmentPlan, Batch, DistSet};
use crate::autodiff::ContrastiveVariant;
use crate::error::{Error, Result};
use crate::network::{ModelBundle, ParamKind};
use crate::objectives::{contrastive_model_loss, rotation_loss, views_of};
use crate::rng;
use crate::tensor::{Precision, Tensor};

pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.0003;
pub const DEFAULT_EPOCHS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(model: &ModelBundle, base_lr: f64, momentum: f64, weight_decay: f64, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::invalid("total_steps must be positive"));
        }
        if !(base_lr >= 0.0) || !(0.0..1.0).contains(&momentum) || !(weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "bad optimizer settings lr={base_lr} momentum={momentum} weight_decay={weight_decay}"
            )));
        }
        let velocity = model.params().iter().map(|(t, _)| Tensor::zeros(t.shape())).collect();
        Ok(OptimizerState { velocity, base_lr, momentum, weight_decay, total_steps, step: 0 })
    }

    /// `0.5 · base_lr · (1 + cos(π · step / total_steps))`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::invalid(format!("step {step} beyond schedule of {} steps", self.total_steps)));
        }
        let t = step as f64 / self.total_steps as f64;
        Ok(0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

/// One update: `g = grad + λw` (weights only), `v = μv + g`, `w -= lr·v`.
pub fn sgd_step(model: &mut ModelBundle, grads: &[Tensor], state: &mut OptimizerState) -> Result<()> {
    if state.step >= state.total_steps {
        return Err(Error::invalid("optimizer schedule exhausted"));
    }
    if grads.len() != state.velocity.len() {
        return Err(Error::shape("sgd_step", format!("{} gradients for {} parameters", grads.len(), state.velocity.len())));
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient for parameter tensor {i} (shape {:?}) at step {}",
                g.shape(),
                state.step
            )));
        }
    }
    let lr = state.lr_at(state.step)?;
    for (((w, kind), g), v) in model.params_mut().into_iter().zip(grads).zip(&mut state.velocity) {
        if w.shape() != g.shape() {
            return Err(Error::shape("sgd_step", format!("gradient {:?} for parameter {:?}", g.shape(), w.shape())));
        }
        let decay = if kind == ParamKind::Weight { state.weight_decay } else { 0.0 };
        for ((wv, gv), vv) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let g = gv + decay * *wv;
            *vv = state.momentum * *vv + g;
            *wv -= lr * *vv;
        }
    }
    state.step += 1;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Rotation,
    Contrastive,
    ContrastiveDistAug,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Rotation => "rotation",
            Objective::Contrastive => "contrastive",
            Objective::ContrastiveDistAug => "contrastive_distaug",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(Objective::Rotation),
            "contrastive" => Ok(Objective::Contrastive),
            "contrastive_distaug" => Ok(Objective::ContrastiveDistAug),
            _ => Err(Error::invalid(format!("unknown objective {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub objective: Objective,
    pub epochs: usize,
    /// Fixed step budget; overrides `epochs` when set.
    pub steps: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub variant: ContrastiveVariant,
    pub plan: AugmentPlan,
    pub precision: Precision,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            objective: Objective::Contrastive,
            epochs: DEFAULT_EPOCHS,
            steps: None,
            batch_size: crate::objectives::DEFAULT_BATCH_SIZE,
            seed: 0,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            temperature: crate::objectives::DEFAULT_TEMPERATURE,
            variant: ContrastiveVariant::AnchorView,
            plan: AugmentPlan::image_default(),
            precision: Precision::F64,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: ModelBundle,
    pub trace: Vec<TraceRow>,
    pub epoch_losses: Vec<f64>,
}

/// Loss trace as `step,lr,loss` CSV.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in trace {
        let _ = writeln!(s, "{},{},{}", r.step, r.lr, r.loss);
    }
    s
}

/// Trains `model` on `data` with the given run settings.
///
/// For the distribution-augmented objective the data is first expanded by the
/// plan's distribution set and an epoch covers the expanded set once.
pub fn train(run: &TrainRun, mut model: ModelBundle, data: &Batch) -> Result<TrainOutput> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if data.input_dim() != model.config.input_dim {
        return Err(Error::shape("train", format!("data width {}, model input {}", data.input_dim(), model.config.input_dim)));
    }
    let mut plan = run.plan.clone();
    let pool = match run.objective {
        Objective::ContrastiveDistAug => {
            plan.validate()?;
            expand_distribution(data, &plan.dist_set)?.data
        }
        Objective::Rotation => {
            if !matches!(data, Batch::Images(_)) {
                return Err(Error::invalid("rotation prediction needs image data"));
            }
            plan.dist_set = DistSet::identity();
            data.clone()
        }
        Objective::Contrastive => {
            plan.dist_set = DistSet::identity();
            data.clone()
        }
    };
    plan.validate()?;
    let n = pool.len();
    let m = run.batch_size;
    if m == 0 || m > n {
        return Err(Error::invalid(format!("batch size {m} not in 1..={n}")));
    }
    if m < 2 && run.objective != Objective::Rotation {
        return Err(Error::invalid("contrastive batches need at least 2 instances"));
    }
    let per_epoch = n / m;
    let total = run.steps.unwrap_or(run.epochs * per_epoch);
    if total == 0 {
        return Ok(TrainOutput { model, trace: Vec::new(), epoch_losses: Vec::new() });
    }

    let mut opt = OptimizerState::new(&model, run.lr, run.momentum, run.weight_decay, total)?;
    let mut shuffle_rng = rng::stream(run.seed, "shuffle");
    let mut aug_rng = rng::stream(run.seed ^ plan.seed, "augment");
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(total);
    let mut epoch_losses = Vec::new();
    let mut epoch = 0;

    while opt.step < total {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks_exact(m) {
            if opt.step >= total {
                break;
            }
            let graph = match run.objective {
                Objective::Rotation => {
                    let Batch::Images(imgs) = pool.select(chunk)? else { unreachable!() };
                    rotation_loss(&model, &imgs, &plan, &mut aug_rng, run.precision)?
                }
                Objective::Contrastive | Objective::ContrastiveDistAug => {
                    let (a, b) = views_of(&pool, chunk, &plan, &mut aug_rng)?;
                    contrastive_model_loss(&model, &a, &b, run.temperature, run.variant, run.precision)?
                }
            };
            let loss = graph.value();
            let grads = graph.param_grads()?;
            let lr = opt.lr_at(opt.step)?;
            trace.push(TraceRow { step: opt.step, lr, loss });
            sgd_step(&mut model, &grads, &mut opt)?;
            model.apply_batch_stats(&graph.stats);
            sum += loss;
            count += 1;
        }
        epoch += 1;
        if count > 0 {
            epoch_losses.push(sum / count as f64);
        }
        if let (Some(every), Some(dir)) = (run.checkpoint_every, &run.checkpoint_dir) {
            if every > 0 && epoch % every == 0 {
                model.meta.objective = run.objective.to_string();
                model.save(&dir.join(format!("checkpoint_epoch{epoch:05}.occ")))?;
            }
        }
    }
    model.meta.objective = run.objective.to_string();
    model.meta.step += total as u64;
    Ok(TrainOutput { model, trace, epoch_losses })
}
