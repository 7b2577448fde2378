//! Proxy objectives: rotation prediction and (distribution-augmented)
//! contrastive learning, built as differentiable graphs over a [`ModelBundle`].

use rand::seq::index;

use crate::augment::{rot90, sample_view, AugmentPlan, Batch, Expanded, ImageBatch};
use crate::autodiff::{BatchStats, ContrastiveVariant, LeafKind, Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::network::{BoundModel, ModelBundle};
use crate::rng::Rng;
use crate::tensor::{Precision, Tensor};

/// Default temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
/// Default number of instances per contrastive batch.
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// A recorded loss together with the handles needed to read its gradients.
pub struct LossGraph {
    pub tape: Tape,
    pub loss: Var,
    pub bound: BoundModel,
    /// Train-mode batch-norm statistics, for [`ModelBundle::apply_batch_stats`].
    pub stats: Vec<BatchStats>,
}

impl LossGraph {
    pub fn value(&self) -> f64 {
        self.tape.value(self.loss).item()
    }

    /// Gradients for every model parameter, in [`ModelBundle::params`] order.
    pub fn param_grads(&self) -> Result<Vec<Tensor>> {
        let mut g = self.tape.backward(self.loss, false)?;
        Ok(self.bound.vars().iter().map(|&v| g.take(v).expect("parameter gradient")).collect())
    }
}

/// Two views of `M` instances: row `i` of `positives` is the second view of row `i` of `anchors`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub anchors: Tensor,
    pub positives: Tensor,
    pub temperature: f64,
}

/// Normalizes both views and records the contrastive loss on `tape`.
pub fn contrastive_loss_on(
    tape: &mut Tape,
    anchors: Var,
    positives: Var,
    temperature: f64,
    variant: ContrastiveVariant,
) -> Result<Var> {
    let a = tape.l2_normalize_rows(anchors)?;
    let p = tape.l2_normalize_rows(positives)?;
    tape.contrastive_nll(a, p, temperature, variant)
}

/// Loss value of a batch of raw (unnormalized) embeddings.
pub fn contrastive_loss(batch: &ContrastiveBatch, variant: ContrastiveVariant) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.input(batch.anchors.clone())?;
    let p = tape.input(batch.positives.clone())?;
    let l = contrastive_loss_on(&mut tape, a, p, batch.temperature, variant)?;
    Ok(tape.value(l).item())
}

/// Stacks the four rotations of each image, rotation-major, with labels `y`.
pub fn rotation_batch(view: &ImageBatch) -> Result<(ImageBatch, Vec<usize>)> {
    let n = view.count();
    let mut pixels = Vec::with_capacity(4 * view.pixels().len());
    let mut labels = Vec::with_capacity(4 * n);
    for y in 0..4 {
        pixels.extend_from_slice(rot90(view, y)?.pixels());
        labels.extend(std::iter::repeat_n(y, n));
    }
    let size = view.size();
    Ok((ImageBatch::new(4 * n, view.channels(), size, size, pixels)?, labels))
}

/// Rotation-prediction loss: each base image is view-augmented once, then
/// all four rotations are classified (effective batch `4 × base`).
pub fn rotation_loss(
    model: &ModelBundle,
    base: &ImageBatch,
    plan: &AugmentPlan,
    rng: &mut Rng,
    precision: Precision,
) -> Result<LossGraph> {
    if model.config.q_outputs != 4 {
        return Err(Error::invalid(format!("rotation prediction needs 4 classifier outputs, model has {}", model.config.q_outputs)));
    }
    let Batch::Images(view) = sample_view(plan, &Batch::Images(base.clone()), rng)? else {
        unreachable!()
    };
    let (rotated, labels) = rotation_batch(&view)?;
    let mut tape = Tape::with_precision(precision);
    let bound = model.bind(&mut tape, LeafKind::Param)?;
    let x = tape.constant(rotated.to_tensor())?;
    let h = model.encode_on(&mut tape, &bound, x)?;
    let mut stats = Vec::new();
    let z = model.project_on(&mut tape, &bound, h, Mode::Train, &mut stats)?;
    let logits = model.classify_on(&mut tape, &bound, z)?;
    let loss = tape.softmax_cross_entropy(logits, &labels)?;
    Ok(LossGraph { tape, loss, bound, stats })
}

/// Contrastive loss of the model on two views of the same `M` instances.
/// Both views go through `g ∘ f` as one batch of `2M` rows.
pub fn contrastive_model_loss(
    model: &ModelBundle,
    view_a: &Batch,
    view_b: &Batch,
    temperature: f64,
    variant: ContrastiveVariant,
    precision: Precision,
) -> Result<LossGraph> {
    let m = view_a.len();
    if view_b.len() != m {
        return Err(Error::shape("contrastive", "views differ in size"));
    }
    let (ta, tb) = (view_a.to_tensor(), view_b.to_tensor());
    let d = ta.cols();
    let mut data = ta.into_data();
    data.extend_from_slice(tb.data());
    let x = Tensor::matrix(2 * m, d, data)?;

    let mut tape = Tape::with_precision(precision);
    let bound = model.bind(&mut tape, LeafKind::Param)?;
    let xv = tape.constant(x)?;
    let h = model.encode_on(&mut tape, &bound, xv)?;
    let mut stats = Vec::new();
    let z = model.project_on(&mut tape, &bound, h, Mode::Train, &mut stats)?;
    let za = tape.slice_rows(z, 0, m)?;
    let zb = tape.slice_rows(z, m, 2 * m)?;
    let loss = contrastive_loss_on(&mut tape, za, zb, temperature, variant)?;
    Ok(LossGraph { tape, loss, bound, stats })
}

/// Two independent views of the selected instances.
pub fn views_of(data: &Batch, idx: &[usize], plan: &AugmentPlan, rng: &mut Rng) -> Result<(Batch, Batch)> {
    let picked = data.select(idx)?;
    let a = sample_view(plan, &picked, rng)?;
    let b = sample_view(plan, &picked, rng)?;
    Ok((a, b))
}

/// A sampled distribution-augmented contrastive batch.
#[derive(Clone, Debug, PartialEq)]
pub struct DistAugBatch {
    pub view_a: Batch,
    pub view_b: Batch,
    /// Indices into the expanded dataset.
    pub instances: Vec<usize>,
}

/// Draws `batch_size` instances uniformly without replacement from the
/// expanded dataset and makes two views of each. Copies of one original under
/// different transforms are distinct instances and may meet as negatives.
pub fn assemble_distaug_batch(
    expanded: &Expanded,
    batch_size: usize,
    plan: &AugmentPlan,
    rng: &mut Rng,
) -> Result<DistAugBatch> {
    let n = expanded.data.len();
    if n == 0 {
        return Err(Error::invalid("empty expanded dataset"));
    }
    if batch_size > n {
        return Err(Error::invalid(format!("batch size {batch_size} exceeds {n} expanded instances")));
    }
    let instances = index::sample(rng, n, batch_size).into_vec();
    let (view_a, view_b) = views_of(&expanded.data, &instances, plan, rng)?;
    Ok(DistAugBatch { view_a, view_b, instances })
}
