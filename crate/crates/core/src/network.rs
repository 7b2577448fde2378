//! The three-part model `q ∘ g ∘ f`: an MLP encoder `f`, an MLP projection
//! head `g` and a linear augmentation classifier `q`.
//!
//! `f` has no batch-coupled layers, so the representation of a row never
//! depends on the rest of its batch. Batch normalization only appears in `g`.
//! A head of depth 0 is the identity.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::autodiff::{BatchStats, BnState, LeafKind, Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::io::{put_tensor, read_artifact, seal, unseal, write_atomic, Reader};
use crate::rng;
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"OCC1";
pub const MODEL_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub encoder_widths: Vec<usize>,
    /// Number of hidden layers in `g`; 0 makes `g` the identity.
    pub head_depth: usize,
    pub head_hidden_width: usize,
    pub head_output_dim: usize,
    pub q_outputs: usize,
    pub use_batch_norm_in_head: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_dim: 144,
            encoder_widths: vec![128, 128, 64],
            head_depth: 2,
            head_hidden_width: 128,
            head_output_dim: 32,
            q_outputs: 4,
            use_batch_norm_in_head: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        if self.encoder_widths.is_empty() {
            return Err(Error::invalid("encoder needs at least one layer"));
        }
        if self.encoder_widths.contains(&0) {
            return Err(Error::invalid("zero-width encoder layer"));
        }
        if self.head_depth > 0 && (self.head_hidden_width == 0 || self.head_output_dim == 0) {
            return Err(Error::invalid("zero-width head layer"));
        }
        if self.q_outputs == 0 {
            return Err(Error::invalid("q_outputs must be positive"));
        }
        Ok(())
    }

    /// Width of `f(x)`.
    pub fn feature_dim(&self) -> usize {
        *self.encoder_widths.last().unwrap_or(&self.input_dim)
    }

    /// Width of `g(f(x))`.
    pub fn projection_dim(&self) -> usize {
        if self.head_depth == 0 {
            self.feature_dim()
        } else {
            self.head_output_dim
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnLayer {
    pub scale: Tensor,
    pub shift: Tensor,
    pub state: BnState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadLayer {
    pub dense: Dense,
    pub bn: Option<BnLayer>,
}

/// Role of a parameter tensor; decides weight-decay eligibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingMeta {
    pub objective: String,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: NetworkConfig,
    pub encoder: Vec<Dense>,
    pub head: Vec<HeadLayer>,
    pub head_out: Option<Dense>,
    pub classifier: Dense,
    pub meta: TrainingMeta,
}

/// Tape handles of every parameter of a [`ModelBundle`].
pub struct BoundModel {
    vars: Vec<Var>,
}

impl BoundModel {
    /// Handles in [`ModelBundle::params`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn he_dense(rng: &mut rng::Rng, fan_in: usize, fan_out: usize) -> Dense {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    let w = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
    Dense { weight: Tensor::matrix(fan_in, fan_out, w).unwrap(), bias: Tensor::zeros(&[fan_out]) }
}

impl ModelBundle {
    /// He-normal weights, zero biases, unit batch-norm scale; deterministic in `config.seed`.
    pub fn init(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(config.seed);
        let mut encoder = Vec::new();
        let mut fan_in = config.input_dim;
        for &w in &config.encoder_widths {
            encoder.push(he_dense(&mut rng, fan_in, w));
            fan_in = w;
        }
        let mut head = Vec::new();
        let mut head_out = None;
        if config.head_depth > 0 {
            for _ in 0..config.head_depth {
                let dense = he_dense(&mut rng, fan_in, config.head_hidden_width);
                let bn = config.use_batch_norm_in_head.then(|| BnLayer {
                    scale: Tensor::filled(&[config.head_hidden_width], 1.0),
                    shift: Tensor::zeros(&[config.head_hidden_width]),
                    state: BnState::new(config.head_hidden_width),
                });
                head.push(HeadLayer { dense, bn });
                fan_in = config.head_hidden_width;
            }
            head_out = Some(he_dense(&mut rng, fan_in, config.head_output_dim));
            fan_in = config.head_output_dim;
        }
        let classifier = he_dense(&mut rng, fan_in, config.q_outputs);
        Ok(ModelBundle { config, encoder, head, head_out, classifier, meta: TrainingMeta::default() })
    }

    pub fn params(&self) -> Vec<(&Tensor, ParamKind)> {
        let mut out = Vec::new();
        for d in &self.encoder {
            out.push((&d.weight, ParamKind::Weight));
            out.push((&d.bias, ParamKind::Bias));
        }
        for l in &self.head {
            out.push((&l.dense.weight, ParamKind::Weight));
            out.push((&l.dense.bias, ParamKind::Bias));
            if let Some(bn) = &l.bn {
                out.push((&bn.scale, ParamKind::BnScale));
                out.push((&bn.shift, ParamKind::BnShift));
            }
        }
        if let Some(d) = &self.head_out {
            out.push((&d.weight, ParamKind::Weight));
            out.push((&d.bias, ParamKind::Bias));
        }
        out.push((&self.classifier.weight, ParamKind::Weight));
        out.push((&self.classifier.bias, ParamKind::Bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(&mut Tensor, ParamKind)> {
        let mut out = Vec::new();
        for d in &mut self.encoder {
            out.push((&mut d.weight, ParamKind::Weight));
            out.push((&mut d.bias, ParamKind::Bias));
        }
        for l in &mut self.head {
            out.push((&mut l.dense.weight, ParamKind::Weight));
            out.push((&mut l.dense.bias, ParamKind::Bias));
            if let Some(bn) = &mut l.bn {
                out.push((&mut bn.scale, ParamKind::BnScale));
                out.push((&mut bn.shift, ParamKind::BnShift));
            }
        }
        if let Some(d) = &mut self.head_out {
            out.push((&mut d.weight, ParamKind::Weight));
            out.push((&mut d.bias, ParamKind::Bias));
        }
        out.push((&mut self.classifier.weight, ParamKind::Weight));
        out.push((&mut self.classifier.bias, ParamKind::Bias));
        out
    }

    /// Registers every parameter on `tape` as a leaf of the given kind.
    pub fn bind(&self, tape: &mut Tape, kind: LeafKind) -> Result<BoundModel> {
        let vars = self
            .params()
            .into_iter()
            .map(|(t, _)| tape.leaf(t.clone(), kind))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundModel { vars })
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let t = tape.value(x);
        if t.rank() != 2 || t.cols() != self.config.input_dim {
            return Err(Error::shape(
                "forward",
                format!("input shape {:?}, model expects [batch, {}]", t.shape(), self.config.input_dim),
            ));
        }
        Ok(())
    }

    /// Encoder `f` on the tape.
    pub fn encode_on(&self, tape: &mut Tape, bound: &BoundModel, x: Var) -> Result<Var> {
        self.check_input(tape, x)?;
        let mut h = x;
        for i in 0..self.encoder.len() {
            let a = tape.affine(h, bound.vars[2 * i], bound.vars[2 * i + 1])?;
            h = tape.relu(a)?;
        }
        Ok(h)
    }

    /// Projection head `g` applied to encoder output `h`. Train-mode batch
    /// statistics are appended to `stats`, one entry per normalized layer.
    pub fn project_on(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        h: Var,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let mut k = 2 * self.encoder.len();
        let mut z = h;
        for layer in &self.head {
            z = tape.affine(z, bound.vars[k], bound.vars[k + 1])?;
            k += 2;
            if let Some(bn) = &layer.bn {
                let (y, s) = tape.batch_norm(z, bound.vars[k], bound.vars[k + 1], mode, &bn.state)?;
                k += 2;
                stats.extend(s);
                z = y;
            }
            z = tape.relu(z)?;
        }
        if self.head_out.is_some() {
            z = tape.affine(z, bound.vars[k], bound.vars[k + 1])?;
        }
        Ok(z)
    }

    /// Linear classifier `q` applied to projection output `z`.
    pub fn classify_on(&self, tape: &mut Tape, bound: &BoundModel, z: Var) -> Result<Var> {
        let n = bound.vars.len();
        tape.affine(z, bound.vars[n - 2], bound.vars[n - 1])
    }

    /// Folds train-mode batch statistics into the running statistics.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        let mut it = stats.iter();
        for layer in &mut self.head {
            if let Some(bn) = &mut layer.bn {
                if let Some(s) = it.next() {
                    bn.state.update(s);
                }
            }
        }
    }

    /// Representation `f(x)` handed to stage-two detectors.
    pub fn forward_f(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, LeafKind::Const)?;
        let xv = tape.constant(x.clone())?;
        let h = self.encode_on(&mut tape, &bound, xv)?;
        Ok(tape.value(h).clone())
    }

    /// `g(f(x))`, not yet normalized.
    pub fn forward_gf(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, LeafKind::Const)?;
        let xv = tape.constant(x.clone())?;
        let h = self.encode_on(&mut tape, &bound, xv)?;
        let z = self.project_on(&mut tape, &bound, h, mode, &mut Vec::new())?;
        Ok(tape.value(z).clone())
    }

    /// Logits of `q(g(f(x)))`.
    pub fn forward_q(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, LeafKind::Const)?;
        let xv = tape.constant(x.clone())?;
        let h = self.encode_on(&mut tape, &bound, xv)?;
        let z = self.project_on(&mut tape, &bound, h, mode, &mut Vec::new())?;
        let l = self.classify_on(&mut tape, &bound, z)?;
        Ok(tape.value(l).clone())
    }

    fn bn_states(&self) -> impl Iterator<Item = &BnState> {
        self.head.iter().filter_map(|l| l.bn.as_ref().map(|b| &b.state))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = encode_header(&self.config, &self.meta);
        let mut payload = Vec::new();
        payload.extend_from_slice(&(text.len() as u32).to_le_bytes());
        payload.extend_from_slice(text.as_bytes());
        let params = self.params();
        let states: Vec<&BnState> = self.bn_states().collect();
        payload.extend_from_slice(&((params.len() + 2 * states.len()) as u32).to_le_bytes());
        for (t, _) in params {
            put_tensor(&mut payload, t);
        }
        for s in states {
            put_tensor(&mut payload, &Tensor::vector(s.running_mean.clone()).unwrap());
            put_tensor(&mut payload, &Tensor::vector(s.running_var.clone()).unwrap());
        }
        seal(MODEL_MAGIC, MODEL_VERSION, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, payload) = unseal(MODEL_MAGIC, MODEL_VERSION, bytes)?;
        let mut r = Reader::new(payload);
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.bytes(len)?).map_err(|e| Error::Format(e.to_string()))?;
        let (config, meta) = decode_header(text)?;
        let mut model = ModelBundle::init(config).map_err(|e| Error::Format(e.to_string()))?;
        model.meta = meta;
        let count = r.u32()? as usize;
        let n_states = model.bn_states().count();
        {
            let params = model.params_mut();
            if count != params.len() + 2 * n_states {
                return Err(Error::Format(format!("expected {} tensors, file has {count}", params.len() + 2 * n_states)));
            }
            for (slot, _) in params {
                let t = r.tensor()?;
                if t.shape() != slot.shape() {
                    return Err(Error::Format(format!("tensor shape {:?}, expected {:?}", t.shape(), slot.shape())));
                }
                *slot = t;
            }
        }
        for layer in &mut model.head {
            if let Some(bn) = &mut layer.bn {
                let mean = r.tensor()?.into_data();
                let var = r.tensor()?.into_data();
                if mean.len() != bn.state.dim() || var.len() != bn.state.dim() {
                    return Err(Error::Format("batch-norm state has wrong width".into()));
                }
                bn.state = BnState { running_mean: mean, running_var: var };
            }
        }
        if !r.is_done() {
            return Err(Error::Format("trailing bytes in model file".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_artifact(path)?)
    }
}

fn encode_header(c: &NetworkConfig, m: &TrainingMeta) -> String {
    let widths: Vec<String> = c.encoder_widths.iter().map(|w| w.to_string()).collect();
    let mut s = String::new();
    let _ = writeln!(s, "input_dim={}", c.input_dim);
    let _ = writeln!(s, "encoder_widths={}", widths.join(","));
    let _ = writeln!(s, "head_depth={}", c.head_depth);
    let _ = writeln!(s, "head_hidden_width={}", c.head_hidden_width);
    let _ = writeln!(s, "head_output_dim={}", c.head_output_dim);
    let _ = writeln!(s, "q_outputs={}", c.q_outputs);
    let _ = writeln!(s, "use_batch_norm_in_head={}", c.use_batch_norm_in_head);
    let _ = writeln!(s, "seed={}", c.seed);
    let _ = writeln!(s, "objective={}", m.objective);
    let _ = writeln!(s, "step={}", m.step);
    s
}

fn decode_header(text: &str) -> Result<(NetworkConfig, TrainingMeta)> {
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| Error::Format(format!("bad value {v:?} for {k}")))
    }
    let mut c = NetworkConfig::default();
    let mut m = TrainingMeta::default();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
        match k {
            "input_dim" => c.input_dim = num(k, v)?,
            "encoder_widths" => {
                c.encoder_widths = v.split(',').map(|w| num(k, w)).collect::<Result<_>>()?;
            }
            "head_depth" => c.head_depth = num(k, v)?,
            "head_hidden_width" => c.head_hidden_width = num(k, v)?,
            "head_output_dim" => c.head_output_dim = num(k, v)?,
            "q_outputs" => c.q_outputs = num(k, v)?,
            "use_batch_norm_in_head" => c.use_batch_norm_in_head = num(k, v)?,
            "seed" => c.seed = num(k, v)?,
            "objective" => m.objective = v.to_string(),
            "step" => m.step = num(k, v)?,
            _ => return Err(Error::Format(format!("unknown header key {k:?}"))),
        }
    }
    Ok((c, m))
}
