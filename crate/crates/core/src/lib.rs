//! Deep one-class classification in two stages: self-supervised
//! representation learning followed by a shallow one-class detector.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod config;
pub mod autodiff;
pub mod data;
pub mod detectors;
pub mod error;
pub mod evaluate;
pub mod explain;
pub mod io;
pub mod network;
pub mod objectives;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use config::PipelineConfig;
pub use data::{Dataset, DatasetSpec};
pub use pipeline::{Pipeline, Split, Stage};
pub use augment::{AugmentPlan, Batch, DistSet, DistTransform, ImageBatch};
pub use autodiff::{ContrastiveVariant, Mode, Tape, Var};
pub use detectors::{Detector, DetectorKind, KernelSpec};
pub use error::{Error, Result};
pub use network::{ModelBundle, NetworkConfig};
pub use optim::{Objective, TrainRun};
pub use tensor::{Precision, Tensor};
