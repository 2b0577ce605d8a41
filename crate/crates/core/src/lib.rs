//! Training engine for gated recurrent sequence classifiers with a
//! hidden-state consistency penalty.
//!
//! The objective for one sequence is
//!
//! ```text
//! L = L_cls + λ · L_rc,    L_rc = 1/(T-1) · Σ_{t=2..T} ‖h_t − h_{t−1}‖²
//! ```
//!
//! where `L_cls` is softmax cross-entropy on a linear readout of `h_T`.
//! Gradients of both terms are computed exactly by backpropagation through
//! time ([`cells::backward`]), with `L_rc` injecting a gradient at every step.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cells;
pub mod diagnostics;
pub mod data;
pub mod error;
pub mod math;
pub mod metrics;
pub mod model_io;
pub mod objective;
pub mod parallel;
pub mod train;

pub use cells::{CellKind, CellParams, HiddenTrajectory, ParamGrads};
pub use data::{Dataset, SequenceSample, SplitSpec};
pub use error::{Error, Result};
pub use math::{Matrix, Rng, Vector};
pub use objective::LossBreakdown;
pub use parallel::Execution;
pub use train::{ModelKind, TrainConfig, TrainLog};
