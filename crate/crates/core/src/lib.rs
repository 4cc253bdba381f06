//! Neural Turing Machine with a linear external memory, trained end to end
//! by backpropagation through time on copy and repeat-copy tasks.
//!
//! * [`diff`]: tape-based reverse-mode differentiation over `f64` tensors.
//! * [`ntm`]: addressing, memory access, controller and the unrolled cell.
//! * [`task`]: seedable copy / repeat-copy generators with the bit-sum split.
//! * [`train`]: sequence loss, gradient clipping, optimizers, training loop.
//! * [`eval`]: bit-error statistics with a mergeable aggregate.
//! * [`io`]: checkpoints, task dumps, CSV output and graymap heatmaps.

pub mod diff;
pub mod error;
pub mod eval;
pub mod io;
pub mod ntm;
pub mod rng;
pub mod task;
pub mod train;

pub use diff::{Tape, Tensor, Var};
pub use error::{NtmError, Result};
pub use eval::{evaluate, EvalSpec, EvalStats};
pub use ntm::{NtmConfig, NtmModel, StepTrace};
pub use task::{CopyConfig, RepeatCopyConfig, Split, TaskConfig, TaskInstance};
pub use train::{OptimizerKind, TrainConfig, Trainer};
