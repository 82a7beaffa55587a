//! Dense tensors with a reverse-mode gradient tape.
//!
//! Values are recorded on a [`Tape`] as operations run; [`Tape::backward`]
//! replays the records in reverse. All kernels are generic over [`Scalar`] so
//! the same code runs in `f32` for training and `f64` for gradient checks.

mod dense;
pub mod gradcheck;
pub mod ops;
pub mod optim;
mod param;
pub(crate) mod scalar;
mod tape;

pub use dense::Tensor;
pub use ops::{Activation, Conv2dOptions, NormMode, RunningStats};
pub use optim::{adam_step, Adam, AdamHyper, AdamMoments};
pub use param::{Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
