//! Knowledge distillation toolkit for compact speech detectors in
//! environmental audio.
//!
//! The crate trains small MobileNetV3-style students from a VGG11-style
//! teacher on 128x128 mel spectrograms. It is organized bottom-up:
//!
//! - [`tensor`]: dense tensors and a reverse-mode gradient tape.
//! - [`zoo`]: declarative architectures, the teacher and student builders,
//!   efficiency profiling and the weights file format.
//! - [`distill`]: response, feature and relational distillation losses and the
//!   early-stopping training loop.
//! - [`audio`]: synthetic source pools, clip mixing, mel spectrograms, splits
//!   and the distance playback proxy.
//! - [`metrics`]: F1, ROC AUC, evaluation and result reports.
//! - [`cli`]: the `distill-vad` command line.

pub mod audio;
pub mod cli;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
