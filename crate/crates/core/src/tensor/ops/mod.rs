mod channel;
pub mod conv;
pub mod dropout;
pub mod elementwise;
mod linear;
pub mod loss;
pub mod norm;
mod pool;
mod relational;

pub use conv::{conv_out_extent, Conv2dOptions};
pub use elementwise::{sigmoid, softplus, Activation};
pub use loss::binary_kl;
pub use norm::{batch_norm2d, BatchStats, NormMode, RunningStats, BN_EPS, BN_MOMENTUM};
