//! Teacher and student architectures, their shipped configs, efficiency
//! accounting and weight files.

pub mod config;
pub mod defaults;
mod model;
pub mod profile;
pub mod weights;

pub use config::{ActShape, Family, LayerKind, LayerSpec, ModelConfig, Ratio};
pub use defaults::{student_config, teacher_config};
pub use model::{se_width, Ablation, Forward, Model, Snapshot};
pub use profile::{count_flops, count_layers, count_parameters, measure_latency, EfficiencyReport};

use crate::error::{Error, Result};

/// The fixed teacher network.
pub fn build_teacher(seed: u64) -> Model<f32> {
    Model::build(&teacher_config(), seed).expect("shipped teacher config is valid")
}

/// A student network from `config`, which must be of the student family.
pub fn build_student(config: &ModelConfig, seed: u64) -> Result<Model<f32>> {
    if config.family != Family::Student {
        return Err(Error::ConfigGeneral(format!("`{}` is not a student config", config.name)));
    }
    Model::build(config, seed)
}
