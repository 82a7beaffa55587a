//! Response, feature and relational distillation plus the training loop.

pub mod config;
pub mod data;
pub mod losses;
pub mod train;

pub use config::{DistillConfig, Method};
pub use data::Samples;
pub use losses::{
    bce_loss, bce_with_logits_loss, combined_loss, feature_loss, rkd_angle_loss, rkd_distance_loss,
    soft_target_loss, FeatureRegressor, StudentTerms, TeacherTerms,
};
pub use train::{run_epochs, train, train_cached, EpochRecord, ModelSession, Session, TeacherCache, TrainReport, TrainState};
