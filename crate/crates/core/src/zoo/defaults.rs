//! Shipped architecture configs, embedded at compile time.

use super::config::ModelConfig;
use crate::error::{Error, Result};

const TEACHER: &str = include_str!("../../configs/teacher.json");
const STUDENTS: [&str; 4] = [
    include_str!("../../configs/student1.json"),
    include_str!("../../configs/student2.json"),
    include_str!("../../configs/student3.json"),
    include_str!("../../configs/student4.json"),
];

pub fn teacher_config() -> ModelConfig {
    ModelConfig::from_json(TEACHER).expect("shipped teacher config is valid")
}

/// Default config of student `index` (1 to 4).
pub fn student_config(index: usize) -> Result<ModelConfig> {
    let text = STUDENTS
        .get(index.wrapping_sub(1))
        .ok_or_else(|| Error::invalid(format!("student index {index} not in 1..=4")))?;
    ModelConfig::from_json(text)
}

/// Resolves `teacher`, `student1`..`student4`, or a path to a JSON config.
pub fn resolve(name_or_path: &str) -> Result<ModelConfig> {
    match name_or_path {
        "teacher" => Ok(teacher_config()),
        s if s.starts_with("student") && s.len() == 8 => {
            let idx = s[7..]
                .parse()
                .map_err(|_| Error::invalid(format!("unknown model `{s}`")))?;
            student_config(idx)
        }
        path => ModelConfig::from_json(&std::fs::read_to_string(path)?),
    }
}
