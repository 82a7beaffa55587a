//! End-to-end pipelines shared by the command line, the examples and the
//! integration tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{load_split, DatasetManifest, LoadedSplit, Split};
use crate::distill::{train, train_cached, DistillConfig, EpochRecord, Samples, TeacherCache, TrainReport};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, evaluate_playback, MetricsReport, DEFAULT_THRESHOLD};
use crate::zoo::{build_student, Model, ModelConfig};

/// Fully resolved settings of one command, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub version: String,
    pub paths: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distill: Option<DistillConfig>,
    pub seed: u64,
    pub n_runs: usize,
    /// Any further command-specific settings.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub const RUN_CONFIG_FILE: &str = "run_config.json";

impl RunConfig {
    pub fn new(command: &str, seed: u64) -> Self {
        RunConfig {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            paths: BTreeMap::new(),
            model: None,
            distill: None,
            seed,
            n_runs: 1,
            extra: BTreeMap::new(),
        }
    }

    pub fn path(mut self, key: &str, path: &Path) -> Self {
        self.paths.insert(key.into(), path.to_path_buf());
        self
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out_dir)?;
        let path = out_dir.join(RUN_CONFIG_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

/// The three in-memory splits of a dataset directory.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
}

/// Loads train/val/test of a split dataset, computing (and with `cache`,
/// storing) spectrograms as needed.
pub fn load_splits(dataset_dir: &Path, cache: bool) -> Result<Splits> {
    let manifest = DatasetManifest::read(dataset_dir)?;
    let load = |split: Split| -> Result<Samples> {
        if manifest.records_in(split).is_empty() {
            return Err(Error::Empty(format!(
                "{} has no {split:?} clips; run `dataset split` first",
                dataset_dir.display()
            )));
        }
        Ok(load_split(dataset_dir, &manifest, split, cache)?.samples)
    };
    Ok(Splits { train: load(Split::Train)?, val: load(Split::Val)?, test: load(Split::Test)? })
}

/// Loads every clip of a playback dataset directory.
pub fn load_playback(dataset_dir: &Path, cache: bool) -> Result<LoadedSplit> {
    let manifest = DatasetManifest::read(dataset_dir)?;
    load_split(dataset_dir, &manifest, Split::Playback, cache)
}

/// Val and test metrics of a trained model.
pub fn split_report(model: &Model<f32>, method: Option<&str>, seed: u64, splits: &Splits) -> Result<MetricsReport> {
    let mut report = MetricsReport::single(model.name(), method, seed);
    report.splits.insert("val".into(), evaluate(model, &splits.val, DEFAULT_THRESHOLD)?);
    report.splits.insert("test".into(), evaluate(model, &splits.test, DEFAULT_THRESHOLD)?);
    Ok(report)
}

/// Trains the teacher from the seed in `cfg`.
pub fn train_teacher(
    config: &ModelConfig,
    splits: &Splits,
    cfg: &DistillConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model<f32>, TrainReport)> {
    let mut teacher = Model::build(config, cfg.seed)?;
    let report = train(&mut teacher, &splits.train, &splits.val, cfg, None, on_epoch)?;
    Ok((teacher, report))
}

/// Outcome of one student training run.
#[derive(Debug)]
pub struct StudentRun {
    pub seed: u64,
    pub model: Model<f32>,
    pub train: TrainReport,
    pub metrics: MetricsReport,
}

/// Trains one student per seed, distilling from `teacher` when given and on
/// hard labels alone otherwise. Teacher outputs are computed once and shared
/// by all runs.
pub fn train_students(
    student: &ModelConfig,
    teacher: Option<&Model<f32>>,
    splits: &Splits,
    cfg: &DistillConfig,
    seeds: &[u64],
    playback: Option<&LoadedSplit>,
    on_epoch: &mut dyn FnMut(u64, &EpochRecord),
) -> Result<Vec<StudentRun>> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one run is required"));
    }
    let cache = match teacher {
        Some(t) => Some(TeacherCache::for_student(t, &build_student(student, seeds[0])?, &splits.train, cfg)?),
        None => None,
    };
    let method = teacher.map(|_| cfg.method.as_str());
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run_cfg = DistillConfig { seed, ..cfg.clone() };
        let mut model = build_student(student, seed)?;
        let mut log = |r: &EpochRecord| on_epoch(seed, r);
        let report = match (teacher, &cache) {
            (Some(t), Some(c)) => train_cached(&mut model, &splits.train, &splits.val, &run_cfg, t, c, &mut log)?,
            _ => train(&mut model, &splits.train, &splits.val, &run_cfg, None, &mut log)?,
        };
        let mut metrics = split_report(&model, method, seed, splits)?;
        if let Some(pb) = playback {
            metrics.playback = Some(evaluate_playback(&model, pb, DEFAULT_THRESHOLD)?);
        }
        runs.push(StudentRun { seed, model, train: report, metrics });
    }
    Ok(runs)
}

/// `seed, seed+1, ...` for `n` runs.
pub fn run_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| seed.wrapping_add(i)).collect()
}

/// Writes `records` as JSON lines.
pub fn write_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rc = RunConfig::new("distill", 4).path("data", Path::new("/tmp/data"));
        rc.distill = Some(DistillConfig::default());
        rc.n_runs = 5;
        let path = rc.write(dir.path()).unwrap();
        let back: RunConfig = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back, rc);
    }

    #[test]
    fn seeds_are_distinct() {
        assert_eq!(run_seeds(7, 3), vec![7, 8, 9]);
    }

    #[test]
    fn unsplit_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_splits(dir.path(), false).is_err());
    }
}
