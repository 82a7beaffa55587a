//! The `distill-vad` command line.
//!
//! Exit status is 0 on success, 1 when a command fails at run time and 2
//! for usage errors. Setting `DISTILL_VAD_THREADS` caps the worker pool.

pub mod workflow;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audio::{self, DatasetManifest, MixConfig, PoolSpec, Pools};
use crate::distill::{DistillConfig, EpochRecord, Method};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_runs, evaluate, evaluate_playback, MetricsReport, MethodTable};
use crate::zoo::{defaults, profile, weights, Model};
use workflow::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "distill-vad", version, about = "Distil compact speech detectors for environmental audio")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Source pools, clip datasets, splits and the playback set.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
    /// Train the teacher on a split dataset.
    TrainTeacher(TrainTeacherArgs),
    /// Distil a student from a trained teacher.
    Distill(DistillArgs),
    /// Parameters, layers, FLOPs, memory and latency of models.
    Profile(ProfileArgs),
    /// Evaluate saved weights on a dataset split.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Generate synthetic speech, background and bird source pools.
    SynthPools {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = PoolSpec::default().speech)]
        speech: usize,
        #[arg(long, default_value_t = PoolSpec::default().background)]
        background: usize,
        #[arg(long, default_value_t = PoolSpec::default().bird)]
        bird: usize,
        /// Length of each source file in seconds.
        #[arg(long, default_value_t = PoolSpec::default().duration_s)]
        duration: f64,
    },
    /// Mix labeled 3-second clips from source pools.
    Build {
        /// Directory with speech/, background/ and bird/ subdirectories.
        #[arg(long)]
        pools: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Assign train/val/test splits in place.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_ratios)]
        ratios: (f64, f64, f64),
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build the distance playback evaluation set.
    Playback {
        #[arg(long)]
        pools: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Clips per label and distance.
        #[arg(long, default_value_t = 25)]
        per_group: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Training hyperparameters. Flags override `--config`, which overrides the
/// built-in defaults (lr 0.001, batch 32, 50 epochs, patience 3, T 5,
/// alpha 0.2).
#[derive(Debug, Args)]
pub struct TrainingArgs {
    /// JSON file with any subset of the distillation config fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Recompute spectrograms instead of reading the dataset's mel cache.
    #[arg(long)]
    pub no_cache: bool,
}

impl TrainingArgs {
    fn config(&self) -> Result<DistillConfig> {
        let mut cfg = match &self.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
            None => DistillConfig::default(),
        };
        set(&mut cfg.lr, self.lr);
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.max_epochs, self.epochs);
        set(&mut cfg.patience, self.patience);
        set(&mut cfg.seed, self.seed);
        Ok(cfg)
    }
}

fn set<T>(field: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *field = v;
    }
}

#[derive(Debug, Args)]
pub struct TrainTeacherArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Architecture name or JSON config path.
    #[arg(long, default_value = "teacher")]
    pub model: String,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Teacher weights file.
    #[arg(long, required_unless_present = "baseline")]
    pub teacher: Option<PathBuf>,
    /// Teacher architecture name or JSON config path.
    #[arg(long, default_value = "teacher")]
    pub teacher_model: String,
    /// Student architecture name (student1..student4) or JSON config path.
    #[arg(long)]
    pub student: String,
    /// One of response, feature, relational.
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight the hard-label term by alpha instead of the distillation term.
    #[arg(long)]
    pub invert_alpha: bool,
    /// Do not multiply the response term by T^2.
    #[arg(long)]
    pub no_temperature_squared: bool,
    #[arg(long)]
    pub hint_layer: Option<String>,
    #[arg(long)]
    pub guide_layer: Option<String>,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Train on hard labels only, without a teacher.
    #[arg(long)]
    pub baseline: bool,
    /// Playback dataset to evaluate every run on.
    #[arg(long)]
    pub playback: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Architecture names or JSON config paths.
    #[arg(long, value_delimiter = ',', default_value = "teacher,student1,student2,student3,student4")]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Write the reports as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Architecture name or JSON config path.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test", "playback"])]
    pub split: String,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Write the report here; printed to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_cache: bool,
}

fn parse_ratios(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected three comma-separated ratios, got {}", parts.len())),
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("DISTILL_VAD_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Dataset { action } => dataset(action),
        Command::TrainTeacher(a) => train_teacher(a),
        Command::Distill(a) => distill(a),
        Command::Profile(a) => profile_models(a),
        Command::Eval(a) => eval(a),
    }
}

fn dataset(action: DatasetCommand) -> Result<()> {
    match action {
        DatasetCommand::SynthPools { out, seed, speech, background, bird, duration } => {
            let spec = PoolSpec { speech, background, bird, duration_s: duration };
            audio::synth_pools(seed, &out, &spec)?;
            let mut rc = RunConfig::new("dataset synth-pools", seed).path("out", &out);
            rc.extra.insert("pools".into(), serde_json::to_value(spec)?);
            rc.write(&out)?;
            println!("wrote {speech} speech, {background} background, {bird} bird files to {}", out.display());
        }
        DatasetCommand::Build { pools, out, n, seed } => {
            let mix = MixConfig::default();
            let manifest = audio::build_dataset(&Pools::from_root(&pools)?, n, seed, &out, &mix)?;
            let b = manifest.balance();
            let mut rc = RunConfig::new("dataset build", seed).path("pools", &pools).path("out", &out);
            rc.extra.insert("n".into(), n.into());
            rc.extra.insert("mix".into(), serde_json::to_value(mix)?);
            rc.write(&out)?;
            println!("built {} clips ({} speech, {} non-speech) in {}", manifest.records.len(), b.speech, b.non_speech, out.display());
        }
        DatasetCommand::Split { data, ratios, seed } => {
            let manifest = audio::split_dataset(&DatasetManifest::read(&data)?, ratios, seed)?;
            manifest.write(&data)?;
            for (split, b) in manifest.split_balance() {
                println!("{split:?}: {} clips ({} speech)", b.speech + b.non_speech, b.speech);
            }
        }
        DatasetCommand::Playback { pools, out, per_group, seed } => {
            let manifest = audio::build_playback_set(&Pools::from_root(&pools)?, per_group, seed, &out)?;
            let mut rc = RunConfig::new("dataset playback", seed).path("pools", &pools).path("out", &out);
            rc.extra.insert("per_group".into(), per_group.into());
            rc.write(&out)?;
            println!("built {} playback clips in {}", manifest.records.len(), out.display());
        }
    }
    Ok(())
}

fn print_epoch(prefix: &str, r: &EpochRecord) {
    eprintln!(
        "{prefix}epoch {:>2}  train {:.5}  val {:.5}  {:.1}s{}",
        r.epoch,
        r.train_loss,
        r.val_loss,
        r.elapsed_s,
        if r.stopped { "  (early stop)" } else { "" }
    );
}

fn train_teacher(a: TrainTeacherArgs) -> Result<()> {
    let config = defaults::resolve(&a.model)?;
    let cfg = a.training.config()?;
    cfg.validate()?;
    let mut rc = RunConfig::new("train-teacher", cfg.seed).path("data", &a.data).path("out", &a.out);
    rc.model = Some(a.model.clone());
    rc.distill = Some(cfg.clone());
    rc.write(&a.out)?;

    let splits = workflow::load_splits(&a.data, !a.training.no_cache)?;
    let (teacher, report) = workflow::train_teacher(&config, &splits, &cfg, &mut |r| print_epoch("", r))?;
    weights::save(&teacher, a.out.join("teacher.dvad"))?;
    workflow::write_log(&a.out.join("train_log.jsonl"), &report.log)?;
    let metrics = workflow::split_report(&teacher, None, cfg.seed, &splits)?;
    workflow::write_json(&a.out.join("metrics.json"), &metrics)?;
    for (name, m) in &metrics.splits {
        println!("{name}: auc {:.4}  f1 {:.4}  (n={})", m.auc, m.f1, m.n);
    }
    Ok(())
}

fn distill(a: DistillArgs) -> Result<()> {
    let student = defaults::resolve(&a.student)?;
    let mut cfg = a.training.config()?;
    set(&mut cfg.method, a.method);
    set(&mut cfg.temperature, a.temperature);
    set(&mut cfg.alpha, a.alpha);
    cfg.invert_alpha |= a.invert_alpha;
    cfg.temperature_squared &= !a.no_temperature_squared;
    if a.hint_layer.is_some() {
        cfg.hint_layer = a.hint_layer.clone();
    }
    if a.guide_layer.is_some() {
        cfg.guide_layer = a.guide_layer.clone();
    }
    cfg.validate()?;
    if a.runs == 0 {
        return Err(Error::invalid("--runs must be at least 1"));
    }
    let mut rc = RunConfig::new("distill", cfg.seed).path("data", &a.data).path("out", &a.out);
    if let Some(t) = &a.teacher {
        rc = rc.path("teacher", t);
    }
    if let Some(p) = &a.playback {
        rc = rc.path("playback", p);
    }
    rc.model = Some(a.student.clone());
    rc.distill = Some(cfg.clone());
    rc.n_runs = a.runs;
    rc.extra.insert("baseline".into(), a.baseline.into());
    rc.write(&a.out)?;

    let teacher = match (&a.teacher, a.baseline) {
        (Some(path), false) => {
            let mut t = Model::build(&defaults::resolve(&a.teacher_model)?, 0)?;
            weights::load_into(&mut t, path)?;
            Some(t)
        }
        _ => None,
    };
    let cache = !a.training.no_cache;
    let splits = workflow::load_splits(&a.data, cache)?;
    let playback = a.playback.as_deref().map(|p| workflow::load_playback(p, cache)).transpose()?;
    let seeds = workflow::run_seeds(cfg.seed, a.runs);
    let runs = workflow::train_students(&student, teacher.as_ref(), &splits, &cfg, &seeds, playback.as_ref(), &mut |seed, r| {
        print_epoch(&format!("seed {seed}  "), r)
    })?;

    let tag = if a.baseline { "baseline".to_string() } else { cfg.method.to_string() };
    let mut reports = Vec::new();
    for run in &runs {
        let stem = format!("{}_{tag}_seed{}", student.name, run.seed);
        weights::save(&run.model, a.out.join(format!("{stem}.dvad")))?;
        workflow::write_log(&a.out.join(format!("{stem}_log.jsonl")), &run.train.log)?;
        workflow::write_json(&a.out.join(format!("{stem}_metrics.json")), &run.metrics)?;
        reports.push(run.metrics.clone());
    }
    let summary = aggregate_runs(&reports)?;
    workflow::write_json(&a.out.join("metrics.json"), &summary)?;
    if let Some(csv) = summary.playback_csv() {
        fs::write(a.out.join("playback.csv"), csv)?;
    }
    print_summary(&summary)?;
    Ok(())
}

fn print_summary(summary: &MetricsReport) -> Result<()> {
    if summary.method.is_some() {
        print!("{}", MethodTable::from_reports(std::slice::from_ref(summary), "test")?.render());
    }
    for (name, m) in &summary.splits {
        println!("{name}: auc {:.4}  f1 {:.4}  over {} run(s)", m.auc, m.f1, summary.n_runs);
    }
    if let Some(pb) = &summary.playback {
        for d in &pb.distances {
            println!("playback {:>2} m: f1 {:.4}", d.distance_m, d.f1);
        }
    }
    Ok(())
}

fn profile_models(a: ProfileArgs) -> Result<()> {
    let mut reports = Vec::new();
    for name in &a.models {
        let model = Model::<f32>::build(&defaults::resolve(name)?, 0)?;
        reports.push(profile::EfficiencyReport::measure(&model, a.reps, a.warmup)?);
    }
    print!("{}", profile::render_table(&reports));
    if let Some(out) = &a.out {
        workflow::write_json(out, &reports)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model, &a.weights)?;
    let manifest = DatasetManifest::read(&a.data)?;
    let split: audio::Split = a.split.parse()?;
    let loaded = audio::load_split(&a.data, &manifest, split, !a.no_cache)?;
    let mut report = MetricsReport::single(model.name(), None, 0);
    if split == audio::Split::Playback {
        report.playback = Some(evaluate_playback(&model, &loaded, a.threshold)?);
    } else {
        report.splits.insert(a.split.clone(), evaluate(&model, &loaded.samples, a.threshold)?);
    }
    let json = report.to_json();
    match &a.out {
        Some(path) => {
            workflow::write_json(path, &report)?;
            if let Some(csv) = report.playback_csv() {
                fs::write(path.with_extension("csv"), csv)?;
            }
        }
        None => println!("{json}"),
    }
    Ok(())
}

/// Resolves a model name and loads weights into it.
pub fn load_model(name_or_path: &str, weights_path: &Path) -> Result<Model<f32>> {
    let mut model = Model::build(&defaults::resolve(name_or_path)?, 0)?;
    weights::load_into(&mut model, weights_path)?;
    Ok(model)
}
