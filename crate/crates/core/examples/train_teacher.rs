//! Trains the teacher on a small synthetic dataset and reports held-out
//! metrics. Expect a few minutes per epoch on a laptop CPU.
//!
//! cargo run --release --example train_teacher [-- clips epochs]

use distill_vad::audio::{self, MixConfig, PoolSpec, Pools};
use distill_vad::cli::workflow;
use distill_vad::distill::DistillConfig;
use distill_vad::zoo::{defaults, weights};

fn main() -> distill_vad::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let clips = args.next().flatten().unwrap_or(200);
    let epochs = args.next().flatten().unwrap_or(1);
    let dir = std::env::temp_dir().join("distill-vad-teacher");

    let pools = Pools::from_paths(&audio::synth_pools(1, dir.join("pools"), &PoolSpec::default())?)?;
    let manifest = audio::build_dataset(&pools, clips, 1, dir.join("data"), &MixConfig::default())?;
    audio::split_dataset(&manifest, (0.6, 0.2, 0.2), 1)?.write(dir.join("data"))?;
    let splits = workflow::load_splits(&dir.join("data"), true)?;

    let cfg = DistillConfig { max_epochs: epochs, seed: 1, ..DistillConfig::default() };
    let (teacher, report) = workflow::train_teacher(&defaults::teacher_config(), &splits, &cfg, &mut |r| {
        println!("epoch {}  train {:.4}  val {:.4}  ({:.0}s)", r.epoch, r.train_loss, r.val_loss, r.elapsed_s)
    })?;
    println!("kept epoch {} of {}", report.best_epoch, report.epochs_run);
    let metrics = workflow::split_report(&teacher, None, cfg.seed, &splits)?;
    println!("{}", metrics.to_json());
    weights::save(&teacher, dir.join("teacher.dvad"))?;
    println!("weights in {}", dir.join("teacher.dvad").display());
    Ok(())
}
