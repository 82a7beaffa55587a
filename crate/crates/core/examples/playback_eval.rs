//! Trains Student 1 on hard labels for a couple of epochs and reports F1 per
//! playback distance next to the reference values.
//!
//! cargo run --release --example playback_eval [-- clips epochs]

use distill_vad::audio::{self, MixConfig, PoolSpec, Pools};
use distill_vad::cli::workflow;
use distill_vad::distill::DistillConfig;
use distill_vad::metrics::{self, eval::PLAYBACK_REFERENCE_F1};
use distill_vad::zoo::{build_student, defaults};

fn main() -> distill_vad::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let clips = args.next().flatten().unwrap_or(300);
    let epochs = args.next().flatten().unwrap_or(3);
    let dir = std::env::temp_dir().join("distill-vad-playback");

    let pools = Pools::from_paths(&audio::synth_pools(4, dir.join("pools"), &PoolSpec::default())?)?;
    let manifest = audio::build_dataset(&pools, clips, 4, dir.join("data"), &MixConfig::default())?;
    audio::split_dataset(&manifest, (0.6, 0.2, 0.2), 4)?.write(dir.join("data"))?;
    audio::build_playback_set(&pools, 20, 4, dir.join("playback"))?;
    let splits = workflow::load_splits(&dir.join("data"), true)?;
    let playback = workflow::load_playback(&dir.join("playback"), true)?;

    let mut student = build_student(&defaults::student_config(1)?, 4)?;
    let cfg = DistillConfig { max_epochs: epochs, seed: 4, ..DistillConfig::default() };
    distill_vad::distill::train(&mut student, &splits.train, &splits.val, &cfg, None, &mut |r| {
        println!("epoch {} val {:.4}", r.epoch, r.val_loss)
    })?;
    let report = metrics::evaluate_playback(&student, &playback, metrics::DEFAULT_THRESHOLD)?;
    for (d, (_, reference)) in report.distances.iter().zip(PLAYBACK_REFERENCE_F1) {
        println!("{:>2} m  f1 {:.4}  (reference {:.5})", d.distance_m, d.f1, reference);
    }
    println!("mean {:.4}", report.mean_f1);
    Ok(())
}
