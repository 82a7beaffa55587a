//! Distils Student 3 from a briefly trained teacher with each of the three
//! methods and prints the per-method comparison.
//!
//! cargo run --release --example distill_student [-- clips student_epochs]

use distill_vad::audio::{self, MixConfig, PoolSpec, Pools};
use distill_vad::cli::workflow;
use distill_vad::distill::{DistillConfig, Method};
use distill_vad::metrics::MethodTable;
use distill_vad::zoo::defaults;

fn main() -> distill_vad::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let clips = args.next().flatten().unwrap_or(300);
    let epochs = args.next().flatten().unwrap_or(4);
    let dir = std::env::temp_dir().join("distill-vad-distill");

    let pools = Pools::from_paths(&audio::synth_pools(2, dir.join("pools"), &PoolSpec::default())?)?;
    let manifest = audio::build_dataset(&pools, clips, 2, dir.join("data"), &MixConfig::default())?;
    audio::split_dataset(&manifest, (0.6, 0.2, 0.2), 2)?.write(dir.join("data"))?;
    let splits = workflow::load_splits(&dir.join("data"), true)?;

    let teacher_cfg = DistillConfig { max_epochs: 1, seed: 2, ..DistillConfig::default() };
    let (teacher, _) = workflow::train_teacher(&defaults::teacher_config(), &splits, &teacher_cfg, &mut |_| {})?;
    let t = workflow::split_report(&teacher, None, 2, &splits)?;
    println!("teacher test f1 {:.4}", t.splits["test"].f1);

    let student = defaults::student_config(3)?;
    let mut reports = Vec::new();
    for method in Method::ALL {
        let cfg = DistillConfig { method, max_epochs: epochs, ..DistillConfig::default() };
        let runs = workflow::train_students(&student, Some(&teacher), &splits, &cfg, &[0, 1], None, &mut |seed, r| {
            println!("{method} seed {seed} epoch {} val {:.4}", r.epoch, r.val_loss)
        })?;
        let per_run: Vec<_> = runs.into_iter().map(|r| r.metrics).collect();
        reports.push(distill_vad::metrics::aggregate_runs(&per_run)?);
    }
    let table = MethodTable::from_reports(&reports, "test")?;
    print!("{}", table.render());
    println!("ordering relational >= feature >= response: {:?}", table.ordering);
    Ok(())
}
