//! Efficiency table for the teacher and the four students, with deviations
//! from the reference rows.
//!
//! cargo run --release --example profile_models [-- reps]

use distill_vad::zoo::{defaults, profile, Model};

fn main() -> distill_vad::Result<()> {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut reports = Vec::new();
    for name in ["teacher", "student1", "student2", "student3", "student4"] {
        let model = Model::<f32>::build(&defaults::resolve(name)?, 0)?;
        reports.push(profile::EfficiencyReport::measure(&model, reps, 1)?);
    }
    print!("{}", profile::render_table(&reports));
    println!();
    for r in &reports {
        if let Some(reference) = &r.reference {
            println!(
                "{:<9} reference: {} params, {} flops, {} MiB",
                r.model, reference.parameters, reference.flops, reference.memory_mib
            );
        }
    }
    Ok(())
}
