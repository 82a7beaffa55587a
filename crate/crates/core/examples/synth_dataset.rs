//! Synthesizes source pools, mixes a small labeled dataset, splits it and
//! builds the distance playback set.
//!
//! cargo run --release --example synth_dataset [-- out_dir]

use std::path::PathBuf;

use distill_vad::audio::{self, DatasetManifest, MixConfig, PoolSpec, Pools, Split};

fn main() -> distill_vad::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("distill-vad-synth"));
    let paths = audio::synth_pools(3, out.join("pools"), &PoolSpec::default())?;
    let pools = Pools::from_paths(&paths)?;

    let built = audio::build_dataset(&pools, 200, 3, out.join("data"), &MixConfig::default())?;
    let split = audio::split_dataset(&built, (0.6, 0.2, 0.2), 3)?;
    split.write(out.join("data"))?;
    let reread = DatasetManifest::read(out.join("data"))?;
    assert_eq!(reread, split);
    for (s, b) in split.split_balance() {
        println!("{s:?}: {} speech / {} non-speech", b.speech, b.non_speech);
    }

    let pb = audio::build_playback_set(&pools, 5, 3, out.join("playback"))?;
    for d in audio::PLAYBACK_DISTANCES_M {
        let n = pb.records_in(Split::Playback).iter().filter(|r| r.distance_m == Some(d)).count();
        println!("playback {d:>2} m: {n} clips, low-pass at {:.0} Hz", audio::dataset::playback_cutoff_hz(d as f64));
    }
    let first = &split.records[0];
    println!("clip {} (label {}) mixes {:?}", first.id, first.label, first.sources.iter().map(|s| s.kind).collect::<Vec<_>>());
    println!("written under {}", out.display());
    Ok(())
}
