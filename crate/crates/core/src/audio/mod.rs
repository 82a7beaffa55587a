//! Synthetic dataset construction, spectrogram features and the playback
//! proxy set.

pub mod dataset;
pub mod mel;
pub mod signal;
pub mod synth;
pub mod wav;

pub use dataset::{
    build_dataset, build_playback_set, load_records, load_split, split_dataset, Balance, ClipRecord,
    DatasetManifest, LoadedSplit, MixConfig, Pools, Split, PLAYBACK_DISTANCES_M,
};
pub use mel::{mel_spectrogram, MelSpec};
pub use synth::{synth_pools, PoolPaths, PoolSpec};
pub use wav::{read_wav, write_wav, SAMPLE_RATE};
