//! Labeled clip synthesis, manifests, splits and the playback proxy set.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mel::{mel_spectrogram, read_mels, write_mels, CLIP_SAMPLES, N_FRAMES, N_MELS};
use super::signal::{db_to_gain, fade_edges, limit_peak, one_pole_lowpass, rms};
use super::synth::PoolPaths;
use super::wav::{read_wav, write_wav, SAMPLE_RATE};
use crate::distill::Samples;
use crate::error::{Error, Result};
use crate::rng::{item_stream, stream, Rng, Stream};

pub const CLIP_DURATION_S: f64 = 3.0;
pub const PLAYBACK_DISTANCES_M: [u32; 4] = [1, 5, 10, 20];
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const HEADER_FILE: &str = "dataset.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Playback,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "playback" => Ok(Split::Playback),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Speech,
    Background,
    Bird,
}

/// One source excerpt mixed into a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceUse {
    pub kind: SourceKind,
    pub file: String,
    /// First sample taken from the source file.
    pub offset: usize,
    /// Position of that sample in the clip.
    pub start: usize,
    pub length: usize,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    /// Relative to the dataset directory.
    pub path: String,
    /// 1 for speech, 0 for no speech.
    pub label: u8,
    pub sources: Vec<SourceUse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<u32>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Balance {
    pub speech: usize,
    pub non_speech: usize,
}

/// Mixing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    /// Speech RMS over background RMS, dB.
    pub snr_db: (f64, f64),
    pub bird_probability: f64,
    /// Bird RMS over background RMS, dB.
    pub bird_db: (f64, f64),
    pub speech_seconds: (f64, f64),
    /// Background RMS level, dBFS.
    pub background_dbfs: (f64, f64),
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            snr_db: (-6.0, 12.0),
            bird_probability: 0.5,
            bird_db: (-6.0, 6.0),
            speech_seconds: (1.0, 2.0),
            background_dbfs: (-40.0, -25.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub id: String,
    pub sample_rate: u32,
    pub clip_duration_s: f64,
    pub n_records: usize,
    pub balance: Balance,
    pub seed: u64,
    pub mix: MixConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub id: String,
    pub sample_rate: u32,
    pub clip_duration_s: f64,
    pub seed: u64,
    pub mix: MixConfig,
    pub records: Vec<ClipRecord>,
}

impl DatasetManifest {
    pub fn balance(&self) -> Balance {
        balance(self.records.iter())
    }

    /// Label counts per split (records without a split are skipped).
    pub fn split_balance(&self) -> BTreeMap<Split, Balance> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            if let Some(s) = r.split {
                let b: &mut Balance = out.entry(s).or_default();
                if r.label == 1 {
                    b.speech += 1;
                } else {
                    b.non_speech += 1;
                }
            }
        }
        out
    }

    pub fn records_in(&self, split: Split) -> Vec<&ClipRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            id: self.id.clone(),
            sample_rate: self.sample_rate,
            clip_duration_s: self.clip_duration_s,
            n_records: self.records.len(),
            balance: self.balance(),
            seed: self.seed,
            mix: self.mix,
        }
    }

    /// Writes `dataset.json` and `manifest.jsonl` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(HEADER_FILE), serde_json::to_string_pretty(&self.header())? + "\n")?;
        let mut w = BufWriter::new(std::fs::File::create(dir.join(MANIFEST_FILE))?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let header: DatasetHeader = serde_json::from_str(&std::fs::read_to_string(dir.join(HEADER_FILE))?)?;
        let f = std::fs::File::open(dir.join(MANIFEST_FILE))?;
        let mut records = Vec::with_capacity(header.n_records);
        for line in BufReader::new(f).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        if records.len() != header.n_records {
            return Err(Error::invalid(format!(
                "{} lists {} records but {} has {}",
                HEADER_FILE,
                header.n_records,
                MANIFEST_FILE,
                records.len()
            )));
        }
        Ok(DatasetManifest {
            id: header.id,
            sample_rate: header.sample_rate,
            clip_duration_s: header.clip_duration_s,
            seed: header.seed,
            mix: header.mix,
            records,
        })
    }
}

fn balance<'a>(records: impl Iterator<Item = &'a ClipRecord>) -> Balance {
    let mut b = Balance::default();
    for r in records {
        if r.label == 1 {
            b.speech += 1;
        } else {
            b.non_speech += 1;
        }
    }
    b
}

/// A decoded source file.
#[derive(Debug, Clone)]
pub struct Source {
    pub id: String,
    pub samples: Vec<f32>,
}

/// Decoded speech, background and bird pools.
#[derive(Debug, Clone, Default)]
pub struct Pools {
    pub speech: Vec<Source>,
    pub background: Vec<Source>,
    pub bird: Vec<Source>,
}

fn load_files(paths: &[PathBuf]) -> Result<Vec<Source>> {
    paths
        .par_iter()
        .map(|p| {
            let id = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(Source { id, samples: read_wav(p)? })
        })
        .collect()
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::audio(dir, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

impl Pools {
    pub fn from_paths(paths: &PoolPaths) -> Result<Self> {
        Ok(Pools {
            speech: load_files(&paths.speech)?,
            background: load_files(&paths.background)?,
            bird: load_files(&paths.bird)?,
        })
    }

    /// Loads every `.wav` (sorted by name) from the three directories.
    pub fn from_dirs(speech: &Path, background: &Path, bird: &Path) -> Result<Self> {
        Pools::from_paths(&PoolPaths {
            speech: wav_files(speech)?,
            background: wav_files(background)?,
            bird: wav_files(bird)?,
        })
    }

    /// Loads `speech/`, `background/` and `bird/` under `root`.
    pub fn from_root(root: &Path) -> Result<Self> {
        Pools::from_dirs(&root.join("speech"), &root.join("background"), &root.join("bird"))
    }

    fn check(&self, need_speech: bool, need_background: bool) -> Result<()> {
        if need_speech && self.speech.is_empty() {
            return Err(Error::Empty("speech pool is empty but speech clips were requested".into()));
        }
        if need_background && self.background.is_empty() {
            return Err(Error::Empty("background pool is empty".into()));
        }
        for s in &self.background {
            if s.samples.len() < CLIP_SAMPLES {
                return Err(Error::audio(&s.id, format!("background shorter than {CLIP_SAMPLES} samples")));
            }
        }
        for s in self.speech.iter().chain(&self.bird) {
            if s.samples.is_empty() {
                return Err(Error::audio(&s.id, "empty source file"));
            }
        }
        Ok(())
    }
}

fn pick<'a>(rng: &mut Rng, pool: &'a [Source]) -> &'a Source {
    &pool[rng.gen_range(0..pool.len())]
}

/// 3 s background excerpt scaled to a level drawn from `dbfs`.
fn background(rng: &mut Rng, pools: &Pools, dbfs: (f64, f64)) -> (Vec<f32>, SourceUse, f64) {
    let src = pick(rng, &pools.background);
    let offset = rng.gen_range(0..=src.samples.len() - CLIP_SAMPLES);
    let excerpt = &src.samples[offset..offset + CLIP_SAMPLES];
    let level = db_to_gain(rng.gen_range(dbfs.0..=dbfs.1));
    let r = rms(excerpt);
    let gain = if r > 0.0 { level / r } else { 1.0 };
    let out: Vec<f32> = excerpt.iter().map(|&v| (v as f64 * gain) as f32).collect();
    let used = SourceUse { kind: SourceKind::Background, file: src.id.clone(), offset, start: 0, length: CLIP_SAMPLES, gain_db: 20.0 * gain.log10() };
    let rms_out = rms(&out);
    (out, used, rms_out)
}

/// A speech excerpt of `seconds` length, with short fades.
fn speech_segment(rng: &mut Rng, pools: &Pools, seconds: (f64, f64)) -> (Vec<f32>, SourceKind, String, usize, usize) {
    let src = pick(rng, &pools.speech);
    let want = (rng.gen_range(seconds.0..=seconds.1) * SAMPLE_RATE as f64) as usize;
    let len = want.min(src.samples.len()).min(CLIP_SAMPLES);
    let offset = rng.gen_range(0..=src.samples.len() - len);
    let start = rng.gen_range(0..=CLIP_SAMPLES - len);
    let mut seg = src.samples[offset..offset + len].to_vec();
    fade_edges(&mut seg, 160);
    (seg, SourceKind::Speech, src.id.clone(), offset, start)
}

fn add_at(dst: &mut [f32], src: &[f32], start: usize, gain: f64) {
    for (d, &s) in dst[start..start + src.len()].iter_mut().zip(src) {
        *d += (s as f64 * gain) as f32;
    }
}

fn synth_clip(pools: &Pools, mix: &MixConfig, rng: &mut Rng, label: u8) -> (Vec<f32>, Vec<SourceUse>) {
    let (mut clip, bg_use, bg_rms) = background(rng, pools, mix.background_dbfs);
    let mut sources = vec![bg_use];
    if !pools.bird.is_empty() && rng.gen_bool(mix.bird_probability) {
        let src = pick(rng, &pools.bird);
        let len = src.samples.len().min(CLIP_SAMPLES);
        let offset = rng.gen_range(0..=src.samples.len() - len);
        let start = rng.gen_range(0..=CLIP_SAMPLES - len);
        let excerpt = &src.samples[offset..offset + len];
        let r = rms(excerpt);
        let db = rng.gen_range(mix.bird_db.0..=mix.bird_db.1);
        let gain = if r > 0.0 { bg_rms * db_to_gain(db) / r } else { 0.0 };
        add_at(&mut clip, excerpt, start, gain);
        sources.push(SourceUse { kind: SourceKind::Bird, file: src.id.clone(), offset, start, length: len, gain_db: 20.0 * gain.max(1e-12).log10() });
    }
    if label == 1 {
        let (seg, kind, file, offset, start) = speech_segment(rng, pools, mix.speech_seconds);
        let snr = rng.gen_range(mix.snr_db.0..=mix.snr_db.1);
        let r = rms(&seg);
        let gain = if r > 0.0 { bg_rms * db_to_gain(snr) / r } else { 0.0 };
        add_at(&mut clip, &seg, start, gain);
        sources.push(SourceUse { kind, file, offset, start, length: seg.len(), gain_db: 20.0 * gain.max(1e-12).log10() });
    }
    limit_peak(&mut clip);
    (clip, sources)
}

/// Writes `n_clips` labeled 3 s clips to `out_dir/clips` plus the manifest.
/// Even indices carry speech, so labels are balanced exactly (within one).
pub fn build_dataset(pools: &Pools, n_clips: usize, seed: u64, out_dir: impl AsRef<Path>, mix: &MixConfig) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if n_clips > 0 {
        pools.check(true, true)?;
    }
    let clip_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir)?;
    let records = (0..n_clips)
        .into_par_iter()
        .map(|i| {
            let label = (i % 2 == 0) as u8;
            let mut rng = item_stream(seed, Stream::Clips, i as u64);
            let (clip, sources) = synth_clip(pools, mix, &mut rng, label);
            let id = format!("clip_{i:06}");
            let rel = format!("clips/{id}.wav");
            write_wav(out_dir.join(&rel), &clip)?;
            Ok(ClipRecord { id, path: rel, label, sources, split: None, distance_m: None, seed })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        id: format!("synthetic-{seed}-{n_clips}"),
        sample_rate: SAMPLE_RATE,
        clip_duration_s: CLIP_DURATION_S,
        seed,
        mix: *mix,
        records,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Assigns train/val/test by shuffling each label group and cutting it at
/// the given ratios.
pub fn split_dataset(manifest: &DatasetManifest, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetManifest> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| *r < 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut out = manifest.clone();
    let mut rng = stream(seed, Stream::Split);
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..out.records.len()).filter(|&i| out.records[i].label == label && out.records[i].split != Some(Split::Playback)).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (n as f64 * a).round() as usize;
        let n_val = ((n as f64 * b).round() as usize).min(n - n_train);
        for (k, &i) in idx.iter().enumerate() {
            out.records[i].split = Some(if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    Ok(out)
}

/// Cutoff of the distance low-pass: 8 kHz at 1 m falling log-linearly to
/// 2 kHz at 20 m.
pub fn playback_cutoff_hz(distance_m: f64) -> f64 {
    8000.0 * 0.25f64.powf(distance_m.ln() / 20f64.ln())
}

/// Speech level over background at 1 m, dB.
pub const PLAYBACK_BASE_SNR_DB: f64 = 20.0;

/// Writes the playback proxy: for each distance, `per_group` speech clips
/// and `per_group` background-only clips. Clip `j` uses the same sources at
/// every distance; only the speech attenuation and low-pass change.
pub fn build_playback_set(pools: &Pools, per_group: usize, seed: u64, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if per_group > 0 {
        pools.check(true, true)?;
    }
    std::fs::create_dir_all(out_dir.join("clips"))?;
    let mix = MixConfig::default();
    let jobs: Vec<(u32, u8, usize)> = PLAYBACK_DISTANCES_M
        .iter()
        .flat_map(|&d| [1u8, 0].into_iter().flat_map(move |l| (0..per_group).map(move |j| (d, l, j))))
        .collect();
    let records = jobs
        .into_par_iter()
        .map(|(d, label, j)| {
            let mut rng = item_stream(seed, Stream::Playback, ((label as u64) << 32) | j as u64);
            let (mut clip, bg_use, bg_rms) = background(&mut rng, pools, mix.background_dbfs);
            let mut sources = vec![bg_use];
            if label == 1 {
                let (seg, kind, file, offset, start) = speech_segment(&mut rng, pools, mix.speech_seconds);
                let snr = PLAYBACK_BASE_SNR_DB - 20.0 * (d as f64).log10();
                let r = rms(&seg);
                let gain = if r > 0.0 { bg_rms * db_to_gain(snr) / r } else { 0.0 };
                let filtered = one_pole_lowpass(&seg, playback_cutoff_hz(d as f64));
                add_at(&mut clip, &filtered, start, gain);
                sources.push(SourceUse { kind, file, offset, start, length: seg.len(), gain_db: 20.0 * gain.max(1e-12).log10() });
            }
            limit_peak(&mut clip);
            let id = format!("playback_{d:02}m_{}_{j:04}", if label == 1 { "speech" } else { "noise" });
            let rel = format!("clips/{id}.wav");
            write_wav(out_dir.join(&rel), &clip)?;
            Ok(ClipRecord { id, path: rel, label, sources, split: Some(Split::Playback), distance_m: Some(d), seed })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        id: format!("playback-{seed}-{per_group}"),
        sample_rate: SAMPLE_RATE,
        clip_duration_s: CLIP_DURATION_S,
        seed,
        mix,
        records,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Spectrograms of a set of records, in record order.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub samples: Samples,
    pub ids: Vec<String>,
    pub distances: Vec<Option<u32>>,
}

/// Reads the clips of `records` from `dataset_dir` and converts them to
/// spectrograms, reusing `dataset_dir/mels/<id>.mels` when `cache` is set.
pub fn load_records(dataset_dir: impl AsRef<Path>, records: &[&ClipRecord], cache: bool) -> Result<LoadedSplit> {
    let dir = dataset_dir.as_ref();
    if records.is_empty() {
        return Err(Error::Empty("no records to load".into()));
    }
    let mel_dir = dir.join("mels");
    if cache {
        std::fs::create_dir_all(&mel_dir)?;
    }
    let maps = records
        .par_iter()
        .map(|r| {
            let cached = mel_dir.join(format!("{}.mels", r.id));
            if cache && cached.exists() {
                return read_mels(&cached);
            }
            let clip = read_wav(dir.join(&r.path))?;
            if clip.len() != CLIP_SAMPLES {
                return Err(Error::audio(dir.join(&r.path), format!("{} samples, expected {CLIP_SAMPLES}", clip.len())));
            }
            let spec = mel_spectrogram(&clip)?;
            if cache {
                write_mels(&cached, &spec)?;
            }
            Ok(spec.data)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = records.iter().map(|r| r.label as f32).collect();
    Ok(LoadedSplit {
        samples: Samples::from_maps(&maps, N_MELS, N_FRAMES, labels)?,
        ids: records.iter().map(|r| r.id.clone()).collect(),
        distances: records.iter().map(|r| r.distance_m).collect(),
    })
}

/// Loads one split of a manifest stored in `dataset_dir`.
pub fn load_split(dataset_dir: impl AsRef<Path>, manifest: &DatasetManifest, split: Split, cache: bool) -> Result<LoadedSplit> {
    let recs = manifest.records_in(split);
    if recs.is_empty() {
        return Err(Error::Empty(format!("split {split:?} has no records")));
    }
    load_records(dataset_dir, &recs, cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::signal::{band_rms, ceiling, peak};
    use crate::audio::synth::{synth_pools, PoolSpec};

    fn small_pools(dir: &Path) -> Pools {
        let spec = PoolSpec { speech: 3, background: 2, bird: 2, duration_s: 3.5 };
        Pools::from_paths(&synth_pools(11, dir, &spec).unwrap()).unwrap()
    }

    #[test]
    fn build_split_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let pools = small_pools(&tmp.path().join("pools"));
        let out = tmp.path().join("ds");
        let m = build_dataset(&pools, 20, 4, &out, &MixConfig::default()).unwrap();
        assert_eq!(m.balance(), Balance { speech: 10, non_speech: 10 });
        for r in &m.records {
            let clip = read_wav(out.join(&r.path)).unwrap();
            assert_eq!(clip.len(), CLIP_SAMPLES);
            assert!(peak(&clip) <= ceiling());
            assert_eq!(r.label == 1, r.sources.iter().any(|s| s.kind == SourceKind::Speech));
        }
        let back = DatasetManifest::read(&out).unwrap();
        assert_eq!(back, m);
        let split = split_dataset(&m, (0.6, 0.2, 0.2), 1).unwrap();
        let counts: Vec<usize> = [Split::Train, Split::Val, Split::Test].iter().map(|s| split.records_in(*s).len()).collect();
        assert_eq!(counts, vec![12, 4, 4]);
        for (_, b) in split.split_balance() {
            assert!(b.speech.abs_diff(b.non_speech) <= 1);
        }
    }

    #[test]
    fn zero_clips_and_empty_pools() {
        let tmp = tempfile::tempdir().unwrap();
        let m = build_dataset(&Pools::default(), 0, 1, tmp.path(), &MixConfig::default()).unwrap();
        assert!(m.records.is_empty());
        assert_eq!(std::fs::read_dir(tmp.path().join("clips")).unwrap().count(), 0);
        let err = build_dataset(&Pools::default(), 2, 1, tmp.path(), &MixConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let m = DatasetManifest { id: "x".into(), sample_rate: SAMPLE_RATE, clip_duration_s: 3.0, seed: 0, mix: MixConfig::default(), records: vec![] };
        assert!(split_dataset(&m, (0.5, 0.2, 0.2), 0).is_err());
    }

    #[test]
    fn cutoff_endpoints() {
        assert!((playback_cutoff_hz(1.0) - 8000.0).abs() < 1e-9);
        assert!((playback_cutoff_hz(20.0) - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn playback_groups_and_levels() {
        let tmp = tempfile::tempdir().unwrap();
        let pools = small_pools(&tmp.path().join("pools"));
        let out = tmp.path().join("pb");
        let m = build_playback_set(&pools, 3, 2, &out).unwrap();
        let mut by_distance: BTreeMap<u32, Vec<&ClipRecord>> = BTreeMap::new();
        for r in &m.records {
            by_distance.entry(r.distance_m.unwrap()).or_default().push(r);
        }
        assert_eq!(by_distance.keys().copied().collect::<Vec<_>>(), PLAYBACK_DISTANCES_M.to_vec());
        let mut levels = Vec::new();
        for (_, recs) in &by_distance {
            assert_eq!(balance(recs.iter().copied()), Balance { speech: 3, non_speech: 3 });
            let level: f64 = recs
                .iter()
                .filter(|r| r.label == 1)
                .map(|r| band_rms(&read_wav(out.join(&r.path)).unwrap(), 300.0, 3400.0))
                .sum();
            levels.push(level);
        }
        assert!(levels.windows(2).all(|w| w[0] > w[1]), "{levels:?}");
    }

    #[test]
    fn cached_load_matches_fresh() {
        let tmp = tempfile::tempdir().unwrap();
        let pools = small_pools(&tmp.path().join("pools"));
        let out = tmp.path().join("ds");
        let m = split_dataset(&build_dataset(&pools, 10, 4, &out, &MixConfig::default()).unwrap(), (0.6, 0.2, 0.2), 0).unwrap();
        let a = load_split(&out, &m, Split::Train, true).unwrap();
        let b = load_split(&out, &m, Split::Train, true).unwrap();
        let c = load_split(&out, &m, Split::Train, false).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.samples, c.samples);
        assert_eq!(a.samples.len(), 6);
    }
}
