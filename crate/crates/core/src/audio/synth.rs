//! Synthetic stand-ins for the speech, background and bird source pools.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::signal::{fade_edges, rms};
use super::wav::{write_wav, SAMPLE_RATE};
use crate::error::Result;
use crate::rng::{item_stream, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub speech: usize,
    pub background: usize,
    pub bird: usize,
    /// Length of every generated file.
    pub duration_s: f64,
}

impl Default for PoolSpec {
    fn default() -> Self {
        PoolSpec { speech: 40, background: 24, bird: 16, duration_s: 4.0 }
    }
}

/// Paths of the generated files, by pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolPaths {
    pub speech: Vec<PathBuf>,
    pub background: Vec<PathBuf>,
    pub bird: Vec<PathBuf>,
}

/// Voiced syllables: a harmonic complex on a 100-300 Hz fundamental under a
/// two-formant envelope, gated by a 4-8 Hz amplitude modulation.
pub fn speech_proxy(rng: &mut Rng, n: usize) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let f0: f64 = rng.gen_range(100.0..300.0);
    let glide: f64 = rng.gen_range(-0.15..0.15);
    let am = rng.gen_range(4.0..8.0);
    let am_phase = rng.gen_range(0.0..TAU);
    let vibrato = rng.gen_range(3.0..6.0);
    let syllable = (sr / am) as usize;
    let mut formants = Vec::new();
    let mut out = vec![0.0f64; n];
    let harmonics = (4000.0 / (f0 * 1.2)).floor() as usize;
    let mut phases = vec![0.0f64; harmonics];
    for (i, o) in out.iter_mut().enumerate() {
        if i % syllable == 0 || formants.is_empty() {
            formants = vec![(rng.gen_range(300.0..900.0), 120.0), (rng.gen_range(900.0..2500.0), 200.0)];
        }
        let t = i as f64 / sr;
        let f = f0 * (1.0 + glide * t / 4.0) * (1.0 + 0.02 * (TAU * vibrato * t).sin());
        let gate = (TAU * am * t + am_phase).sin().max(0.0).powf(0.6);
        let mut s = 0.0;
        for (h, ph) in phases.iter_mut().enumerate() {
            let fh = f * (h + 1) as f64;
            *ph = (*ph + TAU * fh / sr) % TAU;
            let env: f64 = formants.iter().map(|(c, bw)| (-0.5 * ((fh - c) / bw).powi(2)).exp()).sum::<f64>() + 0.05;
            s += env / (h + 1) as f64 * ph.sin();
        }
        *o = gate * s;
    }
    normalize(out)
}

/// Pink noise (Kellet filter) plus low-frequency rumble.
pub fn background_proxy(rng: &mut Rng, n: usize) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let mut b = [0.0f64; 7];
    let rumble: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(20.0..90.0), rng.gen_range(0.0..TAU), rng.gen_range(0.2..1.0)))
        .collect();
    let rumble_gain = rng.gen_range(0.5..2.0);
    let mut brown = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let w: f64 = rng.gen_range(-1.0..1.0);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        let pink = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
        b[6] = w * 0.115926;
        brown = 0.995 * brown + 0.02 * w;
        let t = i as f64 / sr;
        let low: f64 = rumble.iter().map(|(f, p, a)| a * (TAU * f * t + p).sin()).sum();
        out.push(0.1 * pink + rumble_gain * (0.05 * low + brown));
    }
    normalize(out)
}

/// Repeated 2-8 kHz frequency sweeps with silent gaps.
pub fn bird_proxy(rng: &mut Rng, n: usize) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0f64; n];
    let mut pos = rng.gen_range(0..(sr * 0.3) as usize);
    while pos < n {
        let len = (rng.gen_range(0.05..0.25) * sr) as usize;
        let (f1, f2) = (rng.gen_range(2000.0..8000.0), rng.gen_range(2000.0..8000.0));
        let amp = rng.gen_range(0.3..1.0);
        let mut phase = 0.0f64;
        for k in 0..len.min(n - pos) {
            let u = k as f64 / len as f64;
            let f = (f1 + (f2 - f1) * u).min(7900.0);
            phase += TAU * f / sr;
            let env = (std::f64::consts::PI * u).sin().powi(2);
            out[pos + k] += amp * env * phase.sin();
        }
        pos += len + (rng.gen_range(0.05..0.4) * sr) as usize;
    }
    normalize(out)
}

/// Scales to RMS 0.1 (silence stays silent).
fn normalize(x: Vec<f64>) -> Vec<f32> {
    let v: Vec<f32> = x.iter().map(|&s| s as f32).collect();
    let r = rms(&v);
    if r == 0.0 {
        return v;
    }
    let mut v: Vec<f32> = v.iter().map(|&s| (s as f64 * 0.1 / r) as f32).collect();
    fade_edges(&mut v, 160);
    v
}

/// Writes `spec.speech` speech, `spec.background` background and
/// `spec.bird` bird files under `out_dir/{speech,background,bird}`.
pub fn synth_pools(seed: u64, out_dir: impl AsRef<Path>, spec: &PoolSpec) -> Result<PoolPaths> {
    let n = (spec.duration_s * SAMPLE_RATE as f64).round() as usize;
    type Generator = fn(&mut Rng, usize) -> Vec<f32>;
    let kinds: [(&str, usize, Generator); 3] = [
        ("speech", spec.speech, speech_proxy),
        ("background", spec.background, background_proxy),
        ("bird", spec.bird, bird_proxy),
    ];
    let mut paths: Vec<Vec<PathBuf>> = Vec::new();
    for (k, (name, count, gen)) in kinds.into_iter().enumerate() {
        let dir = out_dir.as_ref().join(name);
        std::fs::create_dir_all(&dir)?;
        let mut files = Vec::with_capacity(count);
        for i in 0..count {
            let mut rng = item_stream(seed, Stream::Pools, ((k as u64) << 32) | i as u64);
            let path = dir.join(format!("{name}_{i:04}.wav"));
            write_wav(&path, &gen(&mut rng, n))?;
            files.push(path);
        }
        paths.push(files);
    }
    let bird = paths.pop().expect("three pools");
    let background = paths.pop().expect("three pools");
    let speech = paths.pop().expect("three pools");
    Ok(PoolPaths { speech, background, bird })
}
