//! Log-mel spectrograms of 3-second clips and their binary cache format.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::wav::SAMPLE_RATE;
use crate::error::{Error, Result};

pub const CLIP_SAMPLES: usize = 48_000;
pub const N_FFT: usize = 1024;
pub const HOP: usize = 368;
pub const N_MELS: usize = 128;
pub const N_FRAMES: usize = 128;
pub const F_MIN: f64 = 50.0;
pub const F_MAX: f64 = 8_000.0;
const N_BINS: usize = N_FFT / 2 + 1;

/// `N_MELS x N_FRAMES` matrix in `[0,1]`, row 0 is the lowest band.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpec {
    pub data: Vec<f32>,
    /// Range of `ln(1+S)` before scaling.
    pub min: f32,
    pub max: f32,
}

impl MelSpec {
    pub fn rows(&self) -> usize {
        N_MELS
    }

    pub fn cols(&self) -> usize {
        N_FRAMES
    }

    pub fn at(&self, band: usize, frame: usize) -> f32 {
        self.data[band * N_FRAMES + frame]
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies of the mel bands in Hz.
pub fn band_centers() -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(F_MIN), hz_to_mel(F_MAX));
    (1..=N_MELS).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64)).collect()
}

/// Triangular filter weights, `N_MELS x N_BINS`, evaluated at FFT bin
/// frequencies (peak 1, no area normalization).
pub fn filterbank() -> &'static [Vec<f64>] {
    static BANK: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    BANK.get_or_init(|| {
        let (lo, hi) = (hz_to_mel(F_MIN), hz_to_mel(F_MAX));
        let edges: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
            .collect();
        (0..N_MELS)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..N_BINS)
                    .map(|k| {
                        let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
                        let up = (f - l) / (c - l);
                        let down = (r - f) / (r - c);
                        up.min(down).max(0.0)
                    })
                    .collect()
            })
            .collect()
    })
}

fn hann() -> &'static [f64] {
    static WINDOW: OnceLock<Vec<f64>> = OnceLock::new();
    WINDOW.get_or_init(|| {
        (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos())
            .collect()
    })
}

fn fft() -> Arc<dyn Fft<f64>> {
    static PLAN: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_forward(N_FFT)).clone()
}

/// Power spectrum `|X_k|^2` of every frame, `N_FRAMES x N_BINS`.
pub fn power_frames(clip: &[f32]) -> Result<Vec<[f64; N_BINS]>> {
    if clip.len() != CLIP_SAMPLES {
        return Err(Error::invalid(format!("clip has {} samples, expected {CLIP_SAMPLES}", clip.len())));
    }
    let plan = fft();
    let window = hann();
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut frames = Vec::with_capacity(N_FRAMES);
    for t in 0..N_FRAMES {
        let start = t * HOP;
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(clip[start + n] as f64 * window[n], 0.0);
        }
        plan.process(&mut buf);
        let mut p = [0.0; N_BINS];
        for (k, v) in p.iter_mut().enumerate() {
            *v = buf[k].norm_sqr();
        }
        frames.push(p);
    }
    Ok(frames)
}

/// `ln(1 + mel power)`, min-max scaled per clip. A constant result (for
/// example digital silence) maps to all zeros.
pub fn mel_spectrogram(clip: &[f32]) -> Result<MelSpec> {
    let frames = power_frames(clip)?;
    let bank = filterbank();
    let mut data = vec![0f64; N_MELS * N_FRAMES];
    for (t, p) in frames.iter().enumerate() {
        for (m, w) in bank.iter().enumerate() {
            let s: f64 = w.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
            data[m * N_FRAMES + t] = s.ln_1p();
        }
    }
    let (min, max) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = max - min;
    let data = data
        .iter()
        .map(|&v| if range > 0.0 { ((v - min) / range) as f32 } else { 0.0 })
        .collect();
    Ok(MelSpec { data, min: min as f32, max: max as f32 })
}

pub const MELS_MAGIC: &[u8; 4] = b"MELS";

pub fn encode_mels(rows: usize, cols: usize, data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + data.len() * 4);
    out.extend_from_slice(MELS_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// `(rows, cols, values)` of a cache file.
pub fn decode_mels(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let bad = |m: &str| Error::invalid(format!("spectrogram cache: {m}"));
    if bytes.len() < 12 || &bytes[..4] != MELS_MAGIC {
        return Err(bad("bad magic"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() != rows * cols * 4 {
        return Err(bad(&format!("{} payload bytes for {rows}x{cols}", body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok((rows, cols, data))
}

pub fn write_mels(path: impl AsRef<Path>, spec: &MelSpec) -> Result<()> {
    std::fs::write(path, encode_mels(spec.rows(), spec.cols(), &spec.data))?;
    Ok(())
}

pub fn read_mels(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let (rows, cols, data) = decode_mels(&std::fs::read(path)?)?;
    if (rows, cols) != (N_MELS, N_FRAMES) {
        return Err(Error::invalid(format!("cached spectrogram is {rows}x{cols}, expected {N_MELS}x{N_FRAMES}")));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(f: f64, amp: f64) -> Vec<f32> {
        (0..CLIP_SAMPLES)
            .map(|n| (amp * (2.0 * std::f64::consts::PI * f * n as f64 / SAMPLE_RATE as f64).sin()) as f32)
            .collect()
    }

    #[test]
    fn frame_count_covers_clip() {
        assert_eq!((N_FRAMES - 1) * HOP + N_FFT, 47_760);
        assert!((N_FRAMES - 1) * HOP + N_FFT <= CLIP_SAMPLES);
        assert!(N_FRAMES * HOP + N_FFT > CLIP_SAMPLES);
    }

    #[test]
    fn every_filter_has_support() {
        for (m, w) in filterbank().iter().enumerate() {
            assert!(w.iter().any(|&v| v > 0.0), "band {m} empty");
        }
    }

    #[test]
    fn silence_is_all_zero() {
        let s = mel_spectrogram(&vec![0.0; CLIP_SAMPLES]).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
        assert_eq!(s.data.len(), N_MELS * N_FRAMES);
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(mel_spectrogram(&vec![0.0; 47_999]).is_err());
    }

    #[test]
    fn tone_peaks_in_its_band() {
        let s = mel_spectrogram(&tone(440.0, 0.5)).unwrap();
        let energy: Vec<f32> = (0..N_MELS).map(|m| (0..N_FRAMES).map(|t| s.at(m, t)).sum()).collect();
        let best = (0..N_MELS).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        // band with the largest triangle weight at 440 Hz
        let (lo, hi) = (hz_to_mel(F_MIN), hz_to_mel(F_MAX));
        let edges: Vec<f64> = (0..N_MELS + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64)).collect();
        let tri = |m: usize, f: f64| ((f - edges[m]) / (edges[m + 1] - edges[m])).min((edges[m + 2] - f) / (edges[m + 2] - edges[m + 1])).max(0.0);
        let want = (0..N_MELS).max_by(|&a, &b| tri(a, 440.0).total_cmp(&tri(b, 440.0))).unwrap();
        assert_eq!(best, want);
        assert!(edges[best] < 440.0 && 440.0 < edges[best + 2]);
    }

    #[test]
    fn output_in_unit_range_and_deterministic() {
        let clip: Vec<f32> = (0..CLIP_SAMPLES).map(|n| ((n * 7919 % 1000) as f32 / 1000.0 - 0.5) * 0.3).collect();
        let a = mel_spectrogram(&clip).unwrap();
        let b = mel_spectrogram(&clip).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.data.iter().any(|&v| v == 0.0) && a.data.iter().any(|&v| v == 1.0));
    }

    #[test]
    fn cache_round_trip_is_lossless() {
        let a = mel_spectrogram(&tone(1000.0, 0.2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.mels");
        write_mels(&p, &a).unwrap();
        let back = read_mels(&p).unwrap();
        assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(decode_mels(b"MELS\x01\0\0\0\x01\0\0\0").is_err());
    }
}
