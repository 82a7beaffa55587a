//! WAV reading (any PCM or float layout, downmixed and resampled) and
//! 16-bit mono writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use rubato::{FftFixedIn, Resampler};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Reads a WAV file as mono `f32` in `[-1,1]` at [`SAMPLE_RATE`]. Stereo is
/// averaged; other rates are resampled.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let fail = |e: &dyn std::fmt::Display| Error::audio(path, e.to_string());
    let mut reader = WavReader::open(path).map_err(|e| fail(&e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>().map_err(|e| fail(&e))?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| fail(&e))?
        }
    };
    let mono: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    if spec.sample_rate == SAMPLE_RATE {
        Ok(mono)
    } else {
        resample(&mono, spec.sample_rate, SAMPLE_RATE).map_err(|e| fail(&e))
    }
}

/// Band-limited resampling; the output has `round(len * to / from)` samples.
pub fn resample(input: &[f32], from: u32, to: u32) -> Result<Vec<f32>> {
    let target = (input.len() as f64 * to as f64 / from as f64).round() as usize;
    if input.is_empty() {
        return Ok(Vec::new());
    }
    let err = |e: &dyn std::fmt::Display| Error::invalid(format!("resampling {from} Hz -> {to} Hz: {e}"));
    let mut rs = FftFixedIn::<f64>::new(from as usize, to as usize, 1024, 2, 1).map_err(|e| err(&e))?;
    let delay = rs.output_delay();
    let samples: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let mut out = Vec::with_capacity(target + delay + 2048);
    let mut pos = 0;
    while samples.len() - pos >= rs.input_frames_next() {
        let n = rs.input_frames_next();
        let chunk = rs.process(&[&samples[pos..pos + n]], None).map_err(|e| err(&e))?;
        out.extend_from_slice(&chunk[0]);
        pos += n;
    }
    let tail = rs.process_partial(Some(&[&samples[pos..]]), None).map_err(|e| err(&e))?;
    out.extend_from_slice(&tail[0]);
    while out.len() < target + delay {
        let flush = rs.process_partial::<&[f64]>(None, None).map_err(|e| err(&e))?;
        out.extend_from_slice(&flush[0]);
    }
    Ok(out[delay..delay + target].iter().map(|&v| v as f32).collect())
}

/// Writes 16-bit mono PCM at [`SAMPLE_RATE`]. Samples are clamped to `[-1,1]`.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let fail = |e: hound::Error| Error::audio(path, e.to_string());
    let mut w = WavWriter::create(path, spec).map_err(fail)?;
    for &s in samples {
        w.write_sample(quantize(s)).map_err(fail)?;
    }
    w.finalize().map_err(fail)
}

/// Nearest 16-bit code for a sample in `[-1,1]`.
pub fn quantize(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f32> = (0..1600).map(|i| (i as f32 * 0.01).sin() * 0.5).collect();
        write_wav(&p, &x).unwrap();
        let y = read_wav(&p).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 1.0 / 32767.0);
        }
    }

    #[test]
    fn stereo_float_44k_is_downmixed_and_resampled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec { channels: 2, sample_rate: 44_100, bits_per_sample: 32, sample_format: SampleFormat::Float };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for i in 0..44_100 {
            let v = (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 44_100.0).sin() * 0.5;
            w.write_sample(v * 1.2).unwrap();
            w.write_sample(v * 0.8).unwrap();
        }
        w.finalize().unwrap();
        let y = read_wav(&p).unwrap();
        assert_eq!(y.len(), 16_000);
        // compare away from the edges against the ideal 16 kHz tone
        let err = (2000..14000)
            .map(|i| {
                let want = (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 16_000.0).sin() * 0.5;
                (y[i] - want).abs()
            })
            .fold(0.0f32, f32::max);
        assert!(err < 1e-2, "max error {err}");
    }

    #[test]
    fn unreadable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.wav");
        std::fs::write(&p, b"not audio").unwrap();
        let err = read_wav(&p).unwrap_err().to_string();
        assert!(err.contains("junk.wav"), "{err}");
    }
}
