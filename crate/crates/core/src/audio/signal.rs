//! Small signal utilities shared by the generators and their tests.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::wav::SAMPLE_RATE;

pub fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn peak(x: &[f32]) -> f32 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Linear gain of -1 dBFS.
pub fn ceiling() -> f32 {
    db_to_gain(-1.0) as f32
}

/// Scales `x` down so its peak, after 16-bit quantization, stays at or below
/// -1 dBFS. Quieter signals are left untouched.
pub fn limit_peak(x: &mut [f32]) {
    let p = peak(x);
    // one code of headroom for rounding
    let ceil = ceiling() - 1.0 / 32767.0;
    if p > ceil {
        let g = ceil / p;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// First-order IIR low-pass `y[n] = y[n-1] + a (x[n] - y[n-1])`,
/// `a = 1 - exp(-2 pi fc / fs)`.
pub fn one_pole_lowpass(x: &[f32], cutoff_hz: f64) -> Vec<f32> {
    let a = 1.0 - (-2.0 * std::f64::consts::PI * cutoff_hz / SAMPLE_RATE as f64).exp();
    let mut y = 0.0f64;
    x.iter()
        .map(|&v| {
            y += a * (v as f64 - y);
            y as f32
        })
        .collect()
}

fn spectrum(x: &[f32]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf[..x.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

/// RMS of the components of `x` between `lo` and `hi` Hz (Parseval).
pub fn band_rms(x: &[f32], lo: f64, hi: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let p = spectrum(x);
    let df = SAMPLE_RATE as f64 / n;
    let energy: f64 = p
        .iter()
        .enumerate()
        .filter(|(k, _)| (lo..=hi).contains(&(*k as f64 * df)))
        .map(|(k, &v)| if k == 0 || 2 * k == x.len() { v } else { 2.0 * v })
        .sum();
    (energy / (n * n)).sqrt()
}

/// Power-weighted mean frequency in Hz.
pub fn spectral_centroid(x: &[f32]) -> f64 {
    let p = spectrum(x);
    let df = SAMPLE_RATE as f64 / x.len() as f64;
    let total: f64 = p.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    p.iter().enumerate().map(|(k, v)| k as f64 * df * v).sum::<f64>() / total
}

/// Raised-cosine fade in and out over `len` samples each.
pub fn fade_edges(x: &mut [f32], len: usize) {
    let len = len.min(x.len() / 2);
    let n = x.len();
    for i in 0..len {
        let g = (0.5 - 0.5 * (std::f64::consts::PI * i as f64 / len as f64).cos()) as f32;
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(f: f64, n: usize) -> Vec<f32> {
        (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / SAMPLE_RATE as f64).sin() as f32).collect()
    }

    #[test]
    fn band_rms_of_a_tone() {
        let x = tone(1000.0, 16_000);
        let full = rms(&x);
        assert!((band_rms(&x, 900.0, 1100.0) - full).abs() < 1e-4);
        assert!(band_rms(&x, 2000.0, 3000.0) < 1e-4);
    }

    #[test]
    fn lowpass_attenuates_highs() {
        let x = tone(6000.0, 16_000);
        let y = one_pole_lowpass(&x, 500.0);
        assert!(rms(&y) < 0.2 * rms(&x));
        let z = one_pole_lowpass(&tone(50.0, 16_000), 500.0);
        assert!(rms(&z[1000..]) > 0.9 * rms(&tone(50.0, 16_000)));
    }

    #[test]
    fn limiter_respects_ceiling() {
        let mut x = vec![0.0, 2.0, -3.0];
        limit_peak(&mut x);
        assert!(x.iter().all(|&v| crate::audio::wav::quantize(v).unsigned_abs() as f32 / 32767.0 <= ceiling()));
        let mut quiet = vec![0.1, -0.2];
        limit_peak(&mut quiet);
        assert_eq!(quiet, vec![0.1, -0.2]);
    }

    #[test]
    fn centroid_orders_tones() {
        assert!(spectral_centroid(&tone(300.0, 8000)) < spectral_centroid(&tone(3000.0, 8000)));
    }
}
