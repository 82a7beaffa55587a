//! Spectrogram of a synthetic speech clip and of background noise, printed
//! as coarse band energy profiles.
//!
//! cargo run --release --example mel_spectrogram

use distill_vad::audio::{mel, synth};
use distill_vad::rng::{stream, Stream};

fn profile(name: &str, spec: &mel::MelSpec) {
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    println!("{name} (low bands at the bottom, 16 x 16 cell averages)");
    for row in (0..16).rev() {
        let line: String = (0..16)
            .map(|col| {
                let mut s = 0.0;
                for b in row * 8..row * 8 + 8 {
                    for t in col * 8..col * 8 + 8 {
                        s += spec.at(b, t);
                    }
                }
                shades[((s / 64.0) * 9.0).round().clamp(0.0, 9.0) as usize]
            })
            .collect();
        println!("  |{line}|");
    }
}

fn main() -> distill_vad::Result<()> {
    let mut rng = stream(11, Stream::Clips);
    let speech = synth::speech_proxy(&mut rng, mel::CLIP_SAMPLES);
    let noise = synth::background_proxy(&mut rng, mel::CLIP_SAMPLES);
    let s = mel::mel_spectrogram(&speech)?;
    let n = mel::mel_spectrogram(&noise)?;
    profile("speech proxy", &s);
    profile("background proxy", &n);

    let bytes = mel::encode_mels(s.rows(), s.cols(), &s.data);
    let (rows, cols, data) = mel::decode_mels(&bytes)?;
    assert_eq!((rows, cols), (128, 128));
    assert!(data.iter().zip(&s.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    println!("cache round trip: {} bytes, lossless", bytes.len());
    Ok(())
}
