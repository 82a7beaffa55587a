//! Saves a student, reloads it into a fresh model and checks bit-exact
//! agreement; then shows that a flipped payload byte is refused.
//!
//! cargo run --release --example weights_roundtrip

use distill_vad::tensor::Tensor;
use distill_vad::zoo::{build_student, defaults, weights};

fn main() -> distill_vad::Result<()> {
    let config = defaults::student_config(3)?;
    let original = build_student(&config, 21)?;
    let bytes = weights::encode(&original);
    println!("student3: {} tensors, {} bytes", weights::decode(&bytes)?.manifest.tensors.len(), bytes.len());

    let mut restored = build_student(&config, 99)?;
    weights::apply(&mut restored, &weights::decode(&bytes)?)?;
    let x = Tensor::from_fn(vec![2, 1, 128, 128], |i| ((i % 97) as f32) / 97.0);
    let (a, b) = (original.predict_logits(&x)?, restored.predict_logits(&x)?);
    assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    println!("reloaded logits identical: {a:?}");

    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x40;
    match weights::decode(&corrupt) {
        Err(e) => println!("corrupted file refused: {e}"),
        Ok(_) => unreachable!("a flipped byte must not pass the checksum"),
    }
    Ok(())
}
