//! Finite-difference check of a full Student 4 forward pass and of each
//! distillation loss, in 64-bit precision.
//!
//! cargo run --release --example gradient_check

use distill_vad::distill::losses;
use distill_vad::rng::{stream, Stream};
use distill_vad::tensor::gradcheck::check;
use distill_vad::tensor::Tensor;
use distill_vad::zoo::{defaults, Model};
use rand::Rng;

fn random(shape: &[usize], rng: &mut distill_vad::rng::Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0)).with_requires_grad()
}

fn main() -> distill_vad::Result<()> {
    let mut rng = stream(5, Stream::Init);

    // A shrunken Student 4 on 32x32 inputs: gradient with respect to the input.
    let mut config = defaults::student_config(4)?;
    config.input_shape = [1, 32, 32];
    let model: Model<f64> = Model::build(&config, 5)?;
    let x = random(&[3, 1, 32, 32], &mut rng);
    let r = check(&[x], 1e-5, |tape, v| Ok(model.forward_eval(tape, v[0])?.logits.sum()))?;
    println!("student4 forward     rel err {:.2e}", r.relative_error);

    let labels = [1.0, 0.0, 1.0, 0.0];
    let teacher = [2.0, -1.5, 0.3, -0.2];
    let z = random(&[4, 1], &mut rng);
    let r = check(&[z.clone()], 1e-6, |_, v| losses::soft_target_loss(v[0], &teacher, 5.0, true))?;
    println!("soft target          rel err {:.2e}", r.relative_error);
    let r = check(&[z], 1e-6, |_, v| losses::bce_with_logits_loss(v[0], &labels))?;
    println!("bce with logits      rel err {:.2e}", r.relative_error);

    let s = random(&[5, 6], &mut rng);
    let t = random(&[5, 4], &mut rng).detached();
    let r = check(&[s.clone(), t.clone()], 1e-6, |_, v| losses::rkd_distance_loss(v[0], v[1]))?;
    println!("rkd distance         rel err {:.2e}", r.relative_error);
    let r = check(&[s, t], 1e-6, |_, v| losses::rkd_angle_loss(v[0], v[1]))?;
    println!("rkd angle            rel err {:.2e}", r.relative_error);
    Ok(())
}
