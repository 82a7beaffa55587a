//! Central finite-difference checks (f64, relative error < 1e-4) of every
//! differentiable primitive and every loss on random small instances.

use distill_vad::distill::losses::{self, FeatureRegressor, StudentTerms, TeacherTerms};
use distill_vad::distill::{DistillConfig, Method};
use distill_vad::tensor::gradcheck::check;
use distill_vad::tensor::{Activation, Conv2dOptions, NormMode, Tape, Tensor, Var};
use distill_vad::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: u32 = 24;
const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

fn param(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, seed, -1.0, 1.0).with_requires_grad()
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.05..1.5);
        if rng.gen_bool(0.5) { m } else { -m }
    })
    .with_requires_grad()
}

/// `sum(y * R)` for a fixed random `R`, so every output element matters
/// with a different weight.
fn probe<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let r = tape.constant(&uniform(&y.shape(), seed ^ 0xABCD, -1.0, 1.0));
    Ok(y.mul(r)?.sum())
}

fn assert_grad<F>(inputs: &[Tensor<f64>], f: F) -> std::result::Result<(), TestCaseError>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let r = check(inputs, H, f).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(r.relative_error < TOL, "relative error {} (max abs {})", r.relative_error, r.max_abs_error);
    Ok(())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..=3, 1usize..=3, 1usize..=4, 1usize..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn add_sub_mul((n, c, h, w) in dims(), seed in any::<u64>()) {
        let s = [n, c, h, w];
        let (a, b) = (param(&s, seed), param(&s, seed + 1));
        assert_grad(&[a.clone(), b.clone()], |t, v| probe(t, v[0].add(v[1])?, seed))?;
        assert_grad(&[a.clone(), b.clone()], |t, v| probe(t, v[0].sub(v[1])?, seed))?;
        assert_grad(&[a.clone(), b], |t, v| probe(t, v[0].mul(v[1])?, seed))?;
        assert_grad(&[a.clone(), a], |t, v| probe(t, v[0].mul(v[0])?.add(v[1])?, seed))?;
    }

    #[test]
    fn scale_sum_mean_reshape((n, c, h, w) in dims(), seed in any::<u64>(), k in -3.0f64..3.0) {
        let x = param(&[n, c, h, w], seed);
        let s = param(&[1], seed + 7);
        assert_grad(&[x.clone()], |t, v| probe(t, v[0].scale(k), seed))?;
        assert_grad(&[x.clone(), s], |t, v| probe(t, v[0].mul_scalar(v[1])?, seed))?;
        assert_grad(&[x.clone()], |_, v| Ok(v[0].sum().scale(k)))?;
        assert_grad(&[x.clone()], |_, v| Ok(v[0].mean().scale(k)))?;
        assert_grad(&[x.clone()], |t, v| probe(t, v[0].flatten()?, seed))?;
        assert_grad(&[x], |t, v| probe(t, v[0].reshape(vec![n * c, h * w])?, seed))?;
    }

    #[test]
    fn activations((n, c, h, w) in dims(), seed in any::<u64>()) {
        let x = off_zero(&[n, c, h, w], seed);
        for kind in [Activation::Relu, Activation::Sigmoid, Activation::Hardswish] {
            assert_grad(&[x.clone()], |t, v| probe(t, v[0].activation(kind), seed))?;
        }
        // hardswish on both linear-quadratic boundaries' inner side
        let wide = uniform(&[n, c, h, w], seed, -2.9, 2.9).with_requires_grad();
        assert_grad(&[wide], |t, v| probe(t, v[0].hardswish(), seed))?;
    }

    #[test]
    fn log((n, c, h, w) in dims(), seed in any::<u64>()) {
        let x = uniform(&[n, c, h, w], seed, 0.2, 3.0).with_requires_grad();
        assert_grad(&[x], |t, v| probe(t, v[0].ln(), seed))?;
    }

    #[test]
    fn conv2d(
        n in 1usize..=2,
        groups in 1usize..=2,
        cpg in 1usize..=2,
        opg in 1usize..=2,
        k in 1usize..=3,
        stride in 1usize..=2,
        padding in 0usize..=1,
        hw in (1usize..=4, 1usize..=4),
        bias in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let (h, w) = (hw.0.max(k.saturating_sub(2 * padding)), hw.1.max(k.saturating_sub(2 * padding)));
        let (c, o) = (groups * cpg, groups * opg);
        let x = param(&[n, c, h, w], seed);
        let wt = param(&[o, cpg, k, k], seed + 1);
        let b = param(&[o], seed + 2);
        let opts = Conv2dOptions { stride, padding, groups };
        assert_grad(&[x, wt, b], |t, v| {
            probe(t, v[0].conv2d(v[1], bias.then_some(v[2]), opts)?, seed)
        })?;
    }

    #[test]
    fn batch_norm((n, c, h, w) in dims(), seed in any::<u64>()) {
        let n = n.max(2);
        let x = param(&[n, c, h, w], seed);
        let g = uniform(&[c], seed + 1, 0.5, 1.5).with_requires_grad();
        let b = param(&[c], seed + 2);
        assert_grad(&[x.clone(), g.clone(), b.clone()], |t, v| {
            probe(t, v[0].batch_norm2d(v[1], v[2], NormMode::Train, 1e-5)?.0, seed)
        })?;
        let mean = uniform(&[c], seed + 3, -0.5, 0.5);
        let var = uniform(&[c], seed + 4, 0.5, 2.0);
        assert_grad(&[x, g, b], |t, v| {
            let mode = NormMode::Eval { mean: mean.data(), var: var.data() };
            probe(t, v[0].batch_norm2d(v[1], v[2], mode, 1e-5)?.0, seed)
        })?;
    }

    #[test]
    fn pooling(n in 1usize..=2, c in 1usize..=3, hw in (1usize..=2, 1usize..=2), out in (1usize..=4, 1usize..=4), seed in any::<u64>()) {
        let x = param(&[n, c, 2 * hw.0, 2 * hw.1], seed);
        assert_grad(&[x.clone()], |t, v| probe(t, v[0].max_pool2x2()?, seed))?;
        let (oh, ow) = (out.0.min(2 * hw.0), out.1.min(2 * hw.1));
        assert_grad(&[x], |t, v| probe(t, v[0].adaptive_avg_pool2d(oh, ow)?, seed))?;
    }

    #[test]
    fn linear_and_matmul(n in 1usize..=4, f in 1usize..=4, g in 1usize..=4, bias in any::<bool>(), seed in any::<u64>()) {
        let x = param(&[n, f], seed);
        let w = param(&[g, f], seed + 1);
        let b = param(&[g], seed + 2);
        assert_grad(&[x.clone(), w, b], |t, v| probe(t, v[0].linear(v[1], bias.then_some(v[2]))?, seed))?;
        let m = param(&[f, g], seed + 3);
        assert_grad(&[x, m], |t, v| probe(t, v[0].matmul(v[1])?, seed))?;
    }

    #[test]
    fn dropout_with_fixed_mask((n, c, h, w) in dims(), p in 0.0f64..0.9, seed in any::<u64>()) {
        let x = param(&[n, c, h, w], seed);
        assert_grad(&[x], |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            probe(t, v[0].dropout(p, true, &mut rng)?, seed)
        })?;
    }

    #[test]
    fn channel_gate((n, c, h, w) in dims(), seed in any::<u64>()) {
        let x = param(&[n, c, h, w], seed);
        let gate = uniform(&[n, c], seed + 1, 0.05, 0.95).with_requires_grad();
        assert_grad(&[x, gate], |t, v| probe(t, v[0].scale_channels(v[1])?, seed))?;
    }

    #[test]
    fn relational_primitives(n in 2usize..=4, d in 1usize..=4, seed in any::<u64>()) {
        let x = param(&[n, d], seed);
        assert_grad(&[x.clone()], |t, v| probe(t, v[0].pdist()?, seed))?;
        let pos = uniform(&[n, n], seed + 1, 0.1, 2.0).with_requires_grad();
        assert_grad(&[pos], |t, v| probe(t, v[0].div_mean_positive(), seed))?;
        assert_grad(&[x.clone()], |t, v| probe(t, v[0].pairwise_diff()?, seed))?;
        let rows = off_zero(&[n, d], seed + 2);
        assert_grad(&[rows], |t, v| probe(t, v[0].l2_normalize_last(), seed))?;
        let a = param(&[n, 3, d], seed + 3);
        let b = param(&[n, 2, d], seed + 4);
        assert_grad(&[a, b], |t, v| probe(t, v[0].bmm_nt(v[1])?, seed))?;
    }

    #[test]
    fn bce_variants(n in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let z = uniform(&[n, 1], seed, -4.0, 4.0).with_requires_grad();
        assert_grad(&[z], |_, v| losses::bce_with_logits_loss(v[0], &labels))?;
        let p = uniform(&[n, 1], seed + 1, 0.05, 0.95).with_requires_grad();
        assert_grad(&[p], |_, v| losses::bce_loss(v[0], &labels))?;
    }

    #[test]
    fn soft_target(n in 1usize..=4, temperature in 0.5f64..8.0, squared in any::<bool>(), seed in any::<u64>()) {
        let teacher = uniform(&[n], seed + 1, -6.0, 6.0);
        let z = uniform(&[n, 1], seed, -6.0, 6.0).with_requires_grad();
        assert_grad(&[z], |_, v| losses::soft_target_loss(v[0], teacher.data(), temperature, squared))?;
    }

    #[test]
    fn mse_and_smooth_l1((n, c, h, w) in dims(), seed in any::<u64>()) {
        let s = [n, c, h, w];
        let (a, b) = (param(&s, seed), param(&s, seed + 1));
        assert_grad(&[a.clone(), b.clone()], |_, v| v[0].mse(v[1]))?;
        // quadratic region: |a - b| < 1
        let (qa, qb) = (uniform(&s, seed, -0.45, 0.45).with_requires_grad(), uniform(&s, seed + 1, -0.45, 0.45).with_requires_grad());
        assert_grad(&[qa, qb], |_, v| v[0].smooth_l1(v[1]))?;
        // linear region: |a - b| > 1
        let la = uniform(&s, seed, 1.2, 3.0).with_requires_grad();
        let lb = uniform(&s, seed + 1, -1.0, 0.0).with_requires_grad();
        assert_grad(&[la, lb], |_, v| v[0].smooth_l1(v[1]))?;
    }

    #[test]
    fn feature(n in 1usize..=2, gc in 1usize..=3, hc in 1usize..=3, g_hw in 1usize..=4, h_hw in 1usize..=4, seed in any::<u64>()) {
        let guide = param(&[n, gc, g_hw, g_hw], seed);
        let hint = param(&[n, hc, h_hw, h_hw], seed + 1);
        let reg = FeatureRegressor::<f64>::new(gc, hc, seed);
        assert_grad(&[guide, hint], |_, v| losses::feature_loss(v[0], v[1], &reg))?;
    }

    #[test]
    fn rkd(n in 3usize..=4, ds in 1usize..=4, dt in 1usize..=4, seed in any::<u64>()) {
        let s = param(&[n, ds], seed);
        let t = param(&[n, dt], seed + 1);
        assert_grad(&[s.clone(), t.clone()], |_, v| losses::rkd_distance_loss(v[0], v[1]))?;
        assert_grad(&[s, t], |_, v| losses::rkd_angle_loss(v[0], v[1]))?;
    }

    #[test]
    fn combined(n in 3usize..=4, alpha in 0.0f64..=1.0, invert in any::<bool>(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let t_logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t_emb = uniform(&[n, 5], seed + 1, -1.0, 1.0);
        let t_hint = uniform(&[n, 2, 2, 2], seed + 2, -1.0, 1.0);
        let logits = param(&[n, 1], seed + 3);
        let emb = param(&[n, 3], seed + 4);
        let guide = param(&[n, 3, 4, 4], seed + 5);
        let reg = FeatureRegressor::<f64>::new(3, 2, seed);
        for method in Method::ALL {
            let cfg = DistillConfig { method, alpha, invert_alpha: invert, ..DistillConfig::default() };
            let teacher = TeacherTerms { logits: &t_logits, embedding: &t_emb, hint: Some(&t_hint) };
            assert_grad(&[logits.clone(), emb.clone(), guide.clone()], |_, v| {
                let student = StudentTerms { logits: v[0], embedding: v[1], guide: Some(v[2]) };
                losses::combined_loss(method, &student, &teacher, &labels, &cfg, Some(&reg))
            })?;
        }
    }
}
