use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean and (unbiased) variance used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T: Scalar> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn update(&mut self, batch: &BatchStats<T>, momentum: T) {
        let m = batch.count as f64;
        let unbias = if m > 1.0 { T::lit(m / (m - 1.0)) } else { T::one() };
        let keep = T::one() - momentum;
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + momentum * batch.mean[c];
            self.var[c] = keep * self.var[c] + momentum * batch.var[c] * unbias;
        }
    }
}

/// Statistics of one training batch (biased variance).
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a, T> {
    Train,
    Eval { mean: &'a [T], var: &'a [T] },
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Batch normalization over axes (0, 2, 3) of an `[N,C,H,W]` input.
    /// In train mode the batch statistics are returned for the caller to fold
    /// into its running stats.
    pub fn batch_norm2d(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        mode: NormMode<'_, T>,
        eps: T,
    ) -> Result<(Var<'t, T>, Option<BatchStats<T>>)> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(Error::shape("batch_norm2d", format!("input must be [N,C,H,W], got {shape:?}")));
        }
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape(
                "batch_norm2d",
                format!("gamma {:?} / beta {:?} vs channel axis 1 = {c}", gamma.shape(), beta.shape()),
            ));
        }
        if !(eps > T::zero()) {
            return Err(Error::invalid("batch_norm2d eps must be positive"));
        }
        let m = n * hw;
        if m == 0 {
            return Err(Error::Empty("batch_norm2d on an empty batch".into()));
        }
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let xd = x.data();

        let (mean, var, stats) = match mode {
            NormMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        s = s + xd[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
                    }
                    let mu = s / T::lit(m as f64);
                    let mut ss = T::zero();
                    for b in 0..n {
                        for &v in &xd[(b * c + ch) * hw..][..hw] {
                            ss = ss + (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = ss / T::lit(m as f64);
                }
                let stats = BatchStats { mean: mean.clone(), var: var.clone(), count: m };
                (mean, var, Some(stats))
            }
            NormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm2d", "running stats length vs channel axis 1"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                let (mu, is, g, be) = (mean[ch], inv_std[ch], gv.data()[ch], bv.data()[ch]);
                for i in off..off + hw {
                    let h = (xd[i] - mu) * is;
                    xhat[i] = h;
                    out[i] = g * h + be;
                }
            }
        }
        let out = Tensor::from_parts(shape, out);
        let train = matches!(mode, NormMode::Train);
        let gamma_data = gv.shared_data();
        let y = self.tape().record(out, &[self, gamma, beta], move |g, needs| {
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    for i in off..off + hw {
                        dgamma[ch] = dgamma[ch] + g[i] * xhat[i];
                        dbeta[ch] = dbeta[ch] + g[i];
                    }
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); g.len()];
                let mf = T::lit(m as f64);
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        let scale = gamma_data[ch] * inv_std[ch];
                        for i in off..off + hw {
                            dx[i] = if train {
                                scale * (g[i] - dbeta[ch] / mf - xhat[i] * dgamma[ch] / mf)
                            } else {
                                scale * g[i]
                            };
                        }
                    }
                }
                dx
            });
            vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
        });
        Ok((y, stats))
    }
}

/// Batch normalization that also folds train-mode batch statistics into
/// `running` with the given momentum.
pub fn batch_norm2d<'t, T: Scalar>(
    input: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    running: &mut RunningStats<T>,
    train: bool,
    momentum: T,
    eps: T,
) -> Result<Var<'t, T>> {
    if train {
        let (y, stats) = input.batch_norm2d(gamma, beta, NormMode::Train, eps)?;
        if let Some(stats) = stats {
            running.update(&stats, momentum);
        }
        Ok(y)
    } else {
        let (y, _) = input.batch_norm2d(
            gamma,
            beta,
            NormMode::Eval { mean: &running.mean, var: &running.var },
            eps,
        )?;
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};

    fn affine(tape: &Tape<f64>, c: usize) -> (Var<'_, f64>, Var<'_, f64>) {
        (
            tape.input(&Tensor::full(vec![c], 1.0)),
            tape.input(&Tensor::zeros(vec![c])),
        )
    }

    #[test]
    fn constant_channel_collapses_to_beta() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::full(vec![2, 1, 3, 3], 4.2));
        let gamma = tape.input(&Tensor::full(vec![1], 2.0));
        let beta = tape.input(&Tensor::full(vec![1], 0.75));
        let (y, _) = x.batch_norm2d(gamma, beta, NormMode::Train, 1e-5).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn normalized_input_is_a_fixed_point() {
        // Each channel: values {-1, 1} repeated -> mean 0, biased variance 1.
        let x = Tensor::from_fn(vec![2, 2, 2, 2], |i| if i % 2 == 0 { -1.0 } else { 1.0 });
        let tape = Tape::<f64>::new();
        let xv = tape.input(&x);
        let (g, b) = affine(&tape, 2);
        let eps = 1e-10;
        let (y, _) = xv.batch_norm2d(g, b, NormMode::Train, eps).unwrap();
        for (a, b) in y.value().data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn random_batch_statistics() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(vec![2, 3, 4, 4], |_| rng.gen_range(-3.0..5.0));
        let tape = Tape::<f64>::new();
        let xv = tape.input(&x);
        let (g, b) = affine(&tape, 3);
        let (y, _) = xv.batch_norm2d(g, b, NormMode::Train, 1e-12).unwrap();
        let y = y.value();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| y.data()[(n * 3 + ch) * 16..][..16].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 32.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut running = RunningStats::<f64>::new(1);
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::from_fn(vec![4, 1, 1, 1], |i| i as f64));
        let (g, b) = affine(&tape, 1);
        batch_norm2d(x, g, b, &mut running, true, 0.1, 1e-5).unwrap();
        assert!((running.mean[0] - 0.15).abs() < 1e-12);
        // unbiased variance of 0..4 is 5/3
        assert!((running.var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        let y = batch_norm2d(x, g, b, &mut running, false, 0.1, 1e-5).unwrap();
        let expected = (3.0 - 0.15) / (running.var[0] + 1e-5f64).sqrt();
        assert!((y.value().data()[3] - expected).abs() < 1e-12);
    }
}
