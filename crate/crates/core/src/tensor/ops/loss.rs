//! Fused scalar losses. Targets are plain tensors or slices, so no gradient
//! ever flows into them.

use super::elementwise::{sigmoid, softplus};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// PyTorch-compatible floor for `ln p` in the probability-space BCE.
const LOG_FLOOR: f64 = -100.0;

fn check_len(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::shape(op, format!("{got} predictions vs {want} targets")));
    }
    Ok(())
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Mean binary cross-entropy on logits, stabilized as
    /// `max(z,0) - z*y + ln(1 + e^-|z|)`.
    pub fn bce_with_logits(self, labels: &[T]) -> Result<Var<'t, T>> {
        let z = self.value();
        check_len("bce_with_logits", z.numel(), labels.len())?;
        let n = T::lit(z.numel() as f64);
        let loss: T = z
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<T>()
            / n;
        let zs = z.shared_data();
        let y = labels.to_vec();
        Ok(self.tape().record(Tensor::scalar(loss), &[self], move |g, _| {
            vec![Some(
                zs.iter()
                    .zip(&y)
                    .map(|(&z, &y)| g[0] * (sigmoid(z) - y) / n)
                    .collect(),
            )]
        }))
    }

    /// Mean binary cross-entropy on probabilities; `ln` is floored at -100.
    pub fn bce(self, labels: &[T]) -> Result<Var<'t, T>> {
        let p = self.value();
        check_len("bce", p.numel(), labels.len())?;
        let n = T::lit(p.numel() as f64);
        let floor = T::lit(LOG_FLOOR);
        let loss: T = p
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| -(y * p.ln().max(floor) + (T::one() - y) * (T::one() - p).ln().max(floor)))
            .sum::<T>()
            / n;
        let ps = p.shared_data();
        let y = labels.to_vec();
        let tiny = T::lit(1e-12);
        Ok(self.tape().record(Tensor::scalar(loss), &[self], move |g, _| {
            vec![Some(
                ps.iter()
                    .zip(&y)
                    .map(|(&p, &y)| g[0] * (p - y) / (p * (T::one() - p)).max(tiny) / n)
                    .collect(),
            )]
        }))
    }

    /// Batch-mean binary KL divergence `KL(Bern(σ(t/T)) || Bern(σ(s/T)))`
    /// of these student logits from fixed teacher logits, times `scale`.
    pub fn binary_soft_kl(self, teacher: &[T], temperature: T, scale: T) -> Result<Var<'t, T>> {
        let s = self.value();
        check_len("binary_soft_kl", s.numel(), teacher.len())?;
        if !(temperature > T::zero()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        let n = T::lit(s.numel() as f64);
        let loss: T = s
            .data()
            .iter()
            .zip(teacher)
            .map(|(&zs, &zt)| binary_kl(zt / temperature, zs / temperature))
            .sum::<T>()
            * scale
            / n;
        let ss = s.shared_data();
        let t = teacher.to_vec();
        Ok(self.tape().record(Tensor::scalar(loss), &[self], move |g, _| {
            vec![Some(
                ss.iter()
                    .zip(&t)
                    .map(|(&zs, &zt)| {
                        g[0] * scale * (sigmoid(zs / temperature) - sigmoid(zt / temperature))
                            / temperature
                            / n
                    })
                    .collect(),
            )]
        }))
    }

    /// Mean squared error against another variable of the same shape.
    pub fn mse(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), target.value());
        if a.shape() != b.shape() {
            return Err(Error::shape("mse", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let n = T::lit(a.numel() as f64);
        let diff: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        let loss = diff.iter().map(|&d| d * d).sum::<T>() / n;
        Ok(self.tape().record(Tensor::scalar(loss), &[self, target], move |g, needs| {
            let two = T::lit(2.0) * g[0] / n;
            let da: Vec<T> = diff.iter().map(|&d| two * d).collect();
            let db = needs[1].then(|| da.iter().map(|&v| -v).collect());
            vec![needs[0].then_some(da), db]
        }))
    }

    /// Mean Huber loss with threshold 1 (smooth L1).
    pub fn smooth_l1(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), target.value());
        if a.shape() != b.shape() {
            return Err(Error::shape("smooth_l1", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let n = T::lit(a.numel() as f64);
        let half = T::lit(0.5);
        let diff: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        let loss = diff
            .iter()
            .map(|&d| if d.abs() < T::one() { half * d * d } else { d.abs() - half })
            .sum::<T>()
            / n;
        Ok(self.tape().record(Tensor::scalar(loss), &[self, target], move |g, needs| {
            let da: Vec<T> = diff
                .iter()
                .map(|&d| g[0] * if d.abs() < T::one() { d } else { d.signum() } / n)
                .collect();
            let db = needs[1].then(|| da.iter().map(|&v| -v).collect());
            vec![needs[0].then_some(da), db]
        }))
    }
}

/// `KL(Bern(σ(a)) || Bern(σ(b)))` in a form that stays finite for any logits.
pub fn binary_kl<T: Scalar>(a: T, b: T) -> T {
    let p = sigmoid(a);
    // ln σ(x) = -softplus(-x), ln(1 - σ(x)) = -softplus(x)
    p * (softplus(-b) - softplus(-a)) + (T::one() - p) * (softplus(b) - softplus(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn logits(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn bce_with_logits_values() {
        let tape = Tape::new();
        let z = tape.input(&logits(&[0.0]));
        assert!((z.bce_with_logits(&[1.0]).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((z.bce_with_logits(&[0.0]).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-15);
        let z = tape.input(&logits(&[2.0]));
        let oracle = (1.0 + (-2.0f64).exp()).ln();
        assert!((z.bce_with_logits(&[1.0]).unwrap().item() - oracle).abs() < 1e-15);
        let z = tape.input(&logits(&[1000.0]));
        let l = z.bce_with_logits(&[1.0]).unwrap().item();
        assert!(l.is_finite() && l.abs() < 1e-12);
    }

    #[test]
    fn f32_bce_with_logits_does_not_overflow() {
        let tape = Tape::<f32>::new();
        let z = tape.input(&Tensor::new(vec![2, 1], vec![1000.0, -1000.0]).unwrap().with_requires_grad());
        let l = z.bce_with_logits(&[0.0, 1.0]).unwrap();
        assert!(l.item().is_finite());
        let g = tape.backward(l).unwrap();
        assert!(g.wrt(z).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bce_on_probabilities_matches_logit_form() {
        let tape = Tape::new();
        let z = tape.input(&logits(&[-1.3, 0.4, 2.2]));
        let y = [0.0, 1.0, 1.0];
        let a = z.bce_with_logits(&y).unwrap().item();
        let b = z.sigmoid().bce(&y).unwrap().item();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn binary_kl_is_zero_on_equal_and_positive_otherwise() {
        assert_eq!(binary_kl(0.7f64, 0.7), 0.0);
        assert!(binary_kl(1.0f64, 0.0) > 0.0);
        assert!(binary_kl(-800.0f64, 900.0).is_finite());
    }
}
