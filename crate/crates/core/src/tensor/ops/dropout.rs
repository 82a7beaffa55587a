use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

impl<'t, T: Scalar> Var<'t, T> {
    /// Inverted dropout. In train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; eval mode and
    /// `p == 0` are the identity.
    pub fn dropout(self, p: f64, train: bool, rng: &mut impl Rng) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout p must be in [0,1), got {p}")));
        }
        if !train || p == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        );
        Ok(self.tape().record(out, &[self], move |g, _| {
            vec![Some(g.iter().zip(&mask).map(|(&g, &m)| g * m).collect())]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::tensor::Tape;

    #[test]
    fn identity_cases() {
        let mut rng = stream(1, Stream::Dropout);
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::from_fn(vec![4, 4], |i| i as f64));
        assert_eq!(x.dropout(0.0, true, &mut rng).unwrap().value(), x.value());
        assert_eq!(x.dropout(0.0, false, &mut rng).unwrap().value(), x.value());
        assert_eq!(x.dropout(0.5, false, &mut rng).unwrap().value(), x.value());
    }

    #[test]
    fn rejects_p_of_one() {
        let mut rng = stream(1, Stream::Dropout);
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::zeros(vec![2]));
        assert!(x.dropout(1.0, true, &mut rng).is_err());
    }

    #[test]
    fn expectation_preserved_over_trials() {
        let mut rng = stream(42, Stream::Dropout);
        let x = Tensor::<f64>::from_fn(vec![64], |i| 1.0 + (i % 8) as f64);
        let mut acc = vec![0.0; 64];
        let trials = 10_000;
        for _ in 0..trials {
            let tape = Tape::new();
            let y = tape.input(&x).dropout(0.5, true, &mut rng).unwrap().value();
            acc.iter_mut().zip(y.data()).for_each(|(a, v)| *a += v);
        }
        let means: Vec<f64> = acc.iter().map(|a| a / trials as f64).collect();
        let total: f64 = x.data().iter().sum();
        let got: f64 = means.iter().sum();
        assert!((got - total).abs() / total < 0.02, "{got} vs {total}");
        // one trial has relative std 1 at p = 0.5, so 1% after 10k trials
        for (m, x) in means.iter().zip(x.data()) {
            assert!((m - x).abs() / x < 0.05, "mean {m} vs {x}");
        }
    }
}
