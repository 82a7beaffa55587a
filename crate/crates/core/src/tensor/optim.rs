use crate::tensor::{ParamStore, Scalar};

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn zeros(len: usize) -> Self {
        AdamMoments {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update at step `t >= 1`.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamMoments<T>,
    hyper: AdamHyper,
    t: u64,
) {
    assert!(t >= 1, "adam step index starts at 1");
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    let (b1, b2) = (T::lit(hyper.beta1), T::lit(hyper.beta2));
    let c1 = T::lit(1.0 - hyper.beta1.powi(t as i32));
    let c2 = T::lit(1.0 - hyper.beta2.powi(t as i32));
    let (lr, eps) = (T::lit(hyper.lr), T::lit(hyper.eps));
    let one = T::one();
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over every trainable tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub hyper: AdamHyper,
    step: u64,
    moments: Vec<AdamMoments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, hyper: AdamHyper) -> Self {
        Adam {
            hyper,
            step: 0,
            moments: store.iter().map(|(_, p)| AdamMoments::zeros(p.tensor.numel())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies stored gradients, then clears them. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        for (param, moments) in store.iter_mut().zip(&mut self.moments) {
            if !param.tensor.requires_grad() {
                continue;
            }
            let grad = match param.tensor.grad() {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); param.tensor.numel()],
            };
            adam_step(param.tensor.data_mut(), &grad, moments, self.hyper, self.step);
            param.tensor.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.5f64, -2.0];
        let mut s = AdamMoments::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, AdamHyper::default(), 1);
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_scalar_formula() {
        let mut p = vec![0.0f64];
        let mut s = AdamMoments::zeros(1);
        adam_step(&mut p, &[1.0], &mut s, AdamHyper::default(), 1);
        let expected = -0.001 * (1.0 / (1.0 + 1e-8));
        assert!((p[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn two_steps_on_quadratic_match_scalar_recomputation() {
        // f(x) = (x - 3)^2, grad = 2(x - 3)
        let h = AdamHyper::default();
        let mut p = vec![1.0f64];
        let mut s = AdamMoments::zeros(1);
        for t in 1..=2 {
            let g = 2.0 * (p[0] - 3.0);
            adam_step(&mut p, &[g], &mut s, h, t);
        }
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 2.0 * (x - 3.0);
            m = 0.9 * m + (1.0 - 0.9) * g;
            v = 0.999 * v + (1.0 - 0.999) * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.001 * mh / (vh.sqrt() + 1e-8);
        }
        assert_eq!(p[0], x);
    }
}
