//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of one gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)` over all inputs.
    pub relative_error: f64,
    pub max_abs_error: f64,
}

/// Compares the tape gradient of the scalar built by `f` with central
/// differences of step `h`, for every input marked `requires_grad`.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.input(t)).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<_> = probe.iter().map(|t| tape.input(t)).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (i, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let analytic = grads
            .wrt(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
        for k in 0..input.numel() {
            let base = inputs[i].data()[k];
            probe[i].data_mut()[k] = base + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[k] = base - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[k] = base;
            let numeric = (up - down) / (2.0 * h);
            let d = analytic[k] - numeric;
            diff2 += d * d;
            a2 += analytic[k] * analytic[k];
            n2 += numeric * numeric;
            max_abs = max_abs.max(d.abs());
        }
    }
    let scale = a2.sqrt().max(n2.sqrt());
    let relative_error = if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale };
    Ok(GradCheck {
        relative_error,
        max_abs_error: max_abs,
    })
}
