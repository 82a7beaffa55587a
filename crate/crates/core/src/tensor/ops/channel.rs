use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

impl<'t, T: Scalar> Var<'t, T> {
    /// Multiplies each `[H,W]` plane of an `[N,C,H,W]` input by `gate[n,c]`.
    pub fn scale_channels(self, gate: Var<'t, T>) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let gs = gate.shape();
        if xs.len() != 4 || gs.iter().product::<usize>() != xs[0] * xs[1] || gs[0] != xs[0] {
            return Err(Error::shape("scale_channels", format!("input {xs:?} vs gate {gs:?}")));
        }
        let hw = xs[2] * xs[3];
        let (x, g) = (self.value(), gate.value());
        let mut out = x.data().to_vec();
        for (plane, &k) in out.chunks_mut(hw).zip(g.data()) {
            plane.iter_mut().for_each(|v| *v = *v * k);
        }
        let (xd, gd) = (x.shared_data(), g.shared_data());
        let out = Tensor::from_parts(xs, out);
        Ok(self.tape().record(out, &[self, gate], move |go, needs| {
            let dx = needs[0].then(|| {
                let mut dx = go.to_vec();
                for (plane, &k) in dx.chunks_mut(hw).zip(gd.iter()) {
                    plane.iter_mut().for_each(|v| *v = *v * k);
                }
                dx
            });
            let dg = needs[1].then(|| {
                go.chunks(hw)
                    .zip(xd.chunks(hw))
                    .map(|(g, x)| g.iter().zip(x).map(|(&a, &b)| a * b).sum())
                    .collect()
            });
            vec![dx, dg]
        }))
    }
}
