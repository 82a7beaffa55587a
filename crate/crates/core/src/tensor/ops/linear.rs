use crate::error::{Error, Result};
use crate::tensor::scalar::{gemm, Mat};
use crate::tensor::{Scalar, Tensor, Var};

impl<'t, T: Scalar> Var<'t, T> {
    /// Affine map `x W^T + b` of an `[N,F]` input with `[G,F]` weights.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let (xs, ws) = (self.shape(), weight.shape());
        let (n, f, g) = match (xs.as_slice(), ws.as_slice()) {
            ([n, f], [g, f2]) if f == f2 => (*n, *f, *g),
            _ => {
                return Err(Error::shape(
                    "linear",
                    format!("input {xs:?} (axis 1) vs weight {ws:?} (axis 1)"),
                ))
            }
        };
        if let Some(b) = &bias {
            if b.shape() != [g] {
                return Err(Error::shape("linear", format!("bias {:?} vs {g} outputs", b.shape())));
            }
        }
        let (x, w) = (self.value(), weight.value());
        let mut out = vec![T::zero(); n * g];
        gemm(&mut out, Mat::new(x.data(), n, f), Mat::new(w.data(), g, f).t(), T::one(), T::zero());
        if let Some(b) = &bias {
            let b = b.value();
            for row in out.chunks_mut(g) {
                row.iter_mut().zip(b.data()).for_each(|(o, &bv)| *o = *o + bv);
            }
        }
        let out = Tensor::from_parts(vec![n, g], out);
        let (xd, wd) = (x.shared_data(), w.shared_data());
        let backward = move |gout: &[T], needs: &[bool]| {
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); n * f];
                gemm(&mut dx, Mat::new(gout, n, g), Mat::new(&wd, g, f), T::one(), T::zero());
                dx
            });
            let dw = needs[1].then(|| {
                let mut dw = vec![T::zero(); g * f];
                gemm(&mut dw, Mat::new(gout, n, g).t(), Mat::new(&xd, n, f), T::one(), T::zero());
                dw
            });
            let mut grads = vec![dx, dw];
            if needs.len() == 3 {
                let mut db = vec![T::zero(); g];
                for row in gout.chunks(g) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                }
                grads.push(Some(db));
            }
            grads
        };
        let tape = self.tape();
        Ok(match bias {
            Some(b) => tape.record(out, &[self, weight, b], backward),
            None => tape.record(out, &[self, weight], backward),
        })
    }

    /// Matrix product of `[M,K]` and `[K,N]` variables.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a_s, b_s) = (self.shape(), rhs.shape());
        let (m, k, n) = match (a_s.as_slice(), b_s.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::shape("matmul", format!("{a_s:?} x {b_s:?}"))),
        };
        let (a, b) = (self.value(), rhs.value());
        let mut out = vec![T::zero(); m * n];
        gemm(&mut out, Mat::new(a.data(), m, k), Mat::new(b.data(), k, n), T::one(), T::zero());
        let (ad, bd) = (a.shared_data(), b.shared_data());
        Ok(self.tape().record(Tensor::from_parts(vec![m, n], out), &[self, rhs], move |g, needs| {
            let da = needs[0].then(|| {
                let mut da = vec![T::zero(); m * k];
                gemm(&mut da, Mat::new(g, m, n), Mat::new(&bd, k, n).t(), T::one(), T::zero());
                da
            });
            let db = needs[1].then(|| {
                let mut db = vec![T::zero(); k * n];
                gemm(&mut db, Mat::new(&ad, m, k).t(), Mat::new(g, m, n), T::one(), T::zero());
                db
            });
            vec![da, db]
        }))
    }
}
