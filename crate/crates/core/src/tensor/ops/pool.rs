use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

fn nchw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::shape(op, format!("input must be [N,C,H,W], got {shape:?}"))),
    }
}

/// Bin boundaries of adaptive pooling: `[floor(i*L/out), ceil((i+1)*L/out))`.
fn bin(i: usize, len: usize, out: usize) -> (usize, usize) {
    (i * len / out, ((i + 1) * len).div_ceil(out))
}

impl<'t, T: Scalar> Var<'t, T> {
    /// 2x2 max pooling with stride 2. Ties go to the first element in
    /// row-major order, which also receives the full gradient.
    pub fn max_pool2x2(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (n, c, h, w) = nchw("max_pool2x2", &shape)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "max_pool2x2",
                format!("spatial axes (2,3) must be even, got {h}x{w}"),
            ));
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value();
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let len = xd.len();
        let out = Tensor::from_parts(vec![n, c, ho, wo], out);
        Ok(self.tape().record(out, &[self], move |g, _| {
            let mut dx = vec![T::zero(); len];
            for (&i, &gv) in argmax.iter().zip(g) {
                dx[i as usize] = dx[i as usize] + gv;
            }
            vec![Some(dx)]
        }))
    }

    /// Adaptive average pooling to `out_h x out_w`.
    pub fn adaptive_avg_pool2d(self, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (n, c, h, w) = nchw("adaptive_avg_pool2d", &shape)?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape("adaptive_avg_pool2d", "target extent must be >= 1"));
        }
        let x = self.value();
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for p in 0..n * c {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for oy in 0..out_h {
                let (y0, y1) = bin(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = bin(ox, w, out_w);
                    let mut s = T::zero();
                    for y in y0..y1 {
                        s = s + plane[y * w + x0..y * w + x1].iter().copied().sum::<T>();
                    }
                    out.push(s / T::lit(((y1 - y0) * (x1 - x0)) as f64));
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, out_h, out_w], out);
        Ok(self.tape().record(out, &[self], move |g, _| {
            let mut dx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for oy in 0..out_h {
                    let (y0, y1) = bin(oy, h, out_h);
                    for ox in 0..out_w {
                        let (x0, x1) = bin(ox, w, out_w);
                        let share = g[(p * out_h + oy) * out_w + ox]
                            / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                let i = p * h * w + y * w + xx;
                                dx[i] = dx[i] + share;
                            }
                        }
                    }
                }
            }
            vec![Some(dx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn max_pool_block() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(x.max_pool2x2().unwrap().value().data(), &[4.0]);
    }

    #[test]
    fn max_pool_tie_gradient_goes_to_first() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::full(vec![1, 1, 2, 2], 1.0).with_requires_grad());
        let y = x.max_pool2x2().unwrap();
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_rejects_odd_extent() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::zeros(vec![1, 1, 3, 2]));
        assert!(x.max_pool2x2().is_err());
    }

    #[test]
    fn adaptive_avg_to_one() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::full(vec![1, 2, 3, 5], 2.5));
        assert_eq!(x.adaptive_avg_pool2d(1, 1).unwrap().value().data(), &[2.5, 2.5]);

        let ramp = Tensor::from_fn(vec![1, 1, 4, 4], |i| i as f64);
        let mean = ramp.data().iter().sum::<f64>() / 16.0;
        let y = tape.input(&ramp).adaptive_avg_pool2d(1, 1).unwrap();
        assert_eq!(y.value().data(), &[mean]);
    }

    #[test]
    fn adaptive_avg_halving_matches_block_means() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::from_fn(vec![1, 1, 4, 4], |i| i as f64));
        let y = x.adaptive_avg_pool2d(2, 2).unwrap().value();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }
}
