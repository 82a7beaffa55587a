//! Direct 2-D cross-correlation (no kernel flip), lowered to GEMM through
//! im2col except for depthwise and pointwise shapes.

use crate::error::{Error, Result};
use crate::tensor::scalar::{gemm, Mat};
use crate::tensor::{Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

/// Resolved shapes of one convolution.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn resolve(x: &[usize], wt: &[usize], opts: Conv2dOptions) -> Result<Self> {
        let fail = |detail: String| Err(Error::shape("conv2d", detail));
        if x.len() != 4 {
            return fail(format!("input must be [N,C,H,W], got {x:?}"));
        }
        if wt.len() != 4 {
            return fail(format!("weight must be [O,C/groups,kh,kw], got {wt:?}"));
        }
        let (n, c, h, w) = (x[0], x[1], x[2], x[3]);
        let (o, cg, kh, kw) = (wt[0], wt[1], wt[2], wt[3]);
        let Conv2dOptions {
            stride,
            padding: pad,
            groups,
        } = opts;
        if stride == 0 || groups == 0 {
            return fail("stride and groups must be positive".into());
        }
        if c % groups != 0 {
            return fail(format!("input channels (axis 1) = {c} not divisible by groups = {groups}"));
        }
        if o % groups != 0 {
            return fail(format!("output channels (weight axis 0) = {o} not divisible by groups = {groups}"));
        }
        if cg != c / groups {
            return fail(format!(
                "weight axis 1 = {cg} but input axis 1 / groups = {}",
                c / groups
            ));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return fail(format!(
                "kernel {kh}x{kw} exceeds padded spatial axes (2,3) = {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        Ok(Geometry {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            pad,
            groups,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn cg(&self) -> usize {
        self.c / self.groups
    }

    fn og(&self) -> usize {
        self.o / self.groups
    }

    fn depthwise(&self) -> bool {
        self.cg() == 1 && self.og() == 1
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.o, self.ho, self.wo]
    }
}

/// Output spatial extent for a kernel/stride/padding triple.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, col: &mut [T]) {
    let hw = g.ho * g.wo;
    let mut row = 0;
    for c in 0..g.cg() {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im_add<T: Scalar>(col: &[T], g: &Geometry, dx: &mut [T]) {
    let hw = g.ho * g.wo;
    let mut row = 0;
    for c in 0..g.cg() {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Visits every (output index, input index, kernel index) triple of one
/// depthwise plane.
#[inline]
fn depthwise_taps(g: &Geometry, mut f: impl FnMut(usize, usize, usize)) {
    for oy in 0..g.ho {
        for ky in 0..g.kh {
            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
            if iy < 0 || iy >= g.h as isize {
                continue;
            }
            let iy = iy as usize;
            for ox in 0..g.wo {
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    f(oy * g.wo + ox, iy * g.w + ix as usize, ky * g.kw + kx);
                }
            }
        }
    }
}

fn forward<T: Scalar>(x: &[T], wt: &[T], bias: Option<&[T]>, g: &Geometry) -> Vec<T> {
    let hw = g.ho * g.wo;
    let plane = g.h * g.w;
    let kk = g.kh * g.kw;
    let mut out = vec![T::zero(); g.n * g.o * hw];
    if g.depthwise() {
        for n in 0..g.n {
            for ch in 0..g.c {
                let src = &x[(n * g.c + ch) * plane..][..plane];
                let k = &wt[ch * kk..(ch + 1) * kk];
                let dst = &mut out[(n * g.o + ch) * hw..][..hw];
                depthwise_taps(g, |o, i, j| dst[o] = dst[o] + src[i] * k[j]);
            }
        }
    } else {
        let (cg, og) = (g.cg(), g.og());
        let ckk = cg * kk;
        let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); ckk * hw] };
        for n in 0..g.n {
            for grp in 0..g.groups {
                let xin = &x[(n * g.c + grp * cg) * plane..][..cg * plane];
                let cols: &[T] = if g.pointwise() {
                    xin
                } else {
                    im2col(xin, g, &mut col);
                    &col
                };
                let wg = &wt[grp * og * ckk..][..og * ckk];
                let dst = &mut out[(n * g.o + grp * og) * hw..][..og * hw];
                gemm(dst, Mat::new(wg, og, ckk), Mat::new(cols, ckk, hw), T::one(), T::zero());
            }
        }
    }
    if let Some(b) = bias {
        for n in 0..g.n {
            for (o, &bo) in b.iter().enumerate() {
                out[(n * g.o + o) * hw..][..hw].iter_mut().for_each(|v| *v = *v + bo);
            }
        }
    }
    out
}

fn backward<T: Scalar>(
    dout: &[T],
    x: &[T],
    wt: &[T],
    g: &Geometry,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let hw = g.ho * g.wo;
    let plane = g.h * g.w;
    let kk = g.kh * g.kw;
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![T::zero(); wt.len()]);
    if g.depthwise() {
        for n in 0..g.n {
            for ch in 0..g.c {
                let go = &dout[(n * g.o + ch) * hw..][..hw];
                let k = &wt[ch * kk..(ch + 1) * kk];
                if let Some(dx) = dx.as_mut() {
                    let dst = &mut dx[(n * g.c + ch) * plane..][..plane];
                    depthwise_taps(g, |o, i, j| dst[i] = dst[i] + go[o] * k[j]);
                }
                if let Some(dw) = dw.as_mut() {
                    let src = &x[(n * g.c + ch) * plane..][..plane];
                    let dk = &mut dw[ch * kk..(ch + 1) * kk];
                    depthwise_taps(g, |o, i, j| dk[j] = dk[j] + go[o] * src[i]);
                }
            }
        }
        return (dx, dw);
    }
    let (cg, og) = (g.cg(), g.og());
    let ckk = cg * kk;
    let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); ckk * hw] };
    let mut dcol = if g.pointwise() || !need_x { Vec::new() } else { vec![T::zero(); ckk * hw] };
    for n in 0..g.n {
        for grp in 0..g.groups {
            let go = &dout[(n * g.o + grp * og) * hw..][..og * hw];
            let wg = &wt[grp * og * ckk..][..og * ckk];
            let xoff = (n * g.c + grp * cg) * plane;
            if let Some(dw) = dw.as_mut() {
                let xin = &x[xoff..][..cg * plane];
                let cols: &[T] = if g.pointwise() {
                    xin
                } else {
                    im2col(xin, g, &mut col);
                    &col
                };
                let dwg = &mut dw[grp * og * ckk..][..og * ckk];
                gemm(dwg, Mat::new(go, og, hw), Mat::new(cols, ckk, hw).t(), T::one(), T::one());
            }
            if let Some(dx) = dx.as_mut() {
                let dxg = &mut dx[xoff..][..cg * plane];
                if g.pointwise() {
                    gemm(dxg, Mat::new(wg, og, ckk).t(), Mat::new(go, og, hw), T::one(), T::zero());
                } else {
                    gemm(&mut dcol, Mat::new(wg, og, ckk).t(), Mat::new(go, og, hw), T::one(), T::zero());
                    col2im_add(&dcol, g, dxg);
                }
            }
        }
    }
    (dx, dw)
}

impl<'t, T: Scalar> Var<'t, T> {
    /// 2-D cross-correlation of `[N,C,H,W]` input with `[O,C/groups,kh,kw]`
    /// weights. `groups == C` gives a depthwise convolution.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        opts: Conv2dOptions,
    ) -> Result<Var<'t, T>> {
        let g = Geometry::resolve(&self.shape(), &weight.shape(), opts)?;
        if let Some(b) = &bias {
            if b.shape() != [g.o] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias shape {:?} vs output channels {}", b.shape(), g.o),
                ));
            }
        }
        let (x, w) = (self.value(), weight.value());
        let bv = bias.map(|b| b.value());
        let out = forward(x.data(), w.data(), bv.as_ref().map(|b| b.data()), &g);
        let out = Tensor::from_parts(g.out_shape(), out);
        let (xs, ws) = (x.shared_data(), w.shared_data());
        let backward_fn = move |gout: &[T], needs: &[bool]| {
            let (dx, dw) = backward(gout, &xs, &ws, &g, needs[0], needs[1]);
            let mut grads = vec![dx, dw];
            if needs.len() == 3 {
                let hw = g.ho * g.wo;
                let mut db = vec![T::zero(); g.o];
                for n in 0..g.n {
                    for (o, d) in db.iter_mut().enumerate() {
                        *d = *d + gout[(n * g.o + o) * hw..][..hw].iter().copied().sum::<T>();
                    }
                }
                grads.push(Some(db));
            }
            grads
        };
        let tape = self.tape();
        Ok(match bias {
            Some(b) => tape.record(out, &[self, weight, b], backward_fn),
            None => tape.record(out, &[self, weight], backward_fn),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    /// Nested-loop oracle, independent of the im2col path.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, groups: usize) -> Vec<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, cg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let og = o / groups;
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * o * ho * wo];
        for b in 0..n {
            for oc in 0..o {
                let grp = oc / og;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cg {
                            let ic = grp * cg + ci;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * cg + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((b * o + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn run(x: &Tensor<f64>, w: &Tensor<f64>, opts: Conv2dOptions) -> Tensor<f64> {
        let tape = Tape::new();
        let (xv, wv) = (tape.input(x), tape.input(w));
        xv.conv2d(wv, None, opts).unwrap().value()
    }

    fn ramp(shape: Vec<usize>) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| i as f64)
    }

    #[test]
    fn identity_kernel_returns_input() {
        let x = ramp(vec![1, 1, 3, 3]);
        let w = Tensor::full(vec![1, 1, 1, 1], 1.0);
        assert_eq!(run(&x, &w, Conv2dOptions::default()).data(), x.data());
    }

    #[test]
    fn ones_kernel_gives_window_sums() {
        let x = ramp(vec![1, 1, 4, 4]);
        let w = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let out = run(&x, &w, Conv2dOptions::default());
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), naive(&x, &w, 1, 0, 1).as_slice());
        // window over rows 0..3, cols 0..3 of the ramp 0..16
        assert_eq!(out.data()[0], 0.0 + 1.0 + 2.0 + 4.0 + 5.0 + 6.0 + 8.0 + 9.0 + 10.0);
    }

    #[test]
    fn grouped_equals_independent_channels() {
        let x = Tensor::from_fn(vec![1, 2, 4, 4], |i| ((i * 7) % 5) as f64 - 2.0);
        let w = Tensor::from_fn(vec![2, 1, 3, 3], |i| (i as f64 * 0.3).sin());
        let opts = Conv2dOptions { stride: 1, padding: 1, groups: 2 };
        let out = run(&x, &w, opts);
        for ch in 0..2 {
            let xc = Tensor::new(vec![1, 1, 4, 4], x.data()[ch * 16..(ch + 1) * 16].to_vec()).unwrap();
            let wc = Tensor::new(vec![1, 1, 3, 3], w.data()[ch * 9..(ch + 1) * 9].to_vec()).unwrap();
            let single = run(&xc, &wc, Conv2dOptions { stride: 1, padding: 1, groups: 1 });
            assert_eq!(&out.data()[ch * 16..(ch + 1) * 16], single.data());
        }
    }

    #[test]
    fn im2col_path_matches_naive_with_stride_padding_groups() {
        for &(c, o, k, s, p, groups) in &[
            (3, 4, 3, 2, 1, 1),
            (4, 6, 3, 1, 1, 2),
            (2, 3, 1, 1, 0, 1),
            (3, 3, 3, 2, 1, 3),
            (2, 2, 2, 2, 0, 1),
        ] {
            let x = Tensor::from_fn(vec![2, c, 5, 6], |i| ((i * 13) % 11) as f64 * 0.1 - 0.5);
            let w = Tensor::from_fn(vec![o, c / groups, k, k], |i| ((i * 5) % 7) as f64 * 0.2 - 0.6);
            let out = run(&x, &w, Conv2dOptions { stride: s, padding: p, groups });
            let expected = naive(&x, &w, s, p, groups);
            for (a, b) in out.data().iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors_name_axes() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::zeros(vec![1, 3, 4, 4]));
        let w = tape.input(&Tensor::zeros(vec![2, 2, 3, 3]));
        let err = x.conv2d(w, None, Conv2dOptions::default()).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
        let w = tape.input(&Tensor::zeros(vec![2, 3, 7, 7]));
        let err = x.conv2d(w, None, Conv2dOptions::default()).unwrap_err().to_string();
        assert!(err.contains("kernel"), "{err}");
    }
}
