//! Building blocks for relation-based losses over a batch of embeddings.

use crate::error::{Error, Result};
use crate::tensor::scalar::{gemm, Mat};
use crate::tensor::{Scalar, Tensor, Var};

const NORMALIZE_EPS: f64 = 1e-12;

fn rows(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [n, d] => Ok((n, d)),
        _ => Err(Error::shape(op, format!("expected [N,D], got {shape:?}"))),
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// `[N,D] -> [N,N]` Euclidean distances between rows.
    pub fn pdist(self) -> Result<Var<'t, T>> {
        let (n, d) = rows("pdist", &self.shape())?;
        let x = self.value();
        let xd = x.data();
        let mut dist = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i + 1..n {
                let s: T = (0..d).map(|k| {
                    let v = xd[i * d + k] - xd[j * d + k];
                    v * v
                }).sum();
                dist[i * n + j] = s.sqrt();
                dist[j * n + i] = dist[i * n + j];
            }
        }
        let xs = x.shared_data();
        let saved = dist.clone();
        let out = Tensor::from_parts(vec![n, n], dist);
        Ok(self.tape().record(out, &[self], move |g, _| {
            let mut dx = vec![T::zero(); n * d];
            for i in 0..n {
                for j in 0..n {
                    let dij = saved[i * n + j];
                    if i == j || dij <= T::zero() {
                        continue;
                    }
                    let w = (g[i * n + j] + g[j * n + i]) / dij;
                    for k in 0..d {
                        dx[i * d + k] = dx[i * d + k] + w * (xs[i * d + k] - xs[j * d + k]);
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Divides every element by the mean of the strictly positive elements.
    /// An all-zero input maps to zeros.
    pub fn div_mean_positive(self) -> Var<'t, T> {
        let x = self.value();
        let count = x.data().iter().filter(|&&v| v > T::zero()).count();
        let total: T = x.data().iter().copied().sum();
        let factor = if count == 0 || total == T::zero() {
            T::zero()
        } else {
            T::lit(count as f64) / total
        };
        let out = x.map(|v| v * factor);
        let xs = x.shared_data();
        self.tape().record(out, &[self], move |g, _| {
            if factor == T::zero() {
                return vec![Some(vec![T::zero(); g.len()])];
            }
            let gx: T = g.iter().zip(xs.iter()).map(|(&g, &x)| g * x).sum();
            let corr = factor / total * gx;
            vec![Some(g.iter().map(|&g| factor * g - corr).collect())]
        })
    }

    /// `[N,D] -> [N,N,D]` with `out[a][b] = x[b] - x[a]`.
    pub fn pairwise_diff(self) -> Result<Var<'t, T>> {
        let (n, d) = rows("pairwise_diff", &self.shape())?;
        let x = self.value();
        let xd = x.data();
        let mut out = vec![T::zero(); n * n * d];
        for a in 0..n {
            for b in 0..n {
                for k in 0..d {
                    out[(a * n + b) * d + k] = xd[b * d + k] - xd[a * d + k];
                }
            }
        }
        let out = Tensor::from_parts(vec![n, n, d], out);
        Ok(self.tape().record(out, &[self], move |g, _| {
            let mut dx = vec![T::zero(); n * d];
            for a in 0..n {
                for b in 0..n {
                    for k in 0..d {
                        let v = g[(a * n + b) * d + k];
                        dx[b * d + k] = dx[b * d + k] + v;
                        dx[a * d + k] = dx[a * d + k] - v;
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    /// L2-normalizes along the last axis as `x / max(|x|, 1e-12)`.
    pub fn l2_normalize_last(self) -> Var<'t, T> {
        let x = self.value();
        let d = *x.shape().last().unwrap();
        let eps = T::lit(NORMALIZE_EPS);
        let norms: Vec<T> = x
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let mut out = Vec::with_capacity(x.numel());
        for (row, &nrm) in x.data().chunks(d).zip(&norms) {
            let den = nrm.max(eps);
            out.extend(row.iter().map(|&v| v / den));
        }
        let out = Tensor::from_parts(x.shape().to_vec(), out);
        let ys = out.shared_data();
        self.tape().record(out, &[self], move |g, _| {
            let mut dx = Vec::with_capacity(g.len());
            for ((gr, yr), &nrm) in g.chunks(d).zip(ys.chunks(d)).zip(&norms) {
                if nrm > eps {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(&g, &y)| (g - y * dot) / nrm));
                } else {
                    dx.extend(gr.iter().map(|&g| g / eps));
                }
            }
            vec![Some(dx)]
        })
    }

    /// Batched `A B^T` of `[B,M,K]` and `[B,N,K]` into `[B,M,N]`.
    pub fn bmm_nt(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), rhs.shape());
        let (bt, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([b, m, k], [b2, n, k2]) if b == b2 && k == k2 => (*b, *m, *k, *n),
            _ => return Err(Error::shape("bmm_nt", format!("{sa:?} x {sb:?}^T"))),
        };
        let (a, b) = (self.value(), rhs.value());
        let mut out = vec![T::zero(); bt * m * n];
        for i in 0..bt {
            gemm(
                &mut out[i * m * n..(i + 1) * m * n],
                Mat::new(&a.data()[i * m * k..], m, k),
                Mat::new(&b.data()[i * n * k..], n, k).t(),
                T::one(),
                T::zero(),
            );
        }
        let (ad, bd) = (a.shared_data(), b.shared_data());
        let out = Tensor::from_parts(vec![bt, m, n], out);
        Ok(self.tape().record(out, &[self, rhs], move |g, needs| {
            let da = needs[0].then(|| {
                let mut da = vec![T::zero(); bt * m * k];
                for i in 0..bt {
                    gemm(
                        &mut da[i * m * k..(i + 1) * m * k],
                        Mat::new(&g[i * m * n..], m, n),
                        Mat::new(&bd[i * n * k..], n, k),
                        T::one(),
                        T::zero(),
                    );
                }
                da
            });
            let db = needs[1].then(|| {
                let mut db = vec![T::zero(); bt * n * k];
                for i in 0..bt {
                    gemm(
                        &mut db[i * n * k..(i + 1) * n * k],
                        Mat::new(&g[i * m * n..], m, n).t(),
                        Mat::new(&ad[i * m * k..], m, k),
                        T::one(),
                        T::zero(),
                    );
                }
                db
            });
            vec![da, db]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn pdist_of_three_points() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::new(vec![3, 2], vec![0.0, 0.0, 3.0, 0.0, 0.0, 4.0]).unwrap());
        let d = x.pdist().unwrap().value();
        assert_eq!(d.data(), &[0.0, 3.0, 4.0, 3.0, 0.0, 5.0, 4.0, 5.0, 0.0]);
        let n = tape.input(&d).div_mean_positive().value();
        assert!((n.data()[1] - 3.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_keeps_zero_rows_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::new(vec![2, 2], vec![0.0, 0.0, 3.0, 4.0]).unwrap());
        assert_eq!(x.l2_normalize_last().value().data(), &[0.0, 0.0, 0.6, 0.8]);
    }
}
