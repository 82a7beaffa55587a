//! Elementwise arithmetic, reductions and activations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Hardswish,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Hardswish => x * (x + T::lit(3.0)).max(T::zero()).min(T::lit(6.0)) / T::lit(6.0),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Hardswish => {
                if x < T::lit(-3.0) {
                    T::zero()
                } else if x > T::lit(3.0) {
                    T::one()
                } else {
                    (x + x + T::lit(3.0)) / T::lit(6.0)
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn same_shape<T: Scalar>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, format!("lhs {sa:?} vs rhs {sb:?}")));
    }
    Ok(sa)
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = same_shape("add", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = Tensor::from_parts(shape, zip_map(a.data(), b.data(), |x, y| x + y));
        Ok(self.tape().record(out, &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = same_shape("sub", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = Tensor::from_parts(shape, zip_map(a.data(), b.data(), |x, y| x - y));
        Ok(self.tape().record(out, &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]
        }))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = same_shape("mul", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = Tensor::from_parts(shape, zip_map(a.data(), b.data(), |x, y| x * y));
        let (a, b) = (a.shared_data(), b.shared_data());
        Ok(self.tape().record(out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| zip_map(g, &b, |g, y| g * y)),
                needs[1].then(|| zip_map(g, &a, |g, x| g * x)),
            ]
        }))
    }

    pub fn scale(self, factor: T) -> Var<'t, T> {
        let v = self.value();
        let out = v.map(|x| x * factor);
        self.tape().record(out, &[self], move |g, _| {
            vec![Some(g.iter().map(|&v| v * factor).collect())]
        })
    }

    /// Multiplies every element by a one-element variable.
    pub fn mul_scalar(self, s: Var<'t, T>) -> Result<Var<'t, T>> {
        if s.numel() != 1 {
            return Err(Error::shape("mul_scalar", format!("factor shape {:?}", s.shape())));
        }
        let (x, k) = (self.value(), s.item());
        let out = x.map(|v| v * k);
        let x = x.shared_data();
        Ok(self.tape().record(out, &[self, s], move |g, needs| {
            vec![
                needs[0].then(|| g.iter().map(|&v| v * k).collect()),
                needs[1].then(|| vec![g.iter().zip(x.iter()).map(|(&g, &x)| g * x).sum()]),
            ]
        }))
    }

    pub fn sum(self) -> Var<'t, T> {
        let v = self.value();
        let n = v.numel();
        let out = Tensor::scalar(v.data().iter().copied().sum());
        self.tape().record(out, &[self], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.numel();
        self.sum().scale(T::one() / T::lit(n as f64))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let out = self.value().reshape(shape)?;
        Ok(self.tape().record(out, &[self], |g, _| vec![Some(g.to_vec())]))
    }

    /// Collapses all axes after the first.
    pub fn flatten(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let rest: usize = shape[1..].iter().product();
        self.reshape(vec![shape[0], rest])
    }

    pub fn activation(self, kind: Activation) -> Var<'t, T> {
        let x = self.value();
        let y = x.map(|v| kind.apply(v));
        let (xs, ys) = (x.shared_data(), y.shared_data());
        self.tape().record(y, &[self], move |g, _| {
            vec![Some(
                g.iter()
                    .zip(xs.iter().zip(ys.iter()))
                    .map(|(&g, (&x, &y))| g * kind.derivative(x, y))
                    .collect(),
            )]
        })
    }

    pub fn relu(self) -> Var<'t, T> {
        self.activation(Activation::Relu)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.activation(Activation::Sigmoid)
    }

    pub fn hardswish(self) -> Var<'t, T> {
        self.activation(Activation::Hardswish)
    }

    /// Elementwise natural log; inputs must be positive.
    pub fn ln(self) -> Var<'t, T> {
        let x = self.value();
        let y = x.map(|v| v.ln());
        let xs = x.shared_data();
        self.tape().record(y, &[self], move |g, _| {
            vec![Some(zip_map(g, &xs, |g, x| g / x))]
        })
    }
}
