//! Elementwise maps, reductions, and finite-difference stencils.

use super::{Tape, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::real::Real;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Smoothing of every L1 term: `|x| ~ sqrt(x^2 + eps^2) - eps`.
pub const CHARBONNIER_EPS: f64 = 1e-6;

/// Splits a shape around `axis` into (outer, len, inner) extents.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tape<T> {
    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{op}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn map_unary(
        &mut self,
        op: &'static str,
        a: Var,
        f: impl Fn(T) -> T,
        df: impl Fn(T) -> T + 'static,
    ) -> Result<Var> {
        let x = self.value(a);
        let value = Tensor::from_parts(x.shape.clone(), x.data.iter().map(|&v| f(v)).collect());
        self.push(
            op,
            value,
            vec![a],
            Box::new(move |tape, up, _| {
                let x = tape.value(a);
                let g = x.data.iter().zip(&up.data).map(|(&v, &u)| u * df(v)).collect();
                vec![Some(Tensor::from_parts(x.shape.clone(), g))]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let value = Tensor::from_parts(x.shape.clone(), x.data.iter().zip(&y.data).map(|(p, q)| *p + *q).collect());
        self.push("add", value, vec![a, b], Box::new(|_, up, _| vec![Some(up.clone()), Some(up.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let value = Tensor::from_parts(x.shape.clone(), x.data.iter().zip(&y.data).map(|(p, q)| *p - *q).collect());
        self.push(
            "sub",
            value,
            vec![a, b],
            Box::new(|_, up, needs| {
                let neg = needs[1].then(|| Tensor::from_parts(up.shape.clone(), up.data.iter().map(|v| -*v).collect()));
                vec![Some(up.clone()), neg]
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let value = Tensor::from_parts(x.shape.clone(), x.data.iter().zip(&y.data).map(|(p, q)| *p * *q).collect());
        self.push(
            "mul",
            value,
            vec![a, b],
            Box::new(move |tape, up, needs| {
                let times = |other: Var| {
                    let o = tape.value(other);
                    Tensor::from_parts(up.shape.clone(), up.data.iter().zip(&o.data).map(|(u, v)| *u * *v).collect())
                };
                vec![needs[0].then(|| times(b)), needs[1].then(|| times(a))]
            }),
        )
    }

    pub fn scalar_mul(&mut self, a: Var, c: T) -> Result<Var> {
        self.map_unary("scalar_mul", a, |v| v * c, move |_| c)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data.iter().fold(T::zero(), |s, v| s + *v);
        self.push(
            "sum",
            Tensor::scalar(total),
            vec![a],
            Box::new(move |tape, up, _| vec![Some(Tensor::full(tape.shape(a), up.item()))]),
        )
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return shape_err("mean of an empty tensor");
        }
        let s = self.sum(a)?;
        self.scalar_mul(s, T::one() / T::lit(n as f64))
    }

    /// Leaky rectifier with slope [`LEAKY_SLOPE`] for negative inputs.
    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        let s = T::lit(LEAKY_SLOPE);
        self.map_unary(
            "leaky_relu",
            a,
            move |v| if v > T::zero() { v } else { v * s },
            move |v| if v > T::zero() { T::one() } else { s },
        )
    }

    /// Charbonnier-smoothed absolute value `sqrt(x^2 + eps^2) - eps`.
    pub fn abs_smooth(&mut self, a: Var) -> Result<Var> {
        let e = T::lit(CHARBONNIER_EPS);
        self.map_unary("abs_smooth", a, move |v| (v * v + e * e).sqrt() - e, move |v| v / (v * v + e * e).sqrt())
    }

    /// Smoothed modulus of complex pairs: `[N, 2] -> [N]`.
    pub fn complex_abs_smooth(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || shape[1] != 2 {
            return shape_err(format!("complex_abs_smooth expects [N, 2], got {shape:?}"));
        }
        let e = T::lit(CHARBONNIER_EPS);
        let x = self.value(a);
        let value: Vec<T> = x.data.chunks_exact(2).map(|c| (c[0] * c[0] + c[1] * c[1] + e * e).sqrt() - e).collect();
        self.push(
            "complex_abs_smooth",
            Tensor::from_parts(vec![shape[0]], value),
            vec![a],
            Box::new(move |tape, up, _| {
                let x = tape.value(a);
                let mut g = Vec::with_capacity(x.len());
                for (c, u) in x.data.chunks_exact(2).zip(&up.data) {
                    let r = (c[0] * c[0] + c[1] * c[1] + e * e).sqrt();
                    g.push(*u * c[0] / r);
                    g.push(*u * c[1] / r);
                }
                vec![Some(Tensor::from_parts(x.shape.clone(), g))]
            }),
        )
    }

    /// Forward differences `x[i + 1] - x[i]` along `axis`; that axis
    /// shrinks by one.
    pub fn diff(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] < 2 {
            return shape_err(format!("diff along axis {axis} of shape {shape:?}"));
        }
        let (outer, n, inner) = split(&shape, axis);
        let x = self.value(a);
        let mut out = Vec::with_capacity(outer * (n - 1) * inner);
        for o in 0..outer {
            let base = o * n * inner;
            for i in 0..n - 1 {
                for k in 0..inner {
                    out.push(x.data[base + (i + 1) * inner + k] - x.data[base + i * inner + k]);
                }
            }
        }
        let mut oshape = shape.clone();
        oshape[axis] -= 1;
        self.push(
            "diff",
            Tensor::from_parts(oshape, out),
            vec![a],
            Box::new(move |_, up, _| {
                let mut g = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for i in 0..n - 1 {
                        for k in 0..inner {
                            let u = up.data[(o * (n - 1) + i) * inner + k];
                            g[(o * n + i + 1) * inner + k] += u;
                            g[(o * n + i) * inner + k] -= u;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(shape.clone(), g))]
            }),
        )
    }

    /// Forward difference along the last (column) axis.
    pub fn finite_diff_x(&mut self, a: Var) -> Result<Var> {
        let axes = self.shape(a).len();
        if axes == 0 {
            return shape_err("finite_diff_x of a scalar");
        }
        self.diff(a, axes - 1)
    }

    /// Forward difference along the row axis (second to last).
    pub fn finite_diff_y(&mut self, a: Var) -> Result<Var> {
        let axes = self.shape(a).len();
        if axes < 2 {
            return shape_err("finite_diff_y needs at least two axes");
        }
        self.diff(a, axes - 2)
    }

    /// Five-point Laplacian over the interior of the last two axes of a
    /// `[B, C, H, W]` tensor: output `[B, C, H - 2, W - 2]`.
    pub fn laplacian(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 || shape[2] < 3 || shape[3] < 3 {
            return shape_err(format!("laplacian expects [B, C, H>=3, W>=3], got {shape:?}"));
        }
        let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
        let (oh, ow) = (h - 2, w - 2);
        let four = T::lit(4.0);
        let x = self.value(a);
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let s = &x.data[p * h * w..(p + 1) * h * w];
            for i in 1..h - 1 {
                for j in 1..w - 1 {
                    let c = i * w + j;
                    out.push(s[c - w] + s[c + w] + s[c - 1] + s[c + 1] - four * s[c]);
                }
            }
        }
        self.push(
            "laplacian",
            Tensor::from_parts(vec![shape[0], shape[1], oh, ow], out),
            vec![a],
            Box::new(move |_, up, _| {
                let mut g = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    let gs = &mut g[p * h * w..(p + 1) * h * w];
                    let us = &up.data[p * oh * ow..(p + 1) * oh * ow];
                    for i in 1..h - 1 {
                        for j in 1..w - 1 {
                            let u = us[(i - 1) * ow + j - 1];
                            let c = i * w + j;
                            gs[c - w] += u;
                            gs[c + w] += u;
                            gs[c - 1] += u;
                            gs[c + 1] += u;
                            gs[c] -= four * u;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(shape.clone(), g))]
            }),
        )
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let value = Tensor::new(shape, x.data.clone())?;
        let old = x.shape.clone();
        self.push(
            "reshape",
            value,
            vec![a],
            Box::new(move |_, up, _| vec![Some(Tensor::from_parts(old.clone(), up.data.clone()))]),
        )
    }
}
