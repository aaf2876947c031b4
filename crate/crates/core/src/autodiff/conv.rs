//! Stride-1, same-padding 2D convolution (NCHW) via im2col and GEMM.

use super::{Tape, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::real::Real;

/// Rows `(ci, ky, kx)`, columns `(i, j)`; out-of-image taps are zero.
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let hw = h * w;
    let mut cols = vec![T::zero(); cin * k * k * hw];
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let (dy, dx) = (ky as isize - pad as isize, kx as isize - pad as isize);
                for i in 0..h {
                    let si = i as isize + dy;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    let dst = &mut row[i * w..(i + 1) * w];
                    let j0 = (-dx).max(0) as usize;
                    let j1 = (w as isize - dx).min(w as isize) as usize;
                    if j0 < j1 {
                        dst[j0..j1].copy_from_slice(&src[(j0 as isize + dx) as usize..(j1 as isize + dx) as usize]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, out: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let (dy, dx) = (ky as isize - pad as isize, kx as isize - pad as isize);
                for i in 0..h {
                    let si = i as isize + dy;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let j0 = (-dx).max(0) as usize;
                    let j1 = (w as isize - dx).min(w as isize) as usize;
                    for j in j0..j1 {
                        plane[si as usize * w + (j as isize + dx) as usize] += row[i * w + j];
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// `y[b, co] = bias[co] + sum_ci w[co, ci] * x[b, ci]` with odd square
    /// kernels, stride 1, and zero padding that preserves `H x W`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return shape_err(format!("conv2d expects 4-axis input and weight, got {xs:?} and {ws:?}"));
        }
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[0], ws[2]);
        if ws[1] != cin || ws[3] != k || k % 2 == 0 {
            return shape_err(format!("conv2d weight {ws:?} does not fit input {xs:?}"));
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [cout] {
                return shape_err(format!("conv2d bias {:?} should be [{cout}]", self.shape(bv)));
            }
        }
        let hw = h * w;
        let ckk = cin * k * k;
        let xv = self.value(x);
        let wv = self.value(weight);
        let mut out = vec![T::zero(); b * cout * hw];
        if let Some(bv) = bias {
            let bias = &self.value(bv).data;
            for (chunk, bval) in out.chunks_exact_mut(hw).zip(bias.iter().cycle()) {
                chunk.fill(*bval);
            }
        }
        for bi in 0..b {
            let xb = &xv.data[bi * cin * hw..(bi + 1) * cin * hw];
            let owned;
            let cols: &[T] = if k == 1 {
                xb
            } else {
                owned = im2col(xb, cin, h, w, k);
                &owned
            };
            let ob = &mut out[bi * cout * hw..(bi + 1) * cout * hw];
            T::gemm(cout, ckk, hw, T::one(), &wv.data, ckk as isize, 1, cols, hw as isize, 1, T::one(), ob, hw as isize, 1);
        }
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.push(
            "conv2d",
            Tensor::from_parts(vec![b, cout, h, w], out),
            parents,
            Box::new(move |tape, up, needs| {
                let xv = tape.value(x);
                let wv = tape.value(weight);
                let mut gx = needs[0].then(|| vec![T::zero(); b * cin * hw]);
                let mut gw = needs[1].then(|| vec![T::zero(); cout * ckk]);
                let mut dcols = vec![T::zero(); if k == 1 { 0 } else { ckk * hw }];
                for bi in 0..b {
                    let ub = &up.data[bi * cout * hw..(bi + 1) * cout * hw];
                    let xb = &xv.data[bi * cin * hw..(bi + 1) * cin * hw];
                    if let Some(gw) = gw.as_mut() {
                        let owned;
                        let cols: &[T] = if k == 1 {
                            xb
                        } else {
                            owned = im2col(xb, cin, h, w, k);
                            &owned
                        };
                        T::gemm(cout, hw, ckk, T::one(), ub, hw as isize, 1, cols, 1, hw as isize, T::one(), gw, ckk as isize, 1);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let gxb = &mut gx[bi * cin * hw..(bi + 1) * cin * hw];
                        if k == 1 {
                            T::gemm(cin, cout, hw, T::one(), &wv.data, 1, cin as isize, ub, hw as isize, 1, T::one(), gxb, hw as isize, 1);
                        } else {
                            T::gemm(ckk, cout, hw, T::one(), &wv.data, 1, ckk as isize, ub, hw as isize, 1, T::zero(), &mut dcols, hw as isize, 1);
                            col2im(&dcols, cin, h, w, k, gxb);
                        }
                    }
                }
                let mut grads = vec![
                    gx.map(|g| Tensor::from_parts(vec![b, cin, h, w], g)),
                    gw.map(|g| Tensor::from_parts(vec![cout, cin, k, k], g)),
                ];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| {
                        let mut gb = vec![T::zero(); cout];
                        for (c, chunk) in up.data.chunks_exact(hw).enumerate() {
                            gb[c % cout] += chunk.iter().fold(T::zero(), |s, v| s + *v);
                        }
                        Tensor::from_parts(vec![cout], gb)
                    }));
                }
                grads
            }),
        )
    }
}
