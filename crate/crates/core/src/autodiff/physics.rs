//! Fourier and acquisition operators on paired-real image batches.

use std::sync::Arc;

use num_complex::Complex;

use super::{Tape, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::kspace::{ComplexImage, Fft2Plan, FrameOperator};
use crate::real::Real;

fn to_complex<T: Real>(pair: &[T], hw: usize) -> Vec<Complex<T>> {
    (0..hw).map(|i| Complex::new(pair[i], pair[hw + i])).collect()
}

fn write_pair<T: Real>(z: &[Complex<T>], out: &mut [T]) {
    let hw = z.len();
    for (i, v) in z.iter().enumerate() {
        out[i] = v.re;
        out[hw + i] = v.im;
    }
}

fn check_pair_batch(shape: &[usize], op: &str) -> Result<(usize, usize, usize)> {
    if shape.len() != 4 || shape[1] != 2 {
        return shape_err(format!("{op} expects [B, 2, H, W], got {shape:?}"));
    }
    Ok((shape[0], shape[2], shape[3]))
}

impl<T: Real> Tape<T> {
    /// Centered orthonormal 2D DFT of each complex image in a
    /// `[B, 2, H, W]` batch. The backward pass applies the inverse
    /// transform, which is the adjoint of a unitary map.
    pub fn fft2c_pair(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, h, w) = check_pair_batch(&shape, "fft2c_pair")?;
        let plan = Arc::new(Fft2Plan::<T>::new(h, w));
        let hw = h * w;
        let apply = move |plan: &Fft2Plan<T>, src: &[T], inverse: bool| {
            let mut out = vec![T::zero(); src.len()];
            for bi in 0..b {
                let mut z = to_complex(&src[bi * 2 * hw..], hw);
                if inverse {
                    plan.inverse(&mut z);
                } else {
                    plan.forward(&mut z);
                }
                write_pair(&z, &mut out[bi * 2 * hw..(bi + 1) * 2 * hw]);
            }
            out
        };
        let value = apply(&plan, &self.value(x).data, false);
        self.push(
            "fft2c_pair",
            Tensor::from_parts(shape.clone(), value),
            vec![x],
            Box::new(move |_, up, _| vec![Some(Tensor::from_parts(shape.clone(), apply(&plan, &up.data, true)))]),
        )
    }

    /// Applies frame `b`'s acquisition operator to image `b` of a
    /// `[B, 2, H, W]` batch. Output is `[N, 2]`: all samples of frame 0
    /// (coil-major), then frame 1, and so on.
    pub fn acquire(&mut self, x: Var, ops: &[Arc<FrameOperator<T>>]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, h, w) = check_pair_batch(&shape, "acquire")?;
        if ops.len() != b {
            return shape_err(format!("acquire got {} frame operators for a batch of {b}", ops.len()));
        }
        if let Some(op) = ops.iter().find(|op| op.height() != h || op.width() != w) {
            return shape_err(format!("frame operator is {}x{}, images are {h}x{w}", op.height(), op.width()));
        }
        let hw = h * w;
        let counts: Vec<usize> = ops.iter().map(|op| op.coils().count() * op.samples_per_coil()).collect();
        let total: usize = counts.iter().sum();
        let xv = self.value(x);
        let mut out = Vec::with_capacity(2 * total);
        for (bi, op) in ops.iter().enumerate() {
            let img = ComplexImage::new(h, w, to_complex(&xv.data[bi * 2 * hw..], hw))?;
            for s in op.forward(&img)? {
                out.push(s.re);
                out.push(s.im);
            }
        }
        let ops = ops.to_vec();
        self.push(
            "acquire",
            Tensor::from_parts(vec![total, 2], out),
            vec![x],
            Box::new(move |_, up, _| {
                let mut g = vec![T::zero(); b * 2 * hw];
                let mut offset = 0;
                for (bi, op) in ops.iter().enumerate() {
                    let y: Vec<Complex<T>> = up.data[2 * offset..2 * (offset + counts[bi])]
                        .chunks_exact(2)
                        .map(|c| Complex::new(c[0], c[1]))
                        .collect();
                    offset += counts[bi];
                    let img = op.adjoint(&y).expect("sample count checked in forward");
                    write_pair(img.data(), &mut g[bi * 2 * hw..(bi + 1) * 2 * hw]);
                }
                vec![Some(Tensor::from_parts(vec![b, 2, h, w], g))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck;
    use super::*;
    use crate::kspace::{CartesianMask, CoilSet, Sampling};
    use crate::sampling::make_golden_angle_traj;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn coils(h: usize, w: usize) -> Arc<CoilSet<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let maps = (0..2)
            .map(|_| ComplexImage::from_fn(h, w, |_, _| Complex::new(rng.random_range(0.2..1.0), rng.random_range(-0.5..0.5))))
            .collect();
        Arc::new(CoilSet::normalized(maps).unwrap())
    }

    fn check_linear(build: impl Fn(&mut Tape<f64>, Var) -> Result<Var>, x: Tensor<f64>, seed: u64) {
        let mut probe_tape = Tape::new();
        let xv = probe_tape.constant(x.clone());
        let probe = build(&mut probe_tape, xv).unwrap();
        let out_shape = probe_tape.shape(probe).to_vec();
        let proj = random(&out_shape, seed);
        let r = gradcheck(
            |t, v| {
                let y = build(t, v[0])?;
                let p = t.constant(proj.clone());
                let z = t.mul(y, p)?;
                t.sum(z)
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn fft_pair_matches_fft2c_and_gradcheck() {
        let x = random(&[2, 2, 4, 6], 1);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = tape.fft2c_pair(xv).unwrap();
        let z = crate::kspace::fft2c(&ComplexImage::new(4, 6, to_complex(&x.data()[48..], 24)).unwrap()).unwrap();
        let got = to_complex(&tape.value(y).data()[48..], 24);
        for (a, b) in got.iter().zip(z.data()) {
            assert!((a - b).norm() < 1e-12);
        }
        check_linear(|t, v| t.fft2c_pair(v), x, 2);
    }

    #[test]
    fn acquire_gradients_cartesian_and_radial() {
        let (h, w) = (6, 6);
        let c = coils(h, w);
        let mask = CartesianMask::new(h, 2, (0..12).map(|i| i % 3 != 1 || i % 6 == 3).collect()).unwrap();
        let cart = Sampling::Cartesian(mask);
        let radial = Sampling::Radial(make_golden_angle_traj(2, 8, 2, 0.0).unwrap());
        for s in [cart, radial] {
            let ops: Vec<_> = (0..2).map(|t| Arc::new(FrameOperator::new(&s, t, c.clone()).unwrap())).collect();
            check_linear(|t, v| t.acquire(v, &ops), random(&[2, 2, h, w], 3), 4);
        }
    }
}
