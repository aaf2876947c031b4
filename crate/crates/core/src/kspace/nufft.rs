//! Kaiser-Bessel gridding NUFFT on a 2x oversampled grid with width-4
//! kernels and exact deapodization.
//!
//! Forward evaluates `X(k) = sum_p x(p) exp(-2 pi i k.p)` with `p` the pixel
//! offset from the image center `(h/2, w/2)` and `k` in cycles per pixel. The
//! adjoint is the exact transpose of the implemented forward operator, so dot
//! tests hold to rounding error.

use num_complex::Complex;

use super::fft::Fft2Plan;
use super::{check_coords, check_dims, ComplexImage};
use crate::error::{shape_err, Result};
use crate::real::Real;

pub const NUFFT_OVERSAMPLING: f64 = 2.0;
pub const NUFFT_WIDTH: usize = 4;

/// Kaiser-Bessel shape parameter for a given width and oversampling.
pub fn kb_beta(width: usize, oversampling: f64) -> f64 {
    let w = width as f64;
    std::f64::consts::PI * ((w / oversampling).powi(2) * (oversampling - 0.5).powi(2) - 0.8).sqrt()
}

fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kb_kernel(s: f64, width: f64, beta: f64) -> f64 {
    let r = 2.0 * s / width;
    if r.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - r * r).sqrt())
}

/// Continuous Fourier transform of [`kb_kernel`] at `f` cycles per grid cell.
fn kb_transform(f: f64, width: f64, beta: f64) -> f64 {
    let a = std::f64::consts::PI * width * f;
    let d = beta * beta - a * a;
    if d > 1e-12 {
        let r = d.sqrt();
        width * r.sinh() / r
    } else if d < -1e-12 {
        let r = (-d).sqrt();
        width * r.sin() / r
    } else {
        width
    }
}

/// Grid points touched per axis: the closed kernel support `[u - W/2, u + W/2]`
/// holds `W + 1` integers when `u` is integral.
const TAPS: usize = NUFFT_WIDTH + 1;

#[derive(Clone, Debug)]
struct Taps<T> {
    iy: [usize; TAPS],
    ix: [usize; TAPS],
    wy: [T; TAPS],
    wx: [T; TAPS],
}

fn axis_taps<T: Real>(k: f64, grid: usize, beta: f64) -> ([usize; TAPS], [T; TAPS]) {
    let u = k * grid as f64 + (grid / 2) as f64;
    let m0 = (u - NUFFT_WIDTH as f64 / 2.0).ceil() as i64;
    let mut idx = [0usize; TAPS];
    let mut wts = [T::zero(); TAPS];
    for a in 0..TAPS {
        let m = m0 + a as i64;
        idx[a] = m.rem_euclid(grid as i64) as usize;
        wts[a] = T::lit(kb_kernel(u - m as f64, NUFFT_WIDTH as f64, beta));
    }
    (idx, wts)
}

/// Precomputed gridding plan for one image size and one set of sample
/// coordinates.
#[derive(Debug)]
pub struct NufftPlan<T: Real> {
    h: usize,
    w: usize,
    gh: usize,
    gw: usize,
    taps: Vec<Taps<T>>,
    deapod: Vec<T>,
    fft: Fft2Plan<T>,
}

impl<T: Real> NufftPlan<T> {
    pub fn new(h: usize, w: usize, coords: &[[f64; 2]]) -> Result<Self> {
        check_dims(h, w)?;
        check_coords(coords)?;
        let gh = (h as f64 * NUFFT_OVERSAMPLING).round() as usize;
        let gw = (w as f64 * NUFFT_OVERSAMPLING).round() as usize;
        let beta = kb_beta(NUFFT_WIDTH, NUFFT_OVERSAMPLING);
        let taps = coords
            .iter()
            .map(|&[kx, ky]| {
                let (iy, wy) = axis_taps(ky, gh, beta);
                let (ix, wx) = axis_taps(kx, gw, beta);
                Taps { iy, ix, wy, wx }
            })
            .collect();
        let width = NUFFT_WIDTH as f64;
        let cy: Vec<f64> =
            (0..h).map(|i| kb_transform((i as f64 - (h / 2) as f64) / gh as f64, width, beta)).collect();
        let cx: Vec<f64> =
            (0..w).map(|j| kb_transform((j as f64 - (w / 2) as f64) / gw as f64, width, beta)).collect();
        let mut deapod = Vec::with_capacity(h * w);
        for &y in &cy {
            for &x in &cx {
                deapod.push(T::lit(1.0 / (y * x)));
            }
        }
        Ok(Self { h, w, gh, gw, taps, deapod, fft: Fft2Plan::new(gh, gw) })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn samples(&self) -> usize {
        self.taps.len()
    }

    fn offsets(&self) -> (usize, usize) {
        (self.gh / 2 - self.h / 2, self.gw / 2 - self.w / 2)
    }

    pub fn forward(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(x.len(), self.h * self.w, "image does not match the plan");
        let zero = Complex::new(T::zero(), T::zero());
        let (oy, ox) = self.offsets();
        let mut grid = vec![zero; self.gh * self.gw];
        for i in 0..self.h {
            let row = &mut grid[(i + oy) * self.gw + ox..(i + oy) * self.gw + ox + self.w];
            for (j, g) in row.iter_mut().enumerate() {
                *g = x[i * self.w + j] * self.deapod[i * self.w + j];
            }
        }
        self.fft.forward_unnormalized(&mut grid);
        self.taps
            .iter()
            .map(|t| {
                let mut acc = zero;
                for a in 0..TAPS {
                    let row = &grid[t.iy[a] * self.gw..(t.iy[a] + 1) * self.gw];
                    let mut line = zero;
                    for b in 0..TAPS {
                        line += row[t.ix[b]] * t.wx[b];
                    }
                    acc += line * t.wy[a];
                }
                acc
            })
            .collect()
    }

    /// Adjoint of [`NufftPlan::forward`], optionally pre-weighting each sample.
    pub fn adjoint(&self, y: &[Complex<T>], weights: Option<&[f64]>) -> Vec<Complex<T>> {
        assert_eq!(y.len(), self.taps.len(), "sample count does not match the plan");
        let zero = Complex::new(T::zero(), T::zero());
        let mut grid = vec![zero; self.gh * self.gw];
        for (s, (t, v)) in self.taps.iter().zip(y).enumerate() {
            let v = match weights {
                Some(wts) => *v * T::lit(wts[s]),
                None => *v,
            };
            for a in 0..TAPS {
                let va = v * t.wy[a];
                let row = &mut grid[t.iy[a] * self.gw..(t.iy[a] + 1) * self.gw];
                for b in 0..TAPS {
                    row[t.ix[b]] += va * t.wx[b];
                }
            }
        }
        self.fft.inverse_unnormalized(&mut grid);
        let (oy, ox) = self.offsets();
        let mut out = Vec::with_capacity(self.h * self.w);
        for i in 0..self.h {
            for j in 0..self.w {
                out.push(grid[(i + oy) * self.gw + ox + j] * self.deapod[i * self.w + j]);
            }
        }
        out
    }
}

pub fn nufft_forward<T: Real>(x: &ComplexImage<T>, coords: &[[f64; 2]]) -> Result<Vec<Complex<T>>> {
    x.ensure_finite()?;
    let plan = NufftPlan::new(x.height(), x.width(), coords)?;
    Ok(plan.forward(x.data()))
}

pub fn nufft_adjoint<T: Real>(
    samples: &[Complex<T>],
    coords: &[[f64; 2]],
    dcf: Option<&[f64]>,
    h: usize,
    w: usize,
) -> Result<ComplexImage<T>> {
    if samples.len() != coords.len() {
        return shape_err(format!("{} samples for {} trajectory points", samples.len(), coords.len()));
    }
    if let Some(d) = dcf {
        if d.len() != coords.len() {
            return shape_err(format!("{} weights for {} trajectory points", d.len(), coords.len()));
        }
    }
    let plan = NufftPlan::new(h, w, coords)?;
    ComplexImage::new(h, w, plan.adjoint(samples, dcf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::inner;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ndft(x: &ComplexImage<f64>, coords: &[[f64; 2]]) -> Vec<Complex<f64>> {
        let (h, w) = (x.height(), x.width());
        coords
            .iter()
            .map(|&[kx, ky]| {
                let mut acc = Complex::new(0.0, 0.0);
                for i in 0..h {
                    for j in 0..w {
                        let p = (j as f64 - (w / 2) as f64) * kx + (i as f64 - (h / 2) as f64) * ky;
                        acc += x.at(i, j) * Complex::from_polar(1.0, -2.0 * std::f64::consts::PI * p);
                    }
                }
                acc
            })
            .collect()
    }

    fn random_coords(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
        (0..n).map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]).collect()
    }

    #[test]
    fn bessel_i0_reference_values() {
        // Abramowitz & Stegun table 9.8
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008).abs() < 1e-13);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_44).abs() < 1e-10);
    }

    #[test]
    fn kernel_transform_matches_quadrature() {
        let beta = kb_beta(NUFFT_WIDTH, NUFFT_OVERSAMPLING);
        for f in [0.0, 0.05, 0.17, 0.25] {
            let n = 20_000;
            let ds = NUFFT_WIDTH as f64 / n as f64;
            let quad: f64 = (0..n)
                .map(|i| {
                    let s = -2.0 + (i as f64 + 0.5) * ds;
                    kb_kernel(s, 4.0, beta) * (2.0 * std::f64::consts::PI * s * f).cos() * ds
                })
                .sum();
            let exact = kb_transform(f, 4.0, beta);
            assert!((quad - exact).abs() / exact < 1e-6, "f={f}: {quad} vs {exact}");
        }
    }

    #[test]
    fn random_image_matches_ndft() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = ComplexImage::from_fn(16, 16, |_, _| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let coords = random_coords(256, &mut rng);
        let got = nufft_forward(&x, &coords).unwrap();
        let want = ndft(&x, &coords);
        let num: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = want.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
        assert!(num / den < 1e-3, "relative error {}", num / den);
    }

    #[test]
    fn centered_impulse_has_unit_magnitude_samples() {
        let mut x = ComplexImage::<f64>::zeros(16, 16);
        x.data_mut()[8 * 16 + 8] = Complex::new(1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = nufft_forward(&x, &random_coords(64, &mut rng)).unwrap();
        for z in y {
            assert!((z.norm() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn dc_sample_adjoint_is_constant() {
        let v = Complex::new(0.7, -0.2);
        let img = nufft_adjoint(&[v], &[[0.0, 0.0]], None, 12, 12).unwrap();
        let errs: Vec<f64> = img.data().iter().map(|z| (z - v).norm() / v.norm()).collect();
        let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        // Pointwise deviation peaks at the image edge, where kernel aliasing is largest.
        assert!(rms < 1e-3, "rms {rms}");
        assert!(errs.iter().all(|&e| e < 2e-3));
    }

    #[test]
    fn dot_test_odd_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (h, w) = (9, 14);
        let coords = random_coords(100, &mut rng);
        let plan = NufftPlan::<f64>::new(h, w, &coords).unwrap();
        let x: Vec<_> = (0..h * w).map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let y: Vec<_> = (0..100).map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let ax = plan.forward(&x);
        let aty = plan.adjoint(&y, None);
        let lhs = inner(&ax, &y);
        let rhs = inner(&x, &aty);
        assert!((lhs - rhs).norm() / lhs.norm() < 1e-10);
    }

    #[test]
    fn rejects_out_of_range_and_count_mismatch() {
        let x = ComplexImage::<f64>::zeros(8, 8);
        assert!(nufft_forward(&x, &[[0.5, 0.0]]).is_err());
        assert!(nufft_forward(&x, &[[0.0, -0.51]]).is_err());
        assert!(nufft_adjoint::<f64>(&[], &[[0.0, 0.0]], None, 8, 8).is_err());
        let zeros = nufft_forward(&x, &[[0.1, 0.2], [-0.3, 0.4]]).unwrap();
        assert!(zeros.iter().all(|z| z.norm() == 0.0));
    }
}
