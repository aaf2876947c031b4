use num_complex::Complex;

use super::{CoilSet, ComplexImage, Fft2Plan};
use crate::error::{shape_err, Result};
use crate::real::Real;

pub(crate) fn kept_lines(mask_col: &[bool]) -> Vec<usize> {
    mask_col.iter().enumerate().filter_map(|(ky, &k)| k.then_some(ky)).collect()
}

fn check_mask(mask_col: &[bool], h: usize) -> Result<Vec<usize>> {
    if mask_col.len() != h {
        return shape_err(format!("mask has {} lines, image has {h}", mask_col.len()));
    }
    let lines = kept_lines(mask_col);
    if lines.is_empty() {
        return shape_err("mask keeps no lines");
    }
    Ok(lines)
}

/// `M F (S_c x)` for every coil. Samples are ordered by coil, then kept ky
/// line (ascending), then kx.
pub fn apply_forward_cartesian<T: Real>(
    x: &ComplexImage<T>,
    coils: &CoilSet<T>,
    mask_col: &[bool],
) -> Result<Vec<Complex<T>>> {
    coils.check_image(x)?;
    x.ensure_finite()?;
    let (h, w) = (x.height(), x.width());
    let lines = check_mask(mask_col, h)?;
    let plan = Fft2Plan::new(h, w);
    Ok(forward_with_plan(&plan, x.data(), coils, &lines))
}

pub(crate) fn forward_with_plan<T: Real>(
    plan: &Fft2Plan<T>,
    x: &[Complex<T>],
    coils: &CoilSet<T>,
    lines: &[usize],
) -> Vec<Complex<T>> {
    let w = plan.width();
    let mut out = Vec::with_capacity(coils.count() * lines.len() * w);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); x.len()];
    for map in coils.maps() {
        for ((b, s), v) in buf.iter_mut().zip(map.data()).zip(x) {
            *b = *s * *v;
        }
        plan.forward(&mut buf);
        for &ky in lines {
            out.extend_from_slice(&buf[ky * w..(ky + 1) * w]);
        }
    }
    out
}

/// `sum_c conj(S_c) F^H M^T y_c`, the exact adjoint of
/// [`apply_forward_cartesian`].
pub fn apply_adjoint_cartesian<T: Real>(
    y: &[Complex<T>],
    coils: &CoilSet<T>,
    mask_col: &[bool],
) -> Result<ComplexImage<T>> {
    let (h, w) = (coils.height(), coils.width());
    let lines = check_mask(mask_col, h)?;
    let expected = coils.count() * lines.len() * w;
    if y.len() != expected {
        return shape_err(format!("got {} samples, expected {expected}", y.len()));
    }
    let plan = Fft2Plan::new(h, w);
    let data = adjoint_with_plan(&plan, y, coils, &lines);
    Ok(ComplexImage::from_fn(h, w, |i, j| data[i * w + j]))
}

pub(crate) fn adjoint_with_plan<T: Real>(
    plan: &Fft2Plan<T>,
    y: &[Complex<T>],
    coils: &CoilSet<T>,
    lines: &[usize],
) -> Vec<Complex<T>> {
    let (h, w) = (plan.height(), plan.width());
    let zero = Complex::new(T::zero(), T::zero());
    let mut out = vec![zero; h * w];
    let mut buf = vec![zero; h * w];
    let per_coil = lines.len() * w;
    for (c, map) in coils.maps().iter().enumerate() {
        buf.iter_mut().for_each(|z| *z = zero);
        let yc = &y[c * per_coil..(c + 1) * per_coil];
        for (n, &ky) in lines.iter().enumerate() {
            buf[ky * w..(ky + 1) * w].copy_from_slice(&yc[n * w..(n + 1) * w]);
        }
        plan.inverse(&mut buf);
        for ((o, s), v) in out.iter_mut().zip(map.data()).zip(&buf) {
            *o += s.conj() * *v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::{fft2c, ifft2c, inner};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng) -> Complex<f64> {
        Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn random_coils(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> CoilSet<f64> {
        let maps = (0..c).map(|_| ComplexImage::from_fn(h, w, |_, _| rand_c(rng))).collect();
        CoilSet::normalized(maps).unwrap()
    }

    fn half_mask(h: usize) -> Vec<bool> {
        (0..h).map(|ky| ky % 2 == 0 || ky == h / 2).collect()
    }

    #[test]
    fn single_uniform_coil_full_mask_is_plain_fft() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = ComplexImage::from_fn(8, 8, |_, _| rand_c(&mut rng));
        let y = apply_forward_cartesian(&x, &CoilSet::uniform(8, 8), &[true; 8]).unwrap();
        assert_eq!(y, fft2c(&x).unwrap().into_data());
        let back = apply_adjoint_cartesian(&y, &CoilSet::uniform(8, 8), &[true; 8]).unwrap();
        assert_eq!(back, ifft2c(&ComplexImage::new(8, 8, y).unwrap()).unwrap());
    }

    #[test]
    fn zero_in_zero_out() {
        let coils = CoilSet::<f64>::uniform(8, 8);
        let y = apply_forward_cartesian(&ComplexImage::zeros(8, 8), &coils, &half_mask(8)).unwrap();
        assert!(y.iter().all(|z| z.norm() == 0.0));
        let x = apply_adjoint_cartesian(&y, &coils, &half_mask(8)).unwrap();
        assert!(x.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn matches_masked_dft_composition_with_two_coils() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = ComplexImage::from_fn(8, 8, |_, _| rand_c(&mut rng));
        let coils = random_coils(8, 8, 2, &mut rng);
        let mask = half_mask(8);
        let y = apply_forward_cartesian(&x, &coils, &mask).unwrap();
        let mut want = Vec::new();
        for map in coils.maps() {
            let sx = ComplexImage::from_fn(8, 8, |i, j| map.at(i, j) * x.at(i, j));
            let k = fft2c(&sx).unwrap();
            for (ky, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                want.extend((0..8).map(|kx| k.at(ky, kx)));
            }
        }
        let err: f64 = y.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn dot_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let coils = random_coils(12, 10, 3, &mut rng);
        let mask = half_mask(12);
        let x = ComplexImage::from_fn(12, 10, |_, _| rand_c(&mut rng));
        let ax = apply_forward_cartesian(&x, &coils, &mask).unwrap();
        let y: Vec<_> = (0..ax.len()).map(|_| rand_c(&mut rng)).collect();
        let aty = apply_adjoint_cartesian(&y, &coils, &mask).unwrap();
        let lhs = inner(&ax, &y);
        let rhs = inner(x.data(), aty.data());
        let norm_ax = ax.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let norm_y = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((lhs - rhs).norm() / (norm_ax * norm_y) < 1e-10);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let coils = CoilSet::<f64>::uniform(8, 8);
        assert!(apply_forward_cartesian(&ComplexImage::zeros(8, 6), &coils, &[true; 8]).is_err());
        assert!(apply_forward_cartesian(&ComplexImage::zeros(8, 8), &coils, &[true; 7]).is_err());
        assert!(apply_forward_cartesian(&ComplexImage::zeros(8, 8), &coils, &[false; 8]).is_err());
        assert!(apply_adjoint_cartesian(&[Complex::new(0.0, 0.0); 5], &coils, &[true; 8]).is_err());
    }
}
