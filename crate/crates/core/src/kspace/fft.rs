use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::ComplexImage;
use crate::error::Result;
use crate::real::Real;

/// Reusable centered 2D FFT of a fixed `h x w` size.
///
/// The centered convention places DC at `(h/2, w/2)`: forward is
/// `fftshift(fft(ifftshift(x)))`. The orthonormal variants scale by
/// `1/sqrt(h w)` in both directions.
pub struct Fft2Plan<T: Real> {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Fft2Plan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2Plan").field("h", &self.h).field("w", &self.w).finish()
    }
}

impl<T: Real> Fft2Plan<T> {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, false);
        self.scale(buf);
    }

    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, true);
        self.scale(buf);
    }

    /// `Y[m] = sum_q x[q] exp(-2 pi i (m - h/2)(q - h/2) / h)` per axis.
    pub fn forward_unnormalized(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, false);
    }

    pub fn inverse_unnormalized(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, true);
    }

    fn scale(&self, buf: &mut [Complex<T>]) {
        let s = T::lit(1.0 / ((self.h * self.w) as f64).sqrt());
        for z in buf.iter_mut() {
            *z = *z * s;
        }
    }

    fn transform(&self, buf: &mut [Complex<T>], inverse: bool) {
        let (h, w) = (self.h, self.w);
        assert_eq!(buf.len(), h * w, "buffer does not match the planned size");
        let mut tmp = vec![Complex::new(T::zero(), T::zero()); h * w];
        roll2(buf, &mut tmp, h, w, h / 2, w / 2);
        let (rows, cols) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        rows.process(&mut tmp);
        transpose(&tmp, buf, h, w);
        cols.process(buf);
        transpose(buf, &mut tmp, w, h);
        roll2(&tmp, buf, h, w, h - h / 2, w - w / 2);
    }
}

/// `dst[i][j] = src[(i + di) % h][(j + dj) % w]`.
fn roll2<T: Copy>(src: &[T], dst: &mut [T], h: usize, w: usize, di: usize, dj: usize) {
    for i in 0..h {
        let si = (i + di) % h;
        let src_row = &src[si * w..(si + 1) * w];
        let dst_row = &mut dst[i * w..(i + 1) * w];
        let split = dj % w;
        dst_row[..w - split].copy_from_slice(&src_row[split..]);
        dst_row[w - split..].copy_from_slice(&src_row[..split]);
    }
}

/// Transposes an `h x w` row-major matrix into `dst` (`w x h`).
fn transpose<T: Copy>(src: &[T], dst: &mut [T], h: usize, w: usize) {
    const B: usize = 16;
    for ib in (0..h).step_by(B) {
        for jb in (0..w).step_by(B) {
            for i in ib..(ib + B).min(h) {
                for j in jb..(jb + B).min(w) {
                    dst[j * h + i] = src[i * w + j];
                }
            }
        }
    }
}

/// Centered orthonormal 2D DFT.
pub fn fft2c<T: Real>(img: &ComplexImage<T>) -> Result<ComplexImage<T>> {
    img.ensure_finite()?;
    let plan = Fft2Plan::new(img.height(), img.width());
    let mut out = img.clone();
    plan.forward(out.data_mut());
    Ok(out)
}

/// Inverse of [`fft2c`].
pub fn ifft2c<T: Real>(img: &ComplexImage<T>) -> Result<ComplexImage<T>> {
    img.ensure_finite()?;
    let plan = Fft2Plan::new(img.height(), img.width());
    let mut out = img.clone();
    plan.inverse(out.data_mut());
    Ok(out)
}
