use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cartesian::{adjoint_with_plan, forward_with_plan, kept_lines};
use super::fft::Fft2Plan;
use super::nufft::NufftPlan;
use super::{CartesianMask, CoilSet, ComplexImage, RadialTrajectory};
use crate::error::{invalid, shape_err, Result};
use crate::real::Real;

/// Sampling descriptor for a whole k-t acquisition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    Cartesian(CartesianMask),
    Radial(RadialTrajectory),
}

impl Sampling {
    pub fn frames(&self) -> usize {
        match self {
            Sampling::Cartesian(m) => m.frames(),
            Sampling::Radial(r) => r.frames.len(),
        }
    }

    /// Samples acquired per coil in frame `t` for an image of width `w`.
    pub fn samples_per_coil(&self, t: usize, w: usize) -> usize {
        match self {
            Sampling::Cartesian(m) => m.kept_in_frame(t) * w,
            Sampling::Radial(r) => r.frames[t].samples(),
        }
    }

    /// Nominal acceleration: Cartesian counts lines; radial compares the
    /// spoke count against the `pi/2 * N` spokes of a Nyquist-sampled disk.
    pub fn nominal_af(&self, h: usize, w: usize) -> f64 {
        match self {
            Sampling::Cartesian(m) => m.empirical_af(),
            Sampling::Radial(r) => {
                std::f64::consts::FRAC_PI_2 * h.max(w) as f64 / r.spokes_per_frame().max(1) as f64
            }
        }
    }

    pub fn summary(&self, h: usize, w: usize) -> String {
        match self {
            Sampling::Cartesian(m) => {
                let per_frame: Vec<usize> = (0..m.frames()).map(|t| m.kept_in_frame(t)).collect();
                let min = per_frame.iter().min().copied().unwrap_or(0);
                let max = per_frame.iter().max().copied().unwrap_or(0);
                let lines = if min == max { format!("{min}") } else { format!("{min}-{max}") };
                format!(
                    "cartesian: {} frames, {} lines/frame of {}, nominal AF {:.2}",
                    m.frames(),
                    lines,
                    h,
                    self.nominal_af(h, w)
                )
            }
            Sampling::Radial(r) => format!(
                "radial: {} frames, {} spokes/frame, readout {}, nominal AF {:.2}",
                r.frames.len(),
                r.spokes_per_frame(),
                r.readout,
                self.nominal_af(h, w)
            ),
        }
    }
}

#[derive(Debug)]
enum OpKind<T: Real> {
    Cartesian { lines: Vec<usize>, fft: Fft2Plan<T> },
    Radial { plan: NufftPlan<T>, scale: T, dcf: Vec<f64> },
}

/// Acquisition operator `A_t = M_t F S_c` for one frame.
///
/// Radial frames use the gridding NUFFT scaled by `1/sqrt(h w)` so that
/// radial and Cartesian samples live on the same (orthonormal) scale.
#[derive(Debug)]
pub struct FrameOperator<T: Real> {
    h: usize,
    w: usize,
    coils: Arc<CoilSet<T>>,
    kind: OpKind<T>,
}

impl<T: Real> FrameOperator<T> {
    pub fn new(sampling: &Sampling, t: usize, coils: Arc<CoilSet<T>>) -> Result<Self> {
        if t >= sampling.frames() {
            return invalid(format!("frame {t} out of range for {} frames", sampling.frames()));
        }
        let (h, w) = (coils.height(), coils.width());
        let kind = match sampling {
            Sampling::Cartesian(m) => {
                if m.lines() != h {
                    return shape_err(format!("mask has {} lines, coils are {h} rows", m.lines()));
                }
                OpKind::Cartesian { lines: kept_lines(m.column(t)), fft: Fft2Plan::new(h, w) }
            }
            Sampling::Radial(r) => {
                let frame = &r.frames[t];
                OpKind::Radial {
                    plan: NufftPlan::new(h, w, &frame.coords)?,
                    scale: T::lit(1.0 / ((h * w) as f64).sqrt()),
                    dcf: frame.dcf.clone(),
                }
            }
        };
        Ok(Self { h, w, coils, kind })
    }

    pub fn for_all_frames(sampling: &Sampling, coils: &CoilSet<T>) -> Result<Vec<Self>> {
        let coils = Arc::new(coils.clone());
        (0..sampling.frames()).map(|t| Self::new(sampling, t, coils.clone())).collect()
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn coils(&self) -> &CoilSet<T> {
        &self.coils
    }

    pub fn samples_per_coil(&self) -> usize {
        match &self.kind {
            OpKind::Cartesian { lines, .. } => lines.len() * self.w,
            OpKind::Radial { plan, .. } => plan.samples(),
        }
    }

    /// `M F z` for one coil image `z = S_c x`.
    pub fn sample_coil_image(&self, z: &[Complex<T>]) -> Vec<Complex<T>> {
        match &self.kind {
            OpKind::Cartesian { lines, fft } => {
                let mut buf = z.to_vec();
                fft.forward(&mut buf);
                let mut out = Vec::with_capacity(lines.len() * self.w);
                for &ky in lines {
                    out.extend_from_slice(&buf[ky * self.w..(ky + 1) * self.w]);
                }
                out
            }
            OpKind::Radial { plan, scale, .. } => {
                let mut out = plan.forward(z);
                out.iter_mut().for_each(|v| *v = *v * *scale);
                out
            }
        }
    }

    /// Adjoint of [`FrameOperator::sample_coil_image`].
    pub fn sample_coil_image_adjoint(&self, y: &[Complex<T>]) -> Vec<Complex<T>> {
        match &self.kind {
            OpKind::Cartesian { lines, fft } => {
                let zero = Complex::new(T::zero(), T::zero());
                let mut buf = vec![zero; self.h * self.w];
                for (n, &ky) in lines.iter().enumerate() {
                    buf[ky * self.w..(ky + 1) * self.w].copy_from_slice(&y[n * self.w..(n + 1) * self.w]);
                }
                fft.inverse(&mut buf);
                buf
            }
            OpKind::Radial { plan, scale, .. } => {
                let mut out = plan.adjoint(y, None);
                out.iter_mut().for_each(|v| *v = *v * *scale);
                out
            }
        }
    }

    /// Coil-major samples of one frame.
    pub fn forward(&self, x: &ComplexImage<T>) -> Result<Vec<Complex<T>>> {
        self.coils.check_image(x)?;
        match &self.kind {
            OpKind::Cartesian { lines, fft } => Ok(forward_with_plan(fft, x.data(), &self.coils, lines)),
            OpKind::Radial { .. } => {
                let mut out = Vec::with_capacity(self.coils.count() * self.samples_per_coil());
                for map in self.coils.maps() {
                    let z: Vec<_> = map.data().iter().zip(x.data()).map(|(s, v)| *s * *v).collect();
                    out.extend(self.sample_coil_image(&z));
                }
                Ok(out)
            }
        }
    }

    pub fn adjoint(&self, y: &[Complex<T>]) -> Result<ComplexImage<T>> {
        self.check_samples(y)?;
        let data = match &self.kind {
            OpKind::Cartesian { lines, fft } => adjoint_with_plan(fft, y, &self.coils, lines),
            OpKind::Radial { .. } => self.combine(y, |yc| self.sample_coil_image_adjoint(yc)),
        };
        ComplexImage::new(self.h, self.w, data)
    }

    /// Zero-filled reconstruction: the adjoint for Cartesian frames, a
    /// density-compensated gridding reconstruction for radial frames.
    pub fn zero_filled(&self, y: &[Complex<T>]) -> Result<ComplexImage<T>> {
        match &self.kind {
            OpKind::Cartesian { .. } => self.adjoint(y),
            OpKind::Radial { plan, dcf, .. } => {
                self.check_samples(y)?;
                let gain = T::lit(((self.h * self.w) as f64).sqrt());
                let data = self.combine(y, |yc| {
                    let mut img = plan.adjoint(yc, Some(dcf));
                    img.iter_mut().for_each(|v| *v = *v * gain);
                    img
                });
                ComplexImage::new(self.h, self.w, data)
            }
        }
    }

    fn check_samples(&self, y: &[Complex<T>]) -> Result<()> {
        let want = self.coils.count() * self.samples_per_coil();
        if y.len() != want {
            return shape_err(format!("got {} samples, frame operator expects {want}", y.len()));
        }
        Ok(())
    }

    fn combine(&self, y: &[Complex<T>], per_coil: impl Fn(&[Complex<T>]) -> Vec<Complex<T>>) -> Vec<Complex<T>> {
        let n = self.samples_per_coil();
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.h * self.w];
        for (c, map) in self.coils.maps().iter().enumerate() {
            let img = per_coil(&y[c * n..(c + 1) * n]);
            for ((o, s), v) in out.iter_mut().zip(map.data()).zip(&img) {
                *o += s.conj() * *v;
            }
        }
        out
    }
}

/// Simulates `y_tc = M_t F S_c x_t + n_tc` with circular complex Gaussian
/// noise of standard deviation `noise_sigma` (`E|n|^2 = sigma^2`).
pub fn apply_forward_multi<T: Real, R: Rng>(
    frames: &[ComplexImage<T>],
    coils: &CoilSet<T>,
    sampling: &Sampling,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Vec<Vec<Complex<T>>>> {
    if frames.len() != sampling.frames() {
        return shape_err(format!("{} frames but sampling describes {}", frames.len(), sampling.frames()));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return invalid("noise_sigma must be finite and non-negative");
    }
    let ops = FrameOperator::for_all_frames(sampling, coils)?;
    let per_axis = noise_sigma / std::f64::consts::SQRT_2;
    let clean: Vec<Vec<Complex<T>>> =
        frames.par_iter().zip(&ops).map(|(x, op)| op.forward(x)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(frames.len());
    for mut y in clean {
        if noise_sigma > 0.0 {
            for v in y.iter_mut() {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                *v += Complex::new(T::lit(re * per_axis), T::lit(im * per_axis));
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Per-frame zero-filled baseline for a whole acquisition.
pub fn zero_filled<T: Real>(
    samples: &[Vec<Complex<T>>],
    coils: &CoilSet<T>,
    sampling: &Sampling,
) -> Result<Vec<ComplexImage<T>>> {
    if samples.len() != sampling.frames() {
        return shape_err("sample frames do not match sampling frames");
    }
    let ops = FrameOperator::for_all_frames(sampling, coils)?;
    samples.par_iter().zip(&ops).map(|(y, op)| op.zero_filled(y)).collect()
}
