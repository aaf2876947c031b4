//! Analytic beating-heart phantom with known motion, simulated receiver
//! coils, retrospective acquisition, and the dataset container.
//!
//! Geometry is in pixel units: pixel `(i, j)` covers `[j, j+1) x [i, i+1)`
//! in `(x, y)`. Every frame is an exact warp of one reference image: the
//! heart (a myocardial annulus around a blood pool) contracts radially,
//! with the inner radius following `r_in(t) = r_in0 * (1 - alpha * s(t))`
//! and `s(tau) = (1 - cos(2 pi cycles tau)) / 2`, `tau = t / T`. Tissue
//! texture and phase are attached to the reference, so they move with it.

mod dataset;

pub use dataset::{load_dataset, save_dataset, simulate, GroundTruth, KtDataset, Provenance, SamplingConfig};

use std::f64::consts::PI;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kspace::{check_dims, CoilSet, ComplexImage, DynamicImage};
use crate::nets::DvfField;

/// Sub-pixel samples per axis when rendering.
pub const SUPERSAMPLING: usize = 4;

/// ROI dilation beyond the heart's outer radius, in pixels.
pub const ROI_DILATION: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heart {
    pub center: [f64; 2],
    pub r_out: f64,
    /// Inner radius at rest (`s = 0`).
    pub r_in0: f64,
    pub myocardium: f64,
    pub blood: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Motion {
    /// Fractional inner-radius contraction at peak systole, in `[0, 1)`.
    pub alpha: f64,
    /// Cardiac cycles across the sequence.
    pub cycles: f64,
}

/// Smooth spatial phase: a linear ramp (radians across the field of view
/// along x and y) plus a radial quadratic term (radians at the corners).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub ramp: [f64; 2],
    pub curvature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub h: usize,
    pub w: usize,
    pub frames: usize,
    pub background: Ellipse,
    pub heart: Heart,
    pub motion: Motion,
    #[serde(default)]
    pub distractors: Vec<Disk>,
    #[serde(default)]
    pub phase: Option<Phase>,
    /// Relative amplitude of the myocardial texture.
    #[serde(default)]
    pub texture: f64,
    /// Width of the tanh edge profile in pixels; 0 gives hard edges.
    #[serde(default)]
    pub edge: f64,
}

impl PhantomSpec {
    /// Default geometry scaled to an `h x w` field of view.
    pub fn desk(h: usize, w: usize, frames: usize) -> Self {
        let (hf, wf) = (h as f64, w as f64);
        let m = hf.min(wf);
        Self {
            h,
            w,
            frames,
            background: Ellipse { center: [0.5 * wf, 0.5 * hf], axes: [0.42 * wf, 0.36 * hf], intensity: 0.35 },
            heart: Heart { center: [0.53 * wf, 0.47 * hf], r_out: 0.19 * m, r_in0: 0.125 * m, myocardium: 0.55, blood: 1.0 },
            motion: Motion { alpha: 0.3, cycles: 1.0 },
            distractors: vec![
                Disk { center: [0.25 * wf, 0.7 * hf], radius: 0.06 * m, intensity: 0.8 },
                Disk { center: [0.74 * wf, 0.72 * hf], radius: 0.045 * m, intensity: 0.25 },
            ],
            phase: Some(Phase { ramp: [1.0, -0.6], curvature: 0.8 }),
            texture: 0.15,
            edge: 1.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(self.h, self.w)?;
        if self.frames == 0 {
            return invalid("phantom needs at least one frame");
        }
        let hr = &self.heart;
        if !(hr.r_in0 > 0.0 && hr.r_in0 < hr.r_out) {
            return invalid(format!("heart radii need 0 < r_in0 < r_out, got {} and {}", hr.r_in0, hr.r_out));
        }
        let (wf, hf) = (self.w as f64, self.h as f64);
        if hr.center[0] - hr.r_out < 0.0
            || hr.center[0] + hr.r_out > wf
            || hr.center[1] - hr.r_out < 0.0
            || hr.center[1] + hr.r_out > hf
        {
            return invalid("heart extends beyond the field of view");
        }
        let m = &self.motion;
        if !(0.0..1.0).contains(&m.alpha) || !m.cycles.is_finite() {
            return invalid(format!("contraction amplitude {} outside [0, 1)", m.alpha));
        }
        let b = &self.background;
        if b.axes.iter().any(|a| !(*a > 0.0)) {
            return invalid("background axes must be positive");
        }
        for d in &self.distractors {
            if !(d.radius > 0.0) {
                return invalid("distractor radius must be positive");
            }
        }
        let finite = [b.intensity, hr.myocardium, hr.blood, self.texture, self.edge]
            .into_iter()
            .chain(self.distractors.iter().map(|d| d.intensity))
            .all(f64::is_finite);
        if !finite || self.edge < 0.0 {
            return invalid("phantom intensities, texture, and edge width must be finite (edge >= 0)");
        }
        Ok(())
    }

    /// Systole profile `s(t)` in `[0, 1]`.
    pub fn systole(&self, t: usize) -> f64 {
        let tau = t as f64 / self.frames as f64;
        0.5 * (1.0 - (2.0 * PI * self.motion.cycles * tau).cos())
    }

    pub fn inner_radius(&self, t: usize) -> f64 {
        self.heart.r_in0 * (1.0 - self.motion.alpha * self.systole(t))
    }

    /// Maps a frame-`t` position to the reference configuration.
    pub fn to_reference(&self, t: usize, p: [f64; 2]) -> [f64; 2] {
        let hr = &self.heart;
        let (dx, dy) = (p[0] - hr.center[0], p[1] - hr.center[1]);
        let r = dx.hypot(dy);
        if r >= hr.r_out || r == 0.0 {
            return p;
        }
        let rin = self.inner_radius(t);
        let rho = if r <= rin { r * hr.r_in0 / rin } else { hr.r_in0 + (r - rin) * (hr.r_out - hr.r_in0) / (hr.r_out - rin) };
        let k = rho / r;
        [hr.center[0] + dx * k, hr.center[1] + dy * k]
    }

    /// Maps a reference position into frame `t` (inverse of
    /// [`PhantomSpec::to_reference`]).
    pub fn from_reference(&self, t: usize, q: [f64; 2]) -> [f64; 2] {
        let hr = &self.heart;
        let (dx, dy) = (q[0] - hr.center[0], q[1] - hr.center[1]);
        let rho = dx.hypot(dy);
        if rho >= hr.r_out || rho == 0.0 {
            return q;
        }
        let rin = self.inner_radius(t);
        let r = if rho <= hr.r_in0 { rho * rin / hr.r_in0 } else { rin + (rho - hr.r_in0) * (hr.r_out - rin) / (hr.r_out - hr.r_in0) };
        let k = r / rho;
        [hr.center[0] + dx * k, hr.center[1] + dy * k]
    }

    fn step(&self, d: f64) -> f64 {
        if self.edge == 0.0 {
            if d > 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            0.5 * (1.0 + (d / self.edge).tanh())
        }
    }

    /// Reference-configuration intensity at a continuous position.
    pub fn reference_value(&self, q: [f64; 2]) -> Complex<f64> {
        let b = &self.background;
        let (ex, ey) = ((q[0] - b.center[0]) / b.axes[0], (q[1] - b.center[1]) / b.axes[1]);
        let mut v = b.intensity * self.step((1.0 - ex.hypot(ey)) * b.axes[0].min(b.axes[1]));
        for d in &self.distractors {
            let inside = self.step(d.radius - (q[0] - d.center[0]).hypot(q[1] - d.center[1]));
            v = v * (1.0 - inside) + d.intensity * inside;
        }
        let hr = &self.heart;
        let (dx, dy) = (q[0] - hr.center[0], q[1] - hr.center[1]);
        let rho = dx.hypot(dy);
        let heart = self.step(hr.r_out - rho);
        let blood = self.step(hr.r_in0 - rho);
        let band = ((rho - hr.r_in0) / (hr.r_out - hr.r_in0)).clamp(0.0, 1.0);
        let texture = 1.0 + self.texture * (4.0 * dy.atan2(dx)).cos() * (PI * band).cos();
        v = v * (1.0 - heart) + hr.myocardium * texture * (heart - blood) + hr.blood * blood;
        let phase = self.phase.as_ref().map_or(0.0, |ph| {
            let (u, w) = (q[0] / self.w as f64 - 0.5, q[1] / self.h as f64 - 0.5);
            ph.ramp[0] * u + ph.ramp[1] * w + ph.curvature * (u * u + w * w) * 2.0
        });
        Complex::from_polar(v, phase)
    }

    /// Frame `t`, supersampled [`SUPERSAMPLING`] times per axis.
    pub fn render(&self, t: usize) -> ComplexImage<f64> {
        let n = SUPERSAMPLING;
        let inv = 1.0 / (n * n) as f64;
        ComplexImage::from_fn(self.h, self.w, |i, j| {
            let mut acc = Complex::new(0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    let p = [j as f64 + (b as f64 + 0.5) / n as f64, i as f64 + (a as f64 + 0.5) / n as f64];
                    acc += self.reference_value(self.to_reference(t, p));
                }
            }
            acc * inv
        })
    }

    /// Displacement `to_reference(p) - p` at pixel centers, in normalized
    /// field-of-view units.
    pub fn dvf(&self, t: usize) -> DvfField<f64> {
        let mut u = DvfField::zeros(self.h, self.w);
        let hw = self.h * self.w;
        for i in 0..self.h {
            for j in 0..self.w {
                let p = [j as f64 + 0.5, i as f64 + 0.5];
                let q = self.to_reference(t, p);
                u.data[i * self.w + j] = (q[0] - p[0]) / self.w as f64;
                u.data[hw + i * self.w + j] = (q[1] - p[1]) / self.h as f64;
            }
        }
        u
    }

    /// Heart disk dilated by [`ROI_DILATION`] pixels, tested at pixel
    /// centers.
    pub fn roi(&self) -> Vec<bool> {
        let hr = &self.heart;
        let lim = hr.r_out + ROI_DILATION;
        (0..self.h * self.w)
            .map(|s| {
                let p = [(s % self.w) as f64 + 0.5, (s / self.w) as f64 + 0.5];
                (p[0] - hr.center[0]).hypot(p[1] - hr.center[1]) <= lim
            })
            .collect()
    }

    /// Pixels inside the myocardial annulus at frame `t`.
    pub fn annulus(&self, t: usize) -> Vec<bool> {
        let hr = &self.heart;
        let rin = self.inner_radius(t);
        (0..self.h * self.w)
            .map(|s| {
                let p = [(s % self.w) as f64 + 0.5, (s / self.w) as f64 + 0.5];
                let r = (p[0] - hr.center[0]).hypot(p[1] - hr.center[1]);
                r > rin && r < hr.r_out
            })
            .collect()
    }
}

/// Ground truth of a phantom: frames, ROI, and the analytic displacement
/// fields (frame to reference).
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub images: DynamicImage<f64>,
    pub roi: Vec<bool>,
    pub dvfs: Vec<DvfField<f64>>,
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let images = DynamicImage::new((0..spec.frames).map(|t| spec.render(t)).collect())?;
    Ok(Phantom { images, roi: spec.roi(), dvfs: (0..spec.frames).map(|t| spec.dvf(t)).collect() })
}

/// Gaussian-profile sensitivities centered on points evenly spaced just
/// outside the field of view, each with a random linear phase, normalized
/// to unit sum of squares. A single coil is exactly uniform.
pub fn make_coils(h: usize, w: usize, count: usize, seed: u64) -> Result<CoilSet<f64>> {
    check_dims(h, w)?;
    if count == 0 {
        return invalid("at least one coil is required");
    }
    if count == 1 {
        return Ok(CoilSet::uniform(h, w));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let sigma = 0.45 * hf.max(wf);
    let offset = rng.random_range(0.0..2.0 * PI / count as f64);
    let maps = (0..count)
        .map(|k| {
            let theta = offset + 2.0 * PI * k as f64 / count as f64;
            let c = [0.5 * wf + 0.55 * wf * theta.cos(), 0.5 * hf + 0.55 * hf * theta.sin()];
            let (a, b, p0) = (rng.random_range(-PI / 2.0..PI / 2.0), rng.random_range(-PI / 2.0..PI / 2.0), rng.random_range(-PI..PI));
            ComplexImage::from_fn(h, w, |i, j| {
                let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
                let d2 = (x - c[0]).powi(2) + (y - c[1]).powi(2);
                Complex::from_polar((-d2 / (2.0 * sigma * sigma)).exp(), a * x / wf + b * y / hf + p0)
            })
        })
        .collect();
    CoilSet::normalized(maps)
}

#[cfg(test)]
mod tests;
