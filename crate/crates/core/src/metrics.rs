//! Image-quality metrics on magnitude sequences: PSNR, SSIM, and
//! ROI-restricted nRMSE.
//!
//! The `*_real` functions work on arbitrary real sequences. The complex
//! entry points take magnitudes, scale both sequences by a statistic of the
//! reference (its maximum by default), and report against a unit peak.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::kspace::DynamicImage;
use crate::nets::DvfField;
use crate::real::Real;

/// SSIM Gaussian window: 11 taps, sigma 1.5.
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Real-valued image sequence, frame-major, each frame row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RealSeq {
    pub h: usize,
    pub w: usize,
    pub frames: Vec<Vec<f64>>,
}

impl RealSeq {
    pub fn new(h: usize, w: usize, frames: Vec<Vec<f64>>) -> Result<Self> {
        if frames.is_empty() || frames.iter().any(|f| f.len() != h * w) {
            return shape_err(format!("expected a non-empty sequence of {h}x{w} frames"));
        }
        Ok(Self { h, w, frames })
    }

    pub fn magnitude<T: Real>(x: &DynamicImage<T>) -> Self {
        Self { h: x.height(), w: x.width(), frames: x.frames().iter().map(|f| f.magnitude()).collect() }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { h: self.h, w: self.w, frames: self.frames.iter().map(|f| f.iter().map(|v| v * k).collect()).collect() }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().flatten().copied()
    }

    pub fn max(&self) -> f64 {
        self.values().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Linear-interpolated percentile, `p` in `[0, 100]`.
    pub fn percentile(&self, p: f64) -> f64 {
        let mut v: Vec<f64> = self.values().collect();
        v.sort_by(f64::total_cmp);
        let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    }

    fn check_pair(&self, other: &Self) -> Result<()> {
        if self.h != other.h || self.w != other.w || self.frames.len() != other.frames.len() {
            return shape_err(format!(
                "sequences differ: {}x{}x{} vs {}x{}x{}",
                self.frames.len(),
                self.h,
                self.w,
                other.frames.len(),
                other.h,
                other.w
            ));
        }
        Ok(())
    }
}

/// Reference statistic both sequences are divided by before scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    RefMax,
    RefPercentile { p: f64 },
}

impl Normalization {
    pub fn scale(&self, reference: &RealSeq) -> f64 {
        match self {
            Self::RefMax => reference.max(),
            Self::RefPercentile { p } => reference.percentile(*p),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::RefMax => "ref_max".into(),
            Self::RefPercentile { p } => format!("ref_p{p}"),
        }
    }
}

/// `10 log10(peak^2 / MSE)` over the whole sequence; identical inputs give
/// `+inf`.
pub fn psnr_real(reference: &RealSeq, test: &RealSeq, peak: f64) -> Result<f64> {
    reference.check_pair(test)?;
    if !(peak > 0.0) {
        return invalid("PSNR peak must be positive");
    }
    let n = reference.h * reference.w * reference.frames.len();
    let sse: f64 = reference.values().zip(test.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / (sse / n as f64)).log10())
}

fn gaussian_taps() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut k = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - SSIM_RADIUS as f64;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable filter keeping only fully supported windows.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..n).map(|a| k[a] * x[i * w + j + a]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..n).map(|a| k[a] * rows[(i + a) * ow + j]).sum();
        }
    }
    out
}

fn ssim_frame(x: &[f64], y: &[f64], h: usize, w: usize, data_range: f64) -> f64 {
    let k = gaussian_taps();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let ux = filter_valid(x, h, w, &k);
    let uy = filter_valid(y, h, w, &k);
    let uxx = filter_valid(&prod(x, x), h, w, &k);
    let uyy = filter_valid(&prod(y, y), h, w, &k);
    let uxy = filter_valid(&prod(x, y), h, w, &k);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let total: f64 = (0..ux.len())
        .map(|i| {
            let (mx, my) = (ux[i], uy[i]);
            let (vx, vy, cxy) = (uxx[i] - mx * mx, uyy[i] - my * my, uxy[i] - mx * my);
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    total / ux.len() as f64
}

/// Mean local SSIM per frame (11x11 Gaussian window, sigma 1.5), averaged
/// over frames.
pub fn ssim_real(reference: &RealSeq, test: &RealSeq, data_range: f64) -> Result<f64> {
    reference.check_pair(test)?;
    let n = 2 * SSIM_RADIUS + 1;
    if reference.h < n || reference.w < n {
        return shape_err(format!("SSIM needs frames of at least {n}x{n}"));
    }
    if !(data_range > 0.0) {
        return invalid("SSIM data range must be positive");
    }
    let sum: f64 = reference
        .frames
        .iter()
        .zip(&test.frames)
        .map(|(x, y)| ssim_frame(x, y, reference.h, reference.w, data_range))
        .sum();
    Ok(sum / reference.frames.len() as f64)
}

/// Pooled RMS of `test - ref` over ROI pixels of all frames, divided by the
/// RMS of `ref` over the same support.
pub fn nrmse_real(reference: &RealSeq, test: &RealSeq, roi: &[bool]) -> Result<f64> {
    reference.check_pair(test)?;
    if roi.len() != reference.h * reference.w {
        return shape_err("ROI mask does not match the frame size");
    }
    if !roi.iter().any(|&b| b) {
        return invalid("ROI is empty");
    }
    let (mut err, mut norm) = (0.0, 0.0);
    for (x, y) in reference.frames.iter().zip(&test.frames) {
        for k in (0..roi.len()).filter(|&k| roi[k]) {
            err += (y[k] - x[k]).powi(2);
            norm += x[k] * x[k];
        }
    }
    if norm == 0.0 {
        return invalid("reference is zero inside the ROI");
    }
    Ok((err / norm).sqrt())
}

fn normalized<T: Real>(
    reference: &DynamicImage<T>,
    test: &DynamicImage<T>,
    norm: Normalization,
) -> Result<(RealSeq, RealSeq)> {
    if !reference.same_shape(test) {
        return shape_err("reference and test sequences differ in shape");
    }
    let (r, t) = (RealSeq::magnitude(reference), RealSeq::magnitude(test));
    let s = norm.scale(&r);
    if !(s > 0.0) || !s.is_finite() {
        return invalid("reference normalization statistic must be positive");
    }
    Ok((r.scaled(1.0 / s), t.scaled(1.0 / s)))
}

/// PSNR of magnitude images normalized by the reference maximum.
pub fn psnr<T: Real>(reference: &DynamicImage<T>, test: &DynamicImage<T>) -> Result<f64> {
    let (r, t) = normalized(reference, test, Normalization::RefMax)?;
    psnr_real(&r, &t, 1.0)
}

/// SSIM of magnitude images with the data range set by the reference
/// maximum.
pub fn ssim<T: Real>(reference: &DynamicImage<T>, test: &DynamicImage<T>) -> Result<f64> {
    let (r, t) = normalized(reference, test, Normalization::RefMax)?;
    ssim_real(&r, &t, 1.0)
}

pub fn nrmse_roi<T: Real>(reference: &DynamicImage<T>, test: &DynamicImage<T>, roi: &[bool]) -> Result<f64> {
    let (r, t) = normalized(reference, test, Normalization::RefMax)?;
    nrmse_real(&r, &t, roi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub psnr: f64,
    pub ssim: f64,
    pub nrmse_roi: f64,
}

/// All three metrics under one normalization; the peak and SSIM range are
/// the unit the reference was scaled to.
pub fn evaluate<T: Real>(
    reference: &DynamicImage<T>,
    test: &DynamicImage<T>,
    roi: &[bool],
    norm: Normalization,
) -> Result<MetricSet> {
    let (r, t) = normalized(reference, test, norm)?;
    Ok(MetricSet { psnr: psnr_real(&r, &t, 1.0)?, ssim: ssim_real(&r, &t, 1.0)?, nrmse_roi: nrmse_real(&r, &t, roi)? })
}

/// Mean cosine similarity of estimated and reference displacement vectors
/// over `masks[t]` pixels where the reference moves at least `min_px`.
///
/// With `demean`, each pixel's temporal mean is subtracted from both
/// sequences first: a time-constant displacement can be traded against a
/// shifted canonical image, so only the time-varying part is identifiable.
pub fn dvf_cosine<T: Real, U: Real>(
    est: &[DvfField<T>],
    truth: &[DvfField<U>],
    masks: &[Vec<bool>],
    min_px: f64,
    demean: bool,
) -> Result<f64> {
    if est.is_empty() || est.len() != truth.len() || masks.len() != est.len() {
        return shape_err("displacement sequences and masks must have the same non-zero length");
    }
    let (h, w) = (truth[0].h, truth[0].w);
    let hw = h * w;
    if est.iter().any(|u| u.h != h || u.w != w)
        || truth.iter().any(|u| u.h != h || u.w != w)
        || masks.iter().any(|m| m.len() != hw)
    {
        return shape_err("displacement fields and masks must share one frame size");
    }
    let mean = |f: &dyn Fn(usize, usize) -> [f64; 2]| -> Vec<[f64; 2]> {
        let n = est.len() as f64;
        (0..hw)
            .map(|s| {
                let mut m = [0.0; 2];
                for t in 0..est.len() {
                    let v = f(t, s);
                    m[0] += v[0] / n;
                    m[1] += v[1] / n;
                }
                if demean {
                    m
                } else {
                    [0.0; 2]
                }
            })
            .collect()
    };
    let me = mean(&|t, s| est[t].vector_px(s));
    let mt = mean(&|t, s| truth[t].vector_px(s));
    let (mut sum, mut n) = (0.0, 0usize);
    for t in 0..est.len() {
        for s in (0..hw).filter(|&s| masks[t][s]) {
            let (e, r) = (est[t].vector_px(s), truth[t].vector_px(s));
            let e = [e[0] - me[s][0], e[1] - me[s][1]];
            let r = [r[0] - mt[s][0], r[1] - mt[s][1]];
            let rn = r[0].hypot(r[1]);
            if rn < min_px {
                continue;
            }
            let en = e[0].hypot(e[1]);
            sum += if en == 0.0 { 0.0 } else { (e[0] * r[0] + e[1] * r[1]) / (en * rn) };
            n += 1;
        }
    }
    if n == 0 {
        return invalid("no masked pixel moves by the minimum displacement");
    }
    Ok(sum / n as f64)
}
