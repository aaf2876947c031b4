//! Acquisition operators: centered orthonormal FFT, Cartesian masking,
//! Kaiser-Bessel gridding NUFFT for radial trajectories, and the
//! multi-coil, multi-frame forward model `y_tc = M_t F S_c x_t + n_tc`.

mod acquisition;
mod cartesian;
mod fft;
mod nufft;

pub use acquisition::{apply_forward_multi, zero_filled, FrameOperator, Sampling};
pub use cartesian::{apply_adjoint_cartesian, apply_forward_cartesian};
pub use fft::{fft2c, ifft2c, Fft2Plan};
pub use nufft::{kb_beta, nufft_adjoint, nufft_forward, NufftPlan, NUFFT_OVERSAMPLING, NUFFT_WIDTH};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::real::Real;

/// Smallest accepted image edge.
pub const MIN_EDGE: usize = 4;

/// Complex image on an `h x w` raster, row-major (row = y, column = x).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage<T> {
    h: usize,
    w: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> ComplexImage<T> {
    pub fn new(h: usize, w: usize, data: Vec<Complex<T>>) -> Result<Self> {
        check_dims(h, w)?;
        if data.len() != h * w {
            return shape_err(format!("image data has {} values, expected {}x{}", data.len(), h, w));
        }
        let img = Self { h, w, data };
        img.ensure_finite()?;
        Ok(img)
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        assert!(h >= MIN_EDGE && w >= MIN_EDGE, "image must be at least {MIN_EDGE}x{MIN_EDGE}");
        Self { h, w, data: vec![Complex::new(T::zero(), T::zero()); h * w] }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut img = Self::zeros(h, w);
        for i in 0..h {
            for j in 0..w {
                img.data[i * w + j] = f(i, j);
            }
        }
        img
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex<T>> {
        self.data
    }

    pub fn at(&self, i: usize, j: usize) -> Complex<T> {
        self.data[i * self.w + j]
    }

    pub fn cast<U: Real>(&self) -> ComplexImage<U> {
        ComplexImage {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|z| Complex::new(U::lit(z.re.as_f64()), U::lit(z.im.as_f64()))).collect(),
        }
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re.as_f64().hypot(z.im.as_f64())).collect()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr().as_f64()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Data("image contains non-finite values".into()))
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.h == other.h && self.w == other.w
    }
}

pub(crate) fn check_dims(h: usize, w: usize) -> Result<()> {
    if h < MIN_EDGE || w < MIN_EDGE {
        return shape_err(format!("image {h}x{w} is smaller than {MIN_EDGE}x{MIN_EDGE}"));
    }
    Ok(())
}

/// Complex inner product `<a, b> = sum conj(a) * b`, accumulated in f64.
pub fn inner<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<f64> {
    a.iter().zip(b).fold(Complex::new(0.0, 0.0), |acc, (x, y)| {
        let x = Complex::new(x.re.as_f64(), x.im.as_f64());
        let y = Complex::new(y.re.as_f64(), y.im.as_f64());
        acc + x.conj() * y
    })
}

/// Receiver coil sensitivities, normalized so `sum_c |S_c|^2 = 1` per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSet<T> {
    maps: Vec<ComplexImage<T>>,
}

/// Tolerance on the pointwise sum-of-squares normalization.
pub const COIL_NORM_TOL: f64 = 1e-6;

impl<T: Real> CoilSet<T> {
    pub fn new(maps: Vec<ComplexImage<T>>) -> Result<Self> {
        let Some(first) = maps.first() else {
            return invalid("coil set needs at least one map");
        };
        if maps.iter().any(|m| !m.same_shape(first)) {
            return shape_err("coil maps differ in shape");
        }
        for p in 0..first.len() {
            let ss: f64 = maps.iter().map(|m| m.data[p].norm_sqr().as_f64()).sum();
            if (ss - 1.0).abs() > COIL_NORM_TOL {
                return Err(Error::Data(format!("coil sum-of-squares is {ss} at pixel {p}, expected 1")));
            }
        }
        Ok(Self { maps })
    }

    /// Divides raw maps by their root-sum-of-squares.
    pub fn normalized(mut maps: Vec<ComplexImage<T>>) -> Result<Self> {
        let Some(first) = maps.first() else {
            return invalid("coil set needs at least one map");
        };
        let n = first.len();
        if maps.iter().any(|m| !m.same_shape(first)) {
            return shape_err("coil maps differ in shape");
        }
        for p in 0..n {
            let rss = maps.iter().map(|m| m.data[p].norm_sqr()).fold(T::zero(), |a, b| a + b).sqrt();
            if !(rss > T::zero()) {
                return Err(Error::Data(format!("coil maps vanish at pixel {p}")));
            }
            for m in maps.iter_mut() {
                m.data[p] = m.data[p] / rss;
            }
        }
        Self::new(maps)
    }

    /// Single uniform coil, `S = 1`.
    pub fn uniform(h: usize, w: usize) -> Self {
        let one = ComplexImage::from_fn(h, w, |_, _| Complex::new(T::one(), T::zero()));
        Self { maps: vec![one] }
    }

    pub fn count(&self) -> usize {
        self.maps.len()
    }

    pub fn height(&self) -> usize {
        self.maps[0].h
    }

    pub fn width(&self) -> usize {
        self.maps[0].w
    }

    pub fn maps(&self) -> &[ComplexImage<T>] {
        &self.maps
    }

    pub fn cast<U: Real>(&self) -> CoilSet<U> {
        CoilSet { maps: self.maps.iter().map(|m| m.cast()).collect() }
    }

    pub(crate) fn check_image(&self, x: &ComplexImage<T>) -> Result<()> {
        if !x.same_shape(&self.maps[0]) {
            return shape_err(format!(
                "image is {}x{} but coil maps are {}x{}",
                x.h,
                x.w,
                self.height(),
                self.width()
            ));
        }
        Ok(())
    }
}

/// Binary ky-t undersampling pattern; `kept[t * h + ky]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartesianMask {
    h: usize,
    frames: usize,
    kept: Vec<bool>,
}

impl CartesianMask {
    pub fn new(h: usize, frames: usize, kept: Vec<bool>) -> Result<Self> {
        if h == 0 || frames == 0 {
            return invalid("mask needs at least one line and one frame");
        }
        if kept.len() != h * frames {
            return shape_err(format!("mask has {} entries, expected {}x{}", kept.len(), h, frames));
        }
        let mask = Self { h, frames, kept };
        for t in 0..frames {
            let col = mask.column(t);
            if !col[h / 2] {
                return Err(Error::Data(format!("frame {t} does not keep the DC line")));
            }
        }
        Ok(mask)
    }

    pub fn full(h: usize, frames: usize) -> Self {
        Self { h, frames, kept: vec![true; h * frames] }
    }

    pub fn lines(&self) -> usize {
        self.h
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn column(&self, t: usize) -> &[bool] {
        &self.kept[t * self.h..(t + 1) * self.h]
    }

    pub fn kept_in_frame(&self, t: usize) -> usize {
        self.column(t).iter().filter(|&&k| k).count()
    }

    pub fn total_kept(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    /// Fully-sampled line count over acquired line count.
    pub fn empirical_af(&self) -> f64 {
        (self.h * self.frames) as f64 / self.total_kept() as f64
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.kept
    }
}

/// One frame of a radial acquisition. Coordinates are `(kx, ky)` in
/// cycles per pixel, each component in `[-0.5, 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialFrame {
    pub angles: Vec<f64>,
    pub coords: Vec<[f64; 2]>,
    pub dcf: Vec<f64>,
}

impl RadialFrame {
    pub fn samples(&self) -> usize {
        self.coords.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialTrajectory {
    pub readout: usize,
    pub frames: Vec<RadialFrame>,
}

impl RadialTrajectory {
    pub fn validate(&self) -> Result<()> {
        for (t, f) in self.frames.iter().enumerate() {
            if f.coords.len() != f.angles.len() * self.readout || f.dcf.len() != f.coords.len() {
                return shape_err(format!("radial frame {t} has inconsistent sample counts"));
            }
            check_coords(&f.coords)?;
            if f.dcf.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                return Err(Error::Data(format!("radial frame {t} has a negative or non-finite weight")));
            }
        }
        Ok(())
    }

    pub fn spokes_per_frame(&self) -> usize {
        self.frames.first().map_or(0, |f| f.angles.len())
    }
}

pub(crate) fn check_coords(coords: &[[f64; 2]]) -> Result<()> {
    for (s, k) in coords.iter().enumerate() {
        if k.iter().any(|&v| !(-0.5..0.5).contains(&v)) {
            return Err(Error::InvalidArgument(format!(
                "trajectory sample {s} at ({}, {}) is outside [-0.5, 0.5)",
                k[0], k[1]
            )));
        }
    }
    Ok(())
}

/// Complex image sequence: `frames` images sharing one `h x w` raster.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicImage<T> {
    frames: Vec<ComplexImage<T>>,
}

impl<T: Real> DynamicImage<T> {
    pub fn new(frames: Vec<ComplexImage<T>>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return invalid("a dynamic image needs at least one frame");
        };
        if let Some(t) = frames.iter().position(|f| !f.same_shape(first)) {
            return shape_err(format!(
                "frame {t} is {}x{}, frame 0 is {}x{}",
                frames[t].height(),
                frames[t].width(),
                first.height(),
                first.width()
            ));
        }
        Ok(Self { frames })
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frames(&self) -> &[ComplexImage<T>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &ComplexImage<T> {
        &self.frames[t]
    }

    pub fn into_frames(self) -> Vec<ComplexImage<T>> {
        self.frames
    }

    pub fn cast<U: Real>(&self) -> DynamicImage<U> {
        DynamicImage { frames: self.frames.iter().map(ComplexImage::cast).collect() }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.len() == other.len() && self.frames[0].same_shape(&other.frames[0])
    }
}
