//! Reconstruction directory layout: PGM previews, raw complex blobs, DVF
//! quiver samples, and the `recon.json` manifest tying them together.

use std::fs;
use std::io::Write;
use std::path::Path;

use mocoinr::kspace::{ComplexImage, DynamicImage};
use mocoinr::metrics::MetricSet;
use mocoinr::nets::DvfField;
use mocoinr::trainer::Outcome;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const MANIFEST: &str = "recon.json";
pub const FRAMES_RAW: &str = "frames.c64";
pub const CANONICAL_RAW: &str = "canonical.c64";
pub const QUIVER: &str = "dvf_quiver.csv";
pub const QUIVER_COLUMNS: &str = "frame,row,col,x_px,y_px,ux_px,uy_px";
pub const REPORT: &str = "report.csv";
pub const TIMING: &str = "timing.csv";
pub const CHECKPOINT: &str = "checkpoint.mocock";
pub const CONFIG_ECHO: &str = "train_config.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub iterations: usize,
    pub outcome: Outcome,
    pub final_metrics: Option<MetricSet>,
    pub normalization: Option<String>,
    pub generator: String,
}

/// 8-bit binary PGM of `values` scaled so `peak` maps to 255.
pub fn write_pgm(path: &Path, h: usize, w: usize, values: &[f64], peak: f64) -> Result<(), Failure> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let k = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    out.extend(values.iter().map(|v| (v * k).round().clamp(0.0, 255.0) as u8));
    write(path, &out)
}

/// Little-endian interleaved `(re, im)` `f32` pairs.
pub fn write_c64(path: &Path, values: impl Iterator<Item = Complex<f32>>) -> Result<(), Failure> {
    let mut out = Vec::new();
    for z in values {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    write(path, &out)
}

pub fn read_c64(path: &Path, expected: usize) -> Result<Vec<Complex<f32>>, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
    if bytes.len() != expected * 8 {
        return Err(Failure::Other(format!(
            "{}: {} bytes, expected {} complex values",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
            let im = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
            Complex::new(re, im)
        })
        .collect())
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

/// Writes `T` frame previews, the canonical preview and a motion map,
/// plus the raw blobs.
pub fn write_images(
    dir: &Path,
    images: &DynamicImage<f32>,
    canonical: &ComplexImage<f32>,
    dvfs: &[DvfField<f32>],
) -> Result<usize, Failure> {
    let (h, w) = (images.height(), images.width());
    let mags: Vec<Vec<f64>> = images.frames().iter().map(|f| f.magnitude()).collect();
    let peak = mags.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    for (t, m) in mags.iter().enumerate() {
        write_pgm(&dir.join(format!("frame_{t:03}.pgm")), h, w, m, peak)?;
    }
    let c = canonical.magnitude();
    let cpeak = c.iter().fold(0.0f64, |m, &v| m.max(v));
    write_pgm(&dir.join("canonical.pgm"), h, w, &c, cpeak)?;
    let motion: Vec<f64> = (0..h * w)
        .map(|s| dvfs.iter().map(|u| u.vector_px(s)).map(|[x, y]| x.hypot(y)).fold(0.0, f64::max))
        .collect();
    let mpeak = motion.iter().fold(0.0f64, |m, &v| m.max(v));
    write_pgm(&dir.join("motion.pgm"), h, w, &motion, mpeak)?;

    write_c64(&dir.join(FRAMES_RAW), images.frames().iter().flat_map(|f| f.data().iter().copied()))?;
    write_c64(&dir.join(CANONICAL_RAW), canonical.data().iter().copied())?;
    Ok(images.len() + 2)
}

/// Displacements in pixels on a `stride`-spaced lattice, one row per
/// sampled pixel and frame. `x_px, y_px` is the pixel center.
pub fn write_quiver(path: &Path, dvfs: &[DvfField<f32>], h: usize, w: usize, stride: usize) -> Result<(), Failure> {
    let mut out = Vec::new();
    writeln!(out, "{QUIVER_COLUMNS}").expect("write to Vec");
    let stride = stride.max(1);
    for (t, u) in dvfs.iter().enumerate() {
        for i in (stride / 2..h).step_by(stride) {
            for j in (stride / 2..w).step_by(stride) {
                let [ux, uy] = u.vector_px(i * w + j);
                writeln!(out, "{t},{i},{j},{},{},{ux},{uy}", j as f64 + 0.5, i as f64 + 0.5).expect("write to Vec");
            }
        }
    }
    write(path, &out)
}

pub fn write_timing(path: &Path, timing: &[f64]) -> Result<(), Failure> {
    let mut out = String::from("iteration,seconds\n");
    for (i, s) in timing.iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    write(path, out.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, Failure> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

/// Reconstructed sequence stored in `dir`.
pub fn read_frames(dir: &Path, m: &Manifest) -> Result<DynamicImage<f32>, Failure> {
    let hw = m.height * m.width;
    let data = read_c64(&dir.join(FRAMES_RAW), m.frames * hw)?;
    let frames = data
        .chunks_exact(hw)
        .map(|c| ComplexImage::new(m.height, m.width, c.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DynamicImage::new(frames)?)
}
