//! Measured k-t data plus everything needed to replay or score it, and its
//! on-disk container (see the crate README for the byte layout).

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{make_coils, make_phantom, PhantomSpec};
use crate::container;
use crate::error::{invalid, shape_err, Error, Result};
use crate::kspace::{
    apply_forward_multi, zero_filled, CartesianMask, CoilSet, ComplexImage, DynamicImage, FrameOperator, RadialFrame,
    RadialTrajectory, Sampling,
};
use crate::nets::DvfField;
use crate::sampling::{default_readout, make_golden_angle_traj, make_vista_mask};

const MAGIC: &[u8; 8] = b"MOCOKTDS";
const VERSION: u32 = 1;

/// How to undersample a simulated acquisition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingConfig {
    /// Every Cartesian line in every frame.
    Full,
    /// Variable-density complementary Cartesian lines.
    Vista { af: f64 },
    /// Golden-angle radial spokes; the readout defaults to twice the
    /// larger image edge.
    Radial {
        spokes_per_frame: usize,
        #[serde(default)]
        readout: Option<usize>,
        #[serde(default)]
        base_angle: f64,
    },
}

impl SamplingConfig {
    pub fn build(&self, h: usize, w: usize, frames: usize, seed: u64) -> Result<Sampling> {
        Ok(match self {
            Self::Full => Sampling::Cartesian(CartesianMask::full(h, frames)),
            Self::Vista { af } => Sampling::Cartesian(make_vista_mask(h, frames, *af, seed)?),
            Self::Radial { spokes_per_frame, readout, base_angle } => Sampling::Radial(make_golden_angle_traj(
                *spokes_per_frame,
                readout.unwrap_or_else(|| default_readout(h, w)),
                frames,
                *base_angle,
            )?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub images: DynamicImage<f32>,
    /// Frame-to-reference displacement per frame, normalized units.
    pub dvfs: Vec<DvfField<f32>>,
    pub roi: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub generator: String,
    pub phantom: Option<PhantomSpec>,
    pub sampling: Option<SamplingConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KtDataset {
    pub h: usize,
    pub w: usize,
    pub frames: usize,
    pub noise_sigma: f64,
    pub sampling: Sampling,
    pub coils: CoilSet<f32>,
    /// Per frame, coil-major samples.
    pub samples: Vec<Vec<Complex<f32>>>,
    pub ground_truth: Option<GroundTruth>,
    pub provenance: Provenance,
}

impl KtDataset {
    pub fn coil_count(&self) -> usize {
        self.coils.count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.coils.height() != self.h || self.coils.width() != self.w {
            return shape_err("coil maps do not match the image size");
        }
        if self.sampling.frames() != self.frames || self.samples.len() != self.frames {
            return shape_err(format!(
                "{} frames declared, sampling has {}, samples have {}",
                self.frames,
                self.sampling.frames(),
                self.samples.len()
            ));
        }
        if let Sampling::Radial(r) = &self.sampling {
            r.validate()?;
        }
        for (t, y) in self.samples.iter().enumerate() {
            let want = self.coil_count() * self.sampling.samples_per_coil(t, self.w);
            if y.len() != want {
                return shape_err(format!("frame {t} has {} samples, sampling implies {want}", y.len()));
            }
            if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::Data(format!("frame {t} has non-finite samples")));
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.images.len() != self.frames || gt.images.height() != self.h || gt.images.width() != self.w {
                return shape_err("ground-truth images do not match the dataset geometry");
            }
            if gt.dvfs.len() != self.frames || gt.dvfs.iter().any(|u| u.h != self.h || u.w != self.w) {
                return shape_err("ground-truth displacement fields do not match the dataset geometry");
            }
            if gt.roi.len() != self.h * self.w {
                return shape_err("ROI mask does not match the image size");
            }
        }
        Ok(())
    }

    pub fn frame_operators(&self) -> Result<Vec<Arc<FrameOperator<f32>>>> {
        let coils = Arc::new(self.coils.clone());
        (0..self.frames).map(|t| FrameOperator::new(&self.sampling, t, coils.clone()).map(Arc::new)).collect()
    }

    /// Zero-filled (Cartesian) or density-compensated gridding (radial)
    /// baseline.
    pub fn zero_filled(&self) -> Result<DynamicImage<f32>> {
        DynamicImage::new(zero_filled(&self.samples, &self.coils, &self.sampling)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut blobs = BlobWriter::default();
        blobs.c64("samples", self.samples.iter().flatten().copied());
        blobs.c64("coil_maps", self.coils.maps().iter().flat_map(|m| m.data().iter().copied()));
        let sampling = match &self.sampling {
            Sampling::Cartesian(m) => json!({"kind": "cartesian", "kept": m.as_slice()}),
            Sampling::Radial(r) => {
                blobs.f64("traj_angles", r.frames.iter().flat_map(|f| f.angles.iter().copied()));
                blobs.f64("traj_coords", r.frames.iter().flat_map(|f| f.coords.iter().flatten().copied()));
                blobs.f64("traj_dcf", r.frames.iter().flat_map(|f| f.dcf.iter().copied()));
                json!({"kind": "radial", "readout": r.readout, "spokes_per_frame": r.spokes_per_frame()})
            }
        };
        if let Some(gt) = &self.ground_truth {
            blobs.c64("gt_images", gt.images.frames().iter().flat_map(|f| f.data().iter().copied()));
            blobs.f32("gt_dvfs", gt.dvfs.iter().flat_map(|u| u.data.iter().copied()));
            blobs.u8("gt_roi", gt.roi.iter().map(|&b| b as u8));
        }
        let header = json!({
            "h": self.h,
            "w": self.w,
            "frames": self.frames,
            "coils": self.coil_count(),
            "noise_sigma": self.noise_sigma,
            "sampling": sampling,
            "ground_truth": self.ground_truth.is_some(),
            "provenance": self.provenance,
            "blobs": blobs.table,
        });
        container::encode(MAGIC, VERSION, header, &blobs.payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = container::decode(MAGIC, VERSION, bytes)?;
        let hd = &c.header;
        let blobs: Vec<BlobEntry> = serde_json::from_value(field(hd, "blobs")?.clone())?;
        let reader = BlobReader { table: &blobs, payload: &c.payload };
        let usize_of = |k: &str| -> Result<usize> {
            field(hd, k)?.as_u64().map(|v| v as usize).ok_or_else(|| Error::Format(format!("header field {k} is not an integer")))
        };
        let (h, w, frames, ncoils) = (usize_of("h")?, usize_of("w")?, usize_of("frames")?, usize_of("coils")?);
        let noise_sigma = field(hd, "noise_sigma")?.as_f64().ok_or_else(|| Error::Format("noise_sigma is not a number".into()))?;
        let hw = h * w;
        let maps = reader.c64("coil_maps", ncoils * hw)?;
        let coils = CoilSet::new(maps.chunks_exact(hw).map(|m| ComplexImage::new(h, w, m.to_vec())).collect::<Result<_>>()?)?;
        let sm = field(hd, "sampling")?;
        let sampling = match sm.get("kind").and_then(Value::as_str) {
            Some("cartesian") => {
                let kept: Vec<bool> = serde_json::from_value(field(sm, "kept")?.clone())?;
                Sampling::Cartesian(CartesianMask::new(h, frames, kept)?)
            }
            Some("radial") => {
                let readout = field(sm, "readout")?.as_u64().unwrap_or(0) as usize;
                let spokes = field(sm, "spokes_per_frame")?.as_u64().unwrap_or(0) as usize;
                let n = spokes * readout;
                let angles = reader.f64("traj_angles", frames * spokes)?;
                let coords = reader.f64("traj_coords", frames * n * 2)?;
                let dcf = reader.f64("traj_dcf", frames * n)?;
                let frames_v = (0..frames)
                    .map(|t| RadialFrame {
                        angles: angles[t * spokes..(t + 1) * spokes].to_vec(),
                        coords: coords[t * 2 * n..(t + 1) * 2 * n].chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
                        dcf: dcf[t * n..(t + 1) * n].to_vec(),
                    })
                    .collect();
                let r = RadialTrajectory { readout, frames: frames_v };
                r.validate()?;
                Sampling::Radial(r)
            }
            other => return Err(Error::Format(format!("unknown sampling kind {other:?}"))),
        };
        if sampling.frames() != frames {
            return Err(Error::Format("sampling frame count disagrees with the header".into()));
        }
        let counts: Vec<usize> = (0..frames).map(|t| ncoils * sampling.samples_per_coil(t, w)).collect();
        let flat = reader.c64("samples", counts.iter().sum())?;
        let mut samples = Vec::with_capacity(frames);
        let mut off = 0;
        for n in counts {
            samples.push(flat[off..off + n].to_vec());
            off += n;
        }
        let ground_truth = if field(hd, "ground_truth")?.as_bool().unwrap_or(false) {
            let imgs = reader.c64("gt_images", frames * hw)?;
            let dv = reader.f32("gt_dvfs", frames * 2 * hw)?;
            let roi = reader.u8("gt_roi", hw)?;
            Some(GroundTruth {
                images: DynamicImage::new(imgs.chunks_exact(hw).map(|f| ComplexImage::new(h, w, f.to_vec())).collect::<Result<_>>()?)?,
                dvfs: dv.chunks_exact(2 * hw).map(|d| DvfField { h, w, data: d.to_vec() }).collect(),
                roi: roi.iter().map(|&b| b != 0).collect(),
            })
        } else {
            None
        };
        let provenance: Provenance = serde_json::from_value(field(hd, "provenance")?.clone())?;
        let ds = Self { h, w, frames, noise_sigma, sampling, coils, samples, ground_truth, provenance };
        ds.validate()?;
        Ok(ds)
    }
}

fn field<'a>(v: &'a Value, k: &str) -> Result<&'a Value> {
    v.get(k).ok_or_else(|| Error::Format(format!("header lacks field {k}")))
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    dtype: String,
    offset: usize,
    count: usize,
}

#[derive(Default)]
struct BlobWriter {
    payload: Vec<u8>,
    table: Vec<BlobEntry>,
}

impl BlobWriter {
    fn begin(&mut self, name: &str, dtype: &str) -> usize {
        self.table.push(BlobEntry { name: name.into(), dtype: dtype.into(), offset: self.payload.len(), count: 0 });
        self.payload.len()
    }

    fn finish(&mut self, start: usize, width: usize) {
        self.table.last_mut().expect("begun").count = (self.payload.len() - start) / width;
    }

    fn c64(&mut self, name: &str, values: impl Iterator<Item = Complex<f32>>) {
        let s = self.begin(name, "complex64");
        container::push_f32(&mut self.payload, values.flat_map(|v| [v.re, v.im]));
        self.finish(s, 8);
    }

    fn f32(&mut self, name: &str, values: impl Iterator<Item = f32>) {
        let s = self.begin(name, "float32");
        container::push_f32(&mut self.payload, values);
        self.finish(s, 4);
    }

    fn f64(&mut self, name: &str, values: impl Iterator<Item = f64>) {
        let s = self.begin(name, "float64");
        container::push_f64(&mut self.payload, values);
        self.finish(s, 8);
    }

    fn u8(&mut self, name: &str, values: impl Iterator<Item = u8>) {
        let s = self.begin(name, "uint8");
        self.payload.extend(values);
        self.finish(s, 1);
    }
}

struct BlobReader<'a> {
    table: &'a [BlobEntry],
    payload: &'a [u8],
}

impl BlobReader<'_> {
    fn bytes(&self, name: &str, dtype: &str, count: usize, width: usize) -> Result<&[u8]> {
        let e = self
            .table
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("blob {name} missing")))?;
        if e.dtype != dtype || e.count != count {
            return Err(Error::Format(format!(
                "blob {name} is {} x {}, expected {dtype} x {count}",
                e.dtype, e.count
            )));
        }
        self.payload
            .get(e.offset..e.offset + count * width)
            .ok_or_else(|| Error::Format(format!("blob {name} runs past the payload")))
    }

    fn c64(&self, name: &str, count: usize) -> Result<Vec<Complex<f32>>> {
        Ok(container::read_f32(self.bytes(name, "complex64", count, 8)?).chunks_exact(2).map(|c| Complex::new(c[0], c[1])).collect())
    }

    fn f32(&self, name: &str, count: usize) -> Result<Vec<f32>> {
        Ok(container::read_f32(self.bytes(name, "float32", count, 4)?))
    }

    fn f64(&self, name: &str, count: usize) -> Result<Vec<f64>> {
        Ok(container::read_f64(self.bytes(name, "float64", count, 8)?))
    }

    fn u8(&self, name: &str, count: usize) -> Result<Vec<u8>> {
        Ok(self.bytes(name, "uint8", count, 1)?.to_vec())
    }
}

/// Atomic write of the dataset container.
pub fn save_dataset(path: &Path, ds: &KtDataset) -> Result<()> {
    container::write_atomic(path, &ds.to_bytes()?)
}

pub fn load_dataset(path: &Path) -> Result<KtDataset> {
    KtDataset::from_bytes(&std::fs::read(path)?)
}

/// Phantom, coils, sampling, and noisy measurements from one seed.
///
/// Ground truth and coil maps are rounded to the stored single precision
/// before the forward model runs, so re-applying the model to the stored
/// data reproduces noiseless samples bit for bit.
pub fn simulate(
    spec: &PhantomSpec,
    sampling: &SamplingConfig,
    coils: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<KtDataset> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return invalid("noise_sigma must be finite and non-negative");
    }
    let phantom = make_phantom(spec)?;
    let coil_set: CoilSet<f32> = make_coils(spec.h, spec.w, coils, seed.wrapping_add(1))?.cast();
    let pattern = sampling.build(spec.h, spec.w, spec.frames, seed)?;
    let images: DynamicImage<f32> = phantom.images.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let samples = apply_forward_multi(images.frames(), &coil_set, &pattern, noise_sigma, &mut rng)?;
    let dvfs = phantom
        .dvfs
        .iter()
        .map(|u| DvfField { h: u.h, w: u.w, data: u.data.iter().map(|&v| v as f32).collect() })
        .collect();
    let ds = KtDataset {
        h: spec.h,
        w: spec.w,
        frames: spec.frames,
        noise_sigma,
        sampling: pattern,
        coils: coil_set,
        samples,
        ground_truth: Some(GroundTruth { images, dvfs, roi: phantom.roi }),
        provenance: Provenance {
            seed: Some(seed),
            generator: format!("mocoinr {}", env!("CARGO_PKG_VERSION")),
            phantom: Some(spec.clone()),
            sampling: Some(sampling.clone()),
        },
    };
    ds.validate()?;
    Ok(ds)
}
