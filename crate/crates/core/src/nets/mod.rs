//! The two coordinate networks and their composition into frame
//! predictions.
//!
//! The displacement network encodes `(x, y, t)` with a 3D hash grid and
//! decodes a two-channel displacement field `u_t`. Pixel centers `p` are
//! moved to `p + u_t(p)` in canonical space, encoded there by the 2D
//! canonical grid, and decoded into the real and imaginary parts of the
//! frame. Both decoders run convolutionally over a feature image laid out
//! by frame pixel, so the canonical decoder mixes features of neighboring
//! rays rather than neighboring canonical positions.

mod checkpoint;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CheckpointMeta};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{invalid, shape_err, Result};
use crate::hashenc::{schedule_window, HashGrid, HashGridConfig, LevelWindow, NetKind};
use crate::kspace::{ComplexImage, MIN_EDGE};
use crate::real::Real;
use num_complex::Complex;

/// Canonical coordinates live in `[-m, 1 + m]^2`.
pub const CANONICAL_MARGIN: f64 = 0.125;

pub const DECODER_WIDTH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// Three 3x3 convolutions.
    Cnn,
    /// Per-pixel two-hidden-layer perceptron (1x1 convolutions).
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub width: usize,
}

impl DecoderConfig {
    pub fn kernel(&self) -> usize {
        match self.kind {
            DecoderKind::Cnn => 3,
            DecoderKind::Mlp => 1,
        }
    }
}

/// Three-layer decoder `in -> width -> width -> out` with leaky-rectifier
/// activations after the first two layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvDecoder<T> {
    in_ch: usize,
    out_ch: usize,
    width: usize,
    kernel: usize,
    weights: [Vec<T>; 3],
    biases: [Vec<T>; 3],
}

/// Tape handles of one decoder's parameters.
#[derive(Clone, Copy, Debug)]
pub struct DecoderVars {
    pub weights: [Var; 3],
    pub biases: [Var; 3],
}

impl<T: Real> ConvDecoder<T> {
    /// Weights and biases uniform in `+-1/sqrt(fan_in)`; with `zero_last`
    /// the output layer starts at exactly zero.
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, cfg: &DecoderConfig, zero_last: bool, rng: &mut R) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 || cfg.width == 0 {
            return invalid("decoder channel counts must be positive");
        }
        let kernel = cfg.kernel();
        let mut dec = Self {
            in_ch,
            out_ch,
            width: cfg.width,
            kernel,
            weights: Default::default(),
            biases: Default::default(),
        };
        for layer in 0..3 {
            let [o, i, k, _] = dec.weight_shape(layer);
            let bound = 1.0 / ((i * k * k) as f64).sqrt();
            let zero = zero_last && layer == 2;
            let mut draw = |n: usize| -> Vec<T> {
                (0..n).map(|_| if zero { T::zero() } else { T::lit(rng.random_range(-bound..bound)) }).collect()
            };
            dec.weights[layer] = draw(o * i * k * k);
            dec.biases[layer] = draw(o);
        }
        Ok(dec)
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    /// `[out, in, k, k]` of layer 0, 1, or 2.
    pub fn weight_shape(&self, layer: usize) -> [usize; 4] {
        let (i, o) = match layer {
            0 => (self.in_ch, self.width),
            1 => (self.width, self.width),
            _ => (self.width, self.out_ch),
        };
        [o, i, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> DecoderVars {
        let mut leaf = |shape: &[usize], data: &[T]| {
            tape.leaf(Tensor::new(shape, data.to_vec()).expect("decoder shapes are consistent"), trainable)
        };
        let w: Vec<Var> = (0..3).map(|l| leaf(&self.weight_shape(l), &self.weights[l])).collect();
        let b: Vec<Var> = (0..3).map(|l| leaf(&[self.weight_shape(l)[0]], &self.biases[l])).collect();
        DecoderVars { weights: [w[0], w[1], w[2]], biases: [b[0], b[1], b[2]] }
    }

    pub fn apply(tape: &mut Tape<T>, vars: &DecoderVars, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in 0..3 {
            h = tape.conv2d(h, vars.weights[layer], Some(vars.biases[layer]))?;
            if layer < 2 {
                h = tape.leaky_relu(h)?;
            }
        }
        Ok(h)
    }

    fn cast<U: Real>(&self) -> ConvDecoder<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        ConvDecoder {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            width: self.width,
            kernel: self.kernel,
            weights: [c(&self.weights[0]), c(&self.weights[1]), c(&self.weights[2])],
            biases: [c(&self.biases[0]), c(&self.biases[1]), c(&self.biases[2])],
        }
    }
}

/// Pixel-center coordinates of one frame: pixel `(i, j)` sits at
/// `((j + 0.5) / W, (i + 0.5) / H)` and frame `t` at `(t + 0.5) / T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameGrid {
    pub h: usize,
    pub w: usize,
    pub t: usize,
    pub frames: usize,
}

impl FrameGrid {
    pub fn new(h: usize, w: usize, t: usize, frames: usize) -> Result<Self> {
        if h < MIN_EDGE || w < MIN_EDGE {
            return shape_err(format!("frame {h}x{w} below the {MIN_EDGE}-pixel minimum"));
        }
        if t >= frames {
            return invalid(format!("frame index {t} out of range for {frames} frames"));
        }
        Ok(Self { h, w, t, frames })
    }

    pub fn pixel(&self, i: usize, j: usize) -> [f64; 2] {
        [(j as f64 + 0.5) / self.w as f64, (i as f64 + 0.5) / self.h as f64]
    }

    pub fn time(&self) -> f64 {
        (self.t as f64 + 0.5) / self.frames as f64
    }

    /// Raster-ordered `(x, y, t)` triples.
    pub fn spacetime_coords<T: Real>(&self) -> Vec<T> {
        let t = T::lit(self.time());
        let mut out = Vec::with_capacity(self.h * self.w * 3);
        for i in 0..self.h {
            for j in 0..self.w {
                let [x, y] = self.pixel(i, j);
                out.extend([T::lit(x), T::lit(y), t]);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dvf_grid: HashGridConfig,
    pub canonical_grid: HashGridConfig,
    pub decoder: DecoderConfig,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    CANONICAL_MARGIN
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            dvf_grid: HashGridConfig::paper_dvf(),
            canonical_grid: HashGridConfig::paper_canonical(),
            decoder: DecoderConfig { kind: DecoderKind::Cnn, width: DECODER_WIDTH },
            margin: CANONICAL_MARGIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dvf_grid.validate()?;
        self.canonical_grid.validate()?;
        if self.dvf_grid.dims != 3 || self.canonical_grid.dims != 2 {
            return invalid("the displacement grid must be 3D and the canonical grid 2D");
        }
        if self.decoder.width == 0 {
            return invalid("decoder width must be positive");
        }
        if !(self.margin >= 0.0 && self.margin < 1.0) {
            return invalid(format!("canonical margin {} outside [0, 1)", self.margin));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DvfNet<T> {
    pub grid: HashGrid<T>,
    pub decoder: ConvDecoder<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalNet<T> {
    pub grid: HashGrid<T>,
    pub decoder: ConvDecoder<T>,
    pub margin: f64,
}

/// Level windows for both grids at one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windows {
    pub dvf: LevelWindow,
    pub canonical: LevelWindow,
}

impl Windows {
    pub fn full(config: &ModelConfig) -> Self {
        Self { dvf: LevelWindow::full(config.dvf_grid.levels), canonical: LevelWindow::full(config.canonical_grid.levels) }
    }

    pub fn scheduled(config: &ModelConfig, iteration: usize, total_iters: usize) -> Self {
        Self {
            dvf: schedule_window(NetKind::Dvf, iteration, total_iters, config.dvf_grid.levels),
            canonical: schedule_window(NetKind::Canonical, iteration, total_iters, config.canonical_grid.levels),
        }
    }
}

/// Which network and role a parameter tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Hash table of a 1-based level.
    Table { net: NetKind, level: usize },
    Decoder { net: NetKind },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    pub dvf: DvfNet<T>,
    pub canonical: CanonicalNet<T>,
}

/// Tape handles for every parameter, aligned with [`Model::parameters`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub dvf_tables: Vec<Var>,
    pub dvf_decoder: DecoderVars,
    pub canonical_tables: Vec<Var>,
    pub canonical_decoder: DecoderVars,
}

impl ModelVars {
    /// Inverse of [`ModelVars::all`].
    pub fn from_slice(config: &ModelConfig, vars: &[Var]) -> Result<Self> {
        let (ld, lc) = (config.dvf_grid.levels, config.canonical_grid.levels);
        if vars.len() != ld + lc + 12 {
            return shape_err(format!("expected {} parameter handles, got {}", ld + lc + 12, vars.len()));
        }
        let dec = |v: &[Var]| DecoderVars { weights: [v[0], v[2], v[4]], biases: [v[1], v[3], v[5]] };
        Ok(Self {
            dvf_tables: vars[..ld].to_vec(),
            dvf_decoder: dec(&vars[ld..ld + 6]),
            canonical_tables: vars[ld + 6..ld + 6 + lc].to_vec(),
            canonical_decoder: dec(&vars[ld + 6 + lc..]),
        })
    }

    pub fn all(&self) -> Vec<Var> {
        let dec = |d: &DecoderVars| d.weights.iter().zip(&d.biases).flat_map(|(w, b)| [*w, *b]).collect::<Vec<_>>();
        let mut v = self.dvf_tables.clone();
        v.extend(dec(&self.dvf_decoder));
        v.extend(&self.canonical_tables);
        v.extend(dec(&self.canonical_decoder));
        v
    }
}

/// One tensor of [`Model::parameters`].
pub struct ParamView<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub data: &'a [T],
}

pub struct ParamViewMut<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub data: &'a mut [T],
}

impl<T: Real> Model<T> {
    /// Seeded initialization: displacement grid, displacement decoder
    /// (zeroed output layer), canonical grid, canonical decoder.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dvf_grid = HashGrid::new(config.dvf_grid.clone(), &mut rng)?;
        let dvf_dec = ConvDecoder::new(config.dvf_grid.feature_dim(), 2, &config.decoder, true, &mut rng)?;
        let can_grid = HashGrid::new(config.canonical_grid.clone(), &mut rng)?;
        let can_dec = ConvDecoder::new(config.canonical_grid.feature_dim(), 2, &config.decoder, false, &mut rng)?;
        Self::from_parts(config, DvfNet { grid: dvf_grid, decoder: dvf_dec }, CanonicalNet { grid: can_grid, decoder: can_dec, margin: 0.0 })
    }

    pub fn from_parts(config: ModelConfig, dvf: DvfNet<T>, mut canonical: CanonicalNet<T>) -> Result<Self> {
        config.validate()?;
        if dvf.grid.config() != &config.dvf_grid || canonical.grid.config() != &config.canonical_grid {
            return invalid("grid configs disagree with the model config");
        }
        for (dec, grid) in [(&dvf.decoder, &dvf.grid), (&canonical.decoder, &canonical.grid)] {
            if dec.in_channels() != grid.config().feature_dim() || dec.out_channels() != 2 {
                return shape_err(format!(
                    "decoder maps {} -> {} channels, grid provides {}",
                    dec.in_channels(),
                    dec.out_channels(),
                    grid.config().feature_dim()
                ));
            }
            if dec.kernel() != config.decoder.kernel() {
                return invalid("decoder kernel disagrees with the decoder kind");
            }
        }
        canonical.margin = config.margin;
        Ok(Self { config, dvf, canonical })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.data.len()).sum()
    }

    /// Every parameter tensor in a fixed order: displacement tables by
    /// level, displacement decoder `(w0, b0, w1, b1, w2, b2)`, then the same
    /// for the canonical network.
    pub fn parameters(&self) -> Vec<ParamView<'_, T>> {
        let mut out = Vec::new();
        for (net, grid, dec) in [
            (NetKind::Dvf, &self.dvf.grid, &self.dvf.decoder),
            (NetKind::Canonical, &self.canonical.grid, &self.canonical.decoder),
        ] {
            for (l, t) in grid.tables().iter().enumerate() {
                out.push(ParamView { name: table_name(net, l + 1), kind: ParamKind::Table { net, level: l + 1 }, data: t });
            }
            for layer in 0..3 {
                for (suffix, data) in [("weight", &dec.weights[layer]), ("bias", &dec.biases[layer])] {
                    out.push(ParamView { name: decoder_name(net, layer, suffix), kind: ParamKind::Decoder { net }, data });
                }
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<ParamViewMut<'_, T>> {
        let mut out = Vec::new();
        for (net, grid, dec) in [
            (NetKind::Dvf, &mut self.dvf.grid, &mut self.dvf.decoder),
            (NetKind::Canonical, &mut self.canonical.grid, &mut self.canonical.decoder),
        ] {
            for (l, t) in grid.tables_mut().iter_mut().enumerate() {
                out.push(ParamViewMut { name: table_name(net, l + 1), kind: ParamKind::Table { net, level: l + 1 }, data: t });
            }
            for (layer, (w, b)) in dec.weights.iter_mut().zip(dec.biases.iter_mut()).enumerate() {
                out.push(ParamViewMut { name: decoder_name(net, layer, "weight"), kind: ParamKind::Decoder { net }, data: w });
                out.push(ParamViewMut { name: decoder_name(net, layer, "bias"), kind: ParamKind::Decoder { net }, data: b });
            }
        }
        out
    }

    /// Puts every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> ModelVars {
        let tables = |tape: &mut Tape<T>, g: &HashGrid<T>| -> Vec<Var> {
            g.tables().iter().map(|t| tape.leaf(Tensor::new(&[t.len()], t.clone()).expect("1-axis"), trainable)).collect()
        };
        let dvf_tables = tables(tape, &self.dvf.grid);
        let dvf_decoder = self.dvf.decoder.bind(tape, trainable);
        let canonical_tables = tables(tape, &self.canonical.grid);
        let canonical_decoder = self.canonical.decoder.bind(tape, trainable);
        ModelVars { dvf_tables, dvf_decoder, canonical_tables, canonical_decoder }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            dvf: DvfNet { grid: self.dvf.grid.cast(), decoder: self.dvf.decoder.cast() },
            canonical: CanonicalNet {
                grid: self.canonical.grid.cast(),
                decoder: self.canonical.decoder.cast(),
                margin: self.canonical.margin,
            },
        }
    }
}

fn net_name(net: NetKind) -> &'static str {
    match net {
        NetKind::Dvf => "dvf",
        NetKind::Canonical => "canonical",
    }
}

fn table_name(net: NetKind, level: usize) -> String {
    format!("{}.table.{level}", net_name(net))
}

fn decoder_name(net: NetKind, layer: usize, suffix: &str) -> String {
    format!("{}.decoder.{layer}.{suffix}", net_name(net))
}

/// Tape outputs for a batch of frames.
#[derive(Clone, Copy, Debug)]
pub struct FrameGraph {
    /// `[B, 2, H, W]` displacement fields.
    pub dvf: Var,
    /// `[B, 2, H, W]` real/imaginary frame predictions.
    pub image: Var,
    pub saturated: usize,
}

/// Records displacement decoding, warping, and canonical decoding for the
/// frames `t_indices` of a `frames`-frame sequence. With `zero_dvf` the
/// displacement is replaced by zeros (pure canonical readout).
#[allow(clippy::too_many_arguments)]
pub fn build_frames<T: Real>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    vars: &ModelVars,
    t_indices: &[usize],
    frames: usize,
    h: usize,
    w: usize,
    windows: Windows,
    zero_dvf: bool,
) -> Result<FrameGraph> {
    let b = t_indices.len();
    if b == 0 {
        return invalid("empty frame batch");
    }
    let dvf = if zero_dvf {
        tape.constant(Tensor::zeros(&[b, 2, h, w]))
    } else {
        let mut coords = Vec::with_capacity(b * h * w * 3);
        for &t in t_indices {
            coords.extend(FrameGrid::new(h, w, t, frames)?.spacetime_coords::<T>());
        }
        let cv = tape.constant(Tensor::new(&[b * h * w, 3], coords)?);
        let feats = tape.hash_encode(&config.dvf_grid, &vars.dvf_tables, cv, windows.dvf, (b, h, w))?;
        ConvDecoder::apply(tape, &vars.dvf_decoder, feats)?
    };
    let warped = tape.warp_to_canonical(dvf, config.margin)?;
    let image = canonical_from_unit(tape, config, vars, warped.coords, (b, h, w), windows.canonical)?;
    Ok(FrameGraph { dvf, image, saturated: warped.saturated })
}

fn canonical_from_unit<T: Real>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    vars: &ModelVars,
    q: Var,
    layout: (usize, usize, usize),
    window: LevelWindow,
) -> Result<Var> {
    let feats = tape.hash_encode(&config.canonical_grid, &vars.canonical_tables, q, window, layout)?;
    ConvDecoder::apply(tape, &vars.canonical_decoder, feats)
}

/// Displacement field of one frame, channel-major `[2, H, W]` in
/// normalized field-of-view units (channel 0 along x).
#[derive(Clone, Debug, PartialEq)]
pub struct DvfField<T> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> DvfField<T> {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![T::zero(); 2 * h * w] }
    }

    pub fn at(&self, i: usize, j: usize) -> [T; 2] {
        let s = i * self.w + j;
        [self.data[s], self.data[self.h * self.w + s]]
    }

    /// Displacement at raster index `s`, in pixels.
    pub fn vector_px(&self, s: usize) -> [f64; 2] {
        [self.data[s].as_f64() * self.w as f64, self.data[self.h * self.w + s].as_f64() * self.h as f64]
    }

    /// Mean displacement length in pixels.
    pub fn mean_magnitude_px(&self) -> f64 {
        let hw = self.h * self.w;
        (0..hw).map(|s| self.vector_px(s)).map(|[x, y]| x.hypot(y)).sum::<f64>() / hw as f64
    }
}

/// Warped canonical-space coordinates of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedCoords {
    pub h: usize,
    pub w: usize,
    /// Raster-ordered `p + u(p)`, clamped to `[-m, 1 + m]^2`.
    pub points: Vec<[f64; 2]>,
    /// Pixels with at least one clamped component.
    pub saturated: usize,
}

pub fn dvf_forward<T: Real>(net: &DvfNet<T>, frame: &FrameGrid, window: LevelWindow) -> Result<DvfField<T>> {
    let mut tape = Tape::new();
    let tables: Vec<Var> =
        net.grid.tables().iter().map(|t| tape.constant(Tensor::new(&[t.len()], t.clone()).expect("1-axis"))).collect();
    let dec = net.decoder.bind(&mut tape, false);
    let cv = tape.constant(Tensor::new(&[frame.h * frame.w, 3], frame.spacetime_coords())?);
    let feats = tape.hash_encode(net.grid.config(), &tables, cv, window, (1, frame.h, frame.w))?;
    let u = ConvDecoder::apply(&mut tape, &dec, feats)?;
    Ok(DvfField { h: frame.h, w: frame.w, data: tape.value(u).data().to_vec() })
}

/// `p + u` clamped to `[-margin, 1 + margin]^2`, and whether clamping
/// occurred.
pub fn warp_point(p: [f64; 2], u: [f64; 2], margin: f64) -> ([f64; 2], bool) {
    let raw = [p[0] + u[0], p[1] + u[1]];
    let c = raw.map(|v| v.clamp(-margin, 1.0 + margin));
    (c, c != raw)
}

/// `p + u(p)` for every pixel center, clamped to the canonical margin.
pub fn warp_coords<T: Real>(frame: &FrameGrid, u: &DvfField<T>, margin: f64) -> Result<WarpedCoords> {
    if u.h != frame.h || u.w != frame.w {
        return shape_err(format!("field {}x{} does not match frame {}x{}", u.h, u.w, frame.h, frame.w));
    }
    let mut points = Vec::with_capacity(frame.h * frame.w);
    let mut saturated = 0;
    for i in 0..frame.h {
        for j in 0..frame.w {
            let d = u.at(i, j);
            let (c, clamped) = warp_point(frame.pixel(i, j), [d[0].as_f64(), d[1].as_f64()], margin);
            saturated += clamped as usize;
            points.push(c);
        }
    }
    if saturated > 0 {
        log::debug!("warp clamped {saturated} of {} coordinates to the canonical margin", points.len());
    }
    Ok(WarpedCoords { h: frame.h, w: frame.w, points, saturated })
}

pub fn canonical_forward<T: Real>(net: &CanonicalNet<T>, warped: &WarpedCoords, window: LevelWindow) -> Result<ComplexImage<T>> {
    let span = 1.0 + 2.0 * net.margin;
    let q: Vec<T> = warped
        .points
        .iter()
        .flat_map(|p| p.map(|v| T::lit(((v.clamp(-net.margin, 1.0 + net.margin) + net.margin) / span).clamp(0.0, 1.0))))
        .collect();
    let mut tape = Tape::new();
    let tables: Vec<Var> =
        net.grid.tables().iter().map(|t| tape.constant(Tensor::new(&[t.len()], t.clone()).expect("1-axis"))).collect();
    let dec = net.decoder.bind(&mut tape, false);
    let qv = tape.constant(Tensor::new(&[warped.h * warped.w, 2], q)?);
    let feats = tape.hash_encode(net.grid.config(), &tables, qv, window, (1, warped.h, warped.w))?;
    let out = ConvDecoder::apply(&mut tape, &dec, feats)?;
    pair_to_image(tape.value(out).data(), warped.h, warped.w)
}

/// Frame `t` of a `frames`-frame sequence: displacement, warp, canonical
/// readout.
pub fn predict_frame<T: Real>(
    model: &Model<T>,
    t: usize,
    frames: usize,
    h: usize,
    w: usize,
    windows: Windows,
) -> Result<(ComplexImage<T>, DvfField<T>)> {
    let frame = FrameGrid::new(h, w, t, frames)?;
    let u = dvf_forward(&model.dvf, &frame, windows.dvf)?;
    let warped = warp_coords(&frame, &u, model.config.margin)?;
    Ok((canonical_forward(&model.canonical, &warped, windows.canonical)?, u))
}

/// Canonical image at identity coordinates.
pub fn canonical_image<T: Real>(model: &Model<T>, h: usize, w: usize, window: LevelWindow) -> Result<ComplexImage<T>> {
    let frame = FrameGrid::new(h, w, 0, 1)?;
    let warped = warp_coords(&frame, &DvfField::<T>::zeros(h, w), model.config.margin)?;
    canonical_forward(&model.canonical, &warped, window)
}

/// `[2, H, W]` (or the first image of a batch) as a complex image.
pub fn pair_to_image<T: Real>(pair: &[T], h: usize, w: usize) -> Result<ComplexImage<T>> {
    let hw = h * w;
    if pair.len() < 2 * hw {
        return shape_err(format!("{} values cannot hold a 2x{h}x{w} pair", pair.len()));
    }
    ComplexImage::new(h, w, (0..hw).map(|s| Complex::new(pair[s], pair[hw + s])).collect())
}
