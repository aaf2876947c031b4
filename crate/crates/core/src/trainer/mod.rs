//! Joint optimization of the displacement and canonical networks against
//! measured k-space, with the coarse-to-fine level schedule.

mod adam;
mod report;

pub use adam::{adam_update, Adam, AdamConfig};
pub use report::{IterationRecord, Outcome, TrainReport, REPORT_COLUMNS};

use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::hashenc::{HashGridConfig, LevelWindow};
use crate::kspace::{ComplexImage, DynamicImage, FrameOperator};
use crate::metrics::{evaluate, Normalization};
use crate::nets::{
    build_frames, canonical_image, predict_frame, DecoderConfig, DecoderKind, DvfField, FrameGraph, Model, ModelConfig,
    ModelVars, Windows, CANONICAL_MARGIN,
};
use crate::phantom::KtDataset;
use crate::real::Real;

/// Weights of the data-consistency and displacement-regularization terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub dc: f64,
    /// Mean `|u|`.
    pub sparsity: f64,
    /// Mean `|du/dx| + |du/dy|`.
    pub gradient: f64,
    /// Mean `|laplacian u|`.
    pub laplacian: f64,
    /// Mean `|u_{t+1} - u_t|` over consecutive frames of the batch; off by
    /// default.
    #[serde(default)]
    pub temporal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { dc: 1.0, sparsity: 1.0, gradient: 1.0, laplacian: 1.0, temporal: 0.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    /// Drop all displacement regularization terms.
    #[serde(default)]
    pub disable_dvf_reg: bool,
    /// Train every level for the whole run.
    #[serde(default)]
    pub disable_coarse2fine: bool,
    /// Per-pixel decoders (1x1 convolutions) instead of 3x3.
    #[serde(default)]
    pub mlp_decoder: bool,
}

/// Abort when the loss stays above `factor` times its first value for
/// `patience` consecutive iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceGuard {
    pub factor: f64,
    pub patience: usize,
}

impl Default for DivergenceGuard {
    fn default() -> Self {
        Self { factor: 10.0, patience: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub adam: AdamConfig,
    #[serde(default)]
    pub weights: LossWeights,
    /// Frames per iteration; `None` uses every frame.
    #[serde(default)]
    pub frame_batch: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ablation: Ablation,
    pub model: ModelConfig,
    #[serde(default)]
    pub divergence: DivergenceGuard,
    #[serde(default)]
    pub normalization: Normalization,
}

impl TrainConfig {
    /// Published network sizes and the 1200-iteration budget.
    pub fn paper() -> Self {
        Self {
            total_iters: 1200,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            frame_batch: None,
            seed: 0,
            ablation: Ablation::default(),
            model: ModelConfig::paper(),
            divergence: DivergenceGuard::default(),
            normalization: Normalization::RefMax,
        }
    }

    /// Reduced networks for 64x64 problems on one CPU core.
    pub fn desk() -> Self {
        let grid = |levels, feats, dims| HashGridConfig {
            n_min: 2,
            growth: 2.0,
            levels,
            feats_per_level: feats,
            log2_table_size: 14,
            dims,
            frozen_levels_contribute: true,
        };
        Self {
            total_iters: 600,
            frame_batch: Some(4),
            model: ModelConfig {
                dvf_grid: grid(8, 2, 3),
                canonical_grid: grid(10, 4, 2),
                decoder: DecoderConfig { kind: DecoderKind::Cnn, width: 32 },
                margin: CANONICAL_MARGIN,
            },
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters < 3 {
            return invalid("total_iters must be at least 3 (one per schedule stage)");
        }
        let w = &self.weights;
        if [w.dc, w.sparsity, w.gradient, w.laplacian, w.temporal].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("loss weights must be finite and non-negative");
        }
        if self.frame_batch == Some(0) {
            return invalid("frame_batch must be positive");
        }
        if !(self.divergence.factor > 1.0) || self.divergence.patience == 0 {
            return invalid("divergence guard needs factor > 1 and patience >= 1");
        }
        self.adam.validate()?;
        self.effective_model().validate()
    }

    /// Model configuration with the decoder ablation applied.
    pub fn effective_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        if self.ablation.mlp_decoder {
            m.decoder.kind = DecoderKind::Mlp;
        }
        m
    }

    /// Weights with the regularization ablation applied.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights.clone();
        if self.ablation.disable_dvf_reg {
            w.sparsity = 0.0;
            w.gradient = 0.0;
            w.laplacian = 0.0;
            w.temporal = 0.0;
        }
        w
    }

    pub fn windows(&self, model: &ModelConfig, iteration: usize) -> Windows {
        if self.ablation.disable_coarse2fine {
            Windows::full(model)
        } else {
            Windows::scheduled(model, iteration, self.total_iters)
        }
    }

    /// Windows used for inference after training.
    pub fn final_windows(&self, model: &ModelConfig) -> Windows {
        self.windows(model, self.total_iters - 1)
    }
}

/// Mean Charbonnier-smoothed modulus of the complex residual; `pred` and
/// `target` are `[N, 2]` real/imaginary pairs.
pub fn loss_dc<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return shape_err(format!("prediction {:?} vs target {:?}", tape.shape(pred), tape.shape(target)));
    }
    let r = tape.sub(pred, target)?;
    let m = tape.complex_abs_smooth(r)?;
    tape.mean(m)
}

/// Displacement regularizers on `[B, 2, H, W]`, each a mean of smoothed
/// absolute values.
#[derive(Clone, Copy, Debug)]
pub struct DvfTerms {
    pub sparsity: Var,
    pub gradient: Var,
    pub laplacian: Var,
}

pub fn loss_dvf<T: Real>(tape: &mut Tape<T>, u: Var) -> Result<DvfTerms> {
    let mean_abs = |tape: &mut Tape<T>, v: Var| -> Result<Var> {
        let a = tape.abs_smooth(v)?;
        tape.mean(a)
    };
    let sparsity = mean_abs(tape, u)?;
    let dx = tape.finite_diff_x(u)?;
    let dy = tape.finite_diff_y(u)?;
    let gx = mean_abs(tape, dx)?;
    let gy = mean_abs(tape, dy)?;
    let gradient = tape.add(gx, gy)?;
    let lap = tape.laplacian(u)?;
    let laplacian = mean_abs(tape, lap)?;
    Ok(DvfTerms { sparsity, gradient, laplacian })
}

/// Mean smoothed `|u_{b+1} - u_b|` over the batch axis; zero for a single
/// frame.
pub fn loss_temporal<T: Real>(tape: &mut Tape<T>, u: Var) -> Result<Var> {
    if tape.shape(u)[0] < 2 {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let d = tape.diff(u, 0)?;
    let a = tape.abs_smooth(d)?;
    tape.mean(a)
}

/// Tape handles of the objective.
#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    pub total: Var,
    pub dc: Var,
    pub dvf: DvfTerms,
    pub temporal: Var,
    pub frames: FrameGraph,
}

/// Scalar values of the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub dc: f64,
    pub sparsity: f64,
    pub gradient: f64,
    pub laplacian: f64,
    pub temporal: f64,
}

impl LossGraph {
    pub fn values<T: Real>(&self, tape: &Tape<T>) -> LossValues {
        let v = |x: Var| tape.value(x).item().as_f64();
        LossValues {
            total: v(self.total),
            dc: v(self.dc),
            sparsity: v(self.dvf.sparsity),
            gradient: v(self.dvf.gradient),
            laplacian: v(self.dvf.laplacian),
            temporal: v(self.temporal),
        }
    }
}

/// One minibatch worth of measurements.
pub struct Batch<'a, T: Real> {
    pub frames: &'a [usize],
    /// Operators of the batch frames, in batch order.
    pub ops: Vec<Arc<FrameOperator<T>>>,
    /// Concatenated samples of the batch frames, `[N, 2]`.
    pub target: Tensor<T>,
}

impl<'a, T: Real> Batch<'a, T> {
    pub fn new(frames: &'a [usize], ops: &[Arc<FrameOperator<T>>], samples: &[Vec<Complex<T>>]) -> Result<Self> {
        let mut data = Vec::new();
        let mut batch_ops = Vec::with_capacity(frames.len());
        for &t in frames {
            let (op, y) = ops.get(t).zip(samples.get(t)).ok_or_else(|| Error::InvalidArgument(format!("frame {t} out of range")))?;
            if y.len() != op.coils().count() * op.samples_per_coil() {
                return shape_err(format!("frame {t} has {} samples, operator expects {}", y.len(), op.coils().count() * op.samples_per_coil()));
            }
            data.extend(y.iter().flat_map(|c| [c.re, c.im]));
            batch_ops.push(op.clone());
        }
        let n = data.len() / 2;
        Ok(Self { frames, ops: batch_ops, target: Tensor::new(&[n, 2], data)? })
    }
}

/// Records the full objective for `batch` on `tape`.
pub fn training_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &ModelConfig,
    vars: &ModelVars,
    batch: &Batch<'_, T>,
    sequence: (usize, usize, usize),
    windows: Windows,
    weights: &LossWeights,
) -> Result<LossGraph> {
    let (frames, h, w) = sequence;
    let graph = build_frames(tape, model, vars, batch.frames, frames, h, w, windows, false)?;
    let pred = tape.acquire(graph.image, &batch.ops)?;
    let target = tape.constant(batch.target.clone());
    let dc = loss_dc(tape, pred, target)?;
    let dvf = loss_dvf(tape, graph.dvf)?;
    let temporal = loss_temporal(tape, graph.dvf)?;
    let mut total = tape.scalar_mul(dc, T::lit(weights.dc))?;
    for (term, wt) in [(dvf.sparsity, weights.sparsity), (dvf.gradient, weights.gradient), (dvf.laplacian, weights.laplacian), (temporal, weights.temporal)] {
        if wt != 0.0 {
            let s = tape.scalar_mul(term, T::lit(wt))?;
            total = tape.add(total, s)?;
        }
    }
    Ok(LossGraph { total, dc, dvf, temporal, frames: graph })
}

/// Reconstructed sequence, displacement fields, and canonical image.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction<T> {
    pub images: DynamicImage<T>,
    pub dvfs: Vec<DvfField<T>>,
    pub canonical: ComplexImage<T>,
}

pub fn reconstruct<T: Real>(model: &Model<T>, h: usize, w: usize, frames: usize, windows: Windows) -> Result<Reconstruction<T>> {
    let mut images = Vec::with_capacity(frames);
    let mut dvfs = Vec::with_capacity(frames);
    for t in 0..frames {
        let (x, u) = predict_frame(model, t, frames, h, w, windows)?;
        images.push(x);
        dvfs.push(u);
    }
    Ok(Reconstruction {
        images: DynamicImage::new(images)?,
        dvfs,
        canonical: canonical_image(model, h, w, windows.canonical)?,
    })
}

/// Training result. `timing` holds per-iteration wall-clock seconds and is
/// kept apart from the (deterministic) report.
pub struct Fit {
    pub model: Model<f32>,
    pub report: TrainReport,
    pub timing: Vec<f64>,
}

/// Frame subsets, one per iteration, drawn from a stream independent of
/// the model initialization.
pub fn batch_schedule(frames: usize, batch: Option<usize>, total_iters: usize, seed: u64) -> Vec<Vec<usize>> {
    let b = batch.unwrap_or(frames).min(frames);
    if b == frames {
        return vec![(0..frames).collect(); total_iters];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..total_iters)
        .map(|_| {
            let mut v = sample(&mut rng, frames, b).into_vec();
            v.sort_unstable();
            v
        })
        .collect()
}

pub fn fit(dataset: &KtDataset, config: &TrainConfig) -> Result<Fit> {
    fit_with(dataset, config, |_, _| {})
}

/// [`fit`] with a callback after every iteration.
pub fn fit_with<F>(dataset: &KtDataset, config: &TrainConfig, mut observer: F) -> Result<Fit>
where
    F: FnMut(&IterationRecord, &Model<f32>),
{
    config.validate()?;
    dataset.validate()?;
    let model_cfg = config.effective_model();
    let weights = config.effective_weights();
    let mut model = Model::<f32>::new(model_cfg.clone(), config.seed)?;
    let ops = dataset.frame_operators()?;
    let (frames, h, w) = (dataset.frames, dataset.h, dataset.w);
    let schedule = batch_schedule(frames, config.frame_batch, config.total_iters, config.seed);
    let mut adam = Adam::new(config.adam.clone(), &model);
    let mut report = TrainReport::default();
    let mut timing = Vec::with_capacity(config.total_iters);
    let mut initial = None;
    let mut above = 0usize;

    for (it, batch_frames) in schedule.iter().enumerate() {
        let start = Instant::now();
        let windows = config.windows(&model_cfg, it);
        let batch = Batch::new(batch_frames, &ops, &dataset.samples)?;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true);
        let graph = match training_loss(&mut tape, &model_cfg, &vars, &batch, (frames, h, w), windows, &weights) {
            Ok(g) => g,
            Err(Error::Data(msg)) => {
                report.outcome = Outcome::Diverged { iteration: it, reason: msg };
                break;
            }
            Err(e) => return Err(e),
        };
        let values = graph.values(&tape);
        let grads = tape.backward(graph.total)?;
        let all = vars.all();
        let skipped = !adam.step(&mut model, &all, &grads, windows);
        let record = IterationRecord::new(it, &values, graph.frames.saturated, windows, batch_frames.len(), skipped);
        timing.push(start.elapsed().as_secs_f64());
        observer(&record, &model);
        report.records.push(record);

        let first = *initial.get_or_insert(values.total);
        if values.total > config.divergence.factor * first {
            above += 1;
            if above >= config.divergence.patience {
                report.outcome = Outcome::Diverged {
                    iteration: it,
                    reason: format!(
                        "loss {:.4e} stayed above {}x the initial {:.4e} for {} iterations",
                        values.total, config.divergence.factor, first, above
                    ),
                };
                break;
            }
        } else {
            above = 0;
        }
    }

    if let (Some(gt), Outcome::Completed) = (&dataset.ground_truth, &report.outcome) {
        let rec = reconstruct(&model, h, w, frames, config.final_windows(&model_cfg))?;
        report.final_metrics = Some(evaluate(&gt.images, &rec.images, &gt.roi, config.normalization)?);
        report.normalization = Some(config.normalization.label());
    }
    Ok(Fit { model, report, timing })
}

/// Level windows as the report stores them.
pub(crate) fn window_pair(w: LevelWindow) -> (usize, usize) {
    (w.lo(), w.hi())
}

#[cfg(test)]
mod tests;
