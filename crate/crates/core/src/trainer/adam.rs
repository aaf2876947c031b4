use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Var};
use crate::error::{invalid, Result};
use crate::hashenc::NetKind;
use crate::nets::{Model, ParamKind, Windows};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    /// Step size for hash tables.
    pub lr_table: f64,
    /// Step size for decoder weights and biases.
    pub lr_decoder: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr_table: 1e-2, lr_decoder: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_table >= 0.0
            && self.lr_decoder >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && [self.lr_table, self.lr_decoder].iter().all(|v| v.is_finite());
        if !ok {
            return invalid("Adam needs lr >= 0, betas in [0, 1), eps > 0");
        }
        Ok(())
    }
}

/// Bias-corrected Adam update of one tensor; `step` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Real>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], step: u64, lr: f64, cfg: &AdamConfig) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 / (1.0 - cfg.beta1.powi(step as i32)));
    let c2 = T::lit(1.0 / (1.0 - cfg.beta2.powi(step as i32)));
    let (lr, eps, one) = (T::lit(lr), T::lit(cfg.eps), T::one());
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        *p -= lr * (*m * c1) / ((*v * c2).sqrt() + eps);
    }
}

/// Per-tensor moments and step counts, aligned with
/// [`Model::parameters`]. Tables outside the trainable window keep their
/// values and moments untouched.
pub struct Adam<T> {
    config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    steps: Vec<u64>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, model: &Model<T>) -> Self {
        let params = model.parameters();
        Self {
            config,
            m: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            steps: vec![0; params.len()],
        }
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    /// Applies one update. Returns false, leaving everything unchanged, if
    /// any gradient is non-finite.
    pub fn step(&mut self, model: &mut Model<T>, vars: &[Var], grads: &Gradients<T>, windows: Windows) -> bool {
        let finite = vars.iter().all(|&v| grads.get(v).is_none_or(|g| g.is_finite()));
        if !finite {
            log::warn!("non-finite gradient; skipping the optimizer step");
            return false;
        }
        for (k, (p, &var)) in model.parameters_mut().into_iter().zip(vars).enumerate() {
            let (active, lr) = match p.kind {
                ParamKind::Table { net, level } => {
                    let w = match net {
                        NetKind::Dvf => windows.dvf,
                        NetKind::Canonical => windows.canonical,
                    };
                    (w.trains(level), self.config.lr_table)
                }
                ParamKind::Decoder { .. } => (true, self.config.lr_decoder),
            };
            let Some(g) = grads.get(var).filter(|_| active) else { continue };
            self.steps[k] += 1;
            adam_update(p.data, g.data(), &mut self.m[k], &mut self.v[k], self.steps[k], lr, &self.config);
        }
        true
    }
}
