//! Versioned JSON run manifests. Partial objects are merged over defaults
//! before strict deserialization, so a file only names what it changes.

use std::path::Path;

use mocoinr::phantom::{PhantomSpec, SamplingConfig};
use mocoinr::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub sampling: SamplingConfig,
    #[serde(default = "default_coils")]
    pub coils: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// Overrides merged over the default phantom for this geometry.
    #[serde(default)]
    pub phantom: Option<Value>,
}

fn default_coils() -> usize {
    4
}

impl SimulateConfig {
    pub fn example() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            height: 64,
            width: 64,
            frames: 16,
            sampling: SamplingConfig::Radial { spokes_per_frame: 8, readout: None, base_angle: 0.0 },
            coils: 4,
            noise_sigma: 0.0,
            seed: 0,
            phantom: None,
        }
    }

    /// Full phantom description with the overrides applied.
    pub fn phantom_spec(&self) -> Result<PhantomSpec, Failure> {
        let base = PhantomSpec::desk(self.height, self.width, self.frames);
        let Some(patch) = &self.phantom else {
            return Ok(base);
        };
        let mut v = serde_json::to_value(&base).map_err(|e| Failure::Other(e.to_string()))?;
        merge(&mut v, patch.clone());
        let spec: PhantomSpec = strict(v, "phantom")?;
        if (spec.h, spec.w, spec.frames) != (self.height, self.width, self.frames) {
            return Err(Failure::Config("phantom: h, w and frames must match height, width and frames".into()));
        }
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl Preset {
    pub fn train(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::paper(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReconFile {
    schema_version: u32,
    #[serde(default)]
    preset: Preset,
    #[serde(default)]
    train: Option<Value>,
}

/// Training configuration from an optional manifest; without one the
/// preset is used unchanged.
pub fn load_train_config(path: Option<&Path>, preset: Option<Preset>) -> Result<TrainConfig, Failure> {
    let Some(path) = path else {
        return Ok(preset.unwrap_or_default().train());
    };
    let file: ReconFile = strict(read_json(path)?, "")?;
    check_version(file.schema_version)?;
    let mut v = serde_json::to_value(preset.unwrap_or(file.preset).train()).map_err(|e| Failure::Other(e.to_string()))?;
    if let Some(patch) = file.train {
        merge(&mut v, patch);
    }
    strict(v, "train")
}

pub fn load_simulate_config(path: &Path) -> Result<SimulateConfig, Failure> {
    let cfg: SimulateConfig = strict(read_json(path)?, "")?;
    check_version(cfg.schema_version)?;
    Ok(cfg)
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn check_version(v: u32) -> Result<(), Failure> {
    if v != SCHEMA_VERSION {
        return Err(Failure::Config(format!("schema_version: {v} is not supported, expected {SCHEMA_VERSION}")));
    }
    Ok(())
}

/// Deserializes with the failing field path in the error; `prefix` names
/// where `v` sits in the file.
fn strict<T: DeserializeOwned>(v: Value, prefix: &str) -> Result<T, Failure> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner == ".") {
            (true, true) => "(top level)".to_string(),
            (true, false) => inner,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{inner}"),
        };
        Failure::Config(format!("{path}: {}", e.into_inner()))
    })
}

/// Recursive object merge; non-object values in `patch` replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
