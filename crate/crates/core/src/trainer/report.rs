use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{window_pair, LossValues};
use crate::error::{Error, Result};
use crate::metrics::MetricSet;
use crate::nets::Windows;

/// Header of [`TrainReport::to_csv`].
pub const REPORT_COLUMNS: [&str; 15] = [
    "iteration",
    "loss",
    "dc",
    "sparsity",
    "gradient",
    "laplacian",
    "temporal",
    "saturated",
    "dvf_lo",
    "dvf_hi",
    "canonical_lo",
    "canonical_hi",
    "batch",
    "skipped",
    "stage",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub dc: f64,
    pub sparsity: f64,
    pub gradient: f64,
    pub laplacian: f64,
    pub temporal: f64,
    /// Warped coordinates clamped to the canonical margin.
    pub saturated: usize,
    pub dvf_window: (usize, usize),
    pub canonical_window: (usize, usize),
    pub batch: usize,
    /// The optimizer step was skipped (non-finite gradient).
    pub skipped: bool,
}

impl IterationRecord {
    pub(crate) fn new(iteration: usize, v: &LossValues, saturated: usize, windows: Windows, batch: usize, skipped: bool) -> Self {
        Self {
            iteration,
            loss: v.total,
            dc: v.dc,
            sparsity: v.sparsity,
            gradient: v.gradient,
            laplacian: v.laplacian,
            temporal: v.temporal,
            saturated,
            dvf_window: window_pair(windows.dvf),
            canonical_window: window_pair(windows.canonical),
            batch,
            skipped,
        }
    }

    /// Identifies the schedule stage by its window pair.
    fn stage_label(&self) -> String {
        format!("{}-{}/{}-{}", self.dvf_window.0, self.dvf_window.1, self.canonical_window.0, self.canonical_window.1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    #[default]
    Completed,
    Diverged { iteration: usize, reason: String },
}

/// Per-iteration loss components plus the final evaluation. Contains no
/// wall-clock data, so identical seeds give identical reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
    pub outcome: Outcome,
    pub final_metrics: Option<MetricSet>,
    pub normalization: Option<String>,
}

impl TrainReport {
    pub fn diverged(&self) -> bool {
        matches!(self.outcome, Outcome::Diverged { .. })
    }

    pub fn first(&self) -> Option<&IterationRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// One row per iteration; floats use the shortest representation that
    /// round-trips.
    pub fn to_csv(&self) -> String {
        let mut s = REPORT_COLUMNS.join(",");
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.loss,
                r.dc,
                r.sparsity,
                r.gradient,
                r.laplacian,
                r.temporal,
                r.saturated,
                r.dvf_window.0,
                r.dvf_window.1,
                r.canonical_window.0,
                r.canonical_window.1,
                r.batch,
                r.skipped as u8,
                r.stage_label()
            );
        }
        s
    }

    /// Parses [`TrainReport::to_csv`] output (records only).
    pub fn records_from_csv(text: &str) -> Result<Vec<IterationRecord>> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_COLUMNS.join(",").as_str()) {
            return Err(Error::Format("unexpected report header".into()));
        }
        lines
            .enumerate()
            .map(|(n, line)| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != REPORT_COLUMNS.len() {
                    return Err(Error::Format(format!("row {n} has {} fields", f.len())));
                }
                let bad = |k: usize| Error::Format(format!("row {n}: bad {} field {:?}", REPORT_COLUMNS[k], f[k]));
                let u = |k: usize| f[k].parse::<usize>().map_err(|_| bad(k));
                let x = |k: usize| f[k].parse::<f64>().map_err(|_| bad(k));
                Ok(IterationRecord {
                    iteration: u(0)?,
                    loss: x(1)?,
                    dc: x(2)?,
                    sparsity: x(3)?,
                    gradient: x(4)?,
                    laplacian: x(5)?,
                    temporal: x(6)?,
                    saturated: u(7)?,
                    dvf_window: (u(8)?, u(9)?),
                    canonical_window: (u(10)?, u(11)?),
                    batch: u(12)?,
                    skipped: u(13)? != 0,
                })
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
