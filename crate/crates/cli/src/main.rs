mod artifacts;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mocoinr::metrics::{evaluate, MetricSet, Normalization};
use mocoinr::nets::{save_checkpoint, CheckpointMeta};
use mocoinr::phantom::{load_dataset, save_dataset, simulate, KtDataset};
use mocoinr::trainer::{fit_with, reconstruct, Outcome};
use mocoinr::verify::{self, Suite};

use artifacts::Manifest;
use config::{Preset, SimulateConfig, SCHEMA_VERSION};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum Failure {
    /// Checks failed or an operation errored.
    Other(String),
    /// Unreadable or invalid configuration.
    Config(String),
    Diverged(String),
    NoGroundTruth,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Diverged(_) => 3,
            Failure::NoGroundTruth => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Other(m) => write!(f, "{m}"),
            Failure::Config(m) => write!(f, "invalid configuration: {m}"),
            Failure::Diverged(m) => write!(f, "training diverged: {m}"),
            Failure::NoGroundTruth => write!(f, "dataset has no ground truth to evaluate against"),
        }
    }
}

impl From<mocoinr::Error> for Failure {
    fn from(e: mocoinr::Error) -> Self {
        match e {
            mocoinr::Error::InvalidArgument(m) => Failure::Config(m),
            mocoinr::Error::Diverged { iteration, reason } => Failure::Diverged(format!("iteration {iteration}: {reason}")),
            other => Failure::Other(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "mocoinr", version, about = "Motion-compensated neural reconstruction of dynamic MRI")]
struct Cli {
    /// Worker threads for per-frame work; output does not depend on the count.
    #[arg(long, global = true, env = "MOCOINR_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Ablate {
    NoDvfReg,
    NoCoarse2fine,
    MlpDecoder,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DefaultsKind {
    Simulate,
    Train,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an undersampled multi-coil acquisition of the cardiac phantom.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Fit the motion and canonical networks to a dataset and write the reconstruction.
    Recon {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training manifest; fields not named keep the preset's values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        frame_batch: Option<usize>,
        #[arg(long, value_enum)]
        ablate: Vec<Ablate>,
        /// Pixel spacing of the DVF quiver samples.
        #[arg(long, default_value_t = 4)]
        quiver_stride: usize,
    },
    /// Score a reconstruction directory against the dataset's ground truth.
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to metrics.csv inside the reconstruction directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `ref-max` or `ref-p<percentile>`, e.g. `ref-p99.5`.
        #[arg(long, default_value = "ref-max", value_parser = parse_normalization)]
        normalization: Normalization,
    },
    /// Run the double-precision self-check suites.
    Verify {
        #[arg(default_value = "all", value_parser = |s: &str| s.parse::<Suite>().map_err(|e| e.to_string()))]
        suite: Suite,
    },
    /// Print a complete example manifest.
    Defaults {
        #[arg(value_enum)]
        kind: DefaultsKind,
    },
}

fn parse_normalization(s: &str) -> Result<Normalization, String> {
    if s == "ref-max" {
        return Ok(Normalization::RefMax);
    }
    match s.strip_prefix("ref-p").map(str::parse::<f64>) {
        Some(Ok(p)) if p > 0.0 && p <= 100.0 => Ok(Normalization::RefPercentile { p }),
        _ => Err(format!("{s:?} is neither ref-max nor ref-p<percentile in (0, 100]")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| Failure::Other(e.to_string()))
        .and_then(|_| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { config, out, seed, noise_sigma } => cmd_simulate(&config, &out, seed, noise_sigma),
        Command::Recon { dataset, out, config, preset, seed, iters, frame_batch, ablate, quiver_stride } => {
            let mut cfg = config::load_train_config(config.as_deref(), preset)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = iters {
                cfg.total_iters = n;
            }
            if let Some(b) = frame_batch {
                cfg.frame_batch = Some(b);
            }
            for a in ablate {
                match a {
                    Ablate::NoDvfReg => cfg.ablation.disable_dvf_reg = true,
                    Ablate::NoCoarse2fine => cfg.ablation.disable_coarse2fine = true,
                    Ablate::MlpDecoder => cfg.ablation.mlp_decoder = true,
                }
            }
            cfg.validate()?;
            cmd_recon(&dataset, &out, &cfg, quiver_stride)
        }
        Command::Eval { recon, dataset, out, normalization } => {
            let out = out.unwrap_or_else(|| recon.join("metrics.csv"));
            cmd_eval(&recon, &dataset, &out, normalization)
        }
        Command::Verify { suite } => cmd_verify(suite),
        Command::Defaults { kind } => {
            let text = match kind {
                DefaultsKind::Simulate => serde_json::to_string_pretty(&SimulateConfig::example()),
                DefaultsKind::Train => serde_json::to_string_pretty(&serde_json::json!({
                    "schema_version": SCHEMA_VERSION,
                    "preset": Preset::Desk,
                    "train": Preset::Desk.train(),
                })),
            };
            println!("{}", text.map_err(|e| Failure::Other(e.to_string()))?);
            Ok(())
        }
    }
}

fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>, noise: Option<f64>) -> Result<(), Failure> {
    let mut cfg = config::load_simulate_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = noise {
        cfg.noise_sigma = n;
    }
    let spec = cfg.phantom_spec()?;
    let ds = simulate(&spec, &cfg.sampling, cfg.coils, cfg.noise_sigma, cfg.seed)?;
    save_dataset(out, &ds)?;
    println!("{}", ds.sampling.summary(ds.h, ds.w));
    println!("wrote {} ({}x{}, {} frames, {} coils)", out.display(), ds.h, ds.w, ds.frames, ds.coil_count());
    Ok(())
}

fn cmd_recon(dataset: &Path, out: &Path, cfg: &mocoinr::trainer::TrainConfig, stride: usize) -> Result<(), Failure> {
    let ds = load_dataset(dataset)?;
    fs::create_dir_all(out).map_err(|e| Failure::Other(format!("{}: {e}", out.display())))?;
    let echo = serde_json::to_string_pretty(cfg).map_err(|e| Failure::Other(e.to_string()))?;
    artifacts::write(&out.join(artifacts::CONFIG_ECHO), echo.as_bytes())?;

    let every = (cfg.total_iters / 10).max(1);
    let fit = fit_with(&ds, cfg, |r, _| {
        if r.iteration % every == 0 || r.iteration + 1 == cfg.total_iters {
            log::info!("iteration {} loss {:.5e} dc {:.5e}", r.iteration, r.loss, r.dc);
        }
    })?;
    fit.report.write_csv(&out.join(artifacts::REPORT))?;
    artifacts::write_timing(&out.join(artifacts::TIMING), &fit.timing)?;
    let iterations = fit.report.records.len();
    save_checkpoint(&out.join(artifacts::CHECKPOINT), &fit.model, &CheckpointMeta { iteration: iterations, seed: cfg.seed })?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        height: ds.h,
        width: ds.w,
        frames: ds.frames,
        iterations,
        outcome: fit.report.outcome.clone(),
        final_metrics: fit.report.final_metrics,
        normalization: fit.report.normalization.clone(),
        generator: format!("mocoinr {}", env!("CARGO_PKG_VERSION")),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Other(e.to_string()))?;
    artifacts::write(&out.join(artifacts::MANIFEST), text.as_bytes())?;
    if let Outcome::Diverged { iteration, reason } = &fit.report.outcome {
        return Err(Failure::Diverged(format!("iteration {iteration}: {reason}; report in {}", out.display())));
    }

    let model_cfg = cfg.effective_model();
    let rec = reconstruct(&fit.model, ds.h, ds.w, ds.frames, cfg.final_windows(&model_cfg))?;
    let images = artifacts::write_images(out, &rec.images, &rec.canonical, &rec.dvfs)?;
    artifacts::write_quiver(&out.join(artifacts::QUIVER), &rec.dvfs, ds.h, ds.w, stride)?;
    let total: f64 = fit.timing.iter().sum();
    println!("{iterations} iterations in {total:.1} s; wrote {images} images to {}", out.display());
    if let Some(m) = fit.report.final_metrics {
        println!("psnr {:.2} dB  ssim {:.4}  nrmse_roi {:.4}", m.psnr, m.ssim, m.nrmse_roi);
    }
    Ok(())
}

pub const METRICS_COLUMNS: &str = "method,psnr_db,ssim,nrmse_roi,normalization";

fn metrics_row(method: &str, m: &MetricSet, norm: &Normalization) -> String {
    format!("{method},{},{},{},{}", m.psnr, m.ssim, m.nrmse_roi, norm.label())
}

fn cmd_eval(recon: &Path, dataset: &Path, out: &Path, norm: Normalization) -> Result<(), Failure> {
    let ds: KtDataset = load_dataset(dataset)?;
    let gt = ds.ground_truth.as_ref().ok_or(Failure::NoGroundTruth)?;
    let manifest = artifacts::read_manifest(recon)?;
    if (manifest.height, manifest.width, manifest.frames) != (ds.h, ds.w, ds.frames) {
        return Err(Failure::Other(format!(
            "reconstruction is {}x{}x{} but the dataset is {}x{}x{}",
            manifest.height, manifest.width, manifest.frames, ds.h, ds.w, ds.frames
        )));
    }
    let images = artifacts::read_frames(recon, &manifest)?;
    let ours = evaluate(&gt.images, &images, &gt.roi, norm)?;
    let zf = evaluate(&gt.images, &ds.zero_filled()?, &gt.roi, norm)?;
    let mut csv = format!("{METRICS_COLUMNS}\n");
    for (name, m) in [("mocoinr", &ours), ("zero_filled", &zf)] {
        csv.push_str(&metrics_row(name, m, &norm));
        csv.push('\n');
        println!("{name:<12} psnr {:>7.2} dB  ssim {:.4}  nrmse_roi {:.4}", m.psnr, m.ssim, m.nrmse_roi);
    }
    artifacts::write(out, csv.as_bytes())
}

fn cmd_verify(suite: Suite) -> Result<(), Failure> {
    let checks = verify::run(suite)?;
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    println!("{:<9}  {:<width$}  {:>10}  {:>9}  status", "suite", "check", "worst", "tolerance");
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<9}  {:<width$}  {:>10.3e}  {:>9.1e}  {status}", c.suite.name(), c.name, c.error, c.tolerance);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("{} checks passed", checks.len());
        Ok(())
    } else {
        Err(Failure::Other(format!("{} of {} checks failed: {}", failed.len(), checks.len(), failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_flag() {
        assert_eq!(parse_normalization("ref-max").unwrap(), Normalization::RefMax);
        assert_eq!(parse_normalization("ref-p99.5").unwrap(), Normalization::RefPercentile { p: 99.5 });
        assert!(parse_normalization("ref-p0").is_err());
        assert!(parse_normalization("max").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
