use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mocoinr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mocoinr")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_sim(dir: &Path, name: &str, sampling: &str) {
    let text = format!(r#"{{"schema_version": 1, "height": 16, "width": 16, "frames": 3, "sampling": {sampling}, "coils": 2}}"#);
    fs::write(dir.join(name), text).unwrap();
}

const TINY_TRAIN: &str = r#"{"schema_version": 1, "train": {
    "total_iters": 12,
    "frame_batch": 2,
    "model": {
        "dvf_grid": {"levels": 3, "log2_table_size": 8},
        "canonical_grid": {"levels": 4, "log2_table_size": 8},
        "decoder": {"width": 8}
    }
}}"#;

#[test]
fn simulate_prints_summary_and_counts_lines() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sim.json"),
        r#"{"schema_version": 1, "height": 64, "width": 64, "frames": 16, "sampling": {"kind": "vista", "af": 8}}"#,
    )
    .unwrap();
    let o = mocoinr(&["simulate", "--config", "sim.json", "--out", "d.kt"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("8 lines/frame of 64"), "{stdout}");
    let ds = mocoinr::phantom::load_dataset(&dir.path().join("d.kt")).unwrap();
    for t in 0..16 {
        match &ds.sampling {
            mocoinr::kspace::Sampling::Cartesian(m) => assert_eq!(m.kept_in_frame(t), 8),
            _ => panic!("expected a Cartesian mask"),
        }
    }
}

#[test]
fn simulate_radial_three_spokes() {
    let dir = tempfile::tempdir().unwrap();
    write_sim(dir.path(), "sim.json", r#"{"kind": "radial", "spokes_per_frame": 3}"#);
    let o = mocoinr(&["simulate", "--config", "sim.json", "--out", "d.kt"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("3 spokes/frame"), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn invalid_simulate_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sim.json"), r#"{"schema_version": 1, "height": 16, "width": 16, "frames": 3}"#).unwrap();
    let o = mocoinr(&["simulate", "--config", "sim.json", "--out", "d.kt"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sampling"));
    assert!(!dir.path().join("d.kt").exists());

    write_sim(dir.path(), "bad.json", r#"{"kind": "vista", "af": 2, "spokes": 1}"#);
    let o = mocoinr(&["simulate", "--config", "bad.json", "--out", "d.kt"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sampling"), "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(dir.path().join("v2.json"), r#"{"schema_version": 2, "height": 16, "width": 16, "frames": 3, "sampling": {"kind": "full"}}"#)
        .unwrap();
    let o = mocoinr(&["simulate", "--config", "v2.json", "--out", "d.kt"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn recon_eval_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_sim(p, "sim.json", r#"{"kind": "vista", "af": 2}"#);
    fs::write(p.join("train.json"), TINY_TRAIN).unwrap();
    assert_eq!(code(&mocoinr(&["simulate", "--config", "sim.json", "--out", "d.kt"], p)), 0);
    let before = fs::read(p.join("d.kt")).unwrap();

    for out in ["r1", "r2"] {
        let o = mocoinr(&["recon", "--dataset", "d.kt", "--config", "train.json", "--out", out, "--seed", "5"], p);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    // inputs are left untouched
    assert_eq!(fs::read(p.join("d.kt")).unwrap(), before);
    let pgms = fs::read_dir(p.join("r1")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm")).count();
    assert_eq!(pgms, 3 + 2);
    for f in ["report.csv", "checkpoint.mocock", "frames.c64", "dvf_quiver.csv"] {
        assert_eq!(fs::read(p.join("r1").join(f)).unwrap(), fs::read(p.join("r2").join(f)).unwrap(), "{f}");
    }
    let quiver = fs::read_to_string(p.join("r1/dvf_quiver.csv")).unwrap();
    assert!(quiver.starts_with("frame,row,col,x_px,y_px,ux_px,uy_px\n"));
    assert_eq!(quiver.lines().count(), 1 + 3 * 4 * 4);

    let o = mocoinr(&["eval", "--recon", "r1", "--dataset", "d.kt"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(p.join("r1/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,psnr_db,ssim,nrmse_roi,normalization");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("mocoinr,") && lines[2].starts_with("zero_filled,"));
    for row in &lines[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 5);
        for c in &cells[1..4] {
            c.parse::<f64>().unwrap();
        }
        assert_eq!(cells[4], "ref_max");
    }
}

#[test]
fn eval_of_ground_truth_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_sim(p, "sim.json", r#"{"kind": "full"}"#);
    assert_eq!(code(&mocoinr(&["simulate", "--config", "sim.json", "--out", "d.kt"], p)), 0);
    // a reconstruction directory holding the ground truth itself
    let ds = mocoinr::phantom::load_dataset(&p.join("d.kt")).unwrap();
    let gt = ds.ground_truth.unwrap();
    let r = p.join("gt");
    fs::create_dir(&r).unwrap();
    let mut raw = Vec::new();
    for f in gt.images.frames() {
        for z in f.data() {
            raw.extend_from_slice(&z.re.to_le_bytes());
            raw.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    fs::write(r.join("frames.c64"), raw).unwrap();
    fs::write(
        r.join("recon.json"),
        r#"{"schema_version": 1, "height": 16, "width": 16, "frames": 3, "iterations": 0,
            "outcome": {"status": "completed"}, "final_metrics": null, "normalization": null, "generator": "test"}"#,
    )
    .unwrap();
    let o = mocoinr(&["eval", "--recon", "gt", "--dataset", "d.kt", "--normalization", "ref-p99"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(r.join("metrics.csv")).unwrap();
    let cells: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(cells[1], "inf");
    assert_eq!(cells[2].parse::<f64>().unwrap(), 1.0);
    assert_eq!(cells[3].parse::<f64>().unwrap(), 0.0);
    assert_eq!(cells[4], "ref_p99");
}

#[test]
fn eval_without_ground_truth_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_sim(p, "sim.json", r#"{"kind": "vista", "af": 2}"#);
    fs::write(p.join("train.json"), TINY_TRAIN).unwrap();
    assert_eq!(code(&mocoinr(&["simulate", "--config", "sim.json", "--out", "d.kt"], p)), 0);
    assert_eq!(code(&mocoinr(&["recon", "--dataset", "d.kt", "--config", "train.json", "--out", "r"], p)), 0);
    let mut ds = mocoinr::phantom::load_dataset(&p.join("d.kt")).unwrap();
    ds.ground_truth = None;
    mocoinr::phantom::save_dataset(&p.join("nogt.kt"), &ds).unwrap();
    let o = mocoinr(&["eval", "--recon", "r", "--dataset", "nogt.kt"], p);
    assert_eq!(code(&o), 4);
}

#[test]
fn divergence_exits_3_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_sim(p, "sim.json", r#"{"kind": "vista", "af": 2}"#);
    assert_eq!(code(&mocoinr(&["simulate", "--config", "sim.json", "--out", "d.kt"], p)), 0);
    fs::write(
        p.join("wild.json"),
        r#"{"schema_version": 1, "train": {
            "total_iters": 200,
            "adam": {"lr_table": 50.0, "lr_decoder": 50.0},
            "divergence": {"factor": 2.0, "patience": 3},
            "model": {"dvf_grid": {"levels": 3, "log2_table_size": 8}, "canonical_grid": {"levels": 4, "log2_table_size": 8}, "decoder": {"width": 8}}
        }}"#,
    )
    .unwrap();
    let o = mocoinr(&["recon", "--dataset", "d.kt", "--config", "wild.json", "--out", "r"], p);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(p.join("r/report.csv").exists());
    assert!(p.join("r/recon.json").exists());
}

#[test]
fn ablation_flags_reach_the_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_sim(p, "sim.json", r#"{"kind": "vista", "af": 2}"#);
    fs::write(p.join("train.json"), TINY_TRAIN).unwrap();
    assert_eq!(code(&mocoinr(&["simulate", "--config", "sim.json", "--out", "d.kt"], p)), 0);
    let o = mocoinr(
        &["recon", "--dataset", "d.kt", "--config", "train.json", "--out", "r", "--ablate", "no-dvf-reg", "--ablate", "mlp-decoder", "--iters", "6"],
        p,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("r/train_config.json")).unwrap()).unwrap();
    assert_eq!(echo["ablation"]["disable_dvf_reg"], true);
    assert_eq!(echo["ablation"]["mlp_decoder"], true);
    assert_eq!(echo["ablation"]["disable_coarse2fine"], false);
    assert_eq!(echo["total_iters"], 6);
    assert_eq!(fs::read_to_string(p.join("r/report.csv")).unwrap().lines().count(), 7);
}

#[test]
fn verify_interp_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = mocoinr(&["verify", "interp"], dir.path());
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("vertex exactness 2d") && out.contains("checks passed"), "{out}");
    assert_eq!(code(&mocoinr(&["verify", "bogus"], dir.path())), 2);
}

#[test]
fn defaults_are_loadable_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for (kind, file) in [("simulate", "sim.json"), ("train", "train.json")] {
        let o = mocoinr(&["defaults", kind], p);
        assert_eq!(code(&o), 0);
        fs::write(p.join(file), &o.stdout).unwrap();
    }
    let text = fs::read_to_string(p.join("sim.json")).unwrap().replace("\"height\": 64", "\"height\": 16").replace("\"width\": 64", "\"width\": 16");
    fs::write(p.join("sim.json"), text).unwrap();
    let o = mocoinr(&["simulate", "--config", "sim.json", "--out", "d.kt", "--threads", "2"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
