use super::*;
use crate::autodiff::{gradcheck, Gradients};
use crate::hashenc::NetKind;
use crate::kspace::Sampling;
use crate::nets::{checkpoint_bytes, CheckpointMeta, ParamKind};
use crate::phantom::{simulate, PhantomSpec, SamplingConfig};
use proptest::prelude::{prop_assert, proptest};
use rand::Rng;

fn tiny_grid(dims: usize, levels: usize, feats: usize) -> HashGridConfig {
    HashGridConfig { n_min: 2, growth: 1.6, levels, feats_per_level: feats, log2_table_size: 7, dims, frozen_levels_contribute: true }
}

fn tiny_model(kind: DecoderKind) -> ModelConfig {
    ModelConfig {
        dvf_grid: tiny_grid(3, 3, 2),
        canonical_grid: tiny_grid(2, 4, 2),
        decoder: DecoderConfig { kind, width: 4 },
        margin: CANONICAL_MARGIN,
    }
}

fn tiny_config(iters: usize) -> TrainConfig {
    TrainConfig {
        total_iters: iters,
        frame_batch: Some(2),
        model: ModelConfig { dvf_grid: tiny_grid(3, 4, 2), canonical_grid: tiny_grid(2, 6, 2), ..tiny_model(DecoderKind::Cnn) },
        ..TrainConfig::paper()
    }
}

fn tiny_dataset(sampling: SamplingConfig) -> KtDataset {
    simulate(&PhantomSpec::desk(12, 12, 4), &sampling, 2, 0.0, 3).unwrap()
}

fn pairs(tape: &mut Tape<f64>, data: Vec<f64>) -> Var {
    let n = data.len() / 2;
    tape.constant(Tensor::new(&[n, 2], data).unwrap())
}

#[test]
fn dc_loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let (a, b) = (pairs(&mut tape, y.clone()), pairs(&mut tape, y.clone()));
    let same = loss_dc(&mut tape, a, b).unwrap();
    assert!(tape.value(same).item() < 1e-5);
    let shifted: Vec<f64> = y.chunks(2).flat_map(|c| [c[0] + 0.3, c[1] - 0.4]).collect();
    let s = pairs(&mut tape, shifted);
    let l = loss_dc(&mut tape, s, a).unwrap();
    assert!((tape.value(l).item() - 0.5).abs() < 1e-6);
    // straight-line oracle
    let z: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
    let zv = pairs(&mut tape, z.clone());
    let l = loss_dc(&mut tape, zv, a).unwrap();
    let e = CHARBONNIER;
    let mut acc = 0.0;
    for k in 0..20 {
        let (dr, di) = (z[2 * k] - y[2 * k], z[2 * k + 1] - y[2 * k + 1]);
        acc += (dr * dr + di * di + e * e).sqrt() - e;
    }
    assert!((tape.value(l).item() - acc / 20.0).abs() < 1e-12);
    let short = pairs(&mut tape, vec![0.0; 38]);
    assert!(loss_dc(&mut tape, short, a).is_err());
}

const CHARBONNIER: f64 = crate::autodiff::CHARBONNIER_EPS;

fn dvf_terms(u: Vec<f64>, shape: [usize; 4]) -> [f64; 3] {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::new(&shape, u).unwrap());
    let t = loss_dvf(&mut tape, v).unwrap();
    [t.sparsity, t.gradient, t.laplacian].map(|x| tape.value(x).item())
}

#[test]
fn dvf_loss_examples() {
    let shape = [2, 2, 5, 6];
    assert_eq!(dvf_terms(vec![0.0; 120], shape), [0.0; 3]);
    // constant field: only the magnitude term survives
    let c: Vec<f64> = (0..120).map(|k| if (k / 30) % 2 == 0 { 0.2 } else { -0.1 }).collect();
    let [s, g, l] = dvf_terms(c, shape);
    assert!((s - 0.15).abs() < 1e-6 && g.abs() < 1e-12 && l.abs() < 1e-12);
    // ramp along x in both components: slope in the gradient term, flat
    // Laplacian
    let ramp: Vec<f64> = (0..120).map(|k| 0.03 * (k % 6) as f64).collect();
    let [_, g, l] = dvf_terms(ramp, shape);
    assert!((g - 0.03).abs() < 1e-6, "{g}");
    assert!(l.abs() < 1e-9, "{l}");
}

#[test]
fn temporal_term() {
    let mut tape = Tape::<f64>::new();
    let one = tape.constant(Tensor::full(&[1, 2, 3, 3], 0.5));
    let z = loss_temporal(&mut tape, one).unwrap();
    assert_eq!(tape.value(z).item(), 0.0);
    let data: Vec<f64> = (0..36).map(|k| if k < 18 { 0.0 } else { 0.25 }).collect();
    let two = tape.constant(Tensor::new(&[2, 2, 3, 3], data).unwrap());
    let d = loss_temporal(&mut tape, two).unwrap();
    assert!((tape.value(d).item() - 0.25).abs() < 1e-6);
}

#[test]
fn adam_first_step_and_zero_gradient() {
    let cfg = AdamConfig::default();
    let mut p = [1.0f64, 2.0, 3.0];
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    adam_update(&mut p, &[1.0, 0.0, 1.0], &mut m, &mut v, 1, 0.01, &cfg);
    assert!((p[0] - 0.99).abs() < 1e-9);
    assert_eq!(p[1], 2.0);
    assert!((p[2] - 2.99).abs() < 1e-9);
    let mut eq = [0.25f64, 0.25];
    let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
    adam_update(&mut eq, &[0.3, 0.3], &mut m, &mut v, 1, 0.01, &cfg);
    assert_eq!(eq[0], eq[1]);
    let mut q = [5.0f64; 4];
    let (mut m, mut v) = ([0.0; 4], [0.0; 4]);
    for step in 1..20 {
        adam_update(&mut q, &[0.0; 4], &mut m, &mut v, step, 0.01, &cfg);
    }
    assert_eq!(q, [5.0; 4]);
}

#[test]
fn adam_matches_closed_form_sequence() {
    // independent recomputation of three bias-corrected steps
    let cfg = AdamConfig::default();
    let gs = [0.5, -1.5, 2.0];
    let mut p = [0.7f64];
    let (mut m, mut v) = ([0.0], [0.0]);
    let (mut mo, mut vo, mut po) = (0.0f64, 0.0f64, 0.7f64);
    for (k, g) in gs.iter().enumerate() {
        adam_update(&mut p, &[*g], &mut m, &mut v, k as u64 + 1, 0.05, &cfg);
        mo = 0.9 * mo + 0.1 * g;
        vo = 0.999 * vo + 0.001 * g * g;
        let mh = mo / (1.0 - 0.9f64.powi(k as i32 + 1));
        let vh = vo / (1.0 - 0.999f64.powi(k as i32 + 1));
        po -= 0.05 * mh / (vh.sqrt() + 1e-8);
        assert!((p[0] - po).abs() < 1e-14);
    }
}

#[test]
fn adam_skips_non_finite_gradients() {
    let mut model = Model::<f64>::new(tiny_model(DecoderKind::Cnn), 1).unwrap();
    let before = model.clone();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true).all();
    let mut grads: Vec<Option<Tensor<f64>>> = (0..tape.len()).map(|_| None).collect();
    for &v in &vars {
        grads[v.index()] = Some(Tensor::full(tape.shape(v), 0.1));
    }
    let last = *vars.last().unwrap();
    grads[last.index()].as_mut().unwrap().data_mut()[0] = f64::NAN;
    let mut adam = Adam::new(AdamConfig::default(), &model);
    let windows = Windows::full(model.config());
    assert!(!adam.step(&mut model, &vars, &Gradients::from_vec(grads.clone()), windows));
    assert_eq!(model, before);
    assert!(adam.steps().iter().all(|&s| s == 0));
    grads[last.index()].as_mut().unwrap().data_mut()[0] = 0.1;
    assert!(adam.step(&mut model, &vars, &Gradients::from_vec(grads), windows));
    assert_ne!(model, before);
}

#[test]
fn adam_leaves_inactive_levels_alone() {
    let mut model = Model::<f64>::new(tiny_model(DecoderKind::Cnn), 2).unwrap();
    let before = model.clone();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true).all();
    let mut grads: Vec<Option<Tensor<f64>>> = (0..tape.len()).map(|_| None).collect();
    for &v in &vars {
        grads[v.index()] = Some(Tensor::full(tape.shape(v), 1.0));
    }
    let windows = Windows { dvf: LevelWindow::new(2, 2, 3).unwrap(), canonical: LevelWindow::new(2, 3, 4).unwrap() };
    let mut adam = Adam::new(AdamConfig::default(), &model);
    adam.step(&mut model, &vars, &Gradients::from_vec(grads), windows);
    for (a, b) in model.parameters().iter().zip(before.parameters()) {
        let moved = a.data != b.data;
        let expect = match a.kind {
            ParamKind::Table { net: NetKind::Dvf, level } => level == 2,
            ParamKind::Table { net: NetKind::Canonical, level } => (2..=3).contains(&level),
            ParamKind::Decoder { .. } => true,
        };
        assert_eq!(moved, expect, "{}", a.name);
    }
}

#[test]
fn end_to_end_loss_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for sampling in [SamplingConfig::Vista { af: 2.0 }, SamplingConfig::Radial { spokes_per_frame: 3, readout: None, base_angle: 0.1 }] {
        let ds = simulate(&PhantomSpec::desk(8, 8, 2), &sampling, 2, 0.01, 5).unwrap();
        let ds64: Vec<Vec<Complex<f64>>> = ds.samples.iter().map(|y| y.iter().map(|c| Complex::new(c.re as f64, c.im as f64)).collect()).collect();
        let coils = Arc::new(ds.coils.cast::<f64>());
        let ops: Vec<_> = (0..2).map(|t| Arc::new(FrameOperator::new(&ds.sampling, t, coils.clone()).unwrap())).collect();
        let cfg = tiny_model(DecoderKind::Cnn);
        let mut model = Model::<f64>::new(cfg.clone(), 4).unwrap();
        // move every parameter away from its initialization so all paths
        // carry signal
        for p in model.parameters_mut() {
            let scale = match p.kind {
                ParamKind::Table { net: NetKind::Dvf, .. } => 0.02,
                ParamKind::Table { .. } => 0.5,
                ParamKind::Decoder { .. } => 0.3,
            };
            p.data.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        }
        let inputs: Vec<Tensor<f64>> = model.parameters().iter().map(|p| Tensor::new(&[p.data.len()], p.data.to_vec()).unwrap()).collect();
        let shapes: Vec<Vec<usize>> = {
            let mut tape = Tape::new();
            model.bind(&mut tape, true).all().iter().map(|&v| tape.shape(v).to_vec()).collect()
        };
        let frames = [0usize, 1];
        let batch = Batch::new(&frames, &ops, &ds64).unwrap();
        let weights = LossWeights { temporal: 0.5, ..LossWeights::default() };
        // full windows: a frozen level contributes to the loss but is
        // deliberately given no gradient
        let windows = Windows::full(&cfg);
        let r = gradcheck(
            |tape, v| {
                let shaped: Vec<Var> = v.iter().zip(&shapes).map(|(&x, s)| tape.reshape(x, s)).collect::<Result<_>>()?;
                let vars = ModelVars::from_slice(&cfg, &shaped)?;
                let g = training_loss(tape, &cfg, &vars, &batch, (2, 8, 8), windows, &weights)?;
                Ok(g.total)
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
        assert!(matches!(ds.sampling, Sampling::Cartesian(_) | Sampling::Radial(_)));
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::paper().validate().is_ok());
    assert!(TrainConfig::desk().validate().is_ok());
    let mut c = TrainConfig::desk();
    c.total_iters = 2;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::desk();
    c.weights.gradient = -1.0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::desk();
    c.frame_batch = Some(0);
    assert!(c.validate().is_err());
    let json = serde_json::to_string(&TrainConfig::desk()).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), TrainConfig::desk());
}

#[test]
fn ablation_switches() {
    let mut c = TrainConfig::desk();
    c.ablation = Ablation { disable_dvf_reg: true, disable_coarse2fine: true, mlp_decoder: true };
    assert_eq!(c.effective_model().decoder.kind, DecoderKind::Mlp);
    let w = c.effective_weights();
    assert_eq!((w.sparsity, w.gradient, w.laplacian, w.dc), (0.0, 0.0, 0.0, 1.0));
    let m = c.effective_model();
    assert_eq!(c.windows(&m, 0), Windows::full(&m));
    c.ablation.disable_coarse2fine = false;
    assert_eq!(c.windows(&m, 0).dvf.hi(), 5);
}

#[test]
fn batches_are_seeded_subsets() {
    let a = batch_schedule(16, Some(4), 50, 3);
    assert_eq!(a, batch_schedule(16, Some(4), 50, 3));
    assert_ne!(a, batch_schedule(16, Some(4), 50, 4));
    for b in &a {
        assert_eq!(b.len(), 4);
        assert!(b.windows(2).all(|p| p[0] < p[1]) && b.iter().all(|&t| t < 16));
    }
    assert!(batch_schedule(5, None, 3, 0).iter().all(|b| b == &[0, 1, 2, 3, 4]));
    assert!(batch_schedule(5, Some(9), 3, 0).iter().all(|b| b.len() == 5));
}

#[test]
fn fit_reduces_loss_and_logs_consistently() {
    let ds = tiny_dataset(SamplingConfig::Vista { af: 2.0 });
    let cfg = TrainConfig { weights: LossWeights { temporal: 0.3, ..LossWeights::default() }, ..tiny_config(60) };
    let fit = fit(&ds, &cfg).unwrap();
    let r = &fit.report;
    assert_eq!(r.records.len(), 60);
    assert_eq!(fit.timing.len(), 60);
    assert!(r.last().unwrap().dc < r.first().unwrap().dc);
    let w = &cfg.weights;
    for rec in &r.records {
        let sum = w.dc * rec.dc + w.sparsity * rec.sparsity + w.gradient * rec.gradient + w.laplacian * rec.laplacian + w.temporal * rec.temporal;
        assert!((sum - rec.loss).abs() <= 1e-6 * rec.loss.abs(), "{rec:?}");
    }
    assert!(r.final_metrics.is_some());
    // the CSV is lossless
    assert_eq!(TrainReport::records_from_csv(&r.to_csv()).unwrap(), r.records);
}

#[test]
fn fit_is_deterministic() {
    let ds = tiny_dataset(SamplingConfig::Radial { spokes_per_frame: 4, readout: None, base_angle: 0.0 });
    let cfg = tiny_config(12);
    let (a, b) = (fit(&ds, &cfg).unwrap(), fit(&ds, &cfg).unwrap());
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    let meta = CheckpointMeta { iteration: 12, seed: cfg.seed };
    assert_eq!(checkpoint_bytes(&a.model, &meta).unwrap(), checkpoint_bytes(&b.model, &meta).unwrap());
    let c = fit(&ds, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.report.to_csv(), c.report.to_csv());
}

#[test]
fn frozen_levels_stay_bit_identical() {
    let ds = tiny_dataset(SamplingConfig::Vista { af: 2.0 });
    let cfg = tiny_config(9);
    let model_cfg = cfg.effective_model();
    let mut snapshots = vec![Model::<f32>::new(model_cfg.clone(), cfg.seed).unwrap()];
    let fit = fit_with(&ds, &cfg, |_, m| snapshots.push(m.clone())).unwrap();
    assert_eq!(snapshots.last().unwrap(), &fit.model);
    let mut checked = 0;
    for it in 0..cfg.total_iters {
        let win = cfg.windows(&model_cfg, it);
        for (p, q) in snapshots[it + 1].parameters().iter().zip(snapshots[it].parameters()) {
            if let ParamKind::Table { net, level } = p.kind {
                let w = if net == NetKind::Dvf { win.dvf } else { win.canonical };
                // the zero-initialized displacement output layer blocks
                // table gradients on the very first step
                if w.trains(level) && it > 0 {
                    assert_ne!(p.data, q.data, "iteration {it}: {} did not train", p.name);
                } else if !w.trains(level) {
                    assert_eq!(p.data, q.data, "iteration {it}: {} moved while inactive", p.name);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 10);
}

#[test]
fn divergence_guard_aborts() {
    let ds = tiny_dataset(SamplingConfig::Vista { af: 2.0 });
    let mut cfg = tiny_config(200);
    cfg.adam.lr_decoder = 50.0;
    cfg.adam.lr_table = 50.0;
    cfg.divergence = DivergenceGuard { factor: 2.0, patience: 3 };
    let fit = fit(&ds, &cfg).unwrap();
    assert!(fit.report.diverged(), "{:?}", fit.report.last());
    assert!(fit.report.records.len() < 200);
    assert!(fit.report.final_metrics.is_none());
}

#[test]
fn static_phantom_reconstruct_shapes() {
    let mut spec = PhantomSpec::desk(12, 12, 3);
    spec.motion.alpha = 0.0;
    let ds = simulate(&spec, &SamplingConfig::Full, 1, 0.0, 0).unwrap();
    let cfg = TrainConfig { frame_batch: None, ..tiny_config(6) };
    let fit = fit(&ds, &cfg).unwrap();
    let rec = reconstruct(&fit.model, 12, 12, 3, cfg.final_windows(&cfg.effective_model())).unwrap();
    assert_eq!((rec.images.len(), rec.images.height(), rec.images.width()), (3, 12, 12));
    assert_eq!(rec.dvfs.len(), 3);
    assert_eq!((rec.canonical.height(), rec.canonical.width()), (12, 12));
}

proptest! {
    #[test]
    fn adam_updates_are_elementwise(g in -5.0f64..5.0, steps in 1u64..6) {
        let cfg = AdamConfig::default();
        let mut p = [1.0f64, 1.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for s in 1..=steps {
            adam_update(&mut p, &[g, g], &mut m, &mut v, s, 0.01, &cfg);
        }
        prop_assert!(p[0] == p[1]);
        prop_assert!((p[0] - 1.0).abs() <= 0.01 * steps as f64 + 1e-12);
    }
}
