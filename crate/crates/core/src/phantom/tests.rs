use super::*;
use crate::error::Error;
use crate::kspace::{apply_forward_multi, zero_filled, CartesianMask, Sampling};
use proptest::prelude::{prop_assert, proptest};

fn plain(h: usize, w: usize, frames: usize) -> PhantomSpec {
    let mut s = PhantomSpec::desk(h, w, frames);
    s.phase = None;
    s.texture = 0.0;
    s.edge = 0.0;
    s.distractors.clear();
    s
}

fn max_diff(a: &ComplexImage<f64>, b: &ComplexImage<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn bilinear(img: &ComplexImage<f64>, x: f64, y: f64) -> Complex<f64> {
    // pixel centers at +0.5; clamp at the border
    let (h, w) = (img.height(), img.width());
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let (j0, i0) = (fx.floor() as usize, fy.floor() as usize);
    let (j1, i1) = ((j0 + 1).min(w - 1), (i0 + 1).min(h - 1));
    let (ax, ay) = (fx - j0 as f64, fy - i0 as f64);
    img.at(i0, j0) * ((1.0 - ax) * (1.0 - ay))
        + img.at(i0, j1) * (ax * (1.0 - ay))
        + img.at(i1, j0) * ((1.0 - ax) * ay)
        + img.at(i1, j1) * (ax * ay)
}

#[test]
fn static_when_alpha_zero() {
    let mut s = PhantomSpec::desk(32, 32, 6);
    s.motion.alpha = 0.0;
    let p = make_phantom(&s).unwrap();
    for t in 1..6 {
        assert_eq!(p.images.frame(t), p.images.frame(0));
        assert!(p.dvfs[t].data.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn mirrored_phases_match() {
    let s = PhantomSpec::desk(48, 40, 10);
    let p = make_phantom(&s).unwrap();
    for t in 1..10 {
        assert!(max_diff(p.images.frame(t), p.images.frame(10 - t)) < 1e-6, "t = {t}");
    }
    assert!(max_diff(p.images.frame(0), p.images.frame(5)) > 0.1);
}

#[test]
fn frame_zero_is_reference() {
    let s = PhantomSpec::desk(32, 32, 4);
    assert_eq!(s.systole(0), 0.0);
    assert!(s.dvf(0).data.iter().all(|&v| v == 0.0));
    assert!((s.systole(2) - 1.0).abs() < 1e-15);
}

#[test]
fn mass_follows_annulus_area() {
    // Only the blood/myocardium split moves, so the mass change is the
    // contrast times the blood-pool area change.
    let s = plain(128, 128, 8);
    let p = make_phantom(&s).unwrap();
    let mass = |t: usize| p.images.frame(t).data().iter().map(|v| v.re).sum::<f64>();
    let contrast = s.heart.blood - s.heart.myocardium;
    for t in 1..8 {
        let predicted = contrast * PI * (s.inner_radius(t).powi(2) - s.heart.r_in0.powi(2));
        let got = mass(t) - mass(0);
        assert!((got - predicted).abs() <= 0.03 * predicted.abs() + 0.5, "t {t}: {got} vs {predicted}");
    }
}

#[test]
fn roi_covers_heart() {
    let s = PhantomSpec::desk(64, 64, 4);
    let roi = s.roi();
    for t in 0..4 {
        assert!(s.annulus(t).iter().zip(&roi).all(|(&a, &r)| !a || r));
    }
    let n = roi.iter().filter(|&&b| b).count() as f64;
    let disk = PI * (s.heart.r_out + ROI_DILATION).powi(2);
    assert!((n - disk).abs() < 0.1 * disk);
}

#[test]
fn dvf_zero_outside_heart() {
    let s = PhantomSpec::desk(64, 64, 8);
    let u = s.dvf(4);
    let hw = 64 * 64;
    for i in 0..64 {
        for j in 0..64 {
            let r = (j as f64 + 0.5 - s.heart.center[0]).hypot(i as f64 + 0.5 - s.heart.center[1]);
            if r >= s.heart.r_out {
                assert_eq!(u.data[i * 64 + j], 0.0);
                assert_eq!(u.data[hw + i * 64 + j], 0.0);
            }
        }
    }
    assert!(u.mean_magnitude_px() > 0.0);
}

#[test]
fn geometry_outside_fov_rejected() {
    let mut s = PhantomSpec::desk(32, 32, 4);
    s.heart.center = [4.0, 16.0];
    assert!(make_phantom(&s).is_err());
    let mut s = PhantomSpec::desk(32, 32, 4);
    s.motion.alpha = 1.0;
    assert!(make_phantom(&s).is_err());
    let mut s = PhantomSpec::desk(32, 32, 4);
    s.heart.r_in0 = s.heart.r_out;
    assert!(make_phantom(&s).is_err());
}

fn roi_nrmse(a: &[Complex<f64>], b: &[Complex<f64>], roi: &[bool]) -> f64 {
    let (mut err, mut norm) = (0.0, 0.0);
    for k in (0..roi.len()).filter(|&k| roi[k]) {
        err += (a[k] - b[k]).norm_sqr();
        norm += b[k].norm_sqr();
    }
    (err / norm).sqrt()
}

#[test]
fn dvf_warps_reference_onto_frame() {
    let s = PhantomSpec::desk(64, 64, 8);
    let p = make_phantom(&s).unwrap();
    let hw = 64 * 64;
    for t in 1..8 {
        // frame t pulled back to the reference with the analytic inverse motion
        let back: Vec<_> = (0..hw)
            .map(|k| {
                let q = s.from_reference(t, [(k % 64) as f64 + 0.5, (k / 64) as f64 + 0.5]);
                bilinear(p.images.frame(t), q[0], q[1])
            })
            .collect();
        let a = roi_nrmse(&back, p.images.frame(0).data(), &p.roi);
        // reference pushed to frame t through the stored displacement
        let u = &p.dvfs[t];
        let fwd: Vec<_> = (0..hw)
            .map(|k| {
                let (x, y) = ((k % 64) as f64 + 0.5, (k / 64) as f64 + 0.5);
                bilinear(p.images.frame(0), x + u.data[k] * 64.0, y + u.data[hw + k] * 64.0)
            })
            .collect();
        let b = roi_nrmse(&fwd, p.images.frame(t).data(), &p.roi);
        assert!(a <= 0.01 && b <= 0.01, "t {t}: {a} {b}");
    }
}

#[test]
fn inverse_maps_round_trip() {
    let s = PhantomSpec::desk(64, 64, 8);
    for t in 0..8 {
        for k in 0..200 {
            let p = [10.0 + 0.21 * k as f64, 12.0 + 0.19 * k as f64];
            let q = s.from_reference(t, s.to_reference(t, p));
            assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
        }
    }
}

#[test]
fn single_coil_is_uniform() {
    let c = make_coils(16, 12, 1, 3).unwrap();
    assert!(c.maps()[0].data().iter().all(|v| *v == Complex::new(1.0, 0.0)));
}

#[test]
fn coils_are_deterministic() {
    let a = make_coils(32, 32, 4, 11).unwrap();
    let b = make_coils(32, 32, 4, 11).unwrap();
    let c = make_coils(32, 32, 4, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

proptest! {
    #[test]
    fn coil_sum_of_squares_is_one(h in 4usize..24, w in 4usize..24, count in 1usize..9, seed in 0u64..100) {
        let c = make_coils(h, w, count, seed).unwrap();
        for k in 0..h * w {
            let ss: f64 = c.maps().iter().map(|m| m.data()[k].norm_sqr()).sum();
            prop_assert!((ss - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn systole_in_unit_range(frames in 1usize..40, cycles in 0.5f64..3.0) {
        let mut s = PhantomSpec::desk(32, 32, frames);
        s.motion.cycles = cycles;
        for t in 0..frames {
            let v = s.systole(t);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(s.inner_radius(t) <= s.heart.r_in0 && s.inner_radius(t) > 0.0);
        }
    }
}

#[test]
fn full_sampling_round_trip() {
    let s = PhantomSpec::desk(32, 32, 3);
    let p = make_phantom(&s).unwrap();
    let coils = make_coils(32, 32, 1, 0).unwrap();
    let sampling = Sampling::Cartesian(CartesianMask::full(32, 3));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = apply_forward_multi(p.images.frames(), &coils, &sampling, 0.0, &mut rng).unwrap();
    let x = zero_filled(&y, &coils, &sampling).unwrap();
    for t in 0..3 {
        assert!(max_diff(&x[t], p.images.frame(t)) < 1e-6);
    }
    // the same through the stored single-precision dataset
    let ds = simulate(&s, &SamplingConfig::Full, 1, 0.0, 4).unwrap();
    let zf = ds.zero_filled().unwrap();
    let gt = &ds.ground_truth.as_ref().unwrap().images;
    for t in 0..3 {
        let d = zf.frame(t).data().iter().zip(gt.frame(t).data()).map(|(a, b)| (a - b).norm()).fold(0.0f32, f32::max);
        assert!(d < 1e-5, "{d}");
    }
}

#[test]
fn vista_keeps_eight_lines() {
    let ds = simulate(&PhantomSpec::desk(64, 64, 16), &SamplingConfig::Vista { af: 8.0 }, 2, 0.0, 1).unwrap();
    match &ds.sampling {
        Sampling::Cartesian(m) => (0..16).for_each(|t| assert_eq!(m.kept_in_frame(t), 8)),
        _ => panic!("expected a Cartesian mask"),
    }
    assert!(ds.samples.iter().all(|y| y.len() == 2 * 8 * 64));
}

#[test]
fn radial_three_spokes() {
    let cfg: SamplingConfig = serde_json::from_str(r#"{"kind": "radial", "spokes_per_frame": 3}"#).unwrap();
    let ds = simulate(&PhantomSpec::desk(32, 32, 4), &cfg, 2, 0.01, 9).unwrap();
    match &ds.sampling {
        Sampling::Radial(r) => {
            assert_eq!(r.spokes_per_frame(), 3);
            assert_eq!(r.readout, 64);
        }
        _ => panic!("expected a trajectory"),
    }
    assert!(ds.samples.iter().all(|y| y.len() == 2 * 3 * 64));
}

fn samples_dataset() -> KtDataset {
    simulate(&PhantomSpec::desk(32, 32, 4), &SamplingConfig::Vista { af: 4.0 }, 3, 0.02, 5).unwrap()
}

#[test]
fn stored_samples_are_self_consistent() {
    for cfg in [SamplingConfig::Vista { af: 4.0 }, SamplingConfig::Radial { spokes_per_frame: 5, readout: None, base_angle: 0.3 }] {
        let ds = simulate(&PhantomSpec::desk(32, 32, 4), &cfg, 3, 0.0, 2).unwrap();
        let gt = ds.ground_truth.as_ref().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let y = apply_forward_multi(gt.images.frames(), &ds.coils, &ds.sampling, 0.0, &mut rng).unwrap();
        assert_eq!(y, ds.samples);
        // also after a trip through the container
        let back = KtDataset::from_bytes(&ds.to_bytes().unwrap()).unwrap();
        let gt = back.ground_truth.as_ref().unwrap();
        let y = apply_forward_multi(gt.images.frames(), &back.coils, &back.sampling, 0.0, &mut rng).unwrap();
        assert_eq!(y, back.samples);
    }
}

#[test]
fn replay_is_identical() {
    let a = samples_dataset();
    let b = samples_dataset();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    let c = simulate(&PhantomSpec::desk(32, 32, 4), &SamplingConfig::Vista { af: 4.0 }, 3, 0.02, 6).unwrap();
    assert_ne!(a.samples, c.samples);
    // the recorded provenance is enough to regenerate
    let p = &a.provenance;
    let d = simulate(p.phantom.as_ref().unwrap(), p.sampling.as_ref().unwrap(), a.coil_count(), a.noise_sigma, p.seed.unwrap()).unwrap();
    assert_eq!(a, d);
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for ds in [samples_dataset(), simulate(&PhantomSpec::desk(32, 32, 3), &SamplingConfig::Radial { spokes_per_frame: 4, readout: None, base_angle: 0.0 }, 2, 0.1, 3).unwrap()] {
        let (p1, p2) = (dir.path().join("a.ktd"), dir.path().join("b.ktd"));
        save_dataset(&p1, &ds).unwrap();
        let back = load_dataset(&p1).unwrap();
        assert_eq!(back, ds);
        save_dataset(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}

#[test]
fn dataset_without_ground_truth_round_trips() {
    let mut ds = samples_dataset();
    ds.ground_truth = None;
    ds.provenance = Provenance::default();
    let back = KtDataset::from_bytes(&ds.to_bytes().unwrap()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn truncated_file_is_rejected() {
    let bytes = samples_dataset().to_bytes().unwrap();
    let err = KtDataset::from_bytes(&bytes[..bytes.len() - 7]).unwrap_err();
    assert!(matches!(err, Error::Checksum { .. }), "{err}");
    let mut flipped = bytes.clone();
    let n = flipped.len();
    flipped[n - 3] ^= 1;
    assert!(matches!(KtDataset::from_bytes(&flipped).unwrap_err(), Error::Checksum { .. }));
    let mut wrong_version = bytes;
    wrong_version[8] = 9;
    assert!(matches!(KtDataset::from_bytes(&wrong_version).unwrap_err(), Error::Format(_)));
}

#[test]
fn inconsistent_counts_rejected() {
    let mut ds = samples_dataset();
    ds.samples[1].pop();
    assert!(ds.validate().is_err());
    assert!(ds.to_bytes().is_err());
}

#[test]
fn sampling_config_rejects_unknown_fields() {
    assert!(serde_json::from_str::<SamplingConfig>(r#"{"kind": "vista", "af": 4, "extra": 1}"#).is_err());
    assert!(serde_json::from_str::<SamplingConfig>(r#"{"kind": "spiral"}"#).is_err());
}
