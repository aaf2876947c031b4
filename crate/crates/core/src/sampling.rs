//! Undersampling pattern generators: variable-density complementary ky-t
//! masks (VISTA-style) and golden-angle radial trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::kspace::{CartesianMask, RadialFrame, RadialTrajectory};

/// Golden angle for diameter spokes, `pi / phi = pi * (sqrt 5 - 1) / 2`
/// (about 111.246 deg).
pub fn golden_angle() -> f64 {
    std::f64::consts::PI * (5f64.sqrt() - 1.0) / 2.0
}

/// Lines kept per frame for a requested acceleration.
pub fn lines_per_frame(h: usize, af: f64) -> usize {
    ((h as f64 / af).round() as usize).clamp(1, h)
}

/// Variable-density ky-t mask.
///
/// Every frame keeps `round(h / af)` lines including the DC line `h / 2`.
/// Remaining lines are drawn without replacement from a Gaussian density
/// (`sigma = h / 6`) centered on DC, skipping lines used by the previous
/// frame unless too few candidates remain.
pub fn make_vista_mask(h: usize, frames: usize, af: f64, seed: u64) -> Result<CartesianMask> {
    if h == 0 || frames == 0 {
        return invalid("mask needs at least one line and one frame");
    }
    if !af.is_finite() || af < 1.0 {
        return invalid(format!("acceleration factor {af} must be >= 1"));
    }
    if af > h as f64 {
        return invalid(format!("acceleration factor {af} exceeds the {h} available lines"));
    }
    let n = lines_per_frame(h, af);
    let dc = h / 2;
    let sigma = h as f64 / 6.0;
    let density: Vec<f64> =
        (0..h).map(|ky| (-((ky as f64 - dc as f64).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![false; h * frames];
    let mut prev = vec![false; h];
    for t in 0..frames {
        let mut chosen = vec![false; h];
        chosen[dc] = true;
        let mut count = 1;
        while count < n {
            let fresh: Vec<usize> = (0..h).filter(|&ky| !chosen[ky] && !prev[ky]).collect();
            let pool = if fresh.is_empty() { (0..h).filter(|&ky| !chosen[ky]).collect() } else { fresh };
            let pick = draw_weighted(&pool, &density, &mut rng);
            chosen[pick] = true;
            count += 1;
        }
        kept[t * h..(t + 1) * h].copy_from_slice(&chosen);
        prev = chosen;
    }
    CartesianMask::new(h, frames, kept)
}

fn draw_weighted(pool: &[usize], density: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = pool.iter().map(|&ky| density[ky]).sum();
    let mut r = rng.random::<f64>() * total;
    for &ky in pool {
        r -= density[ky];
        if r < 0.0 {
            return ky;
        }
    }
    *pool.last().expect("non-empty candidate pool")
}

/// Golden-angle radial trajectory.
///
/// Spoke `s` (counted across frames in acquisition order) has angle
/// `base_angle + s * golden_angle()`. Each spoke carries `readout` samples
/// at `k = (r - readout/2) / readout` along its direction. Density weights
/// are the ramp `pi * dk * |k| / spokes` with `|k|` floored at `dk / 4`.
pub fn make_golden_angle_traj(
    spokes_per_frame: usize,
    readout: usize,
    frames: usize,
    base_angle: f64,
) -> Result<RadialTrajectory> {
    if spokes_per_frame == 0 {
        return invalid("need at least one spoke per frame");
    }
    if readout < 2 || readout % 2 != 0 {
        return invalid(format!("readout length {readout} must be even and >= 2"));
    }
    if frames == 0 {
        return invalid("need at least one frame");
    }
    if !base_angle.is_finite() {
        return invalid("base angle must be finite");
    }
    let dk = 1.0 / readout as f64;
    let ga = golden_angle();
    let frames = (0..frames)
        .map(|t| {
            let mut angles = Vec::with_capacity(spokes_per_frame);
            let mut coords = Vec::with_capacity(spokes_per_frame * readout);
            let mut dcf = Vec::with_capacity(spokes_per_frame * readout);
            for i in 0..spokes_per_frame {
                let s = t * spokes_per_frame + i;
                let theta = base_angle + s as f64 * ga;
                angles.push(theta);
                let (sin, cos) = theta.sin_cos();
                for r in 0..readout {
                    let k = (r as f64 - (readout / 2) as f64) * dk;
                    coords.push([wrap_half(k * cos), wrap_half(k * sin)]);
                    dcf.push(std::f64::consts::PI * dk * k.abs().max(dk / 4.0) / spokes_per_frame as f64);
                }
            }
            RadialFrame { angles, coords, dcf }
        })
        .collect();
    Ok(RadialTrajectory { readout, frames })
}

/// Maps `+0.5` onto the equivalent `-0.5` so coordinates stay in `[-0.5, 0.5)`.
fn wrap_half(k: f64) -> f64 {
    if k >= 0.5 {
        k - 1.0
    } else {
        k
    }
}

/// Default radial readout: twice the larger image edge.
pub fn default_readout(h: usize, w: usize) -> usize {
    2 * h.max(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn af_one_keeps_everything() {
        let m = make_vista_mask(32, 4, 1.0, 0).unwrap();
        assert!(m.as_slice().iter().all(|&k| k));
    }

    #[test]
    fn paper_geometry_line_count() {
        let m = make_vista_mask(208, 4, 20.0, 7).unwrap();
        for t in 0..4 {
            assert_eq!(m.kept_in_frame(t), 10);
        }
    }

    #[test]
    fn empirical_acceleration_close_to_request() {
        let m = make_vista_mask(64, 16, 8.0, 3).unwrap();
        assert!((m.empirical_af() - 8.0).abs() / 8.0 < 0.05);
    }

    #[test]
    fn adjacent_frames_are_complementary_apart_from_dc() {
        let m = make_vista_mask(64, 16, 8.0, 5).unwrap();
        for t in 1..16 {
            for ky in 0..64 {
                if ky != 32 {
                    assert!(!(m.column(t)[ky] && m.column(t - 1)[ky]), "line {ky} repeats at frame {t}");
                }
            }
        }
    }

    #[test]
    fn sampling_is_denser_near_dc() {
        let m = make_vista_mask(64, 64, 8.0, 9).unwrap();
        let count = |range: std::ops::Range<usize>| -> usize {
            (0..64).map(|t| range.clone().filter(|&ky| m.column(t)[ky]).count()).sum()
        };
        assert!(count(24..40) > 2 * count(0..16));
    }

    #[test]
    fn rejects_excessive_acceleration() {
        assert!(make_vista_mask(16, 2, 17.0, 0).is_err());
        assert!(make_vista_mask(16, 2, 0.5, 0).is_err());
    }

    #[test]
    fn golden_angle_value() {
        assert!((golden_angle().to_degrees() - 111.246_117_974_981).abs() < 1e-9);
    }

    #[test]
    fn spoke_angles_follow_acquisition_order() {
        let tr = make_golden_angle_traj(3, 16, 4, 0.25).unwrap();
        assert_eq!(tr.frames[0].angles[0], 0.25);
        let all: Vec<f64> = tr.frames.iter().flat_map(|f| f.angles.iter().copied()).collect();
        for pair in all.windows(2) {
            let d = (pair[1] - pair[0]).rem_euclid(std::f64::consts::PI);
            assert!((d - golden_angle()).abs() < 1e-12);
        }
        tr.validate().unwrap();
    }

    #[test]
    fn nominal_acceleration_for_three_spokes() {
        use crate::kspace::Sampling;
        let tr = make_golden_angle_traj(3, default_readout(208, 208), 2, 0.0).unwrap();
        assert_eq!(tr.readout, 416);
        let af = Sampling::Radial(tr).nominal_af(208, 208);
        assert!((af - 108.9).abs() < 0.1, "{af}");
    }

    #[test]
    fn readout_must_be_even() {
        assert!(make_golden_angle_traj(3, 15, 2, 0.0).is_err());
        assert!(make_golden_angle_traj(0, 16, 2, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn vista_mask_invariants(h in 8usize..80, frames in 1usize..12, af in 1.0f64..8.0, seed in 0u64..1000) {
            let m = make_vista_mask(h, frames, af, seed).unwrap();
            let n = lines_per_frame(h, af);
            for t in 0..frames {
                prop_assert!(m.column(t)[h / 2]);
                prop_assert_eq!(m.kept_in_frame(t), n);
            }
            prop_assert_eq!(m, make_vista_mask(h, frames, af, seed).unwrap());
        }

        #[test]
        fn spokes_within_a_frame_are_never_collinear(spokes in 1usize..40, base in 0.0f64..3.0) {
            let tr = make_golden_angle_traj(spokes, 8, 2, base).unwrap();
            for f in &tr.frames {
                for a in 0..f.angles.len() {
                    for b in a + 1..f.angles.len() {
                        let d = (f.angles[a] - f.angles[b]).rem_euclid(std::f64::consts::PI);
                        prop_assert!(d > 1e-6 && d < std::f64::consts::PI - 1e-6);
                    }
                }
            }
        }
    }
}
