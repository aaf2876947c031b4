//! Double-precision self-checks: operator adjointness, tape gradients
//! against finite differences, and hash-grid interpolation oracles.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hashenc::{encode, encode_backward, HashGrid, HashGridConfig, LevelWindow};
use crate::kspace::{
    apply_adjoint_cartesian, apply_forward_cartesian, fft2c, ifft2c, inner, nufft_forward, CoilSet, ComplexImage,
    FrameOperator, NufftPlan, Sampling,
};
use crate::nets::{DecoderConfig, DecoderKind, Model, ModelConfig, ModelVars, ParamKind, Windows, CANONICAL_MARGIN};
use crate::phantom::{simulate, PhantomSpec, SamplingConfig};
use crate::sampling::{make_golden_angle_traj, make_vista_mask};
use crate::trainer::{training_loss, Batch, LossWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Adjoint,
    Gradcheck,
    Interp,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Adjoint => "adjoint",
            Suite::Gradcheck => "gradcheck",
            Suite::Interp => "interp",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjoint" => Ok(Suite::Adjoint),
            "gradcheck" => Ok(Suite::Gradcheck),
            "interp" => Ok(Suite::Interp),
            "all" => Ok(Suite::All),
            _ => Err(Error::InvalidArgument(format!("unknown suite {s:?}, expected adjoint, gradcheck, interp or all"))),
        }
    }
}

/// Cartesian dot-test tolerance.
pub const TOL_CARTESIAN_DOT: f64 = 1e-10;
pub const TOL_NUFFT_DOT: f64 = 1e-6;
/// Relative l2 error of the gridding NUFFT against a direct sum.
pub const TOL_NUFFT_NDFT: f64 = 1e-3;
pub const TOL_PRIMITIVE: f64 = 1e-4;
/// The full loss chains many kernels; central differences on it are noisier.
pub const TOL_END_TO_END: f64 = 1e-3;
pub const TOL_INTERP: f64 = 1e-12;

/// One check: worst observed error against its tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(suite: Suite, name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Self { suite, name: name.into(), error, tolerance }
    }

    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

pub fn run(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::Adjoint => adjoint_suite(),
        Suite::Gradcheck => gradcheck_suite(),
        Suite::Interp => interp_suite(),
        Suite::All => {
            let mut all = adjoint_suite()?;
            all.extend(gradcheck_suite()?);
            all.extend(interp_suite()?);
            Ok(all)
        }
    }
}

fn complex_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex<f64>> {
    (0..n).map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ComplexImage<f64> {
    ComplexImage::new(h, w, complex_vec(h * w, rng)).expect("sized to h x w")
}

fn random_coils(h: usize, w: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<CoilSet<f64>> {
    CoilSet::normalized((0..count).map(|_| random_image(h, w, rng)).collect())
}

fn dot_error(ax: &[Complex<f64>], y: &[Complex<f64>], x: &[Complex<f64>], aty: &[Complex<f64>]) -> f64 {
    let lhs = inner(ax, y);
    let rhs = inner(x, aty);
    (lhs - rhs).norm() / lhs.norm().max(rhs.norm())
}

fn relative_l2(got: &[Complex<f64>], want: &[Complex<f64>]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = want.iter().map(|b| b.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Direct non-uniform DFT on the centered grid, the reference for gridding.
pub fn ndft(x: &ComplexImage<f64>, coords: &[[f64; 2]]) -> Vec<Complex<f64>> {
    let (h, w) = (x.height(), x.width());
    coords
        .iter()
        .map(|&[kx, ky]| {
            let mut acc = Complex::new(0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let p = (j as f64 - (w / 2) as f64) * kx + (i as f64 - (h / 2) as f64) * ky;
                    acc += x.at(i, j) * Complex::from_polar(1.0, -2.0 * std::f64::consts::PI * p);
                }
            }
            acc
        })
        .collect()
}

fn adjoint_suite() -> Result<Vec<Check>> {
    let s = Suite::Adjoint;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut out = Vec::new();

    let x = random_image(16, 16, &mut rng);
    let fx = fft2c(&x)?;
    let back = ifft2c(&fx)?;
    let energy = (fx.norm() - x.norm()).abs() / x.norm();
    out.push(Check::new(s, "fft2c unitary", energy.max(relative_l2(back.data(), x.data())), 1e-12));

    let (h, w) = (16, 12);
    let coils = random_coils(h, w, 4, &mut rng)?;
    let mask = make_vista_mask(h, 1, 4.0, 3)?;
    let x = random_image(h, w, &mut rng);
    let ax = apply_forward_cartesian(&x, &coils, mask.column(0))?;
    let y = complex_vec(ax.len(), &mut rng);
    let aty = apply_adjoint_cartesian(&y, &coils, mask.column(0))?;
    out.push(Check::new(s, "cartesian dot test", dot_error(&ax, &y, x.data(), aty.data()), TOL_CARTESIAN_DOT));

    let (h, w) = (16, 16);
    let traj = make_golden_angle_traj(8, 32, 1, 0.0)?;
    let coords = &traj.frames[0].coords;
    let plan = NufftPlan::<f64>::new(h, w, coords)?;
    let x = random_image(h, w, &mut rng);
    let ax = plan.forward(x.data());
    let y = complex_vec(ax.len(), &mut rng);
    let aty = plan.adjoint(&y, None);
    out.push(Check::new(s, "nufft dot test", dot_error(&ax, &y, x.data(), &aty), TOL_NUFFT_DOT));
    let got = nufft_forward(&x, coords)?;
    out.push(Check::new(s, "nufft vs ndft 16x16 8 spokes", relative_l2(&got, &ndft(&x, coords)), TOL_NUFFT_NDFT));

    let coils = Arc::new(random_coils(h, w, 3, &mut rng)?);
    let op = FrameOperator::new(&Sampling::Radial(traj), 0, coils)?;
    let ax = op.forward(&x)?;
    let y = complex_vec(ax.len(), &mut rng);
    let aty = op.adjoint(&y)?;
    out.push(Check::new(s, "radial multicoil dot test", dot_error(&ax, &y, x.data(), aty.data()), TOL_NUFFT_DOT));
    Ok(out)
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("sized to shape")
}

/// Gradcheck of `build` under a fixed random projection of its output.
fn primitive(
    name: &str,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
    eps: f64,
    seed: u64,
) -> Result<Check> {
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| probe.constant(x.clone())).collect();
    let y = build(&mut probe, &vars)?;
    let proj = random_tensor(probe.shape(y), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let r = gradcheck(
        |t, v| {
            let y = build(t, v)?;
            let p = t.constant(proj.clone());
            let z = t.mul(y, p)?;
            t.sum(z)
        },
        inputs,
        eps,
    )?;
    Ok(Check::new(Suite::Gradcheck, name, r.max_rel_error, TOL_PRIMITIVE))
}

/// Moves entries off the kinks of piecewise primitives.
fn off_kinks(mut t: Tensor<f64>) -> Tensor<f64> {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    t
}

fn gradcheck_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1ff);
    let mut out = Vec::new();
    let (a, b) = (random_tensor(&[3, 4], -1.0, 1.0, &mut rng), random_tensor(&[3, 4], -1.0, 1.0, &mut rng));
    let ab = [a.clone(), b];
    out.push(primitive("add", |t, v| t.add(v[0], v[1]), &ab, 1e-6, 1)?);
    out.push(primitive("sub", |t, v| t.sub(v[0], v[1]), &ab, 1e-6, 2)?);
    out.push(primitive("mul", |t, v| t.mul(v[0], v[1]), &ab, 1e-6, 3)?);
    out.push(primitive("scalar_mul", |t, v| t.scalar_mul(v[0], -1.7), &ab[..1], 1e-6, 4)?);
    out.push(primitive("sum", |t, v| t.sum(v[0]), &ab[..1], 1e-6, 5)?);
    out.push(primitive("mean", |t, v| t.mean(v[0]), &ab[..1], 1e-6, 6)?);
    out.push(primitive("reshape", |t, v| t.reshape(v[0], &[4, 3]), &ab[..1], 1e-6, 7)?);
    let kinked = [off_kinks(random_tensor(&[2, 3, 4], -1.0, 1.0, &mut rng))];
    out.push(primitive("leaky_relu", |t, v| t.leaky_relu(v[0]), &kinked, 1e-6, 8)?);
    out.push(primitive("abs_smooth", |t, v| t.abs_smooth(v[0]), &kinked, 1e-6, 9)?);
    let pairs = [random_tensor(&[7, 2], -1.0, 1.0, &mut rng)];
    out.push(primitive("complex_abs_smooth", |t, v| t.complex_abs_smooth(v[0]), &pairs, 1e-6, 10)?);

    let field = [random_tensor(&[2, 2, 5, 6], -1.0, 1.0, &mut rng)];
    for axis in 0..4 {
        out.push(primitive(&format!("diff axis {axis}"), |t, v| t.diff(v[0], axis), &field, 1e-6, 11 + axis as u64)?);
    }
    out.push(primitive("finite_diff_x", |t, v| t.finite_diff_x(v[0]), &field, 1e-6, 15)?);
    out.push(primitive("finite_diff_y", |t, v| t.finite_diff_y(v[0]), &field, 1e-6, 16)?);
    out.push(primitive("laplacian", |t, v| t.laplacian(v[0]), &field, 1e-6, 17)?);

    for k in [1, 3] {
        let inputs = [
            random_tensor(&[1, 2, 6, 6], -1.0, 1.0, &mut rng),
            random_tensor(&[3, 2, k, k], -1.0, 1.0, &mut rng),
            random_tensor(&[3], -1.0, 1.0, &mut rng),
        ];
        out.push(primitive(&format!("conv2d {k}x{k}"), |t, v| t.conv2d(v[0], v[1], Some(v[2])), &inputs, 1e-6, 18)?);
    }

    let cfg = HashGridConfig {
        n_min: 2,
        growth: 1.5,
        levels: 3,
        feats_per_level: 2,
        log2_table_size: 5,
        dims: 2,
        frozen_levels_contribute: true,
    };
    let coords = random_tensor(&[12, 2], 0.05, 0.95, &mut rng);
    let window = LevelWindow::new(1, 2, 3)?;
    // Checked separately: the coordinate gradient needs large table entries
    // to stay above round-off, which would drown the table gradient.
    let big: Vec<_> = (1..=cfg.levels).map(|l| random_tensor(&[cfg.level_entries(l) * 2], -1e4, 1e4, &mut rng)).collect();
    out.push(primitive(
        "hash_encode coords",
        |t, v| {
            let tables: Vec<Var> = big.iter().map(|x| t.constant(x.clone())).collect();
            t.hash_encode(&cfg, &tables, v[0], window, (2, 3, 2))
        },
        std::slice::from_ref(&coords),
        1e-7,
        19,
    )?);
    let tables: Vec<_> = (1..=cfg.levels).map(|l| random_tensor(&[cfg.level_entries(l) * 2], -1.0, 1.0, &mut rng)).collect();
    out.push(primitive(
        "hash_encode tables",
        |t, v| {
            let x = t.constant(coords.clone());
            t.hash_encode(&cfg, v, x, window, (2, 3, 2))
        },
        &tables,
        1e-6,
        19,
    )?);

    let u = [random_tensor(&[2, 2, 3, 3], -0.05, 0.05, &mut rng)];
    out.push(primitive("warp_to_canonical", |t, v| Ok(t.warp_to_canonical(v[0], CANONICAL_MARGIN)?.coords), &u, 1e-6, 20)?);

    let mut pos = random_tensor(&[6, 2], 0.1, 3.0, &mut rng);
    for v in pos.data_mut() {
        if (*v - v.round()).abs() < 0.05 {
            *v += 0.2;
        }
    }
    let inputs = [random_tensor(&[2, 4, 5], -1.0, 1.0, &mut rng), pos];
    out.push(primitive("bilinear_sample", |t, v| t.bilinear_sample(v[0], v[1]), &inputs, 1e-6, 21)?);

    let x = [random_tensor(&[2, 2, 4, 6], -1.0, 1.0, &mut rng)];
    out.push(primitive("fft2c_pair", |t, v| t.fft2c_pair(v[0]), &x, 1e-6, 22)?);

    let (h, w) = (6, 6);
    let coils = Arc::new(random_coils(h, w, 2, &mut rng)?);
    let cart = Sampling::Cartesian(make_vista_mask(h, 2, 2.0, 4)?);
    let radial = Sampling::Radial(make_golden_angle_traj(2, 8, 2, 0.0)?);
    for (name, s) in [("acquire cartesian", cart), ("acquire radial", radial)] {
        let ops: Vec<_> = (0..2).map(|t| FrameOperator::new(&s, t, coils.clone()).map(Arc::new)).collect::<Result<_>>()?;
        let x = [random_tensor(&[2, 2, h, w], -1.0, 1.0, &mut rng)];
        out.push(primitive(name, |t, v| t.acquire(v[0], &ops), &x, 1e-6, 23)?);
    }

    out.push(end_to_end(SamplingConfig::Vista { af: 2.0 }, "end-to-end loss vista 8x8 T=2")?);
    out.push(end_to_end(
        SamplingConfig::Radial { spokes_per_frame: 3, readout: None, base_angle: 0.1 },
        "end-to-end loss radial 8x8 T=2",
    )?);
    Ok(out)
}

fn tiny_grid(dims: usize, levels: usize) -> HashGridConfig {
    HashGridConfig {
        n_min: 2,
        growth: 1.6,
        levels,
        feats_per_level: 2,
        log2_table_size: 7,
        dims,
        frozen_levels_contribute: true,
    }
}

/// Full training loss of a small model on an 8 x 8, two-frame toy problem,
/// differentiated with respect to every parameter.
fn end_to_end(sampling: SamplingConfig, name: &str) -> Result<Check> {
    let (h, w, frames) = (8, 8, 2);
    let ds = simulate(&PhantomSpec::desk(h, w, frames), &sampling, 2, 0.01, 5)?;
    let samples: Vec<Vec<Complex<f64>>> =
        ds.samples.iter().map(|y| y.iter().map(|c| Complex::new(c.re as f64, c.im as f64)).collect()).collect();
    let coils = Arc::new(ds.coils.cast::<f64>());
    let ops: Vec<_> =
        (0..frames).map(|t| FrameOperator::new(&ds.sampling, t, coils.clone()).map(Arc::new)).collect::<Result<_>>()?;
    let cfg = ModelConfig {
        dvf_grid: tiny_grid(3, 3),
        canonical_grid: tiny_grid(2, 4),
        decoder: DecoderConfig { kind: DecoderKind::Cnn, width: 4 },
        margin: CANONICAL_MARGIN,
    };
    let mut model = Model::<f64>::new(cfg.clone(), 4)?;
    // move every parameter off its initialization so all paths carry signal
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for p in model.parameters_mut() {
        let scale = match p.kind {
            ParamKind::Table { net: crate::hashenc::NetKind::Dvf, .. } => 0.02,
            ParamKind::Table { .. } => 0.5,
            ParamKind::Decoder { .. } => 0.3,
        };
        p.data.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
    let inputs: Vec<Tensor<f64>> =
        model.parameters().iter().map(|p| Tensor::new(&[p.data.len()], p.data.to_vec())).collect::<Result<_>>()?;
    let shapes: Vec<Vec<usize>> = {
        let mut tape = Tape::new();
        model.bind(&mut tape, true).all().iter().map(|&v| tape.shape(v).to_vec()).collect()
    };
    let picked = [0usize, 1];
    let batch = Batch::new(&picked, &ops, &samples)?;
    let weights = LossWeights { temporal: 0.5, ..LossWeights::default() };
    // a frozen level feeds the loss but deliberately gets no gradient, so
    // every level is opened here
    let windows = Windows::full(&cfg);
    let r = gradcheck(
        |tape, v| {
            let shaped: Vec<Var> = v.iter().zip(&shapes).map(|(&x, s)| tape.reshape(x, s)).collect::<Result<_>>()?;
            let vars = ModelVars::from_slice(&cfg, &shaped)?;
            Ok(training_loss(tape, &cfg, &vars, &batch, (frames, h, w), windows, &weights)?.total)
        },
        &inputs,
        1e-6,
    )?;
    Ok(Check::new(Suite::Gradcheck, name, r.max_rel_error, TOL_END_TO_END))
}

fn random_grid(cfg: HashGridConfig, rng: &mut ChaCha8Rng) -> Result<HashGrid<f64>> {
    let f = cfg.feats_per_level;
    let tables =
        (1..=cfg.levels).map(|l| (0..cfg.level_entries(l) * f).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    HashGrid::from_tables(cfg, tables)
}

fn interp_suite() -> Result<Vec<Check>> {
    let s = Suite::Interp;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e1d);
    let mut out = Vec::new();
    for dims in [2, 3] {
        // one coarse dense level up to hashed fine levels
        let cfg = HashGridConfig {
            n_min: 2,
            growth: 2.0,
            levels: 5,
            feats_per_level: 3,
            log2_table_size: 8,
            dims,
            frozen_levels_contribute: true,
        };
        let grid = random_grid(cfg.clone(), &mut rng)?;
        let f = cfg.feats_per_level;
        let full = LevelWindow::full(cfg.levels);

        let mut vertex_err = 0.0f64;
        let mut center_err = 0.0f64;
        for l in 1..=cfg.levels {
            let n = cfg.level_resolution(l);
            for _ in 0..16 {
                let corner: Vec<usize> = (0..dims).map(|_| rng.random_range(0..=n)).collect();
                let q: Vec<f64> = corner.iter().map(|&c| c as f64 / n as f64).collect();
                let feat = encode(&grid, &q, full)?;
                let row = grid.slot(l, &corner);
                let want = &grid.level(l)[row * f..(row + 1) * f];
                for (a, b) in feat[(l - 1) * f..l * f].iter().zip(want) {
                    vertex_err = vertex_err.max((a - b).abs());
                }

                let cell: Vec<usize> = (0..dims).map(|_| rng.random_range(0..n)).collect();
                let q: Vec<f64> = cell.iter().map(|&c| (c as f64 + 0.5) / n as f64).collect();
                let feat = encode(&grid, &q, full)?;
                let corners = 1usize << dims;
                let mut mean = vec![0.0; f];
                for k in 0..corners {
                    let corner: Vec<usize> = (0..dims).map(|d| cell[d] + ((k >> d) & 1)).collect();
                    let row = grid.slot(l, &corner);
                    for (m, v) in mean.iter_mut().zip(&grid.level(l)[row * f..(row + 1) * f]) {
                        *m += v / corners as f64;
                    }
                }
                for (a, b) in feat[(l - 1) * f..l * f].iter().zip(&mean) {
                    center_err = center_err.max((a - b).abs());
                }
            }
        }
        out.push(Check::new(s, format!("vertex exactness {dims}d"), vertex_err, TOL_INTERP));
        out.push(Check::new(s, format!("cell-center average {dims}d"), center_err, TOL_INTERP));

        // a window that opens levels 2..=3: level 1 is frozen, 4..=5 are not
        // yet active
        let window = LevelWindow::new(2, 3, cfg.levels)?;
        let q: Vec<f64> = (0..8 * dims).map(|_| rng.random_range(0.0..1.0)).collect();
        let feat = encode(&grid, &q, window)?;
        let width = cfg.feature_dim();
        let inactive: f64 = (0..8)
            .flat_map(|p| feat[p * width + 3 * f..(p + 1) * width].iter())
            .fold(0.0, |m, v| m.max(v.abs()));
        let up: Vec<f64> = (0..feat.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads = encode_backward(&grid, &q, window, &up)?;
        let frozen_grad = [0usize, 3, 4].iter().flat_map(|&i| grads[i].iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        out.push(Check::new(s, format!("levels above window silent {dims}d"), inactive, 0.0));
        out.push(Check::new(s, format!("out-of-window tables get no gradient {dims}d"), frozen_grad, 0.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_parse() {
        for s in [Suite::Adjoint, Suite::Gradcheck, Suite::Interp, Suite::All] {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn adjoint_and_interp_suites_pass() {
        for s in [Suite::Adjoint, Suite::Interp] {
            let checks = run(s).unwrap();
            assert!(!checks.is_empty());
            for c in checks {
                assert!(c.passed(), "{c:?}");
            }
        }
    }

    #[test]
    fn check_compares_against_tolerance() {
        assert!(Check::new(Suite::Adjoint, "a", 0.0, 0.0).passed());
        assert!(!Check::new(Suite::Adjoint, "a", f64::NAN, 1.0).passed());
        assert!(!Check::new(Suite::Adjoint, "a", 2.0, 1.0).passed());
    }
}
