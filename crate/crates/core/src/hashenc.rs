//! Multiresolution hash-grid encoding in 2D and 3D.
//!
//! Level `l` (1-based) is a grid of `N_l = floor(n_min * b^(l-1))` cells per
//! axis over the unit cube. A point's feature at that level is the
//! multilinear interpolation of the `2^dims` corner entries of its cell.
//! Corners are addressed directly while the `(N_l + 1)^dims` vertices fit in
//! the table, and through a spatial hash otherwise. Level features are
//! concatenated level-major.
//!
//! A [`LevelWindow`] restricts which levels participate: levels above the
//! window output zeros, levels inside it are trainable, and levels below it
//! are frozen (they keep contributing to the output unless the config turns
//! that off, but never receive table gradients).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::real::Real;

pub const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

const INIT_SCALE: f64 = 1e-4;

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashGridConfig {
    pub n_min: usize,
    pub growth: f64,
    pub levels: usize,
    pub feats_per_level: usize,
    pub log2_table_size: u32,
    pub dims: usize,
    /// Frozen levels (below the window) still feed the decoder.
    #[serde(default = "default_true")]
    pub frozen_levels_contribute: bool,
}

impl HashGridConfig {
    pub fn paper_dvf() -> Self {
        Self {
            n_min: 2,
            growth: 2.0,
            levels: 10,
            feats_per_level: 4,
            log2_table_size: 21,
            dims: 3,
            frozen_levels_contribute: true,
        }
    }

    pub fn paper_canonical() -> Self {
        Self {
            n_min: 2,
            growth: 2.0,
            levels: 12,
            feats_per_level: 8,
            log2_table_size: 21,
            dims: 2,
            frozen_levels_contribute: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_min < 1 {
            return invalid("hash grid n_min must be >= 1");
        }
        if !(self.growth > 1.0) || !self.growth.is_finite() {
            return invalid("hash grid growth must be > 1");
        }
        if self.levels < 1 || self.feats_per_level < 1 {
            return invalid("hash grid needs at least one level and one feature");
        }
        if !(2..=3).contains(&self.dims) {
            return invalid(format!("hash grid dims must be 2 or 3, got {}", self.dims));
        }
        if self.log2_table_size == 0 || self.log2_table_size > 30 {
            return invalid("hash table size must be 2^k with 1 <= k <= 30");
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1 << self.log2_table_size
    }

    pub fn feature_dim(&self) -> usize {
        self.levels * self.feats_per_level
    }

    /// Cells per axis at 1-based level `l`.
    pub fn level_resolution(&self, l: usize) -> usize {
        level_resolution(self, l)
    }

    fn vertex_count(&self, l: usize) -> Option<usize> {
        let side = self.level_resolution(l).checked_add(1)?;
        (0..self.dims).try_fold(1usize, |acc, _| acc.checked_mul(side))
    }

    pub fn is_dense(&self, l: usize) -> bool {
        self.vertex_count(l).is_some_and(|v| v <= self.table_size())
    }

    /// Table rows allocated for level `l`.
    pub fn level_entries(&self, l: usize) -> usize {
        match self.vertex_count(l) {
            Some(v) if v <= self.table_size() => v,
            _ => self.table_size(),
        }
    }

    pub fn total_parameters(&self) -> usize {
        (1..=self.levels).map(|l| self.level_entries(l) * self.feats_per_level).sum()
    }
}

/// `N_l = floor(n_min * b^(l - 1))` for 1-based `l`.
pub fn level_resolution(config: &HashGridConfig, l: usize) -> usize {
    assert!(l >= 1 && l <= config.levels, "level {l} outside 1..={}", config.levels);
    (config.n_min as f64 * config.growth.powi(l as i32 - 1) + 1e-9).floor() as usize
}

/// Inclusive 1-based range of trainable levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelWindow {
    lo: usize,
    hi: usize,
}

impl LevelWindow {
    pub fn new(lo: usize, hi: usize, levels: usize) -> Result<Self> {
        if lo < 1 || lo > hi || hi > levels {
            return invalid(format!("level window ({lo}, {hi}) invalid for {levels} levels"));
        }
        Ok(Self { lo, hi })
    }

    pub fn full(levels: usize) -> Self {
        Self { lo: 1, hi: levels }
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn trains(&self, l: usize) -> bool {
        (self.lo..=self.hi).contains(&l)
    }

    pub fn outputs(&self, l: usize, frozen_contribute: bool) -> bool {
        l <= self.hi && (frozen_contribute || l >= self.lo)
    }
}

/// Which of the two coordinate networks a schedule applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Dvf,
    Canonical,
}

const DVF_STAGES: (usize, [(usize, usize); 3]) = (10, [(1, 6), (4, 8), (6, 10)]);
const CANONICAL_STAGES: (usize, [(usize, usize); 3]) = (12, [(1, 8), (6, 10), (8, 12)]);

/// Stage index (0, 1, 2) of a 1-based iteration. Boundaries sit at 1/3 and
/// 2/3 of the budget and belong to the earlier stage.
pub fn schedule_stage(iteration: usize, total_iters: usize) -> usize {
    if iteration * 3 <= total_iters {
        0
    } else if iteration * 3 <= 2 * total_iters {
        1
    } else {
        2
    }
}

/// Coarse-to-fine level window for `net` at a 1-based iteration.
///
/// With the reference level counts (10 for the DVF grid, 12 for the
/// canonical grid) the windows are (1,6)/(4,8)/(6,10) and
/// (1,8)/(6,10)/(8,12). Other level counts rescale the bounds
/// proportionally.
pub fn schedule_window(net: NetKind, iteration: usize, total_iters: usize, levels: usize) -> LevelWindow {
    let (ref_levels, stages) = match net {
        NetKind::Dvf => DVF_STAGES,
        NetKind::Canonical => CANONICAL_STAGES,
    };
    let (lo, hi) = stages[schedule_stage(iteration.max(1), total_iters)];
    if levels == ref_levels {
        return LevelWindow { lo, hi };
    }
    let scale = |v: usize| ((v * levels) as f64 / ref_levels as f64).round() as usize;
    let lo = scale(lo).clamp(1, levels);
    let hi = scale(hi).clamp(lo, levels);
    LevelWindow { lo, hi }
}

/// Learnable feature tables, one per level, each `entries x F` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HashGrid<T> {
    config: HashGridConfig,
    tables: Vec<Vec<T>>,
}

impl<T: Real> HashGrid<T> {
    /// Tables drawn from `uniform(-1e-4, 1e-4)`.
    pub fn new<R: Rng>(config: HashGridConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let tables = (1..=config.levels)
            .map(|l| {
                (0..config.level_entries(l) * config.feats_per_level)
                    .map(|_| T::lit(rng.random_range(-INIT_SCALE..INIT_SCALE)))
                    .collect()
            })
            .collect();
        Ok(Self { config, tables })
    }

    pub fn from_tables(config: HashGridConfig, tables: Vec<Vec<T>>) -> Result<Self> {
        config.validate()?;
        if tables.len() != config.levels {
            return shape_err(format!("{} tables for {} levels", tables.len(), config.levels));
        }
        for (i, t) in tables.iter().enumerate() {
            let want = config.level_entries(i + 1) * config.feats_per_level;
            if t.len() != want {
                return shape_err(format!("level {} table has {} values, expected {want}", i + 1, t.len()));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("level {} table has non-finite entries", i + 1)));
            }
        }
        Ok(Self { config, tables })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn tables(&self) -> &[Vec<T>] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.tables
    }

    /// Table of 1-based level `l`.
    pub fn level(&self, l: usize) -> &[T] {
        &self.tables[l - 1]
    }

    pub fn cast<U: Real>(&self) -> HashGrid<U> {
        HashGrid {
            config: self.config.clone(),
            tables: self.tables.iter().map(|t| t.iter().map(|v| U::lit(v.as_f64())).collect()).collect(),
        }
    }

    pub fn table_refs(&self) -> Vec<&[T]> {
        self.tables.iter().map(Vec::as_slice).collect()
    }

    /// Table row of the integer vertex `corner` at level `l`.
    pub fn slot(&self, l: usize, corner: &[usize]) -> usize {
        slot(&self.config, l, corner)
    }
}

fn slot(config: &HashGridConfig, l: usize, corner: &[usize]) -> usize {
    LevelGeom::new(config, l).slot(corner)
}

/// Per-level constants hoisted out of the point loops.
#[derive(Clone, Copy)]
struct LevelGeom {
    n: usize,
    dense: bool,
    mask: usize,
}

impl LevelGeom {
    fn new(config: &HashGridConfig, l: usize) -> Self {
        Self { n: config.level_resolution(l), dense: config.is_dense(l), mask: config.table_size() - 1 }
    }

    #[inline]
    fn slot(&self, corner: &[usize]) -> usize {
        if self.dense {
            let side = self.n + 1;
            corner.iter().rev().fold(0, |acc, &c| acc * side + c)
        } else {
            let h = corner
                .iter()
                .zip(HASH_PRIMES)
                .fold(0u32, |acc, (&c, p)| acc ^ (c as u32).wrapping_mul(p));
            (h as usize) & self.mask
        }
    }
}

/// Corner rows, weights, and weight derivatives for one point at one level.
struct CellStencil<T> {
    count: usize,
    rows: [usize; 8],
    weights: [T; 8],
    dweights: [[T; 3]; 8],
}

fn stencil<T: Real>(geom: LevelGeom, q: &[T]) -> CellStencil<T> {
    let dims = q.len();
    let n = geom.n;
    let nf = T::lit(n as f64);
    let mut cell = [0usize; 3];
    let mut frac = [T::zero(); 3];
    for d in 0..dims {
        let pos = q[d] * nf;
        let c = pos.floor().to_usize().unwrap_or(0).min(n - 1);
        cell[d] = c;
        frac[d] = pos - T::lit(c as f64);
    }
    let count = 1 << dims;
    let mut st = CellStencil { count, rows: [0; 8], weights: [T::zero(); 8], dweights: [[T::zero(); 3]; 8] };
    let mut corner = [0usize; 3];
    for k in 0..count {
        let mut w = T::one();
        let mut factors = [T::one(); 3];
        for d in 0..dims {
            let bit = (k >> d) & 1;
            corner[d] = cell[d] + bit;
            factors[d] = if bit == 1 { frac[d] } else { T::one() - frac[d] };
            w *= factors[d];
        }
        for d in 0..dims {
            let sign = if (k >> d) & 1 == 1 { T::one() } else { -T::one() };
            let mut g = sign * nf;
            for e in 0..dims {
                if e != d {
                    g *= factors[e];
                }
            }
            st.dweights[k][d] = g;
        }
        st.rows[k] = geom.slot(&corner[..dims]);
        st.weights[k] = w;
    }
    st
}

fn check_coords<T: Real>(config: &HashGridConfig, coords: &[T]) -> Result<usize> {
    let dims = config.dims;
    if coords.len() % dims != 0 {
        return shape_err(format!("{} coordinate values are not a multiple of {dims}", coords.len()));
    }
    for (i, &v) in coords.iter().enumerate() {
        if !(v >= T::zero() && v <= T::one()) {
            return Err(Error::InvalidArgument(format!(
                "coordinate {} of point {} is {v}, outside [0, 1]",
                i % dims,
                i / dims
            )));
        }
    }
    Ok(coords.len() / dims)
}

/// Point-major features, `points x (L * F)`.
pub fn encode<T: Real>(grid: &HashGrid<T>, coords: &[T], window: LevelWindow) -> Result<Vec<T>> {
    encode_tables(&grid.config, &grid.table_refs(), coords, window)
}

/// [`encode`] over tables held elsewhere (e.g. on an autodiff tape).
pub fn encode_tables<T: Real>(
    cfg: &HashGridConfig,
    tables: &[&[T]],
    coords: &[T],
    window: LevelWindow,
) -> Result<Vec<T>> {
    check_tables(cfg, tables)?;
    check_window(cfg, window)?;
    let n = check_coords(cfg, coords)?;
    let f = cfg.feats_per_level;
    let width = cfg.feature_dim();
    let mut out = vec![T::zero(); n * width];
    for l in 1..=cfg.levels {
        if !window.outputs(l, cfg.frozen_levels_contribute) {
            continue;
        }
        let table = tables[l - 1];
        let geom = LevelGeom::new(cfg, l);
        for p in 0..n {
            let st = stencil(geom, &coords[p * cfg.dims..(p + 1) * cfg.dims]);
            let dst = &mut out[p * width + (l - 1) * f..p * width + l * f];
            for k in 0..st.count {
                let row = &table[st.rows[k] * f..(st.rows[k] + 1) * f];
                for (o, v) in dst.iter_mut().zip(row) {
                    *o += st.weights[k] * *v;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of an encode call.
#[derive(Clone, Debug)]
pub struct EncodeGrads<T> {
    /// Per level; `None` where the level received no gradient.
    pub tables: Vec<Option<Vec<T>>>,
    /// `points x dims`, present when requested.
    pub coords: Option<Vec<T>>,
}

/// Table gradients for the upstream gradient of [`encode`]'s output. Levels
/// outside the window get all-zero gradients.
pub fn encode_backward<T: Real>(
    grid: &HashGrid<T>,
    coords: &[T],
    window: LevelWindow,
    upstream: &[T],
) -> Result<Vec<Vec<T>>> {
    let grads = encode_backward_full(grid, coords, window, upstream, false)?;
    Ok(grads
        .tables
        .into_iter()
        .enumerate()
        .map(|(i, g)| g.unwrap_or_else(|| vec![T::zero(); grid.tables[i].len()]))
        .collect())
}

/// Table and (optionally) coordinate gradients.
///
/// The coordinate gradient flows through every level that contributes to
/// the forward output, frozen or not.
pub fn encode_backward_full<T: Real>(
    grid: &HashGrid<T>,
    coords: &[T],
    window: LevelWindow,
    upstream: &[T],
    want_coords: bool,
) -> Result<EncodeGrads<T>> {
    encode_backward_tables(&grid.config, &grid.table_refs(), coords, window, upstream, want_coords)
}

/// [`encode_backward_full`] over tables held elsewhere.
pub fn encode_backward_tables<T: Real>(
    cfg: &HashGridConfig,
    tables: &[&[T]],
    coords: &[T],
    window: LevelWindow,
    upstream: &[T],
    want_coords: bool,
) -> Result<EncodeGrads<T>> {
    check_tables(cfg, tables)?;
    check_window(cfg, window)?;
    let n = check_coords(cfg, coords)?;
    let f = cfg.feats_per_level;
    let width = cfg.feature_dim();
    if upstream.len() != n * width {
        return shape_err(format!("upstream gradient has {} values, expected {}", upstream.len(), n * width));
    }
    let dims = cfg.dims;
    let mut table_grads: Vec<Option<Vec<T>>> = vec![None; cfg.levels];
    let mut dcoords = want_coords.then(|| vec![T::zero(); n * dims]);
    for l in 1..=cfg.levels {
        let trains = window.trains(l);
        let outputs = window.outputs(l, cfg.frozen_levels_contribute);
        if !outputs || (!trains && dcoords.is_none()) {
            continue;
        }
        let table = tables[l - 1];
        let mut gtable = trains.then(|| vec![T::zero(); table.len()]);
        let geom = LevelGeom::new(cfg, l);
        for p in 0..n {
            let st = stencil(geom, &coords[p * dims..(p + 1) * dims]);
            let up = &upstream[p * width + (l - 1) * f..p * width + l * f];
            for k in 0..st.count {
                let r = st.rows[k] * f;
                if let Some(g) = gtable.as_mut() {
                    for (gv, u) in g[r..r + f].iter_mut().zip(up) {
                        *gv += st.weights[k] * *u;
                    }
                }
                if let Some(dc) = dcoords.as_mut() {
                    let dot = table[r..r + f].iter().zip(up).fold(T::zero(), |a, (v, u)| a + *v * *u);
                    for d in 0..dims {
                        dc[p * dims + d] += st.dweights[k][d] * dot;
                    }
                }
            }
        }
        table_grads[l - 1] = gtable;
    }
    Ok(EncodeGrads { tables: table_grads, coords: dcoords })
}

fn check_tables<T>(cfg: &HashGridConfig, tables: &[&[T]]) -> Result<()> {
    if tables.len() != cfg.levels {
        return shape_err(format!("{} tables for {} levels", tables.len(), cfg.levels));
    }
    for (i, t) in tables.iter().enumerate() {
        let want = cfg.level_entries(i + 1) * cfg.feats_per_level;
        if t.len() != want {
            return shape_err(format!("level {} table has {} values, expected {want}", i + 1, t.len()));
        }
    }
    Ok(())
}

fn check_window(cfg: &HashGridConfig, window: LevelWindow) -> Result<()> {
    if window.hi > cfg.levels {
        return invalid(format!("window ({}, {}) exceeds {} levels", window.lo, window.hi, cfg.levels));
    }
    Ok(())
}
