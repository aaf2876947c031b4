//! Coordinate-driven primitives: hash-grid lookup, canonical-space warping,
//! and bilinear resampling.

use super::{Tape, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::hashenc::{encode_backward_tables, encode_tables, HashGridConfig, LevelWindow};
use crate::real::Real;

/// Result of [`Tape::warp_to_canonical`].
#[derive(Clone, Copy, Debug)]
pub struct WarpOutput {
    /// `[B * H * W, 2]` unit-domain coordinates for the canonical grid.
    pub coords: Var,
    /// Points with at least one component clamped to the margin.
    pub saturated: usize,
}

impl<T: Real> Tape<T> {
    /// Hash-grid features of `coords` (`[B * H * W, dims]`, unit domain),
    /// laid out as a `[B, L * F, H, W]` feature image. `tables` holds one
    /// flat table per level. Gradients reach the tables of levels inside
    /// `window` and, when it requires one, the coordinates.
    pub fn hash_encode(
        &mut self,
        config: &HashGridConfig,
        tables: &[Var],
        coords: Var,
        window: LevelWindow,
        layout: (usize, usize, usize),
    ) -> Result<Var> {
        let (b, h, w) = layout;
        let hw = h * w;
        let n = b * hw;
        if self.shape(coords) != [n, config.dims] {
            return shape_err(format!(
                "hash_encode coords {:?} do not match layout {layout:?} with {} dims",
                self.shape(coords),
                config.dims
            ));
        }
        let c = config.feature_dim();
        let refs: Vec<&[T]> = tables.iter().map(|&t| self.value(t).data.as_slice()).collect();
        let feats = encode_tables(config, &refs, &self.value(coords).data, window)?;
        let value = to_channel_major(&feats, b, hw, c);
        let cfg = config.clone();
        let tables_owned = tables.to_vec();
        let mut parents = vec![coords];
        parents.extend_from_slice(tables);
        self.push(
            "hash_encode",
            Tensor::from_parts(vec![b, c, h, w], value),
            parents,
            Box::new(move |tape, up, needs| {
                let refs: Vec<&[T]> = tables_owned.iter().map(|&t| tape.value(t).data.as_slice()).collect();
                let upstream = to_point_major(&up.data, b, hw, c);
                let grads =
                    encode_backward_tables(&cfg, &refs, &tape.value(coords).data, window, &upstream, needs[0])
                        .expect("inputs validated in forward");
                let mut out = vec![grads.coords.map(|g| Tensor::from_parts(vec![n, cfg.dims], g))];
                for ((g, &t), need) in grads.tables.into_iter().zip(&tables_owned).zip(&needs[1..]) {
                    out.push(g.filter(|_| *need).map(|g| Tensor::from_parts(tape.shape(t).to_vec(), g)));
                }
                out
            }),
        )
    }

    /// Displaces every pixel center `p = ((j + 0.5) / W, (i + 0.5) / H)`
    /// by `u` (`[B, 2, H, W]`, channel 0 along x), clamps `p + u` to
    /// `[-margin, 1 + margin]`, and maps it affinely onto `[0, 1]`.
    /// Clamped components pass no gradient.
    pub fn warp_to_canonical(&mut self, u: Var, margin: f64) -> Result<WarpOutput> {
        let shape = self.shape(u).to_vec();
        if shape.len() != 4 || shape[1] != 2 {
            return shape_err(format!("warp expects [B, 2, H, W], got {shape:?}"));
        }
        let (b, h, w) = (shape[0], shape[2], shape[3]);
        let hw = h * w;
        let span = 1.0 + 2.0 * margin;
        let uv = self.value(u);
        let mut q = vec![T::zero(); b * hw * 2];
        let mut live = vec![true; b * hw * 2];
        let mut saturated = 0;
        for bi in 0..b {
            for i in 0..h {
                for j in 0..w {
                    let s = i * w + j;
                    let p = bi * hw + s;
                    let base = [(j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64];
                    let mut clamped = false;
                    for d in 0..2 {
                        let v = base[d] + uv.data[(bi * 2 + d) * hw + s].as_f64();
                        let c = v.clamp(-margin, 1.0 + margin);
                        if c != v {
                            clamped = true;
                            live[p * 2 + d] = false;
                        }
                        q[p * 2 + d] = T::lit(((c + margin) / span).clamp(0.0, 1.0));
                    }
                    saturated += clamped as usize;
                }
            }
        }
        let inv = T::lit(1.0 / span);
        let coords = self.push(
            "warp_to_canonical",
            Tensor::from_parts(vec![b * hw, 2], q),
            vec![u],
            Box::new(move |_, up, _| {
                let mut g = vec![T::zero(); b * 2 * hw];
                for bi in 0..b {
                    for s in 0..hw {
                        let p = bi * hw + s;
                        for d in 0..2 {
                            if live[p * 2 + d] {
                                g[(bi * 2 + d) * hw + s] = up.data[p * 2 + d] * inv;
                            }
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![b, 2, h, w], g))]
            }),
        )?;
        Ok(WarpOutput { coords, saturated })
    }

    /// Samples a `[C, H, W]` image at `[N, 2]` positions `(x, y)` in pixel
    /// units (column, row), clamped to the image; output `[N, C]`.
    /// Gradients flow to both the image and the positions.
    pub fn bilinear_sample(&mut self, src: Var, pos: Var) -> Result<Var> {
        let ss = self.shape(src).to_vec();
        let ps = self.shape(pos).to_vec();
        if ss.len() != 3 || ss[1] < 2 || ss[2] < 2 || ps.len() != 2 || ps[1] != 2 {
            return shape_err(format!("bilinear_sample expects [C, H>=2, W>=2] and [N, 2], got {ss:?} and {ps:?}"));
        }
        let (c, h, w) = (ss[0], ss[1], ss[2]);
        let n = ps[0];
        let stencil = move |x: T, y: T| {
            let xc = x.max(T::zero()).min(T::lit((w - 1) as f64));
            let yc = y.max(T::zero()).min(T::lit((h - 1) as f64));
            let x0 = xc.floor().to_usize().unwrap_or(0).min(w - 2);
            let y0 = yc.floor().to_usize().unwrap_or(0).min(h - 2);
            (x0, y0, xc - T::lit(x0 as f64), yc - T::lit(y0 as f64), xc == x, yc == y)
        };
        let sv = self.value(src);
        let pv = self.value(pos);
        let mut out = vec![T::zero(); n * c];
        for p in 0..n {
            let (x0, y0, fx, fy, _, _) = stencil(pv.data[2 * p], pv.data[2 * p + 1]);
            for ch in 0..c {
                let img = &sv.data[ch * h * w..];
                let at = |i: usize, j: usize| img[i * w + j];
                out[p * c + ch] = (T::one() - fy) * ((T::one() - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                    + fy * ((T::one() - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            }
        }
        self.push(
            "bilinear_sample",
            Tensor::from_parts(vec![n, c], out),
            vec![src, pos],
            Box::new(move |tape, up, needs| {
                let sv = tape.value(src);
                let pv = tape.value(pos);
                let mut gs = needs[0].then(|| vec![T::zero(); c * h * w]);
                let mut gp = needs[1].then(|| vec![T::zero(); n * 2]);
                for p in 0..n {
                    let (x0, y0, fx, fy, x_live, y_live) = stencil(pv.data[2 * p], pv.data[2 * p + 1]);
                    for ch in 0..c {
                        let u = up.data[p * c + ch];
                        let base = ch * h * w;
                        let corners = [
                            (y0, x0, (T::one() - fy) * (T::one() - fx)),
                            (y0, x0 + 1, (T::one() - fy) * fx),
                            (y0 + 1, x0, fy * (T::one() - fx)),
                            (y0 + 1, x0 + 1, fy * fx),
                        ];
                        if let Some(gs) = gs.as_mut() {
                            for (i, j, wt) in corners {
                                gs[base + i * w + j] += u * wt;
                            }
                        }
                        if let Some(gp) = gp.as_mut() {
                            let at = |i: usize, j: usize| sv.data[base + i * w + j];
                            let (v00, v01, v10, v11) = (at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1));
                            if x_live {
                                gp[2 * p] += u * ((T::one() - fy) * (v01 - v00) + fy * (v11 - v10));
                            }
                            if y_live {
                                gp[2 * p + 1] += u * ((T::one() - fx) * (v10 - v00) + fx * (v11 - v01));
                            }
                        }
                    }
                }
                vec![
                    gs.map(|g| Tensor::from_parts(vec![c, h, w], g)),
                    gp.map(|g| Tensor::from_parts(vec![n, 2], g)),
                ]
            }),
        )
    }
}

fn to_channel_major<T: Real>(feats: &[T], b: usize, hw: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); feats.len()];
    for bi in 0..b {
        for s in 0..hw {
            let src = &feats[(bi * hw + s) * c..][..c];
            for (ch, v) in src.iter().enumerate() {
                out[(bi * c + ch) * hw + s] = *v;
            }
        }
    }
    out
}

fn to_point_major<T: Real>(img: &[T], b: usize, hw: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); img.len()];
    for bi in 0..b {
        for ch in 0..c {
            let src = &img[(bi * c + ch) * hw..][..hw];
            for (s, v) in src.iter().enumerate() {
                out[(bi * hw + s) * c + ch] = *v;
            }
        }
    }
    out
}
