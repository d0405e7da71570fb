//! Rank-decomposed 4D motion feature field and the displacement network.
//!
//! The dense `H x W x D x T x C_T` motion feature tensor is never stored. It is the
//! sum of four groups, one per left-out axis `l` of `(x, y, z, t)`; group `l` holds
//! `R_l` terms, each the outer product of a 1D vector along axis `l`, a 3D volume
//! over the remaining three axes and a `C_T`-long feature basis vector. A query
//! interpolates the 1D vector linearly and the volume trilinearly, so the result
//! equals quadrilinear interpolation of the dense tensor.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Aabb, Vec3};
use crate::mlp::{Mlp, MlpCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    /// Spatial vertices along x, y, z.
    pub resolution: [usize; 3],
    /// Temporal vertices. `0` means one per frame.
    pub time_resolution: usize,
    /// Rank of the group leaving out x, y, z and t respectively.
    pub ranks: [usize; 4],
    /// Motion feature channels (`C_T`).
    pub channels: usize,
    /// Hidden widths of the displacement network (two hidden layers make it 3 layers).
    pub hidden: Vec<usize>,
    /// Half-width of the uniform initialisation of the decomposed components.
    pub init_scale: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            resolution: [160, 160, 160],
            time_resolution: 0,
            ranks: [4; 4],
            channels: 8,
            hidden: vec![32, 32],
            init_scale: 0.1,
        }
    }
}

/// One group of rank-one terms sharing a left-out axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionGroup {
    /// Axis the 1D vectors run along (0..3 = x, y, z, t).
    pub axis: usize,
    pub rank: usize,
    /// `n_axis x rank`, node-major.
    pub line: Vec<f64>,
    /// `n_a x n_b x n_c x rank` over the other three axes in ascending order.
    pub volume: Vec<f64>,
    /// `rank x channels`.
    pub basis: Vec<f64>,
}

#[derive(Debug)]
pub struct MotionField {
    /// Vertex counts along x, y, z, t.
    pub dims: [usize; 4],
    pub bounds: Aabb,
    pub channels: usize,
    pub groups: [MotionGroup; 4],
    pub displacement: Mlp,
    clamped: AtomicU64,
}

impl Clone for MotionField {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims,
            bounds: self.bounds,
            channels: self.channels,
            groups: self.groups.clone(),
            displacement: self.displacement.clone(),
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for MotionField {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.bounds == other.bounds
            && self.channels == other.channels
            && self.groups == other.groups
            && self.displacement == other.displacement
    }
}

/// Linear stencil along one axis.
#[derive(Debug, Clone, Copy, Default)]
struct Lin {
    i: usize,
    f: f64,
}

#[inline]
fn lin(g: f64, n: usize) -> Lin {
    let top = (n - 1) as f64;
    let g = if g.is_nan() { 0.0 } else { g.clamp(0.0, top) };
    let i = (g.floor() as usize).min(n - 2);
    Lin { i, f: g - i as f64 }
}

pub(crate) fn other_axes(axis: usize) -> [usize; 3] {
    match axis {
        0 => [1, 2, 3],
        1 => [0, 2, 3],
        2 => [0, 1, 3],
        _ => [0, 1, 2],
    }
}

/// Per-group interpolation stencils for one `(x, t)` query.
#[derive(Debug, Clone, Copy, Default)]
pub struct MotionStencil {
    line: [Lin; 4],
    vol_index: [[usize; 8]; 4],
    vol_weight: [[f64; 8]; 4],
}

/// Scratch for one displacement evaluation.
#[derive(Debug, Clone, Default)]
pub struct MotionCache {
    pub feature: Vec<f64>,
    pub mlp: MlpCache,
}

impl MotionField {
    pub fn new<R: Rng>(cfg: &MotionConfig, bounds: Aabb, frames: usize, rng: &mut R) -> Result<Self> {
        let t = if cfg.time_resolution == 0 {
            frames.max(2)
        } else {
            cfg.time_resolution
        };
        if t < 2 {
            return Err(Error::InvalidConfig(
                "motion field needs a temporal resolution of at least 2".into(),
            ));
        }
        if cfg.channels == 0 {
            return Err(Error::InvalidConfig("motion channels must be >= 1".into()));
        }
        let dims = [cfg.resolution[0], cfg.resolution[1], cfg.resolution[2], t];
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidConfig(format!(
                "motion resolution must be >= 2 on every axis, got {dims:?}"
            )));
        }
        let s = cfg.init_scale;
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if s > 0.0 { rng.gen_range(-s..s) } else { 0.0 })
                .collect()
        };
        let groups = std::array::from_fn(|axis| {
            let rank = cfg.ranks[axis];
            let vol: usize = other_axes(axis).iter().map(|&a| dims[a]).product();
            MotionGroup {
                axis,
                rank,
                line: uniform(dims[axis] * rank),
                volume: uniform(vol * rank),
                basis: uniform(rank * cfg.channels),
            }
        });
        let mut sizes = vec![cfg.channels];
        sizes.extend(&cfg.hidden);
        sizes.push(3);
        let mut displacement = Mlp::init_uniform(&sizes, rng)?;
        displacement.zero_last_layer();
        Ok(Self {
            dims,
            bounds,
            channels: cfg.channels,
            groups,
            displacement,
            clamped: AtomicU64::new(0),
        })
    }

    /// Rebuilds a field from raw parts, validating every buffer length.
    pub fn from_parts(
        dims: [usize; 4],
        bounds: Aabb,
        channels: usize,
        groups: [MotionGroup; 4],
        displacement: Mlp,
    ) -> Result<Self> {
        for g in &groups {
            let vol: usize = other_axes(g.axis).iter().map(|&a| dims[a]).product();
            if g.line.len() != dims[g.axis] * g.rank
                || g.volume.len() != vol * g.rank
                || g.basis.len() != g.rank * channels
            {
                return Err(Error::DimensionMismatch {
                    expected: format!("motion group {} of rank {}", g.axis, g.rank),
                    got: "buffers of another size".into(),
                });
            }
        }
        if displacement.input_dim() != channels || displacement.output_dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: format!("{channels} -> 3 displacement network"),
                got: format!("{:?}", displacement.sizes()),
            });
        }
        Ok(Self {
            dims,
            bounds,
            channels,
            groups,
            displacement,
            clamped: AtomicU64::new(0),
        })
    }

    /// Number of queries whose time fell outside `[0, 1]` and was clamped.
    pub fn clamped_queries(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Continuous lattice coordinates of `(x, t)` on all four axes.
    fn coords(&self, x: Vec3, t: f64) -> [f64; 4] {
        let t = if (0.0..=1.0).contains(&t) {
            t
        } else {
            if self.clamped.fetch_add(1, Ordering::Relaxed) == 0 {
                log::warn!("motion query time {t} outside [0, 1]; clamping");
            }
            t.clamp(0.0, 1.0)
        };
        let mut g = [0.0; 4];
        for a in 0..3 {
            g[a] = (x[a] - self.bounds.min[a]) / (self.bounds.max[a] - self.bounds.min[a])
                * (self.dims[a] - 1) as f64;
        }
        g[3] = t * (self.dims[3] - 1) as f64;
        g
    }

    pub fn stencil(&self, x: Vec3, t: f64) -> MotionStencil {
        let g = self.coords(x, t);
        let lines: [Lin; 4] = std::array::from_fn(|a| lin(g[a], self.dims[a]));
        let mut vol_index = [[0usize; 8]; 4];
        let mut vol_weight = [[0.0; 8]; 4];
        for axis in 0..4 {
            let [a, b, c] = other_axes(axis);
            let (la, lb, lc) = (lines[a], lines[b], lines[c]);
            let (nb, nc) = (self.dims[b], self.dims[c]);
            for corner in 0..8 {
                let (da, db, dc) = (corner >> 2 & 1, corner >> 1 & 1, corner & 1);
                let wa = if da == 1 { la.f } else { 1.0 - la.f };
                let wb = if db == 1 { lb.f } else { 1.0 - lb.f };
                let wc = if dc == 1 { lc.f } else { 1.0 - lc.f };
                vol_index[axis][corner] = ((la.i + da) * nb + lb.i + db) * nc + lc.i + dc;
                vol_weight[axis][corner] = wa * wb * wc;
            }
        }
        MotionStencil {
            line: lines,
            vol_index,
            vol_weight,
        }
    }

    /// Per-term products `line(coord_l) * volume(coords_others)` for one group.
    #[inline]
    fn term_factors(&self, g: &MotionGroup, st: &MotionStencil, r: usize) -> (f64, f64) {
        let l = st.line[g.axis];
        let rank = g.rank;
        let lv = g.line[l.i * rank + r] * (1.0 - l.f) + g.line[(l.i + 1) * rank + r] * l.f;
        let mut vv = 0.0;
        for c in 0..8 {
            vv += st.vol_weight[g.axis][c] * g.volume[st.vol_index[g.axis][c] * rank + r];
        }
        (lv, vv)
    }

    pub fn feature_into(&self, st: &MotionStencil, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let ch = self.channels;
        for g in &self.groups {
            for r in 0..g.rank {
                let (lv, vv) = self.term_factors(g, st, r);
                let coef = lv * vv;
                let b = &g.basis[r * ch..(r + 1) * ch];
                for (o, bv) in out.iter_mut().zip(b) {
                    *o += coef * bv;
                }
            }
        }
    }

    /// Motion feature vector at `(x, t)`; `t` outside `[0, 1]` is clamped and counted.
    pub fn eval_motion_feature(&self, x: Vec3, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.feature_into(&self.stencil(x, t), &mut out);
        out
    }

    /// Displacement `G(feature(x, t))` in world units.
    pub fn displacement(&self, x: Vec3, t: f64) -> Vec3 {
        let mut cache = MotionCache::default();
        self.displacement_cached(&self.stencil(x, t), &mut cache)
    }

    pub fn displacement_cached(&self, st: &MotionStencil, cache: &mut MotionCache) -> Vec3 {
        cache.feature.resize(self.channels, 0.0);
        self.feature_into(st, &mut cache.feature);
        let mut out = [0.0; 3];
        self.displacement
            .forward_cached(&cache.feature, &mut out, &mut cache.mlp);
        out
    }

    /// Maps an observed point at time `t` into the canonical field: `x + displacement`.
    pub fn warp_to_canonical(&self, x: Vec3, t: f64) -> Vec3 {
        let d = self.displacement(x, t);
        [x[0] + d[0], x[1] + d[1], x[2] + d[2]]
    }

    /// Accumulates gradients of the decomposed components given `d loss / d feature`.
    ///
    /// `grads` holds, per group, the line, volume and basis gradient buffers.
    pub fn backward_components(
        &self,
        st: &MotionStencil,
        dfeature: &[f64],
        grads: &mut [[&mut [f64]; 3]; 4],
    ) {
        let ch = self.channels;
        for (g, gg) in self.groups.iter().zip(grads.iter_mut()) {
            let rank = g.rank;
            let l = st.line[g.axis];
            for r in 0..rank {
                let (lv, vv) = self.term_factors(g, st, r);
                let b = &g.basis[r * ch..(r + 1) * ch];
                let mut dcoef = 0.0;
                for c in 0..ch {
                    dcoef += b[c] * dfeature[c];
                }
                let coef = lv * vv;
                let [gline, gvol, gbasis] = gg;
                for c in 0..ch {
                    gbasis[r * ch + c] += coef * dfeature[c];
                }
                if dcoef == 0.0 {
                    continue;
                }
                let dl = dcoef * vv;
                gline[l.i * rank + r] += dl * (1.0 - l.f);
                gline[(l.i + 1) * rank + r] += dl * l.f;
                let dv = dcoef * lv;
                for c in 0..8 {
                    gvol[st.vol_index[g.axis][c] * rank + r] += dv * st.vol_weight[g.axis][c];
                }
            }
        }
    }

    /// Parameters stored by the decomposition plus the network.
    pub fn num_params(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.line.len() + g.volume.len() + g.basis.len())
            .sum::<usize>()
            + self.displacement.num_params()
    }

    /// Bytes the decomposed components occupy at 32-bit precision.
    pub fn decomposed_bytes(&self) -> usize {
        4 * self
            .groups
            .iter()
            .map(|g| g.line.len() + g.volume.len() + g.basis.len())
            .sum::<usize>()
    }

    /// Bytes a dense `H x W x D x T x C_T` tensor would occupy at 32-bit precision.
    pub fn dense_bytes(&self) -> usize {
        4 * self.dims.iter().product::<usize>() * self.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(ranks: [usize; 4], res: [usize; 3], t: usize, seed: u64) -> MotionField {
        let cfg = MotionConfig {
            resolution: res,
            time_resolution: t,
            ranks,
            channels: 4,
            hidden: vec![5, 5],
            init_scale: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MotionField::new(&cfg, Aabb::new([0.0; 3], [1.0; 3]), t, &mut rng).unwrap()
    }

    #[test]
    fn zero_components_give_zero_feature() {
        let mut f = field([2; 4], [3, 3, 3], 4, 1);
        for g in f.groups.iter_mut() {
            g.line.fill(0.0);
            g.volume.fill(0.0);
            g.basis.fill(0.0);
        }
        assert!(f.eval_motion_feature([0.3, 0.4, 0.5], 0.7).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_outer_product_at_node() {
        // one rank-1 term in the group leaving out t
        let mut f = field([0, 0, 0, 1], [3, 3, 3], 5, 2);
        let g = &mut f.groups[3];
        g.line.fill(0.0);
        g.volume.fill(0.0);
        g.basis.fill(0.0);
        g.line[2] = 2.0; // t node 2 -> t = 0.5
        g.volume[(1 * 3 + 2) * 3 + 0] = 3.0; // x node 1, y node 2, z node 0
        g.basis[0] = 1.0;
        let feat = f.eval_motion_feature([0.5, 1.0, 0.0], 0.5);
        assert_eq!(feat, vec![6.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fresh_field_has_identity_warp() {
        let f = field([4; 4], [4, 4, 4], 6, 3);
        for (x, t) in [([0.1, 0.2, 0.3], 0.0), ([0.9, 0.5, 0.4], 0.77)] {
            assert_eq!(f.displacement(x, t), [0.0; 3]);
            assert_eq!(f.warp_to_canonical(x, t), x);
        }
    }

    #[test]
    fn constant_network_gives_constant_warp() {
        let mut f = field([2; 4], [4, 4, 4], 6, 4);
        f.displacement.params.fill(0.0);
        let n = f.displacement.params.len();
        // output bias only
        f.displacement.params[n - 3] = 0.1;
        for (x, t) in [([0.1, 0.2, 0.3], 0.0), ([0.9, 0.5, 0.4], 0.77)] {
            let w = f.warp_to_canonical(x, t);
            assert!((w[0] - (x[0] + 0.1)).abs() < 1e-15);
            assert_eq!(w[1], x[1]);
            assert_eq!(w[2], x[2]);
        }
    }

    #[test]
    fn hand_set_displacement_network() {
        // C_T = 1 via a custom field: 1 -> 1 -> 1 -> 3
        let mut f = field([1, 0, 0, 0], [2, 2, 2], 2, 5);
        f.channels = 1;
        let g = &mut f.groups[0];
        g.line.fill(1.0);
        g.volume.fill(0.5);
        g.basis = vec![2.0];
        // feature = 1 * 0.5 * 2 = 1 everywhere
        f.displacement =
            Mlp::from_params(&[1, 1, 1, 3], vec![1.0, 0.0, 2.0, -1.0, 1.0, 2.0, -3.0, 0.0, 0.0, 0.5])
                .unwrap();
        // h1 = silu(1) = 0.7310585786300049, h2 = silu(2 h1 - 1) = silu(0.46211715726000974)
        // = 0.2835164105...; out = (h2, 2 h2, -3 h2 + 0.5)
        let h2 = 0.283_516_410_502_922;
        let d = f.displacement([0.3, 0.6, 0.2], 0.4);
        let expected = [h2, 2.0 * h2, -3.0 * h2 + 0.5];
        for a in 0..3 {
            assert!((d[a] - expected[a]).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn time_outside_unit_interval_is_clamped_and_counted() {
        let f = field([2; 4], [3, 3, 3], 4, 6);
        let a = f.eval_motion_feature([0.5; 3], 1.7);
        let b = f.eval_motion_feature([0.5; 3], 1.0);
        assert_eq!(a, b);
        assert_eq!(f.clamped_queries(), 1);
        f.eval_motion_feature([0.5; 3], -0.2);
        assert_eq!(f.clamped_queries(), 2);
    }

    #[test]
    fn groups_add_linearly() {
        let f = field([2, 3, 1, 2], [4, 5, 3], 5, 7);
        let x = [0.37, 0.81, 0.22];
        let t = 0.63;
        let full = f.eval_motion_feature(x, t);
        let mut sum = vec![0.0; f.channels];
        for keep in 0..4 {
            let mut only = f.clone();
            for (i, g) in only.groups.iter_mut().enumerate() {
                if i != keep {
                    g.basis.fill(0.0);
                }
            }
            let part = only.eval_motion_feature(x, t);
            for c in 0..f.channels {
                sum[c] += part[c];
            }
        }
        for c in 0..f.channels {
            assert!((full[c] - sum[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_is_smaller_than_dense() {
        let cfg = MotionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // reduced spatial size keeps the test light; the ratio only grows with resolution
        let cfg = MotionConfig {
            resolution: [32, 32, 32],
            ..cfg
        };
        let f = MotionField::new(&cfg, Aabb::new([0.0; 3], [1.0; 3]), 30, &mut rng).unwrap();
        assert!(f.decomposed_bytes() < f.dense_bytes());
        // analytic count at the default 160^3 x 30, ranks 4, C_T 8
        let (h, t, r, c) = (160usize, 30usize, 4usize, 8usize);
        let dense = h * h * h * t * c;
        let decomposed = r * (h * h * h + 3 * h * h * t) + r * (3 * h + t) + 4 * r * c;
        assert!(decomposed < dense);
    }

    #[test]
    fn warp_is_continuous_in_time() {
        let mut f = field([2; 4], [4, 4, 4], 6, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in f.displacement.params.iter_mut() {
            *p = rng.gen_range(-0.5..0.5);
        }
        let x = [0.42, 0.17, 0.66];
        let mut max_ratio: f64 = 0.0;
        for k in 0..50 {
            let t = k as f64 / 51.0;
            for eps in [1e-3, 1e-4, 1e-5] {
                let a = f.warp_to_canonical(x, t);
                let b = f.warp_to_canonical(x, t + eps);
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                max_ratio = max_ratio.max(d / eps);
            }
        }
        // Lipschitz in t: ratio bounded independently of eps
        assert!(max_ratio.is_finite() && max_ratio < 1e3, "{max_ratio}");
    }
}
