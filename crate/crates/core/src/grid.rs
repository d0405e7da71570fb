//! Regular vertex grids over an axis-aligned box and their trilinear stencils.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn extent(&self) -> Vec3 {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn contains(&self, x: Vec3) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] && x[a] <= self.max[a])
    }

    /// Grows every axis by `frac` of its extent on both sides.
    pub fn padded(&self, frac: f64) -> Self {
        let e = self.extent();
        let mut out = *self;
        for a in 0..3 {
            out.min[a] -= e[a] * frac;
            out.max[a] += e[a] * frac;
        }
        out
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Aabb::new(first, first);
        for p in it {
            for a in 0..3 {
                b.min[a] = b.min[a].min(p[a]);
                b.max[a] = b.max[a].max(p[a]);
            }
        }
        Some(b)
    }

    /// Parametric entry/exit of the ray `o + s d` (slab test). `None` if missed.
    pub fn intersect_ray(&self, o: Vec3, d: Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-300 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let mut ta = (self.min[a] - o[a]) * inv;
            let mut tb = (self.max[a] - o[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 > t0).then_some((t0, t1))
    }
}

/// Vertex lattice of `dims[0] x dims[1] x dims[2]` nodes spanning `bounds`.
///
/// Node `(i, j, k)` sits at `min + (i, j, k) * extent / (dims - 1)`. Linear index is
/// `(i * dims[1] + j) * dims[2] + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub bounds: Aabb,
}

/// The cell containing a query point and its fractional position inside it.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub base: [usize; 3],
    pub frac: Vec3,
}

/// Eight corner indices with trilinear weights and their spatial derivatives.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stencil {
    pub index: [usize; 8],
    pub weight: [f64; 8],
    /// d weight / d x in world units.
    pub dweight: [Vec3; 8],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], bounds: Aabb) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidConfig(format!(
                "grid dimensions must be >= 2, got {dims:?}"
            )));
        }
        if (0..3).any(|a| !(bounds.max[a] > bounds.min[a])) {
            return Err(Error::InvalidConfig(format!("empty bounds {bounds:?}")));
        }
        Ok(Self { dims, bounds })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let e = self.bounds.extent();
        let ijk = [i, j, k];
        std::array::from_fn(|a| {
            self.bounds.min[a] + e[a] * ijk[a] as f64 / (self.dims[a] - 1) as f64
        })
    }

    /// Node spacing per axis in world units.
    pub fn spacing(&self) -> Vec3 {
        let e = self.bounds.extent();
        std::array::from_fn(|a| e[a] / (self.dims[a] - 1) as f64)
    }

    #[inline]
    fn continuous(&self, x: Vec3) -> Vec3 {
        std::array::from_fn(|a| {
            (x[a] - self.bounds.min[a]) / (self.bounds.max[a] - self.bounds.min[a])
                * (self.dims[a] - 1) as f64
        })
    }

    /// Cell of `x`, or `None` if `x` is outside the box.
    #[inline]
    pub fn locate(&self, x: Vec3) -> Option<Cell> {
        let g = self.continuous(x);
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let top = (self.dims[a] - 1) as f64;
            if !(g[a] >= 0.0 && g[a] <= top) {
                return None;
            }
            let b = (g[a].floor() as usize).min(self.dims[a] - 2);
            base[a] = b;
            frac[a] = g[a] - b as f64;
        }
        Some(Cell { base, frac })
    }

    /// Cell of `x` after clamping it into the box.
    #[inline]
    pub fn locate_clamped(&self, x: Vec3) -> Cell {
        let g = self.continuous(x);
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let top = (self.dims[a] - 1) as f64;
            let ga = if g[a].is_nan() { 0.0 } else { g[a].clamp(0.0, top) };
            let b = (ga.floor() as usize).min(self.dims[a] - 2);
            base[a] = b;
            frac[a] = ga - b as f64;
        }
        Cell { base, frac }
    }

    #[inline]
    pub fn stencil(&self, cell: &Cell) -> Stencil {
        let sp = self.spacing();
        let inv = [1.0 / sp[0], 1.0 / sp[1], 1.0 / sp[2]];
        let [fx, fy, fz] = cell.frac;
        let [bi, bj, bk] = cell.base;
        let mut index = [0usize; 8];
        let mut weight = [0.0; 8];
        let mut dweight = [[0.0; 3]; 8];
        for c in 0..8 {
            let (di, dj, dk) = (c >> 2 & 1, c >> 1 & 1, c & 1);
            let wx = if di == 1 { fx } else { 1.0 - fx };
            let wy = if dj == 1 { fy } else { 1.0 - fy };
            let wz = if dk == 1 { fz } else { 1.0 - fz };
            let sx = if di == 1 { inv[0] } else { -inv[0] };
            let sy = if dj == 1 { inv[1] } else { -inv[1] };
            let sz = if dk == 1 { inv[2] } else { -inv[2] };
            index[c] = self.linear(bi + di, bj + dj, bk + dk);
            weight[c] = wx * wy * wz;
            dweight[c] = [sx * wy * wz, wx * sy * wz, wx * wy * sz];
        }
        Stencil {
            index,
            weight,
            dweight,
        }
    }
}

/// A grid carrying `channels` values per node, stored channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub spec: GridSpec,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        Self {
            spec,
            channels,
            data: vec![0.0; spec.len() * channels],
        }
    }

    pub fn from_data(spec: GridSpec, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != spec.len() * channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} x {:?}", channels.max(1), spec.dims),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            spec,
            channels,
            data,
        })
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let n = self.spec.linear(i, j, k) * self.channels;
        &self.data[n..n + self.channels]
    }

    pub fn node_mut(&mut self, i: usize, j: usize, k: usize) -> &mut [f64] {
        let n = self.spec.linear(i, j, k) * self.channels;
        &mut self.data[n..n + self.channels]
    }

    /// Trilinear blend of the eight surrounding nodes, per channel. Writes zeros and
    /// returns `false` when `x` lies outside the box.
    #[inline]
    pub fn interp_into(&self, x: Vec3, out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        let Some(cell) = self.spec.locate(x) else {
            return false;
        };
        let st = self.spec.stencil(&cell);
        let ch = self.channels;
        for c in 0..8 {
            let w = st.weight[c];
            let row = &self.data[st.index[c] * ch..(st.index[c] + 1) * ch];
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        true
    }

    /// Scalar trilinear interpolation; errors if the grid is not single-channel.
    pub fn interp_scalar(&self, x: Vec3) -> Result<f64> {
        if self.channels != 1 {
            return Err(Error::DimensionMismatch {
                expected: "1 channel".into(),
                got: format!("{} channels", self.channels),
            });
        }
        let mut v = [0.0];
        self.interp_into(x, &mut v);
        Ok(v[0])
    }

    /// Vector trilinear interpolation; errors if `expected` channels differ.
    pub fn interp_vector(&self, x: Vec3, expected: usize) -> Result<Vec<f64>> {
        if self.channels != expected {
            return Err(Error::DimensionMismatch {
                expected: format!("{expected} channels"),
                got: format!("{} channels", self.channels),
            });
        }
        let mut v = vec![0.0; expected];
        self.interp_into(x, &mut v);
        Ok(v)
    }
}
