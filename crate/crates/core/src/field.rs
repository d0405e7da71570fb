//! Canonical scene: density grid, appearance feature grid and the shading network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Aabb, Grid, GridSpec, Vec3};
use crate::mlp::{squash, Mlp, MlpCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    /// Grid vertices along x, y, z.
    pub resolution: [usize; 3],
    /// Appearance feature channels per vertex.
    pub feature_channels: usize,
    /// Hidden widths of the shading network.
    pub shading_hidden: Vec<usize>,
    /// Opacity of one voxel-length step at raw density zero; sets the activation shift.
    pub alpha_init: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            resolution: [160, 160, 160],
            feature_channels: 12,
            shading_hidden: vec![64, 64],
            alpha_init: 1e-3,
        }
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelField {
    pub density: Grid,
    pub features: Grid,
    pub shading: Mlp,
    /// Added to the raw value before the softplus.
    pub density_shift: f64,
    /// Multiplies the softplus so densities are expressed per voxel length.
    pub density_scale: f64,
}

/// Scratch for one color evaluation, reused across samples.
#[derive(Debug, Clone, Default)]
pub struct ColorCache {
    pub feature: Vec<f64>,
    pub logits: [f64; 3],
    pub mlp: MlpCache,
}

impl VoxelField {
    /// Zero grids and a randomly initialised shading network.
    pub fn new<R: Rng>(cfg: &FieldConfig, bounds: Aabb, rng: &mut R) -> Result<Self> {
        if cfg.feature_channels == 0 {
            return Err(Error::InvalidConfig("feature_channels must be >= 1".into()));
        }
        if !(cfg.alpha_init > 0.0 && cfg.alpha_init < 1.0) {
            return Err(Error::InvalidConfig("alpha_init must lie in (0, 1)".into()));
        }
        let spec = GridSpec::new(cfg.resolution, bounds)?;
        let mut sizes = vec![cfg.feature_channels];
        sizes.extend(&cfg.shading_hidden);
        sizes.push(3);
        let voxel = spec.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
        // softplus(shift) * scale * voxel = -ln(1 - alpha_init)
        let shift = (cfg.alpha_init / (1.0 - cfg.alpha_init)).ln();
        Ok(Self {
            density: Grid::zeros(spec, 1),
            features: Grid::zeros(spec, cfg.feature_channels),
            shading: Mlp::init_uniform(&sizes, rng)?,
            density_shift: shift,
            density_scale: 1.0 / voxel,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.density.spec
    }

    pub fn bounds(&self) -> Aabb {
        self.density.spec.bounds
    }

    pub fn feature_channels(&self) -> usize {
        self.features.channels
    }

    /// Density activation and its derivative with respect to the raw value.
    #[inline]
    pub fn activate(&self, raw: f64) -> (f64, f64) {
        let x = raw + self.density_shift;
        let s = 1.0 / (1.0 + (-x).exp());
        (self.density_scale * softplus(x), self.density_scale * s)
    }

    /// Raw (pre-activation) density; zero outside the box.
    pub fn raw_density(&self, x: Vec3) -> f64 {
        let mut v = [0.0];
        self.density.interp_into(x, &mut v);
        v[0]
    }

    /// Non-negative density. Points outside the box are empty space.
    pub fn query_density(&self, x: Vec3) -> f64 {
        if !self.bounds().contains(x) {
            return 0.0;
        }
        self.activate(self.raw_density(x)).0
    }

    /// Color in [0,1]^3 of the shading network applied to the interpolated features.
    pub fn query_color(&self, x: Vec3) -> [f64; 3] {
        let mut cache = ColorCache::default();
        self.color_cached(x, &mut cache)
    }

    pub fn color_cached(&self, x: Vec3, cache: &mut ColorCache) -> [f64; 3] {
        cache.feature.resize(self.features.channels, 0.0);
        self.features.interp_into(x, &mut cache.feature);
        self.shading
            .forward_cached(&cache.feature, &mut cache.logits, &mut cache.mlp);
        cache.logits.map(squash)
    }
}
