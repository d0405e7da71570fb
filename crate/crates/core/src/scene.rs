//! The full trainable model (canonical field + motion field) viewed as a list of
//! parameter tensors, and gradient buffers with the same layout.

use rand::Rng;

use crate::error::Result;
use crate::field::{FieldConfig, VoxelField};
use crate::grid::{Aabb, Vec3};
use crate::motion::{MotionConfig, MotionField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    DensityGrid,
    FeatureGrid,
    Shading,
    MotionComponents,
    Displacement,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::DensityGrid => "density_grid",
            ParamGroup::FeatureGrid => "feature_grid",
            ParamGroup::Shading => "shading",
            ParamGroup::MotionComponents => "motion_components",
            ParamGroup::Displacement => "displacement",
        }
    }
}

/// Tensor slots in iteration order.
pub const DENSITY: usize = 0;
pub const FEATURES: usize = 1;
pub const SHADING: usize = 2;
/// Motion group `g` occupies slots `MOTION + 3 g + {0: line, 1: volume, 2: basis}`.
pub const MOTION: usize = 3;
pub const DISPLACEMENT: usize = 15;
pub const NUM_TENSORS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicScene {
    pub field: VoxelField,
    pub motion: MotionField,
}

impl DynamicScene {
    pub fn new<R: Rng>(
        field: &FieldConfig,
        motion: &MotionConfig,
        bounds: Aabb,
        frames: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            field: VoxelField::new(field, bounds, rng)?,
            motion: MotionField::new(motion, bounds, frames, rng)?,
        })
    }

    pub fn group_of(slot: usize) -> ParamGroup {
        match slot {
            DENSITY => ParamGroup::DensityGrid,
            FEATURES => ParamGroup::FeatureGrid,
            SHADING => ParamGroup::Shading,
            DISPLACEMENT => ParamGroup::Displacement,
            _ => ParamGroup::MotionComponents,
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            &self.field.density.data,
            &self.field.features.data,
            &self.field.shading.params,
        ];
        for g in &self.motion.groups {
            v.push(&g.line);
            v.push(&g.volume);
            v.push(&g.basis);
        }
        v.push(&self.motion.displacement.params);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            &mut self.field.density.data,
            &mut self.field.features.data,
            &mut self.field.shading.params,
        ];
        for g in self.motion.groups.iter_mut() {
            v.push(&mut g.line);
            v.push(&mut g.volume);
            v.push(&mut g.basis);
        }
        v.push(&mut self.motion.displacement.params);
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&self) -> SceneGrad {
        SceneGrad {
            tensors: self.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// Observed point at time `t` mapped into the canonical field.
    pub fn warp(&self, x: Vec3, t: f64) -> Vec3 {
        self.motion.warp_to_canonical(x, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrad {
    pub tensors: Vec<Vec<f64>>,
}

impl SceneGrad {
    pub fn fill_zero(&mut self) {
        for t in self.tensors.iter_mut() {
            t.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &SceneGrad) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Mutable views of the motion component gradients, grouped like
    /// [`MotionField::backward_components`] expects.
    pub fn motion_parts_mut(&mut self) -> [[&mut [f64]; 3]; 4] {
        let (_, rest) = self.tensors.split_at_mut(MOTION);
        let (motion, _) = rest.split_at_mut(12);
        let mut it = motion.iter_mut().map(|v| v.as_mut_slice());
        std::array::from_fn(|_| {
            let a = it.next().unwrap();
            let b = it.next().unwrap();
            let c = it.next().unwrap();
            [a, b, c]
        })
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors.iter().flatten().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}
