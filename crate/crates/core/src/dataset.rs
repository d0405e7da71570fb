//! In-memory frame dataset: per-frame color, depth and tool mask plus intrinsics.

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::grid::{Aabb, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Row-major colors in [0, 1].
    pub rgb: Vec<[f64; 3]>,
    /// Camera-frame depth in world units; `0` marks an invalid pixel.
    pub depth: Vec<f64>,
    /// 1 = tool pixel, 0 = tissue.
    pub mask: Vec<u8>,
    /// Unoccluded color, when the dataset carries it (synthetic scenes do).
    pub gt_rgb: Option<Vec<[f64; 3]>>,
    /// Unoccluded depth, likewise.
    pub gt_depth: Option<Vec<f64>>,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World units per 16-bit depth count.
    pub depth_scale: f64,
    pub frame_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset {
    pub camera: Camera,
    pub depth_scale: f64,
    pub times: Vec<f64>,
    pub frames: Vec<Frame>,
}

/// Time stamp of frame `i` of `n`: the clip is mapped onto [0, 1].
pub fn frame_time(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

impl FrameDataset {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            width: self.camera.width,
            height: self.camera.height,
            fx: self.camera.fx,
            fy: self.camera.fy,
            cx: self.camera.cx,
            cy: self.camera.cy,
            depth_scale: self.depth_scale,
            frame_times: self.times.clone(),
        }
    }

    /// Checks shapes, mask values and the depth scale.
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if !(self.depth_scale > 0.0) {
            return Err(Error::InvalidConfig("depth scale must be positive".into()));
        }
        if self.times.len() != self.frames.len() {
            return Err(Error::InvalidConfig(format!(
                "{} frame times for {} frames",
                self.times.len(),
                self.frames.len()
            )));
        }
        let n = self.width() * self.height();
        for (i, f) in self.frames.iter().enumerate() {
            if f.rgb.len() != n || f.depth.len() != n {
                return Err(Error::InconsistentShape {
                    frame: i,
                    expected: (self.width(), self.height()),
                    got: (f.rgb.len(), f.depth.len()),
                });
            }
            if f.mask.len() != n {
                return Err(Error::MaskShapeMismatch { frame: i });
            }
            if f.mask.iter().any(|&m| m > 1) {
                return Err(Error::NonBinaryMask(i));
            }
        }
        Ok(())
    }

    /// Back-projected points of every unmasked pixel with valid depth, all frames.
    pub fn point_cloud(&self) -> Vec<Vec3> {
        let w = self.width();
        let mut pts = Vec::new();
        for f in &self.frames {
            for (p, &d) in f.depth.iter().enumerate() {
                if f.mask[p] == 0 && d > 0.0 && d.is_finite() {
                    pts.push(self.camera.unproject((p % w) as f64, (p / w) as f64, d));
                }
            }
        }
        pts
    }

    /// Box around all back-projected depth, padded by `pad` of its extent per side.
    pub fn scene_bounds(&self, pad: f64) -> Result<Aabb> {
        let pts = self.point_cloud();
        let b = Aabb::from_points(&pts)
            .ok_or_else(|| Error::InvalidConfig("dataset has no valid depth".into()))?;
        // guard against a flat axis
        let mut b = b;
        let e = b.extent();
        let scale = e.iter().cloned().fold(0.0, f64::max).max(1e-6);
        for a in 0..3 {
            if e[a] < 1e-3 * scale {
                b.min[a] -= 0.05 * scale;
                b.max[a] += 0.05 * scale;
            }
        }
        Ok(b.padded(pad))
    }
}
