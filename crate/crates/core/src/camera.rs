//! Pinhole camera, ray generation and projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Aabb, Vec3};

/// Rigid camera-to-world transform: `world = rotation * cam + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Row-major 3x3 rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }
}

impl Pose {
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        std::array::from_fn(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
    }

    pub fn rotate_inv(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        std::array::from_fn(|i| r[0][i] * v[0] + r[1][i] * v[1] + r[2][i] * v[2])
    }

    pub fn to_world(&self, p: Vec3) -> Vec3 {
        let r = self.rotate(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.rotate_inv([
            p[0] - self.translation[0],
            p[1] - self.translation[1],
            p[2] - self.translation[2],
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub pose: Pose,
}

/// Rays sharing a time stamp, clipped to `[near, far]` per ray.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayBundle {
    pub origins: Vec<Vec3>,
    /// Unit directions in world frame.
    pub directions: Vec<Vec3>,
    /// z component of each direction in the camera frame; converts ray distance to depth.
    pub depth_factor: Vec<f64>,
    pub near: Vec<f64>,
    pub far: Vec<f64>,
    pub time: f64,
}

impl RayBundle {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Restricts every ray to its segment inside `bounds`. Rays missing the box get
    /// `near == far`.
    pub fn clip_to(&mut self, bounds: &Aabb) {
        for i in 0..self.len() {
            let (n, f) = bounds
                .intersect_ray(self.origins[i], self.directions[i])
                .map(|(a, b)| (a.max(0.0), b.max(0.0)))
                .unwrap_or((0.0, 0.0));
            self.near[i] = n;
            self.far[i] = f.max(n);
        }
    }
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            pose: Pose::default(),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidConfig("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::InvalidConfig(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }

    /// Unit direction through pixel `(u, v)` in the camera frame.
    pub fn camera_direction(&self, u: f64, v: f64) -> Vec3 {
        let d = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        [d[0] / n, d[1] / n, d[2] / n]
    }

    fn check_pixel(&self, u: f64, v: f64) -> Result<()> {
        if u < 0.0 || v < 0.0 || u > (self.width - 1) as f64 || v > (self.height - 1) as f64 {
            return Err(Error::PixelOutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// One ray per pixel, from the camera center, unclipped (`near = 0`, `far = inf`).
    pub fn generate_rays(&self, pixels: &[(f64, f64)], t: f64) -> Result<RayBundle> {
        let mut b = RayBundle {
            time: t,
            ..Default::default()
        };
        for &(u, v) in pixels {
            self.check_pixel(u, v)?;
            let dc = self.camera_direction(u, v);
            b.origins.push(self.center());
            b.directions.push(self.pose.rotate(dc));
            b.depth_factor.push(dc[2]);
            b.near.push(0.0);
            b.far.push(f64::INFINITY);
        }
        Ok(b)
    }

    /// Pixel coordinates and camera-frame depth of a world point.
    pub fn project(&self, p: Vec3) -> (f64, f64, f64) {
        let c = self.pose.to_camera(p);
        (
            self.fx * c[0] / c[2] + self.cx,
            self.fy * c[1] / c[2] + self.cy,
            c[2],
        )
    }

    /// World point at camera-frame depth `depth` behind pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        self.pose.to_world([
            depth * (u - self.cx) / self.fx,
            depth * (v - self.cy) / self.fy,
            depth,
        ])
    }

    /// All pixel centers in row-major order.
    pub fn all_pixels(&self) -> Vec<(f64, f64)> {
        (0..self.height)
            .flat_map(|v| (0..self.width).map(move |u| (u as f64, v as f64)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn principal_point_looks_down_optical_axis() {
        let cam = Camera::new(100.0, 100.0, 50.0, 40.0, 100, 80).unwrap();
        let r = cam.generate_rays(&[(50.0, 40.0)], 0.0).unwrap();
        assert_eq!(r.directions[0], [0.0, 0.0, 1.0]);
        assert_eq!(r.origins[0], [0.0; 3]);
    }

    #[test]
    fn off_axis_direction_formula() {
        let cam = Camera::new(100.0, 100.0, 50.0, 50.0, 200, 100).unwrap();
        let r = cam.generate_rays(&[(150.0, 50.0)], 0.0).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let d = r.directions[0];
        assert!((d[0] - s).abs() < 1e-15 && d[1].abs() < 1e-15 && (d[2] - s).abs() < 1e-15);
        // unnormalised (1, 0, 1)
        assert!((d[0] / d[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ray_plane_intersection_projects_back() {
        let cam = Camera::new(90.0, 95.0, 31.5, 30.0, 64, 60).unwrap();
        for (u, v) in [(0.0, 0.0), (12.0, 47.0), (63.0, 59.0)] {
            let r = cam.generate_rays(&[(u, v)], 0.0).unwrap();
            let d = r.directions[0];
            let depth = 2.5;
            let s = depth / d[2];
            let p = [d[0] * s, d[1] * s, d[2] * s];
            let (pu, pv, pz) = cam.project(p);
            assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9 && (pz - depth).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_pixel_is_rejected() {
        let cam = Camera::new(10.0, 10.0, 5.0, 5.0, 10, 10).unwrap();
        assert!(matches!(
            cam.generate_rays(&[(10.0, 3.0)], 0.0),
            Err(Error::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn invalid_intrinsics() {
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Camera::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
    }

    #[test]
    fn directions_are_unit_length() {
        let cam = Camera::new(50.0, 60.0, 20.0, 15.0, 40, 30).unwrap();
        let r = cam.generate_rays(&cam.all_pixels(), 0.3).unwrap();
        for d in &r.directions {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }
}
