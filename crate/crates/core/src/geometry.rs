//! Depth images to point clouds and open height-field meshes.

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::grid::Vec3;
use crate::mesh::TriMesh;
use crate::par::Exec;
use crate::render::{render_image, SampleOptions};
use crate::scene::DynamicScene;

/// Camera-frame depth per pixel with a validity mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthImage {
    /// Pixels with positive finite depth are valid.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{width}x{height} depth values"),
                got: format!("{}", values.len()),
            });
        }
        let valid = values.iter().map(|&d| d > 0.0 && d.is_finite()).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// Invalidates pixels whose opacity is below `min_opacity`.
    pub fn mask_by_opacity(&mut self, opacity: &[f64], min_opacity: f64) {
        for (v, &o) in self.valid.iter_mut().zip(opacity) {
            if o < min_opacity {
                *v = false;
            }
        }
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        let mut it = self.values.iter().zip(&self.valid).filter(|(_, &ok)| ok).map(|(v, _)| *v);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

/// World points of all valid pixels, row-major.
pub fn backproject(depth: &DepthImage, cam: &Camera) -> Vec<Vec3> {
    let mut pts = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let i = v * depth.width + u;
            if depth.valid[i] {
                pts.push(cam.unproject(u as f64, v as f64, depth.values[i]));
            }
        }
    }
    pts
}

/// Edge-preserving smoothing: each valid pixel becomes the mean of valid neighbours
/// within `radius`, weighted by `exp(-d^2 / 2 sigma_s^2) * exp(-dz^2 / 2 sigma_r^2)`.
pub fn bilateral_filter(
    depth: &DepthImage,
    sigma_s: f64,
    sigma_r: f64,
    radius: usize,
    exec: Exec,
) -> Result<DepthImage> {
    if !(sigma_s > 0.0 && sigma_r > 0.0) {
        return Err(Error::InvalidConfig("bilateral sigmas must be positive".into()));
    }
    let (w, h) = (depth.width, depth.height);
    let r = radius as isize;
    let rows = exec.map_range(h, |y| {
        (0..w)
            .map(|x| {
                let i = y * w + x;
                if !depth.valid[i] {
                    return depth.values[i];
                }
                let d0 = depth.values[i];
                let (mut num, mut den) = (0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                            continue;
                        }
                        let j = yy as usize * w + xx as usize;
                        if !depth.valid[j] {
                            continue;
                        }
                        let dz = depth.values[j] - d0;
                        let s2 = (dx * dx + dy * dy) as f64;
                        let wt = (-s2 / (2.0 * sigma_s * sigma_s) - dz * dz / (2.0 * sigma_r * sigma_r)).exp();
                        num += wt * depth.values[j];
                        den += wt;
                    }
                }
                num / den
            })
            .collect::<Vec<_>>()
    });
    Ok(DepthImage {
        width: w,
        height: h,
        values: rows.into_iter().flatten().collect(),
        valid: depth.valid.clone(),
    })
}

/// Open surface over the valid pixels: one vertex per valid pixel that belongs to a
/// fully valid 2x2 block, two triangles per such block, wound so normals face the
/// camera. `colors`, if given, holds one color per pixel.
pub fn triangulate_heightfield(
    depth: &DepthImage,
    cam: &Camera,
    colors: Option<&[[f64; 3]]>,
) -> Result<TriMesh> {
    let (w, h) = (depth.width, depth.height);
    let ok = |x: usize, y: usize| depth.valid[y * w + x];
    let mut used = vec![false; w * h];
    let mut quads = Vec::new();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            if ok(x, y) && ok(x + 1, y) && ok(x, y + 1) && ok(x + 1, y + 1) {
                quads.push((x, y));
                for (a, b) in [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)] {
                    used[b * w + a] = true;
                }
            }
        }
    }
    let mut index = vec![u32::MAX; w * h];
    let mut mesh = TriMesh {
        colors: colors.map(|_| Vec::new()),
        ..TriMesh::default()
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if used[i] {
                index[i] = mesh.vertices.len() as u32;
                mesh.vertices.push(cam.unproject(x as f64, y as f64, depth.values[i]));
                if let (Some(out), Some(src)) = (mesh.colors.as_mut(), colors) {
                    out.push(src[i].map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
                }
            }
        }
    }
    for (x, y) in quads {
        let a = index[y * w + x];
        let b = index[y * w + x + 1];
        let c = index[(y + 1) * w + x];
        let d = index[(y + 1) * w + x + 1];
        mesh.faces.push([a, c, b]);
        mesh.faces.push([b, c, d]);
    }
    let n = mesh.face_components().len();
    if n > 1 {
        return Err(Error::MultipleComponents(n));
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshingOptions {
    /// Pixels rendered with less opacity are dropped.
    pub min_opacity: f64,
    pub radius: usize,
    /// Spatial sigma, pixels.
    pub sigma_s: f64,
    /// Range sigma as a fraction of the depth range.
    pub sigma_r_frac: f64,
}

impl Default for MeshingOptions {
    fn default() -> Self {
        Self {
            min_opacity: 0.5,
            radius: 5,
            sigma_s: 3.0,
            sigma_r_frac: 0.01,
        }
    }
}

/// Renders `scene` at time `t`, filters the depth and triangulates it with the
/// rendered colors.
pub fn extract_surface(
    scene: &DynamicScene,
    cam: &Camera,
    t: f64,
    sampling: &SampleOptions,
    opts: &MeshingOptions,
    exec: Exec,
) -> Result<TriMesh> {
    let img = render_image(scene, cam, t, sampling, exec, 4)?;
    let mut depth = DepthImage::new(img.width, img.height, img.depth)?;
    depth.mask_by_opacity(&img.opacity, opts.min_opacity);
    let (lo, hi) = depth
        .range()
        .ok_or_else(|| Error::InvalidConfig(format!("no pixel reaches opacity {}", opts.min_opacity)))?;
    let sigma_r = (opts.sigma_r_frac * (hi - lo)).max(1e-9);
    let smooth = bilateral_filter(&depth, opts.sigma_s, sigma_r, opts.radius, exec)?;
    triangulate_heightfield(&smooth, cam, Some(&img.rgb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{boundary_edges, order_boundary_loop};

    fn cam() -> Camera {
        Camera::new(100.0, 100.0, 50.0, 50.0, 200, 100).unwrap()
    }

    #[test]
    fn backprojection_formula() {
        let mut d = DepthImage::new(200, 100, vec![0.0; 200 * 100]).unwrap();
        d.values[50 * 200 + 50] = 5.0;
        d.valid[50 * 200 + 50] = true;
        d.values[50 * 200 + 150] = 10.0;
        d.valid[50 * 200 + 150] = true;
        let p = backproject(&d, &cam());
        assert_eq!(p, vec![[0.0, 0.0, 5.0], [10.0, 0.0, 10.0]]);
    }

    #[test]
    fn project_backproject_round_trip() {
        let c = Camera::new(80.0, 90.0, 31.5, 20.0, 64, 48).unwrap();
        for p in [[0.1, -0.2, 1.3], [-0.3, 0.25, 2.0]] {
            let (u, v, z) = c.project(p);
            let q = c.unproject(u, v, z);
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bilateral_keeps_constant_and_edges() {
        let d = DepthImage::new(5, 4, vec![2.5; 20]).unwrap();
        let f = bilateral_filter(&d, 3.0, 0.1, 5, Exec::Parallel).unwrap();
        assert!(f.values.iter().all(|v| (v - 2.5).abs() < 1e-12));

        let one = DepthImage::new(1, 1, vec![3.0]).unwrap();
        assert_eq!(bilateral_filter(&one, 1.0, 1.0, 0, Exec::Sequential).unwrap().values, vec![3.0]);

        let step = DepthImage::new(4, 1, vec![1.0, 1.0, 10.0, 10.0]).unwrap();
        let f = bilateral_filter(&step, 1.0, 0.1, 2, Exec::Sequential).unwrap();
        for (a, b) in f.values.iter().zip(&step.values) {
            assert!((a - b).abs() < 1e-3);
        }
        assert!(bilateral_filter(&step, 0.0, 1.0, 1, Exec::Sequential).is_err());
    }

    #[test]
    fn bilateral_moves_little_on_flat_regions() {
        let vals: Vec<f64> = (0..64).map(|i| 2.0 + 0.01 * ((i * 7 % 5) as f64) / 5.0).collect();
        let d = DepthImage::new(8, 8, vals).unwrap();
        let sr = 0.01;
        let f = bilateral_filter(&d, 3.0, sr, 5, Exec::Parallel).unwrap();
        for (a, b) in f.values.iter().zip(&d.values) {
            assert!((a - b).abs() <= sr);
        }
    }

    #[test]
    fn small_grids() {
        let c = Camera::new(10.0, 10.0, 1.0, 1.0, 3, 3).unwrap();
        let d2 = DepthImage::new(2, 2, vec![1.0; 4]).unwrap();
        let m = triangulate_heightfield(&d2, &c, None).unwrap();
        assert_eq!((m.vertices.len(), m.faces.len()), (4, 2));
        assert_eq!(boundary_edges(&m).unwrap().len(), 4);
        let d3 = DepthImage::new(3, 3, vec![1.0; 9]).unwrap();
        let m = triangulate_heightfield(&d3, &c, None).unwrap();
        assert_eq!((m.vertices.len(), m.faces.len()), (9, 8));
        // normals face the camera (negative z)
        for f in &m.faces {
            let [a, b, cc] = f.map(|i| m.vertices[i as usize]);
            let u = [b[0] - a[0], b[1] - a[1]];
            let v = [cc[0] - a[0], cc[1] - a[1]];
            assert!(u[0] * v[1] - u[1] * v[0] < 0.0);
        }
    }

    #[test]
    fn boundary_length_is_perimeter() {
        for (n, m) in [(2, 5), (4, 4), (7, 3)] {
            let c = Camera::new(10.0, 10.0, 0.5, 0.5, m, n).unwrap();
            let d = DepthImage::new(m, n, vec![2.0; n * m]).unwrap();
            let mesh = triangulate_heightfield(&d, &c, None).unwrap();
            let l = order_boundary_loop(&boundary_edges(&mesh).unwrap()).unwrap();
            assert_eq!(l.len(), 2 * (n - 1) + 2 * (m - 1));
        }
    }

    #[test]
    fn vertices_equal_backprojection() {
        let c = Camera::new(20.0, 20.0, 2.0, 1.5, 5, 4).unwrap();
        let vals: Vec<f64> = (0..20).map(|i| 1.0 + 0.05 * i as f64).collect();
        let d = DepthImage::new(5, 4, vals).unwrap();
        let m = triangulate_heightfield(&d, &c, None).unwrap();
        assert_eq!(m.vertices, backproject(&d, &c));
    }

    #[test]
    fn two_islands_are_rejected() {
        let c = Camera::new(10.0, 10.0, 2.0, 1.0, 5, 2).unwrap();
        let d = DepthImage::new(5, 2, vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            triangulate_heightfield(&d, &c, None),
            Err(Error::MultipleComponents(2))
        ));
    }
}
