//! Procedural test scene: a textured height field `z = h(x, y, t)` in front of the
//! camera, breathing sinusoidally in z, with a rectangular tool sweeping across it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::camera::Camera;
use crate::dataset::{frame_time, Frame, FrameDataset};
use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Surface {
    /// Mean depth.
    pub depth: f64,
    /// Amplitude of the static relief.
    pub relief: f64,
    /// Amplitude of the deformation.
    pub amplitude: f64,
    /// Deformation cycles over the clip.
    pub frequency: f64,
    /// Spatial wavenumber of the deformation, rad per unit.
    pub wavenumber: f64,
}

impl Default for Surface {
    fn default() -> Self {
        Self {
            depth: 1.0,
            relief: 0.05,
            amplitude: 0.04,
            frequency: 1.0,
            wavenumber: std::f64::consts::PI,
        }
    }
}

impl Surface {
    fn breath(&self, t: f64) -> f64 {
        self.amplitude * (TAU * self.frequency * t).sin()
    }

    pub fn height(&self, x: f64, y: f64, t: f64) -> f64 {
        let k = self.wavenumber;
        self.depth
            + self.relief * (2.0 * x + 0.5).sin() * (1.5 * y).cos()
            + self.breath(t) * (k * x).cos() * (k * y).cos()
    }

    pub fn gradient(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let (k, s, r) = (self.wavenumber, self.breath(t), self.relief);
        [
            2.0 * r * (2.0 * x + 0.5).cos() * (1.5 * y).cos() - s * k * (k * x).sin() * (k * y).cos(),
            -1.5 * r * (2.0 * x + 0.5).sin() * (1.5 * y).sin() - s * k * (k * x).cos() * (k * y).sin(),
        ]
    }

    /// Bound on |grad h|.
    fn slope_bound(&self) -> f64 {
        2.5 * self.relief.abs() + 2.0 * self.amplitude.abs() * self.wavenumber.abs()
    }

    /// Depth along the pinhole ray with slopes `(a, b)`: solves `z = h(z a, z b, t)`.
    pub fn intersect(&self, a: f64, b: f64, t: f64) -> f64 {
        let mut z = self.depth;
        for _ in 0..100 {
            let (x, y) = (z * a, z * b);
            let g = self.gradient(x, y, t);
            let f = z - self.height(x, y, t);
            let step = f / (1.0 - g[0] * a - g[1] * b);
            z -= step;
            if step.abs() <= 1e-15 * z.abs() {
                break;
            }
        }
        z
    }
}

/// Tool rectangle in pixels, sweeping along a figure eight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Occluder {
    pub size: [f64; 2],
    pub center: [f64; 2],
    pub sweep: [f64; 2],
    /// Sweeps over the clip.
    pub cycles: f64,
    pub depth: f64,
    pub color: [f64; 3],
}

impl Default for Occluder {
    fn default() -> Self {
        Self {
            size: [18.0, 14.0],
            center: [32.0, 34.0],
            sweep: [14.0, 6.0],
            cycles: 1.0,
            depth: 0.6,
            color: [0.78, 0.78, 0.82],
        }
    }
}

impl Occluder {
    pub fn center_at(&self, t: f64) -> [f64; 2] {
        let p = TAU * self.cycles * t;
        [self.center[0] + self.sweep[0] * p.sin(), self.center[1] + self.sweep[1] * (2.0 * p).sin()]
    }

    pub fn covers(&self, u: f64, v: f64, t: f64) -> bool {
        let c = self.center_at(t);
        (u - c[0]).abs() <= 0.5 * self.size[0] && (v - c[1]).abs() <= 0.5 * self.size[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fx: f64,
    pub fy: f64,
    /// Defaults to the image center.
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub surface: Surface,
    pub texture_seed: u64,
    pub occluder: Option<Occluder>,
    /// World units per 16-bit depth count.
    pub depth_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 30,
            fx: 64.0,
            fy: 64.0,
            cx: None,
            cy: None,
            surface: Surface::default(),
            texture_seed: 7,
            occluder: Some(Occluder::default()),
            depth_scale: 2e-5,
        }
    }
}

impl SynthConfig {
    pub fn camera(&self) -> Result<Camera> {
        Camera::new(
            self.fx,
            self.fy,
            self.cx.unwrap_or((self.width as f64 - 1.0) / 2.0),
            self.cy.unwrap_or((self.height as f64 - 1.0) / 2.0),
            self.width,
            self.height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let cam = self.camera()?;
        if self.frames == 0 {
            return Err(Error::InvalidConfig("at least one frame is required".into()));
        }
        let s = &self.surface;
        if !(s.depth > 0.0 && s.relief.abs() + s.amplitude.abs() < 0.5 * s.depth) {
            return Err(Error::InvalidConfig("surface must stay in front of the camera".into()));
        }
        // every pixel ray must cross the surface once
        let slope = [cam.cx, cam.width as f64 - 1.0 - cam.cx].iter().cloned().fold(0.0, f64::max) / cam.fx
            + [cam.cy, cam.height as f64 - 1.0 - cam.cy].iter().cloned().fold(0.0, f64::max) / cam.fy;
        if s.slope_bound() * slope >= 0.5 {
            return Err(Error::InvalidConfig(
                "deformation too steep: the surface would not stay a height field".into(),
            ));
        }
        let deepest = s.depth + s.relief.abs() + s.amplitude.abs();
        if !(self.depth_scale > 0.0 && deepest / self.depth_scale < u16::MAX as f64) {
            return Err(Error::InvalidConfig(format!(
                "depth scale {} cannot store depth {deepest} in 16 bits",
                self.depth_scale
            )));
        }
        if let Some(o) = &self.occluder {
            if !(o.depth > 0.0 && o.depth < s.depth - s.relief.abs() - s.amplitude.abs()) {
                return Err(Error::InvalidConfig("occluder must lie between camera and tissue".into()));
            }
        }
        Ok(())
    }
}

/// Sum of random plane waves around a tissue-like base color.
struct Texture {
    waves: Vec<([f64; 2], f64, [f64; 3])>,
}

impl Texture {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..6)
            .map(|_| {
                let ang: f64 = rng.gen_range(0.0..TAU);
                let k: f64 = rng.gen_range(3.0..12.0);
                let phase = rng.gen_range(0.0..TAU);
                let tint = [rng.gen_range(0.03..0.07), rng.gen_range(0.02..0.06), rng.gen_range(0.02..0.05)];
                ([k * ang.cos(), k * ang.sin()], phase, tint)
            })
            .collect();
        Self { waves }
    }

    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = [0.72, 0.38, 0.34];
        for (k, ph, tint) in &self.waves {
            let s = (k[0] * x + k[1] * y + ph).sin();
            for a in 0..3 {
                c[a] += tint[a] * s;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

/// The scene in memory with exact (unquantized) depth.
pub fn render_synthetic(cfg: &SynthConfig) -> Result<FrameDataset> {
    cfg.validate()?;
    let cam = cfg.camera()?;
    let tex = Texture::new(cfg.texture_seed);
    let times: Vec<f64> = (0..cfg.frames).map(|i| frame_time(i, cfg.frames)).collect();
    let (w, h) = (cfg.width, cfg.height);
    let frames = Exec::default().map_range(cfg.frames, |f| {
        let t = times[f];
        let n = w * h;
        let mut frame = Frame {
            rgb: Vec::with_capacity(n),
            depth: Vec::with_capacity(n),
            mask: Vec::with_capacity(n),
            gt_rgb: Some(Vec::with_capacity(n)),
            gt_depth: Some(Vec::with_capacity(n)),
        };
        for v in 0..h {
            for u in 0..w {
                let (a, b) = ((u as f64 - cam.cx) / cam.fx, (v as f64 - cam.cy) / cam.fy);
                let z = cfg.surface.intersect(a, b, t);
                let c = tex.color(z * a, z * b);
                frame.gt_rgb.as_mut().unwrap().push(c);
                frame.gt_depth.as_mut().unwrap().push(z);
                match cfg.occluder.filter(|o| o.covers(u as f64, v as f64, t)) {
                    Some(o) => {
                        // brushed-metal streaks so the tool is not flat
                        let shade = 0.9 + 0.1 * (0.7 * u as f64 + 0.2 * v as f64).sin();
                        frame.rgb.push(o.color.map(|x| (x * shade).clamp(0.0, 1.0)));
                        frame.depth.push(o.depth);
                        frame.mask.push(1);
                    }
                    None => {
                        frame.rgb.push(c);
                        frame.depth.push(z);
                        frame.mask.push(0);
                    }
                }
            }
        }
        frame
    });
    let ds = FrameDataset {
        camera: cam,
        depth_scale: cfg.depth_scale,
        times,
        frames,
    };
    ds.validate()?;
    Ok(ds)
}

/// Renders the scene and writes it to `out_dir` (with `gt/`); returns the exact
/// in-memory scene.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<FrameDataset> {
    let ds = render_synthetic(cfg)?;
    super::save_dataset(&ds, out_dir)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            width: 24,
            height: 20,
            frames: 4,
            fx: 24.0,
            fy: 24.0,
            occluder: Some(Occluder {
                size: [6.0, 4.0],
                center: [12.0, 10.0],
                sweep: [5.0, 2.0],
                ..Occluder::default()
            }),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn depth_lies_on_the_analytic_surface() {
        let cfg = small();
        let ds = render_synthetic(&cfg).unwrap();
        let mut checked = 0;
        for (f, t) in ds.frames.iter().zip(&ds.times) {
            for (p, &z) in f.gt_depth.as_ref().unwrap().iter().enumerate() {
                let q = ds.camera.unproject((p % cfg.width) as f64, (p / cfg.width) as f64, z);
                assert!((cfg.surface.height(q[0], q[1], *t) - q[2]).abs() <= 1e-6);
                if f.mask[p] == 0 {
                    assert_eq!(f.depth[p], z);
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn static_scene_has_identical_depth() {
        let mut cfg = small();
        cfg.surface.amplitude = 0.0;
        cfg.occluder = None;
        let ds = render_synthetic(&cfg).unwrap();
        for f in &ds.frames[1..] {
            assert_eq!(f.depth, ds.frames[0].depth);
            assert_eq!(f.rgb, ds.frames[0].rgb);
        }
    }

    #[test]
    fn deterministic_and_seeded() {
        let a = render_synthetic(&small()).unwrap();
        assert_eq!(a, render_synthetic(&small()).unwrap());
        let mut cfg = small();
        cfg.texture_seed += 1;
        assert_ne!(a.frames[0].rgb, render_synthetic(&cfg).unwrap().frames[0].rgb);
    }

    #[test]
    fn occluder_moves_and_masks() {
        let ds = render_synthetic(&small()).unwrap();
        let masks: Vec<usize> = ds.frames.iter().map(|f| f.mask.iter().filter(|&&m| m == 1).count()).collect();
        assert!(masks.iter().all(|&m| m > 0));
        assert_ne!(ds.frames[0].mask, ds.frames[1].mask);
    }

    #[test]
    fn writes_one_file_per_frame() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.frames = 30;
        generate_synthetic(&cfg, dir.path()).unwrap();
        for kind in ["rgb", "depth", "mask", "gt/rgb", "gt/depth"] {
            assert_eq!(std::fs::read_dir(dir.path().join(kind)).unwrap().count(), 30, "{kind}");
        }
        assert!(dir.path().join("meta.json").is_file());
        let back = crate::io::load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 30);
        let exact = render_synthetic(&cfg).unwrap();
        for (a, b) in back.frames[3].depth.iter().zip(&exact.frames[3].depth) {
            assert!((a - b).abs() <= 0.5 * cfg.depth_scale + 1e-12);
        }
    }

    #[test]
    fn steep_surfaces_are_rejected() {
        let mut cfg = small();
        cfg.surface.amplitude = 0.4;
        assert!(render_synthetic(&cfg).is_err());
        let mut cfg = small();
        cfg.occluder.as_mut().unwrap().depth = 2.0;
        assert!(render_synthetic(&cfg).is_err());
    }

    #[test]
    fn unwritable_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, b"x").unwrap();
        assert!(generate_synthetic(&small(), &file.join("sub")).is_err());
    }
}
