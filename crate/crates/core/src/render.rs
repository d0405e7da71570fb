//! Ray sampling, warping into the canonical field and alpha compositing.
//!
//! A ray at time `t` is sampled at `M` stratified depths. Each sample is warped into
//! the canonical field by the motion field, the canonical density and color are read
//! there, and the ray color/depth are the transmittance-weighted sums
//! `C = sum_j w_j c_j`, `D = sum_j w_j z_j` with
//! `w_j = exp(-sum_{i<j} sigma_i delta_i) * (1 - exp(-sigma_j delta_j))`.
//!
//! [`RayTape`] keeps every per-sample intermediate of the forward pass so the
//! reverse pass can run stage by stage (compositing, shading network, grid
//! stencils, displacement network, decomposed motion components) without
//! recomputation. Grid gradients are not written in place; they are emitted as
//! [`GradRecords`] and scattered afterwards in a fixed order, which keeps batch
//! gradients independent of how rays were distributed across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::ColorCache;
use crate::grid::{Stencil, Vec3};
use crate::mlp::squash;
use crate::motion::{MotionCache, MotionStencil};
use crate::par::Exec;
use crate::scene::{DynamicScene, SceneGrad, DENSITY, DISPLACEMENT, FEATURES, SHADING};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleOptions {
    /// Samples per ray (`M`).
    pub samples: usize,
    /// Stratified jitter inside each bin; midpoints when off.
    pub jitter: bool,
    /// Samples whose weight falls below this skip the shading network.
    pub min_weight: f64,
    /// Marching stops once transmittance drops below this.
    pub min_transmittance: f64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            samples: 64,
            jitter: false,
            min_weight: 1e-4,
            min_transmittance: 1e-4,
        }
    }
}

impl SampleOptions {
    /// No skipping at all: every sample contributes exactly.
    pub fn exact(samples: usize) -> Self {
        Self {
            samples,
            jitter: false,
            min_weight: 0.0,
            min_transmittance: 0.0,
        }
    }
}

/// Stratified sample depths in `[near, far]` and their step lengths.
///
/// Bin `i` spans `near + [i, i+1) * (far - near) / m`; the sample sits at the bin
/// midpoint, or uniformly inside it when `rng` is given. `delta_i = z_{i+1} - z_i`
/// and the last step runs to `far`.
pub fn sample_along_ray<R: Rng>(
    near: f64,
    far: f64,
    m: usize,
    rng: Option<&mut R>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(near < far) || m < 2 {
        return Err(Error::InvalidConfig(format!(
            "need near < far and at least 2 samples, got [{near}, {far}] with {m}"
        )));
    }
    let mut z = Vec::new();
    let mut d = Vec::new();
    fill_samples(near, far, m, rng, &mut z, &mut d);
    Ok((z, d))
}

fn fill_samples<R: Rng>(
    near: f64,
    far: f64,
    m: usize,
    mut rng: Option<&mut R>,
    z: &mut Vec<f64>,
    delta: &mut Vec<f64>,
) {
    z.clear();
    delta.clear();
    let bin = (far - near) / m as f64;
    for i in 0..m {
        let u = match rng.as_deref_mut() {
            Some(r) => r.gen::<f64>(),
            None => 0.5,
        };
        z.push(near + (i as f64 + u) * bin);
    }
    for i in 0..m {
        let next = if i + 1 < m { z[i + 1] } else { far };
        delta.push(next - z[i]);
    }
}

/// Result of compositing one ray.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayOutput {
    pub rgb: [f64; 3],
    /// Expected distance along the (unit) ray.
    pub depth: f64,
    /// Sum of weights.
    pub opacity: f64,
    pub weights: Vec<f64>,
}

/// Compositing of given per-sample densities and colors; no field involved.
pub fn composite(sigmas: &[f64], deltas: &[f64], colors: &[[f64; 3]], zs: &[f64]) -> RayOutput {
    let mut out = RayOutput {
        weights: Vec::with_capacity(sigmas.len()),
        ..Default::default()
    };
    let mut optical = 0.0f64;
    for j in 0..sigmas.len() {
        let s = sigmas[j] * deltas[j];
        let w = (-optical).exp() * -(-s).exp_m1();
        optical += s;
        for c in 0..3 {
            out.rgb[c] += w * colors[j][c];
        }
        out.depth += w * zs[j];
        out.opacity += w;
        out.weights.push(w);
    }
    out
}

/// A single ray with its own segment and time stamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub near: f64,
    pub far: f64,
    pub time: f64,
}

#[derive(Debug, Clone, Default)]
struct SampleTape {
    x: Vec3,
    /// Canonical (warped) position.
    xw: Vec3,
    mstencil: MotionStencil,
    motion: MotionCache,
    inside: bool,
    stencil: Stencil,
    dsigma: f64,
    /// exp(-sigma delta)
    transmit: f64,
    /// Transmittance before this sample.
    trans: f64,
    weight: f64,
    has_color: bool,
    color: [f64; 3],
    shade: ColorCache,
}

/// Forward intermediates of one ray, reusable across rays.
#[derive(Debug, Clone, Default)]
pub struct RayTape {
    z: Vec<f64>,
    delta: Vec<f64>,
    samples: Vec<SampleTape>,
    used: usize,
    time: f64,
    pub rgb: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
}

/// Gradients of grid-backed parameters, deferred for an ordered scatter.
///
/// Field records are `[x', y', z', d_raw, d_feature[C]]` at a canonical point;
/// motion records are `[x, y, z, t, d_motion_feature[C_T]]` at an observed point.
#[derive(Debug, Clone, Default)]
pub struct GradRecords {
    pub field: Vec<f64>,
    pub motion: Vec<f64>,
}

impl GradRecords {
    pub fn clear(&mut self) {
        self.field.clear();
        self.motion.clear();
    }

    /// Adds every record into `grad` in storage order.
    pub fn scatter(&self, scene: &DynamicScene, grad: &mut SceneGrad) {
        let field = &scene.field;
        let ch = field.feature_channels();
        let fstride = 4 + ch;
        for rec in self.field.chunks_exact(fstride) {
            let xw = [rec[0], rec[1], rec[2]];
            let draw = rec[3];
            let dfeat = &rec[4..];
            let Some(cell) = field.spec().locate(xw) else {
                continue;
            };
            let st = field.spec().stencil(&cell);
            for c in 0..8 {
                let w = st.weight[c];
                let idx = st.index[c];
                grad.tensors[DENSITY][idx] += draw * w;
                let row = &mut grad.tensors[FEATURES][idx * ch..(idx + 1) * ch];
                for (g, d) in row.iter_mut().zip(dfeat) {
                    *g += d * w;
                }
            }
        }
        let mch = scene.motion.channels;
        let mstride = 4 + mch;
        let mut parts = grad.motion_parts_mut();
        for rec in self.motion.chunks_exact(mstride) {
            let st = scene.motion.stencil([rec[0], rec[1], rec[2]], rec[3]);
            scene.motion.backward_components(&st, &rec[4..], &mut parts);
        }
    }
}

/// Dense gradients of the two networks for a group of rays.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub shading: Vec<f64>,
    pub displacement: Vec<f64>,
}

impl NetGrads {
    pub fn zeros(scene: &DynamicScene) -> Self {
        Self {
            shading: vec![0.0; scene.field.shading.num_params()],
            displacement: vec![0.0; scene.motion.displacement.num_params()],
        }
    }

    pub fn add_into(&self, grad: &mut SceneGrad) {
        for (g, v) in grad.tensors[SHADING].iter_mut().zip(&self.shading) {
            *g += v;
        }
        for (g, v) in grad.tensors[DISPLACEMENT].iter_mut().zip(&self.displacement) {
            *g += v;
        }
    }
}

/// Per-ray random stream derived from a root seed, a step counter and the ray index.
pub fn ray_rng(seed: u64, step: u64, ray: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(ray);
    rng
}

impl RayTape {
    pub fn samples_used(&self) -> usize {
        self.used
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.z.len()];
        for j in 0..self.used {
            w[j] = self.samples[j].weight;
        }
        w
    }

    /// Forward pass. Rays with an empty segment render transparent.
    pub fn forward(
        &mut self,
        scene: &DynamicScene,
        ray: &Ray,
        opts: &SampleOptions,
        rng: Option<&mut ChaCha8Rng>,
    ) {
        self.rgb = [0.0; 3];
        self.depth = 0.0;
        self.opacity = 0.0;
        self.used = 0;
        self.time = ray.time;
        if !(ray.near < ray.far) {
            self.z.clear();
            self.delta.clear();
            return;
        }
        let m = opts.samples.max(2);
        let rng = if opts.jitter { rng } else { None };
        fill_samples(ray.near, ray.far, m, rng, &mut self.z, &mut self.delta);
        if self.samples.len() < m {
            self.samples.resize_with(m, SampleTape::default);
        }
        let field = &scene.field;
        let motion = &scene.motion;
        let ch = field.feature_channels();
        let mut trans = 1.0;
        for j in 0..m {
            if trans < opts.min_transmittance {
                break;
            }
            let z = self.z[j];
            let delta = self.delta[j];
            let s = &mut self.samples[j];
            s.x = [
                ray.origin[0] + z * ray.dir[0],
                ray.origin[1] + z * ray.dir[1],
                ray.origin[2] + z * ray.dir[2],
            ];
            s.mstencil = motion.stencil(s.x, ray.time);
            let d = motion.displacement_cached(&s.mstencil, &mut s.motion);
            let xw = [s.x[0] + d[0], s.x[1] + d[1], s.x[2] + d[2]];
            s.xw = xw;
            s.trans = trans;
            s.has_color = false;
            let Some(cell) = field.spec().locate(xw) else {
                s.inside = false;
                s.weight = 0.0;
                s.transmit = 1.0;
                s.dsigma = 0.0;
                self.used = j + 1;
                continue;
            };
            s.inside = true;
            s.stencil = field.spec().stencil(&cell);
            let mut raw = 0.0;
            for c in 0..8 {
                raw += s.stencil.weight[c] * field.density.data[s.stencil.index[c]];
            }
            let (sigma, dsigma) = field.activate(raw);
            s.dsigma = dsigma;
            let optical = sigma * delta;
            s.transmit = (-optical).exp();
            let w = trans * -(-optical).exp_m1();
            s.weight = w;
            if w >= opts.min_weight {
                s.shade.feature.clear();
                s.shade.feature.resize(ch, 0.0);
                for c in 0..8 {
                    let wc = s.stencil.weight[c];
                    let row = &field.features.data[s.stencil.index[c] * ch..(s.stencil.index[c] + 1) * ch];
                    for (o, v) in s.shade.feature.iter_mut().zip(row) {
                        *o += wc * v;
                    }
                }
                field
                    .shading
                    .forward_cached(&s.shade.feature, &mut s.shade.logits, &mut s.shade.mlp);
                s.color = s.shade.logits.map(squash);
                s.has_color = true;
                for c in 0..3 {
                    self.rgb[c] += w * s.color[c];
                }
            }
            self.depth += w * z;
            self.opacity += w;
            trans *= s.transmit;
            self.used = j + 1;
        }
    }

    /// Reverse pass given `d loss / d rgb` and `d loss / d depth`.
    pub fn backward(
        &self,
        scene: &DynamicScene,
        g_rgb: [f64; 3],
        g_depth: f64,
        nets: &mut NetGrads,
        records: &mut GradRecords,
    ) {
        let field = &scene.field;
        let motion = &scene.motion;
        let ch = field.feature_channels();
        let mch = motion.channels;
        let mut dfeat = vec![0.0; ch];
        let mut dmotion = vec![0.0; mch];
        let mut suffix = 0.0;
        for j in (0..self.used).rev() {
            let s = &self.samples[j];
            if !s.inside {
                continue;
            }
            let z = self.z[j];
            let mut q = g_depth * z;
            if s.has_color {
                q += g_rgb[0] * s.color[0] + g_rgb[1] * s.color[1] + g_rgb[2] * s.color[2];
            }
            // d loss / d (sigma_j delta_j)
            let d_optical = s.trans * s.transmit * q - suffix;
            suffix += s.weight * q;
            let draw = d_optical * self.delta[j] * s.dsigma;

            dfeat.iter_mut().for_each(|v| *v = 0.0);
            if s.has_color {
                let dlogit: [f64; 3] =
                    std::array::from_fn(|c| s.weight * g_rgb[c] * s.color[c] * (1.0 - s.color[c]));
                field
                    .shading
                    .backward(&s.shade.mlp, &dlogit, &mut nets.shading, &mut dfeat);
            }

            // gradient with respect to the warped position
            let mut gpos = [0.0; 3];
            for c in 0..8 {
                let idx = s.stencil.index[c];
                let mut coef = draw * field.density.data[idx];
                let row = &field.features.data[idx * ch..(idx + 1) * ch];
                for (d, v) in dfeat.iter().zip(row) {
                    coef += d * v;
                }
                for a in 0..3 {
                    gpos[a] += coef * s.stencil.dweight[c][a];
                }
            }

            records
                .field
                .extend_from_slice(&[s.xw[0], s.xw[1], s.xw[2], draw]);
            records.field.extend_from_slice(&dfeat);

            motion
                .displacement
                .backward(&s.motion.mlp, &gpos, &mut nets.displacement, &mut dmotion);
            if dmotion.iter().any(|&v| v != 0.0) {
                records
                    .motion
                    .extend_from_slice(&[s.x[0], s.x[1], s.x[2], self.time]);
                records.motion.extend_from_slice(&dmotion);
            }
        }
    }
}

/// Renders one ray through the scene.
pub fn render(
    scene: &DynamicScene,
    ray: &Ray,
    opts: &SampleOptions,
    rng: Option<&mut ChaCha8Rng>,
) -> RayOutput {
    let mut tape = RayTape::default();
    tape.forward(scene, ray, opts, rng);
    RayOutput {
        rgb: tape.rgb,
        depth: tape.depth,
        opacity: tape.opacity,
        weights: tape.weights(),
    }
}

/// Color, z-depth and opacity images of one time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    /// Camera-frame depth (z), not distance along the ray.
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
}

/// Renders every pixel of `cam` at time `t`, `rows_per_tile` image rows per task.
pub fn render_image(
    scene: &DynamicScene,
    cam: &Camera,
    t: f64,
    opts: &SampleOptions,
    exec: Exec,
    rows_per_tile: usize,
) -> Result<RenderedImage> {
    let mut bundle = cam.generate_rays(&cam.all_pixels(), t)?;
    bundle.clip_to(&scene.field.bounds());
    let idx: Vec<usize> = (0..bundle.len()).collect();
    let tiles = exec.map_chunks(&idx, rows_per_tile.max(1) * cam.width, |_, rays| {
        let mut tape = RayTape::default();
        rays.iter()
            .map(|&i| {
                let ray = Ray {
                    origin: bundle.origins[i],
                    dir: bundle.directions[i],
                    near: bundle.near[i],
                    far: bundle.far[i],
                    time: t,
                };
                tape.forward(scene, &ray, opts, None);
                (tape.rgb, tape.depth * bundle.depth_factor[i], tape.opacity)
            })
            .collect::<Vec<_>>()
    });
    let mut img = RenderedImage {
        width: cam.width,
        height: cam.height,
        rgb: Vec::with_capacity(idx.len()),
        depth: Vec::with_capacity(idx.len()),
        opacity: Vec::with_capacity(idx.len()),
    };
    for (rgb, d, o) in tiles.into_iter().flatten() {
        img.rgb.push(rgb);
        img.depth.push(d);
        img.opacity.push(o);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use crate::grid::Aabb;
    use crate::motion::MotionConfig;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn scene(bounds: Aabb, res: usize, seed: u64) -> DynamicScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = FieldConfig {
            resolution: [res; 3],
            feature_channels: 4,
            shading_hidden: vec![8, 8],
            alpha_init: 1e-3,
        };
        let m = MotionConfig {
            resolution: [5; 3],
            time_resolution: 4,
            ranks: [1; 4],
            channels: 3,
            hidden: vec![4, 4],
            init_scale: 0.1,
        };
        DynamicScene::new(&f, &m, bounds, 4, &mut rng).unwrap()
    }

    fn cube() -> Aabb {
        Aabb {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }

    #[test]
    fn midpoint_samples() {
        let (z, d) = sample_along_ray::<ChaCha8Rng>(0.0, 1.0, 2, None).unwrap();
        assert_eq!(z, vec![0.25, 0.75]);
        assert_eq!(d, vec![0.5, 0.25]);
        assert!(sample_along_ray::<ChaCha8Rng>(1.0, 1.0, 4, None).is_err());
        assert!(sample_along_ray::<ChaCha8Rng>(0.0, 1.0, 1, None).is_err());
    }

    #[test]
    fn jittered_samples_stay_in_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (z, d) = sample_along_ray(2.0, 5.0, 10, Some(&mut rng)).unwrap();
        for (i, zi) in z.iter().enumerate() {
            assert!(*zi >= 2.0 + 0.3 * i as f64 && *zi < 2.0 + 0.3 * (i + 1) as f64);
        }
        assert!(d.iter().sum::<f64>() <= 3.0 + 1e-12);
        let (a, _) = sample_along_ray::<ChaCha8Rng>(2.0, 5.0, 10, None).unwrap();
        let (b, _) = sample_along_ray::<ChaCha8Rng>(2.0, 5.0, 10, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hand_weights() {
        let ln2 = 2f64.ln();
        let out = composite(&[ln2, 0.0], &[1.0, 1.0], &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], &[1.0, 2.0]);
        assert!((out.weights[0] - 0.5).abs() < 1e-12);
        assert!((out.rgb[0] - 0.5).abs() < 1e-12 && out.rgb[1] == 0.0);

        let c1 = [0.2, 0.4, 0.6];
        let c2 = [1.0, 0.0, 0.5];
        let out = composite(&[ln2, ln2], &[1.0, 1.0], &[c1, c2], &[1.0, 2.0]);
        assert!((out.weights[0] - 0.5).abs() < 1e-12);
        assert!((out.weights[1] - 0.25).abs() < 1e-12);
        assert!((out.opacity - 0.75).abs() < 1e-12);
        for c in 0..3 {
            assert!((out.rgb[c] - (0.5 * c1[c] + 0.25 * c2[c])).abs() < 1e-12);
        }
    }

    #[test]
    fn transparent_ray() {
        let out = composite(&[0.0; 5], &[0.1; 5], &[[1.0; 3]; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(out.rgb, [0.0; 3]);
        assert_eq!(out.opacity, 0.0);
        assert_eq!(out.depth, 0.0);
    }

    proptest! {
        #[test]
        fn weight_law(sig in prop::collection::vec((0.0f64..20.0, 0.001f64..0.5), 2..64)) {
            let (s, d): (Vec<f64>, Vec<f64>) = sig.into_iter().unzip();
            let n = s.len();
            let out = composite(&s, &d, &vec![[0.5; 3]; n], &vec![1.0; n]);
            let total: f64 = s.iter().zip(&d).map(|(a, b)| a * b).sum();
            prop_assert!(out.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
            prop_assert!(out.opacity <= 1.0 + 1e-15);
            prop_assert!((out.opacity - (1.0 - (-total).exp())).abs() < 1e-9);
        }

        #[test]
        fn empty_sample_changes_nothing(
            sig in prop::collection::vec((0.0f64..5.0, 0.01f64..0.5, 0.0f64..1.0), 2..20),
            at in 0usize..20,
            dz in 0.01f64..1.0,
        ) {
            let n = sig.len();
            let s: Vec<f64> = sig.iter().map(|v| v.0).collect();
            let d: Vec<f64> = sig.iter().map(|v| v.1).collect();
            let c: Vec<[f64; 3]> = sig.iter().map(|v| [v.2, 1.0 - v.2, 0.5]).collect();
            let z: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
            let base = composite(&s, &d, &c, &z);
            let k = at % (n + 1);
            let (mut s2, mut d2, mut c2, mut z2) = (s.clone(), d.clone(), c.clone(), z.clone());
            s2.insert(k, 0.0);
            d2.insert(k, dz);
            c2.insert(k, [0.9, 0.1, 0.3]);
            z2.insert(k, 7.0);
            let more = composite(&s2, &d2, &c2, &z2);
            for ch in 0..3 {
                prop_assert!((base.rgb[ch] - more.rgb[ch]).abs() < 1e-9);
            }
            prop_assert!((base.depth - more.depth).abs() < 1e-9);
        }
    }

    #[test]
    fn tape_matches_composite() {
        let sc = scene(cube(), 6, 4);
        let mut sc = sc;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in sc.field.density.data.iter_mut() {
            *v = rng.gen_range(-2.0..4.0);
        }
        for v in sc.field.features.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let ray = Ray {
            origin: [0.1, -0.2, -3.0],
            dir: [0.0, 0.0, 1.0],
            near: 2.2,
            far: 3.9,
            time: 0.4,
        };
        let opts = SampleOptions::exact(16);
        let out = render(&sc, &ray, &opts, None);
        let (z, d) = sample_along_ray::<ChaCha8Rng>(2.2, 3.9, 16, None).unwrap();
        let mut s = Vec::new();
        let mut c = Vec::new();
        for &zi in &z {
            let x = [0.1, -0.2, -3.0 + zi];
            let xw = sc.warp(x, 0.4);
            s.push(sc.field.query_density(xw));
            c.push(sc.field.query_color(xw));
        }
        let reference = composite(&s, &d, &c, &z);
        for ch in 0..3 {
            assert!((out.rgb[ch] - reference.rgb[ch]).abs() < 1e-12);
        }
        assert!((out.depth - reference.depth).abs() < 1e-12);
        assert!((out.opacity - reference.opacity).abs() < 1e-12);
    }

    #[test]
    fn opaque_plane_depth() {
        let mut sc = scene(cube(), 33, 1);
        let spec = *sc.field.spec();
        for i in 0..33 {
            for j in 0..33 {
                for k in 0..33 {
                    sc.field.density.data[spec.linear(i, j, k)] = if k >= 16 { 50.0 } else { -50.0 };
                }
            }
        }
        let ray = Ray {
            origin: [0.05, 0.1, -2.0],
            dir: [0.0, 0.0, 1.0],
            near: 1.0,
            far: 3.0,
            time: 0.0,
        };
        let opts = SampleOptions::exact(32);
        let out = render(&sc, &ray, &opts, None);
        let max_delta = 2.0 / 32.0;
        assert!((out.depth - 2.0).abs() <= 2.0 * max_delta, "{}", out.depth);
        assert!(out.opacity > 0.999);
    }

    fn camera() -> Camera {
        Camera::new(8.0, 8.0, 3.5, 3.5, 8, 8).unwrap()
    }

    #[test]
    fn zero_density_image_is_black() {
        let b = Aabb {
            min: [-1.0, -1.0, 1.0],
            max: [1.0, 1.0, 3.0],
        };
        let mut sc = scene(b, 6, 2);
        sc.field.density.data.fill(-1e3);
        let img = render_image(&sc, &camera(), 0.5, &SampleOptions::exact(16), Exec::Sequential, 2).unwrap();
        assert!(img.rgb.iter().all(|p| *p == [0.0; 3]));
        assert!(img.depth.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn opaque_slab_renders_constant_color() {
        let b = Aabb {
            min: [-1.0, -1.0, 1.0],
            max: [1.0, 1.0, 3.0],
        };
        let mut sc = scene(b, 6, 2);
        sc.field.density.data.fill(60.0);
        let ch = sc.field.feature_channels();
        for (i, v) in sc.field.features.data.iter_mut().enumerate() {
            *v = [0.3, -0.7, 0.1, 0.9][i % ch];
        }
        let img = render_image(&sc, &camera(), 0.0, &SampleOptions::exact(24), Exec::Parallel, 3).unwrap();
        let c0 = img.rgb[0];
        for p in &img.rgb {
            for c in 0..3 {
                assert!((p[c] - c0[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiling_and_threads_do_not_change_images() {
        let b = Aabb {
            min: [-1.0, -1.0, 1.0],
            max: [1.0, 1.0, 3.0],
        };
        let mut sc = scene(b, 7, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for v in sc.field.density.data.iter_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        for v in sc.field.features.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let opts = SampleOptions::default();
        let a = render_image(&sc, &camera(), 0.3, &opts, Exec::Sequential, 1).unwrap();
        let b2 = render_image(&sc, &camera(), 0.3, &opts, Exec::Sequential, 8).unwrap();
        let c = render_image(&sc, &camera(), 0.3, &opts, Exec::Parallel, 2).unwrap();
        assert_eq!(a, b2);
        assert_eq!(a, c);

        // pixel (5, 2) against a single-ray render
        let cam = camera();
        let mut bundle = cam.generate_rays(&[(5.0, 2.0)], 0.3).unwrap();
        bundle.clip_to(&sc.field.bounds());
        let ray = Ray {
            origin: bundle.origins[0],
            dir: bundle.directions[0],
            near: bundle.near[0],
            far: bundle.far[0],
            time: 0.3,
        };
        let out = render(&sc, &ray, &opts, None);
        assert_eq!(a.rgb[2 * 8 + 5], out.rgb);
        assert_eq!(a.depth[2 * 8 + 5], out.depth * bundle.depth_factor[0]);
    }
}
