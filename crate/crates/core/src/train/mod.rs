//! Mask-filtered training rays, the photometric + depth objective and the
//! optimisation loop.

mod eval;
mod metrics;
mod optim;

pub use eval::{evaluate, EvalOptions, EvalReport, FrameScore};
pub use metrics::{psnr, psnr_from_mse, ssim, PSNR_CAP};
pub use optim::Adam;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::dataset::FrameDataset;
use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::grid::{Aabb, Vec3};
use crate::motion::MotionConfig;
use crate::par::Exec;
use crate::render::{ray_rng, GradRecords, NetGrads, Ray, RayTape, SampleOptions};
use crate::scene::{DynamicScene, ParamGroup, SceneGrad};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Density and feature grids.
    pub grid: f64,
    /// Decomposed motion components.
    pub motion: f64,
    /// Shading and displacement networks.
    pub network: f64,
    /// Factor the rates have decayed by at the last step.
    pub final_decay: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            grid: 0.1,
            motion: 0.01,
            network: 1e-3,
            final_decay: 0.1,
        }
    }
}

impl LearningRates {
    pub fn at(&self, group: ParamGroup, step: usize, steps: usize) -> f64 {
        let base = match group {
            ParamGroup::DensityGrid | ParamGroup::FeatureGrid => self.grid,
            ParamGroup::MotionComponents => self.motion,
            ParamGroup::Shading | ParamGroup::Displacement => self.network,
        };
        base * self.final_decay.powf(step as f64 / steps.max(1) as f64)
    }
}

/// Weights of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub huber_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the depth term.
    pub lambda_d: f64,
    /// Huber transition point, world units.
    pub huber_delta: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: LearningRates,
    pub seed: u64,
    pub sampling: SampleOptions,
    pub field: FieldConfig,
    pub motion: MotionConfig,
    /// Fraction of the depth extent added on each side of the scene box.
    pub bounds_padding: f64,
    /// Frames left out of training.
    pub holdout_frames: Vec<usize>,
    /// Rays per gradient task; fixes the reduction tree.
    pub chunk_rays: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
    /// Steps the loss may stay above 10x its initial value before aborting.
    pub divergence_window: usize,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_d: 0.1,
            huber_delta: 0.2,
            batch_size: 1024,
            steps: 3000,
            lr: LearningRates::default(),
            seed: 0,
            sampling: SampleOptions {
                jitter: true,
                ..SampleOptions::default()
            },
            field: FieldConfig::default(),
            motion: MotionConfig::default(),
            bounds_padding: 0.05,
            holdout_frames: Vec::new(),
            chunk_rays: 64,
            log_every: 100,
            checkpoint_every: 0,
            divergence_window: 500,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lambda_d >= 0.0) {
            return bad("lambda_d must be >= 0");
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber_delta must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.chunk_rays == 0 {
            return bad("chunk_rays must be >= 1");
        }
        if self.sampling.samples < 2 {
            return bad("sampling.samples must be >= 2");
        }
        if !(self.bounds_padding >= 0.0) {
            return bad("bounds_padding must be >= 0");
        }
        let lr = &self.lr;
        if !(lr.grid > 0.0 && lr.motion >= 0.0 && lr.network > 0.0 && lr.final_decay > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_d: self.lambda_d,
            huber_delta: self.huber_delta,
        }
    }
}

/// One unmasked training pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub pixel: (u32, u32),
    pub frame: u32,
    pub time: f64,
    pub color: [f64; 3],
    /// Camera-frame depth target.
    pub depth: f64,
    pub depth_valid: bool,
}

/// Every (pixel, frame) pair whose tool mask is 0, in frame-major, row-major order.
pub fn prefilter_rays(dataset: &FrameDataset) -> Result<Vec<RaySample>> {
    prefilter_frames(dataset, &[])
}

/// As [`prefilter_rays`], skipping the listed frames.
pub fn prefilter_frames(dataset: &FrameDataset, skip: &[usize]) -> Result<Vec<RaySample>> {
    dataset.validate()?;
    let w = dataset.width();
    let mut out = Vec::new();
    for (f, frame) in dataset.frames.iter().enumerate() {
        if skip.contains(&f) {
            continue;
        }
        for (p, &m) in frame.mask.iter().enumerate() {
            if m != 0 {
                continue;
            }
            let d = frame.depth[p];
            out.push(RaySample {
                pixel: ((p % w) as u32, (p / w) as u32),
                frame: f as u32,
                time: dataset.times[f],
                color: frame.rgb[p],
                depth: d,
                depth_valid: d > 0.0 && d.is_finite(),
            });
        }
    }
    Ok(out)
}

/// Huber penalty of `a - b`.
pub fn huber(a: f64, b: f64, delta: f64) -> f64 {
    let r = (a - b).abs();
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to `a`.
pub fn huber_grad(a: f64, b: f64, delta: f64) -> f64 {
    (a - b).clamp(-delta, delta)
}

/// Per-pixel ray geometry for a fixed camera, clipped to the scene box.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelRays {
    pub width: usize,
    origin: Vec3,
    dirs: Vec<Vec3>,
    depth_factor: Vec<f64>,
    near: Vec<f64>,
    far: Vec<f64>,
}

impl PixelRays {
    pub fn new(cam: &Camera, bounds: &Aabb) -> Result<Self> {
        let mut b = cam.generate_rays(&cam.all_pixels(), 0.0)?;
        b.clip_to(bounds);
        Ok(Self {
            width: cam.width,
            origin: cam.center(),
            dirs: b.directions,
            depth_factor: b.depth_factor,
            near: b.near,
            far: b.far,
        })
    }

    fn index(&self, s: &RaySample) -> usize {
        s.pixel.1 as usize * self.width + s.pixel.0 as usize
    }

    pub fn ray(&self, s: &RaySample) -> Ray {
        let i = self.index(s);
        Ray {
            origin: self.origin,
            dir: self.dirs[i],
            near: self.near[i],
            far: self.far[i],
            time: s.time,
        }
    }

    /// Mean distance between consecutive samples over all rays that hit the box.
    pub fn mean_step(&self, samples: usize) -> f64 {
        let (sum, n) = self
            .near
            .iter()
            .zip(&self.far)
            .filter(|(n, f)| f > n)
            .fold((0.0, 0usize), |(s, c), (n, f)| (s + (f - n) / samples as f64, c + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Target distance along the ray for a camera-frame depth.
    pub fn ray_depth(&self, s: &RaySample) -> f64 {
        s.depth / self.depth_factor[self.index(s)]
    }
}

/// Summed statistics of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    /// Sum of squared color errors over rays and channels.
    pub color_se: f64,
    pub rays: usize,
}

impl BatchStats {
    pub fn psnr(&self) -> f64 {
        psnr_from_mse(self.color_se / (3 * self.rays.max(1)) as f64)
    }
}

/// Jitter stream of a batch: `(seed, step)`. `None` renders at bin midpoints.
pub type JitterKey = Option<(u64, u64)>;

/// Loss of a batch and, when `grad` is given, its gradient accumulated into it.
///
/// Rays are split into fixed chunks of `chunk` rays; each chunk produces its own
/// network gradients and grid records, which are reduced in chunk order. The result
/// therefore does not depend on the thread count or on `exec`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_batch(
    scene: &DynamicScene,
    rays: &PixelRays,
    batch: &[RaySample],
    weights: LossWeights,
    opts: &SampleOptions,
    jitter: JitterKey,
    exec: Exec,
    chunk: usize,
    grad: Option<&mut SceneGrad>,
) -> Result<BatchStats> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let want_grad = grad.is_some();
    type ChunkOut = Result<(BatchStats, Option<(NetGrads, GradRecords)>)>;
    let parts: Vec<ChunkOut> = exec.map_chunks(batch, chunk.max(1), |ci, items| {
        let mut tape = RayTape::default();
        let mut nets = want_grad.then(|| NetGrads::zeros(scene));
        let mut records = GradRecords::default();
        let mut stats = BatchStats::default();
        for (k, s) in items.iter().enumerate() {
            let index = ci * chunk.max(1) + k;
            let ray = rays.ray(s);
            let mut rng = jitter.map(|(seed, step)| ray_rng(seed, step, index as u64));
            tape.forward(scene, &ray, opts, rng.as_mut());
            let mut g_rgb = [0.0; 3];
            let mut se = 0.0;
            for c in 0..3 {
                let r = tape.rgb[c] - s.color[c];
                se += r * r;
                g_rgb[c] = 2.0 * r;
            }
            let mut loss = se;
            let mut g_depth = 0.0;
            if s.depth_valid && weights.lambda_d > 0.0 {
                let target = rays.ray_depth(s);
                loss += weights.lambda_d * huber(tape.depth, target, weights.huber_delta);
                g_depth = weights.lambda_d * huber_grad(tape.depth, target, weights.huber_delta);
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    value: loss,
                    ray: index,
                    pixel: s.pixel,
                    time: s.time,
                });
            }
            stats.loss += loss;
            stats.color_se += se;
            stats.rays += 1;
            if let Some(nets) = nets.as_mut() {
                tape.backward(scene, g_rgb, g_depth, nets, &mut records);
            }
        }
        Ok((stats, nets.map(|n| (n, records))))
    });
    let mut total = BatchStats::default();
    let mut grad = grad;
    for part in parts {
        let (stats, g) = part?;
        total.loss += stats.loss;
        total.color_se += stats.color_se;
        total.rays += stats.rays;
        if let (Some(grad), Some((nets, records))) = (grad.as_deref_mut(), g) {
            nets.add_into(grad);
            records.scatter(scene, grad);
        }
    }
    Ok(total)
}

/// Periodic training state handed to observers.
pub struct Progress<'a> {
    pub step: usize,
    /// Mean loss per ray of the last batch.
    pub loss: f64,
    pub psnr: f64,
    pub scene: &'a DynamicScene,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub scene: DynamicScene,
    /// One record per optimisation step.
    pub history: Vec<StepRecord>,
    /// Rays evaluated by the loss whose pixel carries a tool mask. Always 0.
    pub masked_rays_evaluated: u64,
    pub training_rays: usize,
    pub bounds: Aabb,
}

/// Builds the initial scene for `dataset` under `cfg`.
pub fn init_scene(dataset: &FrameDataset, cfg: &TrainConfig) -> Result<DynamicScene> {
    let bounds = dataset.scene_bounds(cfg.bounds_padding)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    DynamicScene::new(&cfg.field, &cfg.motion, bounds, dataset.len(), &mut rng)
}

pub fn fit(dataset: &FrameDataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    fit_with(dataset, cfg, |_| Ok(()))
}

/// Trains from scratch. `observe` runs every `log_every` steps and after the last.
pub fn fit_with(
    dataset: &FrameDataset,
    cfg: &TrainConfig,
    observe: impl FnMut(&Progress) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let scene = init_scene(dataset, cfg)?;
    fit_scene(dataset, cfg, scene, observe)
}

/// Trains an existing scene.
pub fn fit_scene(
    dataset: &FrameDataset,
    cfg: &TrainConfig,
    mut scene: DynamicScene,
    mut observe: impl FnMut(&Progress) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let samples = prefilter_frames(dataset, &cfg.holdout_frames)?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no unmasked training rays".into()));
    }
    let bounds = scene.field.bounds();
    let rays = PixelRays::new(&dataset.camera, &bounds)?;
    let mut adam = Adam::new(&scene);
    let mut grad = scene.zero_grad();
    let mut pick = ChaCha8Rng::seed_from_u64(cfg.seed);
    pick.set_stream(1);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut masked = 0u64;
    let mut initial = None;
    let mut above = 0usize;
    let w = dataset.width();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        for _ in 0..cfg.batch_size {
            let s = samples[pick.gen_range(0..samples.len())];
            let p = s.pixel.1 as usize * w + s.pixel.0 as usize;
            if dataset.frames[s.frame as usize].mask[p] != 0 {
                masked += 1;
            }
            batch.push(s);
        }
        grad.fill_zero();
        let stats = evaluate_batch(
            &scene,
            &rays,
            &batch,
            cfg.weights(),
            &cfg.sampling,
            Some((cfg.seed, step as u64)),
            cfg.exec,
            cfg.chunk_rays,
            Some(&mut grad),
        )?;
        let loss = stats.loss / stats.rays as f64;
        let init = *initial.get_or_insert(loss);
        if loss > 10.0 * init {
            above += 1;
            if above >= cfg.divergence_window {
                return Err(Error::Diverged {
                    step,
                    loss,
                    initial: init,
                    window: cfg.divergence_window,
                });
            }
        } else {
            above = 0;
        }
        adam.step(&mut scene, &grad, |g| cfg.lr.at(g, step, cfg.steps));
        let rec = StepRecord {
            step,
            loss,
            psnr: stats.psnr(),
        };
        history.push(rec);
        let last = step + 1 == cfg.steps;
        if last || (cfg.log_every > 0 && step % cfg.log_every == 0) {
            log::info!("step {step} loss {loss:.6} psnr {:.2}", rec.psnr);
            observe(&Progress {
                step,
                loss,
                psnr: rec.psnr,
                scene: &scene,
            })?;
        }
    }
    Ok(TrainOutput {
        scene,
        history,
        masked_rays_evaluated: masked,
        training_rays: samples.len(),
        bounds,
    })
}
