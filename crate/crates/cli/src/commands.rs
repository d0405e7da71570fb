use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use endorecon_core::camera::Camera;
use endorecon_core::checkpoint;
use endorecon_core::dataset::DatasetMeta;
use endorecon_core::geometry::{extract_surface, MeshingOptions};
use endorecon_core::io::{self, SynthConfig};
use endorecon_core::mesh::{self, validate_watertight, CloseConfig, TriMesh, WatertightReport};
use endorecon_core::mpm::{self, Material, SimConfig, SphereCollider};
use endorecon_core::par::Exec;
use endorecon_core::render::{render_image, SampleOptions};
use endorecon_core::scene::DynamicScene;
use endorecon_core::train::{self, EvalOptions, TrainConfig};

use crate::{CloseArgs, EvaluateArgs, ExtractArgs, RenderArgs, SimulateArgs, SynthArgs, TrainArgs};

/// Written into the training directory as `model.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub dataset: DatasetMeta,
    pub sampling: SampleOptions,
    pub steps: usize,
    pub final_loss: f64,
    /// `[step, loss, psnr]` at every logged step.
    pub history: Vec<[f64; 3]>,
}

const MODEL: &str = "model.ckpt";
const SIDECAR: &str = "model.json";

/// A training directory stands for its final checkpoint.
fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MODEL)
    } else {
        path.to_path_buf()
    }
}

fn sidecar_path(ckpt: &Path) -> PathBuf {
    ckpt.parent().unwrap_or(Path::new(".")).join(SIDECAR)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            bail!("output directory {} does not exist", p.display())
        }
        _ => Ok(()),
    }
}

fn camera_of(meta: &DatasetMeta) -> Result<Camera> {
    Ok(Camera::new(meta.fx, meta.fy, meta.cx, meta.cy, meta.width, meta.height)?)
}

/// Scene, camera intrinsics, depth scale and the sampling used in training.
fn load_model(ckpt: &Path, data: Option<&Path>, samples: Option<usize>) -> Result<(DynamicScene, DatasetMeta, SampleOptions)> {
    let ckpt = &resolve_checkpoint(ckpt);
    let scene = checkpoint::load(ckpt)?;
    let side = sidecar_path(ckpt);
    let sidecar: Option<Sidecar> = if side.is_file() {
        let text = std::fs::read_to_string(&side).with_context(|| format!("reading {}", side.display()))?;
        Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", side.display()))?)
    } else {
        None
    };
    let meta = match (data, &sidecar) {
        (Some(d), _) => io::read_meta(d)?,
        (None, Some(s)) => s.dataset.clone(),
        (None, None) => bail!("{} has no sidecar; pass --data for the intrinsics", ckpt.display()),
    };
    let mut sampling = sidecar.map(|s| s.sampling).unwrap_or_default();
    sampling.jitter = false;
    if let Some(m) = samples {
        if m < 2 {
            bail!("--samples must be at least 2");
        }
        sampling.samples = m;
    }
    Ok((scene, meta, sampling))
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        bail!("--time {t} outside [0, 1]");
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => io::read_toml(p)?,
        None => SynthConfig::default(),
    };
    if let Some(f) = a.frames {
        cfg.frames = f;
    }
    if let Some(s) = a.seed {
        cfg.texture_seed = s;
    }
    let ds = io::render_synthetic(&cfg)?;
    io::save_dataset(&ds, &a.out)?;
    log::info!("wrote {} frames of {}x{} to {}", ds.len(), cfg.width, cfg.height, a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs, exec: Exec) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => io::read_toml(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.exec = exec;
    cfg.validate()?;
    let ds = io::load_dataset(&a.data)?;
    if let Some(&f) = cfg.holdout_frames.iter().find(|&&f| f >= ds.len()) {
        bail!("holdout frame {f} out of range ({} frames)", ds.len());
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let metrics_path = a.out.join("metrics.csv");
    let mut metrics = std::fs::File::create(&metrics_path).with_context(|| format!("writing {}", metrics_path.display()))?;
    writeln!(metrics, "step,loss,psnr")?;
    log::info!("training on {} frames of {}x{} for {} steps", ds.len(), ds.width(), ds.height(), cfg.steps);
    let mut history = Vec::new();
    let mut next_checkpoint = cfg.checkpoint_every;
    let out = train::fit_with(&ds, &cfg, |p| {
        history.push([p.step as f64, p.loss, p.psnr]);
        writeln!(metrics, "{},{},{}", p.step, p.loss, p.psnr)
            .map_err(|source| endorecon_core::Error::Io {
                path: metrics_path.clone(),
                source,
            })?;
        if cfg.checkpoint_every > 0 && p.step >= next_checkpoint {
            checkpoint::save(p.scene, &a.out.join(format!("checkpoint_{:06}.ckpt", p.step)))?;
            next_checkpoint = p.step + cfg.checkpoint_every;
        }
        Ok(())
    })?;
    checkpoint::save(&out.scene, &a.out.join(MODEL))?;
    let sidecar = Sidecar {
        dataset: ds.meta(),
        sampling: cfg.sampling,
        steps: cfg.steps,
        final_loss: out.history.last().map_or(f64::NAN, |r| r.loss),
        history,
    };
    let side = a.out.join(SIDECAR);
    std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?).with_context(|| format!("writing {}", side.display()))?;
    log::info!("final loss {:.6}; model in {}", sidecar.final_loss, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct RenderInfo {
    time: f64,
    width: usize,
    height: usize,
    /// World units per depth count in depth.png.
    depth_scale: f64,
    samples: usize,
    mean_opacity: f64,
}

pub fn render(a: &RenderArgs, exec: Exec) -> Result<()> {
    check_time(a.time)?;
    let (scene, meta, sampling) = load_model(&a.checkpoint, a.data.as_deref(), a.samples)?;
    let cam = camera_of(&meta)?;
    let img = render_image(&scene, &cam, a.time, &sampling, exec, 4)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    io::write_rgb(&a.out.join("rgb.png"), img.width, img.height, &img.rgb)?;
    io::write_depth(&a.out.join("depth.png"), img.width, img.height, &img.depth, meta.depth_scale)?;
    let info = RenderInfo {
        time: a.time,
        width: img.width,
        height: img.height,
        depth_scale: meta.depth_scale,
        samples: sampling.samples,
        mean_opacity: img.opacity.iter().sum::<f64>() / img.opacity.len() as f64,
    };
    std::fs::write(a.out.join("render.json"), serde_json::to_string_pretty(&info)?)?;
    log::info!("rendered t = {} into {}", a.time, a.out.display());
    Ok(())
}

pub fn extract_mesh(a: &ExtractArgs, exec: Exec) -> Result<()> {
    check_time(a.time)?;
    ensure_parent(&a.out)?;
    let (scene, meta, sampling) = load_model(&a.checkpoint, a.data.as_deref(), a.samples)?;
    let cam = camera_of(&meta)?;
    let opts = MeshingOptions {
        min_opacity: a.min_opacity,
        ..MeshingOptions::default()
    };
    let mesh = extract_surface(&scene, &cam, a.time, &sampling, &opts, exec)?;
    io::save_mesh(&mesh, &a.out)?;
    log::info!("{} vertices, {} faces -> {}", mesh.vertices.len(), mesh.faces.len(), a.out.display());
    Ok(())
}

/// Report of `close-mesh`: one entry per connected component of the input.
#[derive(Serialize)]
struct CloseReport {
    watertight: bool,
    components: Vec<ComponentReport>,
}

#[derive(Serialize)]
struct ComponentReport {
    base_depth: f64,
    input_vertices: usize,
    input_faces: usize,
    #[serde(flatten)]
    checks: WatertightReport,
}

pub fn close_mesh(a: &CloseArgs) -> Result<()> {
    ensure_parent(&a.out)?;
    if let Some(r) = &a.report {
        ensure_parent(r)?;
    }
    let input = io::load_mesh(&a.input)?;
    input.validate()?;
    let parts = input.split_components();
    if parts.is_empty() {
        bail!("{} has no faces", a.input.display());
    }
    let mut merged = TriMesh {
        colors: input.colors.as_ref().map(|_| Vec::new()),
        ..TriMesh::default()
    };
    let mut components = Vec::new();
    for part in &parts {
        let zeta = match (a.thickness, a.offset) {
            (Some(t), _) => t,
            (None, Some(o)) => part.vertices.iter().map(|v| v[2]).fold(f64::MIN, f64::max) + o,
            (None, None) => bail!("one of --thickness or --offset is required"),
        };
        let closed = mesh::close_mesh(
            part,
            &CloseConfig {
                thickness: zeta,
                weld_epsilon: a.weld_epsilon,
            },
        )?;
        components.push(ComponentReport {
            base_depth: zeta,
            input_vertices: part.vertices.len(),
            input_faces: part.faces.len(),
            checks: validate_watertight(&closed),
        });
        let base = merged.vertices.len() as u32;
        merged.vertices.extend_from_slice(&closed.vertices);
        merged.faces.extend(closed.faces.iter().map(|f| f.map(|i| i + base)));
        if let (Some(out), Some(c)) = (merged.colors.as_mut(), closed.colors.as_ref()) {
            out.extend_from_slice(c);
        }
    }
    let report = CloseReport {
        watertight: components.iter().all(|c| c.checks.watertight),
        components,
    };
    io::save_mesh(&merged, &a.out)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.report {
        Some(p) => std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    if !report.watertight {
        bail!("closed mesh failed the watertight checks");
    }
    log::info!("{} component(s) closed -> {}", report.components.len(), a.out.display());
    Ok(())
}

/// Camera frame (y down, z into the scene) to simulation frame (z up) and back.
fn flip(p: [f64; 3]) -> [f64; 3] {
    [p[0], -p[1], -p[2]]
}

#[derive(Serialize)]
struct SimSummary {
    particles: usize,
    total_mass: f64,
    dt: f64,
    grid_spacing: f64,
    material: Material,
    probe: Option<SphereCollider>,
    snapshots: Vec<SnapshotEntry>,
}

#[derive(Serialize)]
struct SnapshotEntry {
    step: u64,
    time: f64,
    file: String,
    /// Largest particle displacement from the initial state.
    max_displacement: f64,
}

pub fn simulate(a: &SimulateArgs, exec: Exec) -> Result<()> {
    let mut cfg: SimConfig = match &a.config {
        Some(p) => io::read_toml(p)?,
        None => SimConfig {
            damping: 5.0,
            ..SimConfig::default()
        },
    };
    if let Some(p) = &a.material {
        cfg.material = io::read_toml(p)?;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    cfg.exec = exec;
    cfg.material.validate()?;
    let mesh = io::load_mesh(&a.mesh)?;
    mesh.validate()?;
    let mut sim_mesh = mesh.clone();
    sim_mesh.vertices.iter_mut().for_each(|v| *v = flip(*v));
    // the flip is a rotation, so winding and volume sign survive it
    let report = validate_watertight(&sim_mesh);
    if !report.watertight {
        bail!("{} is not watertight; run close-mesh first", a.mesh.display());
    }
    if a.probe {
        let state = mpm::setup(&sim_mesh, &cfg)?;
        let b = endorecon_core::grid::Aabb::from_points(&sim_mesh.vertices).unwrap();
        let ext = b.extent();
        let radius = 0.2 * ext[0].min(ext[1]);
        let half = 0.5 * cfg.steps.max(1) as f64 * state.dt;
        let travel = 0.5 * radius;
        cfg.collider = Some(SphereCollider {
            center: [0.5 * (b.min[0] + b.max[0]), 0.5 * (b.min[1] + b.max[1]), b.max[2] + radius],
            radius,
            velocity: [0.0, 0.0, -travel / half],
            reverse_time: half,
        });
    }
    let traj = mpm::simulate(&sim_mesh, &cfg)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let first = traj.snapshots[0].positions.clone();
    let mut entries = Vec::new();
    for s in &traj.snapshots {
        let mut snap = s.clone();
        snap.positions.iter_mut().for_each(|p| *p = flip(*p));
        let name = format!("particles_{:06}.bin", s.step);
        std::fs::write(a.out.join(&name), mpm::snapshot_bytes(&snap))?;
        if a.ply {
            io::save_points(&snap.positions, &a.out.join(format!("particles_{:06}.ply", s.step)))?;
        }
        let max_displacement = s
            .positions
            .iter()
            .zip(&first)
            .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        entries.push(SnapshotEntry {
            step: s.step,
            time: s.time,
            file: name,
            max_displacement,
        });
    }
    let summary = SimSummary {
        particles: first.len(),
        total_mass: traj.mass,
        dt: traj.dt,
        grid_spacing: traj.h,
        material: cfg.material,
        probe: cfg.collider,
        snapshots: entries,
    };
    std::fs::write(a.out.join("simulation.json"), serde_json::to_string_pretty(&summary)?)?;
    log::info!(
        "{} particles, {} steps of {:.3e} s -> {}",
        summary.particles,
        cfg.steps,
        traj.dt,
        a.out.display()
    );
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs, exec: Exec) -> Result<()> {
    if let Some(p) = &a.out {
        ensure_parent(p)?;
    }
    let (scene, _, sampling) = load_model(&a.checkpoint, Some(&a.data), a.samples)?;
    let ds = io::load_dataset(&a.data)?;
    let report = train::evaluate(
        &scene,
        &ds,
        &EvalOptions {
            sampling,
            exec,
            frames: a.frames.clone(),
            ..EvalOptions::default()
        },
    )?;
    for f in &report.frames {
        println!(
            "frame {:3}  t {:.3}  psnr {:6.2}  ssim {:.4}  depth err {:.5}",
            f.frame, f.time, f.psnr, f.ssim, f.depth_median_abs
        );
    }
    println!(
        "mean psnr {:.2}  ssim {:.4}  median depth err {:.5} (sample step {:.5})",
        report.mean_psnr, report.mean_ssim, report.depth_median_abs, report.mean_step
    );
    if let Some(p) = report.occluded_psnr {
        println!("occluded pixels {}  psnr {:.2}", report.occluded_pixels, p);
    }
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}
