//! Independent reference computations shared by the integration and acceptance tests.
#![allow(dead_code)]

use endorecon_core::camera::Camera;
use endorecon_core::field::FieldConfig;
use endorecon_core::geometry::{triangulate_heightfield, DepthImage};
use endorecon_core::grid::Aabb;
use endorecon_core::mesh::{
    boundary_edges, close_mesh, order_boundary_loop, validate_watertight, CloseConfig, TriMesh,
};
use endorecon_core::motion::{MotionConfig, MotionField};
use endorecon_core::par::Exec;
use endorecon_core::render::SampleOptions;
use endorecon_core::scene::{DynamicScene, ParamGroup, NUM_TENSORS};
use endorecon_core::train::{evaluate_batch, LossWeights, PixelRays, RaySample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIMS: [usize; 4] = [6, 6, 6, 5];

/// Dense `[x][y][z][t][c]` tensor: sum over groups and ranks of line x volume x basis.
fn materialize(f: &MotionField) -> Vec<f64> {
    let ch = f.channels;
    let [nx, ny, nz, nt] = DIMS;
    let mut dense = vec![0.0; nx * ny * nz * nt * ch];
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                for t in 0..nt {
                    let node = [x, y, z, t];
                    let out = &mut dense[((((x * ny) + y) * nz + z) * nt + t) * ch..][..ch];
                    for g in &f.groups {
                        let rest: Vec<usize> = (0..4).filter(|&a| a != g.axis).collect();
                        let vi = (node[rest[0]] * DIMS[rest[1]] + node[rest[1]]) * DIMS[rest[2]]
                            + node[rest[2]];
                        for r in 0..g.rank {
                            let s = g.line[node[g.axis] * g.rank + r] * g.volume[vi * g.rank + r];
                            for c in 0..ch {
                                out[c] += s * g.basis[r * ch + c];
                            }
                        }
                    }
                }
            }
        }
    }
    dense
}

fn quadrilinear(dense: &[f64], ch: usize, g: [f64; 4]) -> Vec<f64> {
    let [_, ny, nz, nt] = DIMS;
    let base: [usize; 4] = std::array::from_fn(|a| (g[a].floor() as usize).min(DIMS[a] - 2));
    let frac: [f64; 4] = std::array::from_fn(|a| g[a] - base[a] as f64);
    let mut out = vec![0.0; ch];
    for corner in 0..16usize {
        let mut w = 1.0;
        let mut n = [0usize; 4];
        for a in 0..4 {
            let bit = (corner >> a) & 1;
            n[a] = base[a] + bit;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        let off = ((((n[0] * ny) + n[1]) * nz + n[2]) * nt + n[3]) * ch;
        for c in 0..ch {
            out[c] += w * dense[off + c];
        }
    }
    out
}

/// Largest deviation over `queries` random points between the decomposed motion
/// feature of a random rank-(2,2,2,2) field on a 6x6x6x5 grid and the dense oracle.
pub fn motion_oracle_error(seed: u64, queries: usize) -> f64 {
    let bounds = Aabb::new([-0.5, 0.0, 1.0], [0.5, 2.0, 1.5]);
    let cfg = MotionConfig {
        resolution: [6, 6, 6],
        time_resolution: 5,
        ranks: [2, 2, 2, 2],
        channels: 8,
        hidden: vec![8, 8],
        init_scale: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = MotionField::new(&cfg, bounds, 5, &mut rng).unwrap();
    let dense = materialize(&f);
    let mut worst = 0.0f64;
    for _ in 0..queries {
        let x: [f64; 3] = std::array::from_fn(|a| rng.gen_range(bounds.min[a]..bounds.max[a]));
        let t: f64 = rng.gen_range(0.0..1.0);
        let g = [
            (x[0] - bounds.min[0]) / 1.0 * 5.0,
            (x[1] - bounds.min[1]) / 2.0 * 5.0,
            (x[2] - bounds.min[2]) / 0.5 * 5.0,
            t * 4.0,
        ];
        let want = quadrilinear(&dense, 8, g);
        let got = f.eval_motion_feature(x, t);
        for c in 0..8 {
            worst = worst.max((want[c] - got[c]).abs());
        }
    }
    worst
}

fn random_scene(rng: &mut ChaCha8Rng, bounds: Aabb) -> DynamicScene {
    let f = FieldConfig {
        resolution: [8, 8, 8],
        feature_channels: 4,
        shading_hidden: vec![8, 8],
        alpha_init: 1e-3,
    };
    let m = MotionConfig {
        resolution: [5, 5, 5],
        time_resolution: 4,
        ranks: [2; 4],
        channels: 4,
        hidden: vec![8, 8],
        init_scale: 0.3,
    };
    let mut s = DynamicScene::new(&f, &m, bounds, 4, rng).unwrap();
    for v in s.field.density.data.iter_mut() {
        *v = rng.gen_range(3.0..9.0);
    }
    for v in s.field.features.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let last = s.motion.displacement.last_layer_range();
    for v in &mut s.motion.displacement.params[last] {
        *v = rng.gen_range(-0.05..0.05);
    }
    s
}

const WEIGHTS: LossWeights = LossWeights {
    lambda_d: 0.1,
    huber_delta: 0.2,
};

fn loss(scene: &DynamicScene, rays: &PixelRays, batch: &[RaySample], opts: &SampleOptions) -> f64 {
    evaluate_batch(scene, rays, batch, WEIGHTS, opts, None, Exec::Sequential, 5, None)
        .unwrap()
        .loss
}

pub struct GradCheck {
    pub probes: usize,
    /// Per group: probes and worst relative error.
    pub groups: Vec<(ParamGroup, usize, f64)>,
    pub worst: f64,
    /// `(slot, index, analytic, numeric, relative error)`.
    pub failures: Vec<(usize, usize, f64, f64, f64)>,
}

/// Central differences of the batch loss against the analytic gradient for at least
/// 1000 parameters spread over both grids, every motion component and both networks.
///
/// Steps are `1e-3 * max(|theta|, 0.1)`. A step that carries a warped sample across a
/// cell face straddles a kink of the trilinear interpolant, so a probe that misses
/// the tolerance is retried with 10x and 100x shorter steps.
pub fn gradient_check(seed: u64, tol: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = Aabb::new([-1.0, -1.0, 1.0], [1.0, 1.0, 3.0]);
    let mut scene = random_scene(&mut rng, bounds);
    let cam = Camera::new(8.0, 8.0, 3.5, 3.5, 8, 8).unwrap();
    let rays = PixelRays::new(&cam, &bounds).unwrap();
    let batch: Vec<RaySample> = (0..24)
        .map(|_| RaySample {
            pixel: (rng.gen_range(0..8), rng.gen_range(0..8)),
            frame: 0,
            time: rng.gen_range(0.0..1.0),
            color: [rng.gen(), rng.gen(), rng.gen()],
            depth: rng.gen_range(1.5..2.5),
            depth_valid: rng.gen_bool(0.8),
        })
        .collect();
    let opts = SampleOptions::exact(24);
    let mut grad = scene.zero_grad();
    evaluate_batch(&scene, &rays, &batch, WEIGHTS, &opts, None, Exec::Parallel, 5, Some(&mut grad)).unwrap();

    let quota = |g: ParamGroup| match g {
        ParamGroup::DensityGrid | ParamGroup::FeatureGrid => 220,
        ParamGroup::Shading | ParamGroup::Displacement => 150,
        ParamGroup::MotionComponents => 25,
    };
    let mut picks = Vec::new();
    for slot in 0..NUM_TENSORS {
        let g = &grad.tensors[slot];
        let mut support: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
        support.shuffle(&mut rng);
        let n = quota(DynamicScene::group_of(slot));
        let from_support = (n * 9 / 10).min(support.len());
        picks.extend(support[..from_support].iter().map(|&i| (slot, i)));
        for _ in from_support..n {
            picks.push((slot, rng.gen_range(0..g.len())));
        }
    }

    let mut out = GradCheck {
        probes: picks.len(),
        groups: Vec::new(),
        worst: 0.0,
        failures: Vec::new(),
    };
    for &(slot, i) in &picks {
        let theta = scene.tensors()[slot][i];
        let analytic = grad.tensors[slot][i];
        let mut rel = f64::INFINITY;
        let mut numeric = f64::NAN;
        for shrink in [1.0, 0.1, 0.01] {
            let h = 1e-3 * theta.abs().max(0.1) * shrink;
            scene.tensors_mut()[slot][i] = theta + h;
            let up = loss(&scene, &rays, &batch, &opts);
            scene.tensors_mut()[slot][i] = theta - h;
            let down = loss(&scene, &rays, &batch, &opts);
            scene.tensors_mut()[slot][i] = theta;
            numeric = (up - down) / (2.0 * h);
            rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            if rel <= tol {
                break;
            }
        }
        let group = DynamicScene::group_of(slot);
        match out.groups.iter_mut().find(|(g, _, _)| *g == group) {
            Some(e) => {
                e.1 += 1;
                e.2 = e.2.max(rel);
            }
            None => out.groups.push((group, 1, rel)),
        }
        out.worst = out.worst.max(rel);
        if rel > tol {
            out.failures.push((slot, i, analytic, numeric, rel));
        }
    }
    out
}

/// Random single-hole valid-pixel region: a rectangle with rectangular bites taken
/// from its edges, each bite shallower than a third of the side it cuts into.
/// Regions whose quads do not bound a single simple loop are redrawn.
pub fn random_heightfield(rng: &mut ChaCha8Rng) -> TriMesh {
    loop {
        let (w, h) = (rng.gen_range(6..24usize), rng.gen_range(6..24usize));
        let mut valid = vec![true; w * h];
        for _ in 0..rng.gen_range(0..6) {
            let side = rng.gen_range(0..4);
            let along = if side < 2 { w } else { h };
            let across = if side < 2 { h } else { w };
            let len = rng.gen_range(1..=along / 2);
            let start = rng.gen_range(0..=along - len);
            let depth = rng.gen_range(1..=(across / 3).max(1));
            for a in start..start + len {
                for d in 0..depth {
                    let (x, y) = match side {
                        0 => (a, d),
                        1 => (a, h - 1 - d),
                        2 => (d, a),
                        _ => (w - 1 - d, a),
                    };
                    valid[y * w + x] = false;
                }
            }
        }
        let values: Vec<f64> = (0..w * h)
            .map(|i| if valid[i] { 2.0 + 0.3 * rng.gen::<f64>() } else { 0.0 })
            .collect();
        let cam = Camera::new(w as f64, w as f64, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h).unwrap();
        let depth = DepthImage::new(w, h, values).unwrap();
        let Ok(mesh) = triangulate_heightfield(&depth, &cam, None) else { continue };
        if mesh.faces.is_empty() {
            continue;
        }
        if boundary_edges(&mesh).and_then(|e| order_boundary_loop(&e)).is_ok() {
            return mesh;
        }
    }
}

/// Closes `n` random height fields and checks the five watertight properties plus
/// the counts: n + 1 new vertices and 3n new faces for a loop of n vertices.
pub fn heightfield_fuzz(seed: u64, n: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..n {
        let open = random_heightfield(&mut rng);
        let loop_len = order_boundary_loop(&boundary_edges(&open).unwrap()).unwrap().len();
        let zeta = open.vertices.iter().map(|v| v[2]).fold(f64::MIN, f64::max) + 0.5;
        let closed = close_mesh(
            &open,
            &CloseConfig {
                thickness: zeta,
                weld_epsilon: 1e-9,
            },
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        let r = validate_watertight(&closed);
        if !(r.manifold && r.single_component && r.euler_ok && r.consistent_orientation && r.positive_volume) {
            return Err(format!("case {case}: {r:?}"));
        }
        if closed.vertices.len() != open.vertices.len() + loop_len + 1
            || closed.faces.len() != open.faces.len() + 3 * loop_len
        {
            return Err(format!("case {case}: counts off for loop of {loop_len}"));
        }
        if closed.vertices[open.vertices.len()..].iter().any(|v| v[2] != zeta) {
            return Err(format!("case {case}: base vertex off the plane"));
        }
    }
    Ok(())
}
