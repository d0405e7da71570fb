//! Particle filling of closed meshes and an explicit MLS-MPM elastic solver
//! (quadratic B-splines, APIC transfers, fixed-corotated stress).

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Aabb, Vec3};
use crate::mesh::{validate_watertight, TriMesh};
use crate::par::Exec;

/// Parity inside test against a closed mesh, with triangles binned by their xy box.
pub struct InsideTester<'a> {
    mesh: &'a TriMesh,
    bounds: Aabb,
    bins: [usize; 2],
    cells: Vec<Vec<u32>>,
    eps: f64,
}

impl<'a> InsideTester<'a> {
    pub fn new(mesh: &'a TriMesh) -> Result<Self> {
        let report = validate_watertight(mesh);
        if !report.watertight {
            return Err(Error::NotWatertight(format!(
                "{} boundary edges, {} components, euler {}",
                report.boundary_edges, report.components, report.euler_characteristic
            )));
        }
        let bounds = Aabb::from_points(&mesh.vertices).ok_or(Error::EmptyParticles)?;
        let side = ((mesh.faces.len() as f64).sqrt().ceil() as usize).clamp(1, 256);
        let bins = [side, side];
        let mut cells = vec![Vec::new(); side * side];
        let ext = bounds.extent();
        let scale = ext.iter().cloned().fold(0.0, f64::max).max(1e-300);
        let tester = |x: f64, a: usize| -> usize {
            let t = if ext[a] > 0.0 { (x - bounds.min[a]) / ext[a] } else { 0.0 };
            ((t * side as f64).floor().max(0.0) as usize).min(side - 1)
        };
        for (fi, f) in mesh.faces.iter().enumerate() {
            let p = f.map(|i| mesh.vertices[i as usize]);
            let lo: [usize; 2] = std::array::from_fn(|a| tester(p[0][a].min(p[1][a]).min(p[2][a]), a));
            let hi: [usize; 2] = std::array::from_fn(|a| tester(p[0][a].max(p[1][a]).max(p[2][a]), a));
            for i in lo[0]..=hi[0] {
                for j in lo[1]..=hi[1] {
                    cells[i * side + j].push(fi as u32);
                }
            }
        }
        Ok(Self {
            mesh,
            bounds,
            bins,
            cells,
            eps: 1e-12 * scale,
        })
    }

    fn bin(&self, x: f64, a: usize) -> Option<usize> {
        let ext = self.bounds.extent()[a];
        if x < self.bounds.min[a] || x > self.bounds.max[a] {
            return None;
        }
        let t = if ext > 0.0 { (x - self.bounds.min[a]) / ext } else { 0.0 };
        Some(((t * self.bins[a] as f64).floor() as usize).min(self.bins[a] - 1))
    }

    /// Crossings of the ray `p + s (0, 0, 1)`, `s > 0`. `None` on a grazing hit;
    /// `Some(None)` when `p` lies on the surface.
    fn crossings(&self, p: Vec3) -> Option<Option<usize>> {
        let (Some(i), Some(j)) = (self.bin(p[0], 0), self.bin(p[1], 1)) else {
            return Some(Some(0));
        };
        let eps = self.eps * self.eps.max(1e-300).sqrt().max(1.0);
        let mut count = 0;
        let mut grazing = false;
        for &fi in &self.cells[i * self.bins[1] + j] {
            let [a, b, c] = self.mesh.faces[fi as usize].map(|k| self.mesh.vertices[k as usize]);
            let cross = |u: Vec3, v: Vec3| (v[0] - u[0]) * (p[1] - u[1]) - (v[1] - u[1]) * (p[0] - u[0]);
            let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            if area.abs() <= eps {
                // parallel to the ray
                if on_triangle(p, a, b, c, self.eps) {
                    return Some(None);
                }
                continue;
            }
            let e = [cross(b, c), cross(c, a), cross(a, b)];
            let s = area.signum();
            if e.iter().any(|&x| x * s < -eps) {
                continue;
            }
            let z = (e[0] * a[2] + e[1] * b[2] + e[2] * c[2]) / area;
            if (z - p[2]).abs() <= self.eps {
                return Some(None);
            }
            if e.iter().any(|&x| (x * s).abs() <= eps) {
                grazing = true;
                continue;
            }
            if z > p[2] {
                count += 1;
            }
        }
        if grazing {
            None
        } else {
            Some(Some(count))
        }
    }

    /// Points on the surface count as inside. A ray grazing an edge or vertex is
    /// retried from slightly shifted start points.
    pub fn contains(&self, p: Vec3) -> bool {
        let step = 1e-9 * self.bounds.extent().iter().cloned().fold(0.0, f64::max).max(1e-12);
        let mut q = p;
        for k in 0..16 {
            match self.crossings(q) {
                Some(None) => return true,
                Some(Some(n)) => return n % 2 == 1,
                None => {
                    let k = k as f64 + 1.0;
                    q = [p[0] + step * 0.6180339887 * k, p[1] + step * 0.3819660113 * k, p[2]];
                }
            }
        }
        false
    }
}

fn on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3, eps: f64) -> bool {
    let sub = |u: Vec3, v: Vec3| [u[0] - v[0], u[1] - v[1], u[2] - v[2]];
    let cross = |u: Vec3, v: Vec3| [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let dot = |u: Vec3, v: Vec3| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let n = cross(sub(b, a), sub(c, a));
    let nn = dot(n, n).sqrt();
    if nn == 0.0 || (dot(n, sub(p, a)) / nn).abs() > eps {
        return false;
    }
    let tol = -eps * nn;
    [(a, b), (b, c), (c, a)]
        .iter()
        .all(|&(u, v)| dot(cross(sub(v, u), sub(p, u)), n) / nn >= tol)
}

/// Parity inside test of a single point; rejects meshes that are not watertight.
pub fn point_in_mesh(mesh: &TriMesh, p: Vec3) -> Result<bool> {
    Ok(InsideTester::new(mesh)?.contains(p))
}

/// Lattice points at `spacing` inside `mesh`. The lattice is centred in the mesh's
/// bounding box; with a seed every point is jittered by up to a quarter spacing.
pub fn fill_points(mesh: &TriMesh, spacing: f64, jitter: Option<u64>) -> Result<Vec<Vec3>> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidConfig("particle spacing must be positive".into()));
    }
    let tester = InsideTester::new(mesh)?;
    let b = tester.bounds;
    let ext = b.extent();
    let n: [usize; 3] = std::array::from_fn(|a| (ext[a] / spacing).floor() as usize);
    let start: [f64; 3] =
        std::array::from_fn(|a| b.min[a] + 0.5 * (ext[a] - n[a] as f64 * spacing) + 0.5 * spacing);
    let mut rng = jitter.map(ChaCha8Rng::seed_from_u64);
    let mut pts = Vec::new();
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                let mut p = [
                    start[0] + i as f64 * spacing,
                    start[1] + j as f64 * spacing,
                    start[2] + k as f64 * spacing,
                ];
                if let Some(r) = rng.as_mut() {
                    for v in p.iter_mut() {
                        *v += r.gen_range(-0.25..0.25) * spacing;
                    }
                }
                if tester.contains(p) {
                    pts.push(p);
                }
            }
        }
    }
    if pts.is_empty() {
        return Err(Error::EmptyParticles);
    }
    Ok(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Material {
    /// Young's modulus, Pa.
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// kg / m^3.
    pub density: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            youngs_modulus: 10e3,
            poisson_ratio: 0.4,
            density: 1000.0,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0 && self.density > 0.0) {
            return Err(Error::InvalidConfig("Young's modulus and density must be positive".into()));
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(Error::InvalidConfig("Poisson ratio must lie in (-1, 0.5)".into()));
        }
        Ok(())
    }

    /// Lame parameters `(mu, lambda)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        (e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
    }

    /// Dilatational wave speed.
    pub fn wave_speed(&self) -> f64 {
        let (mu, la) = self.lame();
        ((la + 2.0 * mu) / self.density).sqrt()
    }

    /// Largest stable time step for grid spacing `h`.
    pub fn cfl_bound(&self, h: f64) -> f64 {
        0.5 * h / self.wave_speed()
    }
}

/// Kinematic sphere that moves with `velocity` until `reverse_time`, then back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereCollider {
    pub center: Vec3,
    pub radius: f64,
    pub velocity: Vec3,
    pub reverse_time: f64,
}

impl SphereCollider {
    pub fn center_at(&self, t: f64) -> Vec3 {
        let fwd = t.min(self.reverse_time);
        let back = (t - self.reverse_time).max(0.0);
        std::array::from_fn(|a| self.center[a] + self.velocity[a] * (fwd - back))
    }

    pub fn velocity_at(&self, t: f64) -> Vec3 {
        if t < self.reverse_time {
            self.velocity
        } else {
            self.velocity.map(|v| -v)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particles {
    pub x: Vec<Vector3<f64>>,
    pub v: Vec<Vector3<f64>>,
    pub mass: Vec<f64>,
    pub volume: Vec<f64>,
    /// Deformation gradient.
    pub f: Vec<Matrix3<f64>>,
    /// Affine velocity (APIC).
    pub c: Vec<Matrix3<f64>>,
}

impl Particles {
    pub fn new(points: &[Vec3], spacing: f64, density: f64) -> Self {
        let vol = spacing * spacing * spacing;
        let n = points.len();
        Self {
            x: points.iter().map(|p| Vector3::from(*p)).collect(),
            v: vec![Vector3::zeros(); n],
            mass: vec![density * vol; n],
            volume: vec![vol; n],
            f: vec![Matrix3::identity(); n],
            c: vec![Matrix3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn momentum(&self) -> Vector3<f64> {
        self.v.iter().zip(&self.mass).map(|(v, m)| v * *m).sum()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.x.iter().map(|p| [p.x, p.y, p.z]).collect()
    }
}

/// Solver state: particles, background grid and parameters.
#[derive(Debug, Clone)]
pub struct MpmState {
    pub particles: Particles,
    pub material: Material,
    /// Grid origin (node 0).
    pub origin: Vec3,
    /// Nodes per axis.
    pub dims: [usize; 3],
    pub h: f64,
    pub dt: f64,
    pub gravity: Vec3,
    /// Layers of sticky nodes along every wall; 0 disables walls.
    pub wall_layers: usize,
    /// Grid velocity damping rate, 1/s.
    pub damping: f64,
    pub collider: Option<SphereCollider>,
    pub time: f64,
    pub steps: u64,
    pub grid_mass: Vec<f64>,
    pub grid_momentum: Vec<Vector3<f64>>,
    pub exec: Exec,
    /// Particle chunks with private grids in the scatter.
    pub scatter_chunks: usize,
}

fn weights(fx: Vector3<f64>) -> [Vector3<f64>; 3] {
    [
        (Vector3::repeat(1.5) - fx).map(|v| 0.5 * v * v),
        (fx - Vector3::repeat(1.0)).map(|v| 0.75 - v * v),
        (fx - Vector3::repeat(0.5)).map(|v| 0.5 * v * v),
    ]
}

/// Rotation of the polar decomposition `F = R S`.
fn polar_rotation(f: &Matrix3<f64>) -> Matrix3<f64> {
    if *f == Matrix3::identity() {
        return *f;
    }
    let svd = f.svd(true, true);
    let (mut u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    if (u * v_t).determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    u * v_t
}

impl MpmState {
    /// Empty grid covering `domain` with spacing `h`; `dt = 0` picks a step from the
    /// CFL bound.
    pub fn new(particles: Particles, material: Material, domain: Aabb, h: f64, dt: f64) -> Result<Self> {
        material.validate()?;
        if !(h > 0.0) {
            return Err(Error::InvalidConfig("grid spacing must be positive".into()));
        }
        let ext = domain.extent();
        let dims: [usize; 3] = std::array::from_fn(|a| (ext[a] / h).ceil() as usize + 1);
        let n = dims.iter().product::<usize>();
        let bound = material.cfl_bound(h);
        let dt = if dt > 0.0 { dt } else { 0.8 * bound };
        let s = Self {
            particles,
            material,
            origin: domain.min,
            dims,
            h,
            dt,
            gravity: [0.0, 0.0, -9.81],
            wall_layers: 2,
            damping: 0.0,
            collider: None,
            time: 0.0,
            steps: 0,
            grid_mass: vec![0.0; n],
            grid_momentum: vec![Vector3::zeros(); n],
            exec: Exec::default(),
            scatter_chunks: 8,
        };
        s.check_cfl()?;
        Ok(s)
    }

    pub fn check_cfl(&self) -> Result<()> {
        let bound = self.material.cfl_bound(self.h);
        if !(self.dt > 0.0 && self.dt <= bound) {
            return Err(Error::Cfl { dt: self.dt, bound });
        }
        Ok(())
    }

    /// Height of the floor: the first node above the sticky bottom layers.
    pub fn floor(&self) -> f64 {
        self.origin[2] + self.wall_layers as f64 * self.h
    }

    fn node(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    fn stencil_base(&self, x: &Vector3<f64>) -> ([usize; 3], Vector3<f64>) {
        let g = (x - Vector3::from(self.origin)) / self.h;
        let mut base = [0usize; 3];
        let mut fx = Vector3::zeros();
        for a in 0..3 {
            let b = (g[a] - 0.5).floor().clamp(0.0, (self.dims[a] - 3) as f64);
            base[a] = b as usize;
            fx[a] = g[a] - b;
        }
        (base, fx)
    }

    /// One explicit step.
    pub fn step(&mut self) -> Result<()> {
        self.check_cfl()?;
        let (mu, la) = self.material.lame();
        let (dt, h) = (self.dt, self.h);
        let inv_h2 = 1.0 / (h * h);
        let n_nodes = self.grid_mass.len();
        let p = &self.particles;
        let np = p.len();

        // particle to grid, one private grid per chunk, merged in chunk order
        let chunks = self.scatter_chunks.max(1);
        let per = np.div_ceil(chunks).max(1);
        let idx: Vec<usize> = (0..np).collect();
        let this = &*self;
        let partial = self.exec.map_chunks(&idx, per, |_, ids| {
            let mut mass = vec![0.0; n_nodes];
            let mut mom = vec![Vector3::zeros(); n_nodes];
            for &q in ids {
                let (base, fx) = this.stencil_base(&p.x[q]);
                let w = weights(fx);
                let f = &p.f[q];
                let j = f.determinant();
                let r = polar_rotation(f);
                let tau = (f - r) * f.transpose() * (2.0 * mu) + Matrix3::identity() * (la * (j - 1.0) * j);
                let stress = tau * (-dt * p.volume[q] * 4.0 * inv_h2);
                let affine = stress + p.c[q] * p.mass[q];
                let mv = p.v[q] * p.mass[q];
                for a in 0..3 {
                    for b in 0..3 {
                        for c in 0..3 {
                            let off = Vector3::new(a as f64, b as f64, c as f64);
                            let dpos = (off - fx) * h;
                            let wt = w[a].x * w[b].y * w[c].z;
                            let n = this.node(base[0] + a, base[1] + b, base[2] + c);
                            mass[n] += wt * p.mass[q];
                            mom[n] += (mv + affine * dpos) * wt;
                        }
                    }
                }
            }
            (mass, mom)
        });
        self.grid_mass.iter_mut().for_each(|m| *m = 0.0);
        self.grid_momentum.iter_mut().for_each(|m| *m = Vector3::zeros());
        for (mass, mom) in partial {
            for n in 0..n_nodes {
                self.grid_mass[n] += mass[n];
                self.grid_momentum[n] += mom[n];
            }
        }

        // grid update: momentum to velocity, gravity, damping, walls, collider
        let g = Vector3::from(self.gravity);
        let decay = (-self.damping * dt).exp();
        let dims = self.dims;
        let layers = self.wall_layers;
        let origin = Vector3::from(self.origin);
        let t_next = self.time + dt;
        let collider = self.collider;
        let masses = &self.grid_mass;
        self.exec.for_each_mut(&mut self.grid_momentum, |n, m| {
            let mass = masses[n];
            if mass <= 0.0 {
                *m = Vector3::zeros();
                return;
            }
            let mut v = *m / mass + g * dt;
            if decay != 1.0 {
                v *= decay;
            }
            let (i, j, k) = (n / (dims[1] * dims[2]), (n / dims[2]) % dims[1], n % dims[2]);
            let ijk = [i, j, k];
            if layers > 0 && (0..3).any(|a| ijk[a] < layers || ijk[a] + layers >= dims[a]) {
                v = Vector3::zeros();
            }
            if let Some(s) = collider {
                let pos = origin + Vector3::new(i as f64, j as f64, k as f64) * h;
                let c = Vector3::from(s.center_at(t_next));
                let d = pos - c;
                let dist = d.norm();
                if dist < s.radius && dist > 0.0 {
                    let normal = d / dist;
                    let vs = Vector3::from(s.velocity_at(t_next));
                    let rel = v - vs;
                    let vn = rel.dot(&normal);
                    if vn < 0.0 {
                        v = rel - normal * vn + vs;
                    }
                }
            }
            // store velocity in place
            *m = v;
        });

        // grid to particle
        let vel = &self.grid_momentum;
        let this = &*self;
        let lo = Vector3::from(self.origin) + Vector3::repeat(h);
        let hi = Vector3::from(self.origin)
            + Vector3::new((dims[0] - 2) as f64, (dims[1] - 2) as f64, (dims[2] - 2) as f64) * h;
        let updated: Vec<_> = self.exec.map_range(np, |q| {
            let (base, fx) = this.stencil_base(&this.particles.x[q]);
            let w = weights(fx);
            let mut nv = Vector3::zeros();
            let mut nc = Matrix3::zeros();
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        let off = Vector3::new(a as f64, b as f64, c as f64);
                        let dpos = (off - fx) * h;
                        let wt = w[a].x * w[b].y * w[c].z;
                        let gv = vel[this.node(base[0] + a, base[1] + b, base[2] + c)];
                        nv += gv * wt;
                        nc += gv * dpos.transpose() * (4.0 * inv_h2 * wt);
                    }
                }
            }
            let x = (this.particles.x[q] + nv * dt).sup(&lo).inf(&hi);
            let f = (Matrix3::identity() + nc * dt) * this.particles.f[q];
            (x, nv, nc, f)
        });
        let p = &mut self.particles;
        for (q, (x, v, c, f)) in updated.into_iter().enumerate() {
            if !(x.iter().all(|s| s.is_finite()) && v.iter().all(|s| s.is_finite()) && f.iter().all(|s| s.is_finite())) {
                return Err(Error::MpmNan(q));
            }
            p.x[q] = x;
            p.v[q] = v;
            p.c[q] = c;
            p.f[q] = f;
        }
        self.time = t_next;
        self.steps += 1;
        Ok(())
    }
}

/// Applies [`MpmState::step`] to a copy.
pub fn mpm_step(state: &MpmState) -> Result<MpmState> {
    let mut s = state.clone();
    s.step()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub material: Material,
    pub steps: usize,
    /// Grid spacing; `0` uses 1/32 of the largest mesh extent.
    pub grid_spacing: f64,
    /// Particles per grid cell along each axis.
    pub particles_per_cell: usize,
    /// `0` picks a step from the CFL bound.
    pub dt: f64,
    pub gravity: Vec3,
    pub damping: f64,
    pub snapshot_every: usize,
    pub jitter_seed: Option<u64>,
    /// Largest particle count before the spacing is coarsened.
    pub max_particles: usize,
    pub collider: Option<SphereCollider>,
    pub exec: Exec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            material: Material::default(),
            steps: 200,
            grid_spacing: 0.0,
            particles_per_cell: 2,
            dt: 0.0,
            gravity: [0.0, 0.0, -9.81],
            damping: 0.0,
            snapshot_every: 10,
            jitter_seed: None,
            max_particles: 200_000,
            collider: None,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub time: f64,
    pub positions: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub floor: f64,
    pub h: f64,
    pub dt: f64,
    pub mass: f64,
}

/// Fills `mesh` with particles and integrates `cfg.steps` steps on a grid that
/// covers the mesh plus the collider's path. Walls are sticky; the mesh rests on
/// the bottom wall.
pub fn simulate(mesh: &TriMesh, cfg: &SimConfig) -> Result<Trajectory> {
    let mut state = setup(mesh, cfg)?;
    let mut snaps = vec![Snapshot {
        step: 0,
        time: 0.0,
        positions: state.particles.positions(),
    }];
    for s in 1..=cfg.steps {
        state.step()?;
        if (cfg.snapshot_every > 0 && s % cfg.snapshot_every == 0) || s == cfg.steps {
            snaps.push(Snapshot {
                step: state.steps,
                time: state.time,
                positions: state.particles.positions(),
            });
        }
    }
    Ok(Trajectory {
        snapshots: snaps,
        floor: state.floor(),
        h: state.h,
        dt: state.dt,
        mass: state.particles.total_mass(),
    })
}

/// Initial solver state of [`simulate`].
pub fn setup(mesh: &TriMesh, cfg: &SimConfig) -> Result<MpmState> {
    cfg.material.validate()?;
    let mb = Aabb::from_points(&mesh.vertices).ok_or(Error::EmptyParticles)?;
    let ext = mb.extent();
    let largest = ext.iter().cloned().fold(0.0, f64::max);
    let h = if cfg.grid_spacing > 0.0 { cfg.grid_spacing } else { largest / 32.0 };
    let mut spacing = h / cfg.particles_per_cell.max(1) as f64;
    let vol = mesh.signed_volume().abs();
    while vol / spacing.powi(3) > cfg.max_particles as f64 {
        spacing *= 1.25;
    }
    let pts = fill_points(mesh, spacing, cfg.jitter_seed)?;
    let particles = Particles::new(&pts, spacing, cfg.material.density);
    let layers = 2usize;
    let margin = (layers + 2) as f64 * h;
    let mut domain = Aabb::new(
        [mb.min[0] - margin, mb.min[1] - margin, mb.min[2] - layers as f64 * h - 0.5 * spacing],
        [mb.max[0] + margin, mb.max[1] + margin, mb.max[2] + margin],
    );
    if let Some(s) = &cfg.collider {
        for t in [0.0, s.reverse_time] {
            let c = s.center_at(t);
            for a in 0..3 {
                domain.min[a] = domain.min[a].min(c[a] - s.radius - margin);
                domain.max[a] = domain.max[a].max(c[a] + s.radius + margin);
            }
        }
    }
    let mut state = MpmState::new(particles, cfg.material, domain, h, cfg.dt)?;
    state.gravity = cfg.gravity;
    state.damping = cfg.damping;
    state.collider = cfg.collider;
    state.wall_layers = layers;
    state.exec = cfg.exec;
    Ok(state)
}

/// Binary particle dump: magic `ENDOMPM\0`, u32 version 1, u32 count, u64 step,
/// f64 time, then `count` xyz triples as f32, all little-endian.
pub fn snapshot_bytes(s: &Snapshot) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 12 * s.positions.len());
    out.extend_from_slice(b"ENDOMPM\0");
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(s.positions.len() as u32).to_le_bytes());
    out.extend_from_slice(&s.step.to_le_bytes());
    out.extend_from_slice(&s.time.to_le_bytes());
    for p in &s.positions {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn snapshot_from_bytes(buf: &[u8]) -> Result<Snapshot> {
    let bad = || Error::Malformed("particle dump".into());
    if buf.len() < 32 || &buf[..8] != b"ENDOMPM\0" {
        return Err(bad());
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    if u32_at(8) != 1 {
        return Err(bad());
    }
    let n = u32_at(12) as usize;
    if buf.len() != 32 + 12 * n {
        return Err(bad());
    }
    let step = u64::from_le_bytes(buf[16..24].try_into().unwrap());
    let time = f64::from_le_bytes(buf[24..32].try_into().unwrap());
    let f = |o: usize| f32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as f64;
    let positions = (0..n).map(|i| [f(32 + 12 * i), f(36 + 12 * i), f(40 + 12 * i)]).collect();
    Ok(Snapshot { step, time, positions })
}
