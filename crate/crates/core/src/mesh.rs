//! Indexed triangle meshes, boundary extraction and the open-to-closed procedure
//! that stitches a single-hole surface to a flat base.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Vec3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

/// Undirected edge with the smaller index first.
pub type Edge = (u32, u32);

fn edge(a: u32, b: u32) -> Edge {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let m = Self {
            vertices,
            faces,
            colors: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// Index range, repeated indices and color count.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i as usize >= n {
                    return Err(Error::IndexOutOfRange {
                        face: fi,
                        index: i as usize,
                        count: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace(fi));
            }
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: format!("{n} vertex colors"),
                    got: format!("{}", c.len()),
                });
            }
        }
        Ok(())
    }

    /// Number of faces using each undirected edge.
    pub fn edge_counts(&self) -> BTreeMap<Edge, u32> {
        let mut m = BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *m.entry(edge(f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        m
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_counts().len() as i64 + self.faces.len() as i64
    }

    /// Volume enclosed by the faces (divergence theorem); positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                    + a[2] * (b[0] * c[1] - b[1] * c[0]))
                    / 6.0
            })
            .sum()
    }

    /// Face-connected components as lists of face indices, ordered by first face.
    pub fn face_components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in &self.faces {
            let a = find(&mut parent, f[0] as usize);
            for &v in &f[1..] {
                let b = find(&mut parent, v as usize);
                if a != b {
                    parent[b] = a;
                }
            }
        }
        let mut groups: BTreeMap<usize, usize> = BTreeMap::new();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (fi, f) in self.faces.iter().enumerate() {
            let r = find(&mut parent, f[0] as usize);
            let g = *groups.entry(r).or_insert_with(|| {
                out.push(Vec::new());
                out.len() - 1
            });
            out[g].push(fi);
        }
        out
    }

    /// Splits into face-connected pieces, each with its own compacted vertex list.
    pub fn split_components(&self) -> Vec<TriMesh> {
        self.face_components()
            .into_iter()
            .map(|faces| {
                let mut remap = BTreeMap::new();
                let mut verts = Vec::new();
                let mut colors = self.colors.as_ref().map(|_| Vec::new());
                let mut new_faces = Vec::with_capacity(faces.len());
                for fi in faces {
                    let f = self.faces[fi].map(|v| {
                        *remap.entry(v).or_insert_with(|| {
                            verts.push(self.vertices[v as usize]);
                            if let (Some(out), Some(src)) = (colors.as_mut(), self.colors.as_ref()) {
                                out.push(src[v as usize]);
                            }
                            (verts.len() - 1) as u32
                        })
                    });
                    new_faces.push(f);
                }
                TriMesh {
                    vertices: verts,
                    faces: new_faces,
                    colors,
                }
            })
            .collect()
    }
}

/// Edges used by exactly one face, sorted.
pub fn boundary_edges(mesh: &TriMesh) -> Result<Vec<Edge>> {
    let counts = mesh.edge_counts();
    let mut out = Vec::new();
    for (&e, &n) in &counts {
        if n >= 3 {
            return Err(Error::NonManifoldEdge(e.0, e.1));
        }
        if n == 1 {
            out.push(e);
        }
    }
    Ok(out)
}

/// Cyclic vertex order of a boundary; the first vertex is repeated at the end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryLoop {
    pub vertices: Vec<u32>,
}

impl BoundaryLoop {
    /// Distinct vertices on the loop.
    pub fn len(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Orders boundary edges into one cycle, starting at the first vertex of the first
/// edge and always stepping to the smallest unvisited neighbour.
pub fn order_boundary_loop(edges: &[Edge]) -> Result<BoundaryLoop> {
    if edges.is_empty() {
        return Err(Error::NoBoundary);
    }
    let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    if adj.values().any(|n| n.len() != 2) {
        return Err(Error::NotACycle);
    }
    for n in adj.values_mut() {
        n.sort_unstable();
    }
    // count cycles
    let mut seen = BTreeSet::new();
    let mut cycles = 0;
    for &start in adj.keys() {
        if !seen.insert(start) {
            continue;
        }
        cycles += 1;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &k in &adj[&v] {
                if seen.insert(k) {
                    stack.push(k);
                }
            }
        }
    }
    if cycles > 1 {
        return Err(Error::MultipleHoles(cycles));
    }
    let (head, mut v) = edges[0];
    let mut order = vec![head];
    let mut visited = BTreeSet::from([head]);
    while v != head {
        order.push(v);
        visited.insert(v);
        match adj[&v].iter().find(|k| !visited.contains(k)) {
            Some(&k) => v = k,
            None => v = head,
        }
    }
    order.push(head);
    Ok(BoundaryLoop { vertices: order })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloseConfig {
    /// Depth of the base plane.
    pub thickness: f64,
    /// Base projections closer than this are merged.
    pub weld_epsilon: f64,
}

impl Default for CloseConfig {
    fn default() -> Self {
        Self {
            thickness: 1.0,
            weld_epsilon: 1e-9,
        }
    }
}

/// Appends a base plane at depth `thickness` under the single boundary loop of
/// `mesh` and stitches it to the loop, then repairs winding.
///
/// The input vertices and faces keep their indices; the base center follows the
/// input vertices, then the base projections in loop order.
pub fn close_mesh(mesh: &TriMesh, cfg: &CloseConfig) -> Result<TriMesh> {
    mesh.validate()?;
    if !(cfg.weld_epsilon >= 0.0) {
        return Err(Error::InvalidConfig("weld_epsilon must be >= 0".into()));
    }
    let edges = boundary_edges(mesh)?;
    let cycle = order_boundary_loop(&edges)?;
    let zeta = cfg.thickness;
    let max_z = cycle
        .vertices
        .iter()
        .map(|&v| mesh.vertices[v as usize][2])
        .fold(f64::NEG_INFINITY, f64::max);
    if !(zeta > max_z) {
        return Err(Error::ThicknessTooSmall { zeta, max_z });
    }

    let mut out = mesh.clone();
    let n0 = mesh.vertices.len() as f64;
    let cx = mesh.vertices.iter().map(|v| v[0]).sum::<f64>() / n0;
    let cy = mesh.vertices.iter().map(|v| v[1]).sum::<f64>() / n0;
    let center = push_vertex(&mut out, [cx, cy, zeta], [128, 128, 128]);

    // projections appended so far: (index, position)
    let mut base: Vec<(u32, Vec3)> = Vec::new();
    let mut project = |out: &mut TriMesh, v: u32| -> u32 {
        let p = mesh.vertices[v as usize];
        let q = [p[0], p[1], zeta];
        for &(i, b) in &base {
            let d = ((b[0] - q[0]).powi(2) + (b[1] - q[1]).powi(2)).sqrt();
            if d <= cfg.weld_epsilon {
                return i;
            }
        }
        let color = mesh.colors.as_ref().map_or([128; 3], |c| c[v as usize]);
        let i = push_vertex(out, q, color);
        base.push((i, q));
        i
    };

    let mut queue: VecDeque<u32> = cycle.vertices.iter().copied().collect();
    let mut prev: Option<u32> = None;
    while let Some(v) = queue.pop_front() {
        let vp = project(&mut out, v);
        if let Some(&u) = queue.front() {
            out.faces.push([v, u, vp]);
        }
        if let Some(p) = prev {
            out.faces.push([p, v, vp]);
            out.faces.push([p, center, vp]);
        }
        prev = Some(vp);
    }
    out.validate()?;
    orient_faces(&mut out);
    Ok(out)
}

fn push_vertex(m: &mut TriMesh, p: Vec3, color: [u8; 3]) -> u32 {
    m.vertices.push(p);
    if let Some(c) = m.colors.as_mut() {
        c.push(color);
    }
    (m.vertices.len() - 1) as u32
}

/// Makes winding consistent by breadth-first propagation across shared edges
/// (seeded at the first face of every component), then flips everything if the
/// enclosed volume is negative.
pub fn orient_faces(mesh: &mut TriMesh) {
    let mut by_edge: BTreeMap<Edge, Vec<usize>> = BTreeMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            by_edge.entry(edge(f[k], f[(k + 1) % 3])).or_default().push(fi);
        }
    }
    let has_directed = |f: &[u32; 3], a: u32, b: u32| (0..3).any(|k| f[k] == a && f[(k + 1) % 3] == b);
    let mut done = vec![false; mesh.faces.len()];
    for seed in 0..mesh.faces.len() {
        if done[seed] {
            continue;
        }
        done[seed] = true;
        let mut queue = VecDeque::from([seed]);
        while let Some(fi) = queue.pop_front() {
            let f = mesh.faces[fi];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                for &g in &by_edge[&edge(a, b)] {
                    if done[g] {
                        continue;
                    }
                    if has_directed(&mesh.faces[g], a, b) {
                        mesh.faces[g].swap(1, 2);
                    }
                    done[g] = true;
                    queue.push_back(g);
                }
            }
        }
    }
    if mesh.signed_volume() < 0.0 {
        for f in mesh.faces.iter_mut() {
            f.swap(1, 2);
        }
    }
}

/// Outcome of the five closedness checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatertightReport {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub boundary_edges: usize,
    pub nonmanifold_edges: usize,
    /// Every edge in exactly two faces.
    pub manifold: bool,
    pub components: usize,
    pub single_component: bool,
    pub euler_characteristic: i64,
    pub euler_ok: bool,
    /// Every shared edge traversed once in each direction.
    pub consistent_orientation: bool,
    pub signed_volume: f64,
    pub positive_volume: bool,
    pub watertight: bool,
}

pub fn validate_watertight(mesh: &TriMesh) -> WatertightReport {
    let counts = mesh.edge_counts();
    let boundary = counts.values().filter(|&&n| n == 1).count();
    let nonmanifold = counts.values().filter(|&&n| n > 2).count();
    let mut directed: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    let consistent = counts.iter().all(|(&(a, b), &n)| {
        n != 2 || (directed.get(&(a, b)) == Some(&1) && directed.get(&(b, a)) == Some(&1))
    });
    let components = mesh.face_components().len();
    let chi = mesh.euler_characteristic();
    let vol = mesh.signed_volume();
    let manifold = boundary == 0 && nonmanifold == 0 && !mesh.faces.is_empty();
    let single = components == 1;
    let euler_ok = chi == 2;
    let positive = vol > 0.0;
    WatertightReport {
        vertices: mesh.vertices.len(),
        edges: counts.len(),
        faces: mesh.faces.len(),
        boundary_edges: boundary,
        nonmanifold_edges: nonmanifold,
        manifold,
        components,
        single_component: single,
        euler_characteristic: chi,
        euler_ok,
        consistent_orientation: consistent,
        signed_volume: vol,
        positive_volume: positive,
        watertight: manifold && single && euler_ok && consistent && positive,
    }
}

/// Closed axis-aligned box with outward winding.
pub fn cube_mesh(min: Vec3, max: Vec3) -> TriMesh {
    let v: Vec<Vec3> = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { min[0] } else { max[0] },
                if i & 2 == 0 { min[1] } else { max[1] },
                if i & 4 == 0 { min[2] } else { max[2] },
            ]
        })
        .collect();
    let faces = vec![
        [0, 2, 1], [1, 2, 3], // z min
        [4, 5, 6], [5, 7, 6], // z max
        [0, 1, 4], [1, 5, 4], // y min
        [2, 6, 3], [3, 6, 7], // y max
        [0, 4, 2], [2, 4, 6], // x min
        [1, 3, 5], [3, 7, 5], // x max
    ];
    TriMesh {
        vertices: v,
        faces,
        colors: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> TriMesh {
        TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    fn quad() -> TriMesh {
        // camera looks along +z; winding faces the camera
        TriMesh::new(
            vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]],
            vec![[0, 3, 1], [1, 3, 2]],
        )
        .unwrap()
    }

    fn triangle() -> TriMesh {
        TriMesh::new(
            vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.2], [0.0, 1.0, 0.9]],
            vec![[0, 2, 1]],
        )
        .unwrap()
    }

    fn cfg(t: f64) -> CloseConfig {
        CloseConfig {
            thickness: t,
            weld_epsilon: 1e-9,
        }
    }

    #[test]
    fn boundary_edge_counts() {
        assert!(boundary_edges(&tetra()).unwrap().is_empty());
        assert_eq!(boundary_edges(&triangle()).unwrap().len(), 3);
        assert_eq!(boundary_edges(&quad()).unwrap(), vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn three_faces_on_an_edge_is_rejected() {
        let m = TriMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]],
        )
        .unwrap();
        assert!(matches!(boundary_edges(&m), Err(Error::NonManifoldEdge(0, 1))));
    }

    #[test]
    fn loop_ordering() {
        let l = order_boundary_loop(&[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        assert_eq!(l.vertices, vec![0, 1, 2, 3, 0]);
        let t = order_boundary_loop(&[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(t.vertices.len(), 4);
        assert_eq!(t.vertices[0], t.vertices[3]);
        let two = [(0, 1), (1, 2), (2, 3), (0, 3), (4, 5), (5, 6), (6, 7), (4, 7)];
        assert!(matches!(order_boundary_loop(&two), Err(Error::MultipleHoles(2))));
        assert!(matches!(order_boundary_loop(&[(0, 1), (1, 2)]), Err(Error::NotACycle)));
    }

    #[test]
    fn quad_hand_trace() {
        let q = quad();
        let c = close_mesh(&q, &cfg(2.0)).unwrap();
        assert_eq!(c.vertices.len(), 9);
        assert_eq!(c.faces.len(), 14);
        assert_eq!(c.edge_counts().len(), 21);
        assert_eq!(c.euler_characteristic(), 2);
        assert_eq!(&c.vertices[..4], &q.vertices[..]);
        assert_eq!(&c.faces[..2], &q.faces[..]);
        assert!(c.vertices[4..].iter().all(|v| v[2] == 2.0));
        assert_eq!(c.vertices[4], [0.5, 0.5, 2.0]);
        let r = validate_watertight(&c);
        assert!(r.watertight, "{r:?}");
        assert!((r.signed_volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_hand_trace() {
        let c = close_mesh(&triangle(), &cfg(1.5)).unwrap();
        assert_eq!(c.vertices.len(), 7);
        assert_eq!(c.faces.len(), 10);
        assert_eq!(c.edge_counts().len(), 15);
        assert_eq!(c.euler_characteristic(), 2);
        assert!(validate_watertight(&c).watertight);
    }

    #[test]
    fn closing_errors() {
        assert!(matches!(close_mesh(&tetra(), &cfg(5.0)), Err(Error::NoBoundary)));
        assert!(matches!(
            close_mesh(&quad(), &cfg(1.0)),
            Err(Error::ThicknessTooSmall { .. })
        ));
    }

    #[test]
    fn report_on_open_and_closed() {
        let t = validate_watertight(&tetra());
        assert!(t.watertight && t.euler_characteristic == 2);
        let q = validate_watertight(&quad());
        assert!(!q.watertight && !q.manifold && q.boundary_edges == 4);
        let cube = validate_watertight(&cube_mesh([0.0; 3], [1.0; 3]));
        assert!(cube.watertight, "{cube:?}");
        assert!((cube.signed_volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orientation_repair_fixes_flipped_faces() {
        let mut m = cube_mesh([0.0; 3], [2.0; 3]);
        m.faces[3].swap(0, 1);
        m.faces[7].swap(1, 2);
        assert!(!validate_watertight(&m).consistent_orientation);
        orient_faces(&mut m);
        let r = validate_watertight(&m);
        assert!(r.watertight && (r.signed_volume - 8.0).abs() < 1e-12);
        // fully inverted input flips back
        let mut inv = cube_mesh([0.0; 3], [1.0; 3]);
        inv.faces.iter_mut().for_each(|f| f.swap(0, 1));
        orient_faces(&mut inv);
        assert!(inv.signed_volume() > 0.0);
    }

    #[test]
    fn components_split() {
        let mut a = quad();
        let b = tetra();
        let off = a.vertices.len() as u32;
        a.vertices.extend(b.vertices.iter().map(|v| [v[0] + 5.0, v[1], v[2]]));
        a.faces.extend(b.faces.iter().map(|f| f.map(|i| i + off)));
        assert_eq!(a.face_components().len(), 2);
        let parts = a.split_components();
        assert_eq!(parts[0].vertices.len(), 4);
        assert_eq!(parts[1].faces.len(), 4);
        assert!(validate_watertight(&parts[1]).watertight);
    }

    #[test]
    fn invalid_meshes() {
        assert!(matches!(
            TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 7]]),
            Err(Error::IndexOutOfRange { index: 7, .. })
        ));
        assert!(matches!(
            TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 1]]),
            Err(Error::DegenerateFace(0))
        ));
    }
}
