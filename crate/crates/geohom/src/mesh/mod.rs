//! Triangulation kernel: incidence, hinge geometry, refinement, ghost
//! layers, and the weighted-Delaunay constructions.

mod delaunay;
mod weighted;

pub use delaunay::delaunay_triangulation;
pub use weighted::{
    q_adapted_triangulation, weighted_delaunay, RegularTriangulation, WeightedPointSet,
};

/// 2D convex hull of a point set, counter-clockwise, collinear boundary
/// points dropped.
pub fn convex_hull_points(points: &[Point2]) -> Result<Vec<Point2>, MeshError> {
    let idx = weighted::convex_hull_indices(points)?;
    Ok(idx.into_iter().map(|i| points[i]).collect())
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{signed_area2, reflect_across, v2};
use crate::Point2;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("triangle {tri} is degenerate (signed area {area:.3e})")]
    DegenerateTriangle { tri: usize, area: f64 },
    #[error("duplicate triangle {tri} over vertices {verts:?}")]
    DuplicateTriangle { tri: usize, verts: [usize; 3] },
    #[error("edge ({a}, {b}) has more than two incident triangles")]
    NonManifoldEdge { a: usize, b: usize },
    #[error("vertex index {idx} out of range (mesh has {len} vertices)")]
    IndexOutOfRange { idx: usize, len: usize },
    #[error("edge ({a}, {b}) is a boundary edge")]
    BoundaryEdge { a: usize, b: usize },
    #[error("edge ({a}, {b}) does not exist")]
    NoSuchEdge { a: usize, b: usize },
    #[error("input points are collinear")]
    CollinearInput,
    #[error("expected at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("duplicate point at index {idx}")]
    DuplicatePoint { idx: usize },
    #[error("mesh boundary is not a single simple closed polygon")]
    BoundaryNotSimple,
}

/// Undirected edge; `a < b`, and `tris` lists the incident triangles.
#[derive(Clone, Debug)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub tris: [Option<usize>; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.tris[1].is_none()
    }
    pub fn other(&self, v: usize) -> usize {
        if v == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// Immutable 2D triangulation with full incidence.
#[derive(Clone, Debug)]
pub struct Mesh2D {
    vertices: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    edge_ids: HashMap<(usize, usize), usize>,
    tri_edges: Vec<[usize; 3]>, // edge opposite local vertex v
    tri_neighbors: Vec<[Option<usize>; 3]>,
    vertex_tris: Vec<Vec<usize>>,
    vertex_boundary: Vec<bool>,
    ghost: Vec<bool>,
}

/// All angle/area data of an interior-edge hinge, see the four-vertex
/// configuration around edge (i, j) with opposite vertices k and l.
#[derive(Clone, Copy, Debug)]
pub struct HingeGeometry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub l: usize,
    /// cot of the angle at j in triangle (i,j,k)
    pub cot_ijk: f64,
    /// cot of the angle at j in triangle (i,j,l)
    pub cot_ijl: f64,
    /// cot of the angle at i in triangle (i,j,k)
    pub cot_jik: f64,
    /// cot of the angle at i in triangle (i,j,l)
    pub cot_jil: f64,
    /// cot of the angle at k (opposite the edge) in triangle (i,j,k)
    pub cot_ikj: f64,
    /// cot of the angle at l (opposite the edge) in triangle (i,j,l)
    pub cot_ilj: f64,
    pub area_ijk: f64,
    pub area_ijl: f64,
    pub edge_len: f64,
}

/// cot of the interior angle at `at` in triangle (at, p, q).
pub fn cot_angle(at: Point2, p: Point2, q: Point2) -> f64 {
    let u = p - at;
    let w = q - at;
    u.dot(w) / u.cross(w).abs()
}

/// Sparse prolongation: coarse hat functions as combinations of fine hats.
#[derive(Clone, Debug)]
pub struct Prolongation {
    pub coarse_n: usize,
    pub fine_n: usize,
    /// (coarse vertex, fine vertex, coefficient); sorted, no duplicates
    pub entries: Vec<(usize, usize, f64)>,
}

impl Prolongation {
    pub fn identity(n: usize) -> Self {
        Prolongation {
            coarse_n: n,
            fine_n: n,
            entries: (0..n).map(|i| (i, i, 1.0)).collect(),
        }
    }

    /// Compose with a finer-level prolongation: self maps coarse->mid,
    /// `next` maps mid->fine; the result maps coarse->fine.
    pub fn compose(&self, next: &Prolongation) -> Prolongation {
        assert_eq!(self.fine_n, next.coarse_n);
        let mut by_mid: Vec<Vec<(usize, f64)>> = vec![Vec::new(); next.coarse_n];
        for &(m, f, w) in &next.entries {
            by_mid[m].push((f, w));
        }
        let mut acc: HashMap<(usize, usize), f64> = HashMap::new();
        for &(c, m, w1) in &self.entries {
            for &(f, w2) in &by_mid[m] {
                *acc.entry((c, f)).or_insert(0.0) += w1 * w2;
            }
        }
        let mut entries: Vec<(usize, usize, f64)> =
            acc.into_iter().map(|((c, f), w)| (c, f, w)).collect();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Prolongation {
            coarse_n: self.coarse_n,
            fine_n: next.fine_n,
            entries,
        }
    }

    /// Apply to per-coarse-vertex values, producing fine-vertex values.
    pub fn interpolate(&self, coarse: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.fine_n];
        for &(c, f, w) in &self.entries {
            out[f] += w * coarse[c];
        }
        out
    }
}

/// Validate connectivity and build full incidence.
pub fn build_mesh(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>) -> Result<Mesh2D, MeshError> {
    build_mesh_with_ghosts(vertices, triangles, Vec::new())
}

pub fn build_mesh_with_ghosts(
    vertices: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    ghost_vertices: Vec<usize>,
) -> Result<Mesh2D, MeshError> {
    let nv = vertices.len();
    let mut seen_tris: HashMap<[usize; 3], usize> = HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for &v in tri {
            if v >= nv {
                return Err(MeshError::IndexOutOfRange { idx: v, len: nv });
            }
        }
        let area = 0.5 * signed_area2(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
        if !(area > 0.0) {
            return Err(MeshError::DegenerateTriangle { tri: t, area });
        }
        let mut key = *tri;
        key.sort_unstable();
        if key[0] == key[1] || key[1] == key[2] {
            return Err(MeshError::DegenerateTriangle { tri: t, area: 0.0 });
        }
        if seen_tris.insert(key, t).is_some() {
            return Err(MeshError::DuplicateTriangle { tri: t, verts: key });
        }
    }
    for &g in &ghost_vertices {
        if g >= nv {
            return Err(MeshError::IndexOutOfRange { idx: g, len: nv });
        }
    }

    let mut edges: Vec<Edge> = Vec::new();
    let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut tri_edges = vec![[usize::MAX; 3]; triangles.len()];
    for (t, tri) in triangles.iter().enumerate() {
        for v in 0..3 {
            let (p, q) = (tri[(v + 1) % 3], tri[(v + 2) % 3]);
            let key = (p.min(q), p.max(q));
            let id = *edge_ids.entry(key).or_insert_with(|| {
                edges.push(Edge {
                    a: key.0,
                    b: key.1,
                    tris: [None, None],
                });
                edges.len() - 1
            });
            let e = &mut edges[id];
            if e.tris[0].is_none() {
                e.tris[0] = Some(t);
            } else if e.tris[1].is_none() {
                e.tris[1] = Some(t);
            } else {
                return Err(MeshError::NonManifoldEdge { a: e.a, b: e.b });
            }
            tri_edges[t][v] = id;
        }
    }

    let mut tri_neighbors = vec![[None; 3]; triangles.len()];
    for (t, te) in tri_edges.iter().enumerate() {
        for v in 0..3 {
            let e = &edges[te[v]];
            tri_neighbors[t][v] = match e.tris {
                [Some(a), Some(b)] => Some(if a == t { b } else { a }),
                _ => None,
            };
        }
    }

    let mut vertex_boundary = vec![false; nv];
    for e in &edges {
        if e.is_boundary() {
            vertex_boundary[e.a] = true;
            vertex_boundary[e.b] = true;
        }
    }

    let mut vertex_tris = vec![Vec::new(); nv];
    for (t, tri) in triangles.iter().enumerate() {
        for &v in tri {
            vertex_tris[v].push(t);
        }
    }

    let mut ghost = vec![false; nv];
    for g in ghost_vertices {
        ghost[g] = true;
    }

    Ok(Mesh2D {
        vertices,
        triangles,
        edges,
        edge_ids,
        tri_edges,
        tri_neighbors,
        vertex_tris,
        vertex_boundary,
        ghost,
    })
}

impl Mesh2D {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn vertex(&self, i: usize) -> Point2 {
        self.vertices[i]
    }
    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }
    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }
    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_ids.get(&(a.min(b), a.max(b))).copied()
    }
    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.vertex_boundary[v]
    }
    pub fn is_ghost(&self, v: usize) -> bool {
        self.ghost[v]
    }
    pub fn ghost_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&v| self.ghost[v]).collect()
    }
    pub fn has_ghosts(&self) -> bool {
        self.ghost.iter().any(|&g| g)
    }
    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.vertex_tris[v]
    }
    pub fn tri_edge_ids(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }
    pub fn tri_neighbors(&self, t: usize) -> [Option<usize>; 3] {
        self.tri_neighbors[t]
    }

    /// Interior vertices: not on the boundary (ghosts never count as interior
    /// of the extended mesh; they are boundary by construction).
    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices())
            .filter(|&v| !self.vertex_boundary[v])
            .collect()
    }

    pub fn interior_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_boundary())
    }

    pub fn tri_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * signed_area2(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn tri_centroid(&self, t: usize) -> Point2 {
        let [a, b, c] = self.triangles[t];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]).scale(1.0 / 3.0)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.tri_area(t)).sum()
    }

    pub fn diameter(&self) -> f64 {
        let (mut lo, mut hi) = (v2(f64::MAX, f64::MAX), v2(f64::MIN, f64::MIN));
        for p in &self.vertices {
            lo = v2(lo.x.min(p.x), lo.y.min(p.y));
            hi = v2(hi.x.max(p.x), hi.y.max(p.y));
        }
        (hi - lo).norm()
    }

    /// Gradient of the PL hat function of local vertex `v` on triangle `t`
    /// (constant per triangle).
    pub fn hat_gradient(&self, t: usize, v: usize) -> Point2 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let twice_area = signed_area2(pa, pb, pc);
        let opposite = match v {
            0 => (pb, pc),
            1 => (pc, pa),
            _ => (pa, pb),
        };
        // grad of hat at v is perpendicular to the opposite edge
        (opposite.1 - opposite.0).perp().scale(1.0 / twice_area)
    }

    /// Hinge data for an interior edge given by its id.
    pub fn hinge(&self, edge_id: usize) -> Result<HingeGeometry, MeshError> {
        let e = &self.edges[edge_id];
        let (t0, t1) = match e.tris {
            [Some(a), Some(b)] => (a, b),
            _ => return Err(MeshError::BoundaryEdge { a: e.a, b: e.b }),
        };
        let (i, j) = (e.a, e.b);
        let opposite = |t: usize| {
            self.triangles[t]
                .iter()
                .copied()
                .find(|&v| v != i && v != j)
                .unwrap()
        };
        let (k, l) = (opposite(t0), opposite(t1));
        let (pi, pj, pk, pl) = (
            self.vertices[i],
            self.vertices[j],
            self.vertices[k],
            self.vertices[l],
        );
        Ok(HingeGeometry {
            i,
            j,
            k,
            l,
            cot_ijk: cot_angle(pj, pi, pk),
            cot_ijl: cot_angle(pj, pi, pl),
            cot_jik: cot_angle(pi, pj, pk),
            cot_jil: cot_angle(pi, pj, pl),
            cot_ikj: cot_angle(pk, pi, pj),
            cot_ilj: cot_angle(pl, pi, pj),
            area_ijk: 0.5 * signed_area2(pi, pj, pk).abs(),
            area_ijl: 0.5 * signed_area2(pi, pj, pl).abs(),
            edge_len: (pj - pi).norm(),
        })
    }

    /// Hinge data for the interior edge (a, b).
    pub fn hinge_of(&self, a: usize, b: usize) -> Result<HingeGeometry, MeshError> {
        let id = self
            .edge_id(a, b)
            .ok_or(MeshError::NoSuchEdge { a, b })?;
        self.hinge(id)
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point2) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let total = signed_area2(pa, pb, pc);
        [
            signed_area2(p, pb, pc) / total,
            signed_area2(pa, p, pc) / total,
            signed_area2(pa, pb, p) / total,
        ]
    }

    /// Locate the triangle containing `p` by walking from `hint`; falls back
    /// to an exhaustive scan for robustness near the boundary.
    pub fn locate(&self, p: Point2, hint: usize) -> Option<(usize, [f64; 3])> {
        let mut t = hint.min(self.num_triangles().saturating_sub(1));
        let mut steps = 0usize;
        let max_steps = 4 * self.num_triangles() + 16;
        loop {
            let bc = self.barycentric(t, p);
            let (worst, &min) = bc
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            if min >= -1e-12 {
                return Some((t, bc));
            }
            match self.tri_neighbors[t][worst] {
                Some(next) => {
                    t = next;
                }
                None => break,
            }
            steps += 1;
            if steps > max_steps {
                break;
            }
        }
        // exhaustive fallback with a tolerant test
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for t in 0..self.num_triangles() {
            let bc = self.barycentric(t, p);
            let min = bc.iter().cloned().fold(f64::INFINITY, f64::min);
            if min >= -1e-9 {
                return Some((t, bc));
            }
            if best.as_ref().map_or(true, |(_, _, m)| min > *m) {
                best = Some((t, bc, min));
            }
        }
        best.filter(|(_, _, m)| *m >= -1e-6).map(|(t, bc, _)| (t, bc))
    }

    /// Evaluate the PL interpolant of per-vertex `values` at `p`.
    pub fn interpolate(&self, values: &[f64], p: Point2, hint: usize) -> Option<f64> {
        let (t, bc) = self.locate(p, hint)?;
        let [a, b, c] = self.triangles[t];
        Some(bc[0] * values[a] + bc[1] * values[b] + bc[2] * values[c])
    }

    /// Uniform 1-to-4 midpoint refinement; returns the refined mesh and the
    /// coefficients writing each coarse hat as a combination of fine hats.
    pub fn refine_once(&self) -> (Mesh2D, Prolongation) {
        let nv = self.num_vertices();
        let mut vertices = self.vertices.clone();
        let mut midpoint = vec![usize::MAX; self.num_edges()];
        for (id, e) in self.edges.iter().enumerate() {
            let m = (self.vertices[e.a] + self.vertices[e.b]).scale(0.5);
            midpoint[id] = vertices.len();
            vertices.push(m);
        }
        let mut triangles = Vec::with_capacity(4 * self.num_triangles());
        for t in 0..self.num_triangles() {
            let [a, b, c] = self.triangles[t];
            let e = self.tri_edges[t];
            // edge e[v] is opposite local vertex v
            let (mab, mbc, mca) = (midpoint[e[2]], midpoint[e[0]], midpoint[e[1]]);
            triangles.push([a, mab, mca]);
            triangles.push([b, mbc, mab]);
            triangles.push([c, mca, mbc]);
            triangles.push([mab, mbc, mca]);
        }
        let ghosts = self.ghost_vertices();
        let fine =
            build_mesh_with_ghosts(vertices, triangles, ghosts).expect("refinement is valid");
        let mut entries = Vec::with_capacity(nv + 2 * self.num_edges());
        for i in 0..nv {
            entries.push((i, i, 1.0));
        }
        for (id, e) in self.edges.iter().enumerate() {
            entries.push((e.a, midpoint[id], 0.5));
            entries.push((e.b, midpoint[id], 0.5));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let prol = Prolongation {
            coarse_n: nv,
            fine_n: fine.num_vertices(),
            entries,
        };
        (fine, prol)
    }

    /// `levels` rounds of uniform refinement with the composed prolongation.
    pub fn refine(&self, levels: usize) -> (Mesh2D, Prolongation) {
        assert!(levels >= 1, "levels must be >= 1");
        let (mut mesh, mut prol) = self.refine_once();
        for _ in 1..levels {
            let (finer, p) = mesh.refine_once();
            prol = prol.compose(&p);
            mesh = finer;
        }
        (mesh, prol)
    }

    /// Boundary edges ordered into a closed loop; error if the boundary is
    /// not a single simple cycle.
    pub fn boundary_loop(&self) -> Result<Vec<usize>, MeshError> {
        let mut next: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut count = 0usize;
        for e in &self.edges {
            if e.is_boundary() {
                next.entry(e.a).or_default().push(e.b);
                next.entry(e.b).or_default().push(e.a);
                count += 1;
            }
        }
        if count == 0 {
            return Err(MeshError::BoundaryNotSimple);
        }
        for (_, n) in next.iter() {
            if n.len() != 2 {
                return Err(MeshError::BoundaryNotSimple);
            }
        }
        let start = *next.keys().min().unwrap();
        let mut cycle = vec![start];
        let mut prev = start;
        let mut cur = next[&start][0].min(next[&start][1]);
        while cur != start {
            cycle.push(cur);
            let n = &next[&cur];
            let nxt = if n[0] == prev { n[1] } else { n[0] };
            prev = cur;
            cur = nxt;
            if cycle.len() > count {
                return Err(MeshError::BoundaryNotSimple);
            }
        }
        if cycle.len() != count {
            return Err(MeshError::BoundaryNotSimple);
        }
        Ok(cycle)
    }

    /// Extend the mesh by one ghost vertex per boundary edge, placed by
    /// reflecting the opposite vertex of the edge's triangle across the edge.
    pub fn add_ghost_layer(&self) -> Result<Mesh2D, MeshError> {
        self.boundary_loop()?;
        let mut vertices = self.vertices.clone();
        let mut triangles = self.triangles.clone();
        let mut ghosts = self.ghost_vertices();
        for e in &self.edges {
            if !e.is_boundary() {
                continue;
            }
            let t = e.tris[0].unwrap();
            let opp = self.triangles[t]
                .iter()
                .copied()
                .find(|&v| v != e.a && v != e.b)
                .unwrap();
            let g = reflect_across(self.vertices[opp], self.vertices[e.a], self.vertices[e.b]);
            let gid = vertices.len();
            vertices.push(g);
            ghosts.push(gid);
            // orient the ghost triangle CCW: the parent triangle (a,b,opp)
            // appears with some orientation of (a,b); the ghost triangle uses
            // the reverse orientation of the shared edge.
            let tri = self.triangles[t];
            let (a, b) = if (tri[0] == e.a && tri[1] == e.b)
                || (tri[1] == e.a && tri[2] == e.b)
                || (tri[2] == e.a && tri[0] == e.b)
            {
                (e.a, e.b)
            } else {
                (e.b, e.a)
            };
            triangles.push([b, a, gid]);
        }
        build_mesh_with_ghosts(vertices, triangles, ghosts)
    }

    /// FNV-1a over the canonical byte representation; binds field files to
    /// the mesh they were computed on.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for p in &self.vertices {
            eat(&p.x.to_le_bytes());
            eat(&p.y.to_le_bytes());
        }
        for t in &self.triangles {
            for &v in t {
                eat(&(v as u64).to_le_bytes());
            }
        }
        for g in 0..self.num_vertices() {
            if self.ghost[g] {
                eat(&(g as u64).to_le_bytes());
            }
        }
        h
    }
}

/// Serialized form of a mesh.
#[derive(Serialize, Deserialize)]
pub struct MeshFile {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    #[serde(default)]
    pub ghost: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl MeshFile {
    pub fn from_mesh(mesh: &Mesh2D) -> Self {
        MeshFile {
            vertices: mesh.vertices().iter().map(|p| [p.x, p.y]).collect(),
            triangles: mesh.triangles().to_vec(),
            ghost: mesh.ghost_vertices(),
            meta: None,
        }
    }
    pub fn into_mesh(self) -> Result<Mesh2D, MeshError> {
        let vertices = self.vertices.iter().map(|&[x, y]| v2(x, y)).collect();
        build_mesh_with_ghosts(vertices, self.triangles, self.ghost)
    }
}

/// Structured triangulated grid over [x0, x0+w] x [y0, y0+h] with n x m cells,
/// each cell split along the diagonal toward the upper-right.
pub fn grid_mesh(x0: f64, y0: f64, w: f64, h: f64, n: usize, m: usize) -> Mesh2D {
    let mut vertices = Vec::with_capacity((n + 1) * (m + 1));
    for j in 0..=m {
        for i in 0..=n {
            vertices.push(v2(
                x0 + w * i as f64 / n as f64,
                y0 + h * j as f64 / m as f64,
            ));
        }
    }
    let vid = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * m);
    for j in 0..m {
        for i in 0..n {
            let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    build_mesh(vertices, triangles).expect("grid mesh is valid")
}

/// Unit square split by one diagonal: 4 vertices, 2 triangles.
pub fn unit_square_two_triangles() -> Mesh2D {
    grid_mesh(0.0, 0.0, 1.0, 1.0, 1, 1)
}
