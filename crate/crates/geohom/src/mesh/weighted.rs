//! Regular (weighted Delaunay) triangulations via convex-hull lifting.
//!
//! Points are lifted to heights s_i = (x_i^2 + y_i^2 - w_i) / 2 and the lower
//! convex hull is traced by frontier pivoting with exact orientation
//! predicates: starting from the 2D hull edges, each directed edge finds the
//! point whose lifted plane is lowest. Ties (exactly coplanar candidates)
//! form a flat facet which is fan-triangulated from its lowest-index vertex,
//! so the output is deterministic. Lifted points that never appear on the
//! lower hull are reported as hidden; this includes points in the relative
//! interior of a flat facet, which can only occur when the generating
//! function is not strictly convex.

use std::collections::{HashSet, VecDeque};

use super::{build_mesh, Mesh2D, MeshError};
use crate::fields::SField;
use crate::geom::v2;
use crate::predicates::{orient2d, orient3d};
use crate::Point2;

/// Points with per-point scalar weights (length squared units).
#[derive(Clone, Debug)]
pub struct WeightedPointSet {
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
}

impl WeightedPointSet {
    pub fn unweighted(points: Vec<Point2>) -> Self {
        let weights = vec![0.0; points.len()];
        WeightedPointSet { points, weights }
    }

    /// Weights w_i = x_i^2 + y_i^2 - 2 s_i representing the lift to s.
    pub fn from_scalar_lift(points: Vec<Point2>, s: &[f64]) -> Self {
        let weights = points
            .iter()
            .zip(s)
            .map(|(p, &si)| p.x * p.x + p.y * p.y - 2.0 * si)
            .collect();
        WeightedPointSet { points, weights }
    }

    /// Lift height of point i on the hull construction.
    pub fn lift(&self, i: usize) -> f64 {
        let p = self.points[i];
        0.5 * (p.x * p.x + p.y * p.y - self.weights[i])
    }
}

/// Output of the regular-triangulation construction.
pub struct RegularTriangulation {
    pub mesh: Mesh2D,
    /// Input index of each mesh vertex.
    pub vertex_map: Vec<usize>,
    /// Input indices of points excluded from the triangulation.
    pub hidden: Vec<usize>,
    /// Mesh-index pairs of edges interior to flat (coplanar) facets; the
    /// triangulation is non-unique exactly when this is nonempty.
    pub flat_edges: Vec<(usize, usize)>,
}

impl RegularTriangulation {
    pub fn is_unique(&self) -> bool {
        self.flat_edges.is_empty()
    }
}

/// Regular triangulation of a weighted point set.
pub fn weighted_delaunay(pts: &WeightedPointSet) -> Result<RegularTriangulation, MeshError> {
    let n = pts.points.len();
    if n < 3 {
        return Err(MeshError::TooFewPoints { needed: 3, got: n });
    }
    for (i, p) in pts.points.iter().enumerate() {
        if !p.x.is_finite() || !p.y.is_finite() || !pts.weights[i].is_finite() {
            return Err(MeshError::IndexOutOfRange { idx: i, len: n });
        }
    }
    {
        let mut sorted: Vec<usize> = (0..n).collect();
        sorted.sort_by(|&a, &b| {
            (pts.points[a].x, pts.points[a].y)
                .partial_cmp(&(pts.points[b].x, pts.points[b].y))
                .unwrap()
        });
        for w in sorted.windows(2) {
            if pts.points[w[0]] == pts.points[w[1]] {
                return Err(MeshError::DuplicatePoint { idx: w[1].max(w[0]) });
            }
        }
    }

    let p2 = |i: usize| -> [f64; 2] { [pts.points[i].x, pts.points[i].y] };
    let p3 = |i: usize| -> [f64; 3] { [pts.points[i].x, pts.points[i].y, pts.lift(i)] };

    // 2D hull with collinear boundary points kept in cyclic order
    let hull = convex_hull_with_collinear(&pts.points)?;

    // The initial frontier follows the lower hull's boundary. Across a
    // maximal collinear run of boundary points the lower-hull edges are the
    // 1D convex minorant of the lifted heights along the run; run points
    // above the minorant are hidden.
    let mut claimed: HashSet<(usize, usize)> = HashSet::new();
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    let mut boundary_hidden: HashSet<usize> = HashSet::new();
    {
        let m = hull.len();
        let is_corner = |w: usize| {
            let prev = hull[(w + m - 1) % m];
            let cur = hull[w];
            let next = hull[(w + 1) % m];
            orient2d(p2(prev), p2(cur), p2(next)) != 0.0
        };
        let first_corner = (0..m)
            .find(|&w| is_corner(w))
            .ok_or(MeshError::CollinearInput)?;
        let mut run: Vec<usize> = vec![hull[first_corner]];
        for step in 1..=m {
            let w = (first_corner + step) % m;
            run.push(hull[w]);
            if is_corner(w) {
                let chain_edges = lower_chain_edges(&run, pts);
                let mut on_chain: HashSet<usize> = HashSet::new();
                for &(a, b) in &chain_edges {
                    on_chain.insert(a);
                    on_chain.insert(b);
                }
                for &r in &run {
                    if !on_chain.contains(&r) {
                        boundary_hidden.insert(r);
                    }
                }
                for e in chain_edges {
                    queue.push_back(e);
                }
                run = vec![hull[w]];
            }
        }
    }

    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut flat_pairs: Vec<(usize, usize)> = Vec::new();

    let claim_triangle =
        |t: [usize; 3], claimed: &mut HashSet<(usize, usize)>, queue: &mut VecDeque<(usize, usize)>| {
            for v in 0..3 {
                let (p, q) = (t[v], t[(v + 1) % 3]);
                claimed.insert((p, q));
            }
            for v in 0..3 {
                let (p, q) = (t[v], t[(v + 1) % 3]);
                if !claimed.contains(&(q, p)) {
                    queue.push_back((q, p));
                }
            }
        };

    while let Some((a, b)) = queue.pop_front() {
        if claimed.contains(&(a, b)) {
            continue;
        }
        // find the lowest supporting plane over this edge
        let mut best: Option<usize> = None;
        for d in 0..n {
            if d == a || d == b || boundary_hidden.contains(&d) {
                continue;
            }
            if orient2d(p2(a), p2(b), p2(d)) <= 0.0 {
                continue;
            }
            match best {
                None => best = Some(d),
                Some(c) => {
                    if orient3d(p3(a), p3(b), p3(c), p3(d)) > 0.0 {
                        best = Some(d);
                    }
                }
            }
        }
        let Some(c) = best else {
            continue; // nothing left of a 2D hull edge
        };
        // collect exact ties: the flat facet through (a, b, c)
        let mut coplanar: Vec<usize> = vec![c];
        for d in 0..n {
            if d == a || d == b || d == c || boundary_hidden.contains(&d) {
                continue;
            }
            if orient2d(p2(a), p2(b), p2(d)) <= 0.0 {
                continue;
            }
            if orient3d(p3(a), p3(b), p3(c), p3(d)) == 0.0 {
                coplanar.push(d);
            }
        }
        if coplanar.len() == 1 {
            claim_triangle([a, b, c], &mut claimed, &mut queue);
            triangles.push([a, b, c]);
            continue;
        }
        // flat facet: fan from the lowest-index hull vertex of the facet
        let mut facet: Vec<usize> = coplanar;
        facet.push(a);
        facet.push(b);
        facet.sort_unstable();
        facet.dedup();
        let facet_pts: Vec<Point2> = facet.iter().map(|&i| pts.points[i]).collect();
        let fhull = convex_hull_ccw(&facet_pts)?;
        let fhull: Vec<usize> = fhull.into_iter().map(|k| facet[k]).collect();
        let r_pos = fhull
            .iter()
            .enumerate()
            .min_by_key(|(_, &v)| v)
            .map(|(pos, _)| pos)
            .unwrap();
        let m = fhull.len();
        let r = fhull[r_pos];
        for w in 0..m {
            let (u, vv) = (fhull[(r_pos + w) % m], fhull[(r_pos + w + 1) % m]);
            if u == r || vv == r {
                continue;
            }
            claim_triangle([r, u, vv], &mut claimed, &mut queue);
            triangles.push([r, u, vv]);
            if w + 2 < m {
                // internal fan diagonal (r, vv) sits inside the flat facet
                flat_pairs.push((r.min(vv), r.max(vv)));
            }
        }
    }

    // compress to the used points, preserving input order
    let mut used = vec![false; n];
    for t in &triangles {
        for &v in t {
            used[v] = true;
        }
    }
    let mut vertex_map = Vec::new();
    let mut new_id = vec![usize::MAX; n];
    for i in 0..n {
        if used[i] {
            new_id[i] = vertex_map.len();
            vertex_map.push(i);
        }
    }
    let hidden: Vec<usize> = (0..n).filter(|&i| !used[i]).collect();
    let tris: Vec<[usize; 3]> = triangles
        .iter()
        .map(|t| [new_id[t[0]], new_id[t[1]], new_id[t[2]]])
        .collect();
    let verts: Vec<Point2> = vertex_map.iter().map(|&i| pts.points[i]).collect();
    let mesh = build_mesh(verts, tris)?;
    let flat_edges = flat_pairs
        .into_iter()
        .map(|(a, b)| {
            let (a, b) = (new_id[a], new_id[b]);
            (a.min(b), a.max(b))
        })
        .collect();
    Ok(RegularTriangulation {
        mesh,
        vertex_map,
        hidden,
        flat_edges,
    })
}

/// Triangulation adapted to a convex potential: weighted Delaunay with the
/// lift heights equal to s sampled at the points, so every hinge of the
/// output is convex or flat and all hinge conductivities are nonnegative.
pub fn q_adapted_triangulation(points: &[Point2], s: &SField) -> Result<RegularTriangulation, MeshError> {
    let values: Vec<f64> = points.iter().map(|&p| s.value(p)).collect();
    let pts = WeightedPointSet::from_scalar_lift(points.to_vec(), &values);
    weighted_delaunay(&pts)
}

/// Frontier edges along a collinear run of boundary points: consecutive
/// pairs of the lower convex minorant of (arc position, lift height).
fn lower_chain_edges(run: &[usize], pts: &WeightedPointSet) -> Vec<(usize, usize)> {
    if run.len() == 2 {
        return vec![(run[0], run[1])];
    }
    let origin = pts.points[run[0]];
    let dir = pts.points[*run.last().unwrap()] - origin;
    let dn = dir.norm();
    let t_of = |i: usize| (pts.points[i] - origin).dot(dir) / dn;
    // monotone lower chain in (t, z)
    let mut chain: Vec<usize> = Vec::with_capacity(run.len());
    for &i in run {
        while chain.len() >= 2 {
            let a = chain[chain.len() - 2];
            let b = chain[chain.len() - 1];
            // keep b only if it lies strictly below the chord a->i
            let (ta, tb, ti) = (t_of(a), t_of(b), t_of(i));
            let za = pts.lift(a);
            let zb = pts.lift(b);
            let zi = pts.lift(i);
            let cross = (tb - ta) * (zi - za) - (ti - ta) * (zb - za);
            if cross > 0.0 {
                break;
            }
            chain.pop();
        }
        chain.push(i);
    }
    chain.windows(2).map(|w| (w[0], w[1])).collect()
}

/// 2D convex hull in counter-clockwise order keeping collinear boundary
/// points (monotone chain with exact orientation tests).
fn convex_hull_with_collinear(points: &[Point2]) -> Result<Vec<usize>, MeshError> {
    let n = points.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        (points[a].x, points[a].y)
            .partial_cmp(&(points[b].x, points[b].y))
            .unwrap()
    });
    let o2 = |a: usize, b: usize, c: usize| {
        orient2d(
            [points[a].x, points[a].y],
            [points[b].x, points[b].y],
            [points[c].x, points[c].y],
        )
    };
    let mut lower: Vec<usize> = Vec::new();
    for &p in &idx {
        while lower.len() >= 2 && o2(lower[lower.len() - 2], lower[lower.len() - 1], p) < 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<usize> = Vec::new();
    for &p in idx.iter().rev() {
        while upper.len() >= 2 && o2(upper[upper.len() - 2], upper[upper.len() - 1], p) < 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        return Err(MeshError::CollinearInput);
    }
    // fully collinear input shows as a degenerate two-sided cycle
    let a = lower[0];
    if lower
        .iter()
        .all(|&b| lower.iter().all(|&c| o2(a, b, c) == 0.0))
    {
        return Err(MeshError::CollinearInput);
    }
    Ok(lower)
}

/// 2D convex hull in counter-clockwise order (monotone chain, exact
/// orientation tests); collinear points on the hull boundary are dropped.
fn convex_hull_ccw(points: &[Point2]) -> Result<Vec<usize>, MeshError> {
    let n = points.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        (points[a].x, points[a].y)
            .partial_cmp(&(points[b].x, points[b].y))
            .unwrap()
    });
    let o2 = |a: usize, b: usize, c: usize| {
        orient2d(
            [points[a].x, points[a].y],
            [points[b].x, points[b].y],
            [points[c].x, points[c].y],
        )
    };
    let mut lower: Vec<usize> = Vec::new();
    for &p in &idx {
        while lower.len() >= 2 && o2(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<usize> = Vec::new();
    for &p in idx.iter().rev() {
        while upper.len() >= 2 && o2(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        return Err(MeshError::CollinearInput);
    }
    Ok(lower)
}

/// Hull helper shared with tests.
pub(crate) fn convex_hull_indices(points: &[Point2]) -> Result<Vec<usize>, MeshError> {
    convex_hull_ccw(points)
}

#[allow(dead_code)]
fn debug_point(p: Point2) -> Point2 {
    v2(p.x, p.y)
}
