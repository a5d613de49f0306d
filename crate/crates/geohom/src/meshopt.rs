//! Q-optimal meshing: alternate weighted-Delaunay reconnection with the
//! critical-point relocation of the interpolation energy
//! E_s = integral |s - s^h|.

use std::sync::Arc;

use thiserror::Error;

use crate::fields::{RasterGrid, SField};
use crate::geom::area_gradient;
use crate::la::sparse::{extreme_eigenvalues, SparseSym};
use crate::mesh::{weighted_delaunay, Mesh2D, MeshError, WeightedPointSet};
use crate::{Point2, Tensor2};

#[derive(Debug, Error)]
pub enum MeshOptError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("Hessian of s is numerically singular at point {point} (condition {cond:.3e})")]
    SingularHessian { point: usize, cond: f64 },
}

/// Whether |K_i| divides by the fan's total area or its triangle count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FanMeasure {
    Area,
    Cardinality,
}

#[derive(Clone, Debug)]
pub struct MeshOptConfig {
    pub max_iter: usize,
    /// stop when the largest relocation falls below tol * domain diameter
    pub tol: f64,
    pub fan_measure: FanMeasure,
    /// damping factor applied while the energy would increase
    pub beta: f64,
    pub max_halvings: usize,
}

impl Default for MeshOptConfig {
    fn default() -> Self {
        MeshOptConfig {
            max_iter: 200,
            tol: 1e-4,
            fan_measure: FanMeasure::Area,
            beta: 0.5,
            max_halvings: 4,
        }
    }
}

/// Optimization trace: accepted energies are non-increasing.
pub struct MeshOptResult {
    pub mesh: Arc<Mesh2D>,
    pub points: Vec<Point2>,
    pub energy_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Degree-5 seven-point triangle quadrature (barycentric points, weights
/// summing to one).
const QUAD7: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    (
        [0.059715871789770, 0.470142064105115, 0.470142064105115],
        0.132394152788506,
    ),
    (
        [0.470142064105115, 0.059715871789770, 0.470142064105115],
        0.132394152788506,
    ),
    (
        [0.470142064105115, 0.470142064105115, 0.059715871789770],
        0.132394152788506,
    ),
    (
        [0.797426985353087, 0.101286507323456, 0.101286507323456],
        0.125939180544827,
    ),
    (
        [0.101286507323456, 0.797426985353087, 0.101286507323456],
        0.125939180544827,
    ),
    (
        [0.101286507323456, 0.101286507323456, 0.797426985353087],
        0.125939180544827,
    ),
];

/// Integrate f over a triangle by the 7-point rule.
pub fn quad7<R>(pa: Point2, pb: Point2, pc: Point2, mut f: impl FnMut(Point2) -> R) -> R
where
    R: std::ops::Add<Output = R> + std::ops::Mul<f64, Output = R> + Default,
{
    let area = 0.5 * crate::geom::signed_area2(pa, pb, pc).abs();
    let mut acc = R::default();
    for (bc, w) in QUAD7 {
        let p = pa.scale(bc[0]) + pb.scale(bc[1]) + pc.scale(bc[2]);
        acc = acc + f(p) * (w * area);
    }
    acc
}

/// Interpolation energy E_s = integral |s - s^h| for the PL interpolant of
/// s at the mesh vertices.
pub fn interpolation_energy(mesh: &Mesh2D, s: &SField) -> f64 {
    let values: Vec<f64> = (0..mesh.num_vertices())
        .map(|v| s.value(mesh.vertex(v)))
        .collect();
    let mut total = 0.0;
    for t in 0..mesh.num_triangles() {
        let [a, b, c] = mesh.triangle(t);
        let (pa, pb, pc) = (mesh.vertex(a), mesh.vertex(b), mesh.vertex(c));
        let (va, vb, vc) = (values[a], values[b], values[c]);
        let area = mesh.tri_area(t);
        for (bc, w) in QUAD7 {
            let p = pa.scale(bc[0]) + pb.scale(bc[1]) + pc.scale(bc[2]);
            let interp = va * bc[0] + vb * bc[1] + vc * bc[2];
            total += w * area * (interp - s.value(p)).abs();
        }
    }
    total
}

fn energy_of_points(points: &[Point2], s: &SField) -> Result<f64, MeshOptError> {
    let values: Vec<f64> = points.iter().map(|&p| s.value(p)).collect();
    let reg = weighted_delaunay(&WeightedPointSet::from_scalar_lift(points.to_vec(), &values))?;
    Ok(interpolation_energy(&reg.mesh, s))
}

/// One critical-point update of all interior points against the frozen mesh:
///
///   Hess s(x_i) x* = Hess s(x_i) x_i
///       - (1 / |K_i|) sum_{t in K_i} grad|t| [ sum_{k in t} s(x_k - x_i) ]
///
/// Boundary and ghost points stay fixed. Points with a numerically singular
/// Hessian keep their position.
pub fn relocate_points(
    mesh: &Mesh2D,
    points: &[Point2],
    vertex_of_point: impl Fn(usize) -> Option<usize>,
    s: &SField,
    fan: FanMeasure,
) -> Result<Vec<Point2>, MeshOptError> {
    let mut out = points.to_vec();
    for (pi, p) in points.iter().enumerate() {
        let Some(v) = vertex_of_point(pi) else {
            continue;
        };
        if mesh.is_boundary_vertex(v) || mesh.is_ghost(v) {
            continue;
        }
        let hess = s.hessian(*p);
        let (lmin, lmax) = hess.eigenvalues();
        if !(lmin.abs() > 0.0) || lmax.abs() / lmin.abs() > 1e12 {
            continue;
        }
        let fan_tris = mesh.vertex_triangles(v);
        if fan_tris.is_empty() {
            continue;
        }
        let mut measure = 0.0;
        let mut accum = Point2::zero();
        for &t in fan_tris {
            let tri = mesh.triangle(t);
            // order the other two vertices so (v, a, b) is counter-clockwise
            let pos = tri.iter().position(|&w| w == v).unwrap();
            let a = tri[(pos + 1) % 3];
            let b = tri[(pos + 2) % 3];
            let (qa, qb) = (mesh.vertex(a), mesh.vertex(b));
            let grad = area_gradient(qa, qb);
            let sum_s: f64 = tri
                .iter()
                .map(|&k| {
                    let d = mesh.vertex(k) - *p;
                    s.value(d)
                })
                .sum();
            accum = accum + grad.scale(sum_s);
            measure += match fan {
                FanMeasure::Area => mesh.tri_area(t),
                FanMeasure::Cardinality => 1.0,
            };
        }
        let rhs = hess.apply(*p) - accum.scale(1.0 / measure);
        // solve the 2x2 SPD system Hess x* = rhs
        let det = hess.det();
        let x = Point2::new(
            (hess.a22 * rhs.x - hess.a12 * rhs.y) / det,
            (-hess.a12 * rhs.x + hess.a11 * rhs.y) / det,
        );
        // cap the move at the local fan scale: the fixed-point update has no
        // step-size control of its own and can fling points near the
        // boundary arbitrarily far in the stiff Hessian direction
        let mut fan_scale = 0.0f64;
        for &t in fan_tris {
            for &w in &mesh.triangle(t) {
                fan_scale = fan_scale.max((mesh.vertex(w) - *p).norm());
            }
        }
        let step = x - *p;
        let lim = step.norm();
        let capped = if lim > fan_scale {
            *p + step.scale(fan_scale / lim)
        } else {
            x
        };
        out[pi] = capped;
    }
    // keep interior points strictly inside the hull of the fixed boundary
    let hull: Vec<Point2> = {
        let bnd: Vec<Point2> = (0..mesh.num_vertices())
            .filter(|&v| mesh.is_boundary_vertex(v))
            .map(|v| mesh.vertex(v))
            .collect();
        match crate::mesh::convex_hull_points(&bnd) {
            Ok(h) => h,
            Err(_) => return Ok(out),
        }
    };
    let m = hull.len();
    for (pi, p) in points.iter().enumerate() {
        if out[pi] == *p {
            continue;
        }
        let step = out[pi] - *p;
        let mut t = 1.0f64;
        for w in 0..m {
            let a = hull[w];
            let b = hull[(w + 1) % m];
            let n = (b - a).perp(); // inward for a counter-clockwise hull
            let margin = 1e-6 * (b - a).norm();
            let den = step.dot(n);
            if den < 0.0 {
                // moving toward this side: keep (p + t step - a) . n >= margin
                let tw = ((*p - a).dot(n) - margin) / -den;
                t = t.min(tw.max(0.0));
            }
        }
        out[pi] = *p + step.scale(t.min(1.0));
    }
    Ok(out)
}

/// Alternate weighted-Delaunay reconnection and damped point relocation
/// until the largest displacement stalls. The output triangulation is
/// Q-adapted by construction.
pub fn optimize_mesh(
    initial: &[Point2],
    s: &SField,
    config: &MeshOptConfig,
) -> Result<MeshOptResult, MeshOptError> {
    let mut points = initial.to_vec();
    let mut energy = energy_of_points(&points, s)?;
    let mut history = vec![energy];
    let mut converged = false;
    let mut iterations = 0;

    // domain scale for the stopping rule
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in &points {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let diameter = (hi - lo).norm();

    for iter in 0..config.max_iter {
        iterations = iter + 1;
        let values: Vec<f64> = points.iter().map(|&p| s.value(p)).collect();
        let reg =
            weighted_delaunay(&WeightedPointSet::from_scalar_lift(points.clone(), &values))?;
        // map point index -> mesh vertex (hidden points stay in place)
        let mut vertex_of = vec![None; points.len()];
        for (v, &pi) in reg.vertex_map.iter().enumerate() {
            vertex_of[pi] = Some(v);
        }
        let proposed = relocate_points(
            &reg.mesh,
            &points,
            |pi| vertex_of[pi],
            s,
            config.fan_measure,
        )?;

        // damp the global step until the interpolation energy is monotone
        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..=config.max_halvings {
            let trial: Vec<Point2> = points
                .iter()
                .zip(&proposed)
                .map(|(old, new)| *old + (*new - *old).scale(scale))
                .collect();
            if let Ok(e) = energy_of_points(&trial, s) {
                if e <= energy + 1e-14 * energy.abs() {
                    let max_disp = points
                        .iter()
                        .zip(&trial)
                        .map(|(a, b)| (*a - *b).norm())
                        .fold(0.0f64, f64::max);
                    points = trial;
                    energy = e;
                    history.push(energy);
                    accepted = true;
                    if max_disp < config.tol * diameter {
                        converged = true;
                    }
                    break;
                }
            }
            scale *= config.beta;
        }
        if !accepted {
            converged = true; // no descent direction left at this resolution
        }
        if converged {
            break;
        }
    }

    let values: Vec<f64> = points.iter().map(|&p| s.value(p)).collect();
    let reg = weighted_delaunay(&WeightedPointSet::from_scalar_lift(points.clone(), &values))?;
    Ok(MeshOptResult {
        mesh: Arc::new(reg.mesh),
        points,
        energy_history: history,
        iterations,
        converged,
    })
}

/// Interpolation quality of a mesh for the potential s: L2 error and H1
/// seminorm error of the PL interpolant, plus the spectral condition number
/// of the interior stiffness matrix assembled from Q = R Hess(s) R'.
pub fn interpolation_errors(
    mesh: &Mesh2D,
    s: &SField,
) -> Result<(f64, f64, f64), MeshOptError> {
    let values: Vec<f64> = (0..mesh.num_vertices())
        .map(|v| s.value(mesh.vertex(v)))
        .collect();
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for t in 0..mesh.num_triangles() {
        let [a, b, c] = mesh.triangle(t);
        let (pa, pb, pc) = (mesh.vertex(a), mesh.vertex(b), mesh.vertex(c));
        let area = mesh.tri_area(t);
        let mut grad_h = Point2::zero();
        for v in 0..3 {
            grad_h = grad_h + mesh.hat_gradient(t, v).scale(values[mesh.triangle(t)[v]]);
        }
        for (bc, w) in QUAD7 {
            let p = pa.scale(bc[0]) + pb.scale(bc[1]) + pc.scale(bc[2]);
            let interp = values[a] * bc[0] + values[b] * bc[1] + values[c] * bc[2];
            let d = interp - s.value(p);
            l2 += w * area * d * d;
            let dg = grad_h - s.gradient(p);
            h1 += w * area * dg.norm2();
        }
    }
    // stiffness of the rotated Hessian coefficient, interior block; PL
    // potentials carry their curvature on edges, so their stiffness is the
    // hinge form of the sampled values
    let interior = mesh.interior_vertices();
    let mut pos = vec![usize::MAX; mesh.num_vertices()];
    for (slot, &v) in interior.iter().enumerate() {
        pos[v] = slot;
    }
    let mut triplets = Vec::new();
    match s {
        SField::MeshVertex { .. } => {
            let mesh_arc = Arc::new(mesh.clone());
            let qh = crate::homogenize::qh_from_sh(&mesh_arc, &values, false)
                .expect("interior hinges exist");
            for (a, b, q) in qh.populated() {
                let (pa, pb) = (pos[a], pos[b]);
                if pa != usize::MAX {
                    triplets.push((pa, pa, q));
                }
                if pb != usize::MAX {
                    triplets.push((pb, pb, q));
                }
                if pa != usize::MAX && pb != usize::MAX {
                    triplets.push((pa, pb, -q));
                    triplets.push((pb, pa, -q));
                }
            }
        }
        _ => {
            let coeff = |p: Point2| s.hessian(p).rotate_pi2();
            let k = crate::fem::assemble(mesh, &coeff);
            for (slot, &v) in interior.iter().enumerate() {
                for kk in k.full.row_ptr[v]..k.full.row_ptr[v + 1] {
                    let j = k.full.col_idx[kk];
                    if pos[j] != usize::MAX {
                        triplets.push((slot, pos[j], k.full.values[kk]));
                    }
                }
            }
        }
    }
    let sys = SparseSym::from_triplets(interior.len(), &mut triplets);
    // a semi-definite system (affine potential, all hinge weights zero) has
    // no meaningful condition number
    let kappa = if interior.is_empty() {
        f64::NAN
    } else {
        match extreme_eigenvalues(&sys, 4000) {
            Ok((lmin, lmax)) => lmax / lmin,
            Err(_) => f64::NAN,
        }
    };
    Ok((l2.sqrt(), h1.sqrt(), kappa))
}

/// Sample points for mesh construction: random interior points plus an
/// evenly spaced boundary loop on the unit square.
pub fn seeded_points(n_boundary_per_side: usize, n_interior: usize, seed: u64) -> Vec<Point2> {
    seeded_points_anisotropic(n_boundary_per_side, n_boundary_per_side, n_interior, seed)
}

/// Like `seeded_points` with separate point counts for the x-parallel sides
/// (bottom/top) and the y-parallel sides (left/right), so the fixed boundary
/// can match an anisotropic target spacing.
pub fn seeded_points_anisotropic(
    n_bottom_top: usize,
    n_left_right: usize,
    n_interior: usize,
    seed: u64,
) -> Vec<Point2> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for k in 0..n_bottom_top {
        let t = k as f64 / n_bottom_top as f64;
        pts.push(Point2::new(t, 0.0));
        pts.push(Point2::new(1.0 - t, 1.0));
    }
    for k in 0..n_left_right {
        let t = k as f64 / n_left_right as f64;
        pts.push(Point2::new(1.0, t));
        pts.push(Point2::new(0.0, 1.0 - t));
    }
    for _ in 0..n_interior {
        pts.push(Point2::new(
            0.02 + 0.96 * rng.gen::<f64>(),
            0.02 + 0.96 * rng.gen::<f64>(),
        ));
    }
    pts
}

/// The isotropic pipeline invariance: with s = a (x^2 + y^2), the weights
/// shift affinely with a, so the optimized connectivity does not depend on
/// a. Exposed for tests and the CLI self-checks.
pub fn paraboloid_potential(a: f64) -> SField {
    SField::analytic(
        move |p| a * (p.x * p.x + p.y * p.y),
        move |p| p.scale(2.0 * a),
        move |_| Tensor2::iso(2.0 * a),
    )
}

/// Convenience: anisotropic quadratic potential for a diagonal Q.
pub fn quadratic_potential(q: Tensor2) -> SField {
    SField::quadratic_for(q)
}

#[allow(dead_code)]
fn unused_raster_hook(_g: RasterGrid) {}
