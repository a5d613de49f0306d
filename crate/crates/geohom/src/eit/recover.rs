//! Divergence-free parameterization recovery: optimize the vertex potential
//! s^h so that the hinge-formula network reproduces the measured
//! Dirichlet-to-Neumann data, with a TV penalty on tr Q^h and a logarithmic
//! barrier keeping every hinge conductivity positive.

use std::sync::Arc;
use std::time::Instant;

use super::EitError;
use crate::fem::FemError;
use crate::homogenize::EdgeConductivities;
use crate::la::sparse::{SparseSym, SymSolver};
use crate::mesh::Mesh2D;
use crate::{Point2, Tensor2};

/// Cached linear map from the six stencil potentials of each triangle to
/// the entries of the per-triangle Q^h (quadratic fit, rotated Hessian).
pub struct QuadStencil {
    /// per-triangle stencil: six vertices (own corners then the
    /// edge-opposite vertices of the three neighbors) and the rows
    /// (q11, q12, q22) of the linear map; None for triangles without three
    /// neighbors (the ghost triangles themselves)
    pub per_tri: Vec<Option<([usize; 6], [[f64; 6]; 3])>>,
}

impl QuadStencil {
    /// Build the stencil for every triangle with three edge neighbors; on a
    /// ghosted mesh that covers every physical triangle.
    pub fn build(mesh: &Mesh2D) -> Result<QuadStencil, EitError> {
        let mut per_tri = Vec::with_capacity(mesh.num_triangles());
        for t in 0..mesh.num_triangles() {
            let tri = mesh.triangle(t);
            let mut six = [0usize; 6];
            six[..3].copy_from_slice(&tri);
            let nb = mesh.tri_neighbors(t);
            let mut complete = true;
            for v in 0..3 {
                let Some(n) = nb[v] else {
                    complete = false;
                    break;
                };
                let Some(opp) = mesh
                    .triangle(n)
                    .iter()
                    .copied()
                    .find(|w| !tri.contains(w))
                else {
                    complete = false;
                    break;
                };
                six[3 + v] = opp;
            }
            if !complete {
                if !tri.iter().any(|&v| mesh.is_ghost(v)) {
                    // a physical triangle without a full stencil means the
                    // ghost layer is missing
                    return Err(EitError::SingularStencil { tri: t });
                }
                per_tri.push(None);
                continue;
            }
            // quadratic fit centered at the centroid: basis
            // (1, x, y, x^2/2, xy, y^2/2)
            let c = mesh.tri_centroid(t);
            let mut vand = Vec::with_capacity(6);
            for &v in &six {
                let p = mesh.vertex(v) - c;
                vand.push(vec![1.0, p.x, p.y, 0.5 * p.x * p.x, p.x * p.y, 0.5 * p.y * p.y]);
            }
            // rows of the inverse give the coefficient extraction; solve the
            // transposed systems for the rows belonging to sxx, sxy, syy
            let mut rows = [[0.0; 6]; 3];
            for (slot, comp) in [(0usize, 3usize), (1, 4), (2, 5)] {
                let mut rhs = vec![0.0; 6];
                rhs[comp] = 1.0;
                // solve V' w = e_comp so that w . s = coefficient comp
                let vt: Vec<Vec<f64>> = (0..6)
                    .map(|r| (0..6).map(|col| vand[col][r]).collect())
                    .collect();
                let w = crate::la::dense::lu_solve(&vt, &rhs)
                    .ok_or(EitError::SingularStencil { tri: t })?;
                for k in 0..6 {
                    rows[slot][k] = w[k];
                }
            }
            // Q = R Hess R': q11 = syy, q12 = -sxy, q22 = sxx
            let q11 = rows[2];
            let q12: [f64; 6] = std::array::from_fn(|k| -rows[1][k]);
            let q22 = rows[0];
            per_tri.push(Some((six, [q11, q12, q22])));
        }
        Ok(QuadStencil { per_tri })
    }

    pub fn q_of(&self, t: usize, s: &[f64]) -> Option<Tensor2> {
        let (six, m) = self.per_tri[t].as_ref()?;
        let mut out = [0.0; 3];
        for (slot, row) in m.iter().enumerate() {
            for k in 0..6 {
                out[slot] += row[k] * s[six[k]];
            }
        }
        Some(Tensor2::new(out[0], out[1], out[2]))
    }

    pub fn trace_row(&self, t: usize) -> Option<([usize; 6], [f64; 6])> {
        let (six, m) = self.per_tri[t].as_ref()?;
        let row = std::array::from_fn(|k| m[0][k] + m[2][k]);
        Some((*six, row))
    }
}

/// Per-triangle Q^h from the quadratic stencil through the potential values;
/// None on triangles without a complete stencil (ghost triangles).
pub fn quadratic_stencil_q(mesh: &Mesh2D, sh: &[f64]) -> Result<Vec<Option<Tensor2>>, EitError> {
    let stencil = QuadStencil::build(mesh)?;
    Ok((0..mesh.num_triangles())
        .map(|t| stencil.q_of(t, sh))
        .collect())
}

#[derive(Clone, Debug)]
pub struct RecoverConfig {
    /// Tikhonov weight on the TV of tr Q^h
    pub alpha: f64,
    /// number of Dirichlet/Neumann data pairs (hat bases of the target)
    pub pairs: usize,
    /// barrier continuation: starting weight, shrink factor, floor
    pub barrier_init: f64,
    pub barrier_shrink: f64,
    pub barrier_floor: f64,
    /// L-BFGS memory and iteration budget per barrier stage
    pub lbfgs_memory: usize,
    pub iters_per_stage: usize,
    /// smoothing half-width of the TV absolute value
    pub tv_epsilon: f64,
    pub grad_tol: f64,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        RecoverConfig {
            alpha: 1e-3,
            pairs: usize::MAX,
            barrier_init: 1e-4,
            barrier_shrink: 0.2,
            barrier_floor: 1e-10,
            lbfgs_memory: 10,
            iters_per_stage: 200,
            tv_epsilon: 1e-6,
            grad_tol: 1e-12,
        }
    }
}

pub struct RecoverReport {
    /// recovered potential at every vertex of the ghosted mesh
    pub sh: Vec<f64>,
    /// hinge conductivities of the physical network
    pub qh: EdgeConductivities,
    /// data misfit after each accepted iterate
    pub misfit_history: Vec<f64>,
    pub final_misfit: f64,
    pub converged: bool,
    pub wall_seconds: f64,
}

struct Problem {
    mesh: Arc<Mesh2D>,
    /// hinge rows per network edge: edge id and four (vertex, coefficient)
    hinge_rows: Vec<(usize, [(usize, f64); 4])>,
    /// physical (non-ghost) network vertices split into interior/boundary
    boundary: Vec<usize>,
    interior: Vec<usize>,
    stencil: QuadStencil,
    /// physical triangles the TV term runs over
    tv_pairs: Vec<(usize, usize, f64)>,
    /// data
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
    weights: Vec<f64>,
    gauge: [usize; 3],
    alpha: f64,
    tv_eps: f64,
}

impl Problem {
    fn hinge_values(&self, s: &[f64]) -> Vec<(usize, usize, f64)> {
        self.hinge_rows
            .iter()
            .map(|&(id, row)| {
                let e = self.mesh.edge(id);
                let q: f64 = row.iter().map(|&(v, c)| c * s[v]).sum();
                (e.a, e.b, q)
            })
            .collect()
    }

    /// objective, gradient, and the data misfit alone
    fn eval(&self, s: &[f64], mu: f64) -> Result<(f64, Vec<f64>, f64), EitError> {
        let n = self.mesh.num_vertices();
        let edges = self.hinge_values(s);
        // infeasible iterates are rejected by the line search, never solved
        if edges.iter().any(|&(_, _, q)| q <= 0.0) {
            return Ok((f64::INFINITY, vec![0.0; n], f64::INFINITY));
        }
        let mut grad_q: Vec<f64> = vec![0.0; edges.len()];

        // interior system of the network
        let mut pos_i = vec![usize::MAX; n];
        for (slot, &v) in self.interior.iter().enumerate() {
            pos_i[v] = slot;
        }
        let ni = self.interior.len();
        let mut triplets = Vec::new();
        for &(a, b, q) in &edges {
            let (pa, pb) = (pos_i[a], pos_i[b]);
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
        let kii = SparseSym::from_triplets(ni, &mut triplets);
        let solver = SymSolver::new(kii).map_err(FemError::SolverBreakdown)?;

        let laplacian_apply = |u: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for &(a, b, q) in &edges {
                let d = u[a] - u[b];
                out[a] += q * d;
                out[b] -= q * d;
            }
            out
        };

        let mut misfit = 0.0;
        for (g, f) in &self.pairs {
            // boundary data at physical boundary vertices
            let mut u = vec![0.0; n];
            for (k, &v) in self.boundary.iter().enumerate() {
                u[v] = g[k];
            }
            // rhs_I = -(L u_bnd)_I
            let lu = laplacian_apply(&u);
            let rhs: Vec<f64> = self.interior.iter().map(|&v| -lu[v]).collect();
            let ui = solver.solve(&rhs).map_err(FemError::SolverBreakdown)?;
            for (slot, &v) in self.interior.iter().enumerate() {
                u[v] = ui[slot];
            }
            let flux = laplacian_apply(&u);
            // residual at boundary, weighted
            let mut r = vec![0.0; self.boundary.len()];
            for (k, &v) in self.boundary.iter().enumerate() {
                r[k] = flux[v] - f[k];
                misfit += 0.5 * self.weights[k] * r[k] * r[k];
            }
            // adjoint: lambda_B = W r, lambda_I solves K_II lambda_I = -L_IB lambda_B
            let mut lambda = vec![0.0; n];
            for (k, &v) in self.boundary.iter().enumerate() {
                lambda[v] = self.weights[k] * r[k];
            }
            let llam = laplacian_apply(&lambda);
            let rhs_adj: Vec<f64> = self.interior.iter().map(|&v| -llam[v]).collect();
            let li = solver.solve(&rhs_adj).map_err(FemError::SolverBreakdown)?;
            for (slot, &v) in self.interior.iter().enumerate() {
                lambda[v] = li[slot];
            }
            // dJ/dq_e = (lambda_a - lambda_b)(u_a - u_b)
            for (eidx, &(a, b, _)) in edges.iter().enumerate() {
                grad_q[eidx] += (lambda[a] - lambda[b]) * (u[a] - u[b]);
            }
        }

        // barrier over network edges
        let mut barrier = 0.0;
        for (eidx, &(_, _, q)) in edges.iter().enumerate() {
            if q <= 0.0 {
                return Ok((f64::INFINITY, vec![0.0; n], misfit));
            }
            barrier -= mu * q.ln();
            grad_q[eidx] += -mu / q;
        }

        // TV of tr Q^h across physical edges
        let mut tv = 0.0;
        let mut grad_s = vec![0.0; n];
        if self.alpha > 0.0 {
            let traces: Vec<f64> = (0..self.mesh.num_triangles())
                .map(|t| {
                    self.stencil
                        .trace_row(t)
                        .map(|(six, row)| six.iter().zip(row.iter()).map(|(&v, &c)| c * s[v]).sum())
                        .unwrap_or(0.0)
                })
                .collect();
            for &(t1, t2, len) in &self.tv_pairs {
                let (Some((six1, row1)), Some((six2, row2))) =
                    (self.stencil.trace_row(t1), self.stencil.trace_row(t2))
                else {
                    continue;
                };
                let d = traces[t1] - traces[t2];
                let root = (d * d + self.tv_eps * self.tv_eps).sqrt();
                tv += len * root;
                let dd = len * d / root;
                for (k, &v) in six1.iter().enumerate() {
                    grad_s[v] += self.alpha * dd * row1[k];
                }
                for (k, &v) in six2.iter().enumerate() {
                    grad_s[v] -= self.alpha * dd * row2[k];
                }
            }
        }

        // chain rule through the hinge rows
        for (eidx, &(_, row)) in self.hinge_rows.iter().enumerate() {
            let g = grad_q[eidx];
            if g != 0.0 {
                for &(v, c) in &row {
                    grad_s[v] += g * c;
                }
            }
        }
        for &v in &self.gauge {
            grad_s[v] = 0.0;
        }
        Ok((misfit + barrier + self.alpha * tv, grad_s, misfit))
    }
}

/// Recover the vertex potential from DtN data on a ghosted mesh.
///
/// The network runs over the physical (non-ghost) edges with hinge-formula
/// conductivities; ghost vertices only carry potential values. The physical
/// boundary vertices must match the target's measurement points one-to-one
/// in boundary-loop order.
pub fn recover_sh(
    target: &super::DtNMatrix,
    ghosted: &Arc<Mesh2D>,
    config: &RecoverConfig,
) -> Result<RecoverReport, EitError> {
    let start = Instant::now();
    let problem = build_problem(target, ghosted, config)?;

    // strictly hinge-convex initialization: a generic positive quadratic
    let mut s = initial_potential(ghosted, &problem)?;

    // free coordinates: everything but the three gauge pins
    let n = ghosted.num_vertices();
    let free: Vec<usize> = (0..n).filter(|v| !problem.gauge.contains(v)).collect();
    let mut free_of = vec![usize::MAX; n];
    for (slot, &v) in free.iter().enumerate() {
        free_of[v] = slot;
    }

    let mut misfit_history = Vec::new();
    let mut mu = config.barrier_init * (1.0 + target.scale());
    let mut converged = false;
    let mut lambda = 1e-3;
    while mu > config.barrier_floor {
        for _iter in 0..config.iters_per_stage {
            let gn = problem.gauss_newton_model(&s, mu, &free, &free_of)?;
            misfit_history.push(gn.misfit);
            let gnorm: f64 = gn.gradient.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gnorm < config.grad_tol * (1.0 + gn.objective.abs()) {
                converged = true;
                break;
            }
            // Levenberg-Marquardt trust region on the GN model
            let mut improved = false;
            for _ in 0..12 {
                let mut damped = gn.normal.clone();
                for a in 0..free.len() {
                    let d = damped.get(a, a);
                    damped.set(a, a, d + lambda * d.max(1e-12));
                }
                let Some(step) = crate::la::dense::cholesky_solve(&damped, &gn.gradient) else {
                    lambda *= 10.0;
                    continue;
                };
                let mut trial = s.clone();
                for (slot, &v) in free.iter().enumerate() {
                    trial[v] -= step[slot];
                }
                let (f1, _, _) = problem.eval(&trial, mu)?;
                if f1.is_finite() && f1 < gn.objective {
                    s = trial;
                    lambda = (lambda * 0.3).max(1e-14);
                    improved = true;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        if std::env::var("GEOHOM_RECOVER_TRACE").is_ok() {
            let last = misfit_history.last().copied().unwrap_or(f64::NAN);
            eprintln!(
                "stage mu {mu:.2e}: misfit {last:.6e} iters so far {}",
                misfit_history.len()
            );
        }
        mu *= config.barrier_shrink;
    }

    let (_, _, final_misfit) = problem.eval(&s, 0.0)?;
    misfit_history.push(final_misfit);
    let mut qh = EdgeConductivities::empty(Arc::clone(ghosted));
    for (id, row) in &problem.hinge_rows {
        let q: f64 = row.iter().map(|&(v, c)| c * s[v]).sum();
        qh.set_edge(*id, q);
    }
    Ok(RecoverReport {
        sh: s,
        qh,
        misfit_history,
        final_misfit,
        converged,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn is_physical(mesh: &Mesh2D, v: usize) -> bool {
    !mesh.is_ghost(v)
}

/// DtN map of the physical hinge-formula network of a ghosted mesh for the
/// given potential values: the forward map that `recover_sh` inverts. Used
/// to manufacture inverse-crime targets and to audit reconstructions.
pub fn network_dtn(ghosted: &Arc<Mesh2D>, sh: &[f64]) -> Result<super::DtNMatrix, EitError> {
    let ring = physical_boundary_loop(ghosted)?;
    let physical: Vec<usize> = (0..ghosted.num_vertices())
        .filter(|&v| !ghosted.is_ghost(v))
        .collect();
    let mut compact = vec![usize::MAX; ghosted.num_vertices()];
    for (slot, &v) in physical.iter().enumerate() {
        compact[v] = slot;
    }
    let mut is_boundary = vec![false; physical.len()];
    for &v in &ring {
        is_boundary[compact[v]] = true;
    }
    let mut edges = Vec::new();
    for (id, e) in ghosted.edges().iter().enumerate() {
        if ghosted.is_ghost(e.a) || ghosted.is_ghost(e.b) {
            continue;
        }
        let h = ghosted
            .hinge(id)
            .map_err(|_| EitError::SingularStencil { tri: id })?;
        let q = crate::homogenize::hinge_value(&h, sh);
        edges.push((compact[e.a], compact[e.b], q));
    }
    let points: Vec<Point2> = ring.iter().map(|&v| ghosted.vertex(v)).collect();
    let dtn = super::dtn_from_network(physical.len(), &is_boundary, &edges, &points, "hinge-network")?;
    // dtn_from_network orders boundary by compact index; remap to ring order
    let mut sorted_ring: Vec<usize> = ring.iter().map(|&v| compact[v]).collect();
    let ring_compact = sorted_ring.clone();
    sorted_ring.sort_unstable();
    let slot_of = |cv: usize| sorted_ring.binary_search(&cv).unwrap();
    let nb = ring.len();
    let mut matrix = vec![0.0; nb * nb];
    for (i, &ci) in ring_compact.iter().enumerate() {
        for (j, &cj) in ring_compact.iter().enumerate() {
            matrix[i * nb + j] = dtn.get(slot_of(ci), slot_of(cj));
        }
    }
    Ok(super::DtNMatrix {
        points,
        matrix,
        provenance: "hinge-network".into(),
    })
}

/// Build a ghosted recovery mesh over the target's measurement ring:
/// Delaunay of the ring plus jittered interior points, extended by one
/// ghost layer.
pub fn recovery_mesh(
    target: &super::DtNMatrix,
    n_interior: usize,
    seed: u64,
) -> Result<Arc<Mesh2D>, EitError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pts = target.points.clone();
    let centroid = pts
        .iter()
        .fold(Point2::zero(), |a, p| a + *p)
        .scale(1.0 / pts.len() as f64);
    let spread = pts
        .iter()
        .map(|p| (*p - centroid).norm())
        .fold(0.0f64, f64::max);
    for _ in 0..n_interior {
        let r = 0.8 * spread * rng.gen::<f64>().sqrt();
        let th = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        pts.push(centroid + Point2::new(r * th.cos(), r * th.sin()));
    }
    let reg = crate::mesh::delaunay_triangulation(&pts)?;
    Ok(Arc::new(reg.mesh.add_ghost_layer()?))
}

/// Compare the adjoint gradient of the full objective against central
/// finite differences on randomly chosen coordinates; returns the worst
/// relative error. A validation diagnostic for the optimizer's gradient.
pub fn adjoint_gradient_check(
    target: &super::DtNMatrix,
    ghosted: &Arc<Mesh2D>,
    config: &RecoverConfig,
    probes: usize,
    seed: u64,
) -> Result<f64, EitError> {
    use rand::{Rng, SeedableRng};
    let problem = build_problem(target, ghosted, config)?;
    let mut s = initial_potential(ghosted, &problem)?;
    // move off the symmetric start so the gradient is generic
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for v in s.iter_mut() {
        *v += 0.01 * (rng.gen::<f64>() - 0.5);
    }
    let mu = config.barrier_init * (1.0 + target.scale());
    let (_, grad, _) = problem.eval(&s, mu)?;
    let scale = s.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let h = 1e-5 * scale.max(1.0);
    let mut worst = 0.0f64;
    let free: Vec<usize> = (0..s.len())
        .filter(|v| !problem.gauge.contains(v))
        .collect();
    for _ in 0..probes {
        let v = free[rng.gen_range(0..free.len())];
        let mut sp = s.clone();
        sp[v] += h;
        let (fp, _, _) = problem.eval(&sp, mu)?;
        sp[v] -= 2.0 * h;
        let (fm, _, _) = problem.eval(&sp, mu)?;
        let fd = (fp - fm) / (2.0 * h);
        let denom = fd.abs().max(grad[v].abs()).max(1e-12);
        worst = worst.max((fd - grad[v]).abs() / denom);
    }
    Ok(worst)
}

/// The physical boundary ring of a ghosted mesh: vertices that were on the
/// boundary before the ghost layer was added, in loop order.
fn physical_boundary_loop(ghosted: &Mesh2D) -> Result<Vec<usize>, EitError> {
    // vertices adjacent to a ghost are exactly the former boundary
    let mut on_ring = vec![false; ghosted.num_vertices()];
    for e in ghosted.edges() {
        let (a, b) = (e.a, e.b);
        if ghosted.is_ghost(a) && !ghosted.is_ghost(b) {
            on_ring[b] = true;
        }
        if ghosted.is_ghost(b) && !ghosted.is_ghost(a) {
            on_ring[a] = true;
        }
    }
    // walk the ring through physical edges joining ring vertices that share
    // a ghost-adjacent structure; rely on the physical sub-mesh boundary
    let mut ring_vertices: Vec<usize> = (0..ghosted.num_vertices())
        .filter(|&v| on_ring[v])
        .collect();
    if ring_vertices.is_empty() {
        return Err(EitError::EmptyNetwork);
    }
    // order by angle around the centroid (the ring is convex for our
    // measurement layouts)
    let centroid = ring_vertices
        .iter()
        .fold(Point2::zero(), |acc, &v| acc + ghosted.vertex(v))
        .scale(1.0 / ring_vertices.len() as f64);
    ring_vertices.sort_by(|&a, &b| {
        let pa = ghosted.vertex(a) - centroid;
        let pb = ghosted.vertex(b) - centroid;
        pa.y.atan2(pa.x).total_cmp(&pb.y.atan2(pb.x))
    });
    Ok(ring_vertices)
}

/// A strictly hinge-convex starting potential: try quadratics first, then
/// solve the max-margin linear feasibility problem in s (the hinge map is
/// linear, so strict positivity of all network conductivities is an LP).
fn initial_potential(mesh: &Mesh2D, problem: &Problem) -> Result<Vec<f64>, EitError> {
    let candidates = [
        Tensor2::new(1.05, 0.01, 0.95),
        Tensor2::identity(),
        Tensor2::new(1.2, 0.05, 0.8),
    ];
    let mut best_quadratic: Option<Vec<f64>> = None;
    for q in candidates {
        let h = q.rotate_pi2();
        let s: Vec<f64> = (0..mesh.num_vertices())
            .map(|v| {
                let p = mesh.vertex(v);
                0.5 * (h.a11 * p.x * p.x + 2.0 * h.a12 * p.x * p.y + h.a22 * p.y * p.y)
            })
            .collect();
        let ok = problem.hinge_values(&s).iter().all(|&(_, _, qv)| qv > 1e-12);
        if ok {
            return Ok(s);
        }
        if best_quadratic.is_none() {
            best_quadratic = Some(s);
        }
    }

    // maximise t subject to (H s)_e - t >= 0 over bounded s
    let n = mesh.num_vertices();
    let s_par = best_quadratic.expect("candidate list nonempty");
    let bound = 20.0 * s_par.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let q_scale: f64 = {
        let qs = problem.hinge_values(&s_par);
        qs.iter().map(|&(_, _, q)| q.abs()).fold(0.0, f64::max)
    };
    let ne = problem.hinge_rows.len();
    // variables: s (n, shifted to [0, 2B]), t (1), surplus (ne)
    let nvar = n + 1 + ne;
    let mut c = vec![0.0; nvar];
    c[n] = -1.0; // maximise the margin
    let mut rows = Vec::with_capacity(ne);
    let mut rhs = Vec::with_capacity(ne);
    for (eidx, &(_, row)) in problem.hinge_rows.iter().enumerate() {
        let mut full = vec![0.0; nvar];
        let mut shift = 0.0;
        for &(v, coef) in &row {
            full[v] += coef;
            shift += coef * bound; // s = s' - B
        }
        full[n] = -1.0;
        full[n + 1 + eidx] = -1.0;
        rows.push(full);
        rhs.push(shift);
    }
    let mut lower = vec![0.0; nvar];
    let mut upper = vec![2.0 * bound; nvar];
    upper[n] = 0.1 * q_scale.max(1e-6);
    for k in 0..ne {
        lower[n + 1 + k] = 0.0;
        upper[n + 1 + k] = f64::INFINITY;
    }
    // pin the gauge to remove the affine nullspace drift
    for &g in &problem.gauge {
        lower[g] = bound;
        upper[g] = bound;
    }
    let lp = crate::la::lp::LinearProgram {
        c,
        rows,
        rhs,
        lower,
        upper,
    };
    let sol = crate::la::lp::solve_lp(&lp, 40_000).map_err(|_| EitError::InfeasibleStart)?;
    let margin = sol.x[n];
    if margin <= 1e-10 * q_scale.max(1e-6) {
        return Err(EitError::InfeasibleStart);
    }
    let s: Vec<f64> = (0..n).map(|v| sol.x[v] - bound).collect();
    debug_assert!(problem
        .hinge_values(&s)
        .iter()
        .all(|&(_, _, qv)| qv > 0.0));
    Ok(s)
}

struct GnModel {
    normal: crate::la::dense::DenseSym<f64>,
    gradient: Vec<f64>,
    objective: f64,
    misfit: f64,
}

impl Problem {
    /// Gauss-Newton model of the barrier objective at s: the misfit block
    /// comes from the exact residual Jacobian (one adjoint solve per
    /// boundary vertex, reused across data pairs), the barrier and smoothed
    /// TV contribute their gradients and convex curvature approximations.
    fn gauss_newton_model(
        &self,
        s: &[f64],
        mu: f64,
        free: &[usize],
        free_of: &[usize],
    ) -> Result<GnModel, EitError> {
        let nfree = free.len();
        let n = self.mesh.num_vertices();
        let edges = self.hinge_values(s);
        if edges.iter().any(|&(_, _, q)| q <= 0.0) {
            return Err(EitError::InfeasibleStart);
        }
        let ni = self.interior.len();
        let mut pos_i = vec![usize::MAX; n];
        for (slot, &v) in self.interior.iter().enumerate() {
            pos_i[v] = slot;
        }
        let mut triplets = Vec::new();
        for &(a, b, q) in &edges {
            let (pa, pb) = (pos_i[a], pos_i[b]);
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
        let kii = SparseSym::from_triplets(ni, &mut triplets);
        let solver = SymSolver::new(kii).map_err(FemError::SolverBreakdown)?;
        let laplacian_apply = |u: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for &(a, b, q) in &edges {
                let d = u[a] - u[b];
                out[a] += q * d;
                out[b] -= q * d;
            }
            out
        };

        // forward solves per pair
        let nb = self.boundary.len();
        let mut us: Vec<Vec<f64>> = Vec::with_capacity(self.pairs.len());
        let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(self.pairs.len());
        let mut misfit = 0.0;
        for (g, f) in &self.pairs {
            let mut u = vec![0.0; n];
            for (k, &v) in self.boundary.iter().enumerate() {
                u[v] = g[k];
            }
            let lu = laplacian_apply(&u);
            let rhs: Vec<f64> = self.interior.iter().map(|&v| -lu[v]).collect();
            let ui = solver.solve(&rhs).map_err(FemError::SolverBreakdown)?;
            for (slot, &v) in self.interior.iter().enumerate() {
                u[v] = ui[slot];
            }
            let flux = laplacian_apply(&u);
            let r: Vec<f64> = self
                .boundary
                .iter()
                .enumerate()
                .map(|(k, &v)| flux[v] - f[k])
                .collect();
            for (k, &rv) in r.iter().enumerate() {
                misfit += 0.5 * self.weights[k] * rv * rv;
            }
            us.push(u);
            residuals.push(r);
        }

        // adjoint basis: one solve per boundary vertex, shared by all pairs
        let mut adjoints: Vec<Vec<f64>> = Vec::with_capacity(nb);
        for k in 0..nb {
            let mut lam = vec![0.0; n];
            lam[self.boundary[k]] = 1.0;
            let llam = laplacian_apply(&lam);
            let rhs: Vec<f64> = self.interior.iter().map(|&v| -llam[v]).collect();
            let li = solver.solve(&rhs).map_err(FemError::SolverBreakdown)?;
            for (slot, &v) in self.interior.iter().enumerate() {
                lam[v] = li[slot];
            }
            adjoints.push(lam);
        }

        // misfit Jacobian in s-space, row by row
        let mut normal = crate::la::dense::DenseSym::zeros(nfree);
        let mut gradient = vec![0.0; nfree];
        let ne = edges.len();
        let mut row_q = vec![0.0; ne];
        let mut row_s = vec![0.0; nfree];
        for (pair, u) in us.iter().enumerate() {
            for k in 0..nb {
                let w = self.weights[k];
                let lam = &adjoints[k];
                for (eidx, &(a, b, _)) in edges.iter().enumerate() {
                    row_q[eidx] = (lam[a] - lam[b]) * (u[a] - u[b]);
                }
                for x in row_s.iter_mut() {
                    *x = 0.0;
                }
                for (eidx, &(_, hrow)) in self.hinge_rows.iter().enumerate() {
                    let jv = row_q[eidx];
                    if jv != 0.0 {
                        for &(v, c) in &hrow {
                            if free_of[v] != usize::MAX {
                                row_s[free_of[v]] += jv * c;
                            }
                        }
                    }
                }
                let rv = residuals[pair][k];
                for a in 0..nfree {
                    let ra = row_s[a];
                    if ra == 0.0 {
                        continue;
                    }
                    gradient[a] += w * ra * rv;
                    for b in a..nfree {
                        normal.data[a * nfree + b] += w * ra * row_s[b];
                    }
                }
            }
        }
        // mirror the upper triangle
        for a in 0..nfree {
            for b in (a + 1)..nfree {
                normal.data[b * nfree + a] = normal.data[a * nfree + b];
            }
        }

        // barrier: gradient -mu/q, curvature mu/q^2 through the hinge rows
        let mut barrier = 0.0;
        for (eidx, &(_, hrow)) in self.hinge_rows.iter().enumerate() {
            let q = edges[eidx].2;
            barrier -= mu * q.ln();
            let gq = -mu / q;
            let cq = mu / (q * q);
            let mut local = [0.0f64; 4];
            let mut idx = [usize::MAX; 4];
            for (slot, &(v, c)) in hrow.iter().enumerate() {
                idx[slot] = free_of[v];
                local[slot] = c;
            }
            for a in 0..4 {
                if idx[a] == usize::MAX {
                    continue;
                }
                gradient[idx[a]] += gq * local[a];
                for b in 0..4 {
                    if idx[b] != usize::MAX && idx[a] <= idx[b] {
                        normal.data[idx[a] * nfree + idx[b]] += cq * local[a] * local[b];
                        if idx[a] != idx[b] {
                            normal.data[idx[b] * nfree + idx[a]] += cq * local[a] * local[b];
                        }
                    }
                }
            }
        }

        // smoothed TV of tr Q^h
        let mut tv = 0.0;
        if self.alpha > 0.0 {
            let traces: Vec<f64> = (0..self.mesh.num_triangles())
                .map(|t| {
                    self.stencil
                        .trace_row(t)
                        .map(|(six, row)| six.iter().zip(row.iter()).map(|(&v, &c)| c * s[v]).sum())
                        .unwrap_or(0.0)
                })
                .collect();
            for &(t1, t2, len) in &self.tv_pairs {
                let (Some((six1, row1)), Some((six2, row2))) =
                    (self.stencil.trace_row(t1), self.stencil.trace_row(t2))
                else {
                    continue;
                };
                let d = traces[t1] - traces[t2];
                let root = (d * d + self.tv_eps * self.tv_eps).sqrt();
                tv += len * root;
                let gd = self.alpha * len * d / root;
                let cd = self.alpha * len * self.tv_eps * self.tv_eps / (root * root * root);
                // difference row in free coordinates
                let mut drow = vec![0.0; nfree];
                for (k, &v) in six1.iter().enumerate() {
                    if free_of[v] != usize::MAX {
                        drow[free_of[v]] += row1[k];
                    }
                }
                for (k, &v) in six2.iter().enumerate() {
                    if free_of[v] != usize::MAX {
                        drow[free_of[v]] -= row2[k];
                    }
                }
                for a in 0..nfree {
                    if drow[a] == 0.0 {
                        continue;
                    }
                    gradient[a] += gd * drow[a];
                    for b in a..nfree {
                        if drow[b] != 0.0 {
                            normal.data[a * nfree + b] += cd * drow[a] * drow[b];
                            if a != b {
                                normal.data[b * nfree + a] += cd * drow[a] * drow[b];
                            }
                        }
                    }
                }
            }
        }

        Ok(GnModel {
            normal,
            gradient,
            objective: misfit + barrier + self.alpha * tv,
            misfit,
        })
    }
}

/// Assemble the optimization problem: physical network, hinge rows,
/// quadratic stencil, TV couplings, data pairs and gauge.
fn build_problem(
    target: &super::DtNMatrix,
    ghosted: &Arc<Mesh2D>,
    config: &RecoverConfig,
) -> Result<Problem, EitError> {
    let n = ghosted.num_vertices();
    let physical_boundary: Vec<usize> = physical_boundary_loop(ghosted)?;
    if physical_boundary.len() != target.n() {
        return Err(EitError::MeasurementOffBoundary {
            idx: physical_boundary.len(),
        });
    }
    // map target ordering onto the mesh ring by nearest point
    let ring: Vec<usize> = target
        .points
        .iter()
        .map(|p| {
            physical_boundary
                .iter()
                .map(|&v| (v, (ghosted.vertex(v) - *p).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0
        })
        .collect();
    let interior: Vec<usize> = (0..n)
        .filter(|&v| is_physical(ghosted, v) && !ring.contains(&v))
        .collect();

    let mut hinge_rows = Vec::new();
    for (id, e) in ghosted.edges().iter().enumerate() {
        if ghosted.is_ghost(e.a) || ghosted.is_ghost(e.b) {
            continue;
        }
        let h = ghosted
            .hinge(id)
            .map_err(|_| EitError::SingularStencil { tri: id })?;
        let inv_e2 = 1.0 / (h.edge_len * h.edge_len);
        hinge_rows.push((
            id,
            [
                (h.i, -inv_e2 * (h.cot_ijk + h.cot_ijl)),
                (h.j, -inv_e2 * (h.cot_jik + h.cot_jil)),
                (h.k, 1.0 / (2.0 * h.area_ijk)),
                (h.l, 1.0 / (2.0 * h.area_ijl)),
            ],
        ));
    }

    let stencil = QuadStencil::build(ghosted)?;
    let tv_pairs: Vec<(usize, usize, f64)> = ghosted
        .interior_edges()
        .filter_map(|(_, e)| {
            let (t1, t2) = (e.tris[0].unwrap(), e.tris[1].unwrap());
            let phys = |t: usize| ghosted.triangle(t).iter().all(|&v| !ghosted.is_ghost(v));
            if phys(t1) && phys(t2) {
                Some((t1, t2, (ghosted.vertex(e.b) - ghosted.vertex(e.a)).norm()))
            } else {
                None
            }
        })
        .collect();

    let np = config.pairs.min(target.n());
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..np)
        .map(|k| {
            let mut g = vec![0.0; target.n()];
            g[k] = 1.0;
            let f = target.apply(&g);
            (g, f)
        })
        .collect();
    let weights = target.arc_weights();
    let gauge = {
        let tri = ghosted.triangle(0);
        [tri[0], tri[1], tri[2]]
    };
    Ok(Problem {
        mesh: Arc::clone(ghosted),
        hinge_rows,
        boundary: ring,
        interior,
        stencil,
        tv_pairs,
        pairs,
        weights,
        gauge,
        alpha: config.alpha,
        tv_eps: config.tv_epsilon * (1.0 + target.scale()),
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::v2;

    fn ghosted_disk_mesh(nb: usize, n_interior: usize, seed: u64) -> Arc<Mesh2D> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<crate::Point2> = (0..nb)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / nb as f64;
                v2(th.cos(), th.sin())
            })
            .collect();
        for _ in 0..n_interior {
            let r = 0.75 * rng.gen::<f64>().sqrt();
            let th = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
            pts.push(v2(r * th.cos(), r * th.sin()));
        }
        let reg = crate::mesh::delaunay_triangulation(&pts).unwrap();
        Arc::new(reg.mesh.add_ghost_layer().unwrap())
    }

    #[test]
    fn quadratic_stencil_reproduces_quadratics_exactly() {
        let mesh = ghosted_disk_mesh(8, 10, 1);
        // arbitrary quadratic: s = 1.5 x^2 + 0.4 xy + 0.8 y^2 + x - 2y + 3
        let sh: Vec<f64> = (0..mesh.num_vertices())
            .map(|v| {
                let p = mesh.vertex(v);
                1.5 * p.x * p.x + 0.4 * p.x * p.y + 0.8 * p.y * p.y + p.x - 2.0 * p.y + 3.0
            })
            .collect();
        // Hess = [[3, 0.4], [0.4, 1.6]]; Q = R Hess R' = [[1.6, -0.4], [-0.4, 3]]
        let q = quadratic_stencil_q(&mesh, &sh).unwrap();
        let mut seen = 0;
        for (t, qt) in q.iter().enumerate() {
            let Some(qt) = qt else { continue };
            seen += 1;
            assert!((qt.a11 - 1.6).abs() < 1e-9, "tri {t}: {qt:?}");
            assert!((qt.a12 + 0.4).abs() < 1e-9);
            assert!((qt.a22 - 3.0).abs() < 1e-9);
        }
        assert!(seen > 10);
    }

    #[test]
    fn cubic_stencil_error_shrinks_with_refinement() {
        // s cubic: the quadratic fit errs O(h) on the Hessian
        let s_fn = |p: crate::Point2| p.x.powi(3) / 6.0 + p.y * p.y;
        let hess_xx = |p: crate::Point2| p.x; // exact sxx
        let mut errs = Vec::new();
        for n in [4usize, 8, 16] {
            let base = crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, n, n);
            let mesh = Arc::new(base.add_ghost_layer().unwrap());
            let sh: Vec<f64> = (0..mesh.num_vertices()).map(|v| s_fn(mesh.vertex(v))).collect();
            let q = quadratic_stencil_q(&mesh, &sh).unwrap();
            let mut worst = 0.0f64;
            for t in 0..mesh.num_triangles() {
                if mesh.triangle(t).iter().any(|&v| mesh.is_ghost(v)) {
                    continue;
                }
                let c = mesh.tri_centroid(t);
                let Some(qt) = q[t] else { continue };
                // q22 = sxx
                worst = worst.max((qt.a22 - hess_xx(c)).abs());
            }
            errs.push(worst);
        }
        assert!(errs[1] < 0.7 * errs[0], "{errs:?}");
        assert!(errs[2] < 0.7 * errs[1], "{errs:?}");
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let mesh = ghosted_disk_mesh(8, 8, 4);
        // target from a known convex potential on the same mesh
        let sh_true: Vec<f64> = (0..mesh.num_vertices())
            .map(|v| {
                let p = mesh.vertex(v);
                0.6 * p.x * p.x + 0.5 * p.y * p.y + 0.1 * p.x * p.y
            })
            .collect();
        let target = network_dtn(&mesh, &sh_true).unwrap();
        let cfg = RecoverConfig {
            alpha: 1e-3,
            ..Default::default()
        };
        let worst = adjoint_gradient_check(&target, &mesh, &cfg, 20, 7).unwrap();
        assert!(worst < 1e-5, "gradient mismatch {worst}");
    }

    #[test]
    fn inverse_crime_drives_misfit_to_zero() {
        let mesh = ghosted_disk_mesh(8, 8, 4);
        // the generating potential must be strictly hinge-convex on this
        // very mesh or the barrier method cannot reach it; the max-margin
        // feasible point provides exactly that
        let cfg0 = RecoverConfig::default();
        let quad: Vec<f64> = (0..mesh.num_vertices())
            .map(|v| {
                let p = mesh.vertex(v);
                0.7 * p.x * p.x + 0.45 * p.y * p.y - 0.08 * p.x * p.y
            })
            .collect();
        let probe = network_dtn(&mesh, &quad).unwrap();
        let problem0 = build_problem(&probe, &mesh, &cfg0).unwrap();
        let base = initial_potential(&mesh, &problem0).unwrap();
        // push away from the optimizer's own starting point while staying
        // strictly inside the feasible cone
        let min_q = |s: &[f64]| {
            problem0
                .hinge_values(s)
                .iter()
                .map(|&(_, _, q)| q)
                .fold(f64::INFINITY, f64::min)
        };
        let base_min = min_q(&base);
        assert!(base_min > 0.0);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let delta: Vec<f64> = (0..mesh.num_vertices())
            .map(|_| rng.gen::<f64>() - 0.5)
            .collect();
        let mut scale = 1.0;
        let sh_true = loop {
            let cand: Vec<f64> = base
                .iter()
                .zip(&delta)
                .map(|(b, d)| b + scale * d)
                .collect();
            if min_q(&cand) > 0.3 * base_min {
                break cand;
            }
            scale *= 0.5;
            assert!(scale > 1e-12);
        };
        let target = network_dtn(&mesh, &sh_true).unwrap();
        let cfg = RecoverConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let report = recover_sh(&target, &mesh, &cfg).unwrap();
        assert!(
            report.final_misfit < 1e-8,
            "final misfit {}",
            report.final_misfit
        );
        // every recovered hinge conductivity stays strictly positive
        for (_, _, q) in report.qh.populated() {
            assert!(q > 0.0, "hinge conductivity {q}");
        }
        // the recovered network reproduces the target map
        let dtn = network_dtn(&mesh, &report.sh).unwrap();
        let mut worst = 0.0f64;
        for i in 0..dtn.matrix.len() {
            worst = worst.max((dtn.matrix[i] - target.matrix[i]).abs());
        }
        assert!(worst < 1e-4 * target.scale(), "dtn gap {worst}");
    }
}
