//! EIT: discrete Dirichlet-to-Neumann maps, the continuum forward map with
//! point measurements, and the two reconstruction pipelines.

mod anneal;
mod recover;
mod tv;

pub use anneal::{fit_coarse_network, AnnealConfig, CoarseFit};
pub use recover::{
    adjoint_gradient_check, network_dtn, quadratic_stencil_q, recover_sh, recovery_mesh,
    QuadStencil, RecoverConfig, RecoverReport,
};
pub use tv::{harmonic_iteration, tv_sigma_recovery, IterationReport, TvConfig};

use std::sync::Arc;

use thiserror::Error;

use crate::fem::{self, FemError};
use crate::homogenize::EdgeConductivities;
use crate::la::sparse::{SparseSym, SymSolver};
use crate::mesh::Mesh2D;
use crate::{Point2, Scalar};

#[derive(Debug, Error)]
pub enum EitError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Homogenize(#[from] crate::homogenize::HomogenizeError),
    #[error(transparent)]
    Field(#[from] crate::fields::FieldError),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error(transparent)]
    Lp(#[from] crate::la::lp::LpError),
    #[error("network has no interior vertices or no populated edges")]
    EmptyNetwork,
    #[error("measurement points must lie on the mesh boundary (point {idx})")]
    MeasurementOffBoundary { idx: usize },
    #[error("stencil for triangle {tri} is quadratically degenerate")]
    SingularStencil { tri: usize },
    #[error("initial potential is not strictly hinge-convex and the paraboloid fallback failed")]
    InfeasibleStart,
}

/// Discrete Dirichlet-to-Neumann map over a set of boundary points.
#[derive(Clone)]
pub struct DtNMatrix {
    /// boundary point coordinates, in boundary-loop order
    pub points: Vec<Point2>,
    /// row-major dense matrix, one row/column per boundary point
    pub matrix: Vec<Scalar>,
    pub provenance: String,
}

impl DtNMatrix {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n() + j]
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut f = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                f[i] += self.matrix[i * n + j] * g[j];
            }
        }
        f
    }

    /// Largest asymmetry |L_ij - L_ji|.
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Largest row sum |(L 1)_i|; the constants are the nullspace.
    pub fn row_sum_residual(&self) -> f64 {
        self.apply(&vec![1.0; self.n()])
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn scale(&self) -> f64 {
        self.matrix.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Trapezoidal boundary quadrature weights from the arc distances
    /// between consecutive measurement points.
    pub fn arc_weights(&self) -> Vec<f64> {
        let n = self.n();
        let mut w = vec![0.0; n];
        for i in 0..n {
            let prev = (i + n - 1) % n;
            let next = (i + 1) % n;
            let d1 = (self.points[i] - self.points[prev]).norm();
            let d2 = (self.points[next] - self.points[i]).norm();
            w[i] = 0.5 * (d1 + d2);
        }
        w
    }

    /// Boundary-weighted squared misfit of a single Dirichlet/Neumann pair.
    pub fn pair_misfit(&self, g: &[f64], f: &[f64]) -> f64 {
        let lf = self.apply(g);
        let w = self.arc_weights();
        lf.iter()
            .zip(f)
            .zip(&w)
            .map(|((a, b), wi)| wi * (a - b) * (a - b))
            .sum()
    }

    /// Additive symmetric Gaussian noise with the constant mode projected
    /// out; `rel` scales against the largest entry.
    pub fn add_noise(&mut self, rel: f64, seed: u64) {
        use rand::SeedableRng;
        use rand_distr_like_normal::sample_standard_normal;
        let n = self.n();
        let scale = rel * self.scale();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut noise = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let z = scale * sample_standard_normal(&mut rng);
                noise[i * n + j] = z;
                noise[j * n + i] = z;
            }
        }
        // double-center so constants stay in the nullspace
        let mut row_mean = vec![0.0; n];
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                row_mean[i] += noise[i * n + j] / n as f64;
                total += noise[i * n + j] / (n * n) as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                self.matrix[i * n + j] += noise[i * n + j] - row_mean[i] - row_mean[j] + total;
            }
        }
    }

    /// Thresholded spectral misfit against this matrix as the reference:
    /// modes of the reference with |eigenvalue| below `threshold_rel` times
    /// the spectral norm are down-weighted by `small_mode_weight`.
    pub fn thresholded_misfit(
        &self,
        other: &DtNMatrix,
        threshold_rel: f64,
        small_mode_weight: f64,
    ) -> f64 {
        let n = self.n();
        let mut dense = crate::la::dense::DenseSym::zeros(n);
        for i in 0..n {
            for j in 0..n {
                dense.data[i * n + j] = 0.5 * (self.get(i, j) + self.get(j, i));
            }
        }
        let (vals, vecs) = crate::la::dense::jacobi_eigh(&dense);
        let spectral = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut acc = 0.0;
        for (k, vk) in vecs.iter().enumerate() {
            let weight = if vals[k].abs() < threshold_rel * spectral {
                small_mode_weight
            } else {
                1.0
            };
            // v' (A - B) v in the reference eigenbasis
            let mut diff = 0.0;
            for i in 0..n {
                for j in 0..n {
                    diff += vk[i] * (self.get(i, j) - other.get(i, j)) * vk[j];
                }
            }
            acc += weight * diff * diff;
        }
        acc.sqrt()
    }
}

// Small local normal sampler so the crate does not need rand_distr.
mod rand_distr_like_normal {
    use rand::Rng;
    pub fn sample_standard_normal(rng: &mut impl Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// DtN map of an abstract conductance network by Schur complement onto the
/// boundary index set: one interior solve per boundary vertex.
pub fn dtn_from_network(
    n: usize,
    is_boundary: &[bool],
    edges: &[(usize, usize, f64)],
    points: &[Point2],
    provenance: &str,
) -> Result<DtNMatrix, EitError> {
    let boundary: Vec<usize> = (0..n).filter(|&v| is_boundary[v]).collect();
    let interior: Vec<usize> = (0..n).filter(|&v| !is_boundary[v]).collect();
    if boundary.is_empty() || edges.is_empty() {
        return Err(EitError::EmptyNetwork);
    }
    let mut pos_i = vec![usize::MAX; n];
    for (slot, &v) in interior.iter().enumerate() {
        pos_i[v] = slot;
    }
    let mut pos_b = vec![usize::MAX; n];
    for (slot, &v) in boundary.iter().enumerate() {
        pos_b[v] = slot;
    }
    // graph Laplacian blocks
    let nb = boundary.len();
    let ni = interior.len();
    let mut l_bb = vec![0.0; nb * nb];
    let mut l_ib: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ni]; // rows over interior
    let mut tri_ii = Vec::new();
    for &(a, b, q) in edges {
        for (u, v) in [(a, b), (b, a)] {
            // diagonal
            if pos_i[u] != usize::MAX {
                tri_ii.push((pos_i[u], pos_i[u], q));
            } else {
                l_bb[pos_b[u] * nb + pos_b[u]] += q;
            }
            // off-diagonal u-v
            match (pos_i[u] != usize::MAX, pos_i[v] != usize::MAX) {
                (true, true) => tri_ii.push((pos_i[u], pos_i[v], -q)),
                (true, false) => l_ib[pos_i[u]].push((pos_b[v], -q)),
                (false, true) => {} // handled from the transposed pair
                (false, false) => l_bb[pos_b[u] * nb + pos_b[v]] += -q,
            }
        }
    }
    let mut matrix = vec![0.0; nb * nb];
    if ni > 0 {
        let kii = SparseSym::from_triplets(ni, &mut tri_ii);
        let solver = SymSolver::new(kii).map_err(FemError::SolverBreakdown)?;
        for k in 0..nb {
            // rhs = -L_IB e_k
            let mut rhs = vec![0.0; ni];
            for (row, entries) in l_ib.iter().enumerate() {
                for &(col, val) in entries {
                    if col == k {
                        rhs[row] = -val;
                    }
                }
            }
            let u = solver.solve(&rhs).map_err(FemError::SolverBreakdown)?;
            // column k of L_BI u + L_BB e_k; L_BI = L_IB'
            let mut fcol = vec![0.0; nb];
            for (row, entries) in l_ib.iter().enumerate() {
                for &(col, val) in entries {
                    fcol[col] += val * u[row];
                }
            }
            for i in 0..nb {
                fcol[i] += l_bb[i * nb + k];
            }
            for i in 0..nb {
                matrix[i * nb + k] = fcol[i];
            }
        }
    } else {
        matrix.copy_from_slice(&l_bb);
    }
    Ok(DtNMatrix {
        points: points.to_vec(),
        matrix,
        provenance: provenance.into(),
    })
}

/// Discrete DtN map of an edge-conductivity network on a mesh; boundary
/// vertex order follows the boundary loop.
pub fn discrete_dtn(qh: &EdgeConductivities) -> Result<DtNMatrix, EitError> {
    let mesh = qh.mesh();
    let loop_order = mesh.boundary_loop()?;
    let edges: Vec<(usize, usize, f64)> = qh.populated().collect();
    let is_boundary: Vec<bool> = (0..mesh.num_vertices())
        .map(|v| mesh.is_boundary_vertex(v))
        .collect();
    // dtn_from_network orders boundary columns by vertex index; remap to the
    // loop order afterwards
    let dtn = dtn_from_network(
        mesh.num_vertices(),
        &is_boundary,
        &edges,
        &loop_order.iter().map(|&v| mesh.vertex(v)).collect::<Vec<_>>(),
        "discrete-network",
    )?;
    let sorted: Vec<usize> = {
        let mut b: Vec<usize> = (0..mesh.num_vertices())
            .filter(|&v| mesh.is_boundary_vertex(v))
            .collect();
        b.sort_unstable();
        b
    };
    let mut slot_of_vertex = std::collections::HashMap::new();
    for (slot, &v) in sorted.iter().enumerate() {
        slot_of_vertex.insert(v, slot);
    }
    let nb = dtn.n();
    let mut matrix = vec![0.0; nb * nb];
    for (i, &vi) in loop_order.iter().enumerate() {
        for (j, &vj) in loop_order.iter().enumerate() {
            matrix[i * nb + j] = dtn.get(slot_of_vertex[&vi], slot_of_vertex[&vj]);
        }
    }
    Ok(DtNMatrix {
        points: dtn.points,
        matrix,
        provenance: "discrete-network".into(),
    })
}

/// Continuum forward map: solve the fine Dirichlet problem for hat data
/// supported at the measurement points (piecewise linear in arc length
/// between them) and read the flux functional back at the measurement
/// points.
pub fn forward_dtn(
    mesh: &Arc<Mesh2D>,
    sigma: &impl fem::Coefficient,
    measurement_vertices: &[usize],
) -> Result<DtNMatrix, EitError> {
    let loop_order = mesh.boundary_loop()?;
    let m = measurement_vertices.len();
    for (idx, &v) in measurement_vertices.iter().enumerate() {
        if !mesh.is_boundary_vertex(v) {
            return Err(EitError::MeasurementOffBoundary { idx });
        }
    }
    // positions of the measurement vertices along the boundary loop
    let mut loop_pos = std::collections::HashMap::new();
    for (pos, &v) in loop_order.iter().enumerate() {
        loop_pos.insert(v, pos);
    }
    let mut meas: Vec<(usize, usize)> = measurement_vertices
        .iter()
        .map(|&v| (loop_pos[&v], v))
        .collect();
    meas.sort_unstable();

    // interpolation matrix P: boundary vertex -> weights over measurement
    // points, linear in arc length within each measurement segment
    let nl = loop_order.len();
    let arc = {
        let mut a = vec![0.0; nl + 1];
        for i in 0..nl {
            let p = mesh.vertex(loop_order[i]);
            let q = mesh.vertex(loop_order[(i + 1) % nl]);
            a[i + 1] = a[i] + (q - p).norm();
        }
        a
    };
    let mut p_weights: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mesh.num_vertices()];
    for seg in 0..m {
        let (start_pos, _) = meas[seg];
        let (end_pos, _) = meas[(seg + 1) % m];
        let seg_len = if seg + 1 == m {
            arc[nl] - arc[start_pos] + arc[end_pos]
        } else {
            arc[end_pos] - arc[start_pos]
        };
        let mut pos = start_pos;
        loop {
            let v = loop_order[pos];
            let t = if pos >= start_pos {
                (arc[pos] - arc[start_pos]) / seg_len
            } else {
                (arc[nl] - arc[start_pos] + arc[pos]) / seg_len
            };
            if pos == start_pos {
                p_weights[v].push((seg, 1.0));
            } else if t > 0.0 && t < 1.0 {
                p_weights[v].push((seg, 1.0 - t));
                p_weights[v].push(((seg + 1) % m, t));
            }
            pos = (pos + 1) % nl;
            if pos == end_pos {
                break;
            }
        }
    }

    let k = fem::assemble(mesh, sigma);
    let mut matrix = vec![0.0; m * m];
    for col in 0..m {
        let g: Vec<f64> = (0..mesh.num_vertices())
            .map(|v| {
                p_weights[v]
                    .iter()
                    .filter(|(s, _)| *s == col)
                    .map(|(_, w)| *w)
                    .sum()
            })
            .collect();
        let zero = vec![0.0; mesh.num_vertices()];
        let u = fem::solve_dirichlet_assembled(mesh, &k, &zero, &g)?;
        let flux = k.full.matvec(&u);
        // f at measurement points through the transposed interpolation
        let mut fm = vec![0.0; m];
        for v in 0..mesh.num_vertices() {
            if !mesh.is_boundary_vertex(v) {
                continue;
            }
            for &(s, w) in &p_weights[v] {
                fm[s] += w * flux[v];
            }
        }
        for row in 0..m {
            matrix[row * m + col] = fm[row];
        }
    }
    let points: Vec<Point2> = meas.iter().map(|&(_, v)| mesh.vertex(v)).collect();
    Ok(DtNMatrix {
        points,
        matrix,
        provenance: "continuum-forward".into(),
    })
}

/// Evenly spread measurement vertices along the boundary loop.
pub fn spread_measurement_vertices(mesh: &Mesh2D, count: usize) -> Result<Vec<usize>, EitError> {
    let loop_order = mesh.boundary_loop()?;
    let nl = loop_order.len();
    let picks: Vec<usize> = (0..count)
        .map(|k| loop_order[(k * nl) / count])
        .collect();
    Ok(picks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::v2;
    use crate::la::dense::{jacobi_eigh, DenseSym};
    use crate::mesh::grid_mesh;
    use crate::Tensor2;
    use rand::{Rng, SeedableRng};

    #[test]
    fn series_resistors_reduce_to_effective_conductance() {
        // boundary 0 - interior 1 - boundary 2 with conductances a, b
        let (a, b) = (2.0, 3.0);
        let dtn = dtn_from_network(
            3,
            &[true, false, true],
            &[(0, 1, a), (1, 2, b)],
            &[v2(0.0, 0.0), v2(1.0, 0.0)],
            "series",
        )
        .unwrap();
        let eff = a * b / (a + b);
        assert!((dtn.get(0, 0) - eff).abs() < 1e-12);
        assert!((dtn.get(0, 1) + eff).abs() < 1e-12);
        assert!(dtn.row_sum_residual() < 1e-12);
        assert!(dtn.symmetry_residual() < 1e-12);
    }

    #[test]
    fn schur_complement_oracle_on_small_networks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for case in 0..20 {
            let n = 4 + (case % 3);
            // random connected-ish network: ring plus random chords
            let mut edges: Vec<(usize, usize, f64)> = (0..n)
                .map(|i| (i, (i + 1) % n, 0.5 + rng.gen::<f64>()))
                .collect();
            for _ in 0..n {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                if a != b && !edges.iter().any(|&(u, v, _)| (u, v) == (a, b) || (v, u) == (a, b))
                {
                    edges.push((a, b, 0.5 + rng.gen::<f64>()));
                }
            }
            let mut is_boundary = vec![false; n];
            for v in 0..n {
                is_boundary[v] = v % 2 == 0 || v < 2;
            }
            let points: Vec<Point2> = (0..n).map(|i| v2(i as f64, 0.0)).collect();
            let bpts: Vec<Point2> = (0..n).filter(|&v| is_boundary[v]).map(|v| points[v]).collect();
            let dtn = dtn_from_network(n, &is_boundary, &edges, &bpts, "t").unwrap();

            // dense Schur complement oracle
            let mut l = vec![vec![0.0; n]; n];
            for &(u, v, q) in &edges {
                l[u][u] += q;
                l[v][v] += q;
                l[u][v] -= q;
                l[v][u] -= q;
            }
            let bnd: Vec<usize> = (0..n).filter(|&v| is_boundary[v]).collect();
            let int: Vec<usize> = (0..n).filter(|&v| !is_boundary[v]).collect();
            let nb = bnd.len();
            let ni = int.len();
            let mut schur = vec![vec![0.0; nb]; nb];
            for (i, &bi) in bnd.iter().enumerate() {
                for (j, &bj) in bnd.iter().enumerate() {
                    schur[i][j] = l[bi][bj];
                }
            }
            if ni > 0 {
                // invert L_II densely via Gaussian elimination on columns
                for (j, &bj) in bnd.iter().enumerate() {
                    let rhs: Vec<f64> = int.iter().map(|&ii| l[ii][bj]).collect();
                    let aii: Vec<Vec<f64>> = int
                        .iter()
                        .map(|&r| int.iter().map(|&c| l[r][c]).collect())
                        .collect();
                    let x = crate::la::dense::lu_solve(&aii, &rhs).unwrap();
                    for (i, &bi) in bnd.iter().enumerate() {
                        let mut dot = 0.0;
                        for (kk, &ik) in int.iter().enumerate() {
                            dot += l[bi][ik] * x[kk];
                        }
                        schur[i][j] -= dot;
                    }
                }
            }
            for i in 0..nb {
                for j in 0..nb {
                    assert!(
                        (dtn.get(i, j) - schur[i][j]).abs() < 1e-10,
                        "case {case} entry ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn forward_dtn_invariants_and_scaling() {
        let mesh = Arc::new(grid_mesh(0.0, 0.0, 1.0, 1.0, 10, 10));
        let meas = spread_measurement_vertices(&mesh, 8).unwrap();
        let dtn1 = forward_dtn(&mesh, &Tensor2::iso(1.0), &meas).unwrap();
        assert!(dtn1.symmetry_residual() < 1e-10 * dtn1.scale());
        assert!(dtn1.row_sum_residual() < 1e-10 * dtn1.scale());
        let dtn3 = forward_dtn(&mesh, &Tensor2::iso(3.0), &meas).unwrap();
        for (a, b) in dtn1.matrix.iter().zip(&dtn3.matrix) {
            assert!((a * 3.0 - b).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_dtn_self_converges_under_refinement() {
        let coarse = Arc::new(grid_mesh(0.0, 0.0, 1.0, 1.0, 8, 8));
        let sigma = crate::phantom::Phantom::blob();
        let mut results = Vec::new();
        for levels in [1usize, 2] {
            let (fine, _) = coarse.refine(levels);
            let fine = Arc::new(fine);
            let meas = spread_measurement_vertices(&fine, 8).unwrap();
            let field = sigma.on_mesh(Arc::clone(&fine)).unwrap();
            results.push(forward_dtn(&fine, &field, &meas).unwrap());
        }
        let n = results[0].n();
        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for i in 0..n * n {
            diff += (results[0].matrix[i] - results[1].matrix[i]).powi(2);
            norm += results[1].matrix[i].powi(2);
        }
        let rel = (diff / norm).sqrt();
        assert!(rel < 0.05, "self-convergence gap {rel}");
    }

    #[test]
    fn pushforward_invariance_of_the_dtn_map() {
        // a boundary-fixing diffeomorphism leaves the DtN map unchanged up
        // to discretization error
        let warp = |p: Point2| {
            let bump = 0.07 * (std::f64::consts::PI * p.x).sin() * (std::f64::consts::PI * p.y).sin();
            v2(p.x + bump, p.y - 0.5 * bump)
        };
        let dwarp = |p: Point2| {
            let h = 1e-6;
            let dx = (warp(v2(p.x + h, p.y)) - warp(v2(p.x - h, p.y))).scale(0.5 / h);
            let dy = (warp(v2(p.x, p.y + h)) - warp(v2(p.x, p.y - h))).scale(0.5 / h);
            crate::geom::Mat2 {
                a: dx.x,
                b: dy.x,
                c: dx.y,
                d: dy.y,
            }
        };
        let sigma_fn = |p: Point2| Tensor2::iso(1.0 + 0.8 * p.x * p.y);
        let mut gaps = Vec::new();
        for n in [12usize, 24] {
            let mesh = Arc::new(grid_mesh(0.0, 0.0, 1.0, 1.0, n, n));
            let meas = spread_measurement_vertices(&mesh, 8).unwrap();
            let d1 = forward_dtn(&mesh, &sigma_fn, &meas).unwrap();
            // push-forward evaluated analytically at y = warp(x):
            // sigma~(y) = (J sigma J') / det J at x = warp^{-1}(y); sample by
            // evaluating at x such that warp(x) = centroid via fixed point
            let pushed = |y: Point2| {
                let mut x = y;
                for _ in 0..50 {
                    let r = warp(x) - y;
                    if r.norm() < 1e-13 {
                        break;
                    }
                    let j = dwarp(x);
                    let inv = j.inverse().unwrap();
                    x = x - inv.apply(r);
                }
                let j = dwarp(x);
                let s = sigma_fn(x);
                // (J s J^T)/det: congruence computes A' S A, so use A = J'
                j.transpose().congruence(s).scale(1.0 / j.det())
            };
            let d2 = forward_dtn(&mesh, &pushed, &meas).unwrap();
            let mut diff = 0.0f64;
            let mut norm = 0.0f64;
            for i in 0..d1.matrix.len() {
                diff += (d1.matrix[i] - d2.matrix[i]).powi(2);
                norm += d1.matrix[i].powi(2);
            }
            gaps.push((diff / norm).sqrt());
        }
        assert!(gaps[1] < gaps[0], "gap must shrink: {gaps:?}");
        assert!(gaps[1] < 0.05, "{gaps:?}");
    }

    #[test]
    fn thresholded_misfit_is_zero_on_self() {
        let mesh = Arc::new(grid_mesh(0.0, 0.0, 1.0, 1.0, 6, 6));
        let meas = spread_measurement_vertices(&mesh, 6).unwrap();
        let dtn = forward_dtn(&mesh, &Tensor2::iso(1.0), &meas).unwrap();
        assert!(dtn.thresholded_misfit(&dtn, 1e-3, 0.1) < 1e-12);
        // eigen decomposition of the dense DtN works
        let n = dtn.n();
        let mut d = DenseSym::zeros(n);
        d.data.copy_from_slice(&dtn.matrix);
        let (vals, _) = jacobi_eigh(&d);
        assert!(vals[0].abs() < 1e-9, "constant mode eigenvalue near zero");
    }

    #[test]
    fn noise_preserves_structure() {
        let mesh = Arc::new(grid_mesh(0.0, 0.0, 1.0, 1.0, 6, 6));
        let meas = spread_measurement_vertices(&mesh, 6).unwrap();
        let mut dtn = forward_dtn(&mesh, &Tensor2::iso(1.0), &meas).unwrap();
        let clean = dtn.clone();
        dtn.add_noise(0.01, 42);
        assert!(dtn.symmetry_residual() < 1e-10);
        assert!(dtn.row_sum_residual() < 1e-10);
        let moved: f64 = dtn
            .matrix
            .iter()
            .zip(&clean.matrix)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(moved > 0.0);
    }
}
