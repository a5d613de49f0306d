//! Total-variation recovery of a piecewise-constant scalar conductivity
//! from effective edge conductivities, and the harmonic-coordinate
//! iteration that alternates it with fresh harmonic coordinates.

use std::sync::Arc;

use super::{forward_dtn, DtNMatrix, EitError};
use crate::fem::{self, HarmonicMap};
use crate::fields::{SigmaField, TensorCarrier};
use crate::homogenize::{Composition, EdgeConductivities};
use crate::la::lp::{solve_lp, LinearProgram};
use crate::mesh::Mesh2D;
use crate::{Point2, Tensor2};

#[derive(Clone, Debug)]
pub struct TvConfig {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub max_lp_iter: usize,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig {
            sigma_lo: 1e-3,
            sigma_hi: 1e3,
            max_lp_iter: 20_000,
        }
    }
}

/// Minimise the discrete total variation of a scalar conductivity on the
/// fine mesh subject to reproducing the coarse edge conductivities through
/// the given harmonic coordinates:
///
///   minimise sum_e |e| |sigma_s - sigma_t|
///   subject to -int grad(phi_i o F)' sigma grad(phi_j o F) = q_ij.
///
/// The absolute values split into nonnegative pairs, making the problem a
/// linear program.
pub fn tv_sigma_recovery(
    targets: &EdgeConductivities,
    fmap: &HarmonicMap,
    fine: &Arc<Mesh2D>,
    config: &TvConfig,
) -> Result<(SigmaField, f64), EitError> {
    let coarse = targets.mesh();
    let composition = Composition::new(coarse, fmap);
    let nt = fine.num_triangles();

    // per-fine-triangle gradient of each coarse hat composed with F
    let mut per_vertex: Vec<Vec<(usize, f64)>> = vec![Vec::new(); fine.num_vertices()];
    for &(c, v, w) in composition.entries() {
        per_vertex[v].push((c, w));
    }
    // constraint rows: one per populated coarse edge
    let edges: Vec<(usize, usize, f64)> = targets.populated().collect();
    let mut rows = vec![vec![0.0; nt]; edges.len()];
    let mut edge_index = std::collections::HashMap::new();
    for (r, &(a, b, _)) in edges.iter().enumerate() {
        edge_index.insert((a.min(b), a.max(b)), r);
    }
    for t in 0..nt {
        let tri = fine.triangle(t);
        let area = fine.tri_area(t);
        // gradients of all coarse hats with support on this fine triangle
        let mut grads: std::collections::HashMap<usize, Point2> = Default::default();
        for lv in 0..3 {
            let g = fine.hat_gradient(t, lv);
            for &(c, w) in &per_vertex[tri[lv]] {
                let e = grads.entry(c).or_insert(Point2::zero());
                *e = *e + g.scale(w);
            }
        }
        let items: Vec<(usize, Point2)> = grads.into_iter().collect();
        for (ii, &(ci, gi)) in items.iter().enumerate() {
            for &(cj, gj) in items.iter().skip(ii + 1) {
                let key = (ci.min(cj), ci.max(cj));
                if let Some(&r) = edge_index.get(&key) {
                    // -sigma * area * gi . gj summed over triangles = q
                    rows[r][t] += -area * gi.dot(gj);
                }
            }
        }
    }

    // interior fine edges define the TV couplings
    let couplings: Vec<(usize, usize, f64)> = fine
        .interior_edges()
        .map(|(id, e)| {
            let [t1, t2] = [e.tris[0].unwrap(), e.tris[1].unwrap()];
            let len = (fine.vertex(e.b) - fine.vertex(e.a)).norm();
            let _ = id;
            (t1, t2, len)
        })
        .collect();
    let ne = couplings.len();

    // variables: sigma (nt), p (ne), q (ne)
    let nvar = nt + 2 * ne;
    let mut c = vec![0.0; nvar];
    for (k, &(_, _, len)) in couplings.iter().enumerate() {
        c[nt + k] = len;
        c[nt + ne + k] = len;
    }
    let mut lp_rows = Vec::with_capacity(edges.len() + ne);
    let mut rhs = Vec::with_capacity(edges.len() + ne);
    let global_scale = rows
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let q_scale = edges.iter().fold(0.0f64, |m, &(_, _, q)| m.max(q.abs()));
    for (r, &(_, _, qv)) in edges.iter().enumerate() {
        let scale = rows[r].iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if scale <= 1e-12 * global_scale {
            // an identically vanishing form row (right-angle hinges of the
            // identity medium, for instance) carries no constraint; its
            // target must vanish too or no conductivity can reproduce it
            if qv.abs() > 1e-8 * q_scale.max(1e-300) {
                return Err(EitError::Lp(crate::la::lp::LpError::Infeasible {
                    row: r,
                    residual: qv.abs(),
                }));
            }
            continue;
        }
        let mut full = vec![0.0; nvar];
        for t in 0..nt {
            full[t] = rows[r][t] / scale;
        }
        lp_rows.push(full);
        rhs.push(qv / scale);
    }
    for (k, &(t1, t2, _)) in couplings.iter().enumerate() {
        let mut full = vec![0.0; nvar];
        full[t1] += 1.0;
        full[t2] -= 1.0;
        full[nt + k] = -1.0;
        full[nt + ne + k] = 1.0;
        lp_rows.push(full);
        rhs.push(0.0);
    }
    let mut lower = vec![0.0; nvar];
    let mut upper = vec![f64::INFINITY; nvar];
    for t in 0..nt {
        lower[t] = config.sigma_lo;
        upper[t] = config.sigma_hi;
    }
    let lp = LinearProgram {
        c,
        rows: lp_rows,
        rhs,
        lower,
        upper,
    };
    let solution = solve_lp(&lp, config.max_lp_iter)?;
    let values: Vec<Tensor2> = solution.x[..nt].iter().map(|&v| Tensor2::iso(v)).collect();
    let sigma = SigmaField::new(TensorCarrier::MeshCells {
        mesh: Arc::clone(fine),
        values,
    })?;
    Ok((sigma, solution.objective))
}

/// Per-iteration record of the harmonic-coordinate iteration.
pub struct IterationReport {
    /// DtN misfit of the recovered fine conductivity after each iteration
    pub misfit_history: Vec<f64>,
    pub tv_history: Vec<f64>,
    pub best_iteration: usize,
    pub best_sigma: SigmaField,
    pub best_misfit: f64,
    /// true when the instability guard stopped the iteration
    pub instability_detected: bool,
}

/// Alternate TV recovery and harmonic-coordinate updates, starting from
/// F = identity. Stops after `n_iters` or once the DtN misfit increases for
/// three consecutive iterations; the best iterate is kept either way.
pub fn harmonic_iteration(
    targets: &EdgeConductivities,
    target_dtn: &DtNMatrix,
    fine: &Arc<Mesh2D>,
    measurement_vertices: &[usize],
    n_iters: usize,
    config: &TvConfig,
) -> Result<IterationReport, EitError> {
    let mut fmap = HarmonicMap::identity(Arc::clone(fine));
    let mut misfits = Vec::new();
    let mut tvs = Vec::new();
    let mut best: Option<(usize, SigmaField, f64)> = None;
    let mut worse_streak = 0usize;
    let mut unstable = false;
    for iter in 0..n_iters {
        let (sigma, tv) = tv_sigma_recovery(targets, &fmap, fine, config)?;
        let dtn = forward_dtn(fine, &sigma, measurement_vertices)?;
        let misfit = target_dtn.thresholded_misfit(&dtn, 1e-3, 0.1);
        misfits.push(misfit);
        tvs.push(tv);
        match &best {
            Some((_, _, bm)) if misfit >= *bm => {
                worse_streak += 1;
                if worse_streak >= 3 {
                    unstable = true;
                    break;
                }
            }
            _ => {
                worse_streak = 0;
                best = Some((iter, sigma.clone(), misfit));
            }
        }
        // refresh the harmonic coordinates from the current conductivity;
        // instability shows up as a non-injective map or a worsening misfit
        match fem::harmonic_coordinates(fine, &sigma) {
            Ok(f) => fmap = f,
            Err(_) => {
                unstable = true;
                break;
            }
        }
    }
    let (best_iteration, best_sigma, best_misfit) = best.ok_or(EitError::EmptyNetwork)?;
    Ok(IterationReport {
        misfit_history: misfits,
        tv_history: tvs,
        best_iteration,
        best_sigma,
        best_misfit,
        instability_detected: unstable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogenize::{qh_from_q, qh_from_q_all_edges};
    use crate::mesh::grid_mesh;

    #[test]
    fn constant_medium_recovers_constant_sigma() {
        let coarse = Arc::new(grid_mesh(0.0, 0.0, 1.0, 1.0, 3, 3));
        let (fine, _) = coarse.refine(1);
        let fine = Arc::new(fine);
        let c0 = 2.5;
        let targets = qh_from_q(&coarse, &Tensor2::iso(c0));
        let fmap = HarmonicMap::identity(Arc::clone(&fine));
        let (sigma, tv) = tv_sigma_recovery(&targets, &fmap, &fine, &TvConfig::default()).unwrap();
        assert!(tv < 1e-7, "tv {tv}");
        for t in sigma.carrier.values() {
            assert!((t.a11 - c0).abs() < 1e-6, "{}", t.a11);
        }
    }

    #[test]
    fn aligned_discontinuity_is_recovered_exactly() {
        // two-level sigma with the jump on a coarse mesh line; the fine mesh
        // resolves it, so the true sigma is feasible and TV-minimal
        let coarse = Arc::new(grid_mesh(0.0, 0.0, 1.0, 1.0, 4, 4));
        let (fine, _) = coarse.refine(1);
        let fine = Arc::new(fine);
        let truth = |p: Point2| if p.x < 0.5 { 1.0 } else { 3.0 };
        let sigma_true = SigmaField::new(TensorCarrier::mesh_from_fn(Arc::clone(&coarse), |p| {
            Tensor2::iso(truth(p))
        }))
        .unwrap();
        let targets = qh_from_q(&coarse, &sigma_true);
        let fmap = HarmonicMap::identity(Arc::clone(&fine));
        let (sigma, tv) = tv_sigma_recovery(&targets, &fmap, &fine, &TvConfig::default()).unwrap();
        // TV of the truth: jump of 2 along a unit-length vertical line
        let expected_tv = 2.0;
        assert!(
            (tv - expected_tv).abs() < 1e-5,
            "tv {tv} vs {expected_tv}"
        );
        for (t, v) in sigma.carrier.values().iter().enumerate() {
            let c = fine.tri_centroid(t);
            assert!(
                (v.a11 - truth(c)).abs() < 1e-5,
                "triangle {t} at {c:?}: {}",
                v.a11
            );
        }
    }

    #[test]
    fn objective_invariant_under_triangle_relabeling() {
        let coarse = Arc::new(grid_mesh(0.0, 0.0, 1.0, 1.0, 2, 2));
        let (fine0, _) = coarse.refine(1);
        let truth = |p: Point2| Tensor2::iso(if p.y < 0.5 { 1.0 } else { 2.0 });
        let sigma_true =
            SigmaField::new(TensorCarrier::mesh_from_fn(Arc::clone(&coarse), truth)).unwrap();
        let targets = qh_from_q(&coarse, &sigma_true);
        // permute the fine triangle order
        let mut tris = fine0.triangles().to_vec();
        tris.reverse();
        let fine1 = Arc::new(crate::mesh::build_mesh(fine0.vertices().to_vec(), tris).unwrap());
        let fine0 = Arc::new(fine0);
        let cfg = TvConfig::default();
        let (_, tv0) =
            tv_sigma_recovery(&targets, &HarmonicMap::identity(Arc::clone(&fine0)), &fine0, &cfg)
                .unwrap();
        let (_, tv1) =
            tv_sigma_recovery(&targets, &HarmonicMap::identity(Arc::clone(&fine1)), &fine1, &cfg)
                .unwrap();
        assert!((tv0 - tv1).abs() < 1e-8, "{tv0} vs {tv1}");
    }

    #[test]
    fn constant_medium_iteration_converges_immediately() {
        let coarse = Arc::new(grid_mesh(0.0, 0.0, 1.0, 1.0, 3, 3));
        let (fine, _) = coarse.refine(2);
        let fine = Arc::new(fine);
        let targets = qh_from_q_all_edges(&coarse, &Tensor2::iso(1.0));
        let meas = crate::eit::spread_measurement_vertices(&fine, 8).unwrap();
        let dtn = forward_dtn(&fine, &Tensor2::iso(1.0), &meas).unwrap();
        let report =
            harmonic_iteration(&targets, &dtn, &fine, &meas, 3, &TvConfig::default()).unwrap();
        assert_eq!(report.best_iteration, 0);
        assert!(report.misfit_history[0] < 1e-6 * dtn.scale().max(1.0));
    }
}
