//! Homogenization operators: effective edge conductivities by direct
//! change-of-variables assembly, by volume averaging of a divergence-free
//! field, and by the four-vertex hinge formula on a scalar potential;
//! the coarse homogenized solve; and the scale-coarsening semi-group.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::fem::{self, FemError, HarmonicMap};
use crate::fields::{FieldError, SField, SigmaField};
use crate::la::sparse::{SparseSym, SymSolver};
use crate::mesh::{Mesh2D, Prolongation};
use crate::Point2;

#[derive(Debug, Error)]
pub enum HomogenizeError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("edge ({a}, {b}) has no complete hinge (boundary edge without ghosts)")]
    IncompleteHinge { a: usize, b: usize },
    #[error("prolongation shape does not match the meshes ({what})")]
    MeshMismatch { what: String },
    #[error("hinge system rank deficient beyond the affine gauge")]
    GaugeDeficiency,
}

/// Effective conductivities attached to mesh edges. Entries exist for the
/// edges a construction route populated: hinge-complete (two-triangle) edges
/// for the homogenization operators, all edges for EIT networks.
#[derive(Clone)]
pub struct EdgeConductivities {
    mesh: Arc<Mesh2D>,
    values: Vec<Option<f64>>,
    pub mesh_hash: u64,
}

impl EdgeConductivities {
    pub fn empty(mesh: Arc<Mesh2D>) -> Self {
        let values = vec![None; mesh.num_edges()];
        let mesh_hash = mesh.content_hash();
        EdgeConductivities {
            mesh,
            values,
            mesh_hash,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh2D> {
        &self.mesh
    }

    pub fn set(&mut self, a: usize, b: usize, q: f64) {
        let id = self.mesh.edge_id(a, b).expect("edge exists");
        self.values[id] = Some(q);
    }

    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        self.mesh.edge_id(a, b).and_then(|id| self.values[id])
    }

    pub fn get_edge(&self, id: usize) -> Option<f64> {
        self.values[id]
    }

    pub fn set_edge(&mut self, id: usize, q: f64) {
        self.values[id] = Some(q);
    }

    pub fn populated(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values.iter().enumerate().filter_map(|(id, v)| {
            v.map(|q| {
                let e = self.mesh.edge(id);
                (e.a, e.b, q)
            })
        })
    }

    pub fn num_populated(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Scale of the entries, used to build relative tolerances.
    pub fn magnitude(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0f64, |m, &q| m.max(q.abs()))
    }

    /// Graph-Laplacian application: out_i = sum_j q_ij (u_i - u_j) over
    /// populated edges.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.num_vertices()];
        for (a, b, q) in self.populated() {
            let d = u[a] - u[b];
            out[a] += q * d;
            out[b] -= q * d;
        }
        out
    }

    /// Discrete Dirichlet energy 1/2 sum q_ij (u_i - u_j)^2.
    pub fn energy(&self, u: &[f64]) -> f64 {
        0.5 * self
            .populated()
            .map(|(a, b, q)| {
                let d = u[a] - u[b];
                q * d * d
            })
            .sum::<f64>()
    }

    /// Worst violation of the discrete divergence-free identity over
    /// interior vertices and both coordinate directions:
    /// sum_{j~i} q_ij (l.x_j - l.x_i) = 0 with q_ii = -sum_j q_ij.
    pub fn divergence_residual(&self) -> f64 {
        let mut res = vec![Point2::zero(); self.mesh.num_vertices()];
        for (a, b, q) in self.populated() {
            let d = self.mesh.vertex(b) - self.mesh.vertex(a);
            res[a] = res[a] + d.scale(q);
            res[b] = res[b] - d.scale(q);
        }
        let mut worst = 0.0f64;
        for v in self.mesh.interior_vertices() {
            worst = worst.max(res[v].x.abs()).max(res[v].y.abs());
        }
        worst
    }

    /// Reduced graph-Laplacian system over interior vertices (boundary
    /// values fixed to zero by the homogenized problem's Dirichlet setup).
    fn interior_system(&self) -> (Vec<usize>, SparseSym) {
        let interior = self.mesh.interior_vertices();
        let mut pos = vec![usize::MAX; self.mesh.num_vertices()];
        for (slot, &v) in interior.iter().enumerate() {
            pos[v] = slot;
        }
        let mut triplets = Vec::new();
        for (a, b, q) in self.populated() {
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
        (
            interior.clone(),
            SparseSym::from_triplets(interior.len(), &mut triplets),
        )
    }
}

/// The discrete homogenized solution on the coarse mesh.
pub struct CoarseSolution {
    /// per-vertex values; zero on the boundary
    pub values: Vec<f64>,
}

impl CoarseSolution {
    /// Reconstruct u_h = sum u_i (phi_i o F) as a PL function on the fine
    /// mesh underlying the operator.
    pub fn reconstruct(&self, op: &HomogenizedOperator) -> Vec<f64> {
        op.composition.transpose_apply(&self.values)
    }
}

/// Sparse matrix of coarse-hat values at mapped fine vertices:
/// C[i][v] = phi_i(F(x_v)).
pub struct Composition {
    pub coarse_n: usize,
    pub fine_n: usize,
    entries: Vec<(usize, usize, f64)>, // (coarse, fine, weight)
}

impl Composition {
    pub fn new(coarse: &Mesh2D, fmap: &HarmonicMap) -> Self {
        let fine_n = fmap.mesh.num_vertices();
        let mut entries = Vec::with_capacity(3 * fine_n);
        let mut hint = 0usize;
        for v in 0..fine_n {
            let y = fmap.image(v);
            if let Some((t, bc)) = coarse.locate(y, hint) {
                hint = t;
                let tri = coarse.triangle(t);
                for k in 0..3 {
                    if bc[k].abs() > 1e-14 {
                        entries.push((tri[k], v, bc[k]));
                    }
                }
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Composition {
            coarse_n: coarse.num_vertices(),
            fine_n,
            entries,
        }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn apply(&self, fine: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coarse_n];
        for &(c, f, w) in &self.entries {
            out[c] += w * fine[f];
        }
        out
    }

    pub fn transpose_apply(&self, coarse: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.fine_n];
        for &(c, f, w) in &self.entries {
            out[f] += w * coarse[c];
        }
        out
    }
}

/// The assembled homogenized operator: edge conductivities on the coarse
/// mesh plus the fine-scale machinery needed for loads and reconstruction.
pub struct HomogenizedOperator {
    pub qh: EdgeConductivities,
    pub fmap: HarmonicMap,
    pub fine_mesh: Arc<Mesh2D>,
    pub composition: Composition,
}

impl HomogenizedOperator {
    /// Load vector b_i = integral f (phi_i o F) through the fine quadrature.
    pub fn load(&self, f: &impl Fn(Point2) -> f64) -> Vec<f64> {
        let fine_load = fem::load_vector(&self.fine_mesh, f);
        self.composition.apply(&fine_load)
    }

    /// Solve in the composed basis directly: the Galerkin system of
    /// span{phi_i o F} against the fine stiffness, including the small
    /// couplings between non-adjacent coarse vertices that the PL
    /// composition leaves behind. In the continuum those couplings vanish
    /// identically and the system reduces to the edge network; at a fixed
    /// fine/coarse resolution ratio they carry O(h_f / h_c) weight and
    /// keeping them preserves both definiteness and the first-order
    /// convergence of the reconstruction.
    pub fn solve_galerkin(
        &self,
        k_fine: &fem::StiffnessMatrix,
        load: &[f64],
    ) -> Result<CoarseSolution, HomogenizeError> {
        let coarse = self.qh.mesh();
        let interior = coarse.interior_vertices();
        let nc = coarse.num_vertices();
        let mut pos = vec![usize::MAX; nc];
        for (slot, &v) in interior.iter().enumerate() {
            pos[v] = slot;
        }
        let mut triplets = Vec::new();
        let mut basis = vec![0.0; nc];
        for (col, &vc) in interior.iter().enumerate() {
            basis[vc] = 1.0;
            let fine_col = self.composition.transpose_apply(&basis);
            basis[vc] = 0.0;
            let kc = k_fine.full.matvec(&fine_col);
            let back = self.composition.apply(&kc);
            for (row, &vr) in interior.iter().enumerate() {
                if back[vr] != 0.0 {
                    triplets.push((row, col, back[vr]));
                }
            }
        }
        let m = SparseSym::from_triplets(interior.len(), &mut triplets);
        let rhs: Vec<f64> = interior.iter().map(|&v| load[v]).collect();
        let solver = SymSolver::new(m).map_err(FemError::SolverBreakdown)?;
        let ui = solver.solve(&rhs).map_err(FemError::SolverBreakdown)?;
        let mut values = vec![0.0; nc];
        for (slot, &v) in interior.iter().enumerate() {
            values[v] = ui[slot];
        }
        Ok(CoarseSolution { values })
    }
}

/// T_{q^h,Q}: volume averaging. Direct assembly of the coefficient on the
/// coarse mesh; hinge-complete edges are populated.
pub fn qh_from_q(coarse: &Arc<Mesh2D>, q: &impl fem::Coefficient) -> EdgeConductivities {
    let k = fem::assemble(coarse, q);
    let mut qh = EdgeConductivities::empty(Arc::clone(coarse));
    for (id, e) in coarse.edges().iter().enumerate() {
        if !e.is_boundary() {
            qh.values[id] = Some(-k.full.get(e.a, e.b));
        }
    }
    qh
}

/// Like `qh_from_q` but populating every edge, boundary included; used by
/// the EIT network constructions and the coarsening tests.
pub fn qh_from_q_all_edges(
    coarse: &Arc<Mesh2D>,
    q: &impl fem::Coefficient,
) -> EdgeConductivities {
    let k = fem::assemble(coarse, q);
    let mut qh = EdgeConductivities::empty(Arc::clone(coarse));
    for (id, e) in coarse.edges().iter().enumerate() {
        qh.values[id] = Some(-k.full.get(e.a, e.b));
    }
    qh
}

/// T_{q^h,sigma}: the full non-linear route. Computes the harmonic
/// coordinates of sigma on a nested refinement of the coarse mesh, composes
/// coarse hats with F as PL functions on the fine mesh, and assembles
/// q_ij = -integral grad(phi_i o F)' sigma grad(phi_j o F).
pub fn qh_from_sigma(
    coarse: &Arc<Mesh2D>,
    sigma: &SigmaField,
    levels: usize,
) -> Result<HomogenizedOperator, HomogenizeError> {
    let (fine, _) = coarse.refine(levels);
    let fine = Arc::new(fine);
    qh_from_sigma_on(coarse, sigma, &fine)
}

/// Assemble the operator from a precomputed harmonic map and fine
/// stiffness; lets one expensive fine-scale solve serve several coarse
/// levels.
pub fn operator_from_map(
    coarse: &Arc<Mesh2D>,
    fmap: &HarmonicMap,
    k_fine: &fem::StiffnessMatrix,
) -> HomogenizedOperator {
    let composition = Composition::new(coarse, fmap);
    let qh = galerkin_qh(coarse, &composition, &k_fine.full, false);
    HomogenizedOperator {
        qh,
        fmap: fmap.clone(),
        fine_mesh: Arc::clone(&fmap.mesh),
        composition,
    }
}

/// Same as `qh_from_sigma` with an explicit fine mesh.
pub fn qh_from_sigma_on(
    coarse: &Arc<Mesh2D>,
    sigma: &SigmaField,
    fine: &Arc<Mesh2D>,
) -> Result<HomogenizedOperator, HomogenizeError> {
    let fmap = fem::harmonic_coordinates(fine, sigma)?;
    let k_fine = fem::assemble(fine, sigma);
    let composition = Composition::new(coarse, &fmap);
    let qh = galerkin_qh(coarse, &composition, &k_fine.full, false);
    Ok(HomogenizedOperator {
        qh,
        fmap,
        fine_mesh: Arc::clone(fine),
        composition,
    })
}

/// Coarse edge conductivities as the Galerkin product -(C K C')_{ij}.
fn galerkin_qh(
    coarse: &Arc<Mesh2D>,
    composition: &Composition,
    k_fine: &SparseSym,
    include_boundary: bool,
) -> EdgeConductivities {
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); composition.fine_n];
    for &(c, f, w) in &composition.entries {
        cols[f].push((c, w));
    }
    let mut acc: HashMap<(usize, usize), f64> = HashMap::new();
    for u in 0..k_fine.n {
        for kk in k_fine.row_ptr[u]..k_fine.row_ptr[u + 1] {
            let v = k_fine.col_idx[kk];
            let kuv = k_fine.values[kk];
            if kuv == 0.0 {
                continue;
            }
            for &(ci, wi) in &cols[u] {
                for &(cj, wj) in &cols[v] {
                    if ci <= cj {
                        *acc.entry((ci, cj)).or_insert(0.0) += wi * kuv * wj;
                    }
                }
            }
        }
    }
    let mut qh = EdgeConductivities::empty(Arc::clone(coarse));
    for (id, e) in coarse.edges().iter().enumerate() {
        if include_boundary || !e.is_boundary() {
            let k = acc.get(&(e.a, e.b)).copied().unwrap_or(0.0);
            qh.values[id] = Some(-k);
        }
    }
    qh
}

/// T_{s^h,s}: sample the potential at the mesh vertices.
pub fn sh_from_s(mesh: &Mesh2D, s: &SField) -> Vec<f64> {
    (0..mesh.num_vertices())
        .map(|v| s.value(mesh.vertex(v)))
        .collect()
}

/// T_{q^h,s^h}: the hinge formula. Every hinge-complete edge receives
///
///   q_ij = -(cot t_ijk + cot t_ijl) s_i / |e|^2
///          -(cot t_jik + cot t_jil) s_j / |e|^2
///          + s_k / (2 |t_ijk|) + s_l / (2 |t_ijl|).
///
/// Ghost vertices (when present) supply the opposite values on boundary
/// hinges. With `require_all` set, any edge without a complete hinge is an
/// error.
pub fn qh_from_sh(
    mesh: &Arc<Mesh2D>,
    sh: &[f64],
    require_all: bool,
) -> Result<EdgeConductivities, HomogenizeError> {
    let mut qh = EdgeConductivities::empty(Arc::clone(mesh));
    for (id, e) in mesh.edges().iter().enumerate() {
        if e.is_boundary() {
            if require_all {
                return Err(HomogenizeError::IncompleteHinge { a: e.a, b: e.b });
            }
            continue;
        }
        let h = mesh.hinge(id).expect("two-triangle edge");
        qh.values[id] = Some(hinge_value(&h, sh));
    }
    Ok(qh)
}

/// The four-vertex hinge formula evaluated on given vertex values.
pub fn hinge_value(h: &crate::mesh::HingeGeometry, sh: &[f64]) -> f64 {
    let inv_e2 = 1.0 / (h.edge_len * h.edge_len);
    -inv_e2 * (h.cot_ijk + h.cot_ijl) * sh[h.i] - inv_e2 * (h.cot_jik + h.cot_jil) * sh[h.j]
        + sh[h.k] / (2.0 * h.area_ijk)
        + sh[h.l] / (2.0 * h.area_ijl)
}

/// Solve the homogenized finite-difference problem
/// sum_{j~i} q_ij (u_i - u_j) = b_i over interior vertices.
pub fn solve_homogenized(
    qh: &EdgeConductivities,
    load: &[f64],
) -> Result<CoarseSolution, HomogenizeError> {
    let (interior, sys) = qh.interior_system();
    let rhs: Vec<f64> = interior.iter().map(|&v| load[v]).collect();
    let solver = SymSolver::new(sys).map_err(FemError::SolverBreakdown)?;
    let ui = solver.solve(&rhs).map_err(FemError::SolverBreakdown)?;
    let mut values = vec![0.0; qh.mesh.num_vertices()];
    for (slot, &v) in interior.iter().enumerate() {
        values[v] = ui[slot];
    }
    Ok(CoarseSolution { values })
}

/// T_{q^{h_C},q^{h_F}}: Galerkin coarsening of edge conductivities through
/// prolongation coefficients; preserves symmetry and positive
/// semi-definiteness of the edge form exactly.
pub fn coarsen_qh(
    fine_qh: &EdgeConductivities,
    coarse: &Arc<Mesh2D>,
    prol: &Prolongation,
) -> Result<EdgeConductivities, HomogenizeError> {
    coarsen_qh_impl(fine_qh, coarse, prol, false)
}

/// Coarsening that also fills coarse boundary edges; the semi-group identity
/// across three levels needs the intermediate level complete.
pub fn coarsen_qh_all_edges(
    fine_qh: &EdgeConductivities,
    coarse: &Arc<Mesh2D>,
    prol: &Prolongation,
) -> Result<EdgeConductivities, HomogenizeError> {
    coarsen_qh_impl(fine_qh, coarse, prol, true)
}

fn coarsen_qh_impl(
    fine_qh: &EdgeConductivities,
    coarse: &Arc<Mesh2D>,
    prol: &Prolongation,
    include_boundary: bool,
) -> Result<EdgeConductivities, HomogenizeError> {
    if prol.fine_n != fine_qh.mesh.num_vertices() || prol.coarse_n != coarse.num_vertices() {
        return Err(HomogenizeError::MeshMismatch {
            what: format!(
                "prolongation {}x{} vs meshes {} and {}",
                prol.coarse_n,
                prol.fine_n,
                coarse.num_vertices(),
                fine_qh.mesh.num_vertices()
            ),
        });
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); prol.fine_n];
    for &(c, f, w) in &prol.entries {
        rows[f].push((c, w));
    }
    // L_C = sum_edges q (P_u - P_v)(P_u - P_v)'
    let mut acc: HashMap<(usize, usize), f64> = HashMap::new();
    for (u, v, q) in fine_qh.populated() {
        let mut d: HashMap<usize, f64> = HashMap::new();
        for &(c, w) in &rows[u] {
            *d.entry(c).or_insert(0.0) += w;
        }
        for &(c, w) in &rows[v] {
            *d.entry(c).or_insert(0.0) -= w;
        }
        let items: Vec<(usize, f64)> = d.into_iter().collect();
        for &(ci, wi) in &items {
            for &(cj, wj) in &items {
                if ci < cj {
                    *acc.entry((ci, cj)).or_insert(0.0) += q * wi * wj;
                }
            }
        }
    }
    let mut qh = EdgeConductivities::empty(Arc::clone(coarse));
    for (id, e) in coarse.edges().iter().enumerate() {
        if include_boundary || !e.is_boundary() {
            let l = acc.get(&(e.a, e.b)).copied().unwrap_or(0.0);
            qh.values[id] = Some(-l);
        }
    }
    Ok(qh)
}

/// T_{s^h,q^h}: invert the hinge formula for the vertex potential, up to the
/// affine gauge (the three vertices of triangle 0 pinned to zero).
/// Least-squares when the conductivities only approximately satisfy the
/// divergence identity; returns the values and the worst equation residual.
pub fn sh_from_qh(qh: &EdgeConductivities) -> Result<(Vec<f64>, f64), HomogenizeError> {
    let mesh = &qh.mesh;
    let n = mesh.num_vertices();
    let pinned = mesh.triangle(0);
    let mut col = vec![usize::MAX; n];
    let mut cols = 0usize;
    for v in 0..n {
        if v != pinned[0] && v != pinned[1] && v != pinned[2] {
            col[v] = cols;
            cols += 1;
        }
    }
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for (id, e) in mesh.edges().iter().enumerate() {
        let Some(q) = qh.values[id] else { continue };
        if e.is_boundary() {
            continue;
        }
        let h = mesh.hinge(id).expect("two-triangle edge");
        let inv_e2 = 1.0 / (h.edge_len * h.edge_len);
        let coeffs = [
            (h.i, -inv_e2 * (h.cot_ijk + h.cot_ijl)),
            (h.j, -inv_e2 * (h.cot_jik + h.cot_jil)),
            (h.k, 1.0 / (2.0 * h.area_ijk)),
            (h.l, 1.0 / (2.0 * h.area_ijl)),
        ];
        let mut row = Vec::with_capacity(4);
        for (v, cfe) in coeffs {
            if col[v] != usize::MAX {
                row.push((col[v], cfe));
            }
        }
        rows.push((row, q));
    }
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; cols];
    for (row, q) in &rows {
        for &(ci, wi) in row {
            rhs[ci] += wi * q;
            for &(cj, wj) in row {
                triplets.push((ci, cj, wi * wj));
            }
        }
    }
    let normal = SparseSym::from_triplets(cols, &mut triplets);
    let solver = SymSolver::new(normal).map_err(|_| HomogenizeError::GaugeDeficiency)?;
    let x = solver.solve(&rhs).map_err(FemError::SolverBreakdown)?;
    let mut sh = vec![0.0; n];
    for v in 0..n {
        if col[v] != usize::MAX {
            sh[v] = x[col[v]];
        }
    }
    let mut residual = 0.0f64;
    for (row, q) in &rows {
        let mut lhs = 0.0;
        for &(ci, wi) in row {
            lhs += wi * x[ci];
        }
        residual = residual.max((lhs - q).abs());
    }
    Ok((sh, residual))
}
