//! Piecewise-linear finite elements on `Mesh2D`: stiffness assembly,
//! Dirichlet solves, harmonic coordinates, and periodic cell problems.

use std::sync::Arc;

use thiserror::Error;

use crate::fields::{QField, SigmaField, TensorCarrier};
use crate::geom::{v2, Mat2};
use crate::la::sparse::{SolveError, SparseSym, SymSolver};
use crate::mesh::Mesh2D;
use crate::{Point2, Tensor2};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("solver breakdown: {0}")]
    SolverBreakdown(#[from] SolveError),
    #[error("coefficient carrier does not cover the mesh: {what}")]
    CarrierMismatch { what: String },
    #[error("singular system: {what}")]
    SingularSystem { what: String },
    #[error("non-positive Jacobian determinant {det:.3e} on triangle {tri}")]
    NonPositiveJacobian { tri: usize, det: f64 },
}

/// Anything that can serve as a divergence-form coefficient.
pub trait Coefficient {
    fn tensor_at(&self, p: Point2) -> Tensor2;
    /// Exact per-triangle value when the coefficient lives on this mesh.
    fn cell_value(&self, _mesh: &Mesh2D, _tri: usize) -> Option<Tensor2> {
        None
    }
    fn describe(&self) -> String {
        "coefficient".into()
    }
}

impl Coefficient for Tensor2 {
    fn tensor_at(&self, _p: Point2) -> Tensor2 {
        *self
    }
    fn cell_value(&self, _mesh: &Mesh2D, _tri: usize) -> Option<Tensor2> {
        Some(*self)
    }
    fn describe(&self) -> String {
        format!(
            "constant [{} {}; {} {}]",
            self.a11, self.a12, self.a12, self.a22
        )
    }
}

impl Coefficient for SigmaField {
    fn tensor_at(&self, p: Point2) -> Tensor2 {
        self.value_at(p)
    }
    fn cell_value(&self, mesh: &Mesh2D, tri: usize) -> Option<Tensor2> {
        match &self.carrier {
            TensorCarrier::MeshCells { mesh: m, values } if std::ptr::eq(&**m, mesh) => {
                Some(values[tri])
            }
            _ => None,
        }
    }
    fn describe(&self) -> String {
        "sigma".into()
    }
}

impl Coefficient for QField {
    fn tensor_at(&self, p: Point2) -> Tensor2 {
        self.value_at(p)
    }
    fn cell_value(&self, mesh: &Mesh2D, tri: usize) -> Option<Tensor2> {
        match &self.carrier {
            TensorCarrier::MeshCells { mesh: m, values } if std::ptr::eq(&**m, mesh) => {
                Some(values[tri])
            }
            _ => None,
        }
    }
    fn describe(&self) -> String {
        "q".into()
    }
}

impl<F: Fn(Point2) -> Tensor2> Coefficient for F {
    fn tensor_at(&self, p: Point2) -> Tensor2 {
        self(p)
    }
}

/// Full stiffness matrix over all vertices (boundary rows included).
pub struct StiffnessMatrix {
    pub full: SparseSym,
    pub provenance: String,
}

impl StiffnessMatrix {
    /// Dirichlet energy u' K u.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.full.quadratic_form(u)
    }
}

/// Coefficient averaged over a triangle by the three edge-midpoint rule;
/// exact for coefficients constant on the triangle.
fn coeff_on_triangle(mesh: &Mesh2D, tri: usize, coeff: &impl Coefficient) -> Tensor2 {
    if let Some(t) = coeff.cell_value(mesh, tri) {
        return t;
    }
    let [a, b, c] = mesh.triangle(tri);
    let (pa, pb, pc) = (mesh.vertex(a), mesh.vertex(b), mesh.vertex(c));
    let m1 = (pa + pb).scale(0.5);
    let m2 = (pb + pc).scale(0.5);
    let m3 = (pc + pa).scale(0.5);
    coeff
        .tensor_at(m1)
        .add(coeff.tensor_at(m2))
        .add(coeff.tensor_at(m3))
        .scale(1.0 / 3.0)
}

/// Assemble the PL stiffness matrix of -div(coeff grad .) over all vertices.
///
/// Per-triangle integrals are exact for piecewise-constant coefficients on
/// the mesh itself; cross-carrier coefficients are averaged by the
/// edge-midpoint rule. Triplets accumulate in sorted order, so the result is
/// bit-stable.
pub fn assemble(mesh: &Mesh2D, coeff: &impl Coefficient) -> StiffnessMatrix {
    let n = mesh.num_vertices();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(9 * mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangle(t);
        let area = mesh.tri_area(t);
        let q = coeff_on_triangle(mesh, t, coeff);
        let grads = [
            mesh.hat_gradient(t, 0),
            mesh.hat_gradient(t, 1),
            mesh.hat_gradient(t, 2),
        ];
        for a in 0..3 {
            for b in 0..3 {
                let val = area * grads[a].dot(q.apply(grads[b]));
                triplets.push((tri[a], tri[b], val));
            }
        }
    }
    StiffnessMatrix {
        full: SparseSym::from_triplets(n, &mut triplets),
        provenance: coeff.describe(),
    }
}

/// Load vector (integral of f phi_i) by the edge-midpoint rule.
pub fn load_vector(mesh: &Mesh2D, f: &impl Fn(Point2) -> f64) -> Vec<f64> {
    let mut b = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangle(t);
        let area = mesh.tri_area(t);
        let (pa, pb, pc) = (
            mesh.vertex(tri[0]),
            mesh.vertex(tri[1]),
            mesh.vertex(tri[2]),
        );
        let mids = [
            (pa + pb).scale(0.5),
            (pb + pc).scale(0.5),
            (pc + pa).scale(0.5),
        ];
        let fm = [f(mids[0]), f(mids[1]), f(mids[2])];
        // each hat is 1/2 on its two adjacent edge midpoints
        let w = area / 3.0;
        b[tri[0]] += w * 0.5 * (fm[0] + fm[2]);
        b[tri[1]] += w * 0.5 * (fm[0] + fm[1]);
        b[tri[2]] += w * 0.5 * (fm[1] + fm[2]);
    }
    b
}

/// Solve the interior system with Dirichlet boundary lift; returns the
/// per-vertex solution including boundary values.
pub fn solve_dirichlet(
    mesh: &Mesh2D,
    coeff: &impl Coefficient,
    f: &impl Fn(Point2) -> f64,
    g: &impl Fn(Point2) -> f64,
) -> Result<Vec<f64>, FemError> {
    let k = assemble(mesh, coeff);
    let b = load_vector(mesh, f);
    let gv: Vec<f64> = (0..mesh.num_vertices())
        .map(|v| {
            if mesh.is_boundary_vertex(v) {
                g(mesh.vertex(v))
            } else {
                0.0
            }
        })
        .collect();
    solve_dirichlet_assembled(mesh, &k, &b, &gv)
}

/// Dirichlet solve from a pre-assembled full matrix; `g` holds boundary
/// values at boundary vertex slots.
pub fn solve_dirichlet_assembled(
    mesh: &Mesh2D,
    k: &StiffnessMatrix,
    load: &[f64],
    g: &[f64],
) -> Result<Vec<f64>, FemError> {
    let n = mesh.num_vertices();
    let interior: Vec<usize> = mesh.interior_vertices();
    let mut pos = vec![usize::MAX; n];
    for (slot, &v) in interior.iter().enumerate() {
        pos[v] = slot;
    }
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; interior.len()];
    for (slot, &v) in interior.iter().enumerate() {
        rhs[slot] = load[v];
        for kk in k.full.row_ptr[v]..k.full.row_ptr[v + 1] {
            let j = k.full.col_idx[kk];
            let val = k.full.values[kk];
            if pos[j] != usize::MAX {
                triplets.push((slot, pos[j], val));
            } else {
                rhs[slot] -= val * g[j];
            }
        }
    }
    let reduced = SparseSym::from_triplets(interior.len(), &mut triplets);
    let solver = SymSolver::new(reduced)?;
    let ui = solver.solve(&rhs)?;
    let mut u = g.to_vec();
    for (slot, &v) in interior.iter().enumerate() {
        u[v] = ui[slot];
    }
    Ok(u)
}

/// The harmonic change of coordinates: vertex images, per-triangle Jacobians
/// of the PL map, and injectivity diagnostics.
#[derive(Clone)]
pub struct HarmonicMap {
    pub mesh: Arc<Mesh2D>,
    pub images: Vec<Point2>,
    pub jacobians: Vec<Mat2<f64>>,
    pub min_jacobian_det: f64,
    pub coefficient: String,
    image_mesh: Mesh2D,
}

impl HarmonicMap {
    /// The identity map (harmonic coordinates of any constant coefficient).
    pub fn identity(mesh: Arc<Mesh2D>) -> Self {
        let images: Vec<Point2> = mesh.vertices().to_vec();
        let jacobians = vec![
            Mat2 {
                a: 1.0,
                b: 0.0,
                c: 0.0,
                d: 1.0
            };
            mesh.num_triangles()
        ];
        let image_mesh = (*mesh).clone();
        HarmonicMap {
            mesh,
            images,
            jacobians,
            min_jacobian_det: 1.0,
            coefficient: "identity".into(),
            image_mesh,
        }
    }

    pub fn image(&self, v: usize) -> Point2 {
        self.images[v]
    }

    /// Evaluate F at an arbitrary point by PL interpolation.
    pub fn forward(&self, p: Point2) -> Option<Point2> {
        let (t, bc) = self.mesh.locate(p, 0)?;
        let tri = self.mesh.triangle(t);
        Some(
            self.images[tri[0]].scale(bc[0])
                + self.images[tri[1]].scale(bc[1])
                + self.images[tri[2]].scale(bc[2]),
        )
    }

    /// Evaluate F^{-1} by point location in the image triangulation and the
    /// per-triangle affine inverse. Also returns the triangle hit.
    pub fn inverse(&self, p: Point2, hint: usize) -> Option<(Point2, usize)> {
        let (t, bc) = self.image_mesh.locate(p, hint)?;
        let tri = self.mesh.triangle(t);
        let q = self.mesh.vertex(tri[0]).scale(bc[0])
            + self.mesh.vertex(tri[1]).scale(bc[1])
            + self.mesh.vertex(tri[2]).scale(bc[2]);
        Some((q, t))
    }

    pub fn image_mesh(&self) -> &Mesh2D {
        &self.image_mesh
    }
}

/// Solve the two Dirichlet problems with boundary data x_1, x_2 to obtain
/// the coefficient-adapted change of variables.
pub fn harmonic_coordinates(
    mesh: &Arc<Mesh2D>,
    coeff: &impl Coefficient,
) -> Result<HarmonicMap, FemError> {
    let k = assemble(mesh, coeff);
    let zero = vec![0.0; mesh.num_vertices()];
    let gx: Vec<f64> = (0..mesh.num_vertices())
        .map(|v| {
            if mesh.is_boundary_vertex(v) {
                mesh.vertex(v).x
            } else {
                0.0
            }
        })
        .collect();
    let gy: Vec<f64> = (0..mesh.num_vertices())
        .map(|v| {
            if mesh.is_boundary_vertex(v) {
                mesh.vertex(v).y
            } else {
                0.0
            }
        })
        .collect();
    let f1 = solve_dirichlet_assembled(mesh, &k, &zero, &gx)?;
    let f2 = solve_dirichlet_assembled(mesh, &k, &zero, &gy)?;
    let images: Vec<Point2> = f1.iter().zip(&f2).map(|(&x, &y)| v2(x, y)).collect();
    harmonic_map_from_images(mesh, images, coeff.describe())
}

/// Package vertex images as a harmonic map, computing Jacobians and
/// validating that the image triangulation is not inverted.
pub fn harmonic_map_from_images(
    mesh: &Arc<Mesh2D>,
    images: Vec<Point2>,
    coefficient: String,
) -> Result<HarmonicMap, FemError> {
    let mut jacobians = Vec::with_capacity(mesh.num_triangles());
    let mut min_det = f64::INFINITY;
    let mut worst = 0usize;
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangle(t);
        let (pa, pb, pc) = (
            mesh.vertex(tri[0]),
            mesh.vertex(tri[1]),
            mesh.vertex(tri[2]),
        );
        let (qa, qb, qc) = (images[tri[0]], images[tri[1]], images[tri[2]]);
        let src = Mat2::from_cols(pb - pa, pc - pa);
        let dst = Mat2::from_cols(qb - qa, qc - qa);
        let j = dst.mul(src.inverse().expect("mesh triangles are non-degenerate"));
        if j.det() < min_det {
            min_det = j.det();
            worst = t;
        }
        jacobians.push(j);
    }
    if min_det <= 0.0 {
        return Err(FemError::NonPositiveJacobian {
            tri: worst,
            det: min_det,
        });
    }
    let image_mesh = crate::mesh::build_mesh_with_ghosts(
        images.clone(),
        mesh.triangles().to_vec(),
        mesh.ghost_vertices(),
    )
    .map_err(|_| FemError::NonPositiveJacobian {
        tri: worst,
        det: min_det,
    })?;
    Ok(HarmonicMap {
        mesh: Arc::clone(mesh),
        images,
        jacobians,
        min_jacobian_det: min_det,
        coefficient,
        image_mesh,
    })
}

/// Periodic torus realized as a structured n x n grid on the unit square
/// with opposite sides identified.
pub struct TorusMesh {
    pub mesh: Arc<Mesh2D>,
    pub n: usize,
    pub dof_of_vertex: Vec<usize>,
    pub num_dofs: usize,
}

impl TorusMesh {
    pub fn new(n: usize) -> Self {
        let mesh = Arc::new(crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, n, n));
        let mut dof_of_vertex = vec![0usize; mesh.num_vertices()];
        for j in 0..=n {
            for i in 0..=n {
                let vtx = j * (n + 1) + i;
                dof_of_vertex[vtx] = (j % n) * n + (i % n);
            }
        }
        TorusMesh {
            mesh,
            n,
            dof_of_vertex,
            num_dofs: n * n,
        }
    }
}

/// Periodic correctors per coordinate direction plus the effective tensor
/// integrated two ways.
pub struct CellProblemSolution {
    pub chi: [Vec<f64>; 2],
    /// effective tensor from the corrector form: integral of sigma (I + grad chi)
    pub sigma_e: Tensor2,
    /// the same tensor as the volume average of the push-forward Q
    pub sigma_e_via_q: Tensor2,
}

/// Solve the two periodic cell problems and integrate the effective tensor.
///
/// The periodic stiffness matrix is singular with the constants as its
/// nullspace; the right-hand sides are compatible, so pinning one dof and
/// removing the area-weighted mean afterwards produces exactly the zero-mean
/// solution while the reduced system stays SPD.
pub fn cell_problem(
    torus: &TorusMesh,
    sigma: &impl Coefficient,
) -> Result<CellProblemSolution, FemError> {
    let mesh = &torus.mesh;
    let nd = torus.num_dofs;
    let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangle(t);
        let area = mesh.tri_area(t);
        let q = coeff_on_triangle(mesh, t, sigma);
        let grads = [
            mesh.hat_gradient(t, 0),
            mesh.hat_gradient(t, 1),
            mesh.hat_gradient(t, 2),
        ];
        for a in 0..3 {
            for b in 0..3 {
                let val = area * grads[a].dot(q.apply(grads[b]));
                triplets.push((torus.dof_of_vertex[tri[a]], torus.dof_of_vertex[tri[b]], val));
            }
        }
    }
    let k = SparseSym::from_triplets(nd, &mut triplets);

    let mut weights = vec![0.0; nd];
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangle(t);
        let w = mesh.tri_area(t) / 3.0;
        for &vtx in &tri {
            weights[torus.dof_of_vertex[vtx]] += w;
        }
    }
    let total_area: f64 = weights.iter().sum();

    let mut pin_triplets = Vec::new();
    for i in 1..nd {
        for kk in k.row_ptr[i]..k.row_ptr[i + 1] {
            let j = k.col_idx[kk];
            if j == 0 {
                continue;
            }
            pin_triplets.push((i - 1, j - 1, k.values[kk]));
        }
    }
    let kp = SparseSym::from_triplets(nd - 1, &mut pin_triplets);
    let solver = SymSolver::new(kp).map_err(|e| match e {
        SolveError::NotSpd { .. } => FemError::SingularSystem {
            what: "periodic stiffness is singular beyond the constant nullspace".into(),
        },
        other => FemError::SolverBreakdown(other),
    })?;

    let solve_direction = |l: Point2| -> Result<Vec<f64>, FemError> {
        // rhs_i = -integral grad(phi_i)' sigma l
        let mut rhs = vec![0.0; nd];
        for t in 0..mesh.num_triangles() {
            let tri = mesh.triangle(t);
            let area = mesh.tri_area(t);
            let q = coeff_on_triangle(mesh, t, sigma);
            for a in 0..3 {
                let g = mesh.hat_gradient(t, a);
                rhs[torus.dof_of_vertex[tri[a]]] -= area * g.dot(q.apply(l));
            }
        }
        let reduced: Vec<f64> = rhs[1..].to_vec();
        let chi_rest = solver.solve(&reduced)?;
        let mut chi = Vec::with_capacity(nd);
        chi.push(0.0);
        chi.extend_from_slice(&chi_rest);
        let mean: f64 =
            chi.iter().zip(&weights).map(|(c, w)| c * w).sum::<f64>() / total_area;
        for c in chi.iter_mut() {
            *c -= mean;
        }
        Ok(chi)
    };

    let chi1 = solve_direction(v2(1.0, 0.0))?;
    let chi2 = solve_direction(v2(0.0, 1.0))?;

    let mut se = [[0.0f64; 2]; 2];
    let mut se_q = Tensor2::zero();
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangle(t);
        let area = mesh.tri_area(t);
        let q = coeff_on_triangle(mesh, t, sigma);
        let mut g1 = Point2::zero();
        let mut g2 = Point2::zero();
        for a in 0..3 {
            let g = mesh.hat_gradient(t, a);
            let d = torus.dof_of_vertex[tri[a]];
            g1 = g1 + g.scale(chi1[d]);
            g2 = g2 + g.scale(chi2[d]);
        }
        // columns of grad F = I + grad chi
        let c1 = v2(1.0 + g1.x, g2.x);
        let c2 = v2(g1.y, 1.0 + g2.y);
        let s1 = q.apply(c1);
        let s2 = q.apply(c2);
        se[0][0] += area * s1.x;
        se[1][0] += area * s1.y;
        se[0][1] += area * s2.x;
        se[1][1] += area * s2.y;
        // integral of Q over the torus equals integral (grad F)' sigma (grad F)
        let f = Mat2 {
            a: c1.x,
            b: c2.x,
            c: c1.y,
            d: c2.y,
        };
        se_q = se_q.add(f.congruence(q).scale(area));
    }
    let sigma_e = Tensor2::new(
        se[0][0] / total_area,
        0.5 * (se[0][1] + se[1][0]) / total_area,
        se[1][1] / total_area,
    );
    let sigma_e_via_q = se_q.scale(1.0 / total_area);
    Ok(CellProblemSolution {
        chi: [chi1, chi2],
        sigma_e,
        sigma_e_via_q,
    })
}
