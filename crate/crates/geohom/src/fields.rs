//! Conductivity parameterizations: sigma (physical tensor), Q (symmetric
//! positive divergence-free), and the scalar convex potential s, together
//! with the transforms between them.
//!
//! The pi/2 rotation R = [[0,-1],[1,0]] links Q and s through
//! Hess s = R^T Q R and Q = R Hess s R^T; for symmetric matrices both
//! conjugations swap the diagonal entries and negate the off-diagonal one.

use std::sync::Arc;

use thiserror::Error;

use crate::geom::{v2, Mat2};
use crate::mesh::Mesh2D;
use crate::{Point2, Tensor2};

/// The constant pi/2 rotation matrix.
pub const ROTATION_R: Mat2<f64> = Mat2 {
    a: 0.0,
    b: -1.0,
    c: 1.0,
    d: 0.0,
};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("ellipticity violated: min eigenvalue {lambda:.3e} at sample {idx}")]
    EllipticityViolation { idx: usize, lambda: f64 },
    #[error("convexity violated: Hessian eigenvalue {lambda:.3e} at sample {idx}")]
    ConvexityViolation { idx: usize, lambda: f64 },
    #[error("loop-closure residual {residual:.3e} exceeds tolerance {tol:.3e}; Q is not divergence-free at this resolution")]
    PathDependence { residual: f64, tol: f64 },
    #[error("raster must have at least 2x2 nodes, got {nx}x{ny}")]
    RasterTooSmall { nx: usize, ny: usize },
    #[error("field carrier does not cover the requested mesh ({what})")]
    CarrierMismatch { what: String },
    #[error("harmonic image triangle {tri} has non-positive area {area:.3e}; the discrete map is not injective at this resolution")]
    NonInjectiveF { tri: usize, area: f64 },
    #[error(transparent)]
    Fem(#[from] Box<crate::fem::FemError>),
}

/// Regular node grid: nx x ny nodes spaced (dx, dy) from (x0, y0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterGrid {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl RasterGrid {
    pub fn over_unit_square(nx: usize, ny: usize) -> Self {
        RasterGrid {
            nx,
            ny,
            x0: 0.0,
            y0: 0.0,
            dx: 1.0 / (nx - 1) as f64,
            dy: 1.0 / (ny - 1) as f64,
        }
    }
    pub fn node(&self, i: usize, j: usize) -> Point2 {
        v2(self.x0 + self.dx * i as f64, self.y0 + self.dy * j as f64)
    }
    pub fn num_nodes(&self) -> usize {
        self.nx * self.ny
    }
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    /// Index of the node nearest to p, clamped into the grid.
    pub fn nearest(&self, p: Point2) -> (usize, usize) {
        let fi = ((p.x - self.x0) / self.dx)
            .round()
            .clamp(0.0, (self.nx - 1) as f64);
        let fj = ((p.y - self.y0) / self.dy)
            .round()
            .clamp(0.0, (self.ny - 1) as f64);
        (fi as usize, fj as usize)
    }
    /// Cell containing p plus local coordinates in [0,1]^2, clamped.
    pub fn cell_of(&self, p: Point2) -> (usize, usize, f64, f64) {
        let fx = ((p.x - self.x0) / self.dx).clamp(0.0, (self.nx - 1) as f64 - 1e-12);
        let fy = ((p.y - self.y0) / self.dy).clamp(0.0, (self.ny - 1) as f64 - 1e-12);
        let i = fx.floor() as usize;
        let j = fy.floor() as usize;
        (i, j, fx - i as f64, fy - j as f64)
    }
}

/// Where tensor values live.
#[derive(Clone)]
pub enum TensorCarrier {
    /// One value per triangle of the mesh.
    MeshCells { mesh: Arc<Mesh2D>, values: Vec<Tensor2> },
    /// Node-sampled raster, piecewise constant on nearest-node cells.
    Raster { grid: RasterGrid, values: Vec<Tensor2> },
}

impl TensorCarrier {
    pub fn raster_from_fn(grid: RasterGrid, f: impl Fn(Point2) -> Tensor2) -> Self {
        let mut values = Vec::with_capacity(grid.num_nodes());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.node(i, j)));
            }
        }
        TensorCarrier::Raster { grid, values }
    }

    pub fn mesh_from_fn(mesh: Arc<Mesh2D>, f: impl Fn(Point2) -> Tensor2) -> Self {
        let values = (0..mesh.num_triangles())
            .map(|t| f(mesh.tri_centroid(t)))
            .collect();
        TensorCarrier::MeshCells { mesh, values }
    }

    pub fn value_at(&self, p: Point2) -> Tensor2 {
        match self {
            TensorCarrier::Raster { grid, values } => {
                let (i, j) = grid.nearest(p);
                values[grid.idx(i, j)]
            }
            TensorCarrier::MeshCells { mesh, values } => match mesh.locate(p, 0) {
                Some((t, _)) => values[t],
                None => {
                    // nearest centroid as a clamped fallback for points that
                    // fall marginally outside the carrier
                    let mut best = (f64::INFINITY, 0usize);
                    for t in 0..mesh.num_triangles() {
                        let d = (mesh.tri_centroid(t) - p).norm2();
                        if d < best.0 {
                            best = (d, t);
                        }
                    }
                    values[best.1]
                }
            },
        }
    }

    pub fn values(&self) -> &[Tensor2] {
        match self {
            TensorCarrier::Raster { values, .. } => values,
            TensorCarrier::MeshCells { values, .. } => values,
        }
    }

    pub fn values_mut(&mut self) -> &mut [Tensor2] {
        match self {
            TensorCarrier::Raster { values, .. } => values,
            TensorCarrier::MeshCells { values, .. } => values,
        }
    }

    pub fn map(&self, f: impl Fn(Tensor2) -> Tensor2) -> TensorCarrier {
        let mut out = self.clone();
        for v in out.values_mut() {
            *v = f(*v);
        }
        out
    }
}

/// Physical conductivity: symmetric, uniformly elliptic tensor field.
#[derive(Clone)]
pub struct SigmaField {
    pub carrier: TensorCarrier,
    pub isotropic: bool,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

impl SigmaField {
    pub fn new(carrier: TensorCarrier) -> Result<Self, FieldError> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        let mut isotropic = true;
        for (idx, t) in carrier.values().iter().enumerate() {
            let (lmin, lmax) = t.eigenvalues();
            if lmin <= 0.0 {
                return Err(FieldError::EllipticityViolation { idx, lambda: lmin });
            }
            lo = lo.min(lmin);
            hi = hi.max(lmax);
            if t.a12 != 0.0 || (t.a11 - t.a22).abs() > 1e-14 * t.trace().abs() {
                isotropic = false;
            }
        }
        Ok(SigmaField {
            carrier,
            isotropic,
            lambda_lo: lo,
            lambda_hi: hi,
        })
    }

    pub fn constant(mesh: Arc<Mesh2D>, value: Tensor2) -> Result<Self, FieldError> {
        SigmaField::new(TensorCarrier::mesh_from_fn(mesh, |_| value))
    }

    pub fn value_at(&self, p: Point2) -> Tensor2 {
        self.carrier.value_at(p)
    }

    pub fn scale(&self, c: f64) -> SigmaField {
        SigmaField {
            carrier: self.carrier.map(|t| t.scale(c)),
            isotropic: self.isotropic,
            lambda_lo: self.lambda_lo * c,
            lambda_hi: self.lambda_hi * c,
        }
    }
}

/// Symmetric positive divergence-free tensor field.
#[derive(Clone)]
pub struct QField {
    pub carrier: TensorCarrier,
    /// Weak divergence residual diagnostic when it has been evaluated.
    pub divergence_residual: Option<f64>,
    pub det_lo: f64,
    pub det_hi: f64,
}

impl QField {
    pub fn new(carrier: TensorCarrier) -> Result<Self, FieldError> {
        let mut det_lo = f64::INFINITY;
        let mut det_hi = 0.0f64;
        for (idx, t) in carrier.values().iter().enumerate() {
            let (lmin, _) = t.eigenvalues();
            if lmin <= 0.0 {
                return Err(FieldError::EllipticityViolation { idx, lambda: lmin });
            }
            let d = t.det();
            det_lo = det_lo.min(d);
            det_hi = det_hi.max(d);
        }
        Ok(QField {
            carrier,
            divergence_residual: None,
            det_lo,
            det_hi,
        })
    }

    pub fn value_at(&self, p: Point2) -> Tensor2 {
        self.carrier.value_at(p)
    }
}

/// Scalar convex potential in one of three representations.
#[derive(Clone)]
pub enum SField {
    Analytic(Arc<AnalyticS>),
    Raster { grid: RasterGrid, values: Vec<f64> },
    MeshVertex { mesh: Arc<Mesh2D>, values: Vec<f64> },
}

pub struct AnalyticS {
    pub value: Box<dyn Fn(Point2) -> f64 + Send + Sync>,
    pub gradient: Box<dyn Fn(Point2) -> Point2 + Send + Sync>,
    pub hessian: Box<dyn Fn(Point2) -> Tensor2 + Send + Sync>,
}

impl SField {
    pub fn analytic(
        value: impl Fn(Point2) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Point2) -> Point2 + Send + Sync + 'static,
        hessian: impl Fn(Point2) -> Tensor2 + Send + Sync + 'static,
    ) -> Self {
        SField::Analytic(Arc::new(AnalyticS {
            value: Box::new(value),
            gradient: Box::new(gradient),
            hessian: Box::new(hessian),
        }))
    }

    /// The paraboloid (x^2 + y^2)/2: the potential of Q = I.
    pub fn paraboloid() -> Self {
        SField::analytic(
            |p| 0.5 * (p.x * p.x + p.y * p.y),
            |p| p,
            |_| Tensor2::identity(),
        )
    }

    /// Quadratic potential of a constant Q: s(x) = x^T (R^T Q R) x / 2.
    pub fn quadratic_for(q: Tensor2) -> Self {
        let h = q.rotate_pi2();
        SField::analytic(
            move |p| 0.5 * (h.a11 * p.x * p.x + 2.0 * h.a12 * p.x * p.y + h.a22 * p.y * p.y),
            move |p| h.apply(p),
            move |_| h,
        )
    }

    pub fn raster_from_fn(grid: RasterGrid, f: impl Fn(Point2) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.num_nodes());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.node(i, j)));
            }
        }
        SField::Raster { grid, values }
    }

    pub fn value(&self, p: Point2) -> f64 {
        match self {
            SField::Analytic(a) => (a.value)(p),
            SField::Raster { grid, values } => {
                let (i, j, u, w) = grid.cell_of(p);
                let v00 = values[grid.idx(i, j)];
                let v10 = values[grid.idx(i + 1, j)];
                let v01 = values[grid.idx(i, j + 1)];
                let v11 = values[grid.idx(i + 1, j + 1)];
                v00 * (1.0 - u) * (1.0 - w)
                    + v10 * u * (1.0 - w)
                    + v01 * (1.0 - u) * w
                    + v11 * u * w
            }
            SField::MeshVertex { mesh, values } => mesh
                .interpolate(values, p, 0)
                .expect("point lies on the s-field mesh"),
        }
    }

    pub fn gradient(&self, p: Point2) -> Point2 {
        match self {
            SField::Analytic(a) => (a.gradient)(p),
            SField::Raster { grid, .. } => {
                let hx = grid.dx;
                let hy = grid.dy;
                let gx =
                    (self.value(v2(p.x + hx, p.y)) - self.value(v2(p.x - hx, p.y))) / (2.0 * hx);
                let gy =
                    (self.value(v2(p.x, p.y + hy)) - self.value(v2(p.x, p.y - hy))) / (2.0 * hy);
                v2(gx, gy)
            }
            SField::MeshVertex { mesh, values } => {
                let (t, _) = mesh.locate(p, 0).expect("point lies on the s-field mesh");
                let tri = mesh.triangle(t);
                let mut g = Point2::zero();
                for v in 0..3 {
                    g = g + mesh.hat_gradient(t, v).scale(values[tri[v]]);
                }
                g
            }
        }
    }

    /// Hessian; rasters use central differences with a two-cell step, the
    /// probe point pulled inward so all samples stay on the grid.
    pub fn hessian(&self, p: Point2) -> Tensor2 {
        match self {
            SField::Analytic(a) => (a.hessian)(p),
            SField::Raster { grid, .. } => {
                let hx = 2.0 * grid.dx;
                let hy = 2.0 * grid.dy;
                let px = p
                    .x
                    .clamp(grid.x0 + hx, grid.x0 + grid.dx * (grid.nx - 1) as f64 - hx);
                let py = p
                    .y
                    .clamp(grid.y0 + hy, grid.y0 + grid.dy * (grid.ny - 1) as f64 - hy);
                let f = |x: f64, y: f64| self.value(v2(x, y));
                let sxx = (f(px + hx, py) - 2.0 * f(px, py) + f(px - hx, py)) / (hx * hx);
                let syy = (f(px, py + hy) - 2.0 * f(px, py) + f(px, py - hy)) / (hy * hy);
                let sxy = (f(px + hx, py + hy) - f(px + hx, py - hy) - f(px - hx, py + hy)
                    + f(px - hx, py - hy))
                    / (4.0 * hx * hy);
                Tensor2::new(sxx, sxy, syy)
            }
            SField::MeshVertex { .. } => {
                panic!("PL interpolants carry their curvature on edges; use the hinge formula")
            }
        }
    }

    /// Convexity check; the slack absorbs floating-point noise on exactly
    /// flat regions. Rasters are probed at their interior nodes.
    pub fn check_convexity(&self, probes: &[Point2], slack: f64) -> Result<(), FieldError> {
        let check = |idx: usize, h: Tensor2| -> Result<(), FieldError> {
            let (lmin, _) = h.eigenvalues();
            if lmin < -slack {
                return Err(FieldError::ConvexityViolation { idx, lambda: lmin });
            }
            Ok(())
        };
        match self {
            SField::Raster { grid, .. } => {
                for j in 2..grid.ny.saturating_sub(2) {
                    for i in 2..grid.nx.saturating_sub(2) {
                        check(grid.idx(i, j), self.hessian(grid.node(i, j)))?;
                    }
                }
                Ok(())
            }
            _ => {
                for (idx, &p) in probes.iter().enumerate() {
                    check(idx, self.hessian(p))?;
                }
                Ok(())
            }
        }
    }
}

/// Second-order first-derivative stencil along one index line.
fn d1(vals: &[f64], i: usize, n: usize, h: f64, stride: usize, base: usize) -> f64 {
    let v = |k: usize| vals[base + k * stride];
    if i == 0 {
        (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h)
    } else if i == n - 1 {
        (3.0 * v(n - 1) - 4.0 * v(n - 2) + v(n - 3)) / (2.0 * h)
    } else {
        (v(i + 1) - v(i - 1)) / (2.0 * h)
    }
}

/// Second-order second-derivative stencil along one index line.
fn d2(vals: &[f64], i: usize, n: usize, h: f64, stride: usize, base: usize) -> f64 {
    let v = |k: usize| vals[base + k * stride];
    if i == 0 {
        (2.0 * v(0) - 5.0 * v(1) + 4.0 * v(2) - v(3)) / (h * h)
    } else if i == n - 1 {
        (2.0 * v(n - 1) - 5.0 * v(n - 2) + 4.0 * v(n - 3) - v(n - 4)) / (h * h)
    } else {
        (v(i + 1) - 2.0 * v(i) + v(i - 1)) / (h * h)
    }
}

/// All three second derivatives of a raster scalar at every node, by
/// second-order stencils (one-sided variants on the borders).
pub fn raster_hessians(grid: RasterGrid, values: &[f64]) -> Result<Vec<Tensor2>, FieldError> {
    let (nx, ny) = (grid.nx, grid.ny);
    if nx < 4 || ny < 4 {
        return Err(FieldError::RasterTooSmall { nx, ny });
    }
    // y-derivative field first, then x-derivative of it for the mixed term
    let mut fy = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            fy[grid.idx(i, j)] = d1(values, j, ny, grid.dy, nx, i);
        }
    }
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let sxx = d2(values, i, nx, grid.dx, 1, j * nx);
            let syy = d2(values, j, ny, grid.dy, nx, i);
            let sxy = d1(&fy, i, nx, grid.dx, 1, j * nx);
            out.push(Tensor2::new(sxx, sxy, syy));
        }
    }
    Ok(out)
}

/// T_{s,Q}^{-1}: Q = R Hess(s) R^T sampled onto the given raster.
pub fn s_to_q(s: &SField, grid: RasterGrid) -> Result<QField, FieldError> {
    let slack = 1e-9;
    let hessians: Vec<Tensor2> = match s {
        SField::Raster { grid: g, values } if *g == grid => raster_hessians(grid, values)?,
        _ => {
            let mut hs = Vec::with_capacity(grid.num_nodes());
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    hs.push(s.hessian(grid.node(i, j)));
                }
            }
            hs
        }
    };
    let mut values = Vec::with_capacity(grid.num_nodes());
    for (idx, h) in hessians.into_iter().enumerate() {
        let (lmin, _) = h.eigenvalues();
        if lmin < -slack {
            return Err(FieldError::ConvexityViolation { idx, lambda: lmin });
        }
        values.push(h.rotate_pi2());
    }
    QField::new(TensorCarrier::Raster { grid, values })
}

/// T_{s,Q}: reconstruct the convex potential from a raster Q by the Hodge
/// construction: integrate the divergence-free columns into potentials h, k
/// with Q = [[h_y, k_y], [-h_x, -k_x]], then integrate grad s = (-k, h).
///
/// h and k are integrated along x-rows from the left edge (the left column
/// itself by y-integration), s along y-columns from the bottom row, all by
/// the trapezoid rule. The gauge is s = 0, grad s = 0 at the lower-left
/// corner. Returns the field and the worst per-cell loop-closure residual
/// normalized by cell area.
pub fn q_to_s(q: &QField, tol: f64) -> Result<(SField, f64), FieldError> {
    let TensorCarrier::Raster { grid, values } = &q.carrier else {
        return Err(FieldError::CarrierMismatch {
            what: "q_to_s needs a raster carrier".into(),
        });
    };
    let grid = *grid;
    let (nx, ny, dx, dy) = (grid.nx, grid.ny, grid.dx, grid.dy);
    if nx < 2 || ny < 2 {
        return Err(FieldError::RasterTooSmall { nx, ny });
    }
    let at = |i: usize, j: usize| values[grid.idx(i, j)];

    // potentials with grad h = (-b, a), grad k = (-c, b)
    let mut h = vec![0.0; nx * ny];
    let mut k = vec![0.0; nx * ny];
    for j in 1..ny {
        h[grid.idx(0, j)] = h[grid.idx(0, j - 1)] + 0.5 * dy * (at(0, j - 1).a11 + at(0, j).a11);
        k[grid.idx(0, j)] = k[grid.idx(0, j - 1)] + 0.5 * dy * (at(0, j - 1).a12 + at(0, j).a12);
    }
    for j in 0..ny {
        for i in 1..nx {
            h[grid.idx(i, j)] =
                h[grid.idx(i - 1, j)] - 0.5 * dx * (at(i - 1, j).a12 + at(i, j).a12);
            k[grid.idx(i, j)] =
                k[grid.idx(i - 1, j)] - 0.5 * dx * (at(i - 1, j).a22 + at(i, j).a22);
        }
    }

    // loop closure of (h_x, h_y) and (k_x, k_y) around every grid cell
    let mut residual = 0.0f64;
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let closure_h = 0.5 * dx * (-at(i, j).a12 - at(i + 1, j).a12)
                + 0.5 * dy * (at(i + 1, j).a11 + at(i + 1, j + 1).a11)
                - 0.5 * dx * (-at(i, j + 1).a12 - at(i + 1, j + 1).a12)
                - 0.5 * dy * (at(i, j).a11 + at(i, j + 1).a11);
            let closure_k = 0.5 * dx * (-at(i, j).a22 - at(i + 1, j).a22)
                + 0.5 * dy * (at(i + 1, j).a12 + at(i + 1, j + 1).a12)
                - 0.5 * dx * (-at(i, j + 1).a22 - at(i + 1, j + 1).a22)
                - 0.5 * dy * (at(i, j).a12 + at(i, j + 1).a12);
            residual = residual
                .max(closure_h.abs() / (dx * dy))
                .max(closure_k.abs() / (dx * dy));
        }
    }
    if residual > tol {
        return Err(FieldError::PathDependence { residual, tol });
    }

    // grad s = (-k, h)
    let mut s = vec![0.0; nx * ny];
    for i in 1..nx {
        s[grid.idx(i, 0)] =
            s[grid.idx(i - 1, 0)] - 0.5 * dx * (k[grid.idx(i - 1, 0)] + k[grid.idx(i, 0)]);
    }
    for j in 1..ny {
        for i in 0..nx {
            s[grid.idx(i, j)] =
                s[grid.idx(i, j - 1)] + 0.5 * dy * (h[grid.idx(i, j - 1)] + h[grid.idx(i, j)]);
        }
    }
    Ok((SField::Raster { grid, values: s }, residual))
}

/// T_{Q,sigma}: push sigma forward through its harmonic coordinates,
/// Q = (grad F)' sigma (grad F) / det(grad F) composed with F^{-1}.
///
/// F is computed on `fine_mesh`; the output lives on the image triangulation
/// (per-cell constant), so evaluating it at a point performs the F^{-1}
/// point location implicitly. The weak divergence residual over interior
/// hats of the image mesh is recorded on the result.
pub fn sigma_to_q(
    sigma: &SigmaField,
    fine_mesh: &Arc<Mesh2D>,
) -> Result<(QField, crate::fem::HarmonicMap), FieldError> {
    let fmap = crate::fem::harmonic_coordinates(fine_mesh, sigma).map_err(|e| match e {
        crate::fem::FemError::NonPositiveJacobian { tri, det } => {
            FieldError::NonInjectiveF { tri, area: det }
        }
        other => FieldError::Fem(Box::new(other)),
    })?;
    let mut values = Vec::with_capacity(fine_mesh.num_triangles());
    for t in 0..fine_mesh.num_triangles() {
        let st = sigma_cell_value(sigma, fine_mesh, t);
        let j = fmap.jacobians[t];
        let q = j.congruence(st).scale(1.0 / j.det());
        values.push(q);
    }
    let image = Arc::new(fmap.image_mesh().clone());
    let mut q = QField::new(TensorCarrier::MeshCells {
        mesh: image,
        values,
    })?;
    q.divergence_residual = Some(weak_divergence_residual(&q));
    Ok((q, fmap))
}

fn sigma_cell_value(sigma: &SigmaField, mesh: &Mesh2D, t: usize) -> Tensor2 {
    match &sigma.carrier {
        TensorCarrier::MeshCells { mesh: m, values } if std::ptr::eq(&**m, mesh) => values[t],
        _ => sigma.value_at(mesh.tri_centroid(t)),
    }
}

/// Worst weak-divergence violation of a mesh-carried Q over interior hat
/// functions and both directions, normalized by the L1 norm of the hat
/// gradient.
pub fn weak_divergence_residual(q: &QField) -> f64 {
    let TensorCarrier::MeshCells { mesh, values } = &q.carrier else {
        return f64::NAN;
    };
    let n = mesh.num_vertices();
    let mut resid = vec![Point2::zero(); n];
    let mut grad_l1 = vec![0.0f64; n];
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangle(t);
        let area = mesh.tri_area(t);
        for v in 0..3 {
            let g = mesh.hat_gradient(t, v);
            let qg = values[t].apply(g);
            resid[tri[v]] = resid[tri[v]] + qg.scale(area);
            grad_l1[tri[v]] += area * g.norm();
        }
    }
    let mut worst = 0.0f64;
    for v in mesh.interior_vertices() {
        let r = resid[v].x.abs().max(resid[v].y.abs()) / grad_l1[v];
        worst = worst.max(r);
    }
    worst
}

/// T_{Q,sigma}^{-1} restricted to isotropic conductivities:
/// sigma = sqrt(det Q o G^{-1}) I with G the harmonic coordinates of
/// Q / sqrt(det Q), solved on `solve_mesh` (a mesh of the region carrying Q).
///
/// Since G maps the Q-side domain back to physical coordinates, the output
/// conductivity is carried per cell of the G-image triangulation: the image
/// of triangle T holds sqrt(det Q) sampled at T, which realizes the
/// composition with G^{-1} without explicit point location.
pub fn q_to_sigma_isotropic(
    q: &QField,
    solve_mesh: &Arc<Mesh2D>,
) -> Result<(SigmaField, crate::fem::HarmonicMap), FieldError> {
    let coeff = |p: Point2| {
        let t = q.value_at(p);
        t.scale(1.0 / t.det().sqrt())
    };
    let gmap = crate::fem::harmonic_coordinates(solve_mesh, &coeff)
        .map_err(|e| FieldError::Fem(Box::new(e)))?;
    let mut values = Vec::with_capacity(solve_mesh.num_triangles());
    for t in 0..solve_mesh.num_triangles() {
        let d = q.value_at(solve_mesh.tri_centroid(t)).det();
        values.push(Tensor2::iso(d.sqrt()));
    }
    let image = Arc::new(gmap.image_mesh().clone());
    let sigma = SigmaField::new(TensorCarrier::MeshCells {
        mesh: image,
        values,
    })?;
    Ok((sigma, gmap))
}

/// Best affine fit of (a - b) over the given positions; returns the maximum
/// deviation after removing the fitted affine part. Compares potentials
/// modulo the affine gauge.
pub fn affine_gauge_gap(a: &[f64], b: &[f64], positions: &[Point2]) -> f64 {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), positions.len());
    let n = a.len() as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    let mut sd = 0.0;
    let mut sdx = 0.0;
    let mut sdy = 0.0;
    for (idx, p) in positions.iter().enumerate() {
        let d = a[idx] - b[idx];
        sx += p.x;
        sy += p.y;
        sxx += p.x * p.x;
        sxy += p.x * p.y;
        syy += p.y * p.y;
        sd += d;
        sdx += d * p.x;
        sdy += d * p.y;
    }
    let m = vec![vec![sxx, sxy, sx], vec![sxy, syy, sy], vec![sx, sy, n]];
    let rhs = vec![sdx, sdy, sd];
    let sol = crate::la::dense::lu_solve(&m, &rhs).unwrap_or(vec![0.0, 0.0, 0.0]);
    positions
        .iter()
        .enumerate()
        .map(|(idx, p)| {
            let d = a[idx] - b[idx];
            (d - sol[0] * p.x - sol[1] * p.y - sol[2]).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_positions(grid: RasterGrid) -> Vec<Point2> {
        (0..grid.ny)
            .flat_map(|j| (0..grid.nx).map(move |i| grid.node(i, j)))
            .collect()
    }

    #[test]
    fn rotation_constant_is_orthogonal() {
        let r = ROTATION_R;
        let rrt = r.mul(r.transpose());
        assert_eq!((rrt.a, rrt.b, rrt.c, rrt.d), (1.0, 0.0, 0.0, 1.0));
        assert_eq!(r.det(), 1.0);
    }

    #[test]
    fn paraboloid_maps_to_identity() {
        let s = SField::paraboloid();
        let grid = RasterGrid::over_unit_square(9, 9);
        let q = s_to_q(&s, grid).unwrap();
        for t in q.carrier.values() {
            assert!((t.a11 - 1.0).abs() < 1e-12);
            assert!(t.a12.abs() < 1e-12);
            assert!((t.a22 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_shift_leaves_q_unchanged() {
        let grid = RasterGrid::over_unit_square(17, 17);
        let s1 = SField::raster_from_fn(grid, |p| 0.5 * (p.x * p.x + p.y * p.y));
        let s2 = SField::raster_from_fn(grid, |p| {
            0.5 * (p.x * p.x + p.y * p.y) + 3.0 * p.x - 1.5 * p.y + 0.7
        });
        let q1 = s_to_q(&s1, grid).unwrap();
        let q2 = s_to_q(&s2, grid).unwrap();
        for (a, b) in q1.carrier.values().iter().zip(q2.carrier.values()) {
            assert!((a.a11 - b.a11).abs() < 1e-9);
            assert!((a.a12 - b.a12).abs() < 1e-9);
            assert!((a.a22 - b.a22).abs() < 1e-9);
        }
    }

    #[test]
    fn quartic_potential_rotates_into_q22() {
        // s = x^4/12 + y^2/2 on [1,2]^2 has Hess = diag(x^2, 1), so
        // Q = R Hess R^T = diag(1, x^2)
        let s = SField::analytic(
            |p| p.x.powi(4) / 12.0 + 0.5 * p.y * p.y,
            |p| v2(p.x.powi(3) / 3.0, p.y),
            |p| Tensor2::diag(p.x * p.x, 1.0),
        );
        let grid = RasterGrid {
            nx: 9,
            ny: 9,
            x0: 1.0,
            y0: 1.0,
            dx: 0.125,
            dy: 0.125,
        };
        let q = s_to_q(&s, grid).unwrap();
        for j in 0..9 {
            for i in 0..9 {
                let p = grid.node(i, j);
                let t = q.carrier.values()[grid.idx(i, j)];
                assert!((t.a11 - 1.0).abs() < 1e-12);
                assert!(t.a12.abs() < 1e-12);
                assert!((t.a22 - p.x * p.x).abs() < 1e-12);
            }
        }
        // independent small-step finite-difference verification of the
        // analytic Hessian route
        let f = |x: f64, y: f64| x.powi(4) / 12.0 + 0.5 * y * y;
        let h = 1e-4;
        for &(x, y) in &[(1.25, 1.5), (1.5, 1.75), (1.875, 1.125)] {
            let sxx = (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h);
            let syy = (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h);
            let t = q.value_at(v2(x, y));
            assert!((t.a11 - syy).abs() < 1e-6);
            assert!((t.a22 - sxx).abs() < 1e-6);
        }
    }

    #[test]
    fn q_to_s_identity_gives_paraboloid() {
        let grid = RasterGrid::over_unit_square(33, 33);
        let q = QField::new(TensorCarrier::raster_from_fn(grid, |_| Tensor2::identity())).unwrap();
        let (s, residual) = q_to_s(&q, 1e-9).unwrap();
        assert!(residual < 1e-12);
        let SField::Raster { values, .. } = &s else { panic!() };
        let positions = grid_positions(grid);
        let expected: Vec<f64> = positions
            .iter()
            .map(|p| 0.5 * (p.x * p.x + p.y * p.y))
            .collect();
        assert!(affine_gauge_gap(values, &expected, &positions) < 1e-10);
    }

    #[test]
    fn q_to_s_anisotropic_diag() {
        // Q = diag(0.1, 10) -> s = 5 x^2 + 0.05 y^2 up to affine
        let grid = RasterGrid::over_unit_square(41, 41);
        let q = QField::new(TensorCarrier::raster_from_fn(grid, |_| {
            Tensor2::diag(0.1, 10.0)
        }))
        .unwrap();
        let (s, _) = q_to_s(&q, 1e-9).unwrap();
        let SField::Raster { values, .. } = &s else { panic!() };
        let positions = grid_positions(grid);
        let expected: Vec<f64> = positions
            .iter()
            .map(|p| 5.0 * p.x * p.x + 0.05 * p.y * p.y)
            .collect();
        assert!(affine_gauge_gap(values, &expected, &positions) < 1e-9);
        // finite-difference Hessian of the output matches R^T Q R
        let h = s.hessian(v2(0.5, 0.5));
        assert!((h.a11 - 10.0).abs() < 1e-8);
        assert!((h.a22 - 0.1).abs() < 1e-8);
        assert!(h.a12.abs() < 1e-8);
    }

    #[test]
    fn roundtrip_error_shrinks_second_order() {
        // smooth non-constant divergence-free Q built from a smooth convex s
        let s_exact = |p: Point2| {
            0.8 * p.x * p.x + 0.6 * p.y * p.y + 0.02 * (2.0 * p.x + p.y).sin() + 0.2 * p.x * p.y
        };
        let mut errs = Vec::new();
        for n in [17usize, 33, 65] {
            let grid = RasterGrid::over_unit_square(n, n);
            let s0 = SField::raster_from_fn(grid, s_exact);
            let q = s_to_q(&s0, grid).unwrap();
            let (s1, _) = q_to_s(&q, 1.0).unwrap();
            let (SField::Raster { values: v1, .. }, SField::Raster { values: v0, .. }) = (&s1, &s0)
            else {
                panic!()
            };
            let positions = grid_positions(grid);
            errs.push(affine_gauge_gap(v1, v0, &positions));
        }
        // second order: each halving divides the error by about 4
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
        assert!(errs[1] / errs[2] > 3.0, "{errs:?}");
    }

    #[test]
    fn path_dependence_flagged_for_non_divergence_free() {
        let grid = RasterGrid::over_unit_square(17, 17);
        // a11 varying in x makes column 1 non-divergence-free
        let q = QField::new(TensorCarrier::raster_from_fn(grid, |p| {
            Tensor2::diag(1.0 + p.x, 1.0)
        }))
        .unwrap();
        assert!(matches!(
            q_to_s(&q, 1e-9),
            Err(FieldError::PathDependence { .. })
        ));
    }

    #[test]
    fn ellipticity_guard() {
        let grid = RasterGrid::over_unit_square(5, 5);
        let carrier = TensorCarrier::raster_from_fn(grid, |p| Tensor2::diag(p.x - 0.5, 1.0));
        assert!(matches!(
            SigmaField::new(carrier),
            Err(FieldError::EllipticityViolation { .. })
        ));
    }

    #[test]
    fn constant_sigma_pushes_to_itself() {
        let mesh = Arc::new(crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, 8, 8));
        // isotropic constant: F = identity, Q = c I exactly
        let sigma = SigmaField::constant(Arc::clone(&mesh), Tensor2::iso(2.5)).unwrap();
        let (q, fmap) = sigma_to_q(&sigma, &mesh).unwrap();
        assert!((fmap.min_jacobian_det - 1.0).abs() < 1e-9);
        for t in q.carrier.values() {
            assert!((t.a11 - 2.5).abs() < 1e-9 && t.a12.abs() < 1e-9 && (t.a22 - 2.5).abs() < 1e-9);
        }
        // anisotropic constant: F = identity, Q = sigma (already div-free)
        let a = Tensor2::new(2.0, 0.5, 1.0);
        let sigma = SigmaField::constant(Arc::clone(&mesh), a).unwrap();
        let (q, _) = sigma_to_q(&sigma, &mesh).unwrap();
        for t in q.carrier.values() {
            assert!((t.a11 - a.a11).abs() < 1e-9);
            assert!((t.a12 - a.a12).abs() < 1e-9);
            assert!((t.a22 - a.a22).abs() < 1e-9);
        }
        assert!(q.divergence_residual.unwrap() < 1e-9);
    }

    #[test]
    fn laminate_pushforward_matches_1d_flux() {
        // a(x) striped: row-wise structure of Q follows the 1D closed form:
        // Q11 = flux constant (harmonic mean), Q22 = a pushed forward
        let stripes = [0.5, 2.0];
        let mesh = Arc::new(crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, 16, 16));
        let sigma = SigmaField::new(TensorCarrier::mesh_from_fn(Arc::clone(&mesh), |p| {
            Tensor2::iso(if (p.x * 8.0).floor() as i32 % 2 == 0 {
                stripes[0]
            } else {
                stripes[1]
            })
        }))
        .unwrap();
        let (q, fmap) = sigma_to_q(&sigma, &mesh).unwrap();
        let hm = 2.0 / (1.0 / stripes[0] + 1.0 / stripes[1]);
        // 1D closed form: Q = diag(flux, sigma^2 / flux) with constant flux;
        // probe the bulk where the finite-domain boundary layer has decayed
        let image = fmap.image_mesh();
        let (mut worst11, mut worst12, mut count) = (0.0f64, 0.0f64, 0);
        let mut sum11 = 0.0;
        for (t, qt) in q.carrier.values().iter().enumerate() {
            let c = image.tri_centroid(t);
            if c.x < 0.25 || c.x > 0.75 || c.y < 0.35 || c.y > 0.65 {
                continue;
            }
            worst11 = worst11.max((qt.a11 - hm).abs() / hm);
            worst12 = worst12.max(qt.a12.abs() / hm);
            sum11 += qt.a11;
            count += 1;
        }
        assert!(count > 20);
        assert!(worst11 < 0.2, "flux spread {worst11}");
        assert!(worst12 < 0.2, "shear {worst12}");
        let mean11 = sum11 / count as f64;
        assert!((mean11 - hm).abs() / hm < 0.03, "{mean11} vs {hm}");
    }

    #[test]
    fn q_constant_isotropic_recovery() {
        let mesh = Arc::new(crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, 8, 8));
        let q = QField::new(TensorCarrier::mesh_from_fn(Arc::clone(&mesh), |_| {
            Tensor2::iso(3.0)
        }))
        .unwrap();
        let (sigma, gmap) = q_to_sigma_isotropic(&q, &mesh).unwrap();
        assert!((gmap.min_jacobian_det - 1.0).abs() < 1e-9);
        for t in sigma.carrier.values() {
            assert!((t.a11 - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn q_constant_anisotropic_gives_sqrt_det_and_warped_g() {
        let mesh = Arc::new(crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, 10, 10));
        let a = Tensor2::diag(4.0, 1.0);
        let q = QField::new(TensorCarrier::mesh_from_fn(Arc::clone(&mesh), |_| a)).unwrap();
        let (sigma, gmap) = q_to_sigma_isotropic(&q, &mesh).unwrap();
        let want = a.det().sqrt();
        for t in sigma.carrier.values() {
            assert!((t.a11 - want).abs() < 1e-9, "{} vs {want}", t.a11);
            assert_eq!(t.a12, 0.0);
            assert_eq!(t.a11, t.a22);
        }
        // a constant coefficient has identity harmonic coordinates, so G = x
        // here; the recovered isotropic medium does not push back onto the
        // anisotropic Q, which is exactly the non-surjectivity of the
        // isotropic inverse
        for v in 0..mesh.num_vertices() {
            assert!((gmap.image(v) - mesh.vertex(v)).norm() < 1e-9);
        }
    }

    #[test]
    fn isotropic_roundtrip_error_shrinks() {
        // sigma -> Q -> sigma' self-consistency, error O(h)
        let sigma_fn = |p: Point2| 1.0 + 0.5 * (2.0 * p.x).sin() * (2.0 * p.y).cos();
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let mesh = Arc::new(crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, n, n));
            let sigma = SigmaField::new(TensorCarrier::mesh_from_fn(Arc::clone(&mesh), |p| {
                Tensor2::iso(sigma_fn(p))
            }))
            .unwrap();
            let (q, _) = sigma_to_q(&sigma, &mesh).unwrap();
            let (sigma2, _) = q_to_sigma_isotropic(&q, &mesh).unwrap();
            // L2 error over probe points
            let mut err = 0.0;
            let mut norm = 0.0;
            let probes = 24;
            for j in 1..probes {
                for i in 1..probes {
                    let p = v2(i as f64 / probes as f64, j as f64 / probes as f64);
                    let d = sigma2.value_at(p).a11 - sigma_fn(p);
                    err += d * d;
                    norm += sigma_fn(p) * sigma_fn(p);
                }
            }
            errs.push((err / norm).sqrt());
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
        assert!(errs[2] < 0.02, "{errs:?}");
    }

    #[test]
    fn pushforward_scales_homogeneously() {
        // scaling sigma by c scales Q by c and leaves F unchanged
        let mesh = Arc::new(crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, 8, 8));
        let sigma = SigmaField::new(TensorCarrier::mesh_from_fn(Arc::clone(&mesh), |p| {
            Tensor2::iso(1.0 + p.x * p.y)
        }))
        .unwrap();
        let (q1, f1) = sigma_to_q(&sigma, &mesh).unwrap();
        let (q2, f2) = sigma_to_q(&sigma.scale(3.0), &mesh).unwrap();
        for v in 0..mesh.num_vertices() {
            assert!((f1.image(v) - f2.image(v)).norm() < 1e-10);
        }
        for (a, b) in q1.carrier.values().iter().zip(q2.carrier.values()) {
            assert!((a.a11 * 3.0 - b.a11).abs() < 1e-9);
            assert!((a.a12 * 3.0 - b.a12).abs() < 1e-9);
            assert!((a.a22 * 3.0 - b.a22).abs() < 1e-9);
        }
    }

    #[test]
    fn det_q_equals_sigma_squared_for_isotropic_media() {
        let mesh = Arc::new(crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, 12, 12));
        let sigma = SigmaField::new(TensorCarrier::mesh_from_fn(Arc::clone(&mesh), |p| {
            Tensor2::iso(1.0 + 0.7 * p.x)
        }))
        .unwrap();
        let (q, _) = sigma_to_q(&sigma, &mesh).unwrap();
        // det(Q o F) = sigma^2 holds cell-by-cell algebraically
        for (t, qt) in q.carrier.values().iter().enumerate() {
            let st = sigma.carrier.values()[t];
            assert!(
                (qt.det() - st.det()).abs() < 1e-9 * st.det(),
                "cell {t}: det {} vs {}",
                qt.det(),
                st.det()
            );
        }
    }
}
