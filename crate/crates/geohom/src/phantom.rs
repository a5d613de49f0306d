//! Built-in conductivity phantoms used by the EIT experiments and tests.

use std::sync::Arc;

use crate::fields::{FieldError, SigmaField, TensorCarrier};
use crate::mesh::Mesh2D;
use crate::{Point2, Tensor2};

/// A named conductivity distribution on the unit square.
pub struct Phantom {
    pub name: &'static str,
    pub description: &'static str,
    eval: Box<dyn Fn(Point2) -> Tensor2 + Send + Sync>,
}

impl Phantom {
    pub fn value_at(&self, p: Point2) -> Tensor2 {
        (self.eval)(p)
    }

    /// Sample onto per-triangle cells of a mesh.
    pub fn on_mesh(&self, mesh: Arc<Mesh2D>) -> Result<SigmaField, FieldError> {
        let values = (0..mesh.num_triangles())
            .map(|t| (self.eval)(mesh.tri_centroid(t)))
            .collect();
        SigmaField::new(TensorCarrier::MeshCells { mesh, values })
    }

    /// Background 1.0 with a circle of 10.0 and a bar of 5.0: the standard
    /// isotropic inclusion test case.
    pub fn blob() -> Phantom {
        Phantom {
            name: "blob",
            description: "background 1.0, circle 10.0, bar 5.0",
            eval: Box::new(|p| {
                let circle = (p - Point2::new(0.35, 0.65)).norm() < 0.15;
                let bar = p.x > 0.55 && p.x < 0.85 && p.y > 0.2 && p.y < 0.45;
                Tensor2::iso(if circle {
                    10.0
                } else if bar {
                    5.0
                } else {
                    1.0
                })
            }),
        }
    }

    /// Fine-pitch laminate with stripe values 0.05 / 1.95 / 1.0 along x.
    pub fn laminate() -> Phantom {
        Phantom::laminate_with_periods(8.0)
    }

    /// Laminate with the same stripe values and a chosen number of periods
    /// per unit length.
    pub fn laminate_with_periods(periods: f64) -> Phantom {
        Phantom {
            name: "laminate",
            description: "x-stripes 0.05 / 1.95 / 1.0",
            eval: Box::new(move |p| {
                let local = (p.x * periods).rem_euclid(1.0) * 3.0;
                let a = match local.floor() as usize {
                    0 => 0.05,
                    1 => 1.95,
                    _ => 1.0,
                };
                Tensor2::iso(a)
            }),
        }
    }

    /// Two-phase checkerboard with k x k cells per unit.
    pub fn checkerboard(a1: f64, a2: f64, k: usize) -> Phantom {
        let cells = k as f64;
        Phantom {
            name: "checkerboard",
            description: "two-phase checkerboard",
            eval: Box::new(move |p| {
                let ix = (p.x * cells).floor() as i64;
                let iy = (p.y * cells).floor() as i64;
                Tensor2::iso(if (ix + iy).rem_euclid(2) == 0 { a1 } else { a2 })
            }),
        }
    }

    /// Uniform medium.
    pub fn constant(c: f64) -> Phantom {
        Phantom {
            name: "constant",
            description: "uniform conductivity",
            eval: Box::new(move |_| Tensor2::iso(c)),
        }
    }

    pub fn by_name(name: &str) -> Option<Phantom> {
        match name {
            "blob" => Some(Phantom::blob()),
            "laminate" => Some(Phantom::laminate()),
            "checkerboard" => Some(Phantom::checkerboard(0.5, 2.0, 2)),
            "constant" => Some(Phantom::constant(1.0)),
            _ => None,
        }
    }
}
