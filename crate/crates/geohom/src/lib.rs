//! Discrete geometric homogenization of 2D divergence-form elliptic
//! operators: the sigma / Q / s parameterization chain, hinge-formula edge
//! conductivities, Q-adapted weighted-Delaunay meshing, periodic cell
//! problems, and EIT reconstruction on top of those pieces.

pub mod config;
pub mod eit;
pub mod fem;
pub mod fields;
pub mod geom;
pub mod homogenize;
pub mod io;
pub mod la;
pub mod mesh;
pub mod meshopt;
pub mod phantom;
pub mod predicates;
pub mod scalar;
pub mod svg;

pub use scalar::Real;

/// Working-precision scalar used throughout the pipelines.
pub type Scalar = f64;
/// 2D point / vector in working precision.
pub type Point2 = geom::Vec2<Scalar>;
/// Symmetric 2x2 tensor in working precision.
pub type Tensor2 = geom::Sym2<Scalar>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub mod cli;

/// Binary entry point.
pub fn cli_run() -> i32 {
    let argv: Vec<String> = std::env::args().collect();
    cli::run(&argv)
}
