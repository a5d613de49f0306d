//! Minimal dense/sparse linear algebra used by the FEM and inverse solvers.

pub mod dense;
pub mod lp;
pub mod sparse;

pub use dense::{cholesky_solve, jacobi_eigh, DenseSym};
pub use sparse::{SparseSym, SymSolver};
