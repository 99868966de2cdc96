//! Dense linear algebra and fixed-step integration shared by every module.

mod linalg;
mod ode;
pub mod stats;

pub use linalg::{
    axpy, cholesky_solve, dot, eigenvalue_ratio, norm, pseudo_left_inverse, sub,
    symmetric_eigenvalues, Cholesky, Matrix, Vector, JITTER_LEVELS, RANK_RATIO_TOL,
    SYMMETRY_TOL,
};
pub use ode::rk4_step;
