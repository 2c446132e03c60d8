//! Steady incompressible Navier–Stokes solvers on the lid-driven cavity with
//! continuous data assimilation (nudging) from sparse, possibly noisy,
//! velocity measurements.
//!
//! The crate is organized bottom-up:
//!
//! - [`mesh`]: structured triangulations of the unit square and coarse
//!   observation grids.
//! - [`quadrature`]: triangle quadrature rules.
//! - [`linalg`]: compressed sparse storage and a sparse direct LU solve.
//! - [`fem`]: Taylor–Hood (P2/P1) dof layout, operator assembly, boundary
//!   conditions, norms and the coarse interpolant `I_H`.
//! - [`observations`]: clean and noisy measurement sets.
//! - [`solvers`]: Picard, Newton, CDA-Picard and the hybrid CDA-Picard→Newton
//!   driver, plus Reynolds-continuation reference solutions.
//! - [`diagnostics`]: contraction rates, theory-side bounds and history export.
//! - [`cli`]: the experiment runner behind the `cdanse` binary.

// `!(x > 0.0)` rejects NaN as well; dense index loops mirror the element formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod diagnostics;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod observations;
pub mod quadrature;
pub mod solvers;
