//! Taylor–Hood (P2 velocity / P1 pressure) discretization of the steady
//! incompressible Navier–Stokes equations on the unit square.

pub mod assembly;
pub mod basis;
pub mod bc;
pub mod dofmap;
pub mod interp;
pub mod norms;

use thiserror::Error;

pub use assembly::{
    assemble_convection, assemble_divergence_coupling, assemble_newton_linearization, assemble_viscous_graddiv,
    SystemAssembler,
};
pub use bc::{apply_lid_bc, AssembledSystem, LidConditions};
pub use dofmap::{DofMap, PressureField, VelocityField};
pub use interp::{assemble_nudging, interpolate_ih, CellValues, CoarseInterpolant, IhMode, NudgingOperator};
pub use norms::{compute_norms, NormOperators, Norms};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("field has {got} coefficients, dof map expects {expected}")]
    DofMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}
