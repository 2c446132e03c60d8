//! The coarse interpolant `I_H` and the nudging operator built on it.
//!
//! Both modes are linear maps from velocity coefficients to one value per
//! coarse cell and component, stored as sparse per-cell weights over velocity
//! nodes: `(I_H u)_cell,c = Σ_i w_i u_{c,i}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::basis::tabulate;
use super::dofmap::{DofMap, VelocityField};
use super::FemError;
use crate::linalg::SparseMatrix;
use crate::mesh::CoarseGrid;
use crate::quadrature::TriangleRule;

/// One velocity value per coarse cell, row-major.
pub type CellValues = Vec<[f64; 2]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IhMode {
    /// Value at the cell's observation vertex.
    #[default]
    PointValue,
    /// Mean over the cell (`L²` projection onto piecewise constants).
    CellAverage,
}

#[derive(Debug, Clone)]
pub struct CoarseInterpolant {
    grid: CoarseGrid,
    mode: IhMode,
    weights: Vec<Vec<(usize, f64)>>,
}

impl CoarseInterpolant {
    pub fn new(
        dofmap: &DofMap,
        grid: CoarseGrid,
        mode: IhMode,
        obs_vertices: Option<&[usize]>,
    ) -> Result<Self, FemError> {
        let weights = match mode {
            IhMode::PointValue => {
                let obs = obs_vertices.ok_or_else(|| {
                    FemError::InvalidArgument("point-value interpolation needs observation vertices".into())
                })?;
                if obs.len() != grid.n_cells() {
                    return Err(FemError::InvalidArgument(format!(
                        "{} observation vertices for {} coarse cells",
                        obs.len(),
                        grid.n_cells()
                    )));
                }
                if let Some(&v) = obs.iter().find(|&&v| v >= dofmap.mesh().n_vertices()) {
                    return Err(FemError::InvalidArgument(format!("observation vertex {v} out of range")));
                }
                obs.iter().map(|&v| vec![(v, 1.0)]).collect()
            }
            IhMode::CellAverage => cell_average_weights(dofmap, &grid)?,
        };
        Ok(Self { grid, mode, weights })
    }

    pub fn grid(&self) -> &CoarseGrid {
        &self.grid
    }

    pub fn mode(&self) -> IhMode {
        self.mode
    }

    /// Per-cell node weights.
    pub fn weights(&self) -> &[Vec<(usize, f64)>] {
        &self.weights
    }

    pub fn apply(&self, dofmap: &DofMap, u: &VelocityField) -> Result<CellValues, FemError> {
        dofmap.check_velocity(u)?;
        let nn = dofmap.n_nodes();
        Ok(self
            .weights
            .iter()
            .map(|cell| {
                let mut v = [0.0; 2];
                for &(node, w) in cell {
                    v[0] += w * u.0[node];
                    v[1] += w * u.0[nn + node];
                }
                v
            })
            .collect())
    }
}

fn cell_average_weights(dofmap: &DofMap, grid: &CoarseGrid) -> Result<Vec<Vec<(usize, f64)>>, FemError> {
    let n = dofmap.mesh().n();
    if !n.is_multiple_of(grid.n()) {
        return Err(FemError::InvalidArgument(format!(
            "cell averages need the fine mesh ({n}) to refine the coarse grid ({})",
            grid.n()
        )));
    }
    let rule = TriangleRule::degree5();
    let inv_area = 1.0 / grid.cell_area();
    let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); grid.n_cells()];
    for t in 0..dofmap.mesh().n_triangles() {
        let geom = dofmap.geometry(t);
        let cell = grid.cell_of(geom.point([1.0 / 3.0; 3]));
        let pts = tabulate(&geom, &rule);
        let nodes = dofmap.element_nodes(t);
        for a in 0..6 {
            let integral: f64 = pts.iter().map(|q| q.weight * q.phi[a]).sum();
            *acc[cell].entry(nodes[a]).or_default() += inv_area * integral;
        }
    }
    Ok(acc.into_iter().map(|m| m.into_iter().collect()).collect())
}

/// `I_H u` for a velocity field.
pub fn interpolate_ih(
    dofmap: &DofMap,
    u: &VelocityField,
    grid: CoarseGrid,
    mode: IhMode,
    obs_vertices: Option<&[usize]>,
) -> Result<CellValues, FemError> {
    CoarseInterpolant::new(dofmap, grid, mode, obs_vertices)?.apply(dofmap, u)
}

/// `μ(I_H u, I_H v) = μ Σ_cells |cell| (I_H u)·(I_H v)` and the matching data
/// term `μ(I_H d, I_H v)`.
#[derive(Debug, Clone)]
pub struct NudgingOperator {
    mu: f64,
    interp: CoarseInterpolant,
}

impl NudgingOperator {
    pub fn new(mu: f64, interp: CoarseInterpolant) -> Result<Self, FemError> {
        if !(mu >= 0.0) {
            return Err(FemError::InvalidArgument(format!("nudging parameter must be nonnegative, got {mu}")));
        }
        Ok(Self { mu, interp })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn interpolant(&self) -> &CoarseInterpolant {
        &self.interp
    }

    /// Global `(row, col, value)` entries over velocity dofs.
    pub fn entries(&self, dofmap: &DofMap) -> Vec<(usize, usize, f64)> {
        let area = self.interp.grid.cell_area();
        let nn = dofmap.n_nodes();
        let mut out = Vec::new();
        for c in 0..2 {
            for cell in &self.interp.weights {
                for &(i, wi) in cell {
                    for &(j, wj) in cell {
                        out.push((c * nn + i, c * nn + j, self.mu * area * (wi * wj)));
                    }
                }
            }
        }
        out
    }

    /// Structural couplings the operator needs in a system pattern.
    pub fn couplings(&self, dofmap: &DofMap) -> Vec<(usize, usize)> {
        self.entries(dofmap).into_iter().map(|(r, c, _)| (r, c)).collect()
    }

    /// Velocity block matrix `N_μ` (`n_u × n_u`).
    pub fn matrix(&self, dofmap: &DofMap) -> SparseMatrix {
        SparseMatrix::from_triplets(dofmap.n_u(), &self.entries(dofmap)).expect("in range")
    }

    /// Right-hand side `μ(I_H d, I_H φ_i)` for observed cell values `d`
    /// (length `n_u`).
    pub fn rhs(&self, dofmap: &DofMap, data: &[[f64; 2]]) -> Result<Vec<f64>, FemError> {
        if data.len() != self.interp.grid.n_cells() {
            return Err(FemError::InvalidArgument(format!(
                "{} cell values for {} cells",
                data.len(),
                self.interp.grid.n_cells()
            )));
        }
        let area = self.interp.grid.cell_area();
        let nn = dofmap.n_nodes();
        let mut out = vec![0.0; dofmap.n_u()];
        for (cell, d) in self.interp.weights.iter().zip(data) {
            for &(i, wi) in cell {
                out[i] += self.mu * area * d[0] * wi;
                out[nn + i] += self.mu * area * d[1] * wi;
            }
        }
        Ok(out)
    }
}

/// Nudging matrix and data map for the given configuration.
pub fn assemble_nudging(
    dofmap: &DofMap,
    grid: CoarseGrid,
    obs_vertices: Option<&[usize]>,
    mu: f64,
    mode: IhMode,
) -> Result<(SparseMatrix, NudgingOperator), FemError> {
    let op = NudgingOperator::new(mu, CoarseInterpolant::new(dofmap, grid, mode, obs_vertices)?)?;
    Ok((op.matrix(dofmap), op))
}
