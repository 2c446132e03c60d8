//! Dirichlet data for the driven cavity and its enforcement on assembled
//! systems.

use super::dofmap::{DofMap, VelocityField};
use crate::linalg::SparseMatrix;
use crate::mesh::BoundaryTag;

/// Linear system over all dofs together with the set of constrained rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub bc_mask: Vec<bool>,
}

impl AssembledSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<f64>) -> Self {
        let n = rhs.len();
        Self {
            matrix,
            rhs,
            bc_mask: vec![false; n],
        }
    }
}

/// Prescribed values for the cavity: the lid velocity on every Lid-tagged
/// velocity node (top corners included), zero on the other walls, and the
/// first pressure dof pinned to zero.
#[derive(Debug, Clone)]
pub struct LidConditions {
    constrained: Vec<(usize, f64)>,
    pressure_pin: usize,
}

impl LidConditions {
    pub fn new(dofmap: &DofMap, lid_value: [f64; 2]) -> Self {
        let mut constrained = Vec::with_capacity(2 * dofmap.boundary_nodes().len() + 1);
        for c in 0..2 {
            for &(node, tag) in dofmap.boundary_nodes() {
                let g = match tag {
                    BoundaryTag::Lid => lid_value[c],
                    BoundaryTag::Wall => 0.0,
                };
                constrained.push((dofmap.velocity_dof(node, c), g));
            }
        }
        let pressure_pin = dofmap.pressure_dof(0);
        constrained.push((pressure_pin, 0.0));
        Self {
            constrained,
            pressure_pin,
        }
    }

    /// Constrained dofs and their values (velocity, then the pressure pin).
    pub fn constrained(&self) -> &[(usize, f64)] {
        &self.constrained
    }

    pub fn pressure_pin(&self) -> usize {
        self.pressure_pin
    }

    /// Velocity field that is zero inside and carries the boundary values.
    pub fn lift(&self, dofmap: &DofMap) -> VelocityField {
        let mut u = VelocityField::zeros(dofmap);
        self.impose(&mut u);
        u
    }

    /// Overwrites the boundary coefficients of `u`.
    pub fn impose(&self, u: &mut VelocityField) {
        let n_u = u.0.len();
        for &(d, g) in &self.constrained {
            if d < n_u {
                u.0[d] = g;
            }
        }
    }

    /// Replaces constrained rows by identity rows and eliminates the matching
    /// columns, moving their contribution to the right-hand side.
    pub fn apply(&self, mut system: AssembledSystem) -> AssembledSystem {
        let n = system.rhs.len();
        let mut value = vec![f64::NAN; n];
        for &(d, g) in &self.constrained {
            value[d] = g;
            system.bc_mask[d] = true;
        }
        let pattern = system.matrix.pattern().clone();
        let (row_ptr, col_idx) = (pattern.row_ptr(), pattern.col_idx());
        let vals = system.matrix.values_mut();
        for r in 0..n {
            let range = row_ptr[r]..row_ptr[r + 1];
            if system.bc_mask[r] {
                for k in range {
                    vals[k] = if col_idx[k] == r { 1.0 } else { 0.0 };
                }
                system.rhs[r] = value[r];
            } else {
                let mut shift = 0.0;
                for k in range {
                    let c = col_idx[k];
                    if system.bc_mask[c] {
                        shift += vals[k] * value[c];
                        vals[k] = 0.0;
                    }
                }
                system.rhs[r] -= shift;
            }
        }
        system
    }
}

/// Applies lid conditions with the given lid velocity.
pub fn apply_lid_bc(system: AssembledSystem, dofmap: &DofMap, lid_value: [f64; 2]) -> AssembledSystem {
    LidConditions::new(dofmap, lid_value).apply(system)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::SystemAssembler;
    use crate::linalg::lu_solve;
    use crate::mesh::Mesh;
    use std::sync::Arc;

    fn stokes(n: usize) -> (Arc<DofMap>, AssembledSystem) {
        let d = Arc::new(DofMap::new(Mesh::uniform_cavity(n).unwrap()));
        let sa = SystemAssembler::new(d.clone(), &[]);
        let mut m = sa.viscous_graddiv(1.0, 1.0).unwrap();
        m.add_assign(&sa.coupling()).unwrap();
        let rhs = vec![0.0; d.n_total()];
        (d, AssembledSystem::new(m, rhs))
    }

    #[test]
    fn lid_dof_count_n2() {
        let (d, sys) = stokes(2);
        let out = apply_lid_bc(sys, &d, [1.0, 0.0]);
        let lid: Vec<usize> = (0..d.n_u())
            .filter(|&i| out.bc_mask[i] && out.rhs[i] == 1.0)
            .collect();
        assert_eq!(lid.len(), 5);
        let lid_rows = (0..d.n_nodes())
            .filter(|&n| d.node_coords()[n][1] == 1.0)
            .flat_map(|n| [d.velocity_dof(n, 0), d.velocity_dof(n, 1)])
            .filter(|&i| out.bc_mask[i])
            .count();
        assert_eq!(lid_rows, 10);
        for n in 0..d.n_nodes() {
            let on_lid = d.node_coords()[n][1] == 1.0;
            assert_eq!(out.rhs[d.velocity_dof(n, 0)] == 1.0, on_lid);
        }
    }

    #[test]
    fn constrained_rows_are_identity() {
        let (d, sys) = stokes(4);
        let out = apply_lid_bc(sys, &d, [1.0, 0.0]);
        for r in 0..d.n_total() {
            if out.bc_mask[r] {
                for (c, v) in out.matrix.row(r) {
                    assert_eq!(v, if c == r { 1.0 } else { 0.0 });
                }
            } else {
                for (c, v) in out.matrix.row(r) {
                    if out.bc_mask[c] {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
        assert!(out.bc_mask[d.pressure_dof(0)]);
    }

    #[test]
    fn homogeneous_stokes_is_zero() {
        let (d, sys) = stokes(6);
        let out = apply_lid_bc(sys, &d, [0.0, 0.0]);
        let x = lu_solve(&out.matrix, &out.rhs).unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn stokes_residual_is_small() {
        let (d, sys) = stokes(8);
        let out = apply_lid_bc(sys, &d, [1.0, 0.0]);
        let x = lu_solve(&out.matrix, &out.rhs).unwrap();
        let ax = out.matrix.mul_vec(&x);
        let r = ax.iter().zip(&out.rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let b = out.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(r / b < 1e-10, "{r}");
    }

    #[test]
    fn lift_matches_boundary_values() {
        let d = DofMap::new(Mesh::uniform_cavity(3).unwrap());
        let bc = LidConditions::new(&d, [1.0, 0.0]);
        let u = bc.lift(&d);
        for &(node, tag) in d.boundary_nodes() {
            let expect = if tag == BoundaryTag::Lid { 1.0 } else { 0.0 };
            assert_eq!(u.0[d.velocity_dof(node, 0)], expect);
            assert_eq!(u.0[d.velocity_dof(node, 1)], 0.0);
        }
        let interior: f64 = u.0.iter().sum();
        assert_eq!(interior, 7.0);
    }
}
