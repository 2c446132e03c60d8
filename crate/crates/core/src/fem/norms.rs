//! Norms of P2 velocity fields.

use serde::{Deserialize, Serialize};

use super::basis::tabulate;
use super::dofmap::{DofMap, PressureField, VelocityField};
use super::FemError;
use crate::linalg::SparseMatrix;
use crate::quadrature::TriangleRule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub h1_semi: f64,
    pub div_l2: f64,
    pub l2_error: Option<f64>,
}

/// Element-by-element evaluation with the degree-5 rule (exact for
/// quadratic fields).
pub fn compute_norms(
    dofmap: &DofMap,
    u: &VelocityField,
    reference: Option<&VelocityField>,
) -> Result<Norms, FemError> {
    dofmap.check_velocity(u)?;
    if let Some(r) = reference {
        dofmap.check_velocity(r)?;
    }
    let rule = TriangleRule::degree5();
    let (mut l2, mut h1, mut div, mut err) = (0.0, 0.0, 0.0, 0.0);
    for t in 0..dofmap.mesh().n_triangles() {
        let pts = tabulate(&dofmap.geometry(t), &rule);
        let w = dofmap.gather(u, t);
        let wr = reference.map(|r| dofmap.gather(r, t));
        for q in &pts {
            let mut val = [0.0; 2];
            let mut grad = [[0.0; 2]; 2];
            let mut diff = [0.0; 2];
            for c in 0..2 {
                for a in 0..6 {
                    val[c] += w[c][a] * q.phi[a];
                    grad[c][0] += w[c][a] * q.dphi[a][0];
                    grad[c][1] += w[c][a] * q.dphi[a][1];
                    if let Some(wr) = &wr {
                        diff[c] += (w[c][a] - wr[c][a]) * q.phi[a];
                    }
                }
            }
            l2 += q.weight * (val[0] * val[0] + val[1] * val[1]);
            h1 += q.weight * grad.iter().flatten().map(|g| g * g).sum::<f64>();
            let d = grad[0][0] + grad[1][1];
            div += q.weight * d * d;
            err += q.weight * (diff[0] * diff[0] + diff[1] * diff[1]);
        }
    }
    Ok(Norms {
        l2: l2.sqrt(),
        h1_semi: h1.sqrt(),
        div_l2: div.sqrt(),
        l2_error: reference.map(|_| err.sqrt()),
    })
}

/// `‖p − q‖_{L²}` for P1 pressures, with an optional exact field evaluated at
/// quadrature points instead of `q`.
pub fn pressure_l2_error(dofmap: &DofMap, p: &PressureField, exact: &dyn Fn(f64, f64) -> f64) -> f64 {
    let rule = TriangleRule::collapsed_gauss(6);
    let mut e = 0.0;
    for t in 0..dofmap.mesh().n_triangles() {
        let g = dofmap.geometry(t);
        let tri = dofmap.mesh().triangles()[t];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let x = g.point(*l);
            let ph: f64 = (0..3).map(|k| l[k] * p.0[tri[k]]).sum();
            let d = ph - exact(x[0], x[1]);
            e += w * g.area * d * d;
        }
    }
    e.sqrt()
}

/// Velocity errors against an exact solution and its gradient, integrated
/// with a high-order rule: `(‖u − u_h‖, ‖∇(u − u_h)‖)`.
pub fn velocity_errors(
    dofmap: &DofMap,
    u: &VelocityField,
    exact: &dyn Fn(f64, f64) -> ([f64; 2], [[f64; 2]; 2]),
) -> (f64, f64) {
    let rule = TriangleRule::collapsed_gauss(6);
    let (mut l2, mut h1) = (0.0, 0.0);
    for t in 0..dofmap.mesh().n_triangles() {
        let pts = tabulate(&dofmap.geometry(t), &rule);
        let w = dofmap.gather(u, t);
        for q in &pts {
            let (ev, eg) = exact(q.x[0], q.x[1]);
            for c in 0..2 {
                let mut val = 0.0;
                let mut grad = [0.0; 2];
                for a in 0..6 {
                    val += w[c][a] * q.phi[a];
                    grad[0] += w[c][a] * q.dphi[a][0];
                    grad[1] += w[c][a] * q.dphi[a][1];
                }
                l2 += q.weight * (val - ev[c]).powi(2);
                h1 += q.weight * ((grad[0] - eg[c][0]).powi(2) + (grad[1] - eg[c][1]).powi(2));
            }
        }
    }
    (l2.sqrt(), h1.sqrt())
}

/// Scalar P2 mass and stiffness matrices on the velocity nodes, for cheap
/// repeated norm evaluation.
#[derive(Debug, Clone)]
pub struct NormOperators {
    n_nodes: usize,
    mass: SparseMatrix,
    stiffness: SparseMatrix,
}

impl NormOperators {
    pub fn new(dofmap: &DofMap) -> Self {
        let rule = TriangleRule::degree5();
        let mut mt = Vec::with_capacity(dofmap.mesh().n_triangles() * 36);
        let mut kt = Vec::with_capacity(dofmap.mesh().n_triangles() * 36);
        for t in 0..dofmap.mesh().n_triangles() {
            let pts = tabulate(&dofmap.geometry(t), &rule);
            let nodes = dofmap.element_nodes(t);
            for a in 0..6 {
                for b in 0..6 {
                    let (mut m, mut k) = (0.0, 0.0);
                    for q in &pts {
                        m += q.weight * q.phi[a] * q.phi[b];
                        k += q.weight * (q.dphi[a][0] * q.dphi[b][0] + q.dphi[a][1] * q.dphi[b][1]);
                    }
                    mt.push((nodes[a], nodes[b], m));
                    kt.push((nodes[a], nodes[b], k));
                }
            }
        }
        let n = dofmap.n_nodes();
        Self {
            n_nodes: n,
            mass: SparseMatrix::from_triplets(n, &mt).expect("in range"),
            stiffness: SparseMatrix::from_triplets(n, &kt).expect("in range"),
        }
    }

    fn energy(&self, m: &SparseMatrix, u: &[f64]) -> f64 {
        let n = self.n_nodes;
        let mut s = 0.0;
        for c in 0..2 {
            let x = &u[c * n..(c + 1) * n];
            s += m.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        s.max(0.0)
    }

    pub fn l2(&self, u: &[f64]) -> f64 {
        self.energy(&self.mass, u).sqrt()
    }

    pub fn h1_semi(&self, u: &[f64]) -> f64 {
        self.energy(&self.stiffness, u).sqrt()
    }

    /// Full `H¹` norm `(‖u‖² + ‖∇u‖²)^{1/2}`.
    pub fn h1(&self, u: &[f64]) -> f64 {
        (self.energy(&self.mass, u) + self.energy(&self.stiffness, u)).sqrt()
    }

    pub fn l2_diff(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.l2(&d)
    }
}
