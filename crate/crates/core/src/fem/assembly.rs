//! Element kernels and global assembly of the Taylor–Hood operators.
//!
//! Local velocity dofs are ordered `(component, node)` = `c * 6 + a`, matching
//! [`DofMap::element_velocity_dofs`]. The convective form is assembled in its
//! fully antisymmetric version `½[b(w,z,v) − b(w,v,z)]`, which agrees with
//! `b(w,z,v) + ½((∇·w)z, v)` whenever the test function vanishes on the
//! boundary and is skew in its last two arguments for every pair of discrete
//! functions.

use std::sync::Arc;

use super::basis::{tabulate, P2Point};
use super::dofmap::{DofMap, VelocityField};
use super::FemError;
use crate::linalg::{Pattern, SparseMatrix};
use crate::quadrature::TriangleRule;

pub type LocalMatrix = [[f64; 12]; 12];

fn zero_local() -> LocalMatrix {
    [[0.0; 12]; 12]
}

/// `ν(∇u,∇v) + γ(∇·u, ∇·v)` on one element.
pub fn local_viscous_graddiv(pts: &[P2Point], nu: f64, gamma: f64) -> LocalMatrix {
    let mut m = zero_local();
    for q in pts {
        let w = q.weight;
        for a in 0..6 {
            for b in 0..6 {
                let lap = nu * w * (q.dphi[a][0] * q.dphi[b][0] + q.dphi[a][1] * q.dphi[b][1]);
                m[a][b] += lap;
                m[6 + a][6 + b] += lap;
                if gamma != 0.0 {
                    for c in 0..2 {
                        for d in 0..2 {
                            m[6 * c + a][6 * d + b] += gamma * w * q.dphi[a][c] * q.dphi[b][d];
                        }
                    }
                }
            }
        }
    }
    m
}

/// Convecting velocity and its gradient at a quadrature point
/// (`grad[c][d] = ∂w_c/∂x_d`).
fn field_at(q: &P2Point, w: &[[f64; 6]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut val = [0.0; 2];
    let mut grad = [[0.0; 2]; 2];
    for c in 0..2 {
        for a in 0..6 {
            val[c] += w[c][a] * q.phi[a];
            grad[c][0] += w[c][a] * q.dphi[a][0];
            grad[c][1] += w[c][a] * q.dphi[a][1];
        }
    }
    (val, grad)
}

/// Skew convection `b*(w, z, v)` with `z` the trial and `v` the test function.
pub fn local_convection(pts: &[P2Point], w: &[[f64; 6]; 2]) -> LocalMatrix {
    let mut m = zero_local();
    for q in pts {
        let (wv, _) = field_at(q, w);
        let adv: [f64; 6] = std::array::from_fn(|a| wv[0] * q.dphi[a][0] + wv[1] * q.dphi[a][1]);
        for a in 0..6 {
            for b in 0..6 {
                let v = 0.5 * q.weight * (adv[b] * q.phi[a] - adv[a] * q.phi[b]);
                m[a][b] += v;
                m[6 + a][6 + b] += v;
            }
        }
    }
    m
}

/// Newton linearization: matrix of `b*(z, w, v)` (trial `z`) and the vector
/// of `b*(w, w, v)`.
pub fn local_newton(pts: &[P2Point], w: &[[f64; 6]; 2]) -> (LocalMatrix, [f64; 12]) {
    let mut m = zero_local();
    let mut r = [0.0; 12];
    for q in pts {
        let (wv, wg) = field_at(q, w);
        let s = 0.5 * q.weight;
        for c in 0..2 {
            for a in 0..6 {
                let row = 6 * c + a;
                // b*(w,w,v) with v = φ_a e_c
                let w_grad_wc = wv[0] * wg[c][0] + wv[1] * wg[c][1];
                let w_grad_phi = wv[0] * q.dphi[a][0] + wv[1] * q.dphi[a][1];
                r[row] += s * (w_grad_wc * q.phi[a] - w_grad_phi * wv[c]);
                for d in 0..2 {
                    for b in 0..6 {
                        m[row][6 * d + b] +=
                            s * q.phi[b] * (q.phi[a] * wg[c][d] - wv[c] * q.dphi[a][d]);
                    }
                }
            }
        }
    }
    (m, r)
}

/// `(∂_c φ_b, λ_k)`: rows are local pressure nodes, columns local velocity dofs.
pub fn local_divergence(pts: &[P2Point]) -> [[f64; 12]; 3] {
    let mut m = [[0.0; 12]; 3];
    for q in pts {
        for k in 0..3 {
            for c in 0..2 {
                for b in 0..6 {
                    m[k][6 * c + b] += q.weight * q.lambda[k] * q.dphi[b][c];
                }
            }
        }
    }
    m
}

/// `⟨f, v⟩` on one element.
pub fn local_load(pts: &[P2Point], f: &dyn Fn(f64, f64) -> [f64; 2]) -> [f64; 12] {
    let mut r = [0.0; 12];
    for q in pts {
        let fv = f(q.x[0], q.x[1]);
        for c in 0..2 {
            for a in 0..6 {
                r[6 * c + a] += q.weight * fv[c] * q.phi[a];
            }
        }
    }
    r
}

fn velocity_triplets(
    dofmap: &DofMap,
    rule: &TriangleRule,
    mut kernel: impl FnMut(usize, &[P2Point]) -> LocalMatrix,
) -> Vec<(usize, usize, f64)> {
    let mut trip = Vec::with_capacity(dofmap.mesh().n_triangles() * 144);
    for t in 0..dofmap.mesh().n_triangles() {
        let pts = tabulate(&dofmap.geometry(t), rule);
        let m = kernel(t, &pts);
        let dofs = dofmap.element_velocity_dofs(t);
        for i in 0..12 {
            for j in 0..12 {
                trip.push((dofs[i], dofs[j], m[i][j]));
            }
        }
    }
    trip
}

/// Matrix of `ν(∇u,∇v) + γ_gd(∇·u,∇·v)` on the velocity dofs.
pub fn assemble_viscous_graddiv(dofmap: &DofMap, nu: f64, gamma_gd: f64) -> Result<SparseMatrix, FemError> {
    assemble_viscous_graddiv_with(dofmap, nu, gamma_gd, &TriangleRule::degree5())
}

pub fn assemble_viscous_graddiv_with(
    dofmap: &DofMap,
    nu: f64,
    gamma_gd: f64,
    rule: &TriangleRule,
) -> Result<SparseMatrix, FemError> {
    check_viscosity(nu, gamma_gd)?;
    let trip = velocity_triplets(dofmap, rule, |_, pts| local_viscous_graddiv(pts, nu, gamma_gd));
    Ok(SparseMatrix::from_triplets(dofmap.n_u(), &trip)?)
}

/// Matrix `C(w)` with `vᵀ C(w) z = b*(w, z, v)`.
pub fn assemble_convection(dofmap: &DofMap, w: &VelocityField) -> Result<SparseMatrix, FemError> {
    assemble_convection_with(dofmap, w, &TriangleRule::degree5())
}

pub fn assemble_convection_with(
    dofmap: &DofMap,
    w: &VelocityField,
    rule: &TriangleRule,
) -> Result<SparseMatrix, FemError> {
    dofmap.check_velocity(w)?;
    let trip = velocity_triplets(dofmap, rule, |t, pts| local_convection(pts, &dofmap.gather(w, t)));
    Ok(SparseMatrix::from_triplets(dofmap.n_u(), &trip)?)
}

/// Newton linearization at `w`: the matrix of `b*(·, w, v)` and the vector of
/// `b*(w, w, v)`.
pub fn assemble_newton_linearization(
    dofmap: &DofMap,
    w: &VelocityField,
) -> Result<(SparseMatrix, Vec<f64>), FemError> {
    dofmap.check_velocity(w)?;
    let rule = TriangleRule::degree5();
    let mut rhs = vec![0.0; dofmap.n_u()];
    let trip = velocity_triplets(dofmap, &rule, |t, pts| {
        let (m, r) = local_newton(pts, &dofmap.gather(w, t));
        for (i, d) in dofmap.element_velocity_dofs(t).into_iter().enumerate() {
            rhs[d] += r[i];
        }
        m
    });
    Ok((SparseMatrix::from_triplets(dofmap.n_u(), &trip)?, rhs))
}

/// `B` (`n_p × n_u`) with `qᵀ B u = (∇·u_h, q_h)`.
pub fn assemble_divergence_coupling(dofmap: &DofMap) -> SparseMatrix {
    let rule = TriangleRule::degree5();
    let mut trip = Vec::with_capacity(dofmap.mesh().n_triangles() * 36);
    for t in 0..dofmap.mesh().n_triangles() {
        let pts = tabulate(&dofmap.geometry(t), &rule);
        let m = local_divergence(&pts);
        let vd = dofmap.element_velocity_dofs(t);
        let pd = dofmap.mesh().triangles()[t];
        for k in 0..3 {
            for j in 0..12 {
                trip.push((pd[k], vd[j], m[k][j]));
            }
        }
    }
    SparseMatrix::from_triplets_rect(dofmap.n_p(), dofmap.n_u(), &trip).expect("in range")
}

fn check_viscosity(nu: f64, gamma_gd: f64) -> Result<(), FemError> {
    if !(nu > 0.0) {
        return Err(FemError::InvalidArgument(format!("viscosity must be positive, got {nu}")));
    }
    if !(gamma_gd >= 0.0) {
        return Err(FemError::InvalidArgument(format!(
            "grad-div weight must be nonnegative, got {gamma_gd}"
        )));
    }
    Ok(())
}

/// Global assembler for the full saddle-point system. All operators it
/// produces share one sparsity pattern over `n_u + n_p` unknowns, so they can
/// be summed entrywise in a fixed order.
#[derive(Debug)]
pub struct SystemAssembler {
    dofmap: Arc<DofMap>,
    pattern: Arc<Pattern>,
    rule: TriangleRule,
    vv_pos: Vec<[u32; 144]>,
    vp_pos: Vec<[u32; 36]>,
    pv_pos: Vec<[u32; 36]>,
}

impl SystemAssembler {
    /// `extra` lists additional structural couplings (e.g. dense nudging
    /// blocks) that must be representable.
    pub fn new(dofmap: Arc<DofMap>, extra: &[(usize, usize)]) -> Self {
        let n = dofmap.n_total();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        let nt = dofmap.mesh().n_triangles();
        for t in 0..nt {
            let vd = dofmap.element_velocity_dofs(t);
            let pd = dofmap.element_pressure_dofs(t);
            for &i in &vd {
                rows[i].extend_from_slice(&vd);
                rows[i].extend_from_slice(&pd);
            }
            for &k in &pd {
                rows[k].extend_from_slice(&vd);
            }
        }
        for p in dofmap.n_u()..n {
            rows[p].push(p);
        }
        for &(r, c) in extra {
            rows[r].push(c);
        }
        let pattern = Arc::new(Pattern::from_rows(n, rows));
        let pos = |r: usize, c: usize| pattern.position(r, c).expect("coupling in pattern") as u32;
        let mut vv_pos = Vec::with_capacity(nt);
        let mut vp_pos = Vec::with_capacity(nt);
        let mut pv_pos = Vec::with_capacity(nt);
        for t in 0..nt {
            let vd = dofmap.element_velocity_dofs(t);
            let pd = dofmap.element_pressure_dofs(t);
            let mut vv = [0u32; 144];
            let mut vp = [0u32; 36];
            let mut pv = [0u32; 36];
            for i in 0..12 {
                for j in 0..12 {
                    vv[12 * i + j] = pos(vd[i], vd[j]);
                }
                for k in 0..3 {
                    vp[3 * i + k] = pos(vd[i], pd[k]);
                    pv[12 * k + i] = pos(pd[k], vd[i]);
                }
            }
            vv_pos.push(vv);
            vp_pos.push(vp);
            pv_pos.push(pv);
        }
        Self {
            dofmap,
            pattern,
            rule: TriangleRule::degree5(),
            vv_pos,
            vp_pos,
            pv_pos,
        }
    }

    pub fn dofmap(&self) -> &Arc<DofMap> {
        &self.dofmap
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn zeros(&self) -> SparseMatrix {
        SparseMatrix::zeros(self.pattern.clone())
    }

    fn scatter_velocity(&self, mut kernel: impl FnMut(usize, &[P2Point]) -> LocalMatrix) -> SparseMatrix {
        let mut m = self.zeros();
        let vals = m.values_mut();
        for t in 0..self.dofmap.mesh().n_triangles() {
            let pts = tabulate(&self.dofmap.geometry(t), &self.rule);
            let local = kernel(t, &pts);
            let pos = &self.vv_pos[t];
            for i in 0..12 {
                for j in 0..12 {
                    vals[pos[12 * i + j] as usize] += local[i][j];
                }
            }
        }
        m
    }

    pub fn viscous_graddiv(&self, nu: f64, gamma_gd: f64) -> Result<SparseMatrix, FemError> {
        check_viscosity(nu, gamma_gd)?;
        Ok(self.scatter_velocity(|_, pts| local_viscous_graddiv(pts, nu, gamma_gd)))
    }

    /// Pressure–velocity coupling `−(p, ∇·v) − (∇·u, q)`.
    pub fn coupling(&self) -> SparseMatrix {
        let mut m = self.zeros();
        let vals = m.values_mut();
        for t in 0..self.dofmap.mesh().n_triangles() {
            let pts = tabulate(&self.dofmap.geometry(t), &self.rule);
            let d = local_divergence(&pts);
            for k in 0..3 {
                for i in 0..12 {
                    vals[self.vp_pos[t][3 * i + k] as usize] -= d[k][i];
                    vals[self.pv_pos[t][12 * k + i] as usize] -= d[k][i];
                }
            }
        }
        m
    }

    pub fn convection(&self, w: &VelocityField) -> Result<SparseMatrix, FemError> {
        self.dofmap.check_velocity(w)?;
        Ok(self.scatter_velocity(|t, pts| local_convection(pts, &self.dofmap.gather(w, t))))
    }

    /// Newton matrix and right-hand side (full system length).
    pub fn newton(&self, w: &VelocityField) -> Result<(SparseMatrix, Vec<f64>), FemError> {
        self.dofmap.check_velocity(w)?;
        let mut rhs = vec![0.0; self.dofmap.n_total()];
        let m = self.scatter_velocity(|t, pts| {
            let (m, r) = local_newton(pts, &self.dofmap.gather(w, t));
            for (i, d) in self.dofmap.element_velocity_dofs(t).into_iter().enumerate() {
                rhs[d] += r[i];
            }
            m
        });
        Ok((m, rhs))
    }

    /// Load vector `⟨f, v⟩` (full system length).
    pub fn load(&self, f: &dyn Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.dofmap.n_total()];
        for t in 0..self.dofmap.mesh().n_triangles() {
            let pts = tabulate(&self.dofmap.geometry(t), &self.rule);
            let r = local_load(&pts, f);
            for (i, d) in self.dofmap.element_velocity_dofs(t).into_iter().enumerate() {
                rhs[d] += r[i];
            }
        }
        rhs
    }

    /// Matrix on this pattern from global triplets (which must fit it).
    pub fn from_entries(&self, entries: &[(usize, usize, f64)]) -> Result<SparseMatrix, FemError> {
        let mut m = self.zeros();
        let vals = m.values_mut();
        for &(r, c, v) in entries {
            let k = self
                .pattern
                .position(r, c)
                .ok_or_else(|| FemError::InvalidArgument(format!("entry ({r}, {c}) not in system pattern")))?;
            vals[k] += v;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dofmap(n: usize) -> DofMap {
        DofMap::new(Mesh::uniform_cavity(n).unwrap())
    }

    fn random_field(d: &DofMap, rng: &mut ChaCha8Rng) -> VelocityField {
        VelocityField((0..d.n_u()).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn quad_form(m: &SparseMatrix, x: &[f64], y: &[f64]) -> f64 {
        m.mul_vec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn viscosity_rejected_when_nonpositive() {
        let d = dofmap(2);
        assert!(assemble_viscous_graddiv(&d, 0.0, 1.0).is_err());
        assert!(assemble_viscous_graddiv(&d, -1.0, 0.0).is_err());
        assert!(assemble_viscous_graddiv(&d, 1.0, -1.0).is_err());
    }

    #[test]
    fn viscous_is_linear_in_nu_and_symmetric() {
        let d = dofmap(4);
        let a1 = assemble_viscous_graddiv(&d, 1.0, 0.0).unwrap();
        let a2 = assemble_viscous_graddiv(&d, 2.0, 0.0).unwrap();
        for (x, y) in a1.values().iter().zip(a2.values()) {
            assert_eq!(2.0 * x, *y);
        }
        let g = assemble_viscous_graddiv(&d, 0.7, 1.3).unwrap();
        let gt = g.transpose();
        let dense = g.to_dense();
        let dense_t = gt.to_dense();
        let asym = dense
            .iter()
            .flatten()
            .zip(dense_t.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(asym < 1e-12);
    }

    #[test]
    fn graddiv_energy_matches_quadrature_oracle() {
        let d = dofmap(5);
        let gd = assemble_viscous_graddiv(&d, 1e-300, 1.0).unwrap();
        let nu_only = assemble_viscous_graddiv(&d, 1e-300, 0.0).unwrap();
        let v = d.interpolate(|x, y| [x * x + 0.3 * y * y, x * y - x * x]);
        let energy = quad_form(&gd, &v.0, &v.0) - quad_form(&nu_only, &v.0, &v.0);
        // ∫(∇·v)² with ∇·v = 3x, integrated with a high-order rule on each element
        let rule = TriangleRule::collapsed_gauss(8);
        let mut oracle = 0.0;
        for t in 0..d.mesh().n_triangles() {
            let g = d.geometry(t);
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let p = g.point(*l);
                let div = 3.0 * p[0];
                oracle += w * g.area * div * div;
            }
        }
        assert!((energy - oracle).abs() <= 1e-12 * oracle, "{energy} vs {oracle}");
    }

    #[test]
    fn convection_vanishes_for_zero_wind() {
        let d = dofmap(3);
        let c = assemble_convection(&d, &VelocityField::zeros(&d)).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.0));
        let (n, r) = assemble_newton_linearization(&d, &VelocityField::zeros(&d)).unwrap();
        assert!(n.values().iter().all(|&v| v == 0.0));
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn convection_is_skew() {
        let d = dofmap(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w = random_field(&d, &mut rng);
            let v = random_field(&d, &mut rng);
            let c = assemble_convection(&d, &w).unwrap();
            let s = quad_form(&c, &v.0, &v.0);
            let vv: f64 = v.0.iter().map(|x| x * x).sum();
            assert!(s.abs() <= 1e-10 * vv * w.max_abs(), "{s}");
        }
    }

    #[test]
    fn convection_entry_for_constant_wind() {
        let d = dofmap(4);
        let w = d.interpolate(|_, _| [1.0, 0.0]);
        let c = assemble_convection(&d, &w).unwrap();
        // interior nodes: boundary terms of the antisymmetrization vanish
        let interior: Vec<usize> = (0..d.n_nodes())
            .filter(|&n| {
                let p = d.node_coords()[n];
                p[0] > 0.3 && p[0] < 0.7 && p[1] > 0.3 && p[1] < 0.7
            })
            .collect();
        let rule = TriangleRule::collapsed_gauss(6);
        let basis_at = |node: usize, t: usize, l: [f64; 3]| -> (f64, [f64; 2]) {
            let nodes = d.element_nodes(t);
            match nodes.iter().position(|&x| x == node) {
                Some(a) => {
                    let g = d.geometry(t);
                    (
                        super::super::basis::p2_values(l)[a],
                        super::super::basis::p2_gradients(l, &g.grad_lambda)[a],
                    )
                }
                None => (0.0, [0.0, 0.0]),
            }
        };
        let mut checked = 0;
        for &i in &interior {
            for &j in &interior {
                let mut oracle = 0.0;
                for t in 0..d.mesh().n_triangles() {
                    let g = d.geometry(t);
                    for (l, wq) in rule.points.iter().zip(&rule.weights) {
                        let (vi, _) = basis_at(i, t, *l);
                        let (_, gj) = basis_at(j, t, *l);
                        oracle += wq * g.area * gj[0] * vi;
                    }
                }
                let got = c.get(d.velocity_dof(i, 0), d.velocity_dof(j, 0));
                assert!((got - oracle).abs() < 1e-12, "({i},{j}): {got} vs {oracle}");
                if oracle != 0.0 {
                    checked += 1;
                }
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn newton_rhs_matches_oracle() {
        let d = dofmap(4);
        let wfun = |x: f64, y: f64| [x * y + y * y, -x * x + 0.5 * y];
        let w = d.interpolate(wfun);
        let (_, rhs) = assemble_newton_linearization(&d, &w).unwrap();
        // b*(w,w,φ) = ½[((w·∇)w, φ) − ((w·∇)φ, w)] per element, high-order rule
        let rule = TriangleRule::collapsed_gauss(7);
        let mut oracle = vec![0.0; d.n_u()];
        for t in 0..d.mesh().n_triangles() {
            let g = d.geometry(t);
            let nodes = d.element_nodes(t);
            for (l, wq) in rule.points.iter().zip(&rule.weights) {
                let p = g.point(*l);
                let (x, y) = (p[0], p[1]);
                let wv = wfun(x, y);
                let gw = [[y, x + 2.0 * y], [-2.0 * x, 0.5]];
                let phi = super::super::basis::p2_values(*l);
                let dphi = super::super::basis::p2_gradients(*l, &g.grad_lambda);
                for a in 0..6 {
                    for c in 0..2 {
                        let conv = wv[0] * gw[c][0] + wv[1] * gw[c][1];
                        let adv_phi = wv[0] * dphi[a][0] + wv[1] * dphi[a][1];
                        oracle[d.velocity_dof(nodes[a], c)] +=
                            0.5 * wq * g.area * (conv * phi[a] - adv_phi * wv[c]);
                    }
                }
            }
        }
        for (a, b) in rhs.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn divergence_of_simple_fields() {
        let d = dofmap(4);
        let b = assemble_divergence_coupling(&d);
        assert_eq!((b.nrows(), b.ncols()), (d.n_p(), d.n_u()));
        for f in [
            d.interpolate(|_, _| [0.4, -1.2]),
            d.interpolate(|x, y| [x, -y]),
        ] {
            let bu = b.mul_vec(&f.0);
            assert!(bu.iter().all(|v| v.abs() < 1e-12));
        }
        // (x², 0): ∫ 2x λ_k, oracle by high-order quadrature of the P1 hat
        let u = d.interpolate(|x, _| [x * x, 0.0]);
        let bu = b.mul_vec(&u.0);
        let rule = TriangleRule::collapsed_gauss(4);
        let mut oracle = vec![0.0; d.n_p()];
        for t in 0..d.mesh().n_triangles() {
            let g = d.geometry(t);
            let tri = d.mesh().triangles()[t];
            for (l, wq) in rule.points.iter().zip(&rule.weights) {
                let p = g.point(*l);
                for k in 0..3 {
                    oracle[tri[k]] += wq * g.area * 2.0 * p[0] * l[k];
                }
            }
        }
        for (a, b) in bu.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_is_exact_against_higher_order_rule() {
        let d = dofmap(6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_field(&d, &mut rng);
        let hi = TriangleRule::collapsed_gauss(6);
        let lo = TriangleRule::degree5();
        let c_lo = assemble_convection_with(&d, &w, &lo).unwrap();
        let c_hi = assemble_convection_with(&d, &w, &hi).unwrap();
        let scale = c_hi.max_abs();
        for (a, b) in c_lo.values().iter().zip(c_hi.values()) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
        let a_lo = assemble_viscous_graddiv_with(&d, 1.0, 1.0, &lo).unwrap();
        let a_hi = assemble_viscous_graddiv_with(&d, 1.0, 1.0, &hi).unwrap();
        let scale = a_hi.max_abs();
        for (a, b) in a_lo.values().iter().zip(a_hi.values()) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn system_assembler_agrees_with_block_assembly() {
        let d = Arc::new(dofmap(3));
        let sa = SystemAssembler::new(d.clone(), &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_field(&d, &mut rng);
        let c_sys = sa.convection(&w).unwrap();
        let c_blk = assemble_convection(&d, &w).unwrap();
        let coup = sa.coupling();
        let b = assemble_divergence_coupling(&d);
        for r in 0..d.n_u() {
            for (c, v) in c_blk.row(r) {
                assert!((c_sys.get(r, c) - v).abs() < 1e-15);
            }
        }
        for k in 0..d.n_p() {
            for (c, v) in b.row(k) {
                assert!((coup.get(d.n_u() + k, c) + v).abs() < 1e-15);
                assert!((coup.get(c, d.n_u() + k) + v).abs() < 1e-15);
            }
        }
    }
}
