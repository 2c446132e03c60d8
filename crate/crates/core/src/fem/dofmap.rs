//! Taylor–Hood degree-of-freedom layout.
//!
//! Velocity nodes are the mesh vertices followed by the edge midpoints. Global
//! numbering is component-blocked: velocity dof `c * n_nodes + node` for
//! component `c`, then pressure dof `n_u + vertex`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::basis::{p2_gradients, p2_values, TriangleGeometry, LOCAL_EDGES};
use super::FemError;
use crate::mesh::{BoundaryTag, Mesh};

#[derive(Debug, Clone)]
pub struct DofMap {
    mesh: Mesh,
    edges: Vec<[usize; 2]>,
    /// Per triangle, the global edge index of each local edge.
    triangle_edges: Vec<[usize; 3]>,
    node_coords: Vec<[f64; 2]>,
    /// Boundary velocity nodes with their tag, sorted by node.
    boundary_nodes: Vec<(usize, BoundaryTag)>,
}

impl DofMap {
    pub fn new(mesh: Mesh) -> Self {
        let nv = mesh.n_vertices();
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut triangle_edges = Vec::with_capacity(mesh.n_triangles());
        for t in mesh.triangles() {
            let mut local = [0usize; 3];
            for (k, [a, b]) in LOCAL_EDGES.iter().copied().enumerate() {
                let (u, v) = (t[a].min(t[b]), t[a].max(t[b]));
                let next = edges.len();
                let e = *edge_index.entry((u, v)).or_insert(next);
                if e == next {
                    edges.push([u, v]);
                }
                local[k] = e;
            }
            triangle_edges.push(local);
        }

        let mut node_coords = mesh.vertices().to_vec();
        for &[a, b] in &edges {
            let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
            node_coords.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        }

        let mut tags: HashMap<usize, BoundaryTag> = HashMap::new();
        for be in mesh.boundary_edges() {
            let [a, b] = be.vertices;
            let e = edge_index[&(a.min(b), a.max(b))];
            tags.insert(nv + e, be.tag);
            for v in [a, b] {
                let vt = if (mesh.vertices()[v][1] - 1.0).abs() <= crate::mesh::LID_TOL {
                    BoundaryTag::Lid
                } else {
                    BoundaryTag::Wall
                };
                tags.insert(v, vt);
            }
        }
        let mut boundary_nodes: Vec<_> = tags.into_iter().collect();
        boundary_nodes.sort_unstable_by_key(|&(n, _)| n);

        Self {
            mesh,
            edges,
            triangle_edges,
            node_coords,
            boundary_nodes,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    /// Velocity dof count.
    pub fn n_u(&self) -> usize {
        2 * self.n_nodes()
    }

    /// Pressure dof count.
    pub fn n_p(&self) -> usize {
        self.mesh.n_vertices()
    }

    pub fn n_total(&self) -> usize {
        self.n_u() + self.n_p()
    }

    pub fn velocity_dof(&self, node: usize, component: usize) -> usize {
        component * self.n_nodes() + node
    }

    pub fn pressure_dof(&self, vertex: usize) -> usize {
        self.n_u() + vertex
    }

    pub fn node_coords(&self) -> &[[f64; 2]] {
        &self.node_coords
    }

    pub fn boundary_nodes(&self) -> &[(usize, BoundaryTag)] {
        &self.boundary_nodes
    }

    /// The six P2 nodes of a triangle in local order.
    pub fn element_nodes(&self, t: usize) -> [usize; 6] {
        let [a, b, c] = self.mesh.triangles()[t];
        let nv = self.mesh.n_vertices();
        let [e0, e1, e2] = self.triangle_edges[t];
        [a, b, c, nv + e0, nv + e1, nv + e2]
    }

    /// Local velocity dofs of a triangle: component 0 nodes, then component 1.
    pub fn element_velocity_dofs(&self, t: usize) -> [usize; 12] {
        let nodes = self.element_nodes(t);
        let nn = self.n_nodes();
        let mut out = [0; 12];
        for a in 0..6 {
            out[a] = nodes[a];
            out[6 + a] = nn + nodes[a];
        }
        out
    }

    pub fn element_pressure_dofs(&self, t: usize) -> [usize; 3] {
        self.mesh.triangles()[t].map(|v| self.n_u() + v)
    }

    pub fn geometry(&self, t: usize) -> TriangleGeometry {
        TriangleGeometry::new(self.mesh.triangles()[t].map(|v| self.mesh.vertices()[v]))
    }

    /// Nodal interpolant of a vector function.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> [f64; 2]) -> VelocityField {
        let nn = self.n_nodes();
        let mut c = vec![0.0; 2 * nn];
        for (i, p) in self.node_coords.iter().enumerate() {
            let v = f(p[0], p[1]);
            c[i] = v[0];
            c[nn + i] = v[1];
        }
        VelocityField(c)
    }

    /// Nodal (P1) interpolant of a scalar function.
    pub fn interpolate_pressure(&self, f: impl Fn(f64, f64) -> f64) -> PressureField {
        PressureField(self.mesh.vertices().iter().map(|p| f(p[0], p[1])).collect())
    }

    /// Element-local velocity coefficients `[component][local node]`.
    pub fn gather(&self, u: &VelocityField, t: usize) -> [[f64; 6]; 2] {
        let nodes = self.element_nodes(t);
        let nn = self.n_nodes();
        let mut out = [[0.0; 6]; 2];
        for a in 0..6 {
            out[0][a] = u.0[nodes[a]];
            out[1][a] = u.0[nn + nodes[a]];
        }
        out
    }

    /// Point evaluation of a velocity field and its gradient
    /// (`grad[c][d] = ∂u_c/∂x_d`).
    pub fn evaluate(&self, u: &VelocityField, p: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let t = self.mesh.locate(p);
        let geom = self.geometry(t);
        let l = geom.barycentric(p);
        let phi = p2_values(l);
        let dphi = p2_gradients(l, &geom.grad_lambda);
        let w = self.gather(u, t);
        let mut val = [0.0; 2];
        let mut grad = [[0.0; 2]; 2];
        for c in 0..2 {
            for a in 0..6 {
                val[c] += w[c][a] * phi[a];
                grad[c][0] += w[c][a] * dphi[a][0];
                grad[c][1] += w[c][a] * dphi[a][1];
            }
        }
        (val, grad)
    }

    pub fn check_velocity(&self, u: &VelocityField) -> Result<(), FemError> {
        if u.0.len() != self.n_u() {
            return Err(FemError::DofMismatch {
                expected: self.n_u(),
                got: u.0.len(),
            });
        }
        Ok(())
    }

    pub fn check_pressure(&self, p: &PressureField) -> Result<(), FemError> {
        if p.0.len() != self.n_p() {
            return Err(FemError::DofMismatch {
                expected: self.n_p(),
                got: p.0.len(),
            });
        }
        Ok(())
    }
}

/// Coefficients of a P2 velocity field (length `n_u`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField(pub Vec<f64>);

/// Coefficients of a P1 pressure field (length `n_p`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureField(pub Vec<f64>);

impl VelocityField {
    pub fn zeros(dofmap: &DofMap) -> Self {
        Self(vec![0.0; dofmap.n_u()])
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.0
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl PressureField {
    pub fn coefficients(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_layout() {
        for n in [2usize, 3, 8] {
            let d = DofMap::new(Mesh::uniform_cavity(n).unwrap());
            let nv = (n + 1) * (n + 1);
            let ne = 3 * n * n + 2 * n;
            assert_eq!(d.edges().len(), ne);
            assert_eq!(d.n_u(), 2 * (nv + ne));
            assert_eq!(d.n_p(), nv);
            // dense numbering
            let mut seen = vec![false; d.n_total()];
            for node in 0..d.n_nodes() {
                for c in 0..2 {
                    seen[d.velocity_dof(node, c)] = true;
                }
            }
            for v in 0..nv {
                seen[d.pressure_dof(v)] = true;
            }
            assert!(seen.into_iter().all(|s| s));
        }
    }

    #[test]
    fn lid_nodes_n2() {
        let d = DofMap::new(Mesh::uniform_cavity(2).unwrap());
        let lid: Vec<_> = d
            .boundary_nodes()
            .iter()
            .filter(|(_, t)| *t == BoundaryTag::Lid)
            .map(|&(n, _)| n)
            .collect();
        assert_eq!(lid.len(), 5);
        for n in lid {
            assert_eq!(d.node_coords()[n][1], 1.0);
        }
        assert_eq!(d.boundary_nodes().len(), 16);
    }

    #[test]
    fn edge_midpoints_are_between_their_vertices() {
        let d = DofMap::new(Mesh::uniform_cavity(3).unwrap());
        for t in 0..d.mesh().n_triangles() {
            let nodes = d.element_nodes(t);
            for (k, [a, b]) in LOCAL_EDGES.iter().copied().enumerate() {
                let pa = d.node_coords()[nodes[a]];
                let pb = d.node_coords()[nodes[b]];
                let m = d.node_coords()[nodes[3 + k]];
                assert_eq!(m, [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            }
        }
    }

    #[test]
    fn evaluation_reproduces_quadratics() {
        let d = DofMap::new(Mesh::uniform_cavity(4).unwrap());
        let u = d.interpolate(|x, y| [x * x - y, x * y]);
        for p in [[0.13, 0.71], [0.5, 0.5], [0.99, 0.01]] {
            let (v, g) = d.evaluate(&u, p);
            assert!((v[0] - (p[0] * p[0] - p[1])).abs() < 1e-14);
            assert!((v[1] - p[0] * p[1]).abs() < 1e-14);
            assert!((g[0][0] - 2.0 * p[0]).abs() < 1e-12);
            assert!((g[0][1] + 1.0).abs() < 1e-12);
            assert!((g[1][0] - p[1]).abs() < 1e-12);
            assert!((g[1][1] - p[0]).abs() < 1e-12);
        }
    }
}
