//! Structured triangulations of the unit square and coarse observation grids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used to decide whether a coordinate lies on the lid `y = 1`.
pub const LID_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    /// Moving top wall.
    Lid,
    /// Any other part of the boundary.
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

/// Uniform triangulation of `(0,1)^2` with `n` cells per side, every grid
/// square split along its southwest–northeast diagonal.
///
/// Vertex `(i, j)` (column `i`, row `j`) has index `j * (n + 1) + i` and sits at
/// `(i / n, j / n)`.
#[derive(Debug, Clone)]
pub struct Mesh {
    n: usize,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
}

impl Mesh {
    pub fn uniform_cavity(n: usize) -> Result<Self, MeshError> {
        if n < 2 {
            return Err(MeshError::InvalidArgument(format!(
                "mesh needs at least 2 cells per side, got {n}"
            )));
        }
        let stride = n + 1;
        let h = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity(stride * stride);
        for j in 0..=n {
            for i in 0..=n {
                let x = if i == n { 1.0 } else { i as f64 * h };
                let y = if j == n { 1.0 } else { j as f64 * h };
                vertices.push([x, y]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let sw = j * stride + i;
                let se = sw + 1;
                let nw = sw + stride;
                let ne = nw + 1;
                // lower-right then upper-left of the SW–NE diagonal, both counterclockwise
                triangles.push([sw, se, ne]);
                triangles.push([sw, ne, nw]);
            }
        }

        let tag_of = |a: usize, b: usize| {
            if (vertices[a][1] - 1.0).abs() <= LID_TOL && (vertices[b][1] - 1.0).abs() <= LID_TOL {
                BoundaryTag::Lid
            } else {
                BoundaryTag::Wall
            }
        };
        let mut boundary_edges = Vec::with_capacity(4 * n);
        let mut push = |a: usize, b: usize| {
            boundary_edges.push(BoundaryEdge {
                vertices: [a, b],
                tag: tag_of(a, b),
            })
        };
        // counterclockwise walk: bottom, right, top, left
        for i in 0..n {
            push(i, i + 1);
        }
        for j in 0..n {
            push(j * stride + n, (j + 1) * stride + n);
        }
        for i in (0..n).rev() {
            push(n * stride + i + 1, n * stride + i);
        }
        for j in (0..n).rev() {
            push((j + 1) * stride, j * stride);
        }

        Ok(Self {
            n,
            vertices,
            triangles,
            boundary_edges,
        })
    }

    /// Cells per side of the generating grid.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Fine mesh width `1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Lattice position `(i, j)` of a vertex.
    pub fn lattice(&self, vertex: usize) -> (usize, usize) {
        (vertex % (self.n + 1), vertex / (self.n + 1))
    }

    pub fn signed_area(&self, triangle: usize) -> f64 {
        let [a, b, c] = self.triangles[triangle].map(|v| self.vertices[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Index of a triangle containing `p` (points outside the square are
    /// clamped onto it).
    pub fn locate(&self, p: [f64; 2]) -> usize {
        let n = self.n;
        let fx = (p[0].clamp(0.0, 1.0) * n as f64).min(n as f64);
        let fy = (p[1].clamp(0.0, 1.0) * n as f64).min(n as f64);
        let i = (fx.floor() as usize).min(n - 1);
        let j = (fy.floor() as usize).min(n - 1);
        let lx = fx - i as f64;
        let ly = fy - j as f64;
        let square = 2 * (j * n + i);
        if ly <= lx {
            square
        } else {
            square + 1
        }
    }
}

/// Uniform `N × N` partition of the unit square into coarse cells, numbered
/// row-major (`cell = row * N + column`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseGrid {
    n: usize,
}

impl CoarseGrid {
    pub fn new(n: usize) -> Result<Self, MeshError> {
        if n == 0 {
            return Err(MeshError::InvalidArgument(
                "coarse grid needs at least one cell per side".into(),
            ));
        }
        Ok(Self { n })
    }

    /// Cells per side.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_cells(&self) -> usize {
        self.n * self.n
    }

    /// Coarse mesh width `H = 1/N`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.h() * self.h()
    }

    pub fn midpoint(&self, cell: usize) -> [f64; 2] {
        let (i, j) = (cell % self.n, cell / self.n);
        let h = self.h();
        [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]
    }

    pub fn midpoints(&self) -> Vec<[f64; 2]> {
        (0..self.n_cells()).map(|c| self.midpoint(c)).collect()
    }

    /// Cell containing `p`. A point on a shared cell face belongs to the cell
    /// with the lower index.
    pub fn cell_of(&self, p: [f64; 2]) -> usize {
        let axis = |t: f64| {
            let s = t * self.n as f64;
            let k = s.ceil() as isize - 1;
            k.clamp(0, self.n as isize - 1) as usize
        };
        axis(p[1]) * self.n + axis(p[0])
    }
}

/// For every coarse cell, the mesh vertex nearest to the cell midpoint (ties go
/// to the smallest vertex index). Distances are compared exactly on the
/// integer lattice shared by the mesh and the grid.
pub fn locate_observation_vertices(mesh: &Mesh, grid: &CoarseGrid) -> Vec<usize> {
    let n = mesh.n() as i128;
    let big_n = grid.n() as i128;
    // coordinates scaled by 2 * N * n: vertex i -> 2 N i, midpoint k -> (2k + 1) n
    (0..grid.n_cells())
        .map(|cell| {
            let (ci, cj) = ((cell % grid.n()) as i128, (cell / grid.n()) as i128);
            let (mx, my) = ((2 * ci + 1) * n, (2 * cj + 1) * n);
            let mut best = (i128::MAX, usize::MAX);
            for v in 0..mesh.n_vertices() {
                let (vi, vj) = mesh.lattice(v);
                let dx = 2 * big_n * vi as i128 - mx;
                let dy = 2 * big_n * vj as i128 - my;
                let d2 = dx * dx + dy * dy;
                if d2 < best.0 {
                    best = (d2, v);
                }
            }
            best.1
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn rejects_tiny_meshes() {
        assert!(Mesh::uniform_cavity(1).is_err());
        assert!(Mesh::uniform_cavity(0).is_err());
        assert!(CoarseGrid::new(0).is_err());
    }

    #[test]
    fn two_by_two_counts() {
        let m = Mesh::uniform_cavity(2).unwrap();
        assert_eq!(m.n_vertices(), 9);
        assert_eq!(m.n_triangles(), 8);
        assert_eq!(m.boundary_edges().len(), 8);
        let lid = m
            .boundary_edges()
            .iter()
            .filter(|e| e.tag == BoundaryTag::Lid)
            .count();
        assert_eq!(lid, 2);
    }

    #[test]
    fn large_mesh_counts() {
        let m = Mesh::uniform_cavity(64).unwrap();
        assert_eq!(m.n_vertices(), 4225);
        assert_eq!(m.n_triangles(), 8192);
    }

    #[test]
    fn area_sums_exactly() {
        // exact rational oracle: twice the signed area in units of 1/n^2
        for n in [2usize, 3, 7, 16] {
            let m = Mesh::uniform_cavity(n).unwrap();
            let mut twice_area_units: i64 = 0;
            for t in m.triangles() {
                let [a, b, c] = t.map(|v| {
                    let (i, j) = m.lattice(v);
                    (i as i64, j as i64)
                });
                let cross = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
                assert!(cross > 0);
                twice_area_units += cross;
            }
            assert_eq!(twice_area_units, 2 * (n * n) as i64);
            let total: f64 = (0..m.n_triangles()).map(|t| m.signed_area(t)).sum();
            assert!((total - 1.0).abs() < 1e-14, "n={n}: {total}");
        }
    }

    #[test]
    fn conforming_edges() {
        let m = Mesh::uniform_cavity(5).unwrap();
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in m.triangles() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let boundary: Vec<_> = count.iter().filter(|(_, &c)| c == 1).collect();
        assert!(count.values().all(|&c| c == 1 || c == 2));
        assert_eq!(boundary.len(), m.boundary_edges().len());
        for e in m.boundary_edges() {
            let [a, b] = e.vertices;
            assert_eq!(count[&(a.min(b), a.max(b))], 1);
        }
    }

    #[test]
    fn lid_tag_rule() {
        let m = Mesh::uniform_cavity(4).unwrap();
        for e in m.boundary_edges() {
            let on_lid = e
                .vertices
                .iter()
                .all(|&v| (m.vertices()[v][1] - 1.0).abs() <= LID_TOL);
            assert_eq!(on_lid, e.tag == BoundaryTag::Lid);
        }
    }

    #[test]
    fn locate_finds_containing_triangle() {
        let m = Mesh::uniform_cavity(6).unwrap();
        for p in [[0.1, 0.05], [0.05, 0.1], [0.99, 0.99], [0.5, 0.5], [0.0, 1.0]] {
            let t = m.locate(p);
            let [a, b, c] = m.triangles()[t].map(|v| m.vertices()[v]);
            let area = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
                (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1])
            };
            assert!(area(a, b, p) >= -1e-14 && area(b, c, p) >= -1e-14 && area(c, a, p) >= -1e-14);
        }
    }

    #[test]
    fn grid_cells_and_ties() {
        let g = CoarseGrid::new(2).unwrap();
        assert_eq!(g.midpoint(1), [0.75, 0.25]);
        assert_eq!(g.cell_of([0.25, 0.75]), 2);
        // face x = 1/2 belongs to the lower cell
        assert_eq!(g.cell_of([0.5, 0.1]), 0);
        assert_eq!(g.cell_of([0.0, 0.0]), 0);
        assert_eq!(g.cell_of([1.0, 1.0]), 3);
    }

    #[test]
    fn observation_vertices_on_lattice() {
        let m = Mesh::uniform_cavity(4).unwrap();
        let g = CoarseGrid::new(2).unwrap();
        let obs = locate_observation_vertices(&m, &g);
        for (c, &v) in obs.iter().enumerate() {
            assert_eq!(m.vertices()[v], g.midpoint(c));
        }
    }

    #[test]
    fn observation_vertices_match_brute_force() {
        let m = Mesh::uniform_cavity(3).unwrap();
        let g = CoarseGrid::new(2).unwrap();
        let obs = locate_observation_vertices(&m, &g);
        for (c, &v) in obs.iter().enumerate() {
            let mp = g.midpoint(c);
            let d = |w: usize| {
                let p = m.vertices()[w];
                ((p[0] - mp[0]).powi(2) + (p[1] - mp[1]).powi(2)).sqrt()
            };
            let best = (0..m.n_vertices()).map(d).fold(f64::INFINITY, f64::min);
            assert!((d(v) - best).abs() < 1e-15);
            assert!(d(v) <= 2f64.sqrt() / 6.0 + 1e-15);
        }
    }

    #[test]
    fn hundred_distinct_points() {
        let m = Mesh::uniform_cavity(64).unwrap();
        let g = CoarseGrid::new(10).unwrap();
        let mut obs = locate_observation_vertices(&m, &g);
        assert_eq!(obs.len(), 100);
        obs.sort_unstable();
        obs.dedup();
        assert_eq!(obs.len(), 100);
    }

    #[test]
    fn injective_when_fine_enough() {
        for (n, big_n) in [(32, 10), (64, 20), (32, 16), (8, 4)] {
            let m = Mesh::uniform_cavity(n).unwrap();
            let g = CoarseGrid::new(big_n).unwrap();
            let mut obs = locate_observation_vertices(&m, &g);
            obs.sort_unstable();
            obs.dedup();
            assert_eq!(obs.len(), big_n * big_n, "n={n} N={big_n}");
        }
    }
}
