//! Affine triangle geometry and the P1/P2 Lagrange bases.
//!
//! Local P2 ordering: vertices 0, 1, 2 then the midpoints of edges opposite
//! vertices 0, 1, 2, i.e. edges (1,2), (2,0), (0,1).

/// Local vertex pairs spanned by the three P2 edge nodes.
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[1, 2], [2, 0], [0, 1]];

#[derive(Debug, Clone, Copy)]
pub struct TriangleGeometry {
    pub vertices: [[f64; 2]; 3],
    pub area: f64,
    /// Constant gradients of the barycentric coordinates.
    pub grad_lambda: [[f64; 2]; 3],
}

impl TriangleGeometry {
    pub fn new(vertices: [[f64; 2]; 3]) -> Self {
        let [p0, p1, p2] = vertices;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let inv = 1.0 / det;
        let grad_lambda = [
            [(p1[1] - p2[1]) * inv, (p2[0] - p1[0]) * inv],
            [(p2[1] - p0[1]) * inv, (p0[0] - p2[0]) * inv],
            [(p0[1] - p1[1]) * inv, (p1[0] - p0[0]) * inv],
        ];
        Self {
            vertices,
            area: 0.5 * det,
            grad_lambda,
        }
    }

    pub fn point(&self, l: [f64; 3]) -> [f64; 2] {
        let [p0, p1, p2] = self.vertices;
        [
            l[0] * p0[0] + l[1] * p1[0] + l[2] * p2[0],
            l[0] * p0[1] + l[1] * p1[1] + l[2] * p2[1],
        ]
    }

    /// Barycentric coordinates of a point.
    pub fn barycentric(&self, p: [f64; 2]) -> [f64; 3] {
        let p0 = self.vertices[0];
        let d = [p[0] - p0[0], p[1] - p0[1]];
        let l1 = self.grad_lambda[1][0] * d[0] + self.grad_lambda[1][1] * d[1];
        let l2 = self.grad_lambda[2][0] * d[0] + self.grad_lambda[2][1] * d[1];
        [1.0 - l1 - l2, l1, l2]
    }
}

pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
        4.0 * l[0] * l[1],
    ]
}

pub fn p2_gradients(l: [f64; 3], g: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut out = [[0.0; 2]; 6];
    for i in 0..3 {
        let s = 4.0 * l[i] - 1.0;
        out[i] = [s * g[i][0], s * g[i][1]];
    }
    for (k, [a, b]) in LOCAL_EDGES.iter().copied().enumerate() {
        out[3 + k] = [
            4.0 * (l[a] * g[b][0] + l[b] * g[a][0]),
            4.0 * (l[a] * g[b][1] + l[b] * g[a][1]),
        ];
    }
    out
}

/// Basis values and gradients tabulated at one quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct P2Point {
    pub weight: f64,
    pub x: [f64; 2],
    pub lambda: [f64; 3],
    pub phi: [f64; 6],
    pub dphi: [[f64; 2]; 6],
}

/// Tabulates the P2 basis at every point of a rule on one triangle. Weights
/// already include the triangle area.
pub fn tabulate(geom: &TriangleGeometry, rule: &crate::quadrature::TriangleRule) -> Vec<P2Point> {
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(&l, &w)| P2Point {
            weight: w * geom.area,
            x: geom.point(l),
            lambda: l,
            phi: p2_values(l),
            dphi: p2_gradients(l, &geom.grad_lambda),
        })
        .collect()
}
