//! Quadrature on triangles.
//!
//! Rules are stored in barycentric coordinates with weights summing to one,
//! so `∫_T f ≈ |T| Σ w_q f(x_q)`.

#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Seven-point symmetric rule, exact for polynomials of degree 5.
    pub fn degree5() -> Self {
        let s15 = 15f64.sqrt();
        let a = (6.0 - s15) / 21.0;
        let b = (6.0 + s15) / 21.0;
        let wa = (155.0 - s15) / 1200.0;
        let wb = (155.0 + s15) / 1200.0;
        let third = 1.0 / 3.0;
        let points = vec![
            [third, third, third],
            [a, a, 1.0 - 2.0 * a],
            [a, 1.0 - 2.0 * a, a],
            [1.0 - 2.0 * a, a, a],
            [b, b, 1.0 - 2.0 * b],
            [b, 1.0 - 2.0 * b, b],
            [1.0 - 2.0 * b, b, b],
        ];
        let weights = vec![9.0 / 40.0, wa, wa, wa, wb, wb, wb];
        Self { points, weights }
    }

    /// Collapsed (Duffy) Gauss–Legendre product rule with `q` points per
    /// direction; exact for polynomials of degree `2q - 2`.
    pub fn collapsed_gauss(q: usize) -> Self {
        let (x, w) = gauss_legendre(q);
        let mut points = Vec::with_capacity(q * q);
        let mut weights = Vec::with_capacity(q * q);
        for (xi, wi) in x.iter().zip(&w) {
            let u = 0.5 * (xi + 1.0);
            for (xj, wj) in x.iter().zip(&w) {
                let v = 0.5 * (xj + 1.0);
                let l1 = u;
                let l2 = v * (1.0 - u);
                points.push([1.0 - l1 - l2, l1, l2]);
                // reference area 1/2 -> normalize to unit total weight
                weights.push(0.25 * wi * wj * (1.0 - u) * 2.0);
            }
        }
        Self { points, weights }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1);
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(q, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(q, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[q - 1 - i] = x;
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(q: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=q {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
