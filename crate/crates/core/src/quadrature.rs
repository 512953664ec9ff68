//! Quadrature rules on the reference triangle and the reference edge.
//!
//! Triangle rules are given in reference coordinates `(xi, eta)` on the
//! triangle with vertices `(0,0), (1,0), (0,1)`; their weights sum to the
//! reference area `1/2`. Edge rules live on `[0, 1]` with weights summing
//! to one. Degree-4 rules are enough for the Taylor-Hood bilinear forms;
//! the higher-order rules are reserved for error integration so that
//! quadrature error never pollutes a measured convergence rate.

/// Quadrature rule on the reference triangle.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// Quadrature rule on the reference edge `[0, 1]`.
#[derive(Debug, Clone)]
pub struct EdgeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Six-point symmetric rule, exact for polynomials of total degree 4.
pub fn triangle_rule_deg4() -> TriangleRule {
    let mut points = Vec::with_capacity(6);
    let mut weights = Vec::with_capacity(6);
    for &(a, w) in &[
        (0.445948490915965_f64, 0.223381589678011_f64),
        (0.091576213509771, 0.109951743655322),
    ] {
        for bary in orbit3(a) {
            points.push([bary[1], bary[2]]);
            weights.push(w * 0.5);
        }
    }
    TriangleRule { points, weights }
}

/// Twelve-point symmetric rule, exact for polynomials of total degree 6.
pub fn triangle_rule_deg6() -> TriangleRule {
    let mut points = Vec::with_capacity(12);
    let mut weights = Vec::with_capacity(12);
    for &(a, w) in &[
        (0.063089014491502_f64, 0.050844906370207_f64),
        (0.249286745170910, 0.116786275726379),
    ] {
        for bary in orbit3(a) {
            points.push([bary[1], bary[2]]);
            weights.push(w * 0.5);
        }
    }
    let (b, c) = (0.310352451033785, 0.636502499121399);
    let w3 = 0.082851075618374;
    for bary in orbit6(b, c) {
        points.push([bary[1], bary[2]]);
        weights.push(w3 * 0.5);
    }
    TriangleRule { points, weights }
}

/// Three-point Gauss rule on `[0, 1]`, exact through degree 5.
pub fn edge_rule_deg5() -> EdgeRule {
    let r = (0.6_f64).sqrt();
    EdgeRule {
        points: vec![0.5 * (1.0 - r), 0.5, 0.5 * (1.0 + r)],
        weights: vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
    }
}

/// Five-point Gauss rule on `[0, 1]`, exact through degree 9.
pub fn edge_rule_deg9() -> EdgeRule {
    let x1 = 0.906_179_845_938_664_0_f64;
    let x2 = 0.538_469_310_105_683_1_f64;
    let w1 = 0.236_926_885_056_189_1_f64;
    let w2 = 0.478_628_670_499_366_5_f64;
    let w0 = 0.568_888_888_888_888_9_f64;
    EdgeRule {
        points: vec![
            0.5 * (1.0 - x1),
            0.5 * (1.0 - x2),
            0.5,
            0.5 * (1.0 + x2),
            0.5 * (1.0 + x1),
        ],
        weights: vec![0.5 * w1, 0.5 * w2, 0.5 * w0, 0.5 * w2, 0.5 * w1],
    }
}

/// The three permutations of the barycentric point `(1-2a, a, a)`.
fn orbit3(a: f64) -> [[f64; 3]; 3] {
    let b = 1.0 - 2.0 * a;
    [[b, a, a], [a, b, a], [a, a, b]]
}

/// The six permutations of the barycentric point `(1-b-c, b, c)`.
fn orbit6(b: f64, c: f64) -> [[f64; 3]; 6] {
    let a = 1.0 - b - c;
    [
        [a, b, c],
        [a, c, b],
        [b, a, c],
        [b, c, a],
        [c, a, b],
        [c, b, a],
    ]
}
