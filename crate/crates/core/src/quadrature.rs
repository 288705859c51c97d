//! Quadrature rules on intervals, triangles and pairs of triangles.

use nalgebra::{DMatrix, SymmetricEigen};

/// A one-dimensional rule on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Rule1d {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss-Legendre rule with `n` points mapped to `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Rule1d {
    assert!(n >= 1);
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[i] = 0.5 * (1.0 - x);
        points[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    Rule1d { points, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss rule for `int_0^1 f(x) (-ln x) dx`, exact for polynomials of degree `2n - 1`.
///
/// Recurrence coefficients come from the modified Chebyshev algorithm with shifted
/// Legendre polynomials as the auxiliary basis; nodes and weights from the Jacobi matrix.
pub fn gauss_log(n: usize) -> Rule1d {
    assert!(n >= 1);
    let m = 2 * n;
    let a = vec![0.5; m];
    let b: Vec<f64> = (0..m)
        .map(|k| {
            let k = k as f64;
            k * k / (4.0 * (4.0 * k * k - 1.0))
        })
        .collect();
    let mut mom = vec![0.0; m];
    mom[0] = 1.0;
    // ν_k = (-1)^k (k!)^2 / ((2k)! k (k+1)), built incrementally.
    let mut ratio = 1.0;
    for k in 1..m {
        let kf = k as f64;
        ratio *= kf * kf / ((2.0 * kf - 1.0) * (2.0 * kf));
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        mom[k] = sign * ratio / (kf * (kf + 1.0));
    }
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    alpha[0] = a[0] + mom[1] / mom[0];
    beta[0] = mom[0];
    let mut sig_prev = vec![0.0; m];
    let mut sig = mom.clone();
    for k in 1..n {
        let mut next = vec![0.0; m];
        for l in k..(m - k) {
            next[l] = sig[l + 1] - (alpha[k - 1] - a[l]) * sig[l] - beta[k - 1] * sig_prev[l]
                + b[l] * sig[l - 1];
        }
        alpha[k] = a[k] + next[k + 1] / next[k] - sig[k] / sig[k - 1];
        beta[k] = next[k] / sig[k - 1];
        sig_prev = sig;
        sig = next;
    }
    golub_welsch(&alpha, &beta)
}

fn golub_welsch(alpha: &[f64], beta: &[f64]) -> Rule1d {
    let n = alpha.len();
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = alpha[i];
        if i + 1 < n {
            let s = beta[i + 1].sqrt();
            j[(i, i + 1)] = s;
            j[(i + 1, i)] = s;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], beta[0] * v0 * v0)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    Rule1d {
        points: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// A rule on the reference triangle `{0 <= x2 <= x1 <= 1}` (area 1/2).
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// Collapsed tensor Gauss rule with `n * n` points.
pub fn triangle_rule(n: usize) -> TriangleRule {
    let g = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (u, wu) in g.points.iter().zip(&g.weights) {
        for (v, wv) in g.points.iter().zip(&g.weights) {
            points.push([*u, u * v]);
            weights.push(wu * wv * u);
        }
    }
    TriangleRule { points, weights }
}

/// How two panels touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjacency {
    Identical,
    CommonEdge,
    CommonVertex,
    Disjoint,
}

/// Pair rule on `T x T` for the reference triangle above: points `(x, y)` with weights.
///
/// For a common edge both panels must be parametrized so that the shared edge runs from
/// reference vertex 0 to reference vertex 1; for a common vertex, the shared vertex is
/// reference vertex 0 of both panels.
#[derive(Debug, Clone)]
pub struct PairRule {
    pub x: Vec<[f64; 2]>,
    pub y: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl PairRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

type MapFn = fn(f64, f64, f64, f64) -> ([f64; 2], [f64; 2], f64);

const IDENTICAL_MAPS: [MapFn; 6] = [
    |xi, e1, e2, e3| {
        (
            [xi, xi * (1.0 - e1 + e1 * e2)],
            [xi * (1.0 - e1 * e2 * e3), xi * (1.0 - e1)],
            xi.powi(3) * e1 * e1 * e2,
        )
    },
    |xi, e1, e2, e3| {
        (
            [xi * (1.0 - e1 * e2 * e3), xi * (1.0 - e1)],
            [xi, xi * (1.0 - e1 + e1 * e2)],
            xi.powi(3) * e1 * e1 * e2,
        )
    },
    |xi, e1, e2, e3| {
        (
            [xi, xi * e1 * (1.0 - e2 + e2 * e3)],
            [xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)],
            xi.powi(3) * e1 * e1 * e2,
        )
    },
    |xi, e1, e2, e3| {
        (
            [xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)],
            [xi, xi * e1 * (1.0 - e2 + e2 * e3)],
            xi.powi(3) * e1 * e1 * e2,
        )
    },
    |xi, e1, e2, e3| {
        (
            [xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)],
            [xi, xi * e1 * (1.0 - e2)],
            xi.powi(3) * e1 * e1 * e2,
        )
    },
    |xi, e1, e2, e3| {
        (
            [xi, xi * e1 * (1.0 - e2)],
            [xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)],
            xi.powi(3) * e1 * e1 * e2,
        )
    },
];

const EDGE_MAPS: [MapFn; 5] = [
    |xi, e1, e2, e3| {
        (
            [xi, xi * e1 * e3],
            [xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)],
            xi.powi(3) * e1 * e1,
        )
    },
    |xi, e1, e2, e3| {
        (
            [xi, xi * e1],
            [xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)],
            xi.powi(3) * e1 * e1 * e2,
        )
    },
    |xi, e1, e2, e3| {
        (
            [xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)],
            [xi, xi * e1 * e2 * e3],
            xi.powi(3) * e1 * e1 * e2,
        )
    },
    |xi, e1, e2, e3| {
        (
            [xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)],
            [xi, xi * e1],
            xi.powi(3) * e1 * e1 * e2,
        )
    },
    |xi, e1, e2, e3| {
        (
            [xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)],
            [xi, xi * e1 * e2],
            xi.powi(3) * e1 * e1 * e2,
        )
    },
];

const VERTEX_MAPS: [MapFn; 2] = [
    |xi, e1, e2, e3| ([xi, xi * e1], [xi * e2, xi * e2 * e3], xi.powi(3) * e2),
    |xi, e1, e2, e3| ([xi * e2, xi * e2 * e3], [xi, xi * e1], xi.powi(3) * e2),
];

/// Singular pair rule of Sauter-Schwab type with `order` Gauss points per direction.
pub fn sauter_schwab(adjacency: Adjacency, order: usize) -> PairRule {
    let maps: &[MapFn] = match adjacency {
        Adjacency::Identical => &IDENTICAL_MAPS,
        Adjacency::CommonEdge => &EDGE_MAPS,
        Adjacency::CommonVertex => &VERTEX_MAPS,
        Adjacency::Disjoint => return regular_pair_rule(order, order),
    };
    let g = gauss_legendre(order);
    let n4 = order.pow(4) * maps.len();
    let mut rule = PairRule {
        x: Vec::with_capacity(n4),
        y: Vec::with_capacity(n4),
        weights: Vec::with_capacity(n4),
    };
    for (a, wa) in g.points.iter().zip(&g.weights) {
        for (b, wb) in g.points.iter().zip(&g.weights) {
            for (c, wc) in g.points.iter().zip(&g.weights) {
                for (d, wd) in g.points.iter().zip(&g.weights) {
                    let w = wa * wb * wc * wd;
                    for map in maps {
                        let (x, y, jac) = map(*a, *b, *c, *d);
                        rule.x.push(x);
                        rule.y.push(y);
                        rule.weights.push(w * jac);
                    }
                }
            }
        }
    }
    rule
}

/// Tensor product of two collapsed triangle rules.
pub fn regular_pair_rule(order_x: usize, order_y: usize) -> PairRule {
    let tx = triangle_rule(order_x);
    let ty = triangle_rule(order_y);
    let mut rule = PairRule {
        x: Vec::with_capacity(tx.weights.len() * ty.weights.len()),
        y: Vec::new(),
        weights: Vec::new(),
    };
    for (px, wx) in tx.points.iter().zip(&tx.weights) {
        for (py, wy) in ty.points.iter().zip(&ty.weights) {
            rule.x.push(*px);
            rule.y.push(*py);
            rule.weights.push(wx * wy);
        }
    }
    rule
}

/// Barycentric weights of the reference point, matching vertices `P0, P1, P2`
/// under `chi(x) = P0 + x1 (P1 - P0) + x2 (P2 - P1)`.
#[inline]
pub fn reference_shape(x: [f64; 2]) -> [f64; 3] {
    [1.0 - x[0], x[0] - x[1], x[1]]
}
