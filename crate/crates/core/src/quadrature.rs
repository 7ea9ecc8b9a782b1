//! Quadrature on the reference triangle and on the unit interval.
//!
//! The reference triangle is `K̂ = {(x, y) : x, y >= 0, x + y <= 1}`. Fully
//! symmetric rules are used up to degree 20; higher degrees fall back to a
//! collapsed (Duffy) tensor Gauss rule, which is exact for any degree.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Highest degree served by the symmetric tables.
pub const SYMMETRIC_MAX_DEGREE: usize = 20;

/// Degrees above this are refused rather than silently producing huge rules.
pub const MAX_DEGREE: usize = 120;

#[derive(Debug, Clone)]
pub struct QuadRule {
    /// Points in reference coordinates.
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub degree: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss rule on the unit interval [0, 1].
#[derive(Debug, Clone)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LineRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// `n`-point Gauss–Legendre rule mapped to [0, 1]; exact for degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> LineRule {
    assert!(n >= 1);
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut s = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, s);
            dp = d;
            let ds = p / d;
            s -= ds;
            if ds.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, s);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - s * s) * dp * dp);
        points[i] = 0.5 * (1.0 - s);
        weights[i] = 0.5 * w;
        points[n - 1 - i] = 0.5 * (1.0 + s);
        weights[n - 1 - i] = 0.5 * w;
    }
    LineRule { points, weights }
}

fn legendre_with_derivative(n: usize, s: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, s);
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * s * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (s * p1 - p0) / (s * s - 1.0);
    (p1, d)
}

/// Line rule exact for polynomials of the given degree (cached).
pub fn line_rule(degree: usize) -> Arc<LineRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<LineRule>>>> = OnceLock::new();
    let n = degree / 2 + 1;
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(n)
        .or_insert_with(|| Arc::new(gauss_legendre(n)))
        .clone()
}

/// Composite line rule geometrically graded towards `t = 0` (or `t = 1` when
/// `toward_end` is set), for integrands with an endpoint singularity.
pub fn graded_line_rule(degree: usize, toward_end: bool, levels: usize) -> LineRule {
    let base = line_rule(degree);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut hi = 1.0;
    for level in 0..=levels {
        let lo = if level == levels { 0.0 } else { hi * 0.5 };
        let len = hi - lo;
        for (&t, &w) in base.points.iter().zip(&base.weights) {
            points.push(lo + len * t);
            weights.push(len * w);
        }
        hi = lo;
    }
    if toward_end {
        for t in points.iter_mut() {
            *t = 1.0 - *t;
        }
    }
    LineRule { points, weights }
}

fn symmetric_rule(degree: usize) -> Result<QuadRule> {
    let (w, p) = fenris_quadrature::polyquad::triangle(degree)
        .map_err(|_| Error::UnsupportedDegree(degree))?;
    Ok(QuadRule {
        points: p
            .iter()
            .map(|q| [0.5 * (q[0] + 1.0), 0.5 * (q[1] + 1.0)])
            .collect(),
        weights: w.iter().map(|w| 0.25 * w).collect(),
        degree,
    })
}

/// Collapsed tensor Gauss rule: `x = u (1 - v)`, `y = v`, Jacobian `1 - v`.
pub fn duffy_rule(degree: usize) -> QuadRule {
    let line = gauss_legendre((degree + 2) / 2 + 1);
    let mut points = Vec::with_capacity(line.points.len().pow(2));
    let mut weights = Vec::with_capacity(points.capacity());
    for (&v, &wv) in line.points.iter().zip(&line.weights) {
        for (&u, &wu) in line.points.iter().zip(&line.weights) {
            points.push([u * (1.0 - v), v]);
            weights.push(wu * wv * (1.0 - v));
        }
    }
    QuadRule {
        points,
        weights,
        degree,
    }
}

/// Reference-triangle rule exact for total degree `degree` (cached).
pub fn quad_rule(degree: usize) -> Result<Arc<QuadRule>> {
    if degree > MAX_DEGREE {
        return Err(Error::UnsupportedDegree(degree));
    }
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<QuadRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&degree) {
        return Ok(r.clone());
    }
    let rule = if degree <= SYMMETRIC_MAX_DEGREE {
        symmetric_rule(degree)?
    } else {
        duffy_rule(degree)
    };
    let rule = Arc::new(rule);
    cache.lock().unwrap().insert(degree, rule.clone());
    Ok(rule)
}

/// Composite rule on the reference triangle graded geometrically towards the
/// reference vertex `vertex` (0, 1 or 2). Each level halves the distance; the
/// base rule of the given degree is used on every sub-triangle.
pub fn graded_rule(degree: usize, vertex: usize, levels: usize) -> Result<QuadRule> {
    let base = quad_rule(degree)?;
    let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let a = corners[vertex];
    let b = corners[(vertex + 1) % 3];
    let c = corners[(vertex + 2) % 3];
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut push_triangle = |t: [[f64; 2]; 3]| {
        let e1 = [t[1][0] - t[0][0], t[1][1] - t[0][1]];
        let e2 = [t[2][0] - t[0][0], t[2][1] - t[0][1]];
        let det = (e1[0] * e2[1] - e1[1] * e2[0]).abs();
        for (q, &w) in base.points.iter().zip(&base.weights) {
            points.push([
                t[0][0] + e1[0] * q[0] + e2[0] * q[1],
                t[0][1] + e1[1] * q[0] + e2[1] * q[1],
            ]);
            weights.push(w * det);
        }
    };
    let (mut b_cur, mut c_cur) = (b, c);
    for _ in 0..levels {
        let mb = [0.5 * (a[0] + b_cur[0]), 0.5 * (a[1] + b_cur[1])];
        let mc = [0.5 * (a[0] + c_cur[0]), 0.5 * (a[1] + c_cur[1])];
        push_triangle([mb, b_cur, c_cur]);
        push_triangle([mb, c_cur, mc]);
        b_cur = mb;
        c_cur = mc;
    }
    push_triangle([a, b_cur, c_cur]);
    Ok(QuadRule {
        points,
        weights,
        degree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::reference_monomial_integral;

    fn check_exactness(rule: &QuadRule, degree: usize) {
        for a in 0..=degree {
            for b in 0..=degree - a {
                let exact = reference_monomial_integral(a, b);
                let approx = rule.integrate(|x| x[0].powi(a as i32) * x[1].powi(b as i32));
                assert!(
                    ((approx - exact) / exact).abs() <= 1e-13,
                    "degree {degree} rule fails on x^{a} y^{b}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn symmetric_tables_are_exact() {
        for d in 0..=SYMMETRIC_MAX_DEGREE {
            let rule = quad_rule(d).unwrap();
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 0.5).abs() < 1e-14);
            assert!(rule.weights.iter().all(|w| w.is_finite()));
            check_exactness(&rule, d);
        }
    }

    #[test]
    fn duffy_fallback_is_exact() {
        for d in [21, 24, 30] {
            check_exactness(&quad_rule(d).unwrap(), d);
        }
    }

    #[test]
    fn analytic_examples() {
        let r = quad_rule(4).unwrap();
        assert!((r.integrate(|_| 1.0) - 0.5).abs() < 1e-15);
        assert!((r.integrate(|x| x[0] * x[1]) - 1.0 / 24.0).abs() < 1e-15);
        assert!((r.integrate(|x| x[0].powi(4)) - 1.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn unsupported_degree_is_an_error() {
        assert!(matches!(quad_rule(MAX_DEGREE + 1), Err(Error::UnsupportedDegree(_))));
    }

    #[test]
    fn gauss_legendre_is_exact() {
        for n in 1..12 {
            let r = gauss_legendre(n);
            for k in 0..2 * n {
                let approx = r.integrate(|t| t.powi(k as i32));
                assert!((approx - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn graded_rules_remain_exact_and_resolve_singularities() {
        for v in 0..3 {
            let r = graded_rule(6, v, 10).unwrap();
            check_exactness(&r, 6);
        }
        // ∫_{K̂} r^{-1/2} with r = |x| has the closed form ∫_0^{π/2} ∫_0^{1/(cos+sin)} r^{1/2} dr dθ
        let r = graded_rule(10, 0, 30).unwrap();
        let approx = r.integrate(|x| (x[0] * x[0] + x[1] * x[1]).powf(-0.25));
        let reference = {
            let line = gauss_legendre(40);
            line.integrate(|t| {
                let th = t * std::f64::consts::FRAC_PI_2;
                let rmax = 1.0 / (th.cos() + th.sin());
                std::f64::consts::FRAC_PI_2 * rmax.powf(1.5) / 1.5
            })
        };
        assert!((approx - reference).abs() < 1e-6 * reference);
        let l = graded_line_rule(16, true, 40);
        let approx = l.integrate(|t| (1.0 - t).powf(-1.0 / 3.0));
        assert!((approx - 1.5).abs() < 1e-7, "{approx}");
    }
}
