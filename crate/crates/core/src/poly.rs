//! Bivariate polynomials in monomial form.
//!
//! Coefficients are stored densely for all monomials `x^a y^b` with
//! `a + b <= degree`, ordered by total degree and then by decreasing `a`.

use std::ops::{Add, Mul, Sub};

/// Number of monomials of total degree at most `degree`.
pub fn monomial_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

fn monomial_index(a: usize, b: usize) -> usize {
    let n = a + b;
    n * (n + 1) / 2 + b
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poly2 {
    degree: usize,
    coeffs: Vec<f64>,
}

impl Poly2 {
    pub fn zero(degree: usize) -> Self {
        Poly2 {
            degree,
            coeffs: vec![0.0; monomial_count(degree)],
        }
    }

    pub fn constant(c: f64) -> Self {
        Poly2 {
            degree: 0,
            coeffs: vec![c],
        }
    }

    /// `c * x^a * y^b`.
    pub fn monomial(a: usize, b: usize, c: f64) -> Self {
        let mut p = Poly2::zero(a + b);
        p.coeffs[monomial_index(a, b)] = c;
        p
    }

    pub fn x() -> Self {
        Poly2::monomial(1, 0, 1.0)
    }

    pub fn y() -> Self {
        Poly2::monomial(0, 1, 1.0)
    }

    /// Declared degree (an upper bound on the true degree).
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeff(&self, a: usize, b: usize) -> f64 {
        if a + b > self.degree {
            0.0
        } else {
            self.coeffs[monomial_index(a, b)]
        }
    }

    fn coeff_mut(&mut self, a: usize, b: usize) -> &mut f64 {
        &mut self.coeffs[monomial_index(a, b)]
    }

    fn widened(&self, degree: usize) -> Self {
        let mut p = Poly2::zero(degree.max(self.degree));
        for n in 0..=self.degree {
            for b in 0..=n {
                *p.coeff_mut(n - b, b) = self.coeff(n - b, b);
            }
        }
        p
    }

    pub fn scale(&self, s: f64) -> Self {
        Poly2 {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        // Horner in x for each power of y, then Horner in y.
        let d = self.degree;
        let mut s = 0.0;
        for b in (0..=d).rev() {
            let mut row = 0.0;
            for a in (0..=d - b).rev() {
                row = row * x + self.coeffs[monomial_index(a, b)];
            }
            s = s * y + row;
        }
        s
    }

    pub fn dx(&self) -> Self {
        let mut p = Poly2::zero(self.degree.saturating_sub(1));
        for n in 1..=self.degree {
            for b in 0..n {
                let a = n - b;
                *p.coeff_mut(a - 1, b) += a as f64 * self.coeff(a, b);
            }
        }
        p
    }

    pub fn dy(&self) -> Self {
        let mut p = Poly2::zero(self.degree.saturating_sub(1));
        for n in 1..=self.degree {
            for b in 1..=n {
                let a = n - b;
                *p.coeff_mut(a, b - 1) += b as f64 * self.coeff(a, b);
            }
        }
        p
    }

    /// Exact integral over the reference triangle with vertices (0,0), (1,0), (0,1).
    pub fn integrate_reference(&self) -> f64 {
        let mut s = 0.0;
        for n in 0..=self.degree {
            for b in 0..=n {
                s += self.coeff(n - b, b) * reference_monomial_integral(n - b, b);
            }
        }
        s
    }
}

/// `∫_{K̂} x^a y^b = a! b! / (a + b + 2)!`.
pub fn reference_monomial_integral(a: usize, b: usize) -> f64 {
    // a!b!/(a+b+2)! = 1 / ((a+b+2)(a+b+1) * C(a+b, a))
    let n = a + b;
    let mut binom = 1.0;
    for i in 0..a.min(b) {
        binom = binom * (n - i) as f64 / (i + 1) as f64;
    }
    1.0 / ((n + 2) as f64 * (n + 1) as f64 * binom)
}

impl Add for &Poly2 {
    type Output = Poly2;
    fn add(self, rhs: &Poly2) -> Poly2 {
        let mut p = self.widened(rhs.degree);
        for n in 0..=rhs.degree {
            for b in 0..=n {
                *p.coeff_mut(n - b, b) += rhs.coeff(n - b, b);
            }
        }
        p
    }
}

impl Sub for &Poly2 {
    type Output = Poly2;
    fn sub(self, rhs: &Poly2) -> Poly2 {
        self + &rhs.scale(-1.0)
    }
}

impl Mul for &Poly2 {
    type Output = Poly2;
    fn mul(self, rhs: &Poly2) -> Poly2 {
        let mut p = Poly2::zero(self.degree + rhs.degree);
        for n in 0..=self.degree {
            for b in 0..=n {
                let c = self.coeff(n - b, b);
                if c == 0.0 {
                    continue;
                }
                for m in 0..=rhs.degree {
                    for d in 0..=m {
                        *p.coeff_mut(n - b + m - d, b + d) += c * rhs.coeff(m - d, d);
                    }
                }
            }
        }
        p
    }
}

/// Legendre polynomial `P_k(s)` on [-1, 1] by the three-term recurrence.
pub fn legendre(k: usize, s: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, s);
    if k == 0 {
        return p0;
    }
    for n in 1..k {
        let p2 = ((2 * n + 1) as f64 * s * p1 - n as f64 * p0) / (n + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Legendre polynomial of degree `k` shifted to [0, 1] and normalized in `L²(0, 1)`.
pub fn legendre_unit(k: usize, t: f64) -> f64 {
    ((2 * k + 1) as f64).sqrt() * legendre(k, 2.0 * t - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_evaluation() {
        let p = &(&Poly2::x() + &Poly2::constant(2.0)) * &Poly2::y();
        assert_eq!(p.eval(3.0, 5.0), 25.0);
        assert_eq!(p.dx().eval(3.0, 5.0), 5.0);
        assert_eq!(p.dy().eval(3.0, 5.0), 5.0);
        let q = &p - &p;
        assert_eq!(q.eval(0.3, 0.7), 0.0);
    }

    #[test]
    fn monomial_integrals() {
        assert!((reference_monomial_integral(0, 0) - 0.5).abs() < 1e-16);
        assert!((reference_monomial_integral(1, 1) - 1.0 / 24.0).abs() < 1e-16);
        assert!((reference_monomial_integral(4, 0) - 1.0 / 30.0).abs() < 1e-16);
        assert!((Poly2::monomial(2, 3, 2.0).integrate_reference() - 2.0 * 2.0 * 6.0 / 5040.0).abs() < 1e-16);
    }

    #[test]
    fn unit_legendre_is_orthonormal() {
        let rule = crate::quadrature::gauss_legendre(12);
        for i in 0..6 {
            for j in 0..6 {
                let s: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&t, &w)| w * legendre_unit(i, t) * legendre_unit(j, t))
                    .sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((s - e).abs() < 1e-13);
            }
        }
    }
}
