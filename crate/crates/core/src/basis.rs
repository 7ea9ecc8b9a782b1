//! Reference-element bases: an `L²(K̂)`-orthonormal basis of `P_p(K̂)` and a
//! Raviart–Thomas–Nédélec basis of `RTN_p(K̂) = P_p(K̂; R²) + x P_p(K̂)`.
//!
//! The scalar basis is the collapsed-coordinate (Dubiner) family written out
//! in monomial form, ordered by total degree so that its first
//! `dim P_{p-1}` members span `P_{p-1}`.
//!
//! The RTN space is spanned by a "raw" basis (vector copies of the scalar basis
//! plus `x` times the top-degree scalar functions). Degrees of freedom are the
//! normal moments on each edge against Legendre polynomials orthonormal on
//! that edge and the interior moments against `P_{p-1}(K̂; R²)`; the dual basis
//! is obtained by inverting the dof matrix of the raw basis.

use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::poly::{legendre_unit, Poly2};
use crate::quadrature::{line_rule, quad_rule};

/// `dim P_p` in two variables.
pub fn dim_scalar(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

/// `dim RTN_p` on a triangle.
pub fn dim_rtn(p: usize) -> usize {
    (p + 1) * (p + 3)
}

/// Number of interior (cell) dofs of `RTN_p`.
pub fn dim_rtn_interior(p: usize) -> usize {
    p * (p + 1)
}

/// Reference triangle vertices.
pub const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Local edge `e` runs from vertex `(e + 1) % 3` to vertex `(e + 2) % 3`.
pub fn local_edge_vertices(e: usize) -> (usize, usize) {
    ((e + 1) % 3, (e + 2) % 3)
}

#[derive(Debug)]
pub struct ScalarBasis {
    pub degree: usize,
    pub polys: Vec<Poly2>,
    grads: Vec<[Poly2; 2]>,
}

impl ScalarBasis {
    fn build(p: usize) -> Self {
        let s = &(&Poly2::monomial(1, 0, 2.0) + &Poly2::y()) - &Poly2::constant(1.0);
        let w = &Poly2::constant(1.0) - &Poly2::y();
        let w2 = &w * &w;
        let z = &Poly2::monomial(0, 1, 2.0) - &Poly2::constant(1.0);

        // Q_i = P_i(a) (1 - y)^i with the collapsed coordinate a.
        let mut q = vec![Poly2::constant(1.0)];
        if p >= 1 {
            q.push(s.clone());
        }
        for i in 1..p {
            let t1 = (&s * &q[i]).scale((2 * i + 1) as f64);
            let t2 = (&w2 * &q[i - 1]).scale(i as f64);
            q.push((&t1 - &t2).scale(1.0 / (i + 1) as f64));
        }

        let jacobi = |alpha: f64, n: usize| -> Vec<Poly2> {
            let mut out = vec![Poly2::constant(1.0)];
            if n >= 1 {
                let j1 = &Poly2::constant(alpha + 1.0)
                    + &(&z - &Poly2::constant(1.0)).scale((alpha + 2.0) / 2.0);
                out.push(j1);
            }
            for k in 2..=n {
                let kf = k as f64;
                let a_n = 2.0 * kf * (kf + alpha) * (2.0 * kf + alpha - 2.0);
                let lin = &z.scale((2.0 * kf + alpha) * (2.0 * kf + alpha - 2.0))
                    + &Poly2::constant(alpha * alpha);
                let t1 = (&lin * &out[k - 1]).scale(2.0 * kf + alpha - 1.0);
                let t2 = out[k - 2].scale(2.0 * (kf + alpha - 1.0) * (kf - 1.0) * (2.0 * kf + alpha));
                out.push((&t1 - &t2).scale(1.0 / a_n));
            }
            out
        };

        let mut polys = Vec::with_capacity(dim_scalar(p));
        for n in 0..=p {
            for i in 0..=n {
                let j = n - i;
                let jac = jacobi((2 * i + 1) as f64, j);
                let norm = (((2 * i + 1) * (2 * i + 2 * j + 2)) as f64).sqrt();
                polys.push((&q[i] * &jac[j]).scale(norm));
            }
        }
        let grads = polys.iter().map(|f| [f.dx(), f.dy()]).collect();
        ScalarBasis {
            degree: p,
            polys,
            grads,
        }
    }

    pub fn len(&self) -> usize {
        self.polys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polys.is_empty()
    }

    pub fn eval(&self, x: [f64; 2]) -> Vec<f64> {
        self.polys.iter().map(|f| f.eval(x[0], x[1])).collect()
    }

    /// Reference gradients of every basis function.
    pub fn eval_grad(&self, x: [f64; 2]) -> Vec<[f64; 2]> {
        self.grads
            .iter()
            .map(|g| [g[0].eval(x[0], x[1]), g[1].eval(x[0], x[1])])
            .collect()
    }
}

/// Shared scalar basis of degree `p` (built once).
pub fn scalar_basis(p: usize) -> Arc<ScalarBasis> {
    static CACHE: OnceLock<Mutex<Vec<Option<Arc<ScalarBasis>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
    let mut guard = cache.lock().unwrap();
    if guard.len() <= p {
        guard.resize(p + 1, None);
    }
    guard[p]
        .get_or_insert_with(|| Arc::new(ScalarBasis::build(p)))
        .clone()
}

/// Reference `RTN_p(K̂)` basis with precomputed moment tables.
#[derive(Debug)]
pub struct RtnBasis {
    pub degree: usize,
    pub scalar: Arc<ScalarBasis>,
    raw: Vec<[Poly2; 2]>,
    raw_div: Vec<Poly2>,
    /// `div ŵ_j = Σ_i div_coeffs[(i, j)] φ̂_i`.
    pub div_coeffs: DMatrix<f64>,
    /// `mass_tensor[2a + b][(j, k)] = ∫_{K̂} ŵ_j^a ŵ_k^b`.
    pub mass_tensor: [DMatrix<f64>; 4],
    /// `edge_moments[e][(k, j)] = ∫_{F̂_e} (ŵ_j · n̂_e) ℓ_k(t̂) dŝ` with the outward
    /// normal and the local edge parameter `t̂`.
    pub edge_moments: [DMatrix<f64>; 3],
    /// `interior_moments[c][(i, j)] = ∫_{K̂} ŵ_j^c φ̂_i` for `φ̂_i ∈ P_{p-1}`.
    pub interior_moments: [DMatrix<f64>; 2],
    /// Raw-basis coefficients of the reference dual basis (columns).
    pub dual: DMatrix<f64>,
}

pub fn ref_edge_length(e: usize) -> f64 {
    if e == 0 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

/// Outward unit normal of reference edge `e`.
pub fn ref_edge_normal(e: usize) -> [f64; 2] {
    let (a, b) = local_edge_vertices(e);
    let t = [
        REF_VERTICES[b][0] - REF_VERTICES[a][0],
        REF_VERTICES[b][1] - REF_VERTICES[a][1],
    ];
    let len = ref_edge_length(e);
    [t[1] / len, -t[0] / len]
}

/// Point on reference edge `e` at local parameter `t ∈ [0, 1]`.
pub fn ref_edge_point(e: usize, t: f64) -> [f64; 2] {
    let (a, b) = local_edge_vertices(e);
    [
        (1.0 - t) * REF_VERTICES[a][0] + t * REF_VERTICES[b][0],
        (1.0 - t) * REF_VERTICES[a][1] + t * REF_VERTICES[b][1],
    ]
}

impl RtnBasis {
    fn build(p: usize) -> Result<Self> {
        let scalar = scalar_basis(p);
        let ns = dim_scalar(p);
        let n_low = if p == 0 { 0 } else { dim_scalar(p - 1) };
        let zero = Poly2::zero(0);
        let mut raw: Vec<[Poly2; 2]> = Vec::with_capacity(dim_rtn(p));
        for f in &scalar.polys {
            raw.push([f.clone(), zero.clone()]);
        }
        for f in &scalar.polys {
            raw.push([zero.clone(), f.clone()]);
        }
        for f in &scalar.polys[n_low..ns] {
            raw.push([&Poly2::x() * f, &Poly2::y() * f]);
        }
        let n = raw.len();
        if n != dim_rtn(p) {
            return Err(Error::Internal(format!("raw RTN basis has {n} members")));
        }
        let raw_div: Vec<Poly2> = raw.iter().map(|w| &w[0].dx() + &w[1].dy()).collect();

        let rule = quad_rule(2 * p + 2)?;
        let mut div_coeffs = DMatrix::zeros(ns, n);
        let mut mass_tensor = [
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
        ];
        let mut interior_moments = [DMatrix::zeros(n_low, n), DMatrix::zeros(n_low, n)];
        for (x, &wq) in rule.points.iter().zip(&rule.weights) {
            let phi = scalar.eval(*x);
            let vals: Vec<[f64; 2]> = raw
                .iter()
                .map(|w| [w[0].eval(x[0], x[1]), w[1].eval(x[0], x[1])])
                .collect();
            let divs: Vec<f64> = raw_div.iter().map(|d| d.eval(x[0], x[1])).collect();
            for j in 0..n {
                for i in 0..ns {
                    div_coeffs[(i, j)] += wq * divs[j] * phi[i];
                }
                for i in 0..n_low {
                    interior_moments[0][(i, j)] += wq * vals[j][0] * phi[i];
                    interior_moments[1][(i, j)] += wq * vals[j][1] * phi[i];
                }
                for k in 0..n {
                    for a in 0..2 {
                        for b in 0..2 {
                            mass_tensor[2 * a + b][(j, k)] += wq * vals[j][a] * vals[k][b];
                        }
                    }
                }
            }
        }

        let line = line_rule(2 * p + 1);
        let mut edge_moments = [
            DMatrix::zeros(p + 1, n),
            DMatrix::zeros(p + 1, n),
            DMatrix::zeros(p + 1, n),
        ];
        for (e, moments) in edge_moments.iter_mut().enumerate() {
            let nrm = ref_edge_normal(e);
            let len = ref_edge_length(e);
            for (&t, &wq) in line.points.iter().zip(&line.weights) {
                let x = ref_edge_point(e, t);
                for (j, w) in raw.iter().enumerate() {
                    let wn = w[0].eval(x[0], x[1]) * nrm[0] + w[1].eval(x[0], x[1]) * nrm[1];
                    for k in 0..=p {
                        moments[(k, j)] += wq * len * wn * legendre_unit(k, t);
                    }
                }
            }
        }

        let mut dofs = DMatrix::zeros(n, n);
        for e in 0..3 {
            let scale = 1.0 / ref_edge_length(e).sqrt();
            for k in 0..=p {
                for j in 0..n {
                    dofs[(e * (p + 1) + k, j)] = scale * edge_moments[e][(k, j)];
                }
            }
        }
        for i in 0..n_low {
            for c in 0..2 {
                for j in 0..n {
                    dofs[(3 * (p + 1) + 2 * i + c, j)] = interior_moments[c][(i, j)];
                }
            }
        }
        let dual = dofs
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Internal(format!("RTN_{p} dof matrix is singular")))?;

        Ok(RtnBasis {
            degree: p,
            scalar,
            raw,
            raw_div,
            div_coeffs,
            mass_tensor,
            edge_moments,
            interior_moments,
            dual,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Raw basis values at a reference point.
    pub fn eval_raw(&self, x: [f64; 2]) -> Vec<[f64; 2]> {
        self.raw
            .iter()
            .map(|w| [w[0].eval(x[0], x[1]), w[1].eval(x[0], x[1])])
            .collect()
    }

    /// Reference divergence of every raw basis function.
    pub fn eval_raw_div(&self, x: [f64; 2]) -> Vec<f64> {
        self.raw_div.iter().map(|d| d.eval(x[0], x[1])).collect()
    }

    /// Values of the reference dual basis (columns of `dual`) at `x`.
    pub fn eval_dual(&self, x: [f64; 2]) -> Vec<[f64; 2]> {
        let raw = self.eval_raw(x);
        (0..self.len())
            .map(|m| {
                let mut v = [0.0, 0.0];
                for (j, r) in raw.iter().enumerate() {
                    v[0] += self.dual[(j, m)] * r[0];
                    v[1] += self.dual[(j, m)] * r[1];
                }
                v
            })
            .collect()
    }

    /// Raw polynomial components, for tests and exact-integration oracles.
    pub fn raw_polys(&self) -> &[[Poly2; 2]] {
        &self.raw
    }
}

/// Shared reference basis of `RTN_p`.
pub fn rtn_basis(p: usize) -> Result<Arc<RtnBasis>> {
    static CACHE: OnceLock<Mutex<Vec<Option<Arc<RtnBasis>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
    {
        let guard = cache.lock().unwrap();
        if let Some(Some(b)) = guard.get(p) {
            return Ok(b.clone());
        }
    }
    let basis = Arc::new(RtnBasis::build(p)?);
    let mut guard = cache.lock().unwrap();
    if guard.len() <= p {
        guard.resize(p + 1, None);
    }
    Ok(guard[p].get_or_insert(basis).clone())
}
