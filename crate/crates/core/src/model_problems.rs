//! Mixed and least-squares mixed finite elements for `−Δu = f`, `u = 0` on
//! `∂Ω`, with the a priori cross-checks against the best-approximation tools.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::basis::{dim_scalar, scalar_basis};
use crate::best_approx::{field_errors, global_best, local_errors};
use crate::error::{Error, Result};
use crate::fields::{AnalyticField, FieldInfo, QuadPolicy};
use crate::lagrange::{phys_grad, LagrangeSpace};
use crate::linsolve::SparseSymIndef;
use crate::mesh::{BoundaryLabel, Mesh};
use crate::quadrature::{quad_rule, QuadRule};
use crate::space::{random_conforming, ConformingRtnField, RtnSpace, ScalarPwField};

type ScalarFn = dyn Fn([f64; 2]) -> f64 + Send + Sync;
type VecFn = dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync;

/// Coercivity constant of the least-squares form when `l_Ω` is the diameter.
pub const COERCIVITY_CONSTANT: f64 = 8.0;

/// Bound on the least-squares a priori constant.
pub const LS_APRIORI_CONSTANT: f64 = 17.0;

#[derive(Clone)]
pub struct Manufactured {
    pub u: Arc<ScalarFn>,
    pub grad_u: Arc<VecFn>,
}

/// `−Δu = f` in `Ω`, `u = 0` on `∂Ω`.
#[derive(Clone)]
pub struct PoissonProblem {
    pub name: String,
    pub mesh: Arc<Mesh>,
    pub f: Arc<ScalarFn>,
    pub exact: Option<Manufactured>,
    /// Length scale of the least-squares functional, the diameter of `Ω`.
    pub l_omega: f64,
}

impl fmt::Debug for PoissonProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PoissonProblem")
            .field("name", &self.name)
            .field("elements", &self.mesh.num_elements())
            .field("manufactured", &self.exact.is_some())
            .finish()
    }
}

impl PoissonProblem {
    pub fn new(name: &str, mesh: Arc<Mesh>, f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if mesh.edges().iter().any(|e| e.label == Some(BoundaryLabel::Neumann)) {
            return Err(Error::InvalidArgument(
                "model problems need a Dirichlet condition on the whole boundary".into(),
            ));
        }
        Ok(PoissonProblem {
            name: name.into(),
            l_omega: mesh.domain_diameter(),
            mesh,
            f: Arc::new(f),
            exact: None,
        })
    }

    /// A problem with known solution; `f` must equal `−Δu`, which is spot
    /// checked at 20 random points.
    pub fn manufactured(
        name: &str,
        mesh: Arc<Mesh>,
        u: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        grad_u: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static,
        f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let mut prob = PoissonProblem::new(name, mesh, f)?;
        let grad_u: Arc<VecFn> = Arc::new(grad_u);
        let residual = laplacian_residual(&*grad_u, &*prob.f, &prob.mesh, 20);
        if residual > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "manufactured pair `{name}` has −Δu − f residual {residual:e}"
            )));
        }
        prob.exact = Some(Manufactured { u: Arc::new(u), grad_u });
        Ok(prob)
    }

    /// `u = sin πx sin πy` on the unit square.
    pub fn sine(mesh: Arc<Mesh>) -> Result<Self> {
        use std::f64::consts::PI;
        PoissonProblem::manufactured(
            "sine",
            mesh,
            |x| (PI * x[0]).sin() * (PI * x[1]).sin(),
            |x| [PI * (PI * x[0]).cos() * (PI * x[1]).sin(), PI * (PI * x[0]).sin() * (PI * x[1]).cos()],
            |x| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin(),
        )
    }

    /// `u = x(1−x)y(1−y)` on the unit square: `σ ∈ RTN_p` for `p ≥ 3`, `u ∈ P_q` for `q ≥ 4`.
    pub fn polynomial(mesh: Arc<Mesh>) -> Result<Self> {
        PoissonProblem::manufactured(
            "bubble",
            mesh,
            |x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]),
            |x| [(1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]), x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[1])],
            |x| 2.0 * (x[1] * (1.0 - x[1]) + x[0] * (1.0 - x[0])),
        )
    }

    /// `σ = −∇u` as a field with divergence `f`.
    pub fn flux_field(&self) -> Result<AnalyticField> {
        let exact = self
            .exact
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("problem `{}` has no exact solution", self.name)))?;
        let g = exact.grad_u.clone();
        let f = self.f.clone();
        Ok(AnalyticField::new(
            FieldInfo {
                name: format!("flux:{}", self.name),
                regularity: f64::INFINITY,
                divergence_free: false,
                discrete_degree: None,
                singular_point: None,
            },
            move |x| {
                let d = g(x);
                [-d[0], -d[1]]
            },
            move |x| f(x),
        ))
    }
}

/// Max over random points of `|∇·∇u + f| / max|f|`, with the divergence from
/// Richardson-extrapolated central differences.
fn laplacian_residual(grad_u: &VecFn, f: &ScalarFn, mesh: &Mesh, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let central = |x: [f64; 2], h: f64| {
        let gx = (grad_u([x[0] + h, x[1]])[0] - grad_u([x[0] - h, x[1]])[0]) / (2.0 * h);
        let gy = (grad_u([x[0], x[1] + h])[1] - grad_u([x[0], x[1] - h])[1]) / (2.0 * h);
        gx + gy
    };
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let k = rng.random_range(0..mesh.num_elements());
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let xh = if a + b > 1.0 { [1.0 - a, 1.0 - b] } else { [a, b] };
        let x = mesh.geometry(k).map(xh);
        let h = 1e-3;
        let lap = (4.0 * central(x, h / 2.0) - central(x, h)) / 3.0;
        worst = worst.max((lap + f(x)).abs());
        scale = scale.max(f(x).abs());
    }
    worst / scale.max(1e-300)
}

fn quad_degree(policy: &QuadPolicy, p: usize) -> usize {
    policy.degree_override.unwrap_or(2 * p + policy.extra)
}

/// `(f, φ_i)_K` for the orthonormal scalar basis of degree `p`.
fn scalar_loads(prob: &PoissonProblem, p: usize, rule: &QuadRule) -> Vec<Vec<f64>> {
    let basis = scalar_basis(p);
    (0..prob.mesh.num_elements())
        .map(|k| {
            let g = prob.mesh.geometry(k);
            let mut acc = vec![0.0; basis.len()];
            for (xh, &w) in rule.points.iter().zip(&rule.weights) {
                let fv = (prob.f)(g.map(*xh)) * w * g.det;
                for (a, phi) in acc.iter_mut().zip(basis.eval(*xh)) {
                    *a += fv * phi;
                }
            }
            acc
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MixedSolution {
    pub sigma: ConformingRtnField,
    pub u: ScalarPwField,
    /// Relative residual of the saddle system.
    pub residual: f64,
    /// Max deviation of the divergence coefficients of `σ_M` from `Π^p f`.
    pub div_error: f64,
}

/// Dual mixed method of order `p`: `(σ, v) − (u, ∇·v) = 0`, `(∇·σ, q) = (f, q)`.
pub fn solve_mixed(prob: &PoissonProblem, p: usize, policy: &QuadPolicy) -> Result<MixedSolution> {
    let space = RtnSpace::new(prob.mesh.clone(), p)?;
    let nd = space.ndofs();
    let ns = dim_scalar(p);
    let ne = prob.mesh.num_elements();
    let rule = quad_rule(quad_degree(policy, p))?;
    let loads = scalar_loads(prob, p, &rule);
    let n = nd + ne * ns;
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; n];
    for k in 0..ne {
        let el = space.element(k);
        let map = space.local_to_global(k);
        for (m1, g1) in map.iter().enumerate() {
            let Some(g1) = *g1 else { continue };
            for (m2, g2) in map.iter().enumerate() {
                if let Some(g2) = *g2 {
                    trip.push((g1, g2, el.mass[(m1, m2)]));
                }
            }
            for i in 0..ns {
                let r = nd + k * ns + i;
                trip.push((r, g1, -el.div[(i, m1)]));
                trip.push((g1, r, -el.div[(i, m1)]));
            }
        }
        for i in 0..ns {
            rhs[nd + k * ns + i] = -loads[k][i];
        }
    }
    let lu = SparseSymIndef::factor(n, &trip)?;
    let (x, residual) = lu.solve(&rhs)?;
    let sigma = ConformingRtnField::new(space.clone(), x[..nd].to_vec())?.with_name("sigma_M");
    let mut div_error = 0.0f64;
    for k in 0..ne {
        let el = space.element(k);
        let d = el.div_of(&sigma.local_dofs(k));
        for i in 0..ns {
            div_error = div_error.max((d[i] - loads[k][i] / el.det()).abs());
        }
    }
    Ok(MixedSolution {
        sigma,
        u: ScalarPwField {
            degree: p,
            coeffs: x[nd..].chunks(ns).map(<[f64]>::to_vec).collect(),
        },
        residual,
        div_error,
    })
}

/// Sparse blocks of the least-squares form
/// `A(σ, u; τ, v) = (σ + ∇u, τ + ∇v) + l_Ω² (∇·σ, ∇·τ)`, with `u` unknowns
/// numbered after the flux unknowns.
#[derive(Debug, Clone)]
pub struct LsBlocks {
    pub nflux: usize,
    pub n: usize,
    /// `(σ, τ)`.
    pub mass: Vec<(usize, usize, f64)>,
    /// `(∇·σ, ∇·τ)`.
    pub div: Vec<(usize, usize, f64)>,
    /// `(σ, ∇v)`, flux row and potential column.
    pub coupling: Vec<(usize, usize, f64)>,
    /// `(∇u, ∇v)`.
    pub stiffness: Vec<(usize, usize, f64)>,
    pub l_omega: f64,
}

fn bilinear(trip: &[(usize, usize, f64)], x: &[f64], y: &[f64]) -> f64 {
    trip.iter().map(|&(i, j, v)| x[i] * v * y[j]).sum()
}

impl LsBlocks {
    /// `A(x; y)` for stacked coefficient vectors.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        let l2 = self.l_omega * self.l_omega;
        bilinear(&self.mass, x, y)
            + l2 * bilinear(&self.div, x, y)
            + bilinear(&self.coupling, x, y)
            + bilinear(&self.coupling, y, x)
            + bilinear(&self.stiffness, x, y)
    }

    /// `‖τ‖² + l_Ω² ‖∇·τ‖² + ‖∇v‖²`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        bilinear(&self.mass, x, x)
            + self.l_omega * self.l_omega * bilinear(&self.div, x, x)
            + bilinear(&self.stiffness, x, x)
    }

    fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let l2 = self.l_omega * self.l_omega;
        let mut t = self.mass.clone();
        t.extend(self.div.iter().map(|&(i, j, v)| (i, j, l2 * v)));
        t.extend(self.coupling.iter().copied());
        t.extend(self.coupling.iter().map(|&(i, j, v)| (j, i, v)));
        t.extend(self.stiffness.iter().copied());
        t
    }
}

pub fn assemble_ls(space: &RtnSpace, lag: &LagrangeSpace, l_omega: f64) -> Result<LsBlocks> {
    let mesh = space.mesh();
    let nd = space.ndofs();
    let p = space.degree();
    let q = lag.degree();
    let rule = quad_rule(2 * (p + 1).max(q))?;
    let mut b = LsBlocks {
        nflux: nd,
        n: nd + lag.ndofs(),
        mass: Vec::new(),
        div: Vec::new(),
        coupling: Vec::new(),
        stiffness: Vec::new(),
        l_omega,
    };
    for k in 0..mesh.num_elements() {
        let el = space.element(k);
        let map = space.local_to_global(k);
        let lmap = lag.local_to_free(k);
        let nl = lag.local_len();
        let mut coup = DMatrix::<f64>::zeros(el.len(), nl);
        let mut stiff = DMatrix::<f64>::zeros(nl, nl);
        for (xh, &w) in rule.points.iter().zip(&rule.weights) {
            let w = w * el.det();
            let nv = el.eval_basis(*xh);
            let gl = lag.grad_basis(k, *xh);
            for (m, nm) in nv.iter().enumerate() {
                for (j, gj) in gl.iter().enumerate() {
                    coup[(m, j)] += w * (nm[0] * gj[0] + nm[1] * gj[1]);
                }
            }
            for (i, gi) in gl.iter().enumerate() {
                for (j, gj) in gl.iter().enumerate() {
                    stiff[(i, j)] += w * (gi[0] * gj[0] + gi[1] * gj[1]);
                }
            }
        }
        let dd = el.div.transpose() * &el.div / el.det();
        for (m1, g1) in map.iter().enumerate() {
            let Some(g1) = *g1 else { continue };
            for (m2, g2) in map.iter().enumerate() {
                if let Some(g2) = *g2 {
                    b.mass.push((g1, g2, el.mass[(m1, m2)]));
                    b.div.push((g1, g2, dd[(m1, m2)]));
                }
            }
            for (j, lj) in lmap.iter().enumerate() {
                if let Some(lj) = *lj {
                    b.coupling.push((g1, nd + lj, coup[(m1, j)]));
                }
            }
        }
        for (i, li) in lmap.iter().enumerate() {
            let Some(li) = *li else { continue };
            for (j, lj) in lmap.iter().enumerate() {
                if let Some(lj) = *lj {
                    b.stiffness.push((nd + li, nd + lj, stiff[(i, j)]));
                }
            }
        }
    }
    Ok(b)
}

#[derive(Debug, Clone)]
pub struct LsSolution {
    pub sigma: ConformingRtnField,
    pub lagrange: Arc<LagrangeSpace>,
    /// Free Lagrange coefficients of `u_LS`.
    pub u: Vec<f64>,
    pub blocks: LsBlocks,
    /// Stacked right-hand side `(l_Ω² (f, ∇·τ), 0)`.
    pub rhs: Vec<f64>,
    pub residual: f64,
}

impl LsSolution {
    pub fn stacked(&self) -> Vec<f64> {
        self.sigma.coeffs().iter().chain(&self.u).copied().collect()
    }
}

/// Least-squares mixed method with flux degree `p` and potential degree `q`.
pub fn solve_ls_mixed(prob: &PoissonProblem, p: usize, q: usize, policy: &QuadPolicy) -> Result<LsSolution> {
    let space = RtnSpace::new(prob.mesh.clone(), p)?;
    let lag = LagrangeSpace::new(prob.mesh.clone(), q)?;
    let blocks = assemble_ls(&space, &lag, prob.l_omega)?;
    let rule = quad_rule(quad_degree(policy, p))?;
    let loads = scalar_loads(prob, p, &rule);
    let l2 = prob.l_omega * prob.l_omega;
    let mut rhs = vec![0.0; blocks.n];
    for k in 0..prob.mesh.num_elements() {
        let el = space.element(k);
        for (m, g) in space.local_to_global(k).iter().enumerate() {
            if let Some(g) = *g {
                let fd: f64 = (0..el.div.nrows()).map(|i| el.div[(i, m)] * loads[k][i]).sum::<f64>() / el.det();
                rhs[g] += l2 * fd;
            }
        }
    }
    let lu = SparseSymIndef::factor(blocks.n, &blocks.triplets())?;
    let (x, residual) = lu.solve(&rhs)?;
    let nd = blocks.nflux;
    Ok(LsSolution {
        sigma: ConformingRtnField::new(space, x[..nd].to_vec())?.with_name("sigma_LS"),
        lagrange: lag,
        u: x[nd..].to_vec(),
        blocks,
        rhs,
        residual,
    })
}

/// Smallest `A(x; x) / (‖τ‖² + l_Ω²‖∇·τ‖² + ‖∇v‖²)` and the largest violation
/// of `A(x; x) ≥ energy / 8` over `samples` seeded random discrete pairs.
pub fn coercivity_witness(blocks: &LsBlocks, space: &Arc<RtnSpace>, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut min_ratio, mut worst) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in 0..samples {
        let tau = random_conforming(space.clone(), seed.wrapping_add(s as u64 + 1));
        let mut x = tau.coeffs().to_vec();
        x.extend((blocks.nflux..blocks.n).map(|_| rng.random_range(-1.0..1.0)));
        let a = blocks.form(&x, &x);
        let e = blocks.energy(&x);
        min_ratio = min_ratio.min(a / e);
        worst = worst.max(e / COERCIVITY_CONSTANT - a);
    }
    (min_ratio, worst)
}

/// Largest `|A(σ − σ_LS, u − u_LS; τ, v)|` over random discrete pairs, relative
/// to `A(τ,v;τ,v)^{1/2}` times the energy of the discrete solution. The exact
/// pair enters through `A(σ, u; τ, v) = l_Ω² (f, ∇·τ)`.
pub fn galerkin_orthogonality(sol: &LsSolution, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = sol.stacked();
    let scale = sol.blocks.form(&xs, &xs).sqrt().max(1e-300);
    let space = sol.sigma.space();
    (0..samples)
        .map(|s| {
            let tau = random_conforming(space.clone(), seed.wrapping_add(s as u64 + 1));
            let mut y = tau.coeffs().to_vec();
            y.extend((sol.blocks.nflux..sol.blocks.n).map(|_| rng.random_range(-1.0..1.0)));
            let exact: f64 = sol.rhs.iter().zip(&y).map(|(r, y)| r * y).sum();
            let r = exact - sol.blocks.form(&xs, &y);
            r.abs() / (scale * sol.blocks.form(&y, &y).sqrt())
        })
        .fold(0.0, f64::max)
}

/// `‖∇(u − u_h)‖` for free Lagrange coefficients `coeffs`.
pub fn grad_error(lag: &LagrangeSpace, coeffs: &[f64], grad_u: &VecFn, degree: usize) -> Result<f64> {
    let rule = quad_rule(degree)?;
    let mesh = lag.mesh();
    let mut s = 0.0;
    for k in 0..mesh.num_elements() {
        let g = mesh.geometry(k);
        for (xh, &w) in rule.points.iter().zip(&rule.weights) {
            let gu = grad_u(g.map(*xh));
            let gh = lag.grad(coeffs, k, *xh);
            s += w * g.det * ((gu[0] - gh[0]).powi(2) + (gu[1] - gh[1]).powi(2));
        }
    }
    Ok(s.sqrt())
}

/// `min_{v ∈ P_q ∩ H¹₀} ‖∇(u − v)‖`, by the discrete Poisson solve with
/// data `(∇u, ∇v)`.
pub fn h1_global_best(lag: &LagrangeSpace, grad_u: &VecFn, degree: usize) -> Result<f64> {
    let mesh = lag.mesh();
    let rule = quad_rule(degree)?;
    let n = lag.ndofs();
    if n == 0 {
        return grad_error(lag, &[], grad_u, degree);
    }
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; n];
    for k in 0..mesh.num_elements() {
        let g = mesh.geometry(k);
        let map = lag.local_to_free(k);
        for (xh, &w) in rule.points.iter().zip(&rule.weights) {
            let w = w * g.det;
            let gl = lag.grad_basis(k, *xh);
            let gu = grad_u(g.map(*xh));
            for (i, gi) in gl.iter().enumerate() {
                let Some(fi) = map[i] else { continue };
                rhs[fi] += w * (gu[0] * gi[0] + gu[1] * gi[1]);
                for (j, gj) in gl.iter().enumerate() {
                    if let Some(fj) = map[j] {
                        trip.push((fi, fj, w * (gi[0] * gj[0] + gi[1] * gj[1])));
                    }
                }
            }
        }
    }
    let (x, _) = SparseSymIndef::factor(n, &trip)?.solve(&rhs)?;
    grad_error(lag, &x, grad_u, degree)
}

/// `(Σ_K min_{q ∈ P_q(K)} ‖∇(u − q)‖²_K)^{1/2}`.
pub fn h1_local_best(mesh: &Mesh, q: usize, grad_u: &VecFn, degree: usize) -> Result<f64> {
    let rule = quad_rule(degree)?;
    let exps: Vec<(usize, usize)> = (1..=q).flat_map(|d| (0..=d).map(move |b| (d - b, b))).collect();
    let pw = |x: f64, k: usize| if k == 0 { 1.0 } else { x.powi(k as i32) };
    let grads = |xh: [f64; 2]| -> Vec<[f64; 2]> {
        exps.iter()
            .map(|&(a, b)| {
                let dx = if a == 0 { 0.0 } else { a as f64 * pw(xh[0], a - 1) * pw(xh[1], b) };
                let dy = if b == 0 { 0.0 } else { b as f64 * pw(xh[0], a) * pw(xh[1], b - 1) };
                [dx, dy]
            })
            .collect()
    };
    let n = exps.len();
    let mut total = 0.0;
    for k in 0..mesh.num_elements() {
        let g = mesh.geometry(k);
        let mut gram = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for (xh, &w) in rule.points.iter().zip(&rule.weights) {
            let gm: Vec<[f64; 2]> = grads(*xh).into_iter().map(|d| phys_grad(g, d)).collect();
            let gu = grad_u(g.map(*xh));
            for i in 0..n {
                rhs[i] += w * (gu[0] * gm[i][0] + gu[1] * gm[i][1]);
                for j in 0..n {
                    gram[(i, j)] += w * (gm[i][0] * gm[j][0] + gm[i][1] * gm[j][1]);
                }
            }
        }
        let c = gram
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("H¹ Gram matrix on element {k}")))?
            .solve(&rhs);
        for (xh, &w) in rule.points.iter().zip(&rule.weights) {
            let gu = grad_u(g.map(*xh));
            let mut gq = [0.0, 0.0];
            for (ci, d) in c.iter().zip(grads(*xh)) {
                let d = phys_grad(g, d);
                gq[0] += ci * d[0];
                gq[1] += ci * d[1];
            }
            total += w * g.det * ((gu[0] - gq[0]).powi(2) + (gu[1] - gq[1]).powi(2));
        }
    }
    Ok(total.sqrt())
}

/// One row of the a priori comparison.
#[derive(Debug, Clone, Serialize)]
pub struct AprioriEntry {
    pub num_elements: usize,
    pub h_max: f64,
    pub p: usize,
    pub q: usize,
    /// `‖σ − σ_M‖`.
    pub mixed_err: f64,
    /// Global constrained best approximation `min ‖σ − v‖`, `∇·v = Π^p f`.
    pub flux_best: f64,
    /// (a) `|mixed_err − flux_best| / flux_best`.
    pub mixed_vs_best: f64,
    pub mixed_residual: f64,
    pub mixed_div_error: f64,
    /// `‖σ − σ_LS‖`.
    pub ls_flux_err: f64,
    /// `‖∇(u − u_LS)‖`.
    pub ls_grad_err: f64,
    /// `‖∇·(σ − σ_LS)‖`.
    pub ls_div_err: f64,
    pub ls_residual: f64,
    /// `min ‖∇(u − v)‖` over `P_q ∩ H¹₀`.
    pub h1_best: f64,
    /// (b) `(ls_flux_err + ls_grad_err) / (flux_best + h1_best)`.
    pub ls_ratio: f64,
    /// (c) left side of the divergence bound, `l_Ω² ‖∇·(σ − σ_LS)‖²`.
    pub div_bound_lhs: f64,
    /// `l_Ω² ‖∇·σ − Π^p ∇·σ‖² + ‖∇(u − u_LS)‖² + flux_best²`.
    pub div_bound_rhs: f64,
    /// `(rhs − lhs) / rhs`.
    pub div_bound_slack: f64,
    /// (d) `(Σ_K min_{P_q(K)} ‖∇(u − q)‖²_K)^{1/2}`.
    pub h1_local_best: f64,
    /// `h1_best / h1_local_best`, or `None` when both vanish.
    pub h1_ratio: Option<f64>,
}

/// The a priori comparisons for one manufactured problem.
pub fn apriori_entry(prob: &PoissonProblem, p: usize, q: usize, policy: &QuadPolicy) -> Result<AprioriEntry> {
    let exact = prob
        .exact
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("problem `{}` has no exact solution", prob.name)))?;
    let flux = prob.flux_field()?;
    let mixed = solve_mixed(prob, p, policy)?;
    let ls = solve_ls_mixed(prob, p, q, policy)?;
    let space = mixed.sigma.space().clone();
    let best = global_best(&flux, &space, policy)?.value;
    let mixed_err = field_errors(&flux, &mixed.sigma.to_broken(), policy)?
        .value
        .iter()
        .map(|e| e[0] * e[0])
        .sum::<f64>()
        .sqrt();
    let ls_errs = field_errors(&flux, &ls.sigma.to_broken(), policy)?.value;
    let ls_flux_err = ls_errs.iter().map(|e| e[0] * e[0]).sum::<f64>().sqrt();
    let ls_div_err = ls_errs.iter().map(|e| e[1] * e[1]).sum::<f64>().sqrt();
    let degree = quad_degree(policy, p.max(q));
    let ls_grad_err = grad_error(&ls.lagrange, &ls.u, &*exact.grad_u, degree)?;
    let h1_best = h1_global_best(&ls.lagrange, &*exact.grad_u, degree)?;
    let h1_local_best = h1_local_best(&prob.mesh, q, &*exact.grad_u, degree)?;
    let osc_sq: f64 = local_errors(&flux, &space, policy)?.value.iter().map(|e| e.osc * e.osc).sum();
    let l2 = prob.l_omega * prob.l_omega;
    let lhs = l2 * ls_div_err * ls_div_err;
    let rhs = l2 * osc_sq + ls_grad_err * ls_grad_err + best.l2 * best.l2;
    let tiny = 1e-12;
    Ok(AprioriEntry {
        num_elements: prob.mesh.num_elements(),
        h_max: prob.mesh.h_max(),
        p,
        q,
        mixed_err,
        flux_best: best.l2,
        mixed_vs_best: (mixed_err - best.l2).abs() / best.l2.max(tiny),
        mixed_residual: mixed.residual,
        mixed_div_error: mixed.div_error,
        ls_flux_err,
        ls_grad_err,
        ls_div_err,
        ls_residual: ls.residual,
        h1_best,
        ls_ratio: (ls_flux_err + ls_grad_err) / (best.l2 + h1_best).max(tiny),
        div_bound_lhs: lhs,
        div_bound_rhs: rhs,
        div_bound_slack: if rhs > 0.0 { (rhs - lhs) / rhs } else { -lhs },
        h1_local_best,
        h1_ratio: (h1_best.max(h1_local_best) > tiny).then(|| h1_best / h1_local_best),
    })
}

/// [`apriori_entry`] over a sequence of meshes.
pub fn apriori_checks(problems: &[PoissonProblem], p: usize, q: usize, policy: &QuadPolicy) -> Result<Vec<AprioriEntry>> {
    problems.iter().map(|prob| apriori_entry(prob, p, q, policy)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoundaryRule;

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::unit_square(n, &BoundaryRule::AllDirichlet).unwrap())
    }

    #[test]
    fn zero_load_gives_zero_solutions() {
        let prob = PoissonProblem::new("zero", square(2), |_| 0.0).unwrap();
        let pol = QuadPolicy::default();
        let m = solve_mixed(&prob, 1, &pol).unwrap();
        assert!(m.sigma.coeffs().iter().chain(m.u.coeffs.iter().flatten()).all(|c| *c == 0.0));
        let ls = solve_ls_mixed(&prob, 1, 2, &pol).unwrap();
        assert!(ls.stacked().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn rejects_neumann_boundaries_and_bad_pairs() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllNeumann).unwrap());
        assert!(PoissonProblem::new("n", mesh, |_| 1.0).is_err());
        let bad = PoissonProblem::manufactured("bad", square(2), |x| x[0] * x[0], |x| [2.0 * x[0], 0.0], |_| 1.0);
        assert!(bad.is_err());
    }

    #[test]
    fn mixed_divergence_is_projected_load() {
        let prob = PoissonProblem::sine(square(4)).unwrap();
        for p in 0..3 {
            let m = solve_mixed(&prob, p, &QuadPolicy::default()).unwrap();
            assert!(m.div_error < 1e-11, "p={p}: {:e}", m.div_error);
            assert!(m.residual < 1e-10);
        }
    }

    #[test]
    fn mixed_error_equals_constrained_best_approximation() {
        let prob = PoissonProblem::sine(square(4)).unwrap();
        let e = apriori_entry(&prob, 1, 1, &QuadPolicy::default()).unwrap();
        assert!(e.mixed_vs_best < 1e-8, "{e:?}");
        assert!(e.ls_ratio <= LS_APRIORI_CONSTANT);
        assert!(e.div_bound_slack >= -1e-9);
        assert!(e.h1_ratio.unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn discrete_solutions_are_reproduced() {
        let prob = PoissonProblem::polynomial(square(2)).unwrap();
        let e = apriori_entry(&prob, 3, 4, &QuadPolicy::default()).unwrap();
        for v in [e.mixed_err, e.flux_best, e.ls_flux_err, e.ls_grad_err, e.ls_div_err, e.h1_best, e.h1_local_best] {
            assert!(v < 1e-9, "{e:?}");
        }
        assert!(e.h1_ratio.is_none());
    }

    #[test]
    fn least_squares_form_is_coercive_and_orthogonal() {
        let prob = PoissonProblem::sine(square(4)).unwrap();
        let ls = solve_ls_mixed(&prob, 1, 1, &QuadPolicy::default()).unwrap();
        assert!(ls.residual < 1e-10);
        let (ratio, worst) = coercivity_witness(&ls.blocks, ls.sigma.space(), 20, 3);
        assert!(worst <= 1e-9 && ratio >= 1.0 / COERCIVITY_CONSTANT, "{ratio} {worst}");
        assert!(galerkin_orthogonality(&ls, 20, 9) < 1e-9);
    }

    #[test]
    fn mixed_flux_converges_at_optimal_rate() {
        for p in 0..3 {
            let errs: Vec<f64> = [2, 4, 8, 16]
                .iter()
                .map(|&n| {
                    let prob = PoissonProblem::sine(square(n)).unwrap();
                    let m = solve_mixed(&prob, p, &QuadPolicy::default()).unwrap();
                    let flux = prob.flux_field().unwrap();
                    field_errors(&flux, &m.sigma.to_broken(), &QuadPolicy::default())
                        .unwrap()
                        .value
                        .iter()
                        .map(|e| e[0] * e[0])
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            for w in errs[1..].windows(2) {
                let slope = (w[0] / w[1]).log2();
                assert!((slope - (p as f64 + 1.0)).abs() < 0.1, "p={p}: {slope}");
            }
        }
    }
}
