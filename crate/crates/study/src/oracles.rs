//! Dense brute-force oracles built from exact monomial integrals on the
//! reference triangle and unbordered KKT solves, compared against the
//! library's element, patch, face and end-to-end computations.

use std::sync::Arc;

use anyhow::{Context, Result};
use hdivproj::best_approx::field_errors;
use hdivproj::fields::{AnalyticField, FieldInfo, QuadPolicy, VectorField};
use hdivproj::local_solve::{
    assemble_patch, build_patch_problem, compute_theta, element_moments, patch_equilibrate, Variant,
};
use hdivproj::mesh::{BoundaryRule, Mesh};
use hdivproj::projections::{eval_face, project_normal_trace, project_scalar};
use hdivproj::projector::{project_hdiv, projector_report};
use hdivproj::space::{BrokenRtnField, ConformingRtnField, RtnSpace};
use nalgebra::{DMatrix, DVector};

use crate::checks::Check;

/// `c x^a y^b`.
type Mono = (usize, usize, f64);

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `∫_{K̂} x^a y^b = a! b! / (a + b + 2)!`.
fn ref_moment(a: usize, b: usize) -> f64 {
    factorial(a) * factorial(b) / factorial(a + b + 2)
}

fn integrate_product(p: &[Mono], q: &[Mono]) -> f64 {
    p.iter()
        .flat_map(|&(a, b, c)| q.iter().map(move |&(d, e, f)| c * f * ref_moment(a + d, b + e)))
        .sum()
}

fn eval_poly(p: &[Mono], x: [f64; 2]) -> f64 {
    p.iter().map(|&(a, b, c)| c * x[0].powi(a as i32) * x[1].powi(b as i32)).sum()
}

fn monomials(p: usize) -> Vec<(usize, usize)> {
    (0..=p).flat_map(|d| (0..=d).map(move |b| (d - b, b))).collect()
}

fn derivative(p: &[Mono], dir: usize) -> Vec<Mono> {
    p.iter()
        .filter_map(|&(a, b, c)| match dir {
            0 if a > 0 => Some((a - 1, b, c * a as f64)),
            1 if b > 0 => Some((a, b - 1, c * b as f64)),
            _ => None,
        })
        .collect()
}

/// Vector polynomial as its two components.
#[derive(Debug, Clone)]
struct VecPoly([Vec<Mono>; 2]);

impl VecPoly {
    fn divergence(&self) -> Vec<Mono> {
        let mut d = derivative(&self.0[0], 0);
        d.extend(derivative(&self.0[1], 1));
        d
    }

    fn dot_integral(&self, other: &VecPoly) -> f64 {
        integrate_product(&self.0[0], &other.0[0]) + integrate_product(&self.0[1], &other.0[1])
    }

    fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        [eval_poly(&self.0[0], x), eval_poly(&self.0[1], x)]
    }
}

/// Monomial basis of `RTN_p(K̂)`: `(m, 0)` and `(0, m)` for `deg m ≤ p`, then
/// `x m` for `deg m = p`.
fn rtn_monomial_basis(p: usize) -> Vec<VecPoly> {
    let mut out = Vec::new();
    for (a, b) in monomials(p) {
        out.push(VecPoly([vec![(a, b, 1.0)], vec![]]));
        out.push(VecPoly([vec![], vec![(a, b, 1.0)]]));
    }
    for b in 0..=p {
        let a = p - b;
        out.push(VecPoly([vec![(a + 1, b, 1.0)], vec![(a, b + 1, 1.0)]]));
    }
    out
}

/// Solves `min ‖v − w‖_{K̂}` over `RTN_p(K̂)` subject to `∇·w = Π^p ∇·v` from
/// the dense KKT system in the monomial basis; returns the basis coefficients.
fn element_kkt(v: &VecPoly, p: usize) -> Result<(Vec<VecPoly>, Vec<f64>)> {
    let basis = rtn_monomial_basis(p);
    let tests = monomials(p);
    let (n, m) = (basis.len(), tests.len());
    let div_v = v.divergence();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    let mut rhs = DVector::zeros(n + m);
    for (i, bi) in basis.iter().enumerate() {
        for (j, bj) in basis.iter().enumerate() {
            kkt[(i, j)] = bi.dot_integral(bj);
        }
        rhs[i] = bi.dot_integral(v);
        let div_b = bi.divergence();
        for (r, &(a, b)) in tests.iter().enumerate() {
            let c = integrate_product(&div_b, &[(a, b, 1.0)]);
            kkt[(n + r, i)] = c;
            kkt[(i, n + r)] = c;
        }
    }
    for (r, &(a, b)) in tests.iter().enumerate() {
        rhs[n + r] = integrate_product(&div_v, &[(a, b, 1.0)]);
    }
    let x = kkt.full_piv_lu().solve(&rhs).context("element oracle KKT is singular")?;
    Ok((basis, x.iter().take(n).copied().collect()))
}

fn combine(basis: &[VecPoly], c: &[f64], x: [f64; 2]) -> [f64; 2] {
    basis.iter().zip(c).fold([0.0, 0.0], |s, (b, c)| {
        let v = b.eval(x);
        [s[0] + c * v[0], s[1] + c * v[1]]
    })
}

fn sample_points() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.2, 0.3], [0.6, 0.1], [0.1, 0.75], [1.0 / 3.0, 1.0 / 3.0]]
}

fn polynomial_field(name: &str, v: VecPoly) -> AnalyticField {
    let div = v.divergence();
    let info = FieldInfo {
        name: name.into(),
        regularity: f64::INFINITY,
        divergence_free: false,
        discrete_degree: None,
        singular_point: None,
    };
    AnalyticField::new(info, move |x| v.eval(x), move |x| eval_poly(&div, x))
}

fn reference_mesh() -> Arc<Mesh> {
    Arc::new(Mesh::reference_triangle())
}

/// Element problem for `(x², 0)` at `p = 0` (closed form `w = (1/18 + x/3, −1/9 + y/3)`)
/// and for `(x³, y³)` at `p = 1, 2`.
pub fn element_kkt_oracle() -> Result<Check> {
    let policy = QuadPolicy::default();
    let cases = [
        ("(x^2,0)", VecPoly([vec![(2, 0, 1.0)], vec![]]), 0),
        ("(x^3,y^3)", VecPoly([vec![(3, 0, 1.0)], vec![(0, 3, 1.0)]]), 1),
        ("(x^3,y^3)", VecPoly([vec![(3, 0, 1.0)], vec![(0, 3, 1.0)]]), 2),
    ];
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (name, v, p) in cases {
        let (basis, c) = element_kkt(&v, p)?;
        if p == 0 {
            let closed = [1.0 / 18.0, -1.0 / 9.0, 1.0 / 3.0];
            let d = c.iter().zip(closed).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(d);
            detail.push(format!("closed form {d:.1e}"));
        }
        let field = polynomial_field(name, v);
        let space = RtnSpace::new(reference_mesh(), p)?;
        let theta = compute_theta(&field, &space, &policy)?.value.theta;
        let d = sample_points().into_iter().fold(0.0f64, |m, x| {
            let (a, b) = (theta.eval(0, x), combine(&basis, &c, x));
            m.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs())
        });
        worst = worst.max(d);
        detail.push(format!("{name} p={p}: {d:.1e}"));
    }
    Ok(Check::at_most("oracle: element KKT", worst, 1e-12, detail.join(", ")))
}

/// `Π^p_T f` on `K̂` against monomial normal equations, plus the golden
/// values `Π^0(3x²) = 1/2` with misfit `0.175`.
pub fn scalar_projection_oracle() -> Result<Check> {
    let mesh = reference_mesh();
    let policy = QuadPolicy::default();
    let info = polynomial_field("scalar", VecPoly([vec![], vec![]])).info().clone();
    let mut worst = 0.0f64;
    let f0: Vec<Mono> = vec![(2, 0, 3.0)];
    let pi0 = project_scalar(&mesh, 0, &info, &policy, &|pt| eval_poly(&f0, pt.x))?.value;
    let mean_err = (pi0.eval(0, [0.2, 0.2]) - 0.5).abs();
    let misfit = integrate_product(&f0, &f0) - pi0.l2_norm_sq_on(&mesh, 0);
    worst = worst.max(mean_err).max((misfit - 0.175).abs());
    let f: Vec<Mono> = vec![(2, 1, 1.0), (0, 3, 2.0), (1, 0, -1.0), (4, 0, 0.5)];
    for p in 1..=3 {
        let tests = monomials(p);
        let n = tests.len();
        let gram = DMatrix::from_fn(n, n, |i, j| ref_moment(tests[i].0 + tests[j].0, tests[i].1 + tests[j].1));
        let rhs = DVector::from_fn(n, |i, _| integrate_product(&f, &[(tests[i].0, tests[i].1, 1.0)]));
        let c = gram.full_piv_lu().solve(&rhs).context("scalar oracle Gram matrix is singular")?;
        let mono: Vec<Mono> = tests.iter().zip(c.iter()).map(|(&(a, b), &c)| (a, b, c)).collect();
        let lib = project_scalar(&mesh, p, &info, &policy, &|pt| eval_poly(&f, pt.x))?.value;
        for x in sample_points() {
            worst = worst.max((lib.eval(0, x) - eval_poly(&mono, x)).abs());
        }
    }
    Ok(Check::at_most(
        "oracle: element projection",
        worst,
        1e-12,
        format!("3x^2 mean error {mean_err:.1e}, misfit {misfit:.15}"),
    ))
}

/// `Π^1_F` of the normal trace of `(x³, y³)` on the hypotenuse of `K̂`
/// against 1D normal equations with exact monomial integrals.
pub fn face_projection_oracle() -> Result<Check> {
    let mesh = reference_mesh();
    let field = AnalyticField::cubic();
    let (edge, ed) = mesh
        .edges()
        .iter()
        .enumerate()
        .find(|(_, e)| e.vertices == [1, 2])
        .context("reference triangle has no hypotenuse")?;
    let p = 1;
    let lib = project_normal_trace(&field, &mesh, edge, p, &QuadPolicy::default());
    // g(t) = v(1 − t, t)·n is cubic in t; recover its monomial coefficients exactly
    let [v0, v1] = ed.vertices.map(|v| mesh.vertices()[v]);
    let g = |t: f64| {
        let x = [v0[0] + t * (v1[0] - v0[0]), v0[1] + t * (v1[1] - v0[1])];
        let v = field.eval(x);
        v[0] * ed.normal[0] + v[1] * ed.normal[1]
    };
    let nodes: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let vander = DMatrix::from_fn(4, 4, |i, j| nodes[i].powi(j as i32));
    let gc = vander
        .full_piv_lu()
        .solve(&DVector::from_iterator(4, nodes.iter().map(|&t| g(t))))
        .context("Vandermonde matrix is singular")?;
    let gram = DMatrix::from_fn(p + 1, p + 1, |i, j| 1.0 / (i + j + 1) as f64);
    let rhs = DVector::from_fn(p + 1, |i, _| (0..4).map(|k| gc[k] / (i + k + 1) as f64).sum());
    let c = gram.full_piv_lu().solve(&rhs).context("face Gram matrix is singular")?;
    let worst = [0.0f64, 0.1, 0.37, 0.5, 0.81, 1.0].iter().fold(0.0f64, |m, &t| {
        let want: f64 = c.iter().enumerate().map(|(k, ck)| ck * t.powi(k as i32)).sum();
        m.max((eval_face(&lib, ed.length, t) - want).abs())
    });
    Ok(Check::at_most("oracle: face projection", worst, 1e-12, "cubic normal trace, hypotenuse, p=1".into()))
}

fn center_vertex(mesh: &Mesh) -> Result<usize> {
    mesh.vertices()
        .iter()
        .position(|x| (x[0] - 0.5).abs() < 1e-14 && (x[1] - 0.5).abs() < 1e-14)
        .context("mesh has no vertex at (1/2, 1/2)")
}

/// Unbordered patch KKT solved by an SVD pseudo-inverse, which picks the
/// minimum-norm multiplier and leaves the flux untouched.
fn svd_patch_flux(space: &RtnSpace, prob: &hdivproj::local_solve::PatchProblem) -> Result<DVector<f64>> {
    let (m, b, f, g, _) = assemble_patch(space, prob);
    let (n, q) = (m.nrows(), b.nrows());
    let mut kkt = DMatrix::zeros(n + q, n + q);
    kkt.view_mut((0, 0), (n, n)).copy_from(&m);
    kkt.view_mut((n, 0), (q, n)).copy_from(&b);
    kkt.view_mut((0, n), (n, q)).copy_from(&b.transpose());
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(0, n).copy_from(&f);
    rhs.rows_mut(n, q).copy_from(&g);
    let x = kkt.svd(true, true).solve(&rhs, 1e-12).map_err(anyhow::Error::msg)?;
    Ok(x.rows(0, n).into_owned())
}

/// Patch problem of the center vertex of the `n = 2` mesh for the cubic field.
pub fn patch_kkt_oracle() -> Result<Check> {
    let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet)?);
    let a = center_vertex(&mesh)?;
    let field = AnalyticField::cubic();
    let policy = QuadPolicy::default();
    let mut worst = 0.0f64;
    for p in 0..=1 {
        let space = RtnSpace::new(mesh.clone(), p)?;
        let theta = compute_theta(&field, &space, &policy)?.value.theta;
        let (prob, _) = build_patch_problem(&space, a, &theta, &field, Variant::Def31, &policy)?;
        let lib = patch_equilibrate(&space, &prob)?;
        let want = svd_patch_flux(&space, &prob)?;
        let scale = want.amax().max(1e-300);
        let d = lib.dofs.iter().zip(want.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(d / scale);
    }
    Ok(Check::at_most("oracle: patch KKT", worst, 1e-10, "center vertex of n=2, cubic, p=0,1".into()))
}

/// The whole projector on `n = 2`, `p = 0`, cubic field, against element
/// KKT systems solved by full pivoted LU and patch systems solved by SVD, all
/// integrals at doubled quadrature degree.
pub fn end_to_end_oracle() -> Result<Check> {
    let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet)?);
    let space = RtnSpace::new(mesh.clone(), 0)?;
    let v = AnalyticField::cubic();
    let pol = QuadPolicy::default();
    let proj = project_hdiv(&v, &space, Variant::Def31, &pol)?;
    let got = projector_report(&v, &proj, &pol)?.proj_err;

    let fine = QuadPolicy::with_override(Some(2 * pol.degree(0, v.info())));
    let mut theta = BrokenRtnField::zeros(space.clone());
    for k in 0..mesh.num_elements() {
        let el = space.element(k);
        let (load, div, _) = element_moments(&v, &space, k, &fine)?;
        let (n, q) = (el.len(), div.len());
        let mut kkt = DMatrix::zeros(n + q, n + q);
        kkt.view_mut((0, 0), (n, n)).copy_from(&el.mass);
        kkt.view_mut((n, 0), (q, n)).copy_from(&el.div);
        kkt.view_mut((0, n), (n, q)).copy_from(&el.div.transpose());
        let rhs = DVector::from_iterator(n + q, load.iter().copied().chain(div.iter().map(|d| d * el.det())));
        let x = kkt.full_piv_lu().solve(&rhs).context("element KKT is singular")?;
        theta.dofs[k] = x.rows(0, n).iter().copied().collect();
    }
    let mut coeffs = vec![0.0; space.ndofs()];
    for a in 0..mesh.num_vertices() {
        let (prob, _) = build_patch_problem(&space, a, &theta, &v, Variant::Def31, &fine)?;
        let x = svd_patch_flux(&space, &prob)?;
        for (j, &gl) in prob.space.global.iter().enumerate() {
            coeffs[gl] += x[j];
        }
    }
    let sigma = ConformingRtnField::new(space.clone(), coeffs)?;
    let want = field_errors(&v, &sigma.to_broken(), &fine)?
        .value
        .iter()
        .map(|e| e[0] * e[0])
        .sum::<f64>()
        .sqrt();
    let coeff_diff = proj
        .sigma
        .coeffs()
        .iter()
        .zip(sigma.coeffs())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = sigma.coeffs().iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let rel = ((got - want).abs() / want).max(coeff_diff / scale);
    Ok(Check::at_most(
        "oracle: end-to-end projector",
        rel,
        1e-9,
        format!("n=2, p=0, cubic; ||v - Pv|| = {got:.12e}"),
    ))
}

/// Every oracle comparison.
pub fn all() -> Result<Vec<Check>> {
    Ok(vec![
        element_kkt_oracle()?,
        scalar_projection_oracle()?,
        face_projection_oracle()?,
        patch_kkt_oracle()?,
        end_to_end_oracle()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_moments() {
        assert!((ref_moment(0, 0) - 0.5).abs() < 1e-15);
        assert!((ref_moment(1, 0) - 1.0 / 6.0).abs() < 1e-15);
        assert!((ref_moment(2, 0) - 1.0 / 12.0).abs() < 1e-15);
        assert!((ref_moment(1, 1) - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn monomial_rtn_basis_has_the_right_size() {
        for p in 0..4 {
            assert_eq!(rtn_monomial_basis(p).len(), (p + 1) * (p + 3));
        }
    }

    #[test]
    fn every_oracle_agrees() {
        for c in all().unwrap() {
            assert!(c.passed, "{}", c.line());
        }
    }
}
