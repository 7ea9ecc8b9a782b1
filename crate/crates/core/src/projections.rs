//! L² projections onto broken `P_p`, onto `P_p(F)` on edges, and the
//! elementwise canonical RTN interpolant.
//!
//! Integrals of analytic data go through [`QuadPolicy`]. With
//! `self_check` enabled every elementwise result is recomputed at doubled
//! degree; a mismatch is reported as a [`QuadWarning`] and the primary value
//! is kept, so that all quantities of one run share one quadrature degree.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::basis::scalar_basis;
use crate::error::Result;
use crate::fields::{ElemPoint, FieldInfo, QuadPolicy, VectorField};
use crate::mesh::Mesh;
use crate::poly::legendre_unit;
use crate::quadrature::{LineRule, QuadRule, MAX_DEGREE};
use crate::space::{BrokenRtnField, RtnSpace, ScalarPwField};

/// Relative discrepancy between degree `d` and `2d` results that triggers a warning.
pub const SELF_CHECK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadWarning {
    pub elem: usize,
    pub quantity: String,
    pub degree: usize,
    pub discrepancy: f64,
}

/// A result together with the quadrature warnings raised while computing it.
#[derive(Debug, Clone)]
pub struct Checked<T> {
    pub value: T,
    pub warnings: Vec<QuadWarning>,
}

impl<T> Checked<T> {
    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Checked<U> {
        Checked {
            value: f(self.value),
            warnings: self.warnings,
        }
    }
}

/// Runs an elementwise quadrature computation with the rules chosen by
/// `policy`, plus the doubled-degree self-check for analytic data.
pub fn checked_element(
    policy: &QuadPolicy,
    info: &FieldInfo,
    mesh: &Mesh,
    k: usize,
    degree: usize,
    quantity: &str,
    compute: impl Fn(&QuadRule, [&LineRule; 3]) -> Vec<f64>,
) -> Result<(Vec<f64>, Option<QuadWarning>)> {
    let run = |d: usize| -> Result<Vec<f64>> {
        let rule = policy.element_rule(d, info, mesh, k)?;
        let lines: [Arc<LineRule>; 3] = std::array::from_fn(|e| policy.edge_rule(d, info, mesh, k, e));
        Ok(compute(&rule, [&lines[0], &lines[1], &lines[2]]))
    };
    let value = run(degree)?;
    if !policy.self_check || info.discrete_degree.is_some() {
        return Ok((value, None));
    }
    let fine = run((2 * degree).min(MAX_DEGREE))?;
    let scale = fine.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = value.iter().zip(&fine).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let warning = (diff > SELF_CHECK_TOL * scale && diff > 1e-13).then(|| QuadWarning {
        elem: k,
        quantity: quantity.into(),
        degree,
        discrepancy: diff / scale.max(f64::MIN_POSITIVE),
    });
    Ok((value, warning))
}

fn collect_checked(results: Vec<(Vec<f64>, Option<QuadWarning>)>) -> Checked<Vec<Vec<f64>>> {
    let mut warnings = Vec::new();
    let value = results
        .into_iter()
        .map(|(v, w)| {
            warnings.extend(w);
            v
        })
        .collect();
    Checked { value, warnings }
}

/// `Π^p_T f` for a scalar `f` evaluated at element points.
pub fn project_scalar(
    mesh: &Mesh,
    p: usize,
    info: &FieldInfo,
    policy: &QuadPolicy,
    f: &(dyn Fn(&ElemPoint) -> f64 + Sync),
) -> Result<Checked<ScalarPwField>> {
    let basis = scalar_basis(p);
    let degree = policy.degree(p, info);
    let results = (0..mesh.num_elements())
        .into_par_iter()
        .map(|k| {
            let g = mesh.geometry(k);
            checked_element(policy, info, mesh, k, degree, "scalar projection", |rule, _| {
                // (φ_i, φ_j)_K = det B δ_ij, so c_i = ∫_{K̂} f∘F φ̂_i
                let mut c = vec![0.0; basis.len()];
                for (xh, &w) in rule.points.iter().zip(&rule.weights) {
                    let fv = f(&ElemPoint {
                        elem: k,
                        xhat: *xh,
                        x: g.map(*xh),
                    });
                    for (ci, phi) in c.iter_mut().zip(basis.eval(*xh)) {
                        *ci += w * fv * phi;
                    }
                }
                c
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_checked(results).map(|coeffs| ScalarPwField { degree: p, coeffs }))
}

/// `Π^p_T(∇·v)`.
pub fn project_divergence(
    field: &dyn VectorField,
    p: usize,
    mesh: &Mesh,
    policy: &QuadPolicy,
) -> Result<Checked<ScalarPwField>> {
    project_scalar(mesh, p, field.info(), policy, &|pt| field.divergence(pt))
}

/// `Π^p_T` of a piecewise polynomial; exact because the scalar basis is hierarchical.
pub fn project_pw(f: &ScalarPwField, p: usize) -> ScalarPwField {
    if p <= f.degree {
        return f.truncate(p);
    }
    let n = crate::basis::dim_scalar(p);
    ScalarPwField {
        degree: p,
        coeffs: f
            .coeffs
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.resize(n, 0.0);
                c
            })
            .collect(),
    }
}

/// `Π^p_F g` on an edge of length `length` parametrized by `t ∈ [0, 1]`:
/// coefficients against the `L²(F)`-orthonormal Legendre basis `ℓ_k(t)/√|F|`.
pub fn project_face(g: impl Fn(f64) -> f64, p: usize, length: f64, line: &LineRule) -> Vec<f64> {
    let mut c = vec![0.0; p + 1];
    for (&t, &w) in line.points.iter().zip(&line.weights) {
        let gv = g(t);
        for (k, ck) in c.iter_mut().enumerate() {
            *ck += w * gv * legendre_unit(k, t);
        }
    }
    c.iter().map(|x| x * length.sqrt()).collect()
}

/// Value at parameter `t` of the edge polynomial with coefficients `c`.
pub fn eval_face(c: &[f64], length: f64, t: f64) -> f64 {
    c.iter()
        .enumerate()
        .map(|(k, ck)| ck * legendre_unit(k, t))
        .sum::<f64>()
        / length.sqrt()
}

/// `Π^p_F(v·n_F)` on global edge `edge`, parametrized from its lower to its
/// higher vertex index.
pub fn project_normal_trace(
    field: &dyn VectorField,
    mesh: &Mesh,
    edge: usize,
    p: usize,
    policy: &QuadPolicy,
) -> Vec<f64> {
    let ed = &mesh.edges()[edge];
    let (k, e) = ed.elements[0];
    let info = field.info();
    let line = policy.edge_rule(policy.degree(p, info), info, mesh, k, e);
    let g = mesh.geometry(k);
    let (a, b) = crate::basis::local_edge_vertices(e);
    let forward = mesh.element_signs(k)[e] > 0.0;
    let trace = |t: f64| {
        let xh = [
            (1.0 - t) * crate::basis::REF_VERTICES[a][0] + t * crate::basis::REF_VERTICES[b][0],
            (1.0 - t) * crate::basis::REF_VERTICES[a][1] + t * crate::basis::REF_VERTICES[b][1],
        ];
        let v = field.value(&ElemPoint {
            elem: k,
            xhat: xh,
            x: g.map(xh),
        });
        v[0] * ed.normal[0] + v[1] * ed.normal[1]
    };
    // the line rule lives in the local parameter; flip into the global one
    let c = project_face(trace, p, ed.length, &line);
    if forward {
        c
    } else {
        c.iter().enumerate().map(|(k, x)| if k % 2 == 1 { -x } else { *x }).collect()
    }
}

/// Elementwise canonical interpolant `I^p_T v` into the broken space.
pub fn canonical_interp(
    field: &dyn VectorField,
    space: &Arc<RtnSpace>,
    policy: &QuadPolicy,
) -> Result<Checked<BrokenRtnField>> {
    let mesh = space.mesh().clone();
    let info = field.info();
    let degree = policy.degree(space.degree(), info);
    let results = (0..mesh.num_elements())
        .into_par_iter()
        .map(|k| {
            let el = space.element(k);
            checked_element(policy, info, &mesh, k, degree, "canonical interpolant", |rule, lines| {
                el.interpolate_with(lines, rule, |xh| {
                    field.value(&ElemPoint {
                        elem: k,
                        xhat: xh,
                        x: el.geom.map(xh),
                    })
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_checked(results).map(|dofs| BrokenRtnField {
        space: space.clone(),
        dofs,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::AnalyticField;
    use crate::mesh::BoundaryRule;
    use crate::poly::reference_monomial_integral;
    use crate::quadrature::line_rule;

    fn poly_info() -> FieldInfo {
        FieldInfo {
            name: "poly".into(),
            regularity: f64::INFINITY,
            divergence_free: false,
            discrete_degree: None,
            singular_point: None,
        }
    }

    #[test]
    fn scalar_examples_on_reference() {
        let mesh = Mesh::reference_triangle();
        let pol = QuadPolicy::default();
        let mean = project_scalar(&mesh, 0, &poly_info(), &pol, &|pt| pt.x[0]).unwrap();
        assert!(mean.warnings.is_empty());
        assert!((mean.value.eval(0, [0.2, 0.2]) - 1.0 / 3.0).abs() < 1e-15);

        let f = project_scalar(&mesh, 0, &poly_info(), &pol, &|pt| 3.0 * pt.x[0] * pt.x[0]).unwrap();
        assert!((f.value.eval(0, [0.7, 0.1]) - 0.5).abs() < 1e-15);
        let norm_sq = 9.0 * reference_monomial_integral(4, 0);
        let misfit = norm_sq - f.value.l2_norm_sq_on(&mesh, 0);
        assert!((misfit - 0.175).abs() < 1e-14, "{misfit}");
    }

    #[test]
    fn scalar_reproduces_polynomials() {
        let mesh = Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap();
        let pol = QuadPolicy::default();
        for p in 0usize..5 {
            let f = |pt: &ElemPoint| {
                let [x, y] = pt.x;
                (1.0 + x - 2.0 * y).powi(p as i32) + x.powi((p / 2) as i32) * y.powi((p - p / 2) as i32)
            };
            let pf = project_scalar(&mesh, p, &poly_info(), &pol, &f).unwrap().value;
            for k in 0..mesh.num_elements() {
                let xh = [0.21, 0.33];
                let x = mesh.geometry(k).map(xh);
                let want = f(&ElemPoint { elem: k, xhat: xh, x });
                assert!((pf.eval(k, xh) - want).abs() < 1e-12);
            }
            let again = project_pw(&pf, p);
            assert_eq!(again, pf);
        }
    }

    #[test]
    fn face_examples() {
        let line = line_rule(8);
        let c = project_face(|t| t, 0, 1.0, &line);
        assert!((eval_face(&c, 1.0, 0.9) - 0.5).abs() < 1e-15);

        // cubic field (x³, y³) on the hypotenuse x = 1 - t, y = t with n = (1,1)/√2
        let len = 2f64.sqrt();
        let g = |t: f64| ((1.0 - t).powi(3) + t.powi(3)) / 2f64.sqrt();
        let c = project_face(g, 1, len, &line);
        // oracle: monomial coefficients of g from exact interpolation at four
        // points, then the 2x2 normal equations with exact integrals ∫ tⁱ = 1/(i+1)
        let ts = [0.0f64, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        let v = nalgebra::DMatrix::from_fn(4, 4, |i, j| ts[i].powi(j as i32));
        let a = v.lu().solve(&nalgebra::DVector::from_fn(4, |i, _| g(ts[i]))).unwrap();
        let gram = nalgebra::Matrix2::new(len, len / 2.0, len / 2.0, len / 3.0);
        let rhs = nalgebra::Vector2::from_fn(|i, _| {
            (0..4).map(|j| len * a[j] / (i + j + 1) as f64).sum::<f64>()
        });
        let m = gram.lu().solve(&rhs).unwrap();
        for t in [0.0, 0.3, 1.0] {
            let want = m[0] + m[1] * t;
            assert!((eval_face(&c, len, t) - want).abs() < 1e-12);
        }
    }

    fn flux(field: &BrokenRtnField, k: usize, e: usize) -> f64 {
        let el = field.space.element(k);
        let (n, len) = el.outward_normal(e);
        line_rule(6).integrate(|t| {
            let v = field.eval(k, crate::basis::ref_edge_point(e, t));
            len * (v[0] * n[0] + v[1] * n[1])
        })
    }

    #[test]
    fn interp_example_x_squared() {
        let mesh = Arc::new(Mesh::reference_triangle());
        let space = RtnSpace::new(mesh.clone(), 0).unwrap();
        let v = AnalyticField::new(poly_info(), |x| [x[0] * x[0], 0.0], |x| 2.0 * x[0]);
        let iv = canonical_interp(&v, &space, &QuadPolicy::default()).unwrap().value;
        // local edge 0 is the hypotenuse, 1 is {x = 0}, 2 is {y = 0}
        let fluxes = [flux(&iv, 0, 2), flux(&iv, 0, 0), flux(&iv, 0, 1)];
        for (f, want) in fluxes.iter().zip([0.0, 1.0 / 3.0, 0.0]) {
            assert!((f - want).abs() < 1e-14, "{fluxes:?}");
        }
    }

    #[test]
    fn interp_commutes_with_divergence() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap());
        let pol = QuadPolicy::default();
        for p in 0..4 {
            let d = p as i32 + 3;
            let v = AnalyticField::new(
                poly_info(),
                move |x| [x[0].powi(d) + x[1], x[0] * x[1].powi(d - 1)],
                move |x| d as f64 * x[0].powi(d - 1) + x[0] * (d - 1) as f64 * x[1].powi(d - 2),
            );
            let space = RtnSpace::new(mesh.clone(), p).unwrap();
            let iv = canonical_interp(&v, &space, &pol).unwrap().value;
            let lhs = iv.divergence_field();
            let rhs = project_divergence(&v, p, &mesh, &pol).unwrap().value;
            let res = lhs.sub(&rhs).l2_norm(&mesh) / rhs.l2_norm(&mesh);
            assert!(res < 1e-11, "p={p}: {res:e}");
        }
    }

    #[test]
    fn interp_reproduces_rtn() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap());
        for p in 0..4 {
            let space = RtnSpace::new(mesh.clone(), p).unwrap();
            let v = crate::space::random_conforming(space.clone(), 11);
            let iv = canonical_interp(&v, &space, &QuadPolicy::default()).unwrap();
            assert!(iv.warnings.is_empty());
            let want = v.to_broken();
            for (a, b) in iv.value.dofs.iter().zip(&want.dofs) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn interp_edge_trace_is_face_projection() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap());
        let v = AnalyticField::exponential();
        let pol = QuadPolicy::default();
        for p in 0..3 {
            let space = RtnSpace::new(mesh.clone(), p).unwrap();
            let iv = canonical_interp(&v, &space, &pol).unwrap().value;
            for (ei, ed) in mesh.edges().iter().enumerate() {
                let c = project_normal_trace(&v, &mesh, ei, p, &pol);
                let (k, e) = ed.elements[0];
                let (pa, pb) = (mesh.vertices()[ed.vertices[0]], mesh.vertices()[ed.vertices[1]]);
                for t in [0.1, 0.5, 0.8] {
                    let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
                    let w = iv.eval(k, mesh.geometry(k).inverse_map(x));
                    let wn = w[0] * ed.normal[0] + w[1] * ed.normal[1];
                    assert!((wn - eval_face(&c, ed.length, t)).abs() < 1e-11, "edge {ei} local {e}");
                }
            }
        }
    }

    #[test]
    fn self_check_flags_underintegration() {
        let mesh = Mesh::reference_triangle();
        let mut info = poly_info();
        info.name = "wiggly".into();
        let pol = QuadPolicy {
            degree_override: Some(2),
            ..Default::default()
        };
        let f = project_scalar(&mesh, 0, &info, &pol, &|pt| (30.0 * pt.x[0]).sin()).unwrap();
        assert_eq!(f.warnings.len(), 1);
        let ok = project_scalar(&mesh, 0, &info, &QuadPolicy::default(), &|pt| pt.x[0]).unwrap();
        assert!(ok.warnings.is_empty());
    }
}
