//! The locally defined commuting projector onto `RTN_p ∩ H_{Γ_N}(div)`.
//!
//! `P(v) = Σ_a s_a`, where `s_a` equilibrates `ψ_a`-weighted data of the
//! elementwise constrained minimizer `θ` on the patch of vertex `a`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::best_approx::{field_errors, local_errors, ElementErrors};
use crate::error::{Error, Result};
use crate::fields::{ElemPoint, QuadPolicy, VectorField};
use crate::local_solve::{build_patch_problem, compute_theta, patch_equilibrate, ElementData, PatchSolution, Variant};
use crate::mesh::{BoundaryLabel, Mesh};
use crate::projections::{project_divergence, QuadWarning};
use crate::space::{ConformingRtnField, RtnSpace, ScalarPwField};

#[derive(Debug, Clone)]
pub struct Projection {
    pub variant: Variant,
    pub sigma: ConformingRtnField,
    pub theta: ElementData,
    /// Patch solutions in ascending vertex order.
    pub patches: Vec<PatchSolution>,
    /// `Π^p(∇·v)`.
    pub div_proj: ScalarPwField,
    /// `‖∇·P(v) − Π^p ∇·v‖`.
    pub commute_abs: f64,
    /// `commute_abs / ‖Π^p ∇·v‖`, or `commute_abs` when that norm is below `1e-12`.
    pub commute_rel: f64,
    pub warnings: Vec<QuadWarning>,
}

impl Projection {
    pub fn max_compat_residual(&self) -> f64 {
        self.patches.iter().map(|s| s.compat_residual).fold(0.0, f64::max)
    }

    pub fn max_patch_div_error(&self) -> f64 {
        self.patches.iter().map(|s| s.div_error).fold(0.0, f64::max)
    }

    pub fn max_patch_residual(&self) -> f64 {
        self.patches.iter().map(|s| s.kkt_residual).fold(0.0, f64::max)
    }

    /// Largest measured patch stability ratio (see [`PatchSolution::stability`]).
    pub fn max_patch_stability(&self) -> f64 {
        self.patches.iter().map(|s| s.stability()).filter(|s| s.is_finite()).fold(0.0, f64::max)
    }
}

/// Rejects fields with a nonzero normal trace on `Γ_N`: they are not in the
/// domain of the projector.
pub fn check_neumann_trace(field: &dyn VectorField, mesh: &Mesh, policy: &QuadPolicy) -> Result<()> {
    let info = field.info();
    let mut max_n = 0.0f64;
    let mut max_v = 0.0f64;
    for ed in mesh.edges().iter().filter(|e| e.label == Some(BoundaryLabel::Neumann)) {
        let (k, e) = ed.elements[0];
        let line = policy.edge_rule(policy.degree(0, info), info, mesh, k, e);
        let g = mesh.geometry(k);
        for &t in &line.points {
            let xh = crate::basis::ref_edge_point(e, t);
            let v = field.value(&ElemPoint { elem: k, xhat: xh, x: g.map(xh) });
            max_n = max_n.max((v[0] * ed.normal[0] + v[1] * ed.normal[1]).abs());
            max_v = max_v.max(v[0].hypot(v[1]));
        }
    }
    if max_n > 1e-9 * max_v && max_n > 1e-12 {
        return Err(Error::Incompatible(format!(
            "field `{}` has normal trace up to {max_n:e} on the Neumann boundary",
            info.name
        )));
    }
    Ok(())
}

/// `P^p_T(v)` for the chosen variant on the space of `space`.
pub fn project_hdiv(
    field: &dyn VectorField,
    space: &Arc<RtnSpace>,
    variant: Variant,
    policy: &QuadPolicy,
) -> Result<Projection> {
    let p = space.degree();
    let mesh = space.mesh().clone();
    let q = variant.theta_degree(p)?;
    check_neumann_trace(field, &mesh, policy)?;
    let theta_space = if q == p { space.clone() } else { RtnSpace::new(mesh.clone(), q)? };
    let theta = compute_theta(field, &theta_space, policy)?;
    let mut warnings = theta.warnings;
    let theta = theta.value;
    let solved = (0..mesh.num_vertices())
        .into_par_iter()
        .map(|a| {
            let (prob, w) = build_patch_problem(space, a, &theta.theta, field, variant, policy)?;
            Ok((patch_equilibrate(space, &prob)?, w))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut coeffs = vec![0.0; space.ndofs()];
    let mut patches = Vec::with_capacity(solved.len());
    for (sol, w) in solved {
        for (x, &g) in sol.dofs.iter().zip(&sol.global) {
            coeffs[g] += x;
        }
        warnings.extend(w);
        patches.push(sol);
    }
    let sigma = ConformingRtnField::new(space.clone(), coeffs)?.with_name(&format!("P({})", field.info().name));
    let div_proj = if q == p {
        ScalarPwField { degree: p, coeffs: theta.div_coeffs.clone() }
    } else {
        let d = project_divergence(field, p, &mesh, policy)?;
        warnings.extend(d.warnings);
        d.value
    };
    let commute_abs = sigma.divergence_field().sub(&div_proj).l2_norm(&mesh);
    let norm = div_proj.l2_norm(&mesh);
    let commute_rel = if norm > 1e-12 { commute_abs / norm } else { commute_abs };
    Ok(Projection {
        variant,
        sigma,
        theta,
        patches,
        div_proj,
        commute_abs,
        commute_rel,
        warnings,
    })
}

/// Both sides of the local approximation and stability bounds on one element,
/// all squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElementRecord {
    pub elem: usize,
    /// `‖v − P v‖_K`.
    pub err_l2: f64,
    /// `(h_K/(p+1)) ‖∇·(v − P v)‖_K`.
    pub err_div: f64,
    /// `‖v − P v‖²_K + (h_K/(p+1))² ‖∇·(v − P v)‖²_K`.
    pub approx_lhs: f64,
    /// `Σ_{K' ∈ T_K} E_loc,K'²`.
    pub approx_rhs: f64,
    /// `‖P v‖²_K`.
    pub stab_lhs: f64,
    /// `Σ_{K' ∈ T_K} ‖v‖²_{K'} + (h_K'/(p+1))² ‖∇·v − Π^p ∇·v‖²_{K'}`.
    pub stab_rhs: f64,
    /// `‖P v‖²_K + h_Ω² ‖∇·P v‖²_K`.
    pub hdiv_lhs: f64,
    /// `Σ_{K' ∈ T_K} ‖v‖²_{K'} + h_Ω² ‖∇·v‖²_{K'}`.
    pub hdiv_rhs: f64,
}

fn quotient(lhs: f64, rhs: f64) -> f64 {
    if lhs <= 1e-24 {
        0.0
    } else {
        lhs / rhs
    }
}

impl ElementRecord {
    pub fn approx_const(&self) -> f64 {
        quotient(self.approx_lhs, self.approx_rhs)
    }

    pub fn stab_const(&self) -> f64 {
        quotient(self.stab_lhs, self.stab_rhs)
    }

    pub fn hdiv_const(&self) -> f64 {
        quotient(self.hdiv_lhs, self.hdiv_rhs)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectorReport {
    pub p: usize,
    pub variant: Variant,
    pub records: Vec<ElementRecord>,
    pub max_approx_const: f64,
    pub max_stab_const: f64,
    pub max_hdiv_const: f64,
    /// `‖P v‖² / (‖v‖² + Σ_K (h_K/(p+1))² ‖∇·v − Π^p ∇·v‖²_K)`.
    pub global_stab_const: f64,
    /// `‖v − P v‖`.
    pub proj_err: f64,
    pub warnings: Vec<QuadWarning>,
}

/// Elementwise measurement of the approximation and stability bounds of `proj`.
pub fn projector_report(field: &dyn VectorField, proj: &Projection, policy: &QuadPolicy) -> Result<ProjectorReport> {
    let space = proj.sigma.space().clone();
    let mesh = space.mesh().clone();
    let p = space.degree();
    let p1 = (p + 1) as f64;
    let local = local_errors(field, &space, policy)?;
    let errs = field_errors(field, &proj.sigma.to_broken(), policy)?;
    let mut warnings = local.warnings;
    warnings.extend(errs.warnings);
    let loc: &[ElementErrors] = &local.value;
    let h_omega = mesh.domain_diameter();
    let div_p = proj.sigma.divergence_field();
    let records: Vec<ElementRecord> = (0..mesh.num_elements())
        .map(|k| {
            let mut neighbours: Vec<usize> = mesh.triangles()[k]
                .iter()
                .flat_map(|&a| mesh.patch(a).elements.iter().copied())
                .collect();
            neighbours.sort_unstable();
            neighbours.dedup();
            let sum = |f: &dyn Fn(&ElementErrors) -> f64| neighbours.iter().map(|&j| f(&loc[j])).sum::<f64>();
            let [e_l2, e_div, w_norm] = errs.value[k];
            let err_div = mesh.h(k) / p1 * e_div;
            let div_sq = div_p.l2_norm_sq_on(&mesh, k);
            ElementRecord {
                elem: k,
                err_l2: e_l2,
                err_div,
                approx_lhs: e_l2 * e_l2 + err_div * err_div,
                approx_rhs: sum(&|e| e.e_loc().powi(2)),
                stab_lhs: w_norm * w_norm,
                stab_rhs: sum(&|e| e.v_norm.powi(2) + e.div_part().powi(2)),
                hdiv_lhs: w_norm * w_norm + h_omega * h_omega * div_sq,
                hdiv_rhs: sum(&|e| e.v_norm.powi(2) + (h_omega * e.div_norm).powi(2)),
            }
        })
        .collect();
    let max = |f: fn(&ElementRecord) -> f64| records.iter().map(f).fold(0.0, f64::max);
    let pv: f64 = records.iter().map(|r| r.stab_lhs).sum();
    let rhs: f64 = loc.iter().map(|e| e.v_norm.powi(2) + e.div_part().powi(2)).sum();
    Ok(ProjectorReport {
        p,
        variant: proj.variant,
        max_approx_const: max(ElementRecord::approx_const),
        max_stab_const: max(ElementRecord::stab_const),
        max_hdiv_const: max(ElementRecord::hdiv_const),
        global_stab_const: quotient(pv, rhs),
        proj_err: records.iter().map(|r| r.err_l2 * r.err_l2).sum::<f64>().sqrt(),
        records,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticField, FieldInfo};
    use crate::local_solve::assemble_patch;
    use crate::mesh::{BoundaryRule, ElementGeometry, Side};
    use crate::space::random_conforming;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn reproduces_discrete_fields() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::NeumannSides(vec![Side::Right])).unwrap());
        for p in 0..4 {
            let space = RtnSpace::new(mesh.clone(), p).unwrap();
            let v = random_conforming(space.clone(), 21);
            for variant in [Variant::Def31, Variant::Def52] {
                if variant == Variant::Def52 && p == 0 {
                    continue;
                }
                let proj = project_hdiv(&v, &space, variant, &QuadPolicy::default()).unwrap();
                assert!(proj.commute_rel < 1e-10, "p={p} {variant}");
                if variant == Variant::Def52 {
                    // theta only sees RTN_{p-1}, so the reduced map does not reproduce RTN_p
                    continue;
                }
                let scale = v.coeffs().iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for (a, b) in proj.sigma.coeffs().iter().zip(v.coeffs()) {
                    assert!((a - b).abs() < 1e-10 * scale, "p={p} {variant}");
                }
                let rep = projector_report(&v, &proj, &QuadPolicy::default()).unwrap();
                assert!(rep.records.iter().all(|r| r.approx_lhs < 1e-20));
            }
        }
    }

    #[test]
    fn commutes_for_catalog_fields() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap());
        for p in 0..3 {
            let space = RtnSpace::new(mesh.clone(), p).unwrap();
            for f in [AnalyticField::cubic(), AnalyticField::exponential(), AnalyticField::sine_divfree()] {
                let proj = project_hdiv(&f, &space, Variant::Def31, &QuadPolicy::default()).unwrap();
                assert!(proj.commute_rel < 1e-10, "{} p={p}: {:e}", f.info().name, proj.commute_rel);
                let (jump, _) = proj.sigma.to_broken().normal_trace_defects();
                assert!(jump < 1e-11);
            }
        }
    }

    #[test]
    fn rejects_fields_with_neumann_flux() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::NeumannSides(vec![Side::Bottom])).unwrap());
        let space = RtnSpace::new(mesh, 1).unwrap();
        let err = project_hdiv(&AnalyticField::sine_divfree(), &space, Variant::Def31, &QuadPolicy::default());
        assert!(matches!(err, Err(Error::Incompatible(_))));
    }

    #[test]
    fn linear_in_the_field() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap());
        let space = RtnSpace::new(mesh, 1).unwrap();
        let (u, w) = (AnalyticField::cubic(), AnalyticField::exponential());
        let pol = QuadPolicy::default();
        let pu = project_hdiv(&u, &space, Variant::Def31, &pol).unwrap();
        let pw = project_hdiv(&w, &space, Variant::Def31, &pol).unwrap();
        let comb = AnalyticField::combine(2.0, &u, -0.5, &w);
        let pc = project_hdiv(&comb, &space, Variant::Def31, &pol).unwrap();
        for ((c, a), b) in pc.sigma.coeffs().iter().zip(pu.sigma.coeffs()).zip(pw.sigma.coeffs()) {
            assert!((c - (2.0 * a - 0.5 * b)).abs() < 1e-10);
        }
    }

    /// `base` plus a bubble-weighted constant vector on one element.
    struct Bumped {
        base: AnalyticField,
        elem: usize,
        grads: [[f64; 2]; 3],
    }

    impl VectorField for Bumped {
        fn info(&self) -> &FieldInfo {
            self.base.info()
        }

        fn value(&self, pt: &ElemPoint) -> [f64; 2] {
            let mut v = self.base.value(pt);
            if pt.elem == self.elem {
                let l = ElementGeometry::barycentric(pt.xhat);
                let b = 27.0 * l[0] * l[1] * l[2];
                v[0] += b;
                v[1] += 2.0 * b;
            }
            v
        }

        fn divergence(&self, pt: &ElemPoint) -> f64 {
            let mut d = self.base.divergence(pt);
            if pt.elem == self.elem {
                let l = ElementGeometry::barycentric(pt.xhat);
                let g = &self.grads;
                let gb: [f64; 2] = std::array::from_fn(|c| {
                    27.0 * (g[0][c] * l[1] * l[2] + l[0] * g[1][c] * l[2] + l[0] * l[1] * g[2][c])
                });
                d += gb[0] + 2.0 * gb[1];
            }
            d
        }
    }

    #[test]
    fn local_perturbations_stay_local() {
        let mesh = Arc::new(Mesh::unit_square(4, &BoundaryRule::AllDirichlet).unwrap());
        let space = RtnSpace::new(mesh.clone(), 1).unwrap();
        let pol = QuadPolicy::default();
        let base = AnalyticField::cubic();
        let elem = 13;
        let bumped = Bumped {
            base: base.clone(),
            elem,
            grads: mesh.geometry(elem).barycentric_gradients(),
        };
        let p0 = project_hdiv(&base, &space, Variant::Def31, &pol).unwrap().sigma;
        let p1 = project_hdiv(&bumped, &space, Variant::Def31, &pol).unwrap().sigma;
        let near: Vec<usize> = mesh.triangles()[elem]
            .iter()
            .flat_map(|&a| mesh.patch(a).elements.clone())
            .collect();
        let mut changed = false;
        for k in 0..mesh.num_elements() {
            let diff = p0
                .local_dofs(k)
                .iter()
                .zip(p1.local_dofs(k))
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if near.contains(&k) {
                changed |= diff > 1e-6;
            } else {
                assert!(diff <= 1e-12, "element {k} changed by {diff:e}");
            }
        }
        assert!(changed);
    }

    #[test]
    fn end_to_end_matches_dense_oracle() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap());
        let space = RtnSpace::new(mesh.clone(), 0).unwrap();
        let v = AnalyticField::cubic();
        let pol = QuadPolicy::default();
        let proj = project_hdiv(&v, &space, Variant::Def31, &pol).unwrap();
        let got = projector_report(&v, &proj, &pol).unwrap().proj_err;

        // oracle: doubled quadrature degree, element and patch KKT systems
        // solved through full pivoted LU / SVD without any bordering
        let fine = QuadPolicy::with_override(Some(2 * pol.degree(0, v.info())));
        let mut theta = crate::space::BrokenRtnField::zeros(space.clone());
        for k in 0..mesh.num_elements() {
            let el = space.element(k);
            let (load, div, _) = crate::local_solve::element_moments(&v, &space, k, &fine).unwrap();
            let (n, q) = (el.len(), div.len());
            let mut kkt = DMatrix::zeros(n + q, n + q);
            kkt.view_mut((0, 0), (n, n)).copy_from(&el.mass);
            kkt.view_mut((n, 0), (q, n)).copy_from(&el.div);
            kkt.view_mut((0, n), (n, q)).copy_from(&el.div.transpose());
            let rhs = DVector::from_iterator(n + q, load.iter().copied().chain(div.iter().map(|d| d * el.det())));
            let x = kkt.full_piv_lu().solve(&rhs).unwrap();
            theta.dofs[k] = x.rows(0, n).iter().copied().collect();
        }
        let mut coeffs = vec![0.0; space.ndofs()];
        for a in 0..mesh.num_vertices() {
            let (prob, _) = build_patch_problem(&space, a, &theta, &v, Variant::Def31, &fine).unwrap();
            // closed patches leave the multiplier defined up to a constant;
            // the minimum-norm least-squares solution handles that
            let (m, b, f, g, _) = assemble_patch(&space, &prob);
            let (n, q) = (m.nrows(), b.nrows());
            let mut kkt = DMatrix::zeros(n + q, n + q);
            kkt.view_mut((0, 0), (n, n)).copy_from(&m);
            kkt.view_mut((n, 0), (q, n)).copy_from(&b);
            kkt.view_mut((0, n), (n, q)).copy_from(&b.transpose());
            let mut rhs = DVector::zeros(n + q);
            rhs.rows_mut(0, n).copy_from(&f);
            rhs.rows_mut(n, q).copy_from(&g);
            let x = kkt.svd(true, true).solve(&rhs, 1e-12).unwrap();
            for (j, &gl) in prob.space.global.iter().enumerate() {
                coeffs[gl] += x[j];
            }
        }
        let sigma = ConformingRtnField::new(space.clone(), coeffs).unwrap();
        let fine_err = field_errors(&v, &sigma.to_broken(), &fine).unwrap().value;
        let want = fine_err.iter().map(|e| e[0] * e[0]).sum::<f64>().sqrt();
        assert!((got - want).abs() < 1e-9 * want, "{got} vs {want}");
    }
}
