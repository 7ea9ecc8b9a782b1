//! Individual checks shared by `verify` and the acceptance tests. Each one
//! measures a single quantity and compares it against a bound.

use std::fmt;
use std::sync::Arc;

use anyhow::Result;
use hdivproj::best_approx::{constrained_sweep, error_report, field_errors, global_best, ErrorReport};
use hdivproj::fields::{AnalyticField, FieldSpec, QuadPolicy};
use hdivproj::local_solve::{compute_theta, weak_divergence_residual, Variant};
use hdivproj::mesh::{BoundaryRule, Mesh, Side, VertexClass};
use hdivproj::model_problems::{
    apriori_entry, coercivity_witness, galerkin_orthogonality, solve_ls_mixed, solve_mixed, PoissonProblem,
    COERCIVITY_CONSTANT, LS_APRIORI_CONSTANT,
};
use hdivproj::projector::{project_hdiv, projector_report};
use hdivproj::space::{random_conforming, RtnSpace};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::StudyConfig;
use crate::rates::{fit_rate, FitMode};
use crate::study::{csv_string, resolve_field, run_study};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Gating checks decide the exit code of `verify`; the rest are recorded
    /// measurements.
    pub gating: bool,
    pub measured: f64,
    pub bound: f64,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: &str, measured: f64, bound: f64, detail: String) -> Self {
        Check {
            name: name.into(),
            passed: measured <= bound,
            gating: true,
            measured,
            bound,
            detail,
        }
    }

    pub fn at_least(name: &str, measured: f64, bound: f64, detail: String) -> Self {
        Check {
            passed: measured >= bound && measured.is_finite(),
            ..Check::at_most(name, measured, bound, detail)
        }
    }

    /// Marks the check as a measurement that does not gate the exit code.
    pub fn recorded(mut self) -> Self {
        self.gating = false;
        self
    }

    pub fn line(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match (self.passed, self.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "NOTE",
        };
        write!(
            f,
            "{status} {}: measured {:.6e}, bound {:.6e}",
            self.name, self.measured, self.bound
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

fn square(n: usize, rule: &BoundaryRule) -> Result<Arc<Mesh>> {
    Ok(Arc::new(Mesh::unit_square(n, rule)?))
}

/// The catalog: analytic fields on their natural domain plus one random
/// discrete field of degree 2.
pub fn catalog(seed: u64) -> Vec<FieldSpec> {
    vec![
        FieldSpec::SineDivfree,
        FieldSpec::Cubic,
        FieldSpec::Exponential,
        FieldSpec::LShapeSingular(2.0 / 3.0),
        FieldSpec::RandomRtn { degree: 2, seed },
    ]
}

/// The L-shape for the singular field, the unit square otherwise.
pub fn natural_mesh(spec: &FieldSpec, n: usize) -> Result<Arc<Mesh>> {
    Ok(match spec {
        FieldSpec::LShapeSingular(_) => Arc::new(Mesh::lshape(n, &BoundaryRule::AllDirichlet)?),
        _ => square(n, &BoundaryRule::AllDirichlet)?,
    })
}

fn hierarchy(base: Arc<Mesh>, levels: usize) -> Vec<Arc<Mesh>> {
    let mut out = vec![base];
    while out.len() < levels {
        let next = out.last().expect("non-empty").refine_uniform();
        out.push(Arc::new(next));
    }
    out
}

fn spread(values: &[f64]) -> f64 {
    let (lo, hi) = values.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if values.is_empty() {
        1.0
    } else {
        hi / lo
    }
}

fn list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
}

/// `‖∇·P(v) − Π^p ∇·v‖ / max(‖Π^p ∇·v‖, ε)` over the catalog, both variants.
pub fn commuting(sizes: &[usize], degrees: &[usize], seed: u64) -> Result<Check> {
    let mut cases = Vec::new();
    for &n in sizes {
        for spec in catalog(seed) {
            for &p in degrees {
                cases.push((spec.clone(), n, p, Variant::Def31));
                if p >= 1 {
                    cases.push((spec.clone(), n, p, Variant::Def52));
                }
            }
        }
    }
    let results = cases
        .par_iter()
        .map(|(spec, n, p, variant)| -> Result<f64> {
            let space = RtnSpace::new(natural_mesh(spec, *n)?, *p)?;
            let v = resolve_field(spec, &space)?;
            Ok(project_hdiv(&*v, &space, *variant, &QuadPolicy::default())?.commute_rel)
        })
        .collect::<Result<Vec<_>>>()?;
    let (worst, at) = results
        .iter()
        .zip(&cases)
        .fold((0.0, None), |(m, at), (r, c)| if *r >= m { (*r, Some(c)) } else { (m, at) });
    let detail = match at {
        Some((spec, n, p, variant)) => format!("{} cases; worst {spec}, n={n}, p={p}, {variant}", cases.len()),
        None => String::new(),
    };
    Ok(Check::at_most("commuting property", worst, 1e-10, detail))
}

/// Relative coefficient change of `P(v_h)` against `v_h` for seeded random
/// conforming fields on a mesh with Neumann sides.
pub fn projection(n: usize, degrees: &[usize], samples: usize, seed: u64) -> Result<Check> {
    let mesh = square(n, &BoundaryRule::NeumannSides(vec![Side::Right, Side::Top]))?;
    let cases: Vec<(usize, u64)> = degrees
        .iter()
        .flat_map(|&p| (0..samples as u64).map(move |s| (p, seed.wrapping_add(s))))
        .collect();
    let worst = cases
        .par_iter()
        .map(|&(p, s)| -> Result<f64> {
            let space = RtnSpace::new(mesh.clone(), p)?;
            let v = random_conforming(space.clone(), s);
            let pv = project_hdiv(&v, &space, Variant::Def31, &QuadPolicy::default())?;
            let scale = v.coeffs().iter().fold(0.0f64, |m, c| m.max(c.abs()));
            let diff = v
                .coeffs()
                .iter()
                .zip(pv.sigma.coeffs())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            Ok(diff / scale)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(Check::at_most(
        "projection property",
        worst,
        1e-10,
        format!("{} samples on n={n} with Neumann sides", cases.len()),
    ))
}

fn reports(spec: &FieldSpec, meshes: &[Arc<Mesh>], degrees: &[usize], reduced: bool) -> Result<Vec<ErrorReport>> {
    let cases: Vec<(usize, usize)> = degrees
        .iter()
        .flat_map(|&p| (0..meshes.len()).map(move |l| (p, l)))
        .collect();
    cases
        .par_iter()
        .map(|&(p, l)| -> Result<ErrorReport> {
            let space = RtnSpace::new(meshes[l].clone(), p)?;
            let v = resolve_field(spec, &space)?;
            Ok(error_report(&*v, &space, &QuadPolicy::default(), reduced)?)
        })
        .collect()
}

/// Ordering `E_glob² ≥ Σ E_loc²` and the spread of `C = E_glob²/Σ E_loc²`
/// across `levels` uniform refinements of `base_n`, per field and degree.
pub fn equivalence(fields: &[FieldSpec], base_n: usize, levels: usize, degrees: &[usize]) -> Result<Vec<Check>> {
    let mut min_ratio = f64::INFINITY;
    let mut max_spread = 0.0f64;
    let mut detail = Vec::new();
    for spec in fields {
        let meshes = hierarchy(natural_mesh(spec, base_n)?, levels);
        let reps = reports(spec, &meshes, degrees, false)?;
        for &p in degrees {
            let c: Vec<f64> = reps
                .iter()
                .filter(|r| r.p == p)
                .filter_map(|r| r.ratio_glob_over_loc)
                .collect();
            if c.is_empty() {
                continue;
            }
            min_ratio = min_ratio.min(c.iter().copied().fold(f64::INFINITY, f64::min));
            let s = spread(&c);
            max_spread = max_spread.max(if c.iter().all(|x| x.is_finite()) { s } else { f64::INFINITY });
            detail.push(format!("{spec} p={p}: [{}]", list(&c)));
        }
    }
    Ok(vec![
        Check::at_least(
            "equivalence ordering",
            min_ratio,
            1.0 - 1e-9,
            "smallest E_glob^2 / sum E_loc^2".into(),
        ),
        Check::at_most(
            "equivalence constant spread",
            max_spread,
            2.0,
            format!("max/min of C across levels; {}", detail.join("; ")),
        ),
    ])
}

fn slope_check(name: &str, spec: &FieldSpec, base_n: usize, levels: usize, degrees: &[usize], expected: impl Fn(usize) -> f64, tol: f64) -> Result<Check> {
    let meshes = hierarchy(natural_mesh(spec, base_n)?, levels);
    let reps = reports(spec, &meshes, degrees, false)?;
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for &p in degrees {
        let mine: Vec<&ErrorReport> = reps.iter().filter(|r| r.p == p).collect();
        let last = &mine[mine.len().saturating_sub(3)..];
        let e: Vec<f64> = last.iter().map(|r| r.eglob).collect();
        let h: Vec<f64> = last.iter().map(|r| r.h_max).collect();
        let slope = fit_rate(&e, &h, FitMode::HSlope)?.slope;
        worst = worst.max((slope - expected(p)).abs());
        detail.push(format!("p={p}: slope {slope:.4} (expected {:.4})", expected(p)));
    }
    Ok(Check::at_most(name, worst, tol, detail.join(", ")))
}

/// h-slopes of `E_glob` over the last three of `levels` refinements: `p + 1`
/// for the smooth field, `2/3` for the singular one.
pub fn hp_rates(base_n: usize, levels: usize) -> Result<Vec<Check>> {
    Ok(vec![
        slope_check("h-rate, smooth field", &FieldSpec::SineDivfree, base_n, levels, &[0, 1, 2], |p| (p + 1) as f64, 0.1)?,
        slope_check(
            "h-rate, singular field",
            &FieldSpec::LShapeSingular(2.0 / 3.0),
            base_n,
            levels,
            &[1, 2],
            |_| 2.0 / 3.0,
            0.15,
        )?,
    ])
}

/// The weighted divergence part of `E_glob` for divergence-free fields.
pub fn divergence_switch(sizes: &[usize], degrees: &[usize]) -> Result<Check> {
    let mut worst = 0.0f64;
    for spec in [FieldSpec::SineDivfree, FieldSpec::LShapeSingular(2.0 / 3.0)] {
        let meshes = sizes.iter().map(|&n| natural_mesh(&spec, n)).collect::<Result<Vec<_>>>()?;
        for r in reports(&spec, &meshes, degrees, false)? {
            worst = worst.max(r.div_part).max(r.div_part_measured);
        }
    }
    Ok(Check::at_most(
        "divergence part vanishes for divergence-free fields",
        worst,
        1e-12,
        "sine_divfree and lshape_singular".into(),
    ))
}

/// Spread over `p` of `C' = E_glob(p)² / Σ E_loc(p−1)²` on `sine_divfree`.
pub fn degree_robust(n: usize, degrees: &[usize]) -> Result<Check> {
    let spec = FieldSpec::SineDivfree;
    let reps = reports(&spec, &[natural_mesh(&spec, n)?], degrees, true)?;
    let c: Vec<f64> = reps.iter().filter_map(|r| r.ratio_reduced).collect();
    Ok(Check::at_most(
        "degree-robust ratio spread",
        spread(&c),
        2.0,
        format!("n={n}, C' for p={degrees:?}: [{}]", list(&c)),
    ))
}

/// `|(∇·v, ψ_a) + (θ, ∇ψ_a)|` relative to its scale at interior vertices.
pub fn weak_divergence(n: usize, degrees: &[usize]) -> Result<Check> {
    let mesh = square(n, &BoundaryRule::AllDirichlet)?;
    let v = AnalyticField::cubic();
    let policy = QuadPolicy::default();
    let mut worst = 0.0f64;
    let mut count = 0;
    for &p in degrees {
        let space = RtnSpace::new(mesh.clone(), p)?;
        let theta = compute_theta(&v, &space, &policy)?.value.theta;
        for a in 0..mesh.num_vertices() {
            if mesh.patch(a).class != VertexClass::Interior {
                continue;
            }
            let (r, scale) = weak_divergence_residual(&v, &theta, a, &policy)?;
            worst = worst.max(r / scale.max(1e-300));
            count += 1;
        }
    }
    Ok(Check::at_most(
        "discrete weak divergence at interior vertices",
        worst,
        1e-9,
        format!("{count} vertex patches, cubic field, n={n}"),
    ))
}

/// `|‖σ − σ_M‖ − min ‖σ − v‖| / min ‖σ − v‖` over `v` with `∇·v = Π^p f`.
pub fn mixed_characterization(sizes: &[usize], degrees: &[usize]) -> Result<Check> {
    let policy = QuadPolicy::default();
    let cases: Vec<(usize, usize)> = sizes.iter().flat_map(|&n| degrees.iter().map(move |&p| (n, p))).collect();
    let worst = cases
        .par_iter()
        .map(|&(n, p)| -> Result<f64> {
            let prob = PoissonProblem::sine(square(n, &BoundaryRule::AllDirichlet)?)?;
            let flux = prob.flux_field()?;
            let mixed = solve_mixed(&prob, p, &policy)?;
            let best = global_best(&flux, mixed.sigma.space(), &policy)?.value.l2;
            let err = field_errors(&flux, &mixed.sigma.to_broken(), &policy)?
                .value
                .iter()
                .map(|e| e[0] * e[0])
                .sum::<f64>()
                .sqrt();
            Ok((err - best).abs() / best)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(Check::at_most(
        "mixed solution is the constrained best approximation",
        worst,
        1e-8,
        format!("sine problem, n={sizes:?}, p={degrees:?}"),
    ))
}

/// A priori ratio, divergence bound, coercivity witness and Galerkin
/// orthogonality of the least-squares mixed method, with `q = p + 1`.
pub fn least_squares(sizes: &[usize], degrees: &[usize], samples: usize, seed: u64) -> Result<Vec<Check>> {
    let policy = QuadPolicy::default();
    let mut cases = Vec::new();
    for &n in sizes {
        for &p in degrees {
            for poly in [false, true] {
                cases.push((n, p, poly));
            }
        }
    }
    let results = cases
        .par_iter()
        .map(|&(n, p, poly)| -> Result<[f64; 4]> {
            let mesh = square(n, &BoundaryRule::AllDirichlet)?;
            let prob = if poly { PoissonProblem::polynomial(mesh)? } else { PoissonProblem::sine(mesh)? };
            let entry = apriori_entry(&prob, p, p + 1, &policy)?;
            let ls = solve_ls_mixed(&prob, p, p + 1, &policy)?;
            let (min_ratio, _) = coercivity_witness(&ls.blocks, ls.sigma.space(), samples, seed);
            let orth = galerkin_orthogonality(&ls, samples, seed);
            // exact reproduction leaves nothing to compare
            let ratio = if entry.flux_best + entry.h1_best > 1e-10 { entry.ls_ratio } else { 0.0 };
            Ok([ratio, entry.div_bound_slack, min_ratio, orth])
        })
        .collect::<Result<Vec<_>>>()?;
    let max = |i: usize| results.iter().map(|r| r[i]).fold(0.0, f64::max);
    let min = |i: usize| results.iter().map(|r| r[i]).fold(f64::INFINITY, f64::min);
    let runs = format!("{} runs, sine and polynomial problems", cases.len());
    Ok(vec![
        Check::at_most("least-squares a priori ratio", max(0), LS_APRIORI_CONSTANT, runs.clone()),
        Check::at_least("least-squares divergence bound slack", min(1), -1e-9, runs.clone()),
        Check::at_least(
            "least-squares coercivity witness",
            min(2),
            1.0 / COERCIVITY_CONSTANT,
            format!("smallest A(x;x)/energy over {samples} random pairs per run"),
        ),
        Check::at_most("least-squares Galerkin orthogonality", max(3), 1e-9, runs),
    ])
}

/// Constrained against unconstrained local best approximation on `K̂` for
/// `(eˣ, eʸ)`, `p = 0..=max_p`.
pub fn constrained_sweep_checks(max_p: usize) -> Result<Vec<Check>> {
    let mesh = Arc::new(Mesh::reference_triangle());
    let entries = constrained_sweep(&AnalyticField::exponential(), &mesh, 0..=max_p, &QuadPolicy::default())?;
    let ratios: Vec<f64> = entries.iter().map(|e| e.ratio).collect();
    let lowest = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(vec![
        Check::at_least(
            "constrained dominates unconstrained",
            lowest,
            1.0 - 1e-12,
            "smallest constrained/unconstrained ratio".into(),
        ),
        Check::at_most("constrained ratio spread", spread(&ratios), 1.5, format!("ratios [{}]", list(&ratios))),
    ])
}

/// Conformity of the zero-extended patch fields and exactness of every
/// local constraint, for both variants on Dirichlet and mixed boundaries.
pub fn patch_invariants(sizes: &[usize], degrees: &[usize]) -> Result<Vec<Check>> {
    let mut cases = Vec::new();
    for &n in sizes {
        for &p in degrees {
            for variant in [Variant::Def31, Variant::Def52] {
                if variant == Variant::Def52 && p == 0 {
                    continue;
                }
                cases.push((n, p, variant, false));
                cases.push((n, p, variant, true));
            }
        }
    }
    let results = cases
        .par_iter()
        .map(|&(n, p, variant, neumann)| -> Result<[f64; 6]> {
            let (rule, v) = if neumann {
                (BoundaryRule::NeumannSides(vec![Side::Left, Side::Right]), AnalyticField::sine_divfree())
            } else {
                (BoundaryRule::AllDirichlet, AnalyticField::cubic())
            };
            let space = RtnSpace::new(square(n, &rule)?, p)?;
            let proj = project_hdiv(&v, &space, variant, &QuadPolicy::default())?;
            let scale = proj.sigma.coeffs().iter().fold(1.0f64, |m, c| m.max(c.abs()));
            let (jump, trace) = proj.sigma.to_broken().normal_trace_defects();
            Ok([
                jump.max(trace) / scale,
                proj.max_patch_div_error() / scale,
                proj.max_patch_residual(),
                proj.theta.max_kkt_residual,
                proj.theta.max_div_error,
                proj.max_compat_residual(),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let max = |i: usize| results.iter().map(|r| r[i]).fold(0.0, f64::max);
    let detail = format!("{} projections", cases.len());
    Ok(vec![
        Check::at_most("zero-extension conformity", max(0), 1e-11, detail.clone()),
        Check::at_most("patch divergence exactness", max(1), 1e-11, detail.clone()),
        Check::at_most("patch KKT residual", max(2), 1e-10, detail.clone()),
        Check::at_most("element KKT residual", max(3), 1e-10, detail.clone()),
        Check::at_most("element divergence exactness", max(4), 1e-12, detail.clone()),
        Check::at_most("patch compatibility", max(5), 1e-9, detail),
    ])
}

/// Largest measured patch stability ratio for each `p`; recorded, not asserted.
pub fn patch_stability(n: usize, degrees: &[usize]) -> Result<Check> {
    let space_mesh = square(n, &BoundaryRule::AllDirichlet)?;
    let mut values = Vec::new();
    for &p in degrees {
        let space = RtnSpace::new(space_mesh.clone(), p)?;
        let proj = project_hdiv(&AnalyticField::exponential(), &space, Variant::Def31, &QuadPolicy::default())?;
        values.push(proj.max_patch_stability());
    }
    let worst = values.iter().copied().fold(0.0, f64::max);
    Ok(Check::at_most(
        "patch stability ratio is finite",
        worst,
        f64::MAX,
        format!("exp field, n={n}, per p: [{}]", list(&values)),
    )
    .recorded())
}

/// Spread of the local L² stability constant of the projector across meshes,
/// plus the global constant and the local approximation constant.
pub fn projector_stability(sizes: &[usize], p: usize) -> Result<Vec<Check>> {
    let v = AnalyticField::sine_divfree();
    let policy = QuadPolicy::default();
    let mut stab = Vec::new();
    let mut global = Vec::new();
    let mut approx = Vec::new();
    for &n in sizes {
        let space = RtnSpace::new(square(n, &BoundaryRule::AllDirichlet)?, p)?;
        let proj = project_hdiv(&v, &space, Variant::Def31, &policy)?;
        let rep = projector_report(&v, &proj, &policy)?;
        stab.push(rep.max_stab_const);
        global.push(rep.global_stab_const);
        approx.push(rep.max_approx_const);
    }
    let worst_global = global.iter().copied().fold(0.0, f64::max);
    let worst_approx = approx.iter().copied().fold(0.0, f64::max);
    Ok(vec![
        Check::at_most(
            "local stability constant spread",
            spread(&stab),
            2.0,
            format!("sine_divfree, p={p}, n={sizes:?}: [{}]", list(&stab)),
        ),
        Check::at_most("global stability constant is finite", worst_global, f64::MAX, format!("[{}]", list(&global)))
            .recorded(),
        Check::at_most("local approximation constant is finite", worst_approx, f64::MAX, format!("[{}]", list(&approx)))
            .recorded(),
    ])
}

/// Two identical study runs must produce byte-identical CSV.
pub fn reproducibility(seed: u64) -> Result<Check> {
    let cfg = StudyConfig {
        field: "random_rtn:1".into(),
        p: vec![0, 1],
        refinements: 2,
        seed,
        ..Default::default()
    };
    let a = csv_string(&run_study(&cfg)?.rows)?;
    let b = csv_string(&run_study(&cfg)?.rows)?;
    let differing = a.lines().zip(b.lines()).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    Ok(Check::at_most(
        "study CSV is reproducible",
        differing as f64,
        0.0,
        "differing lines between two identical runs".into(),
    ))
}

/// Field names accepted on the command line, for help texts.
pub fn catalog_names() -> Vec<String> {
    catalog(0).iter().map(|f| f.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_status() {
        assert!(Check::at_most("a", 1.0, 2.0, String::new()).passed);
        assert!(!Check::at_most("a", f64::NAN, 2.0, String::new()).passed);
        assert!(!Check::at_least("a", f64::NAN, 2.0, String::new()).passed);
        let note = Check::at_most("a", 3.0, 2.0, String::new()).recorded();
        assert!(note.line().starts_with("NOTE"));
        assert!(Check::at_least("b", 3.0, 2.0, "x".into()).line().starts_with("PASS b: measured 3.0"));
    }

    #[test]
    fn quick_identity_checks_pass() {
        assert!(commuting(&[2], &[0, 1], 1).unwrap().passed);
        assert!(projection(2, &[0, 1], 2, 1).unwrap().passed);
        assert!(weak_divergence(2, &[0, 1]).unwrap().passed);
    }
}
