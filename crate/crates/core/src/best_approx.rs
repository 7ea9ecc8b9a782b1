//! Local- and global-best approximation errors in the weighted H(div) norm
//!
//! `E_loc,K(v)² = min_{w ∈ RTN_p(K)} ‖v − w‖²_K + (h_K/(p+1))² ‖∇·v − Π^p ∇·v‖²_K`
//!
//! and its global counterpart `E_glob`, where the minimum runs over the
//! conforming space with the divergence constrained to `Π^p ∇·v`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{dim_scalar, scalar_basis};
use crate::error::{Error, Result};
use crate::fields::{ElemPoint, QuadPolicy, VectorField};
use crate::linsolve::SparseSymIndef;
use crate::local_solve::{elem_constrained_min, element_moments};
use crate::mesh::Mesh;
use crate::projections::{checked_element, Checked, QuadWarning};
use crate::space::{BrokenRtnField, ConformingRtnField, RtnSpace};

/// Elementwise best-approximation data on one element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElementErrors {
    pub elem: usize,
    pub h: f64,
    /// `h_K / (p+1)`.
    pub weight: f64,
    /// `min ‖v − w‖_K` over `RTN_p(K)`.
    pub l2: f64,
    /// `‖v − θ_K‖_K` with `θ_K` the divergence-constrained minimizer.
    pub l2_constrained: f64,
    /// `‖∇·v − Π^p ∇·v‖_K`.
    pub osc: f64,
    pub v_norm: f64,
    /// `‖∇·v‖_K`.
    pub div_norm: f64,
}

impl ElementErrors {
    pub fn div_part(&self) -> f64 {
        self.weight * self.osc
    }

    /// `E_loc,K`.
    pub fn e_loc(&self) -> f64 {
        self.l2.hypot(self.div_part())
    }

    /// `‖v − θ_K‖_K + (h_K/(p+1)) ‖∇·(v − θ_K)‖_K`, which lies between
    /// `E_loc,K` and a p-independent multiple of it.
    pub fn constrained_sum(&self) -> f64 {
        self.l2_constrained + self.div_part()
    }

    /// `E_loc,K^c`, the constrained analogue of `E_loc,K`.
    pub fn e_loc_constrained(&self) -> f64 {
        self.l2_constrained.hypot(self.div_part())
    }
}

/// Unconstrained `L²(K)` projection of `v` onto `RTN_p(K)` from its load vector.
pub fn local_l2_projection(mass: &DMatrix<f64>, load: &[f64]) -> Result<Vec<f64>> {
    let chol = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Internal("element mass matrix is not positive definite".into()))?;
    Ok(chol.solve(&DVector::from_column_slice(load)).iter().copied().collect())
}

/// `E_loc,K` and its constrained counterpart on every element of `space`.
pub fn local_errors(
    field: &dyn VectorField,
    space: &Arc<RtnSpace>,
    policy: &QuadPolicy,
) -> Result<Checked<Vec<ElementErrors>>> {
    let mesh = space.mesh().clone();
    let p = space.degree();
    let info = field.info();
    let basis = scalar_basis(p);
    let results = (0..mesh.num_elements())
        .into_par_iter()
        .map(|k| -> Result<(ElementErrors, Option<QuadWarning>)> {
            let el = space.element(k);
            // every quantity below, including the minimizers, is recomputed
            // by the self-check at doubled degree
            let failed = std::sync::Mutex::new(None);
            let (v, warn) = checked_element(policy, info, &mesh, k, policy.degree(p, info), "local best", |rule, _| {
                let pts: Vec<ElemPoint> = rule
                    .points
                    .iter()
                    .map(|&xh| ElemPoint { elem: k, xhat: xh, x: el.geom.map(xh) })
                    .collect();
                let vals: Vec<[f64; 2]> = pts.iter().map(|pt| field.value(pt)).collect();
                let divs: Vec<f64> = pts.iter().map(|pt| field.divergence(pt)).collect();
                let load = el.load(rule, |xh| field.value(&ElemPoint { elem: k, xhat: xh, x: el.geom.map(xh) }));
                let mut c = vec![0.0; basis.len()];
                for ((pt, &w), d) in pts.iter().zip(&rule.weights).zip(&divs) {
                    for (ci, phi) in c.iter_mut().zip(basis.eval(pt.xhat)) {
                        *ci += w * d * phi;
                    }
                }
                let solved = local_l2_projection(&el.mass, &load)
                    .and_then(|u| Ok((u, elem_constrained_min(el, &load, &c)?.dofs)));
                let (u, th) = match solved {
                    Ok(x) => x,
                    Err(e) => {
                        *failed.lock().unwrap() = Some(e);
                        return vec![0.0; 5];
                    }
                };
                let (ru, rt) = (el.raw_coeffs(&u), el.raw_coeffs(&th));
                let mut acc = [0.0; 5];
                for (i, pt) in pts.iter().enumerate() {
                    let w = rule.weights[i] * el.det();
                    let (a, b) = (el.eval_raw_coeffs(&ru, pt.xhat), el.eval_raw_coeffs(&rt, pt.xhat));
                    let v = vals[i];
                    let phi = basis.eval(pt.xhat);
                    let pd: f64 = c.iter().zip(&phi).map(|(c, f)| c * f).sum();
                    acc[0] += w * ((v[0] - a[0]).powi(2) + (v[1] - a[1]).powi(2));
                    acc[1] += w * ((v[0] - b[0]).powi(2) + (v[1] - b[1]).powi(2));
                    acc[2] += w * (divs[i] - pd).powi(2);
                    acc[3] += w * (v[0] * v[0] + v[1] * v[1]);
                    acc[4] += w * divs[i] * divs[i];
                }
                acc.iter().map(|x| x.max(0.0).sqrt()).collect()
            })?;
            if let Some(e) = failed.into_inner().unwrap() {
                return Err(e);
            }
            let h = mesh.h(k);
            Ok((
                ElementErrors {
                    elem: k,
                    h,
                    weight: h / (p + 1) as f64,
                    l2: v[0],
                    l2_constrained: v[1],
                    osc: v[2],
                    v_norm: v[3],
                    div_norm: v[4],
                },
                warn,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let value = results
        .into_iter()
        .map(|(e, w)| {
            warnings.extend(w);
            e
        })
        .collect();
    Ok(Checked { value, warnings })
}

/// Per element `[‖v − w‖_K, ‖∇·v − ∇·w‖_K, ‖w‖_K]` for a broken field `w`.
pub fn field_errors(
    field: &dyn VectorField,
    w: &BrokenRtnField,
    policy: &QuadPolicy,
) -> Result<Checked<Vec<[f64; 3]>>> {
    let space = &w.space;
    let mesh = space.mesh().clone();
    let info = field.info();
    let p = space.degree();
    let results = (0..mesh.num_elements())
        .into_par_iter()
        .map(|k| {
            let el = space.element(k);
            let raw = el.raw_coeffs(&w.dofs[k]);
            checked_element(policy, info, &mesh, k, policy.degree(p, info), "field error", |rule, _| {
                let mut acc = [0.0; 3];
                for (xh, &wt) in rule.points.iter().zip(&rule.weights) {
                    let pt = ElemPoint { elem: k, xhat: *xh, x: el.geom.map(*xh) };
                    let v = field.value(&pt);
                    let a = el.eval_raw_coeffs(&raw, *xh);
                    let d = field.divergence(&pt) - el.div_raw_coeffs(&raw, *xh);
                    let wt = wt * el.det();
                    acc[0] += wt * ((v[0] - a[0]).powi(2) + (v[1] - a[1]).powi(2));
                    acc[1] += wt * d * d;
                    acc[2] += wt * (a[0] * a[0] + a[1] * a[1]);
                }
                acc.iter().map(|x| x.max(0.0).sqrt()).collect()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let value = results
        .into_iter()
        .map(|(v, w)| {
            warnings.extend(w);
            [v[0], v[1], v[2]]
        })
        .collect();
    Ok(Checked { value, warnings })
}

/// Solution of the global constrained minimization.
#[derive(Debug, Clone)]
pub struct GlobalBest {
    pub minimizer: ConformingRtnField,
    /// `‖v − σ‖`.
    pub l2: f64,
    /// `(Σ_K (h_K/(p+1))² ‖∇·v − ∇·σ‖²_K)^{1/2}`, measured on the minimizer.
    pub div_part: f64,
    pub kkt_residual: f64,
    /// Max deviation of the divergence coefficients of `σ` from `Π^p ∇·v`.
    pub div_error: f64,
    /// Border multiplier; nonzero only without Dirichlet boundary.
    pub mu: f64,
}

impl GlobalBest {
    pub fn total(&self) -> f64 {
        self.l2.hypot(self.div_part)
    }
}

/// Triplets and right-hand side of the global KKT system
/// `[[M, Bᵀ], [B, 0]]` (bordered by the constant moments when the mesh has no
/// Dirichlet boundary), for loads `loads` and constraint coefficients `div`.
pub fn global_kkt(
    space: &RtnSpace,
    loads: &[Vec<f64>],
    div: &[Vec<f64>],
) -> (usize, Vec<(usize, usize, f64)>, Vec<f64>, bool) {
    let mesh = space.mesh();
    let nd = space.ndofs();
    let ns = dim_scalar(space.degree());
    let ne = mesh.num_elements();
    let bordered = !mesh.has_dirichlet();
    let n = nd + ne * ns + usize::from(bordered);
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; n];
    for k in 0..ne {
        let el = space.element(k);
        let map = space.local_to_global(k);
        for (m1, g1) in map.iter().enumerate() {
            let Some(g1) = *g1 else { continue };
            rhs[g1] += loads[k][m1];
            for (m2, g2) in map.iter().enumerate() {
                if let Some(g2) = *g2 {
                    trip.push((g1, g2, el.mass[(m1, m2)]));
                }
            }
            for i in 0..ns {
                let r = nd + k * ns + i;
                trip.push((r, g1, el.div[(i, m1)]));
                trip.push((g1, r, el.div[(i, m1)]));
            }
        }
        for i in 0..ns {
            rhs[nd + k * ns + i] = el.det() * div[k][i];
        }
        if bordered {
            let c = el.det() / std::f64::consts::SQRT_2;
            trip.push((nd + k * ns, n - 1, c));
            trip.push((n - 1, nd + k * ns, c));
        }
    }
    (n, trip, rhs, bordered)
}

/// `E_glob`: the global saddle solve over `RTN_p ∩ H_{Γ_N}(div)`.
pub fn global_best(
    field: &dyn VectorField,
    space: &Arc<RtnSpace>,
    policy: &QuadPolicy,
) -> Result<Checked<GlobalBest>> {
    let mesh = space.mesh().clone();
    let moments = (0..mesh.num_elements())
        .into_par_iter()
        .map(|k| element_moments(field, space, k, policy))
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let mut loads = Vec::with_capacity(moments.len());
    let mut div = Vec::with_capacity(moments.len());
    for (l, d, w) in moments {
        loads.push(l);
        div.push(d);
        warnings.extend(w);
    }
    if !mesh.has_dirichlet() {
        check_zero_mean(&mesh, &div)?;
    }
    let (n, trip, rhs, bordered) = global_kkt(space, &loads, &div);
    let lu = SparseSymIndef::factor(n, &trip)?;
    let (x, kkt_residual) = lu.solve(&rhs)?;
    let nd = space.ndofs();
    let mu = if bordered { x[n - 1] } else { 0.0 };
    let sigma = ConformingRtnField::new(space.clone(), x[..nd].to_vec())?.with_name("global_best");
    let ns = dim_scalar(space.degree());
    let mut div_error = 0.0f64;
    for k in 0..mesh.num_elements() {
        let el = space.element(k);
        let d = el.div_of(&sigma.local_dofs(k));
        for i in 0..ns {
            let shift = if bordered && i == 0 { mu / std::f64::consts::SQRT_2 } else { 0.0 };
            div_error = div_error.max((d[i] - (div[k][i] - shift)).abs());
        }
    }
    let errs = field_errors(field, &sigma.to_broken(), policy)?;
    warnings.extend(errs.warnings);
    let p1 = (space.degree() + 1) as f64;
    let l2 = errs.value.iter().map(|e| e[0] * e[0]).sum::<f64>().sqrt();
    let div_part = errs
        .value
        .iter()
        .enumerate()
        .map(|(k, e)| (mesh.h(k) / p1 * e[1]).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(Checked {
        value: GlobalBest {
            minimizer: sigma,
            l2,
            div_part,
            kkt_residual,
            div_error,
            mu,
        },
        warnings,
    })
}

/// Without Dirichlet boundary the divergence of any member of the space has
/// zero mean, so the data must too.
fn check_zero_mean(mesh: &Mesh, div: &[Vec<f64>]) -> Result<()> {
    let (mut integral, mut norm_sq, mut area) = (0.0, 0.0, 0.0);
    for (k, c) in div.iter().enumerate() {
        let det = mesh.geometry(k).det;
        integral += det * c[0] / std::f64::consts::SQRT_2;
        norm_sq += det * c.iter().map(|x| x * x).sum::<f64>();
        area += det / 2.0;
    }
    let scale = norm_sq.sqrt() * area.sqrt();
    if integral.abs() > 1e-9 * scale.max(1e-300) && integral.abs() > 1e-14 {
        return Err(Error::Incompatible(format!(
            "the whole boundary is Neumann but ∫ div v = {integral:e} is not zero"
        )));
    }
    Ok(())
}

/// Local and global best-approximation errors of one field on one mesh.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub field: String,
    pub p: usize,
    pub num_elements: usize,
    pub h_max: f64,
    pub quad_degree: usize,
    pub elements: Vec<ElementErrors>,
    /// `(Σ_K min ‖v − w‖²_K)^{1/2}`.
    pub sum_eloc_l2: f64,
    /// `(Σ_K E_loc,K²)^{1/2}`.
    pub sum_eloc: f64,
    /// `(Σ_K E_loc,K^c ²)^{1/2}`.
    pub sum_eloc_constrained: f64,
    pub eglob_l2: f64,
    /// Shared weighted divergence part `(Σ_K (h_K/(p+1))² ‖∇·v − Π^p∇·v‖²_K)^{1/2}`.
    pub div_part: f64,
    /// The same quantity measured on the global minimizer.
    pub div_part_measured: f64,
    pub eglob: f64,
    /// `E_glob² / Σ E_loc²`; `None` when both vanish.
    pub ratio_glob_over_loc: Option<f64>,
    pub ratio_loc_over_glob: Option<f64>,
    /// `(Σ_K E_loc,K(p−1)²)^{1/2}` with degree `p − 1` local errors, for `p ≥ 1`.
    pub sum_eloc_reduced: Option<f64>,
    /// `E_glob(p)² / Σ E_loc(p−1)²`.
    pub ratio_reduced: Option<f64>,
    pub global_kkt_residual: f64,
    pub global_div_error: f64,
    pub warnings: Vec<QuadWarning>,
}

/// Below this relative size an error counts as exactly zero.
pub const EXACT_ZERO: f64 = 1e-12;

fn ratio(num: f64, den: f64, scale: f64) -> Option<f64> {
    if num <= EXACT_ZERO * scale && den <= EXACT_ZERO * scale {
        None
    } else {
        Some((num / den).powi(2))
    }
}

/// Builds the full [`ErrorReport`] for `field` on `space`.
pub fn error_report(
    field: &dyn VectorField,
    space: &Arc<RtnSpace>,
    policy: &QuadPolicy,
    with_reduced: bool,
) -> Result<ErrorReport> {
    let p = space.degree();
    let mesh = space.mesh();
    let local = local_errors(field, space, policy)?;
    let global = global_best(field, space, policy)?;
    let mut warnings = local.warnings;
    warnings.extend(global.warnings);
    let els = local.value;
    let rss = |f: &dyn Fn(&ElementErrors) -> f64| els.iter().map(|e| f(e).powi(2)).sum::<f64>().sqrt();
    let sum_eloc = rss(&|e| e.e_loc());
    let div_part = rss(&|e| e.div_part());
    let eglob = global.value.l2.hypot(div_part);
    let scale = rss(&|e| e.v_norm).max(f64::MIN_POSITIVE);
    let (sum_eloc_reduced, ratio_reduced) = if with_reduced && p >= 1 {
        let reduced = RtnSpace::new(mesh.clone(), p - 1)?;
        let red = local_errors(field, &reduced, policy)?;
        warnings.extend(red.warnings);
        let s = red.value.iter().map(|e| e.e_loc().powi(2)).sum::<f64>().sqrt();
        (Some(s), ratio(eglob, s, scale))
    } else {
        (None, None)
    };
    Ok(ErrorReport {
        field: field.info().name.clone(),
        p,
        num_elements: mesh.num_elements(),
        h_max: mesh.h_max(),
        quad_degree: policy.degree(p, field.info()),
        sum_eloc_l2: rss(&|e| e.l2),
        sum_eloc,
        sum_eloc_constrained: rss(&|e| e.e_loc_constrained()),
        eglob_l2: global.value.l2,
        div_part,
        div_part_measured: global.value.div_part,
        eglob,
        ratio_glob_over_loc: ratio(eglob, sum_eloc, scale),
        ratio_loc_over_glob: ratio(sum_eloc, eglob, scale),
        sum_eloc_reduced,
        ratio_reduced,
        global_kkt_residual: global.value.kkt_residual,
        global_div_error: global.value.div_error,
        elements: els,
        warnings,
    })
}

/// One entry of the single-element degree sweep of constrained against
/// unconstrained local-best errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstrainedSweepEntry {
    pub p: usize,
    pub e_loc: f64,
    /// `‖v − θ‖_K + (h_K/(p+1))‖∇·(v − θ)‖_K`.
    pub constrained: f64,
    pub ratio: f64,
}

/// Constrained/unconstrained local-best ratio on the single element of
/// `mesh` for each degree in `degrees`.
pub fn constrained_sweep(
    field: &dyn VectorField,
    mesh: &Arc<Mesh>,
    degrees: impl IntoIterator<Item = usize>,
    policy: &QuadPolicy,
) -> Result<Vec<ConstrainedSweepEntry>> {
    if mesh.num_elements() != 1 {
        return Err(Error::InvalidArgument("the sweep runs on a one-element mesh".into()));
    }
    degrees
        .into_iter()
        .map(|p| {
            let space = RtnSpace::new(mesh.clone(), p)?;
            let e = local_errors(field, &space, policy)?.value[0];
            Ok(ConstrainedSweepEntry {
                p,
                e_loc: e.e_loc(),
                constrained: e.constrained_sum(),
                ratio: e.constrained_sum() / e.e_loc(),
            })
        })
        .collect()
}
