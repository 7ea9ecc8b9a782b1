//! The two local constrained minimizations behind the projector: the
//! elementwise problem for `θ` and the patchwise flux equilibration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{dim_rtn_interior, dim_scalar, scalar_basis};
use crate::element::RtnElement;
use crate::error::{Error, Result};
use crate::fields::{ElemPoint, QuadPolicy, VectorField};
use crate::linsolve::DenseSaddle;
use crate::mesh::{BoundaryLabel, ElementGeometry, VertexClass};
use crate::projections::{checked_element, Checked, QuadWarning};
use crate::quadrature::{line_rule, quad_rule};
use crate::space::{BrokenRtnField, RtnSpace};

/// Relative KKT residual above which a local solve is treated as failed.
const KKT_FAIL: f64 = 1e-8;
/// Relative violation of `(g_a, 1)_{ω_a} = 0` above which assembly fails.
pub const COMPAT_TOL: f64 = 1e-9;

/// Which locally defined projector to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `θ ∈ RTN_p`, target `I^p(ψ_a θ)`.
    #[default]
    Def31,
    /// `θ ∈ RTN_{p-1}`, target `ψ_a θ`; needs `p ≥ 1`.
    Def52,
}

impl Variant {
    /// Degree of the elementwise minimizer `θ` for projector degree `p`.
    pub fn theta_degree(self, p: usize) -> Result<usize> {
        match self {
            Variant::Def31 => Ok(p),
            Variant::Def52 if p >= 1 => Ok(p - 1),
            Variant::Def52 => Err(Error::InvalidArgument(
                "the def52 variant needs p >= 1".into(),
            )),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Def31 => "def31",
            Variant::Def52 => "def52",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "def31" => Ok(Variant::Def31),
            "def52" => Ok(Variant::Def52),
            _ => Err(Error::InvalidArgument(format!("unknown variant `{s}` (def31|def52)"))),
        }
    }
}

/// Result of the elementwise constrained minimization on one element.
#[derive(Debug, Clone)]
pub struct ElementSolution {
    pub dofs: Vec<f64>,
    pub kkt_residual: f64,
    /// Max deviation of the divergence coefficients from the constraint data.
    pub div_error: f64,
}

/// `argmin ‖v − w‖_K` over `w ∈ RTN_q(K)` with `∇·w = Π^q(∇·v)`, where
/// `load[m] = (v, N_m)_K` and `div_coeffs` holds `Π^q(∇·v)` in the scalar basis.
pub fn elem_constrained_min(el: &RtnElement, load: &[f64], div_coeffs: &[f64]) -> Result<ElementSolution> {
    let det = el.det();
    let g = DVector::from_iterator(div_coeffs.len(), div_coeffs.iter().map(|c| c * det));
    let f = DVector::from_column_slice(load);
    let sol = DenseSaddle::new(el.mass.clone(), el.div.clone()).solve(&f, &g)?;
    if sol.residual > KKT_FAIL {
        return Err(Error::Internal(format!(
            "element KKT residual {:e} exceeds {KKT_FAIL:e}",
            sol.residual
        )));
    }
    let dofs: Vec<f64> = sol.x.iter().copied().collect();
    let div_error = el
        .div_of(&dofs)
        .iter()
        .zip(div_coeffs)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(ElementSolution {
        dofs,
        kkt_residual: sol.residual,
        div_error,
    })
}

/// Elementwise data shared by the projector and the best-approximation code.
#[derive(Debug, Clone)]
pub struct ElementData {
    /// Constrained minimizers `θ_K`.
    pub theta: BrokenRtnField,
    /// `(v, N_m)_K` per element.
    pub loads: Vec<Vec<f64>>,
    /// `Π^q(∇·v)` coefficients per element, `q` the degree of `theta`.
    pub div_coeffs: Vec<Vec<f64>>,
    pub max_kkt_residual: f64,
    pub max_div_error: f64,
}

/// Loads `(v, N_m)_K` and `Π^q(∇·v)|_K` on element `k` of `space`.
pub fn element_moments(
    field: &dyn VectorField,
    space: &RtnSpace,
    k: usize,
    policy: &QuadPolicy,
) -> Result<(Vec<f64>, Vec<f64>, Option<QuadWarning>)> {
    let el = space.element(k);
    let q = el.degree;
    let info = field.info();
    let n = el.len();
    let basis = scalar_basis(q);
    let (both, warn) = checked_element(
        policy,
        info,
        space.mesh(),
        k,
        policy.degree(q, info),
        "element moments",
        |rule, _| {
            let pts: Vec<ElemPoint> = rule
                .points
                .iter()
                .map(|&xh| ElemPoint {
                    elem: k,
                    xhat: xh,
                    x: el.geom.map(xh),
                })
                .collect();
            let mut out = el.load(rule, |xh| {
                field.value(&ElemPoint {
                    elem: k,
                    xhat: xh,
                    x: el.geom.map(xh),
                })
            });
            let mut c = vec![0.0; basis.len()];
            for (pt, &w) in pts.iter().zip(&rule.weights) {
                let d = field.divergence(pt);
                for (ci, phi) in c.iter_mut().zip(basis.eval(pt.xhat)) {
                    *ci += w * d * phi;
                }
            }
            out.extend(c);
            out
        },
    )?;
    let (load, div) = both.split_at(n);
    Ok((load.to_vec(), div.to_vec(), warn))
}

/// Solves the elementwise problem on every element of `space`.
pub fn compute_theta(
    field: &dyn VectorField,
    space: &Arc<RtnSpace>,
    policy: &QuadPolicy,
) -> Result<Checked<ElementData>> {
    let results = (0..space.mesh().num_elements())
        .into_par_iter()
        .map(|k| {
            let (load, div, warn) = element_moments(field, space, k, policy)?;
            let sol = elem_constrained_min(space.element(k), &load, &div)?;
            Ok((load, div, sol, warn))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = ElementData {
        theta: BrokenRtnField::zeros(space.clone()),
        loads: Vec::with_capacity(results.len()),
        div_coeffs: Vec::with_capacity(results.len()),
        max_kkt_residual: 0.0,
        max_div_error: 0.0,
    };
    let mut warnings = Vec::new();
    for (k, (load, div, sol, warn)) in results.into_iter().enumerate() {
        data.max_kkt_residual = data.max_kkt_residual.max(sol.kkt_residual);
        data.max_div_error = data.max_div_error.max(sol.div_error);
        data.theta.dofs[k] = sol.dofs;
        data.loads.push(load);
        data.div_coeffs.push(div);
        warnings.extend(warn);
    }
    Ok(Checked {
        value: data,
        warnings,
    })
}

/// Active dofs of the local space `V^a_h` on the patch of vertex `a`.
#[derive(Debug, Clone)]
pub struct PatchSpace {
    pub vertex: usize,
    pub class: VertexClass,
    pub degree: usize,
    pub elements: Vec<usize>,
    /// Global dof of every patch dof.
    pub global: Vec<usize>,
    /// Patch dof of each local dof of each patch element (`None`: pinned).
    pub local_maps: Vec<Vec<Option<usize>>>,
}

impl PatchSpace {
    pub fn new(space: &RtnSpace, a: usize) -> Self {
        let mesh = space.mesh();
        let patch = mesh.patch(a);
        let p = space.degree();
        let mut global = Vec::new();
        let mut edge_start = BTreeMap::new();
        for &e in &patch.free_edges {
            let off = space
                .edge_offset(e)
                .expect("free patch edges are never Neumann edges");
            edge_start.insert(e, global.len());
            global.extend(off..off + p + 1);
        }
        let ni = dim_rtn_interior(p);
        let mut local_maps = Vec::with_capacity(patch.elements.len());
        for &k in &patch.elements {
            let mut map = Vec::with_capacity(space.element(k).len());
            for e in mesh.element_edges(k) {
                let start = edge_start.get(&e).copied();
                map.extend((0..=p).map(|i| start.map(|s| s + i)));
            }
            let off = space.interior_offset(k);
            for i in 0..ni {
                map.push(Some(global.len()));
                global.push(off + i);
            }
            local_maps.push(map);
        }
        PatchSpace {
            vertex: a,
            class: patch.class,
            degree: p,
            elements: patch.elements.clone(),
            global,
            local_maps,
        }
    }

    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    /// Whether the patch multiplier space has the constant kernel.
    pub fn is_closed(&self) -> bool {
        self.class != VertexClass::Dirichlet
    }

    /// Local dofs on patch element `kk` of the patch field with dofs `x`.
    pub fn element_dofs(&self, x: &[f64], kk: usize) -> Vec<f64> {
        self.local_maps[kk].iter().map(|j| j.map_or(0.0, |j| x[j])).collect()
    }
}

/// Assembled data of one patch problem.
#[derive(Debug, Clone)]
pub struct PatchProblem {
    pub space: PatchSpace,
    /// `g_a` coefficients per patch element (degree `p`).
    pub g: Vec<Vec<f64>>,
    /// Target `χ_a` dofs per patch element.
    pub target: Vec<Vec<f64>>,
    /// `|(g_a, 1)_{ω_a}| / (‖g_a‖ |ω_a|^{1/2})`, zero for Dirichlet vertices.
    pub compat_residual: f64,
}

/// Builds `g_a` and `χ_a` for vertex `a` from the elementwise minimizers `theta`.
pub fn build_patch_problem(
    space: &Arc<RtnSpace>,
    a: usize,
    theta: &BrokenRtnField,
    field: &dyn VectorField,
    variant: Variant,
    policy: &QuadPolicy,
) -> Result<(PatchProblem, Vec<QuadWarning>)> {
    let p = space.degree();
    if theta.degree() != variant.theta_degree(p)? {
        return Err(Error::InvalidArgument(format!(
            "{variant} at p = {p} needs theta of degree {}, got {}",
            variant.theta_degree(p)?,
            theta.degree()
        )));
    }
    let mesh = space.mesh();
    let pspace = PatchSpace::new(space, a);
    let info = field.info();
    let basis = scalar_basis(p);
    let exact = quad_rule(2 * p + 2)?;
    let mut g = Vec::with_capacity(pspace.elements.len());
    let mut target = Vec::with_capacity(pspace.elements.len());
    let mut warnings = Vec::new();
    for &k in &pspace.elements {
        let l = mesh.local_vertex(k, a).expect("patch element contains its vertex");
        let geom = mesh.geometry(k);
        let (mut c, warn) = checked_element(
            policy,
            info,
            mesh,
            k,
            policy.degree(p, info) + 1,
            "patch divergence data",
            |rule, _| {
                let mut c = vec![0.0; basis.len()];
                for (xh, &w) in rule.points.iter().zip(&rule.weights) {
                    let psi = ElementGeometry::barycentric(*xh)[l];
                    let d = field.divergence(&ElemPoint {
                        elem: k,
                        xhat: *xh,
                        x: geom.map(*xh),
                    });
                    for (ci, phi) in c.iter_mut().zip(basis.eval(*xh)) {
                        *ci += w * psi * d * phi;
                    }
                }
                c
            },
        )?;
        warnings.extend(warn);
        // ∇ψ_a·θ is polynomial: exact rule, independent of the field policy
        let grad = mesh.hat_gradient(a, k);
        let th_el = theta.space.element(k);
        let raw = th_el.raw_coeffs(&theta.dofs[k]);
        for (xh, &w) in exact.points.iter().zip(&exact.weights) {
            let t = th_el.eval_raw_coeffs(&raw, *xh);
            let s = grad[0] * t[0] + grad[1] * t[1];
            for (ci, phi) in c.iter_mut().zip(basis.eval(*xh)) {
                *ci += w * s * phi;
            }
        }
        g.push(c);
        let mut psi = [0.0; 3];
        psi[l] = 1.0;
        target.push(space.element(k).interpolate_affine_product(psi, th_el, &theta.dofs[k])?);
    }
    let mut compat_residual = 0.0;
    if pspace.is_closed() {
        let (mut integral, mut norm_sq, mut area) = (0.0, 0.0, 0.0);
        for (kk, &k) in pspace.elements.iter().enumerate() {
            let det = mesh.geometry(k).det;
            integral += det * g[kk][0] / std::f64::consts::SQRT_2;
            norm_sq += det * g[kk].iter().map(|c| c * c).sum::<f64>();
            area += det / 2.0;
        }
        let scale = norm_sq.sqrt() * area.sqrt();
        if scale > 0.0 {
            compat_residual = integral.abs() / scale;
        }
        if compat_residual > COMPAT_TOL {
            return Err(Error::Compatibility {
                vertex: a,
                residual: compat_residual,
            });
        }
    }
    Ok((
        PatchProblem {
            space: pspace,
            g,
            target,
            compat_residual,
        },
        warnings,
    ))
}

/// `|(∇·v, ψ_a)_{ω_a} + (θ, ∇ψ_a)_{ω_a}|` together with the sum of the
/// absolute elementwise contributions, which serves as its scale. The first
/// vanishes at interior and Neumann vertices.
pub fn weak_divergence_residual(
    field: &dyn VectorField,
    theta: &BrokenRtnField,
    a: usize,
    policy: &QuadPolicy,
) -> Result<(f64, f64)> {
    let mesh = theta.space.mesh();
    let info = field.info();
    let q = theta.degree();
    let exact = quad_rule(q + 1)?;
    let (mut total, mut scale) = (0.0, 0.0);
    for &k in &mesh.patch(a).elements {
        let l = mesh.local_vertex(k, a).expect("patch element contains its vertex");
        let geom = mesh.geometry(k);
        let rule = policy.element_rule(policy.degree(q, info) + 1, info, mesh, k)?;
        let div_part: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(xh, w)| {
                let pt = ElemPoint { elem: k, xhat: *xh, x: geom.map(*xh) };
                w * geom.det * ElementGeometry::barycentric(*xh)[l] * field.divergence(&pt)
            })
            .sum();
        let grad = mesh.hat_gradient(a, k);
        let el = theta.space.element(k);
        let raw = el.raw_coeffs(&theta.dofs[k]);
        let flux_part: f64 = exact
            .points
            .iter()
            .zip(&exact.weights)
            .map(|(xh, w)| {
                let t = el.eval_raw_coeffs(&raw, *xh);
                w * geom.det * (grad[0] * t[0] + grad[1] * t[1])
            })
            .sum();
        total += div_part + flux_part;
        scale += div_part.abs() + flux_part.abs();
    }
    Ok((total.abs(), scale))
}

/// Dense KKT blocks of a patch problem: `(M, B, f, g, border)`.
pub type PatchKkt = (DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>, Option<DVector<f64>>);

/// Assembles mass, divergence, load, constraint data and (for closed
/// patches) the constant-moment border of `prob`.
pub fn assemble_patch(space: &RtnSpace, prob: &PatchProblem) -> PatchKkt {
    let ps = &prob.space;
    let n = ps.len();
    let ns = dim_scalar(ps.degree);
    let nm = ns * ps.elements.len();
    let mut m = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(nm, n);
    let mut f = DVector::zeros(n);
    let mut g = DVector::zeros(nm);
    let mut border = DVector::zeros(nm);
    for (kk, &k) in ps.elements.iter().enumerate() {
        let el = space.element(k);
        let map = &ps.local_maps[kk];
        let chi = DVector::from_column_slice(&prob.target[kk]);
        let mchi = &el.mass * chi;
        for (m1, j1) in map.iter().enumerate() {
            let Some(j1) = *j1 else { continue };
            f[j1] += mchi[m1];
            for (m2, j2) in map.iter().enumerate() {
                if let Some(j2) = *j2 {
                    m[(j1, j2)] += el.mass[(m1, m2)];
                }
            }
            for i in 0..ns {
                b[(kk * ns + i, j1)] += el.div[(i, m1)];
            }
        }
        for i in 0..ns {
            g[kk * ns + i] = el.det() * prob.g[kk][i];
        }
        // (1, φ_0)_K = det B / √2, other moments of 1 vanish
        border[kk * ns] = el.det() / std::f64::consts::SQRT_2;
    }
    (m, b, f, g, ps.is_closed().then_some(border))
}

/// Solution of one patch problem.
#[derive(Debug, Clone)]
pub struct PatchSolution {
    pub vertex: usize,
    pub class: VertexClass,
    /// Dofs on the patch space, see [`PatchSpace::global`].
    pub dofs: Vec<f64>,
    pub global: Vec<usize>,
    /// Mean of `g_a` removed by the border (zero for Dirichlet vertices).
    pub mu: f64,
    pub kkt_residual: f64,
    /// Max deviation of `∇·s_a` from the (mean-corrected) data, in coefficients.
    pub div_error: f64,
    pub compat_residual: f64,
    /// `‖s_a − χ_a‖_{ω_a}`.
    pub distance: f64,
    /// Weighted residual of `χ_a` against the patch constraints; see
    /// [`data_surrogate`].
    pub data_norm: f64,
}

impl PatchSolution {
    /// Measured stability ratio `‖s_a − χ_a‖ / data_norm` (zero when both vanish).
    pub fn stability(&self) -> f64 {
        if self.distance <= 1e-14 * self.data_norm.max(1e-300) || self.data_norm == 0.0 {
            if self.distance <= 1e-14 {
                return 0.0;
            }
            return f64::INFINITY;
        }
        self.distance / self.data_norm
    }
}

/// Solves `min ‖w − χ_a‖_{ω_a}` over `V^a_h` subject to `∇·w = g_a`.
pub fn patch_equilibrate(space: &RtnSpace, prob: &PatchProblem) -> Result<PatchSolution> {
    let (m, b, f, g, border) = assemble_patch(space, prob);
    let ps = &prob.space;
    let mut saddle = DenseSaddle::new(m, b);
    if let Some(c) = border.clone() {
        saddle = saddle.with_border(c);
    }
    let sol = saddle.solve(&f, &g).map_err(|e| {
        Error::Internal(format!("patch of vertex {}: {e}", ps.vertex))
    })?;
    if sol.residual > KKT_FAIL {
        return Err(Error::Internal(format!(
            "patch of vertex {}: KKT residual {:e}",
            ps.vertex, sol.residual
        )));
    }
    let dofs: Vec<f64> = sol.x.iter().copied().collect();
    let ns = dim_scalar(ps.degree);
    let mut div_error = 0.0f64;
    let mut dist_sq = 0.0;
    for (kk, &k) in ps.elements.iter().enumerate() {
        let el = space.element(k);
        let local = ps.element_dofs(&dofs, kk);
        let d = el.div_of(&local);
        for i in 0..ns {
            let shift = border.as_ref().map_or(0.0, |c| sol.mu * c[kk * ns + i] / el.det());
            div_error = div_error.max((d[i] - (prob.g[kk][i] - shift)).abs());
        }
        let diff = DVector::from_iterator(local.len(), local.iter().zip(&prob.target[kk]).map(|(a, b)| a - b));
        dist_sq += diff.dot(&(&el.mass * &diff));
    }
    Ok(PatchSolution {
        vertex: ps.vertex,
        class: ps.class,
        dofs,
        global: ps.global.clone(),
        mu: sol.mu,
        kkt_residual: sol.residual,
        div_error,
        compat_residual: prob.compat_residual,
        distance: dist_sq.max(0.0).sqrt(),
        data_norm: data_surrogate(space, prob),
    })
}

/// Discrete surrogate of the dual norm of the patch data: the weighted
/// residuals of `χ_a` with respect to the divergence constraint and the
/// zero normal trace on the pinned part of `∂ω_a` and across interior edges,
/// `(h_ω/(p+1)) ‖g_a − ∇·χ_a‖ + Σ_F (h_F/(p+1))^{1/2} ‖[[χ_a·n_F]]‖_F`.
pub fn data_surrogate(space: &RtnSpace, prob: &PatchProblem) -> f64 {
    let ps = &prob.space;
    let mesh = space.mesh();
    let p1 = (ps.degree + 1) as f64;
    let h_omega = ps.elements.iter().map(|&k| mesh.h(k)).fold(0.0, f64::max);
    let mut div_sq = 0.0;
    let mut by_edge: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (kk, &k) in ps.elements.iter().enumerate() {
        let el = space.element(k);
        let d = el.div_of(&prob.target[kk]);
        div_sq += el.det() * d.iter().zip(&prob.g[kk]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        for (le, e) in mesh.element_edges(k).into_iter().enumerate() {
            by_edge.entry(e).or_default().push((kk, le));
        }
    }
    let line = line_rule(2 * ps.degree + 2);
    let mut edge_term = 0.0;
    for (e, sides) in by_edge {
        let ed = &mesh.edges()[e];
        if ed.label == Some(BoundaryLabel::Dirichlet) && ps.class == VertexClass::Dirichlet && ed.vertices.contains(&ps.vertex) {
            continue;
        }
        let (pa, pb) = (mesh.vertices()[ed.vertices[0]], mesh.vertices()[ed.vertices[1]]);
        let jump_sq = line.integrate(|t| {
            let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
            let mut j = 0.0;
            for &(kk, le) in &sides {
                let k = ps.elements[kk];
                let el = space.element(k);
                let v = el.eval(&prob.target[kk], el.geom.inverse_map(x));
                j += el.signs[le] * (v[0] * ed.normal[0] + v[1] * ed.normal[1]);
            }
            j * j
        }) * ed.length;
        edge_term += (ed.length / p1).sqrt() * jump_sq.sqrt();
    }
    h_omega / p1 * div_sq.max(0.0).sqrt() + edge_term
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticField, FieldInfo};
    use crate::mesh::{BoundaryRule, Mesh};
    use crate::poly::reference_monomial_integral;
    use crate::space::random_conforming;

    fn info(name: &str) -> FieldInfo {
        FieldInfo {
            name: name.into(),
            regularity: f64::INFINITY,
            divergence_free: false,
            discrete_degree: None,
            singular_point: None,
        }
    }

    #[test]
    fn element_example_x_squared() {
        let mesh = Arc::new(Mesh::reference_triangle());
        let space = RtnSpace::new(mesh, 0).unwrap();
        let v = AnalyticField::new(info("x2"), |x| [x[0] * x[0], 0.0], |x| 2.0 * x[0]);
        let data = compute_theta(&v, &space, &QuadPolicy::default()).unwrap().value;
        let theta = &data.theta;

        // oracle: RTN_0(K̂) = span{(1,0), (0,1), (x,y)}; div = 2c = Π⁰(2x) = 2/3
        // fixes c = 1/3, then normal equations in (a, b) with exact integrals
        let mi = reference_monomial_integral;
        let c = 1.0 / 3.0;
        let gram = nalgebra::Matrix2::new(mi(0, 0), 0.0, 0.0, mi(0, 0));
        let rhs = nalgebra::Vector2::new(mi(2, 0) - c * mi(1, 0), -c * mi(0, 1));
        let ab = gram.lu().solve(&rhs).unwrap();
        for xh in [[0.1, 0.2], [0.5, 0.4], [0.0, 0.9]] {
            let got = theta.eval(0, xh);
            let want = [ab[0] + c * xh[0], ab[1] + c * xh[1]];
            assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
        }
        assert!(data.max_div_error < 1e-12);
    }

    #[test]
    fn element_min_reproduces_rtn_and_satisfies_euler_lagrange() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap());
        for p in 0..4 {
            let space = RtnSpace::new(mesh.clone(), p).unwrap();
            let v = random_conforming(space.clone(), 3);
            let data = compute_theta(&v, &space, &QuadPolicy::default()).unwrap().value;
            for k in 0..mesh.num_elements() {
                let want = v.local_dofs(k);
                for (a, b) in data.theta.dofs[k].iter().zip(&want) {
                    assert!((a - b).abs() < 1e-11);
                }
            }
            let cubic = AnalyticField::cubic();
            let data = compute_theta(&cubic, &space, &QuadPolicy::default()).unwrap().value;
            for k in 0..mesh.num_elements() {
                let el = space.element(k);
                for a in mesh.triangles()[k] {
                    let grad = mesh.hat_gradient(a, k);
                    let w = el.interpolate(&line_rule(2), &quad_rule(2).unwrap(), |_| grad);
                    let mw = &el.mass * DVector::from_column_slice(&w);
                    let th: f64 = data.theta.dofs[k].iter().zip(mw.iter()).map(|(a, b)| a * b).sum();
                    let vv: f64 = data.loads[k].iter().zip(&w).map(|(a, b)| a * b).sum();
                    assert!((th - vv).abs() < 1e-10 * vv.abs().max(1e-3), "p={p} k={k}");
                }
            }
        }
    }

    fn solve_all(space: &Arc<RtnSpace>, field: &dyn VectorField, variant: Variant) -> Vec<(PatchProblem, PatchSolution)> {
        let tspace = RtnSpace::new(space.mesh().clone(), variant.theta_degree(space.degree()).unwrap()).unwrap();
        let theta = compute_theta(field, &tspace, &QuadPolicy::default()).unwrap().value.theta;
        (0..space.mesh().num_vertices())
            .map(|a| {
                let (prob, _) = build_patch_problem(space, a, &theta, field, variant, &QuadPolicy::default()).unwrap();
                let sol = patch_equilibrate(space, &prob).unwrap();
                (prob, sol)
            })
            .collect()
    }

    #[test]
    fn patch_target_feasible_for_conforming_input() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap());
        for p in 0..3 {
            let space = RtnSpace::new(mesh.clone(), p).unwrap();
            let v = random_conforming(space.clone(), 9);
            for (prob, sol) in solve_all(&space, &v, Variant::Def31) {
                if prob.space.class != VertexClass::Interior {
                    continue;
                }
                assert!(sol.distance < 1e-11, "p={p} a={}: {:e}", sol.vertex, sol.distance);
            }
            let zero = crate::space::ConformingRtnField::zeros(space.clone());
            for (prob, sol) in solve_all(&space, &zero, Variant::Def31) {
                assert!(prob.g.iter().flatten().all(|x| *x == 0.0));
                assert!(sol.dofs.iter().all(|x| *x == 0.0));
            }
        }
    }

    #[test]
    fn cubic_center_vertex_compatibility() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap());
        let space = RtnSpace::new(mesh.clone(), 1).unwrap();
        let tspace = space.clone();
        let v = AnalyticField::cubic();
        let theta = compute_theta(&v, &tspace, &QuadPolicy::default()).unwrap().value.theta;
        assert_eq!(mesh.patch(4).class, VertexClass::Interior);
        let (prob, _) = build_patch_problem(&space, 4, &theta, &v, Variant::Def31, &QuadPolicy::default()).unwrap();
        assert!(prob.compat_residual < 1e-10, "{:e}", prob.compat_residual);
    }

    #[test]
    fn patch_solution_matches_pseudoinverse_oracle() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap());
        let space = RtnSpace::new(mesh.clone(), 0).unwrap();
        let v = AnalyticField::cubic();
        let theta = compute_theta(&v, &space, &QuadPolicy::default()).unwrap().value.theta;
        let (prob, _) = build_patch_problem(&space, 4, &theta, &v, Variant::Def31, &QuadPolicy::default()).unwrap();
        let sol = patch_equilibrate(&space, &prob).unwrap();

        // oracle: the unbordered KKT matrix is singular (constant multiplier);
        // with mean-free data its minimum-norm solution has the unique primal part
        let (m, b, f, mut g, _) = assemble_patch(&space, &prob);
        let ns = dim_scalar(0);
        let area: f64 = prob.space.elements.iter().map(|&k| mesh.geometry(k).det / 2.0).sum();
        let mean: f64 = prob
            .space
            .elements
            .iter()
            .enumerate()
            .map(|(kk, &k)| mesh.geometry(k).det * prob.g[kk][0] / 2f64.sqrt())
            .sum::<f64>()
            / area;
        for (kk, &k) in prob.space.elements.iter().enumerate() {
            g[kk * ns] -= mean * mesh.geometry(k).det / 2f64.sqrt();
        }
        let (n, q) = (m.nrows(), b.nrows());
        let mut kkt = DMatrix::zeros(n + q, n + q);
        kkt.view_mut((0, 0), (n, n)).copy_from(&m);
        kkt.view_mut((n, 0), (q, n)).copy_from(&b);
        kkt.view_mut((0, n), (n, q)).copy_from(&b.transpose());
        let mut rhs = DVector::zeros(n + q);
        rhs.rows_mut(0, n).copy_from(&f);
        rhs.rows_mut(n, q).copy_from(&g);
        let x = kkt.svd(true, true).solve(&rhs, 1e-12).unwrap();
        for i in 0..n {
            assert!((x[i] - sol.dofs[i]).abs() < 1e-10, "{} vs {}", x[i], sol.dofs[i]);
        }
    }

    #[test]
    fn zero_extension_is_conforming_and_divergence_exact() {
        let rules = [
            BoundaryRule::AllDirichlet,
            BoundaryRule::NeumannSides(vec![crate::mesh::Side::Bottom, crate::mesh::Side::Left]),
        ];
        for rule in rules {
            let mesh = Arc::new(Mesh::unit_square(3, &rule).unwrap());
            for p in 0..3 {
                let space = RtnSpace::new(mesh.clone(), p).unwrap();
                // (x y, -y²/2) is divergence free with zero normal trace on x = 0 and y = 0
                let v = AnalyticField::new(info("poly"), |x| [x[0] * x[1], -0.5 * x[1] * x[1]], |_| 0.0);
                for variant in [Variant::Def31, Variant::Def52] {
                    if variant == Variant::Def52 && p == 0 {
                        continue;
                    }
                    for (prob, sol) in solve_all(&space, &v, variant) {
                        let mut broken = BrokenRtnField::zeros(space.clone());
                        for (kk, &k) in prob.space.elements.iter().enumerate() {
                            broken.dofs[k] = prob.space.element_dofs(&sol.dofs, kk);
                        }
                        let (jump, neumann) = broken.normal_trace_defects();
                        assert!(jump < 1e-11 && neumann < 1e-12);
                        assert!(sol.div_error < 1e-11, "{:e}", sol.div_error);
                        assert!(sol.kkt_residual < 1e-10);
                        assert!(sol.mu.abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn variant_parsing_and_degree() {
        assert_eq!("def52".parse::<Variant>().unwrap(), Variant::Def52);
        assert!("def99".parse::<Variant>().is_err());
        assert!(Variant::Def52.theta_degree(0).is_err());
        assert_eq!(Variant::Def31.theta_degree(2).unwrap(), 2);
    }

    #[test]
    fn weak_divergence_identity_holds_at_interior_vertices() {
        let mesh = Arc::new(Mesh::unit_square(4, &BoundaryRule::AllDirichlet).unwrap());
        let v = AnalyticField::cubic();
        let pol = QuadPolicy::default();
        for p in 0..3 {
            let space = RtnSpace::new(mesh.clone(), p).unwrap();
            let theta = compute_theta(&v, &space, &pol).unwrap().value.theta;
            let mut boundary_max = 0.0f64;
            for a in 0..mesh.num_vertices() {
                let (r, scale) = weak_divergence_residual(&v, &theta, a, &pol).unwrap();
                if mesh.patch(a).class == VertexClass::Interior {
                    assert!(r <= 1e-9 * scale, "p={p} a={a}: {r:e}");
                } else {
                    boundary_max = boundary_max.max(r / scale);
                }
            }
            assert!(boundary_max > 1e-3);
        }
    }
}
