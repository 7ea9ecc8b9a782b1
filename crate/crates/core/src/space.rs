//! Global RTN spaces and the discrete field types built on them.
//!
//! Global dofs of `RTN_p ∩ H_{Γ_N}(div)` are numbered edge by edge (Neumann
//! edges carry none), followed by the interior dofs element by element.
//! Because physical edge dofs use the global edge orientation, the local and
//! global dofs of a conforming field agree without sign flips.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::{dim_rtn_interior, dim_scalar, local_edge_vertices};
use crate::element::RtnElement;
use crate::error::{Error, Result};
use crate::fields::{ElemPoint, FieldInfo, VectorField};
use crate::mesh::{BoundaryLabel, Mesh};
use crate::quadrature::line_rule;

#[derive(Debug)]
pub struct RtnSpace {
    mesh: Arc<Mesh>,
    degree: usize,
    elements: Vec<RtnElement>,
    edge_offset: Vec<Option<usize>>,
    interior_offset: Vec<usize>,
    ndofs: usize,
}

impl RtnSpace {
    pub fn new(mesh: Arc<Mesh>, p: usize) -> Result<Arc<Self>> {
        let elements = (0..mesh.num_elements())
            .into_par_iter()
            .map(|k| RtnElement::from_mesh(&mesh, k, p))
            .collect::<Result<Vec<_>>>()?;
        let mut next = 0;
        let edge_offset = mesh
            .edges()
            .iter()
            .map(|e| {
                if e.label == Some(BoundaryLabel::Neumann) {
                    None
                } else {
                    next += p + 1;
                    Some(next - p - 1)
                }
            })
            .collect();
        let ni = dim_rtn_interior(p);
        let interior_offset = (0..mesh.num_elements())
            .map(|_| {
                next += ni;
                next - ni
            })
            .collect();
        Ok(Arc::new(RtnSpace {
            mesh,
            degree: p,
            elements,
            edge_offset,
            interior_offset,
            ndofs: next,
        }))
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn ndofs(&self) -> usize {
        self.ndofs
    }

    pub fn element(&self, k: usize) -> &RtnElement {
        &self.elements[k]
    }

    pub fn elements(&self) -> &[RtnElement] {
        &self.elements
    }

    /// First global dof of edge `e`, `None` on Neumann edges.
    pub fn edge_offset(&self, e: usize) -> Option<usize> {
        self.edge_offset[e]
    }

    pub fn interior_offset(&self, k: usize) -> usize {
        self.interior_offset[k]
    }

    /// Global index of every local dof of element `k` (`None`: pinned to zero).
    pub fn local_to_global(&self, k: usize) -> Vec<Option<usize>> {
        let p = self.degree;
        let mut map = Vec::with_capacity(self.elements[k].len());
        for &e in &self.mesh.element_edges(k) {
            for i in 0..=p {
                map.push(self.edge_offset[e].map(|o| o + i));
            }
        }
        let o = self.interior_offset[k];
        map.extend((0..dim_rtn_interior(p)).map(|i| Some(o + i)));
        map
    }

    pub fn gather(&self, coeffs: &[f64], k: usize) -> Vec<f64> {
        self.local_to_global(k)
            .into_iter()
            .map(|g| g.map_or(0.0, |g| coeffs[g]))
            .collect()
    }

    /// Local dofs of a broken field that are shared between neighbours must
    /// agree for it to be conforming; this averages them into global dofs.
    pub fn conforming_from_broken(&self, broken: &BrokenRtnField) -> Vec<f64> {
        let mut sum = vec![0.0; self.ndofs];
        let mut count = vec![0.0; self.ndofs];
        for k in 0..self.mesh.num_elements() {
            for (m, g) in self.local_to_global(k).into_iter().enumerate() {
                if let Some(g) = g {
                    sum[g] += broken.dofs[k][m];
                    count[g] += 1.0;
                }
            }
        }
        sum.iter().zip(&count).map(|(s, c)| s / c).collect()
    }
}

/// Member of the conforming space `RTN_p ∩ H_{Γ_N}(div)`.
#[derive(Clone)]
pub struct ConformingRtnField {
    space: Arc<RtnSpace>,
    coeffs: Vec<f64>,
    raw: Vec<Vec<f64>>,
    info: FieldInfo,
}

impl std::fmt::Debug for ConformingRtnField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConformingRtnField")
            .field("degree", &self.space.degree)
            .field("ndofs", &self.coeffs.len())
            .finish()
    }
}

impl ConformingRtnField {
    pub fn new(space: Arc<RtnSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.ndofs() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                space.ndofs(),
                coeffs.len()
            )));
        }
        let raw = (0..space.mesh.num_elements())
            .map(|k| space.element(k).raw_coeffs(&space.gather(&coeffs, k)))
            .collect();
        let info = FieldInfo {
            name: format!("rtn{}", space.degree),
            regularity: f64::INFINITY,
            divergence_free: false,
            discrete_degree: Some(space.degree + 1),
            singular_point: None,
        };
        Ok(ConformingRtnField {
            space,
            coeffs,
            raw,
            info,
        })
    }

    pub fn zeros(space: Arc<RtnSpace>) -> Self {
        let n = space.ndofs();
        ConformingRtnField::new(space, vec![0.0; n]).expect("length matches")
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.info.name = name.into();
        self
    }

    pub fn space(&self) -> &Arc<RtnSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn local_dofs(&self, k: usize) -> Vec<f64> {
        self.space.gather(&self.coeffs, k)
    }

    pub fn to_broken(&self) -> BrokenRtnField {
        BrokenRtnField {
            space: self.space.clone(),
            dofs: (0..self.space.mesh.num_elements()).map(|k| self.local_dofs(k)).collect(),
        }
    }

    /// Divergence as a piecewise polynomial of the same degree.
    pub fn divergence_field(&self) -> ScalarPwField {
        self.to_broken().divergence_field()
    }
}

impl VectorField for ConformingRtnField {
    fn info(&self) -> &FieldInfo {
        &self.info
    }

    fn value(&self, pt: &ElemPoint) -> [f64; 2] {
        self.space.element(pt.elem).eval_raw_coeffs(&self.raw[pt.elem], pt.xhat)
    }

    fn divergence(&self, pt: &ElemPoint) -> f64 {
        self.space.element(pt.elem).div_raw_coeffs(&self.raw[pt.elem], pt.xhat)
    }
}

/// Elementwise `RTN_p` field without any continuity requirement.
#[derive(Debug, Clone)]
pub struct BrokenRtnField {
    pub space: Arc<RtnSpace>,
    /// Dual-basis dofs per element.
    pub dofs: Vec<Vec<f64>>,
}

impl BrokenRtnField {
    pub fn zeros(space: Arc<RtnSpace>) -> Self {
        let n = crate::basis::dim_rtn(space.degree);
        let dofs = vec![vec![0.0; n]; space.mesh.num_elements()];
        BrokenRtnField { space, dofs }
    }

    pub fn degree(&self) -> usize {
        self.space.degree
    }

    pub fn eval(&self, k: usize, xh: [f64; 2]) -> [f64; 2] {
        self.space.element(k).eval(&self.dofs[k], xh)
    }

    pub fn divergence_field(&self) -> ScalarPwField {
        ScalarPwField {
            degree: self.degree(),
            coeffs: (0..self.dofs.len())
                .map(|k| self.space.element(k).div_of(&self.dofs[k]))
                .collect(),
        }
    }

    /// `Σ_K ‖w‖²_K` through the element mass matrices.
    pub fn l2_norm_sq(&self) -> f64 {
        self.dofs
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let m = &self.space.element(k).mass;
                let mut s = 0.0;
                for i in 0..d.len() {
                    for j in 0..d.len() {
                        s += d[i] * m[(i, j)] * d[j];
                    }
                }
                s
            })
            .sum()
    }

    pub fn sub(&self, other: &BrokenRtnField) -> BrokenRtnField {
        BrokenRtnField {
            space: self.space.clone(),
            dofs: self
                .dofs
                .iter()
                .zip(&other.dofs)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        }
    }

    /// `(Σ_F ‖[[w·n_F]]‖²_F)^{1/2}` over interior edges, and the same over
    /// Neumann edges for the trace itself.
    pub fn normal_trace_defects(&self) -> (f64, f64) {
        let p = self.degree();
        let mesh = self.space.mesh.clone();
        let line = line_rule(2 * p + 2);
        let mut jump_sq = 0.0;
        let mut neumann_sq = 0.0;
        for edge in mesh.edges() {
            let (pa, pb) = (mesh.vertices()[edge.vertices[0]], mesh.vertices()[edge.vertices[1]]);
            let mut acc = 0.0;
            for (&t, &w) in line.points.iter().zip(&line.weights) {
                let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
                let mut jump = 0.0;
                // outward normal of k on this edge is s_k n_F
                for &(k, e_local) in &edge.elements {
                    let g = mesh.geometry(k);
                    let v = self.eval(k, g.inverse_map(x));
                    let vn = v[0] * edge.normal[0] + v[1] * edge.normal[1];
                    jump += mesh.element_signs(k)[e_local] * vn;
                }
                acc += w * edge.length * jump * jump;
            }
            match edge.label {
                None => jump_sq += acc,
                Some(BoundaryLabel::Neumann) => neumann_sq += acc,
                Some(BoundaryLabel::Dirichlet) => {}
            }
        }
        (jump_sq.sqrt(), neumann_sq.sqrt())
    }
}

/// Piecewise polynomial of degree `p` in the per-element basis `φ̂_i ∘ F_K⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPwField {
    pub degree: usize,
    pub coeffs: Vec<Vec<f64>>,
}

impl ScalarPwField {
    pub fn zeros(degree: usize, nelem: usize) -> Self {
        ScalarPwField {
            degree,
            coeffs: vec![vec![0.0; dim_scalar(degree)]; nelem],
        }
    }

    pub fn eval(&self, k: usize, xh: [f64; 2]) -> f64 {
        let phi = crate::basis::scalar_basis(self.degree).eval(xh);
        self.coeffs[k].iter().zip(&phi).map(|(c, f)| c * f).sum()
    }

    /// `‖f‖_K²`; the basis is orthogonal with `(φ_i, φ_j)_K = det B δ_ij`.
    pub fn l2_norm_sq_on(&self, mesh: &Mesh, k: usize) -> f64 {
        mesh.geometry(k).det * self.coeffs[k].iter().map(|c| c * c).sum::<f64>()
    }

    pub fn l2_norm(&self, mesh: &Mesh) -> f64 {
        (0..self.coeffs.len())
            .map(|k| self.l2_norm_sq_on(mesh, k))
            .sum::<f64>()
            .sqrt()
    }

    /// `∫_K f`.
    pub fn integral_on(&self, mesh: &Mesh, k: usize) -> f64 {
        // φ̂_0 = √2 and ∫_{K̂} φ̂_i = 0 for i > 0
        mesh.geometry(k).det * self.coeffs[k][0] / std::f64::consts::SQRT_2
    }

    pub fn sub(&self, other: &ScalarPwField) -> ScalarPwField {
        let degree = self.degree.max(other.degree);
        let n = dim_scalar(degree);
        let get = |f: &ScalarPwField, k: usize, i: usize| f.coeffs[k].get(i).copied().unwrap_or(0.0);
        ScalarPwField {
            degree,
            coeffs: (0..self.coeffs.len())
                .map(|k| (0..n).map(|i| get(self, k, i) - get(other, k, i)).collect())
                .collect(),
        }
    }

    /// Restriction to the first `dim P_q` coefficients, i.e. `Π^q` for `q ≤ p`.
    pub fn truncate(&self, q: usize) -> ScalarPwField {
        let n = dim_scalar(q);
        ScalarPwField {
            degree: q,
            coeffs: self.coeffs.iter().map(|c| c.iter().take(n).copied().collect()).collect(),
        }
    }
}

/// Seeded random member of `RTN_p ∩ H_{Γ_N}(div)` with coefficients in `[-1, 1]`.
pub fn random_conforming(space: Arc<RtnSpace>, seed: u64) -> ConformingRtnField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = (0..space.ndofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let p = space.degree();
    ConformingRtnField::new(space, coeffs)
        .expect("length matches")
        .with_name(&format!("random_rtn:{p}:{seed}"))
}

/// Seeded random broken field with dofs in `[-1, 1]`.
pub fn random_broken(space: Arc<RtnSpace>, seed: u64) -> BrokenRtnField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = crate::basis::dim_rtn(space.degree());
    let dofs = (0..space.mesh().num_elements())
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    BrokenRtnField { space, dofs }
}

/// Endpoints of local edge `e` of element `k`, in the local direction.
pub fn local_edge_endpoints(mesh: &Mesh, k: usize, e: usize) -> ([f64; 2], [f64; 2]) {
    let (a, b) = local_edge_vertices(e);
    let g = mesh.geometry(k);
    (g.vertices[a], g.vertices[b])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundaryRule, Side};

    #[test]
    fn dof_counts() {
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap());
        for p in 0..3 {
            let s = RtnSpace::new(mesh.clone(), p).unwrap();
            assert_eq!(s.ndofs(), 16 * (p + 1) + 8 * dim_rtn_interior(p));
        }
        let mesh = Arc::new(Mesh::unit_square(2, &BoundaryRule::NeumannSides(vec![Side::Left])).unwrap());
        let s = RtnSpace::new(mesh, 1).unwrap();
        assert_eq!(s.ndofs(), 14 * 2 + 8 * 2);
    }

    #[test]
    fn random_samples_are_conforming() {
        let mesh = Arc::new(
            Mesh::unit_square(3, &BoundaryRule::NeumannSides(vec![Side::Top, Side::Left])).unwrap(),
        );
        for p in 0..=3 {
            let s = RtnSpace::new(mesh.clone(), p).unwrap();
            let f = random_conforming(s.clone(), 4);
            let (jump, neumann) = f.to_broken().normal_trace_defects();
            assert!(jump < 1e-11 && neumann < 1e-12, "p={p}: {jump:e} {neumann:e}");
            let b = random_broken(s, 4);
            assert!(b.normal_trace_defects().0 > 1e-3);
        }
    }

    #[test]
    fn scalar_field_helpers() {
        let mesh = Mesh::unit_square(1, &BoundaryRule::AllDirichlet).unwrap();
        let mut f = ScalarPwField::zeros(1, 2);
        f.coeffs[0][0] = std::f64::consts::SQRT_2; // constant 2
        assert!((f.integral_on(&mesh, 0) - 1.0).abs() < 1e-15);
        assert!((f.l2_norm(&mesh) - 2f64.sqrt()).abs() < 1e-15);
        assert!((f.eval(0, [0.3, 0.3]) - 2.0).abs() < 1e-14);
    }
}
