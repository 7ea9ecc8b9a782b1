//! Physical RTN elements: contravariant Piola map, the physical dual basis and
//! the element matrices.
//!
//! Physical degrees of freedom on element `K` are
//! * edge moments `∫_F (w·n_F) q_k ds`, with `n_F` the global edge normal and
//!   `q_k` the `L²(F)`-orthonormal Legendre polynomials parametrised along the
//!   global (lower→higher vertex) direction, so both neighbours of an interior
//!   edge produce the same values;
//! * interior moments `∫_K w_c (φ̂_i ∘ F⁻¹)` for `φ̂_i ∈ P_{p-1}(K̂)`.
//!
//! The scalar basis on `K` is `φ̂_i ∘ F⁻¹` without rescaling, hence the scalar
//! mass matrix is `det B · I`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::basis::{
    dim_scalar, local_edge_vertices, ref_edge_length, ref_edge_point, rtn_basis, RtnBasis,
};
use crate::error::{Error, Result};
use crate::mesh::{ElementGeometry, Mesh};
use crate::poly::legendre_unit;
use crate::quadrature::{LineRule, QuadRule};

/// Contravariant Piola map `w = B ŵ / det B`.
pub fn piola_map(geom: &ElementGeometry, w_ref: [f64; 2]) -> Result<[f64; 2]> {
    if !(geom.det > 0.0) {
        return Err(Error::Orientation {
            elem: usize::MAX,
            det: geom.det,
        });
    }
    Ok(piola(geom, w_ref))
}

#[inline]
fn piola(geom: &ElementGeometry, w: [f64; 2]) -> [f64; 2] {
    let b = &geom.b;
    [
        (b[0][0] * w[0] + b[0][1] * w[1]) / geom.det,
        (b[1][0] * w[0] + b[1][1] * w[1]) / geom.det,
    ]
}

/// `RTN_p(K)` on one physical triangle.
#[derive(Debug, Clone)]
pub struct RtnElement {
    pub degree: usize,
    pub geom: ElementGeometry,
    pub basis: Arc<RtnBasis>,
    /// Orientation signs of the local edges against the global edge normals.
    pub signs: [f64; 3],
    /// Raw-basis coefficients of the physical dual basis (one column per dof).
    pub coeffs: DMatrix<f64>,
    /// `M[m, n] = (N_m, N_n)_K`.
    pub mass: DMatrix<f64>,
    /// `B[i, m] = (∇·N_m, φ_i)_K`.
    pub div: DMatrix<f64>,
}

/// Element matrices of `RTN_p(K)` and `P_p(K)`.
#[derive(Debug, Clone)]
pub struct ElementMatrices {
    pub mass: DMatrix<f64>,
    pub div: DMatrix<f64>,
    pub scalar_mass: DMatrix<f64>,
}

impl RtnElement {
    pub fn new(geom: ElementGeometry, signs: [f64; 3], p: usize) -> Result<Self> {
        if !(geom.det > 0.0) {
            return Err(Error::Orientation {
                elem: usize::MAX,
                det: geom.det,
            });
        }
        let basis = rtn_basis(p)?;
        let n = basis.len();
        // Physical dofs are A · (reference dofs), A block diagonal.
        let mut a_inv = DMatrix::zeros(n, n);
        for e in 0..3 {
            let ratio = (ref_edge_length(e) / geom.edge_length(e)).sqrt();
            for k in 0..=p {
                let s = if k % 2 == 0 { signs[e] } else { 1.0 };
                let r = e * (p + 1) + k;
                a_inv[(r, r)] = 1.0 / (s * ratio);
            }
        }
        let bi = {
            let b = &geom.b;
            let d = geom.det;
            [[b[1][1] / d, -b[0][1] / d], [-b[1][0] / d, b[0][0] / d]]
        };
        let n_low = if p == 0 { 0 } else { dim_scalar(p - 1) };
        for i in 0..n_low {
            let r = 3 * (p + 1) + 2 * i;
            for c in 0..2 {
                for d in 0..2 {
                    a_inv[(r + c, r + d)] = bi[c][d];
                }
            }
        }
        let coeffs = &basis.dual * a_inv;

        let b = &geom.b;
        let btb = [
            [b[0][0] * b[0][0] + b[1][0] * b[1][0], b[0][0] * b[0][1] + b[1][0] * b[1][1]],
            [b[0][1] * b[0][0] + b[1][1] * b[1][0], b[0][1] * b[0][1] + b[1][1] * b[1][1]],
        ];
        let mut raw_mass = DMatrix::zeros(n, n);
        for a in 0..2 {
            for c in 0..2 {
                raw_mass += &basis.mass_tensor[2 * a + c] * (btb[a][c] / geom.det);
            }
        }
        let mut mass = coeffs.transpose() * raw_mass * &coeffs;
        // symmetrize away rounding so downstream KKT blocks are exactly symmetric
        let mt = mass.transpose();
        mass = (mass + mt) * 0.5;
        let div = &basis.div_coeffs * &coeffs;
        Ok(RtnElement {
            degree: p,
            geom,
            basis,
            signs,
            coeffs,
            mass,
            div,
        })
    }

    pub fn from_mesh(mesh: &Mesh, k: usize, p: usize) -> Result<Self> {
        RtnElement::new(*mesh.geometry(k), mesh.element_signs(k), p).map_err(|e| match e {
            Error::Orientation { det, .. } => Error::Orientation { elem: k, det },
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn det(&self) -> f64 {
        self.geom.det
    }

    pub fn matrices(&self) -> ElementMatrices {
        let ns = dim_scalar(self.degree);
        ElementMatrices {
            mass: self.mass.clone(),
            div: self.div.clone(),
            scalar_mass: DMatrix::identity(ns, ns) * self.geom.det,
        }
    }

    /// Physical values of all dual basis functions at reference point `xh`.
    pub fn eval_basis(&self, xh: [f64; 2]) -> Vec<[f64; 2]> {
        let raw = self.basis.eval_raw(xh);
        (0..self.len())
            .map(|m| {
                let mut w = [0.0, 0.0];
                for (j, r) in raw.iter().enumerate() {
                    let c = self.coeffs[(j, m)];
                    w[0] += c * r[0];
                    w[1] += c * r[1];
                }
                piola(&self.geom, w)
            })
            .collect()
    }

    /// Physical value at reference point `xh` of the field with the given dofs.
    pub fn eval(&self, dofs: &[f64], xh: [f64; 2]) -> [f64; 2] {
        self.eval_raw_coeffs(&self.raw_coeffs(dofs), xh)
    }

    /// Raw-basis coefficients `C · dofs`, for repeated evaluation.
    pub fn raw_coeffs(&self, dofs: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|j| (0..dofs.len()).map(|m| self.coeffs[(j, m)] * dofs[m]).sum())
            .collect()
    }

    /// Physical value at `xh` of the field with raw coefficients `raw`.
    pub fn eval_raw_coeffs(&self, raw: &[f64], xh: [f64; 2]) -> [f64; 2] {
        let vals = self.basis.eval_raw(xh);
        let mut w = [0.0, 0.0];
        for (c, r) in raw.iter().zip(&vals) {
            w[0] += c * r[0];
            w[1] += c * r[1];
        }
        piola(&self.geom, w)
    }

    /// Physical divergence at `xh` of the field with raw coefficients `raw`.
    pub fn div_raw_coeffs(&self, raw: &[f64], xh: [f64; 2]) -> f64 {
        let d = self.basis.eval_raw_div(xh);
        raw.iter().zip(&d).map(|(c, d)| c * d).sum::<f64>() / self.geom.det
    }

    /// Coefficients of `∇·w` in the scalar basis `φ̂_i ∘ F⁻¹`.
    pub fn div_of(&self, dofs: &[f64]) -> Vec<f64> {
        let ns = self.div.nrows();
        (0..ns)
            .map(|i| (0..dofs.len()).map(|m| self.div[(i, m)] * dofs[m]).sum::<f64>() / self.geom.det)
            .collect()
    }

    /// `(f, N_m)_K` for a vector field given by its physical values at reference points.
    pub fn load(&self, rule: &QuadRule, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let n = self.len();
        let b = &self.geom.b;
        let mut raw_load = vec![0.0; n];
        for (xh, &w) in rule.points.iter().zip(&rule.weights) {
            let v = f(*xh);
            // (v, B ŵ / J)_K = ∫_{K̂} (Bᵀ v)·ŵ
            let btv = [b[0][0] * v[0] + b[1][0] * v[1], b[0][1] * v[0] + b[1][1] * v[1]];
            for (j, r) in self.basis.eval_raw(*xh).iter().enumerate() {
                raw_load[j] += w * (btv[0] * r[0] + btv[1] * r[1]);
            }
        }
        (0..n)
            .map(|m| (0..n).map(|j| self.coeffs[(j, m)] * raw_load[j]).sum())
            .collect()
    }

    /// Canonical interpolation dofs of a field given by its physical values at
    /// reference points (edges use `line`, the interior uses `rule`).
    pub fn interpolate(
        &self,
        line: &LineRule,
        rule: &QuadRule,
        f: impl Fn([f64; 2]) -> [f64; 2],
    ) -> Vec<f64> {
        self.interpolate_with([line, line, line], rule, f)
    }

    /// As [`RtnElement::interpolate`] with a separate line rule per local edge,
    /// each in the local edge parameter.
    pub fn interpolate_with(
        &self,
        lines: [&LineRule; 3],
        rule: &QuadRule,
        f: impl Fn([f64; 2]) -> [f64; 2],
    ) -> Vec<f64> {
        let p = self.degree;
        let mut dofs = Vec::with_capacity(self.len());
        for e in 0..3 {
            let (n_out, len) = self.outward_normal(e);
            let mut moments = vec![0.0; p + 1];
            for (&t, &w) in lines[e].points.iter().zip(&lines[e].weights) {
                let v = f(ref_edge_point(e, t));
                let vn = v[0] * n_out[0] + v[1] * n_out[1];
                for (k, m) in moments.iter_mut().enumerate() {
                    *m += w * vn * legendre_unit(k, t);
                }
            }
            for (k, m) in moments.into_iter().enumerate() {
                let s = if k % 2 == 0 { self.signs[e] } else { 1.0 };
                dofs.push(s * len.sqrt() * m);
            }
        }
        let n_low = if p == 0 { 0 } else { dim_scalar(p - 1) };
        if n_low > 0 {
            let mut interior = vec![0.0; 2 * n_low];
            for (xh, &w) in rule.points.iter().zip(&rule.weights) {
                let v = f(*xh);
                let phi = self.basis.scalar.eval(*xh);
                for i in 0..n_low {
                    interior[2 * i] += w * v[0] * phi[i];
                    interior[2 * i + 1] += w * v[1] * phi[i];
                }
            }
            dofs.extend(interior.into_iter().map(|x| x * self.geom.det));
        }
        dofs
    }

    /// Physical outward unit normal and length of local edge `e`.
    pub fn outward_normal(&self, e: usize) -> ([f64; 2], f64) {
        let (a, b) = local_edge_vertices(e);
        let (p, q) = (self.geom.vertices[a], self.geom.vertices[b]);
        let len = self.geom.edge_length(e);
        ([(q[1] - p[1]) / len, -(q[0] - p[0]) / len], len)
    }

    /// Exact-degree dofs of `ψ θ` for an affine `ψ` given by its values at the
    /// three vertices and `θ ∈ RTN_q(K)` with dofs `theta` on element `other`.
    pub fn interpolate_affine_product(
        &self,
        psi: [f64; 3],
        other: &RtnElement,
        theta: &[f64],
    ) -> Result<Vec<f64>> {
        let deg = other.degree + 2 + self.degree;
        let line = crate::quadrature::line_rule(deg);
        let rule = crate::quadrature::quad_rule(deg)?;
        let raw = other.raw_coeffs(theta);
        Ok(self.interpolate(&line, &rule, |xh| {
            let l = ElementGeometry::barycentric(xh);
            let s = psi[0] * l[0] + psi[1] * l[1] + psi[2] * l[2];
            let v = other.eval_raw_coeffs(&raw, xh);
            [s * v[0], s * v[1]]
        }))
    }
}

/// Element matrices of `RTN_p(K) × P_p(K)` on element `k` of `mesh`.
pub fn element_matrices(mesh: &Mesh, k: usize, p: usize) -> Result<ElementMatrices> {
    Ok(RtnElement::from_mesh(mesh, k, p)?.matrices())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::dim_rtn;
    use crate::quadrature::{line_rule, quad_rule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_triangle(rng: &mut ChaCha8Rng) -> ElementGeometry {
        loop {
            let v: [[f64; 2]; 3] =
                std::array::from_fn(|_| [rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0)]);
            let g = ElementGeometry::new(v);
            if g.det > 0.2 {
                return g;
            }
        }
    }

    fn reference() -> ElementGeometry {
        ElementGeometry::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    }

    #[test]
    fn piola_examples() {
        let g = reference();
        assert_eq!(piola_map(&g, [0.3, -0.2]).unwrap(), [0.3, -0.2]);
        let g2 = ElementGeometry::new([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]);
        assert_eq!(piola_map(&g2, [1.0, 1.0]).unwrap(), [0.5, 0.5]);
        // div w = div ŵ / det B, and det B = 4 for scaling by 2
        let el = RtnElement::new(g2, [1.0; 3], 0).unwrap();
        let el_ref = RtnElement::new(g, [1.0; 3], 0).unwrap();
        let dofs = [0.3, -1.1, 0.7];
        let d_ref = el_ref.div_of(&dofs)[0];
        // dofs of the Piola image: edge moments scale by sqrt(|F̂| / |F|)
        let mapped: Vec<f64> = (0..3)
            .map(|e| dofs[e] * (ref_edge_length(e) / el.geom.edge_length(e)).sqrt())
            .collect();
        let d_mapped = el.div_of(&mapped)[0];
        assert!((d_mapped / d_ref - 0.25).abs() < 1e-14);
        let flipped = ElementGeometry::new([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        assert!(matches!(piola_map(&flipped, [1.0, 0.0]), Err(Error::Orientation { .. })));
        assert!(matches!(RtnElement::new(flipped, [1.0; 3], 0), Err(Error::Orientation { .. })));
    }

    #[test]
    fn interpolation_reproduces_rtn_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in 0..=3 {
            for _ in 0..3 {
                let g = random_triangle(&mut rng);
                let signs = std::array::from_fn(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
                let el = RtnElement::new(g, signs, p).unwrap();
                let dofs: Vec<f64> = (0..dim_rtn(p)).map(|_| rng.random_range(-1.0..1.0)).collect();
                let back = el.interpolate(&line_rule(2 * p + 2), &quad_rule(2 * p + 2).unwrap(), |xh| {
                    el.eval(&dofs, xh)
                });
                for (a, b) in dofs.iter().zip(&back) {
                    assert!((a - b).abs() < 1e-12, "p={p}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn mass_matches_quadrature_and_is_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in 0..=3 {
            let el = RtnElement::new(random_triangle(&mut rng), [1.0, -1.0, 1.0], p).unwrap();
            let rule = quad_rule(2 * p + 2).unwrap();
            let n = el.len();
            let mut m = DMatrix::zeros(n, n);
            for (xh, &w) in rule.points.iter().zip(&rule.weights) {
                let vals = el.eval_basis(*xh);
                for i in 0..n {
                    for j in 0..n {
                        m[(i, j)] += w * el.det() * (vals[i][0] * vals[j][0] + vals[i][1] * vals[j][1]);
                    }
                }
            }
            assert!((&m - &el.mass).amax() < 1e-11 * el.mass.amax());
            let eig = el.mass.clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() > 0.0);
            let rank = el.div.clone().svd(false, false).rank(1e-10 * el.div.amax());
            assert_eq!(rank, dim_scalar(p));
        }
    }

    #[test]
    fn divergence_of_position_vector() {
        // x = (x, y) lies in RTN_0 on K̂ and (∇·x, 1) = 2|K̂| = 1
        let el = RtnElement::new(reference(), [1.0; 3], 0).unwrap();
        let dofs = el.interpolate(&line_rule(2), &quad_rule(2).unwrap(), |xh| xh);
        let phi0 = el.basis.scalar.eval([0.2, 0.2])[0];
        let integral = el.div[(0, 0)] * dofs[0] + el.div[(0, 1)] * dofs[1] + el.div[(0, 2)] * dofs[2];
        assert!((integral / phi0 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn divergence_two_ways() {
        // mapped reference divergence vs differentiating the mapped field
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 0..=3 {
            let el = RtnElement::new(random_triangle(&mut rng), [1.0, 1.0, -1.0], p).unwrap();
            let dofs: Vec<f64> = (0..el.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let raw: Vec<f64> = (0..el.len())
                .map(|j| (0..el.len()).map(|m| el.coeffs[(j, m)] * dofs[m]).sum())
                .collect();
            let xh = [0.21, 0.33];
            let coeff = el.div_of(&dofs);
            let phi = el.basis.scalar.eval(xh);
            let mapped: f64 = coeff.iter().zip(&phi).map(|(c, f)| c * f).sum();
            // ∂w/∂x = B (∂ŵ/∂x̂) B⁻¹ / J
            let mut jac = [[0.0; 2]; 2];
            for (j, w) in el.basis.raw_polys().iter().enumerate() {
                for c in 0..2 {
                    jac[c][0] += raw[j] * w[c].dx().eval(xh[0], xh[1]);
                    jac[c][1] += raw[j] * w[c].dy().eval(xh[0], xh[1]);
                }
            }
            let b = el.geom.b;
            let binv_t = el.geom.binv_t;
            let binv = [[binv_t[0][0], binv_t[1][0]], [binv_t[0][1], binv_t[1][1]]];
            let mut direct = 0.0;
            for c in 0..2 {
                for a in 0..2 {
                    for d in 0..2 {
                        direct += b[c][a] * jac[a][d] * binv[d][c];
                    }
                }
            }
            direct /= el.det();
            assert!((mapped - direct).abs() < 1e-11 * (1.0 + direct.abs()), "p={p}");
        }
    }

    #[test]
    fn edge_dofs_agree_across_shared_edges() {
        // Two triangles sharing the edge (1,0)-(0,1); the same global field
        // must produce identical dofs on that edge from both sides.
        let mesh = crate::mesh::Mesh::structured(
            1,
            [[0.0, 0.0], [1.0, 1.0]],
            &crate::mesh::BoundaryRule::AllDirichlet,
        )
        .unwrap();
        let f = |x: [f64; 2]| [x[0] * x[0] + x[1], x[0] * x[1] - 2.0 * x[1].powi(3)];
        for p in 0..=3 {
            let mut seen = std::collections::HashMap::new();
            for k in 0..mesh.num_elements() {
                let el = RtnElement::from_mesh(&mesh, k, p).unwrap();
                let dofs = el.interpolate(&line_rule(p + 8), &quad_rule(p + 8).unwrap(), |xh| {
                    f(el.geom.map(xh))
                });
                for (e, &edge) in mesh.element_edges(k).iter().enumerate() {
                    let mine = dofs[e * (p + 1)..(e + 1) * (p + 1)].to_vec();
                    if let Some(other) = seen.insert(edge, mine.clone()) {
                        let other: Vec<f64> = other;
                        for (a, b) in mine.iter().zip(&other) {
                            assert!((a - b).abs() < 1e-13, "p={p}");
                        }
                    }
                }
            }
        }
    }
}
