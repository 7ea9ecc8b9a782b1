//! Continuous piecewise `P_q` with zero trace on the whole boundary.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::{ElementGeometry, Mesh};

/// Degrees above this get a conditioning warning (equispaced nodes).
pub const WELL_CONDITIONED_DEGREE: usize = 4;

/// Nodal basis on the reference triangle, stored as monomial coefficients.
#[derive(Debug, Clone)]
struct RefLagrange {
    q: usize,
    /// `(a, b)` exponents of the monomials `x^a y^b`.
    exps: Vec<(usize, usize)>,
    /// Column `j` holds the monomial coefficients of basis function `j`.
    coeffs: DMatrix<f64>,
}

impl RefLagrange {
    fn new(q: usize, nodes: &[[f64; 2]]) -> Result<Self> {
        let exps: Vec<(usize, usize)> = (0..=q).flat_map(|d| (0..=d).map(move |b| (d - b, b))).collect();
        let n = exps.len();
        let v = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = exps[j];
            nodes[i][0].powi(a as i32) * nodes[i][1].powi(b as i32)
        });
        let coeffs = v
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("Lagrange Vandermonde matrix of degree {q}")))?
            .transpose();
        Ok(RefLagrange { q, exps, coeffs })
    }

    fn monomials(&self, xh: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let pw = |x: f64, k: usize| if k == 0 { 1.0 } else { x.powi(k as i32) };
        let vals = self.exps.iter().map(|&(a, b)| pw(xh[0], a) * pw(xh[1], b)).collect();
        let grads = self
            .exps
            .iter()
            .map(|&(a, b)| {
                let dx = if a == 0 { 0.0 } else { a as f64 * pw(xh[0], a - 1) * pw(xh[1], b) };
                let dy = if b == 0 { 0.0 } else { b as f64 * pw(xh[0], a) * pw(xh[1], b - 1) };
                [dx, dy]
            })
            .collect();
        (vals, grads)
    }

    fn eval(&self, xh: [f64; 2]) -> Vec<f64> {
        let (m, _) = self.monomials(xh);
        (0..m.len()).map(|j| (0..m.len()).map(|i| self.coeffs[(j, i)] * m[i]).sum()).collect()
    }

    fn eval_grad(&self, xh: [f64; 2]) -> Vec<[f64; 2]> {
        let (_, g) = self.monomials(xh);
        (0..g.len())
            .map(|j| {
                let mut s = [0.0, 0.0];
                for (i, gi) in g.iter().enumerate() {
                    s[0] += self.coeffs[(j, i)] * gi[0];
                    s[1] += self.coeffs[(j, i)] * gi[1];
                }
                s
            })
            .collect()
    }
}

/// Reference nodes: vertices, then `q-1` nodes per local edge running from
/// local vertex `(e+1)%3` to `(e+2)%3`, then interior lattice nodes.
fn reference_nodes(q: usize) -> Vec<[f64; 2]> {
    let v = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let qf = q as f64;
    let mut nodes = v.to_vec();
    for e in 0..3 {
        let (a, b) = (v[(e + 1) % 3], v[(e + 2) % 3]);
        for s in 1..q {
            let t = s as f64 / qf;
            nodes.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    for j in 1..q {
        for i in 1..q - j {
            nodes.push([i as f64 / qf, j as f64 / qf]);
        }
    }
    nodes
}

#[derive(Debug)]
pub struct LagrangeSpace {
    mesh: Arc<Mesh>,
    basis: RefLagrange,
    /// Local node to free-dof index (`None` on the boundary).
    maps: Vec<Vec<Option<usize>>>,
    nfree: usize,
    pub warning: Option<String>,
}

impl LagrangeSpace {
    pub fn new(mesh: Arc<Mesh>, q: usize) -> Result<Arc<Self>> {
        if q == 0 {
            return Err(Error::UnsupportedDegree(q));
        }
        let basis = RefLagrange::new(q, &reference_nodes(q))?;
        let nv = mesh.num_vertices();
        let ne_edges = mesh.num_edges();
        let per_edge = q - 1;
        let per_elem = (q - 1) * q.saturating_sub(2) / 2;
        let mut on_boundary = vec![false; nv + ne_edges * per_edge + mesh.num_elements() * per_elem];
        for (e, ed) in mesh.edges().iter().enumerate() {
            if ed.is_boundary() {
                on_boundary[ed.vertices[0]] = true;
                on_boundary[ed.vertices[1]] = true;
                for s in 0..per_edge {
                    on_boundary[nv + e * per_edge + s] = true;
                }
            }
        }
        let mut free = vec![None; on_boundary.len()];
        let mut nfree = 0;
        for (g, b) in on_boundary.iter().enumerate() {
            if !b {
                free[g] = Some(nfree);
                nfree += 1;
            }
        }
        let maps = (0..mesh.num_elements())
            .map(|k| {
                let tri = mesh.triangles()[k];
                let edges = mesh.element_edges(k);
                let mut m: Vec<Option<usize>> = tri.iter().map(|&a| free[a]).collect();
                for (e, &ge) in edges.iter().enumerate() {
                    let forward = tri[(e + 1) % 3] < tri[(e + 2) % 3];
                    for s in 1..q {
                        let slot = if forward { s - 1 } else { q - 1 - s };
                        m.push(free[nv + ge * per_edge + slot]);
                    }
                }
                let base = nv + ne_edges * per_edge + k * per_elem;
                m.extend((0..per_elem).map(|i| free[base + i]));
                m
            })
            .collect();
        let warning = (q > WELL_CONDITIONED_DEGREE)
            .then(|| format!("Lagrange degree {q} on equispaced nodes may be ill-conditioned"));
        Ok(Arc::new(LagrangeSpace {
            mesh,
            basis,
            maps,
            nfree,
            warning,
        }))
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.basis.q
    }

    /// Number of free (interior) dofs.
    pub fn ndofs(&self) -> usize {
        self.nfree
    }

    pub fn local_len(&self) -> usize {
        self.basis.exps.len()
    }

    pub fn local_to_free(&self, k: usize) -> &[Option<usize>] {
        &self.maps[k]
    }

    /// Reference values of the local basis.
    pub fn eval_basis(&self, xh: [f64; 2]) -> Vec<f64> {
        self.basis.eval(xh)
    }

    /// Physical gradients of the local basis of element `k`.
    pub fn grad_basis(&self, k: usize, xh: [f64; 2]) -> Vec<[f64; 2]> {
        let g = self.mesh.geometry(k);
        self.basis.eval_grad(xh).into_iter().map(|d| phys_grad(g, d)).collect()
    }

    pub fn eval(&self, coeffs: &[f64], k: usize, xh: [f64; 2]) -> f64 {
        let vals = self.eval_basis(xh);
        self.maps[k].iter().zip(vals).filter_map(|(g, v)| g.map(|g| coeffs[g] * v)).sum()
    }

    pub fn grad(&self, coeffs: &[f64], k: usize, xh: [f64; 2]) -> [f64; 2] {
        let mut s = [0.0, 0.0];
        for (g, d) in self.maps[k].iter().zip(self.grad_basis(k, xh)) {
            if let Some(g) = g {
                s[0] += coeffs[*g] * d[0];
                s[1] += coeffs[*g] * d[1];
            }
        }
        s
    }
}

/// `B^{-T} d` for a reference gradient `d`.
pub fn phys_grad(g: &ElementGeometry, d: [f64; 2]) -> [f64; 2] {
    [
        g.binv_t[0][0] * d[0] + g.binv_t[0][1] * d[1],
        g.binv_t[1][0] * d[0] + g.binv_t[1][1] * d[1],
    ]
}
