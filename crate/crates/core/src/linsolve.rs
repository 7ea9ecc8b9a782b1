//! Symmetric indefinite linear algebra.
//!
//! Dense systems use a Bunch–Kaufman `LDLᵀ` factorization with 1×1 and 2×2
//! pivots. Sparse systems go through faer's sparse LU (fill-reducing column
//! ordering, partial pivoting) run sequentially so results are bit-identical
//! across thread counts. Both paths apply one step of iterative refinement.

use std::collections::BTreeMap;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::lu::{factorize_symbolic_lu, NumericLu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, Par};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Growth-limiting constant of Bunch–Kaufman pivoting.
const ALPHA: f64 = 0.640_388_203_202_208; // (1 + √17) / 8

#[derive(Debug, Clone, Copy)]
enum Pivot {
    One(f64),
    /// Symmetric 2×2 block `[[a, b], [b, c]]`.
    Two(f64, f64, f64),
}

/// `P A Pᵀ = L D Lᵀ` with `L` unit lower triangular and `D` block diagonal.
#[derive(Debug, Clone)]
pub struct DenseLdlt {
    l: DMatrix<f64>,
    pivots: Vec<(usize, Pivot)>,
    /// `perm[i]` is the original index placed at position `i`.
    perm: Vec<usize>,
    a: DMatrix<f64>,
}

impl DenseLdlt {
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidArgument("matrix is not square".into()));
        }
        let scale = a.amax();
        let asym = (a - a.transpose()).amax();
        if asym > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument(format!(
                "matrix is not symmetric (max |A - Aᵀ| = {asym:e})"
            )));
        }
        let tiny = f64::EPSILON * n.max(1) as f64 * scale;
        let mut w = a.clone();
        let mut l = DMatrix::identity(n, n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = Vec::new();

        let swap = |w: &mut DMatrix<f64>, l: &mut DMatrix<f64>, perm: &mut Vec<usize>, i: usize, j: usize, k: usize| {
            if i == j {
                return;
            }
            w.swap_rows(i, j);
            w.swap_columns(i, j);
            perm.swap(i, j);
            for c in 0..k {
                let t = l[(i, c)];
                l[(i, c)] = l[(j, c)];
                l[(j, c)] = t;
            }
        };

        let mut k = 0;
        while k < n {
            let absakk = w[(k, k)].abs();
            let (imax, colmax) = (k + 1..n)
                .map(|i| (i, w[(i, k)].abs()))
                .fold((k, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if absakk.max(colmax) <= tiny {
                return Err(Error::Singular(format!(
                    "zero pivot column at step {k} of {n} (original index {}, |a_kk| = {absakk:e}, column max {colmax:e})",
                    perm[k]
                )));
            }
            let two_by_two = if absakk >= ALPHA * colmax {
                false
            } else {
                let rowmax = (k..n)
                    .filter(|&j| j != imax)
                    .map(|j| w[(imax, j)].abs())
                    .fold(0.0, f64::max);
                if absakk * rowmax >= ALPHA * colmax * colmax {
                    false
                } else if w[(imax, imax)].abs() >= ALPHA * rowmax {
                    swap(&mut w, &mut l, &mut perm, k, imax, k);
                    false
                } else {
                    swap(&mut w, &mut l, &mut perm, k + 1, imax, k);
                    true
                }
            };

            if !two_by_two {
                let d = w[(k, k)];
                for i in k + 1..n {
                    l[(i, k)] = w[(i, k)] / d;
                }
                for j in k + 1..n {
                    let ljd = l[(j, k)] * d;
                    if ljd == 0.0 {
                        continue;
                    }
                    for i in j..n {
                        w[(i, j)] -= l[(i, k)] * ljd;
                        w[(j, i)] = w[(i, j)];
                    }
                }
                pivots.push((k, Pivot::One(d)));
                k += 1;
            } else {
                let (a11, a21, a22) = (w[(k, k)], w[(k + 1, k)], w[(k + 1, k + 1)]);
                let det = a11 * a22 - a21 * a21;
                if det.abs() <= tiny * a21.abs().max(tiny) {
                    return Err(Error::Singular(format!(
                        "singular 2x2 pivot at step {k} of {n} (original indices {}, {})",
                        perm[k],
                        perm[k + 1]
                    )));
                }
                for i in k + 2..n {
                    let (x, y) = (w[(i, k)], w[(i, k + 1)]);
                    l[(i, k)] = (x * a22 - y * a21) / det;
                    l[(i, k + 1)] = (y * a11 - x * a21) / det;
                }
                for j in k + 2..n {
                    let (wj0, wj1) = (w[(j, k)], w[(j, k + 1)]);
                    for i in j..n {
                        w[(i, j)] -= l[(i, k)] * wj0 + l[(i, k + 1)] * wj1;
                        w[(j, i)] = w[(i, j)];
                    }
                }
                pivots.push((k, Pivot::Two(a11, a21, a22)));
                k += 2;
            }
        }
        Ok(DenseLdlt {
            l,
            pivots,
            perm,
            a: a.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    fn solve_once(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        for j in 0..n {
            let yj = y[j];
            if yj != 0.0 {
                for i in j + 1..n {
                    y[i] -= self.l[(i, j)] * yj;
                }
            }
        }
        for &(k, piv) in &self.pivots {
            match piv {
                Pivot::One(d) => y[k] /= d,
                Pivot::Two(a, b, c) => {
                    let det = a * c - b * b;
                    let (u, v) = (y[k], y[k + 1]);
                    y[k] = (c * u - b * v) / det;
                    y[k + 1] = (a * v - b * u) / det;
                }
            }
        }
        for j in (0..n).rev() {
            let mut s = y[j];
            for i in j + 1..n {
                s -= self.l[(i, j)] * y[i];
            }
            y[j] = s;
        }
        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }

    /// Solves `A x = b` with one refinement step; returns `x` and the
    /// relative residual `‖b - A x‖ / (‖A‖ ‖x‖ + ‖b‖)`.
    pub fn solve(&self, b: &DVector<f64>) -> (DVector<f64>, f64) {
        let mut x = self.solve_once(b);
        let r = b - &self.a * &x;
        x += self.solve_once(&r);
        let r = b - &self.a * &x;
        let denom = self.a.amax() * x.amax() + b.amax();
        let rel = if denom > 0.0 { r.amax() / denom } else { 0.0 };
        (x, rel)
    }
}

/// Dense saddle-point system `[[M, Bᵀ], [B, 0]]`, optionally bordered by a
/// vector `c` resolving a one-dimensional kernel of `Bᵀ`:
/// `[[M, Bᵀ, 0], [B, 0, c], [0, cᵀ, 0]]`.
///
/// With the border, the constraint becomes `B x + μ c = g`; when `c` spans
/// the directions of `g` not reachable by `B`, the incompatible part of `g`
/// is absorbed by `μ` and the multiplier is pinned by `cᵀ λ = 0`.
#[derive(Debug, Clone)]
pub struct DenseSaddle {
    pub m: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub border: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Border multiplier `μ` (zero without a border).
    pub mu: f64,
    pub residual: f64,
}

impl DenseSaddle {
    pub fn new(m: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        DenseSaddle { m, b, border: None }
    }

    pub fn with_border(mut self, c: DVector<f64>) -> Self {
        self.border = Some(c);
        self
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        let (n, q) = (self.m.nrows(), self.b.nrows());
        let extra = usize::from(self.border.is_some());
        let mut k = DMatrix::zeros(n + q + extra, n + q + extra);
        k.view_mut((0, 0), (n, n)).copy_from(&self.m);
        k.view_mut((n, 0), (q, n)).copy_from(&self.b);
        k.view_mut((0, n), (n, q)).copy_from(&self.b.transpose());
        if let Some(c) = &self.border {
            for i in 0..q {
                k[(n + i, n + q)] = c[i];
                k[(n + q, n + i)] = c[i];
            }
        }
        k
    }

    /// Solves `M x + Bᵀ λ = f`, `B x (+ μ c) = g`.
    pub fn solve(&self, f: &DVector<f64>, g: &DVector<f64>) -> Result<SaddleSolution> {
        let (n, q) = (self.m.nrows(), self.b.nrows());
        if self.m.ncols() != n || self.b.ncols() != n || f.len() != n || g.len() != q {
            return Err(Error::InvalidArgument("saddle block dimensions disagree".into()));
        }
        let k = self.assemble();
        let ldlt = DenseLdlt::factor(&k).map_err(|e| match e {
            Error::Singular(msg) => Error::Singular(format!(
                "saddle system with {n} primal and {q} multiplier unknowns{}: {msg}",
                if self.border.is_some() { " (bordered)" } else { "" }
            )),
            other => other,
        })?;
        let mut rhs = DVector::zeros(k.nrows());
        rhs.rows_mut(0, n).copy_from(f);
        rhs.rows_mut(n, q).copy_from(g);
        let (sol, residual) = ldlt.solve(&rhs);
        Ok(SaddleSolution {
            x: sol.rows(0, n).into_owned(),
            lambda: sol.rows(n, q).into_owned(),
            mu: if self.border.is_some() { sol[n + q] } else { 0.0 },
            residual,
        })
    }
}

/// Assembled sparse symmetric (indefinite) matrix with a reusable factorization.
pub struct SparseSymIndef {
    n: usize,
    matrix: SparseColMat<usize, f64>,
    symbolic: SymbolicLu<usize>,
    numeric: NumericLu<usize, f64>,
}

impl std::fmt::Debug for SparseSymIndef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseSymIndef")
            .field("n", &self.n)
            .field("nnz", &self.matrix.compute_nnz())
            .finish()
    }
}

impl SparseSymIndef {
    /// Factors the `n × n` matrix given by `(row, col, value)` triplets;
    /// duplicate entries are summed.
    pub fn factor(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("entry ({i}, {j}) outside {n}x{n}")));
            }
            *merged.entry((j, i)).or_insert(0.0) += v;
        }
        let scale = merged.values().fold(0.0f64, |m, v| m.max(v.abs()));
        for (&(j, i), &v) in &merged {
            let t = merged.get(&(i, j)).copied().unwrap_or(0.0);
            if (v - t).abs() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!(
                    "assembled matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
        let entries: Vec<Triplet<usize, usize, f64>> = merged
            .iter()
            .map(|(&(j, i), &v)| Triplet::new(i, j, v))
            .collect();
        let matrix = SparseColMat::try_new_from_triplets(n, n, &entries)
            .map_err(|e| Error::Internal(format!("sparse assembly failed: {e:?}")))?;
        let symbolic = factorize_symbolic_lu(matrix.symbolic(), Default::default())
            .map_err(|e| Error::Internal(format!("symbolic factorization failed: {e:?}")))?;
        let mut numeric = NumericLu::new();
        {
            let mut mem = MemBuffer::new(
                symbolic.factorize_numeric_lu_scratch::<f64>(Par::Seq, Default::default()),
            );
            symbolic
                .factorize_numeric_lu(
                    &mut numeric,
                    matrix.as_ref(),
                    Par::Seq,
                    MemStack::new(&mut mem),
                    Default::default(),
                )
                .map_err(|e| Error::Singular(format!("sparse LU failed: {e:?}")))?;
        }
        Ok(SparseSymIndef {
            n,
            matrix,
            symbolic,
            numeric,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn solve_once(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let lu = faer::sparse::linalg::lu::LuRef::new_unchecked(&self.symbolic, &self.numeric);
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        lu.solve_in_place_with_conj(Conj::No, rhs.as_mut(), Par::Seq, MemStack::new(&mut mem));
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        let m = self.matrix.as_ref();
        for j in 0..self.n {
            for (i, v) in m.row_idx_of_col(j).zip(m.val_of_col(j)) {
                y[i] += v * x[j];
            }
        }
        y
    }

    /// Solves with one refinement step. Fails with a singularity error when
    /// the refined residual is not small.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, f64)> {
        if b.len() != self.n {
            return Err(Error::InvalidArgument("right-hand side length mismatch".into()));
        }
        let mut x = self.solve_once(b);
        let ax = self.apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = self.solve_once(&r);
        for (x, d) in x.iter_mut().zip(&dx) {
            *x += d;
        }
        let ax = self.apply(&x);
        let rmax = b.iter().zip(&ax).map(|(b, a)| (b - a).abs()).fold(0.0, f64::max);
        let amax = self.matrix.val().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let denom = amax * xmax + bmax;
        let rel = if denom > 0.0 { rmax / denom } else { 0.0 };
        // A huge solution can hide a null mode behind a small normwise
        // residual, so the residual is also measured against ‖b‖ alone.
        let finite = x.iter().all(|v| v.is_finite());
        if !finite || !rel.is_finite() || rel > 1e-8 || rmax > 1e-6 * bmax {
            return Err(Error::Singular(format!(
                "sparse solve residual {rel:e}; solution growth ‖x‖‖A‖/‖b‖ = {:e} suggests a null mode",
                amax * xmax / bmax.max(f64::MIN_POSITIVE)
            )));
        }
        Ok((x, rel))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_saddle(rng: &mut ChaCha8Rng, n: usize, q: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = &x * x.transpose() + DMatrix::identity(n, n) * 0.5;
        let b = DMatrix::from_fn(q, n, |_, _| rng.random_range(-1.0..1.0));
        (m, b)
    }

    #[test]
    fn three_by_three_closed_form() {
        // M = I, B = [1 0]: x1 = g, λ = f1 - g, x2 = f2
        let s = DenseSaddle::new(DMatrix::identity(2, 2), DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let f = DVector::from_vec(vec![0.7, -0.3]);
        let g = DVector::from_vec(vec![2.5]);
        let sol = s.solve(&f, &g).unwrap();
        assert!((sol.x[0] - 2.5).abs() < 1e-14);
        assert!((sol.x[1] + 0.3).abs() < 1e-14);
        assert!((sol.lambda[0] - (0.7 - 2.5)).abs() < 1e-14);
    }

    #[test]
    fn random_saddle_matches_pseudoinverse_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, q) in [(5, 2), (12, 5), (30, 9)] {
            let (m, b) = random_saddle(&mut rng, n, q);
            let f = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let g = DVector::from_fn(q, |_, _| rng.random_range(-1.0..1.0));
            let sol = DenseSaddle::new(m.clone(), b.clone()).solve(&f, &g).unwrap();
            assert!((&b * &sol.x - &g).amax() < 1e-12);
            assert!(sol.residual < 1e-14);
            // independent path: Schur complement with Cholesky of M
            let chol = m.clone().cholesky().unwrap();
            let minv_bt = chol.solve(&b.transpose());
            let minv_f = chol.solve(&f);
            let schur = &b * &minv_bt;
            let lambda = schur.lu().solve(&(&b * &minv_f - &g)).unwrap();
            let x = minv_f - minv_bt * &lambda;
            assert!((x - &sol.x).amax() < 1e-10);
        }
    }

    #[test]
    fn bordered_kernel_is_resolved() {
        // B has rows summing to zero, so constants span the kernel of Bᵀ.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, mut b) = random_saddle(&mut rng, 8, 4);
        for j in 0..8 {
            let s: f64 = (0..3).map(|i| b[(i, j)]).sum();
            b[(3, j)] = -s;
        }
        let ones = DVector::from_element(4, 1.0);
        let s = DenseSaddle::new(m, b.clone()).with_border(ones.clone());
        let f = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let mut g = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let mean = g.sum() / 4.0;
        g.add_scalar_mut(-mean);
        let a = s.solve(&f, &g).unwrap();
        let b2 = s.solve(&f, &g.add_scalar(3.7)).unwrap();
        assert!((&a.x - &b2.x).amax() < 1e-12);
        assert!(a.lambda.sum().abs() < 1e-12);
        assert!((&b * &a.x - &g).amax() < 1e-12);
        assert!(DenseSaddle::new(s.m.clone(), b).solve(&f, &g).is_err());
    }

    #[test]
    fn two_by_two_pivots_are_used_and_correct() {
        let a = DMatrix::from_row_slice(4, 4, &[
            0.0, 1.0, 2.0, 0.0, //
            1.0, 0.0, 0.0, 3.0, //
            2.0, 0.0, 0.0, 1.0, //
            0.0, 3.0, 1.0, 0.0,
        ]);
        let ldlt = DenseLdlt::factor(&a).unwrap();
        assert!(ldlt.pivots.iter().any(|(_, p)| matches!(p, Pivot::Two(..))));
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let (x, rel) = ldlt.solve(&b);
        assert!((&a * &x - &b).amax() < 1e-14 && rel < 1e-15);
        let zero = DMatrix::zeros(2, 2);
        assert!(matches!(DenseLdlt::factor(&zero), Err(Error::Singular(_))));
    }

    #[test]
    fn sparse_identity_and_laplacian() {
        let id = SparseSymIndef::factor(4, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (3, 3, 1.0)]).unwrap();
        let (x, _) = id.solve(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0]);

        // 1D Neumann Laplacian, singular; pin dof 0 by replacing its row/column.
        let n = 10;
        let mut trip = Vec::new();
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            for (r, c, v) in [(i, i, 1.0), (i + 1, i + 1, 1.0), (i, i + 1, -1.0), (i + 1, i, -1.0)] {
                if r == 0 || c == 0 {
                    continue;
                }
                trip.push((r, c, v));
                dense[(r, c)] += v;
            }
        }
        trip.push((0, 0, 1.0));
        dense[(0, 0)] = 1.0;
        let b: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { (i as f64).sin() }).collect();
        let (x, rel) = SparseSymIndef::factor(n, &trip).unwrap().solve(&b).unwrap();
        let xd = DenseLdlt::factor(&dense).unwrap().solve(&DVector::from_vec(b)).0;
        assert!(rel < 1e-14);
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_singular_is_reported() {
        let r = SparseSymIndef::factor(3, &[(0, 0, 1.0), (1, 1, 1.0), (0, 1, 1.0), (1, 0, 1.0), (2, 2, 1.0)])
            .and_then(|s| s.solve(&[1.0, 0.0, 1.0]).map(|_| ()));
        assert!(matches!(r, Err(Error::Singular(_))));
        assert!(matches!(
            SparseSymIndef::factor(2, &[(0, 1, 1.0)]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sparse_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, b) = random_saddle(&mut rng, 20, 6);
        let k = DenseSaddle::new(m, b).assemble();
        let trip: Vec<(usize, usize, f64)> = (0..26)
            .flat_map(|i| (0..26).map(move |j| (i, j)))
            .filter(|&(i, j)| k[(i, j)] != 0.0)
            .map(|(i, j)| (i, j, k[(i, j)]))
            .collect();
        let rhs: Vec<f64> = (0..26).map(|i| (i as f64).cos()).collect();
        let x1 = SparseSymIndef::factor(26, &trip).unwrap().solve(&rhs).unwrap().0;
        let x2 = SparseSymIndef::factor(26, &trip).unwrap().solve(&rhs).unwrap().0;
        assert_eq!(x1, x2);
        let xd = DenseLdlt::factor(&k).unwrap().solve(&DVector::from_vec(rhs)).0;
        for i in 0..26 {
            assert!((x1[i] - xd[i]).abs() < 1e-10);
        }
    }
}
