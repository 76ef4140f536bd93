//! Compressed sparse rows and the linear solvers built on them.
//!
//! Systems are factored once with faer's sparse LU and the factorization is
//! reused for plain and transposed right-hand sides. A Jacobi-preconditioned
//! BiCGSTAB is the fallback when factorization fails or misses tolerance.

use faer::linalg::solvers::SolveCore;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat as FMat};

use crate::error::{Error, Result};

/// Relative residual demanded of every solve.
pub const SOLVE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from triplets, summing duplicates and dropping exact zeros.
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Csr {
        t.sort_unstable_by_key(|e| (e.0, e.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut rows = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            if let (Some(&lr), Some(&lc)) = (rows.last(), indices.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            indices.push(c);
            values.push(v);
        }
        let mut keep_i = Vec::with_capacity(indices.len());
        let mut keep_v = Vec::with_capacity(indices.len());
        for k in 0..indices.len() {
            if values[k] != 0.0 {
                indptr[rows[k] + 1] += 1;
                keep_i.push(indices[k]);
                keep_v.push(values[k]);
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Csr { nrows, ncols, indptr, indices: keep_i, values: keep_v }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map(|(_, v)| v).unwrap_or(0.0)
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `selfᵀ x`.
    pub fn mul_t(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            if x[r] != 0.0 {
                for (c, v) in self.row(r) {
                    out[c] += v * x[r];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Csr {
        let mut t = Vec::with_capacity(self.values.len());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.push((c, r, v));
            }
        }
        Csr::from_triplets(self.ncols, self.nrows, t)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.get(r, r)).collect()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned BiCGSTAB. Returns the solution or the residual history.
pub fn bicgstab(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.nrows;
    let dinv: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bn = norm(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph: Vec<f64> = p.iter().zip(&dinv).map(|(a, b)| a * b).collect();
        v = a.mul(&ph);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        for i in 0..n {
            x[i] += alpha * ph[i];
        }
        if norm(&s) / bn <= tol {
            return Ok(x);
        }
        let sh: Vec<f64> = s.iter().zip(&dinv).map(|(a, b)| a * b).collect();
        let t = a.mul(&sh);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        let rel = norm(&r) / bn;
        history.push(rel);
        if rel <= tol {
            return Ok(x);
        }
        if !rel.is_finite() || omega == 0.0 {
            break;
        }
    }
    Err(Error::Solver { reason: "BiCGSTAB did not reach tolerance".into(), history })
}

/// Factored square system with cached transpose access.
pub struct LinearSystem {
    pub a: Csr,
    at: Csr,
    lu: Option<faer::sparse::linalg::solvers::Lu<usize, f64>>,
}

impl std::fmt::Debug for LinearSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearSystem")
            .field("n", &self.a.nrows)
            .field("nnz", &self.a.nnz())
            .field("factored", &self.lu.is_some())
            .finish()
    }
}

impl LinearSystem {
    pub fn new(a: Csr) -> LinearSystem {
        let mut trip = Vec::with_capacity(a.nnz());
        for r in 0..a.nrows {
            for (c, v) in a.row(r) {
                trip.push(Triplet::new(r, c, v));
            }
        }
        let lu = SparseColMat::<usize, f64>::try_new_from_triplets(a.nrows, a.ncols, &trip)
            .ok()
            .and_then(|m| m.sp_lu().ok());
        let at = a.transpose();
        LinearSystem { a, at, lu }
    }

    /// Forces the iterative path, for exercising the fallback.
    pub fn new_iterative(a: Csr) -> LinearSystem {
        let at = a.transpose();
        LinearSystem { a, at, lu: None }
    }

    pub fn len(&self) -> usize {
        self.a.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows == 0
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(b, false)
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_t(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(b, true)
    }

    fn solve_impl(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let mat = if transpose { &self.at } else { &self.a };
        let bn = norm(b);
        if bn == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        if let Some(lu) = &self.lu {
            let run = |rhs: &[f64]| -> Vec<f64> {
                let mut y = FMat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
                if transpose {
                    lu.solve_transpose_in_place_with_conj(Conj::No, y.as_mut());
                } else {
                    lu.solve_in_place_with_conj(Conj::No, y.as_mut());
                }
                (0..rhs.len()).map(|i| y[(i, 0)]).collect()
            };
            let mut x = run(b);
            // Two steps of iterative refinement keep the residual at tolerance.
            for _ in 0..3 {
                let ax = mat.mul(&x);
                let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
                if norm(&r) / bn <= SOLVE_TOL {
                    return Ok(x);
                }
                let dx = run(&r);
                for (xi, d) in x.iter_mut().zip(dx) {
                    *xi += d;
                }
            }
            let ax = mat.mul(&x);
            let rel = norm(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>()) / bn;
            if rel <= SOLVE_TOL {
                return Ok(x);
            }
        }
        bicgstab(mat, b, SOLVE_TOL, 20 * mat.nrows.max(100))
    }

    /// Relative residual of `x` for `A x = b`.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.a.mul(x);
        norm(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>()) / norm(b).max(f64::MIN_POSITIVE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, skew: f64) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.5));
            if i > 0 {
                t.push((i, i - 1, -1.0 - skew));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 + skew));
            }
        }
        Csr::from_triplets(n, n, t)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = Csr::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0), (1, 0, 0.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn lu_and_krylov_agree() {
        let a = tridiag(200, 0.3);
        let b: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let direct = LinearSystem::new(a.clone());
        let iter = LinearSystem::new_iterative(a);
        for t in [false, true] {
            let x = if t { direct.solve_t(&b).unwrap() } else { direct.solve(&b).unwrap() };
            let y = if t { iter.solve_t(&b).unwrap() } else { iter.solve(&b).unwrap() };
            let diff = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-8, "transpose={t} diff={diff}");
        }
    }
}
