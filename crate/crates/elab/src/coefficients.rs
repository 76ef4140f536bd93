//! Per-cell coefficient matrices `A(X)` and the operator families built from them.

use nalgebra::{DMatrix, Matrix2, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{dist, lattice_point, GridDomain, Point};
use crate::error::{Error, Result};

/// Row-major 3×3 storage; 2D fields use the leading 2×2 block.
pub type Mat = [f64; 9];

pub const IDENTITY: Mat = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

/// Smooth bump `exp(1 - 1/(1 - s²))` for `s = |X - c|/ρ < 1`, peak value 1.
pub fn bump(p: &Point, center: &Point, radius: f64) -> f64 {
    let s2 = (dist(p, center) / radius).powi(2);
    if s2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s2)).exp()
    }
}

/// Declarative description of a field, as read from configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    Identity,
    /// Constant matrix, row-major `d×d`.
    Constant {
        matrix: Vec<f64>,
    },
    Diag {
        entries: Vec<f64>,
    },
    /// `A₀ + ε·E·φ` with `φ` the smooth bump on `B(center, radius)`.
    Bump {
        base: Box<FieldSpec>,
        eps: f64,
        direction: Vec<f64>,
        center: Vec<f64>,
        radius: f64,
    },
    /// Independent random elliptic matrices per cell.
    Random {
        lambda: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug)]
pub struct CoefficientField {
    pub dim: usize,
    pub n: usize,
    /// One matrix per lattice node of the `n^d` lattice.
    data: Vec<Mat>,
}

fn embed(dim: usize, m: &[f64]) -> Result<Mat> {
    if m.len() != dim * dim {
        return Err(Error::InvalidParameter(format!("matrix has {} entries, expected {}", m.len(), dim * dim)));
    }
    let mut out = [0.0; 9];
    for r in 0..dim {
        for c in 0..dim {
            out[3 * r + c] = m[dim * r + c];
        }
    }
    Ok(out)
}

impl CoefficientField {
    pub fn identity(domain: &GridDomain) -> CoefficientField {
        CoefficientField::constant_mat(domain, IDENTITY)
    }

    fn constant_mat(domain: &GridDomain, m: Mat) -> CoefficientField {
        CoefficientField { dim: domain.dim, n: domain.n, data: vec![m; domain.lattice_len()] }
    }

    pub fn constant(domain: &GridDomain, matrix: &[f64]) -> Result<CoefficientField> {
        Ok(CoefficientField::constant_mat(domain, embed(domain.dim, matrix)?))
    }

    pub fn diag(domain: &GridDomain, entries: &[f64]) -> Result<CoefficientField> {
        if entries.len() != domain.dim {
            return Err(Error::InvalidParameter(format!("diag needs {} entries", domain.dim)));
        }
        let mut m = [0.0; 9];
        for (a, e) in entries.iter().enumerate() {
            m[4 * a] = *e;
        }
        Ok(CoefficientField::constant_mat(domain, m))
    }

    /// Builds the field by evaluating `f` at every lattice point.
    pub fn from_fn(domain: &GridDomain, f: impl Fn(&Point) -> Mat) -> CoefficientField {
        let data = (0..domain.lattice_len()).map(|id| f(&lattice_point(id, domain.n, domain.dim, domain.h))).collect();
        CoefficientField { dim: domain.dim, n: domain.n, data }
    }

    /// `base + eps * direction * bump(·; center, radius)`.
    pub fn bump(
        domain: &GridDomain,
        base: &CoefficientField,
        eps: f64,
        direction: &[f64],
        center: &Point,
        radius: f64,
    ) -> Result<CoefficientField> {
        let e = embed(domain.dim, direction)?;
        let mut out = base.clone();
        for (id, m) in out.data.iter_mut().enumerate() {
            let phi = bump(&lattice_point(id, domain.n, domain.dim, domain.h), center, radius);
            if phi > 0.0 {
                for k in 0..9 {
                    m[k] += eps * phi * e[k];
                }
            }
        }
        Ok(out)
    }

    /// Random field: a rotated diagonal with eigenvalues in `[2/Λ, Λ/2]` plus
    /// an antisymmetric part of size at most `1/Λ`.
    pub fn random(domain: &GridDomain, lambda: f64, seed: u64) -> Result<CoefficientField> {
        if !(lambda >= 2.0) {
            return Err(Error::InvalidParameter(format!("random field needs Λ ≥ 2, got {lambda}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = domain.dim;
        let (lo, hi) = (2.0 / lambda, lambda / 2.0);
        let data = (0..domain.lattice_len())
            .map(|_| {
                let q = if d == 2 {
                    let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
                } else {
                    let g = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
                    g.qr().q()
                };
                let ev = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(d, |_, _| rng.random_range(lo..hi)));
                let mut a = &q * ev * q.transpose();
                for r in 0..d {
                    for c in r + 1..d {
                        let k: f64 = rng.random_range(-1.0..1.0) / (lambda * (d as f64 - 1.0).max(1.0));
                        a[(r, c)] += k;
                        a[(c, r)] -= k;
                    }
                }
                let mut m = [0.0; 9];
                for r in 0..d {
                    for c in 0..d {
                        m[3 * r + c] = a[(r, c)];
                    }
                }
                m
            })
            .collect();
        Ok(CoefficientField { dim: d, n: domain.n, data })
    }

    pub fn from_spec(domain: &GridDomain, spec: &FieldSpec) -> Result<CoefficientField> {
        match spec {
            FieldSpec::Identity => Ok(CoefficientField::identity(domain)),
            FieldSpec::Constant { matrix } => CoefficientField::constant(domain, matrix),
            FieldSpec::Diag { entries } => CoefficientField::diag(domain, entries),
            FieldSpec::Bump { base, eps, direction, center, radius } => {
                let base = CoefficientField::from_spec(domain, base)?;
                let mut c = [0.0; 3];
                for (a, v) in center.iter().take(3).enumerate() {
                    c[a] = *v;
                }
                CoefficientField::bump(domain, &base, *eps, direction, &c, *radius)
            }
            FieldSpec::Random { lambda, seed } => CoefficientField::random(domain, *lambda, *seed),
        }
    }

    pub fn at(&self, lattice: usize) -> &Mat {
        &self.data[lattice]
    }

    pub fn entry(&self, lattice: usize, r: usize, c: usize) -> f64 {
        self.data[lattice][3 * r + c]
    }

    pub fn set(&mut self, lattice: usize, m: Mat) {
        self.data[lattice] = m;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn transpose(&self) -> CoefficientField {
        let data = self.data.iter().map(|m| [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]]).collect();
        CoefficientField { dim: self.dim, n: self.n, data }
    }

    /// `A_t = (1 - t) A₀ + t A`.
    pub fn blend(a0: &CoefficientField, a: &CoefficientField, t: f64) -> Result<CoefficientField> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidParameter(format!("blend parameter {t} outside [0,1]")));
        }
        a0.check_compatible(a)?;
        let data = a0
            .data
            .iter()
            .zip(&a.data)
            .map(|(m0, m)| {
                let mut out = [0.0; 9];
                for k in 0..9 {
                    out[k] = (1.0 - t) * m0[k] + t * m[k];
                }
                out
            })
            .collect();
        Ok(CoefficientField { dim: a0.dim, n: a0.n, data })
    }

    /// `A^j`: `A` where `δ(Y) ≥ 2^{-j}`, `A₀` elsewhere (including exterior nodes).
    pub fn truncate(
        domain: &GridDomain,
        a0: &CoefficientField,
        a: &CoefficientField,
        j: u32,
    ) -> Result<CoefficientField> {
        a0.check_compatible(a)?;
        let cut = (-(j as f64)).exp2();
        let mut out = a0.clone();
        for u in 0..domain.n_cells() {
            if domain.delta(u) >= cut {
                let id = domain.cell_lattice(u);
                out.data[id] = a.data[id];
            }
        }
        Ok(out)
    }

    fn check_compatible(&self, other: &CoefficientField) -> Result<()> {
        if self.dim != other.dim || self.n != other.n {
            return Err(Error::InvalidParameter("coefficient fields live on different lattices".into()));
        }
        Ok(())
    }

    /// Smallest `Λ` with `Λ^{-1}|ξ|² ≤ Aξ·ξ` and `|Aξ·η| ≤ Λ|ξ||η|` on interior cells.
    pub fn ellipticity(&self, domain: &GridDomain) -> Result<f64> {
        let mut lambda = 1.0f64;
        for u in 0..domain.n_cells() {
            let m = &self.data[domain.cell_lattice(u)];
            let (lo, norm) = bounds(m, self.dim);
            if !(lo > 0.0) || !norm.is_finite() {
                return Err(Error::Ellipticity { cell: u, detail: format!("symmetric part has eigenvalue {lo:.3e}") });
            }
            lambda = lambda.max(1.0 / lo).max(norm);
        }
        Ok(lambda)
    }

    /// Ensures the field is elliptic with constant at most `lambda`.
    pub fn check_ellipticity(&self, domain: &GridDomain, lambda: f64) -> Result<f64> {
        let got = self.ellipticity(domain)?;
        if got > lambda * (1.0 + 1e-12) {
            return Err(Error::Ellipticity { cell: 0, detail: format!("constant {got:.4} exceeds {lambda}") });
        }
        Ok(got)
    }
}

/// `(λ_min(sym A), ‖A‖₂)`.
pub fn bounds(m: &Mat, dim: usize) -> (f64, f64) {
    if dim == 2 {
        let a = Matrix2::new(m[0], m[1], m[3], m[4]);
        let s = (a + a.transpose()) * 0.5;
        let lo = s.symmetric_eigenvalues().min();
        let norm = a.singular_values().max();
        (lo, norm)
    } else {
        let a = Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]);
        let s = (a + a.transpose()) * 0.5;
        (s.symmetric_eigenvalues().min(), a.singular_values().max())
    }
}

/// Spectral norm of `a - b`.
pub fn diff_norm(a: &Mat, b: &Mat, dim: usize) -> f64 {
    let mut d = [0.0; 9];
    let mut any = false;
    for k in 0..9 {
        d[k] = a[k] - b[k];
        any |= d[k] != 0.0;
    }
    if !any {
        return 0.0;
    }
    if dim == 2 {
        Matrix2::new(d[0], d[1], d[3], d[4]).singular_values().max()
    } else {
        Matrix3::new(d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7], d[8]).singular_values().max()
    }
}

/// Uniformly random unit-free matrix entries in `[-1, 1]`, for tests and sweeps.
pub fn random_direction(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}
