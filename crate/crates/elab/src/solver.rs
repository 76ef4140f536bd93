//! Finite-volume discretization of `L u = -div(A ∇u)` on a [`GridDomain`].
//!
//! The scheme is variational. With `h` the spacing, the assembled matrix is
//! `M = h^d L` and comes from the bilinear form
//!
//! * normal part: every interior face along axis `a` carries
//!   `h^{d-2}·hm(A_aa)` (harmonic mean of the two cells); a boundary face
//!   sits at distance `h/2` and carries `2h^{d-2}·A_aa(X)`,
//! * tangential part: `h^d Σ_{a≠b} A_ab(X)·(C_b u)(X)·(C_a v)(X)`, where
//!   `C_b` is the centered cell difference using a neighbor (distance `h`) or
//!   the boundary face (distance `h/2`).
//!
//! Consequences relied on elsewhere: `M(Aᵀ) = M(A)ᵀ` exactly, constants are
//! annihilated, and `A = I` gives the `(2d+1)`-point Laplacian. Rows with
//! `A_ab ≠ 0` may have positive off-diagonals, so `M` need not be an M-matrix;
//! the maximum principle is checked at runtime instead of assumed.

use std::sync::Arc;

use rayon::prelude::*;

use crate::coefficients::CoefficientField;
use crate::domain::GridDomain;
use crate::error::{Error, Result};
use crate::sparse::{Csr, LinearSystem};

/// Poles closer than this many spacings to the boundary are rejected.
pub const POLE_MIN_DEPTH: f64 = 2.0;
/// Supported ellipticity envelope of the scheme.
pub const LAMBDA_MAX: f64 = 10.0;
/// Slack allowed in the discrete maximum principle.
pub const MAX_PRINCIPLE_TOL: f64 = 1e-8;

/// One end of a centered difference: an unknown or a boundary face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Cell(usize),
    Face(usize),
}

/// Per-cell lookup of the face on each side, `face_of[u*2d + 2a + (dir>0)]`.
pub fn face_lookup(domain: &GridDomain) -> Vec<u32> {
    let d = domain.dim;
    let mut out = vec![u32::MAX; domain.n_cells() * 2 * d];
    for (i, f) in domain.faces().iter().enumerate() {
        out[f.cell * 2 * d + 2 * f.axis as usize + usize::from(f.dir > 0)] = i as u32;
    }
    out
}

/// The two ends of the centered difference `C_axis` at cell `u`, with weights.
pub fn centered_stencil(domain: &GridDomain, faces: &[u32], u: usize, axis: usize) -> [(Node, f64); 2] {
    let d = domain.dim;
    let h = domain.h;
    let side = |dir: i8| -> (Node, f64) {
        match domain.neighbor(u, axis, dir) {
            Some(v) => (Node::Cell(v), h),
            None => (Node::Face(faces[u * 2 * d + 2 * axis + usize::from(dir > 0)] as usize), 0.5 * h),
        }
    };
    let (p, dp) = side(1);
    let (m, dm) = side(-1);
    let w = 1.0 / (dp + dm);
    [(p, w), (m, -w)]
}

/// Centered gradient of cell values `vals` with boundary face values `face_vals`.
pub fn gradient(domain: &GridDomain, faces: &[u32], vals: &[f64], face_vals: &[f64], u: usize) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (a, ga) in g.iter_mut().enumerate().take(domain.dim) {
        for (node, w) in centered_stencil(domain, faces, u, a) {
            *ga += w * match node {
                Node::Cell(v) => vals[v],
                Node::Face(f) => face_vals[f],
            };
        }
    }
    g
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Assembled operator with its cached factorization.
pub struct Operator {
    pub domain: Arc<GridDomain>,
    pub field: CoefficientField,
    pub lambda: f64,
    faces: Vec<u32>,
    system: LinearSystem,
    /// `B`: interior rows × boundary faces, so that `M u + B f = 0`.
    coupling: Csr,
}

impl std::fmt::Debug for Operator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Operator").field("cells", &self.domain.n_cells()).field("lambda", &self.lambda).finish()
    }
}

/// Boundary probability vector for one pole.
#[derive(Clone, Debug)]
pub struct EllipticMeasure {
    pub pole: usize,
    /// Mass per boundary face.
    pub omega: Vec<f64>,
    /// `G_L(pole, ·)` over interior cells (the adjoint solve behind `omega`).
    pub green: Vec<f64>,
}

impl EllipticMeasure {
    pub fn total(&self) -> f64 {
        self.omega.iter().sum()
    }

    pub fn mass(&self, faces: &[usize]) -> f64 {
        faces.iter().map(|&f| self.omega[f]).sum()
    }
}

/// Outcome of the perturbation identity check.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct PerturbationCheck {
    /// `u(X) - u₀(X)`.
    pub difference: f64,
    /// Riemann sum of `(A₀ - A)ᵀ ∇G_{Lᵀ}(·,X) · ∇u₀`.
    pub integral: f64,
    pub discrepancy: f64,
}

impl Operator {
    pub fn new(domain: Arc<GridDomain>, field: CoefficientField) -> Result<Operator> {
        Operator::build(domain, field, false)
    }

    /// Same as [`Operator::new`] but solving with BiCGSTAB only.
    pub fn new_iterative(domain: Arc<GridDomain>, field: CoefficientField) -> Result<Operator> {
        Operator::build(domain, field, true)
    }

    fn build(domain: Arc<GridDomain>, field: CoefficientField, iterative: bool) -> Result<Operator> {
        if field.dim != domain.dim || field.n != domain.n {
            return Err(Error::InvalidParameter("coefficient field lattice does not match the domain".into()));
        }
        let lambda = field.ellipticity(&domain)?;
        if lambda > LAMBDA_MAX {
            return Err(Error::Ellipticity {
                cell: 0,
                detail: format!("Λ = {lambda:.3} beyond the supported envelope {LAMBDA_MAX}"),
            });
        }
        let faces = face_lookup(&domain);
        let (m, b) = assemble(&domain, &field, &faces);
        let system = if iterative { LinearSystem::new_iterative(m) } else { LinearSystem::new(m) };
        Ok(Operator { domain, field, lambda, faces, system, coupling: b })
    }

    pub fn transpose(&self) -> Result<Operator> {
        Operator::new(self.domain.clone(), self.field.transpose())
    }

    pub fn matrix(&self) -> &Csr {
        &self.system.a
    }

    pub fn coupling(&self) -> &Csr {
        &self.coupling
    }

    pub fn face_lookup(&self) -> &[u32] {
        &self.faces
    }

    /// Row `u` of `L` (that is, of `M / h^d`) over interior cells.
    pub fn stencil(&self, u: usize) -> Vec<(usize, f64)> {
        let vol = self.domain.cell_volume();
        self.system.a.row(u).map(|(c, v)| (c, v / vol)).collect()
    }

    /// `M u + B f`, the discrete residual of `L u = 0` with boundary data `f`.
    pub fn apply(&self, u: &[f64], f: &[f64]) -> Vec<f64> {
        let mu = self.system.a.mul(u);
        let bf = self.coupling.mul(f);
        mu.iter().zip(bf).map(|(a, b)| a + b).collect()
    }

    fn check_data(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.domain.n_faces() {
            return Err(Error::InvalidParameter(format!(
                "boundary data has {} entries, expected {}",
                f.len(),
                self.domain.n_faces()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("boundary data is not finite".into()));
        }
        Ok(())
    }

    /// Dirichlet solve without the maximum-principle assertion.
    pub fn solve_dirichlet_unchecked(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_data(f)?;
        let rhs: Vec<f64> = self.coupling.mul(f).iter().map(|v| -v).collect();
        self.system.solve(&rhs)
    }

    /// Solves `L u = 0`, `u = f` on the boundary faces, and asserts
    /// `min f ≤ u ≤ max f` up to [`MAX_PRINCIPLE_TOL`].
    pub fn solve_dirichlet(&self, f: &[f64]) -> Result<Vec<f64>> {
        let u = self.solve_dirichlet_unchecked(f)?;
        let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (cell, &v) in u.iter().enumerate() {
            let excess = (lo - v).max(v - hi);
            if excess > MAX_PRINCIPLE_TOL {
                return Err(Error::MaximumPrinciple { cell, excess });
            }
        }
        Ok(u)
    }

    fn check_pole(&self, pole: usize) -> Result<()> {
        if pole >= self.domain.n_cells() {
            return Err(Error::Pole(format!("cell {pole} is not interior")));
        }
        let depth = self.domain.delta(pole) / self.domain.h;
        if depth < POLE_MIN_DEPTH {
            return Err(Error::Pole(format!(
                "cell {pole} lies {depth:.2} spacings from the boundary (< {POLE_MIN_DEPTH})"
            )));
        }
        Ok(())
    }

    /// `ω^X = -Bᵀ M^{-T} e_X`. Total mass is one because `M 1 = -B 1`.
    pub fn elliptic_measure(&self, pole: usize) -> Result<EllipticMeasure> {
        self.check_pole(pole)?;
        let mut e = vec![0.0; self.domain.n_cells()];
        e[pole] = 1.0;
        let green = self.system.solve_t(&e)?;
        let omega = self.coupling.mul_t(&green).iter().map(|v| -v).collect();
        Ok(EllipticMeasure { pole, omega, green })
    }

    /// Elliptic measures for several poles in parallel.
    pub fn elliptic_measures(&self, poles: &[usize]) -> Result<Vec<EllipticMeasure>> {
        poles.par_iter().map(|&p| self.elliptic_measure(p)).collect()
    }

    /// `G_L(·, Y) = M^{-1} e_Y`: unit mass at `Y` against the cell volume.
    pub fn green(&self, pole: usize) -> Result<Vec<f64>> {
        self.check_pole(pole)?;
        let mut e = vec![0.0; self.domain.n_cells()];
        e[pole] = 1.0;
        self.system.solve(&e)
    }

    /// `G_{Lᵀ}(·, X) = M^{-T} e_X`, which equals `G_L(X, ·)`.
    pub fn green_transpose(&self, pole: usize) -> Result<Vec<f64>> {
        self.check_pole(pole)?;
        let mut e = vec![0.0; self.domain.n_cells()];
        e[pole] = 1.0;
        self.system.solve_t(&e)
    }

    pub fn gradient(&self, vals: &[f64], face_vals: &[f64], u: usize) -> [f64; 3] {
        gradient(&self.domain, &self.faces, vals, face_vals, u)
    }

    /// Compares `u(X) - u₀(X)` with the Riemann sum of
    /// `(A₀ - A)ᵀ ∇G_{Lᵀ}(·,X)·∇u₀`, where `self` is `L` and `base` is `L₀`.
    pub fn perturbation_identity(&self, base: &Operator, g: &[f64], x: usize) -> Result<PerturbationCheck> {
        if !Arc::ptr_eq(&self.domain, &base.domain) && self.domain.n_cells() != base.domain.n_cells() {
            return Err(Error::InvalidParameter("operators live on different domains".into()));
        }
        let u = self.solve_dirichlet_unchecked(g)?;
        let u0 = base.solve_dirichlet_unchecked(g)?;
        let w = self.green_transpose(x)?;
        let zero = vec![0.0; self.domain.n_faces()];
        let d = self.domain.dim;
        let vol = self.domain.cell_volume();
        let mut integral = 0.0;
        for c in 0..self.domain.n_cells() {
            let id = self.domain.cell_lattice(c);
            let (a0, a) = (base.field.at(id), self.field.at(id));
            if a0 == a {
                continue;
            }
            let gw = self.gradient(&w, &zero, c);
            let gu = self.gradient(&u0, g, c);
            // (A₀ - A)ᵀ ∇w · ∇u₀ = Σ_ab (A₀ - A)_ab ∂_b u₀ ∂_a w.
            for r in 0..d {
                for s in 0..d {
                    integral += vol * (a0[3 * r + s] - a[3 * r + s]) * gu[s] * gw[r];
                }
            }
        }
        let difference = u[x] - u0[x];
        let scale = difference.abs().max(integral.abs());
        let discrepancy =
            if scale == 0.0 { 0.0 } else { (difference - integral).abs() / difference.abs().max(f64::MIN_POSITIVE) };
        Ok(PerturbationCheck { difference, integral, discrepancy })
    }
}

fn assemble(domain: &GridDomain, field: &CoefficientField, faces: &[u32]) -> (Csr, Csr) {
    let d = domain.dim;
    let h = domain.h;
    let normal = h.powi(d as i32 - 2);
    let vol = domain.cell_volume();
    let m = domain.n_cells();
    let mut tm = Vec::with_capacity(m * (4 * d + 1));
    let mut tb = Vec::new();
    for u in 0..m {
        let id = domain.cell_lattice(u);
        for a in 0..d {
            let aa = field.entry(id, a, a);
            if let Some(v) = domain.neighbor(u, a, 1) {
                let k = normal * harmonic_mean(aa, field.entry(domain.cell_lattice(v), a, a));
                tm.extend_from_slice(&[(u, u, k), (v, v, k), (u, v, -k), (v, u, -k)]);
            } else {
                let f = faces[u * 2 * d + 2 * a + 1] as usize;
                let k = 2.0 * normal * aa;
                tm.push((u, u, k));
                tb.push((u, f, -k));
            }
            if domain.neighbor(u, a, -1).is_none() {
                let f = faces[u * 2 * d + 2 * a] as usize;
                let k = 2.0 * normal * aa;
                tm.push((u, u, k));
                tb.push((u, f, -k));
            }
        }
        for a in 0..d {
            for b in 0..d {
                let ab = field.entry(id, a, b);
                if a == b || ab == 0.0 {
                    continue;
                }
                let test = centered_stencil(domain, faces, u, a);
                let trial = centered_stencil(domain, faces, u, b);
                for &(tn, tw) in &test {
                    let Node::Cell(i) = tn else { continue };
                    for &(sn, sw) in &trial {
                        let val = vol * ab * tw * sw;
                        match sn {
                            Node::Cell(j) => tm.push((i, j, val)),
                            Node::Face(f) => tb.push((i, f, val)),
                        }
                    }
                }
            }
        }
    }
    (Csr::from_triplets(m, m, tm), Csr::from_triplets(m, domain.n_faces(), tb))
}
