//! Disagreement between two coefficient fields, its Carleson-type functionals,
//! reverse Hölder constants of elliptic measures and their composition.
//!
//! Suprema over balls run over a [`BallFamily`]: surface balls centered at
//! dyadic cube centers with radii `ℓ(Q)` and `ℓ(Q)/√2`, so consecutive radii
//! differ by `√2`. Integrals are Riemann sums over interior cells.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::carleson::{carleson_norm, CubeMeasure, CubeTree};
use crate::coefficients::{diff_norm, CoefficientField};
use crate::domain::{dist, GridDomain, SurfaceBall};
use crate::dyadic::DyadicGrid;
use crate::error::{Error, Result};
use crate::regions::Setting;
use crate::solver::{Operator, POLE_MIN_DEPTH};

/// Deterministic family of surface balls with their corkscrew poles.
#[derive(Clone, Debug)]
pub struct BallFamily {
    pub balls: Vec<SurfaceBall>,
    /// Corkscrew cell of each ball, `None` when it lies closer than
    /// [`POLE_MIN_DEPTH`] spacings to the boundary.
    pub poles: Vec<Option<usize>>,
    /// Smallest corkscrew ratio over the family (the grid `c₀`).
    pub c0: f64,
    /// `diam(∂Ω)`.
    pub diam: f64,
}

impl BallFamily {
    /// Balls `B(x_Q, ℓ(Q))`, `B(x_Q, ℓ(Q)/√2)` with radius in `[r_min, r_max]`
    /// and below `diam(∂Ω)`.
    pub fn dyadic(domain: &GridDomain, grid: &DyadicGrid, r_min: f64, r_max: f64) -> Result<BallFamily> {
        if !(r_min > 0.0 && r_max >= r_min) {
            return Err(Error::InvalidParameter(format!("radius range [{r_min}, {r_max}]")));
        }
        let diam = domain.diam();
        let mut keys = BTreeSet::new();
        for cube in &grid.cubes {
            for r in [cube.length, cube.length / std::f64::consts::SQRT_2] {
                if r >= r_min && r <= r_max && r < diam {
                    // Larger balls first, then by center.
                    keys.insert((std::cmp::Reverse(r.to_bits()), cube.center));
                }
            }
        }
        if keys.is_empty() {
            return Err(Error::Resolution(format!("no dyadic ball with radius in [{r_min}, {r_max}]")));
        }
        let balls: Vec<SurfaceBall> =
            keys.into_iter().map(|(r, c)| domain.surface_ball(c, f64::from_bits(r.0))).collect::<Result<_>>()?;
        let found: Vec<(Option<usize>, f64)> = balls
            .par_iter()
            .map(|b| {
                let ck = domain.corkscrew(&b.center, b.radius)?;
                let deep = domain.delta(ck.cell) >= POLE_MIN_DEPTH * domain.h;
                Ok((deep.then_some(ck.cell), ck.c0))
            })
            .collect::<Result<_>>()?;
        let c0 = found.iter().map(|f| f.1).fold(f64::INFINITY, f64::min);
        Ok(BallFamily { balls, poles: found.into_iter().map(|f| f.0).collect(), c0, diam })
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    /// Index of the family ball with the given center face and radius.
    pub fn find(&self, face: usize, radius: f64) -> Option<usize> {
        self.balls.iter().position(|b| b.center_face == face && b.radius == radius)
    }
}

/// `ϱ(A,A₀)(X) = max_{Y ∈ B(X, δ(X)/2)} ‖A(Y) - A₀(Y)‖` per interior cell.
pub fn disagreement(domain: &GridDomain, a: &CoefficientField, a0: &CoefficientField) -> Vec<f64> {
    let d = domain.dim;
    let local: Vec<f64> = (0..domain.n_cells())
        .map(|u| {
            let id = domain.cell_lattice(u);
            diff_norm(a.at(id), a0.at(id), d)
        })
        .collect();
    let support: Vec<usize> = (0..domain.n_cells()).filter(|&u| local[u] > 0.0).collect();
    if support.is_empty() {
        return vec![0.0; domain.n_cells()];
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &u in &support {
        let p = domain.cell_point(u);
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (0..domain.n_cells())
        .into_par_iter()
        .map(|u| {
            let p = domain.cell_point(u);
            let r = 0.5 * domain.delta(u);
            let gap2: f64 = (0..d).map(|k| (lo[k] - p[k]).max(p[k] - hi[k]).max(0.0).powi(2)).sum();
            if gap2 >= r * r {
                return 0.0;
            }
            let mut m = 0.0f64;
            domain.for_cells_within(&p, r, |v| m = m.max(local[v]));
            m
        })
        .collect()
}

/// A supremum over balls with the pair attaining it.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct FunctionalValue {
    pub value: f64,
    /// `(outer ball, inner ball)` indices into the family.
    pub argmax: Option<(usize, usize)>,
    pub pairs: usize,
}

impl FunctionalValue {
    fn offer(&mut self, v: f64, at: (usize, usize)) {
        // An empty float sum is -0.0; report it as 0.
        let v = v + 0.0;
        self.pairs += 1;
        if v > self.value || self.argmax.is_none() {
            self.value = self.value.max(v);
            self.argmax = Some(at);
        }
    }

    fn merge(mut self, other: FunctionalValue) -> FunctionalValue {
        let pairs = self.pairs + other.pairs;
        if other.argmax.is_some() && (self.argmax.is_none() || other.value > self.value) {
            self = other;
        }
        self.pairs = pairs;
        self
    }
}

/// Cells of `B ∩ Ω` where `ϱ > 0`, with weight `ϱ² vol / δ^power`.
fn weighted_cells(domain: &GridDomain, rho: &[f64], ball: &SurfaceBall, power: i32) -> Vec<(usize, f64)> {
    let vol = domain.cell_volume();
    let mut out = Vec::new();
    domain.for_cells_within(&ball.center, ball.radius, |u| {
        if rho[u] > 0.0 {
            out.push((u, rho[u] * rho[u] * vol / domain.delta(u).powi(power)));
        }
    });
    out
}

/// `⫴ϱ⫴_σ = sup_B σ(Δ)^{-1} ∬_{B∩Ω} ϱ²/δ`.
pub fn sigma_functional(domain: &GridDomain, rho: &[f64], family: &BallFamily) -> FunctionalValue {
    let faces = domain.faces();
    family
        .balls
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let mut fv = FunctionalValue::default();
            let sigma: f64 = b.members.iter().map(|&f| faces[f].sigma).sum();
            if sigma > 0.0 {
                let mass: f64 = weighted_cells(domain, rho, b, 1).iter().map(|c| c.1).sum();
                fv.offer(mass / sigma, (i, i));
            }
            fv
        })
        .reduce(FunctionalValue::default, FunctionalValue::merge)
}

/// `⫴ϱ⫴ = sup_B sup_{B'} ω₀^{X_Δ}(Δ')^{-1} ∬_{B'∩Ω} ϱ² G₀(X_Δ,·)/δ²` over
/// `B' = B(x', r')`, `x' ∈ 2Δ`, `r' < r c₀/4`.
pub fn global_functional(op0: &Operator, rho: &[f64], family: &BallFamily) -> Result<FunctionalValue> {
    let domain = &op0.domain;
    let vol = domain.cell_volume();
    let density: Vec<f64> = (0..domain.n_cells()).map(|u| rho[u] * rho[u] * vol / domain.delta(u).powi(2)).collect();
    green_weighted_sup(op0, family, &density)
}

/// `sup_B sup_{B'} ω^{X_Δ}(Δ')^{-1} Σ_{B'∩Ω} density · G(X_Δ,·)` over the
/// pairs of [`global_functional`]. `density` already carries the cell volume.
pub fn green_weighted_sup(op: &Operator, family: &BallFamily, density: &[f64]) -> Result<FunctionalValue> {
    let domain = &op.domain;
    let inner: Vec<Vec<(usize, f64)>> = family
        .balls
        .par_iter()
        .map(|b| {
            let mut out = Vec::new();
            domain.for_cells_within(&b.center, b.radius, |u| {
                if density[u] > 0.0 {
                    out.push((u, density[u]));
                }
            });
            out
        })
        .collect();
    let outer: Vec<usize> = (0..family.len()).filter(|&i| family.poles[i].is_some()).collect();
    let parts: Vec<FunctionalValue> = outer
        .par_iter()
        .map(|&i| {
            let b = &family.balls[i];
            let mut fv = FunctionalValue::default();
            let cand: Vec<usize> = (0..family.len())
                .filter(|&j| {
                    let bp = &family.balls[j];
                    bp.radius < b.radius * family.c0 / 4.0 && dist(&bp.center, &b.center) < 2.0 * b.radius
                })
                .collect();
            if cand.is_empty() {
                return Ok(fv);
            }
            let m = op.elliptic_measure(family.poles[i].expect("filtered"))?;
            for j in cand {
                let w = m.mass(&family.balls[j].members);
                if w <= 0.0 {
                    continue;
                }
                let s: f64 = inner[j].iter().map(|&(u, c)| c * m.green[u]).sum();
                fv.offer(s / w, (i, j));
            }
            Ok(fv)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(FunctionalValue::default(), FunctionalValue::merge))
}

/// `⫴ϱ⫴_{B₀} = sup_B ω₀^{X_{Δ₀}}(Δ)^{-1} ∬_{B∩Ω} ϱ² G₀(X_{Δ₀},·)/δ²` over
/// `B = B(x, r)`, `x ∈ 2Δ₀`, `r < r₀ c₀/4`.
pub fn local_functional(op0: &Operator, rho: &[f64], family: &BallFamily, b0: usize) -> Result<FunctionalValue> {
    let pole = family.poles[b0].ok_or_else(|| Error::Pole(format!("ball {b0} has no admissible corkscrew pole")))?;
    let m = op0.elliptic_measure(pole)?;
    local_functional_with(&op0.domain, rho, family, b0, &m.omega, &m.green)
}

/// [`local_functional`] with the pole's measure and Green function supplied.
pub fn local_functional_with(
    domain: &GridDomain,
    rho: &[f64],
    family: &BallFamily,
    b0: usize,
    omega0: &[f64],
    green0: &[f64],
) -> Result<FunctionalValue> {
    let cap = family.balls[b0].radius * family.c0 / 4.0;
    local_functional_capped(domain, rho, family, b0, cap, omega0, green0)
}

/// The local functional with inner radii `r < cap` instead of `r < r₀ c₀/4`.
pub fn local_functional_capped(
    domain: &GridDomain,
    rho: &[f64],
    family: &BallFamily,
    b0: usize,
    cap: f64,
    omega0: &[f64],
    green0: &[f64],
) -> Result<FunctionalValue> {
    let base = &family.balls[b0];
    let mut fv = FunctionalValue::default();
    for (j, b) in family.balls.iter().enumerate() {
        if !(b.radius < cap && dist(&b.center, &base.center) < 2.0 * base.radius) {
            continue;
        }
        let w: f64 = b.members.iter().map(|&f| omega0[f]).sum();
        if w <= 0.0 {
            continue;
        }
        let s: f64 = weighted_cells(domain, rho, b, 2).iter().map(|&(u, c)| c * green0[u]).sum();
        fv.offer(s / w, (b0, j));
    }
    if fv.argmax.is_none() {
        return Err(Error::Resolution(format!("no admissible inner ball for ball {b0} below radius {cap:.4}")));
    }
    Ok(fv)
}

/// `𝒜_α(ϱ)(x) = (∬_{Γ_α(x)} ϱ²/δ^d)^{1/2}` per boundary face, with
/// `Γ_α(x) = {Y : |Y - x| < (1+α)δ(Y)}`.
pub fn conical_functional(domain: &GridDomain, rho: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("aperture {alpha} must be positive")));
    }
    let vol = domain.cell_volume();
    let d = domain.dim as i32;
    let support: Vec<(usize, f64)> = (0..domain.n_cells())
        .filter(|&u| rho[u] > 0.0)
        .map(|u| (u, rho[u] * rho[u] * vol / domain.delta(u).powi(d)))
        .collect();
    Ok(domain
        .face_points()
        .par_iter()
        .map(|x| {
            support
                .iter()
                .filter(|&&(u, _)| dist(&domain.cell_point(u), x) < (1.0 + alpha) * domain.delta(u))
                .map(|c| c.1)
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Largest `∬_{B∩Ω} ϱ²/δ  /  ∫_{(2+α)Δ} 𝒜_α(ϱ)² dσ` over the family.
pub fn fubini_ratio(domain: &GridDomain, rho: &[f64], cone: &[f64], alpha: f64, family: &BallFamily) -> f64 {
    let faces = domain.faces();
    family
        .balls
        .par_iter()
        .map(|b| {
            let lhs: f64 = weighted_cells(domain, rho, b, 1).iter().map(|c| c.1).sum();
            if lhs == 0.0 {
                return 0.0;
            }
            let rhs: f64 = domain
                .faces_within(&b.center, (2.0 + alpha) * b.radius)
                .iter()
                .map(|&f| cone[f] * cone[f] * faces[f].sigma)
                .sum();
            if rhs > 0.0 {
                lhs / rhs
            } else {
                f64::INFINITY
            }
        })
        .reduce(|| 0.0, f64::max)
}

/// `sup_{I*} ‖A - A₀‖` for every Whitney cube.
pub fn whitney_star_sup(setting: &Setting, a: &CoefficientField, a0: &CoefficientField) -> Vec<f64> {
    let domain = &setting.domain;
    (0..setting.whitney.len())
        .into_par_iter()
        .map(|i| {
            let mut m = 0.0f64;
            setting.whitney.for_star_cells(domain, i, 1, |u| {
                let id = domain.cell_lattice(u);
                m = m.max(diff_norm(a.at(id), a0.at(id), domain.dim));
            });
            m
        })
        .collect()
}

/// The coefficients `γ_Q = ω₀(Q) Σ_{I ∈ 𝒲_Q*} ‖A - A₀‖²_{L∞(I*)}` on `𝔻_{Q⁰}`,
/// with the cube tree and the tree measure of `ω₀`.
pub struct GammaSequence {
    pub tree: CubeTree,
    pub omega0: CubeMeasure,
    pub gamma: Vec<f64>,
}

pub fn gamma_coefficients(setting: &Setting, star_sup: &[f64], omega0: &[f64], q0: usize) -> Result<GammaSequence> {
    let tree = CubeTree::from_grid(&setting.grid, q0)?;
    let atoms: Vec<f64> = tree.atoms.iter().map(|&f| omega0[f]).collect();
    let omega0 = CubeMeasure::new(&tree, atoms)?;
    let gamma = (0..tree.len())
        .map(|t| {
            let q = tree.label[t];
            let s: f64 = setting.regions.members[q].iter().map(|&i| star_sup[i] * star_sup[i]).sum();
            omega0.cube[t] * s
        })
        .collect();
    Ok(GammaSequence { tree, omega0, gamma })
}

impl GammaSequence {
    /// `‖𝔪_γ‖_{𝒞(Q⁰, ω₀)}`.
    pub fn norm(&self) -> f64 {
        carleson_norm(&self.tree, &self.gamma, &self.omega0)
    }
}

/// One evaluation of `‖𝔪_γ‖_{𝒞(Q⁰, ω₀)} ≤ κ ⫴ϱ⫴_{B₀}`.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct GammaBound {
    pub gamma_norm: f64,
    pub functional: FunctionalValue,
    /// `gamma_norm / functional.value`.
    pub kappa: f64,
}

/// Compares the `γ` Carleson norm on `Q⁰ = q0` with the local functional of
/// `B₀ = b0`, admitting inner balls up to the radius `2κ₀ r_{Q⁰}` of `B*_{Q⁰}`.
/// `kappa0` is the measured sandwich constant; `omega0` and `green0` belong
/// to the pole of `B₀`. Fails when `ϱ` misses
/// every admissible inner ball, since `κ` is then undefined.
#[allow(clippy::too_many_arguments)]
pub fn gamma_bound(
    setting: &Setting,
    family: &BallFamily,
    b0: usize,
    q0: usize,
    kappa0: f64,
    a: &CoefficientField,
    a0: &CoefficientField,
    omega0: &[f64],
    green0: &[f64],
) -> Result<GammaBound> {
    let domain = &setting.domain;
    let cap = 2.0 * kappa0 * setting.grid.cube(q0).radius;
    let rho = disagreement(domain, a, a0);
    let functional = local_functional_capped(domain, &rho, family, b0, cap, omega0, green0)?;
    if !(functional.value > 0.0) {
        return Err(Error::Resolution(format!("disagreement vanishes on every inner ball of ball {b0}")));
    }
    let sup = whitney_star_sup(setting, a, a0);
    let gamma_norm = gamma_coefficients(setting, &sup, omega0, q0)?.norm();
    Ok(GammaBound { gamma_norm, functional, kappa: gamma_norm / functional.value })
}

/// `h = dω/dω₀` facewise.
pub fn rn_density(omega: &[f64], omega0: &[f64]) -> Result<Vec<f64>> {
    omega
        .iter()
        .zip(omega0)
        .enumerate()
        .map(|(f, (&w, &w0))| if w0 > 0.0 { Ok(w / w0) } else { Err(Error::DensityUndefined(f)) })
        .collect()
}

/// Measures seen from the corkscrew pole of one ball `Δ₀`.
#[derive(Clone, Debug)]
pub struct PoleMeasures {
    pub ball: usize,
    /// Measure whose density is tested (e.g. `ω_L^{X_{Δ₀}}`).
    pub nu: Vec<f64>,
    /// Reference measure (e.g. `ω_{L₀}^{X_{Δ₀}}` or `σ`).
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct RhReport {
    pub p: f64,
    pub constant: f64,
    /// `(Δ₀, Δ)` ball indices attaining the constant.
    pub argmax: Option<(usize, usize)>,
    /// Per `Δ₀`: the largest ratio over `Δ ⊂ B₀`.
    pub per_ball: Vec<(usize, f64)>,
}

/// `(⨏_Δ (dν/dμ)^p dμ)^{1/p} / (ν(Δ)/μ(Δ))` for one surface ball.
pub fn rh_ratio(members: &[usize], nu: &[f64], mu: &[f64], p: f64) -> Result<Option<f64>> {
    let (mut m, mut n, mut s) = (0.0, 0.0, 0.0);
    for &f in members {
        if !(mu[f] > 0.0) {
            return Err(Error::DensityUndefined(f));
        }
        m += mu[f];
        n += nu[f];
        s += (nu[f] / mu[f]).powf(p) * mu[f];
    }
    if m == 0.0 || n == 0.0 {
        return Ok(None);
    }
    Ok(Some((s / m).powf(1.0 / p) / (n / m)))
}

/// `[ν]_{RH_p(μ)}`: the sup of [`rh_ratio`] over `Δ = B ∩ ∂Ω`, `B ⊆ B₀`, for
/// every `Δ₀` in `poles`, each with its own pole's measures.
pub fn rh_constant(family: &BallFamily, p: f64, poles: &[PoleMeasures]) -> Result<RhReport> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("exponent {p} must exceed 1")));
    }
    let per: Vec<(usize, f64, Option<usize>)> = poles
        .par_iter()
        .map(|pm| {
            let b0 = &family.balls[pm.ball];
            let mut best = (1.0, None);
            for (j, b) in family.balls.iter().enumerate() {
                if dist(&b.center, &b0.center) + b.radius > b0.radius * (1.0 + 1e-12) {
                    continue;
                }
                if let Some(r) = rh_ratio(&b.members, &pm.nu, &pm.mu, p)? {
                    if best.1.is_none() || r > best.0 {
                        best = (r, Some(j));
                    }
                }
            }
            Ok((pm.ball, best.0, best.1))
        })
        .collect::<Result<_>>()?;
    let mut report = RhReport { p, constant: 1.0, argmax: None, per_ball: Vec::with_capacity(per.len()) };
    for (b0, r, j) in per {
        report.per_ball.push((b0, r));
        if let Some(j) = j {
            if report.argmax.is_none() || r > report.constant {
                report.constant = r;
                report.argmax = Some((b0, j));
            }
        }
    }
    Ok(report)
}

/// `(ball, ω, ω₀)` at the pole of one ball.
pub type PolePair = (usize, Vec<f64>, Vec<f64>);

/// Elliptic measures of `op` and `op0` at the poles of the listed balls.
pub fn pole_pairs(op: &Operator, op0: &Operator, family: &BallFamily, balls: &[usize]) -> Result<Vec<PolePair>> {
    balls
        .par_iter()
        .filter_map(|&b| family.poles[b].map(|x| (b, x)))
        .map(|(b, x)| Ok((b, op.elliptic_measure(x)?.omega, op0.elliptic_measure(x)?.omega)))
        .collect()
}

/// Surface measure of every face.
pub fn surface_measure(domain: &GridDomain) -> Vec<f64> {
    domain.faces().iter().map(|f| f.sigma).collect()
}

/// `r = pq/(p+q-1)` and the bound `[ω_L]_{RH_q(ω₀)} [ω₀]_{RH_p(σ)}^{1/q'}`.
pub fn compose_rh(p: f64, q: f64, rh_q_omega0: f64, rh_p_sigma: f64) -> Result<(f64, f64)> {
    if !(p > 1.0 && q > 1.0) {
        return Err(Error::InvalidParameter(format!("exponents ({p}, {q}) must exceed 1")));
    }
    let r = p * q / (p + q - 1.0);
    let q_dual = q / (q - 1.0);
    Ok((r, rh_q_omega0 * rh_p_sigma.powf(1.0 / q_dual)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Shape;

    #[test]
    fn composed_exponent() {
        let (r, b) = compose_rh(2.0, 2.0, 1.1, 1.3).unwrap();
        assert!((r - 4.0 / 3.0).abs() < 1e-15);
        assert!((b - 1.1 * 1.3f64.sqrt()).abs() < 1e-15);
        let (r, _) = compose_rh(3.0, 1e9, 1.0, 1.0).unwrap();
        assert!((r - 3.0).abs() < 1e-8);
    }

    #[test]
    fn constant_shift_gives_constant_disagreement() {
        let d = GridDomain::build(&Shape::Square, 17).unwrap();
        let a0 = CoefficientField::identity(&d);
        let a = CoefficientField::constant(&d, &[1.3, 0.0, 0.0, 1.3]).unwrap();
        let rho = disagreement(&d, &a, &a0);
        assert!(rho.iter().all(|&r| (r - 0.3).abs() < 1e-12));
        assert!(disagreement(&d, &a0, &a0).iter().all(|&r| r == 0.0));
    }

    #[test]
    fn rh_ratio_is_one_for_proportional_measures() {
        let mu = [1.0, 2.0, 3.0];
        let nu = [2.0, 4.0, 6.0];
        let r = rh_ratio(&[0, 1, 2], &nu, &mu, 2.0).unwrap().unwrap();
        assert!((r - 1.0).abs() < 1e-14);
        assert!(matches!(rh_ratio(&[0], &nu, &[0.0], 2.0), Err(Error::DensityUndefined(0))));
    }
}
