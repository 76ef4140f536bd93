//! Localized square and non-tangential maximal functions on dyadic cones,
//! the Carleson measure estimate functional, the `S ≲ N` comparison with its
//! good-λ fit, and the sawtooth measure `ν` with its bounds check.
//!
//! Boundary points are faces; a face `x` lies in the cube `Q` when its point
//! index belongs to `Q.members`. Cones are cell sets and are recomputed per
//! vertex rather than stored.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{dist, GridDomain, Point};
use crate::dyadic::power_fit;
use crate::error::{Error, Result};
use crate::perturbation::{green_weighted_sup, BallFamily, FunctionalValue};
use crate::regions::{CommonCorkscrew, ProjectionReport, Sawtooth, Setting};
use crate::solver::{face_lookup, EllipticMeasure, Operator};

/// `U_Q` cells for `stars = 1`, `U_Q*` cells for `stars = 2`.
fn for_region_cells(setting: &Setting, q: usize, stars: u8, mut f: impl FnMut(usize)) {
    for &i in &setting.regions.members[q] {
        setting.whitney.for_star_cells(&setting.domain, i, stars, &mut f);
    }
}

/// Cubes `Q' ∈ 𝔻_{Q₀}` containing face `x`, coarse to fine, with
/// `ℓ(Q') ≥ 2^{-depth} ℓ(Q₀)` when `depth` is given. Empty when `x ∉ Q₀`.
pub fn cone_chain(setting: &Setting, face: usize, q0: usize, depth: Option<u32>) -> Vec<usize> {
    let grid = &setting.grid;
    let k0 = grid.cube(q0).generation;
    if grid.cube_of(k0, face) != q0 {
        return Vec::new();
    }
    let last = depth.map_or(grid.k_max, |d| (k0 + d as i32).min(grid.k_max));
    (k0..=last).map(|k| grid.cube_of(k, face)).collect()
}

/// Cells of `Γ_{Q₀}(x)` (`stars = 1`) or `Γ*_{Q₀}(x)` (`stars = 2`), sorted.
pub fn cone_cells(setting: &Setting, face: usize, q0: usize, stars: u8, depth: Option<u32>) -> Vec<usize> {
    let mut cells = Vec::new();
    for q in cone_chain(setting, face, q0, depth) {
        for_region_cells(setting, q, stars, |u| cells.push(u));
    }
    cells.sort_unstable();
    cells.dedup();
    cells
}

/// `∇u` by centered differences, one-sided where a neighbor is missing.
pub fn cell_gradient(domain: &GridDomain, u: &[f64], c: usize) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (a, ga) in g.iter_mut().enumerate().take(domain.dim) {
        *ga = match (domain.neighbor(c, a, 1), domain.neighbor(c, a, -1)) {
            (Some(p), Some(m)) => (u[p] - u[m]) / (2.0 * domain.h),
            (Some(p), None) => (u[p] - u[c]) / domain.h,
            (None, Some(m)) => (u[c] - u[m]) / domain.h,
            (None, None) => 0.0,
        };
    }
    g
}

/// `|∇u|²` per interior cell.
pub fn gradient_squared(domain: &GridDomain, u: &[f64]) -> Vec<f64> {
    (0..domain.n_cells()).into_par_iter().map(|c| cell_gradient(domain, u, c).iter().map(|x| x * x).sum()).collect()
}

fn check_coverage(domain: &GridDomain, u: &[f64]) -> Result<()> {
    if u.len() != domain.n_cells() {
        return Err(Error::Coverage(format!("solution has {} values for {} cells", u.len(), domain.n_cells())));
    }
    Ok(())
}

/// `𝒮_{Q₀}u(x) = (Σ_{Γ_{Q₀}(x)} |∇u|² δ^{1-n} vol)^{1/2}` per face, zero off `Q₀`.
/// `depth` truncates the cone to `ℓ(Q') ≥ 2^{-depth} ℓ(Q₀)`.
pub fn square_function(setting: &Setting, u: &[f64], q0: usize, depth: Option<u32>) -> Result<Vec<f64>> {
    let domain = &setting.domain;
    check_coverage(domain, u)?;
    let vol = domain.cell_volume();
    let grad2 = gradient_squared(domain, u);
    let weight: Vec<f64> =
        (0..domain.n_cells()).map(|c| grad2[c] * vol * domain.delta(c).powi(1 - domain.dim as i32)).collect();
    Ok((0..domain.n_faces())
        .into_par_iter()
        .map(|x| cone_cells(setting, x, q0, 1, depth).iter().map(|&c| weight[c]).sum::<f64>().sqrt())
        .collect())
}

/// `𝒩_{Q₀}u(x) = sup_{Γ*_{Q₀}(x)} |u|` per face, zero off `Q₀`.
pub fn nontangential_max(setting: &Setting, u: &[f64], q0: usize) -> Result<Vec<f64>> {
    check_coverage(&setting.domain, u)?;
    Ok((0..setting.domain.n_faces())
        .into_par_iter()
        .map(|x| cone_cells(setting, x, q0, 2, None).iter().map(|&c| u[c].abs()).fold(0.0, f64::max))
        .collect())
}

/// `‖f‖_{L^q(Q₀, ω)}`.
pub fn lq_norm(values: &[f64], omega: &[f64], faces: &[usize], q: f64) -> f64 {
    faces.iter().map(|&f| values[f].abs().powf(q) * omega[f]).sum::<f64>().powf(1.0 / q)
}

/// CME functional `sup ω^{X_Δ}(Δ')^{-1} ∬_{B'∩Ω} |∇u|² G_L(X_Δ,·)` over the
/// ball pairs of the perturbation functionals.
pub fn cme_functional(op: &Operator, u: &[f64], family: &BallFamily) -> Result<FunctionalValue> {
    let domain = &op.domain;
    check_coverage(domain, u)?;
    let vol = domain.cell_volume();
    let density: Vec<f64> = gradient_squared(domain, u).into_iter().map(|g| g * vol).collect();
    green_weighted_sup(op, family, &density)
}

/// Smooth random boundary data: a sum of up to four Gaussian bumps with
/// amplitudes in `[-1, 1]` and centers in the unit box. The draws do not
/// depend on the lattice, so one seed gives the same function at every
/// resolution.
pub fn random_boundary_data(domain: &GridDomain, rng: &mut impl Rng) -> Vec<f64> {
    let k = rng.random_range(1..=4);
    let bumps: Vec<(Point, f64, f64)> = (0..k)
        .map(|_| {
            let mut c = [0.0; 3];
            for x in c.iter_mut().take(domain.dim) {
                *x = rng.random();
            }
            (c, rng.random_range(0.05..0.2), rng.random_range(-1.0..1.0))
        })
        .collect();
    domain
        .face_points()
        .iter()
        .map(|p| bumps.iter().map(|(c, s, a)| a * (-(dist(p, c) / s).powi(2) / 2.0).exp()).sum())
        .collect()
}

/// Corkscrew pole `X_{Q₀}` usable by the solver.
pub fn cube_pole(setting: &Setting, q0: usize) -> Result<usize> {
    let x = setting.regions.corkscrew[q0];
    if setting.domain.delta(x) < crate::solver::POLE_MIN_DEPTH * setting.domain.h {
        return Err(Error::Resolution(format!("corkscrew of cube {q0} lies too close to the boundary")));
    }
    Ok(x)
}

#[derive(Clone, Debug, Serialize)]
pub struct SnSample {
    pub s_norm: f64,
    pub n_norm: f64,
    pub data_norm: f64,
    /// `‖𝒮u‖ / ‖𝒩u‖`.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GoodLambdaFit {
    /// Exponent `ϑ` in `left ≤ K (γ/β)^ϑ right`.
    pub theta: f64,
    pub k: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    /// Lattice points with positive left mass.
    pub points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SnReport {
    pub q0: usize,
    pub q: f64,
    pub samples: Vec<SnSample>,
    /// Largest ratio over the family.
    pub c_q: f64,
    /// Largest `‖𝒩u‖ / ‖f‖` over the family.
    pub nt_data: f64,
    pub good_lambda: Option<GoodLambdaFit>,
}

/// Per-solution norms of `𝒮_{Q₀}u` and `𝒩_{Q₀}u` in `L^q(Q₀, ω^{X_{Q₀}})`,
/// the fitted `C_q`, and the good-λ exponent over a `(β, γ, λ)` lattice.
pub fn s_vs_n(setting: &Setting, op: &Operator, data: &[Vec<f64>], q0: usize, q: f64) -> Result<SnReport> {
    if !(q > 0.0) {
        return Err(Error::InvalidParameter(format!("exponent {q} must be positive")));
    }
    let omega = op.elliptic_measure(cube_pole(setting, q0)?)?.omega;
    let faces: Vec<usize> = setting.grid.cube(q0).members.clone();
    let mut samples = Vec::new();
    let mut pairs = Vec::new();
    for f in data {
        let u = op.solve_dirichlet(f)?;
        let s = square_function(setting, &u, q0, None)?;
        let n = nontangential_max(setting, &u, q0)?;
        let (sn, nn) = (lq_norm(&s, &omega, &faces, q), lq_norm(&n, &omega, &faces, q));
        let data_norm = lq_norm(f, &omega, &faces, q);
        let ratio = if nn > 0.0 { sn / nn } else { 0.0 };
        samples.push(SnSample { s_norm: sn, n_norm: nn, data_norm, ratio });
        pairs.push((s, n));
    }
    let c_q = samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
    let nt_data = samples.iter().filter(|s| s.data_norm > 0.0).map(|s| s.n_norm / s.data_norm).fold(0.0, f64::max);
    let good_lambda = good_lambda_fit(&pairs, &omega, &faces);
    Ok(SnReport { q0, q, samples, c_q, nt_data, good_lambda })
}

/// Fits `ω{𝒮 > (1+β)λ, 𝒩 ≤ γλ} ≤ K (γ/β)^ϑ ω{𝒮 > λ}` by regressing the mass
/// ratio on `γ/β` in log-log scale; `K` makes the bound hold on every point.
pub fn good_lambda_fit(pairs: &[(Vec<f64>, Vec<f64>)], omega: &[f64], faces: &[usize]) -> Option<GoodLambdaFit> {
    const BETAS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
    const GAMMAS: [f64; 5] = [0.02, 0.05, 0.1, 0.2, 0.5];
    const LAMBDA_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (s, n) in pairs {
        let mut sv: Vec<f64> = faces.iter().map(|&f| s[f]).filter(|v| *v > 0.0).collect();
        if sv.is_empty() {
            continue;
        }
        sv.sort_by(f64::total_cmp);
        for qt in LAMBDA_QUANTILES {
            let lambda = sv[((sv.len() - 1) as f64 * qt) as usize];
            let right: f64 = faces.iter().filter(|&&f| s[f] > lambda).map(|&f| omega[f]).sum();
            if right <= 0.0 {
                continue;
            }
            for b in BETAS {
                for g in GAMMAS {
                    let left: f64 = faces
                        .iter()
                        .filter(|&&f| s[f] > (1.0 + b) * lambda && n[f] <= g * lambda)
                        .map(|&f| omega[f])
                        .sum();
                    if left > 0.0 {
                        xs.push(g / b);
                        ys.push(left / right);
                    }
                }
            }
        }
    }
    if xs.len() < 2 || xs.iter().all(|&x| x == xs[0]) {
        return None;
    }
    let (_, theta, _) = power_fit(&xs, &ys);
    let k = xs.iter().zip(&ys).map(|(x, y)| y / x.powf(theta)).fold(0.0, f64::max);
    let lk = xs.iter().zip(&ys).map(|(x, y)| y.ln() - theta * x.ln()).sum::<f64>() / xs.len() as f64;
    let residual =
        (xs.iter().zip(&ys).map(|(x, y)| (y.ln() - theta * x.ln() - lk).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
    Some(GoodLambdaFit { theta, k, residual, points: xs.len() })
}

/// The sawtooth measure `ν` on the faces of `Q₀`.
#[derive(Clone, Debug, Serialize)]
pub struct SawtoothNu {
    pub q0: usize,
    pub family: Vec<usize>,
    /// Ambient interior cell of the pole `Y_{Q₀}`.
    pub pole: usize,
    /// `ν` per ambient face; zero outside `Q₀`.
    pub nu: Vec<f64>,
    /// `ω_L^{Y_{Q₀}}` per ambient face.
    pub omega: Vec<f64>,
    /// `ω_{L,*}^{Y_{Q₀}}` transferred to ambient faces on `∂Ω`.
    pub omega_star: Vec<f64>,
    /// `ω_{L,*}^{Y_{Q₀}}(P_i)` per family cube.
    pub patch_mass: Vec<f64>,
    pub corkscrew: CommonCorkscrew,
    #[serde(skip)]
    pub projection: ProjectionReport,
}

/// `ν(F) = ω_{L,*}(F ∖ ⋃Q_i) + Σ_i ω_L(F ∩ Q_i)/ω_L(Q_i) · ω_{L,*}(P_i)`, with
/// `ω_{L,*}` solved on the sawtooth as a standalone domain.
pub fn djk_nu(setting: &Setting, op: &Operator, family: &[usize], q0: usize) -> Result<SawtoothNu> {
    let saw: Sawtooth = setting.sawtooth(family, q0)?;
    if saw.empty {
        return Err(Error::Resolution(format!("sawtooth over cube {q0} has no cells")));
    }
    let sub = setting.sub_domain(&saw)?;
    let corkscrew = setting.common_corkscrew(&sub);
    let domain = &setting.domain;
    let sub_domain = std::sync::Arc::new(sub.domain);
    let y_sub = sub_domain
        .cell_of_lattice(domain.cell_lattice(corkscrew.cell))
        .ok_or_else(|| Error::Resolution("sawtooth pole left the sawtooth".into()))?;
    let sub_op = Operator::new(sub_domain.clone(), op.field.clone())?;
    let star: EllipticMeasure = sub_op.elliptic_measure(y_sub).map_err(|e| match e {
        Error::Pole(m) => Error::Resolution(format!("sawtooth too thin for a pole: {m}")),
        e => e,
    })?;
    let omega = op.elliptic_measure(corkscrew.cell)?.omega;

    // Sub-domain faces keyed by (ambient cell, axis, dir).
    let ambient_faces = face_lookup(domain);
    let d = domain.dim;
    let sub_key = |f: usize| {
        let sf = &sub_domain.faces()[f];
        let cell = domain.cell_of_lattice(sub_domain.cell_lattice(sf.cell)).expect("sub-domain cells are ambient");
        (cell, sf.axis, sf.dir)
    };
    let mut omega_star = vec![0.0; domain.n_faces()];
    let mut inner = std::collections::HashMap::new();
    for f in 0..sub_domain.n_faces() {
        let (cell, axis, dir) = sub_key(f);
        let amb = ambient_faces[cell * 2 * d + 2 * axis as usize + usize::from(dir > 0)];
        if amb != u32::MAX {
            omega_star[amb as usize] = star.omega[f];
        } else {
            inner.insert((cell, axis, dir), star.omega[f]);
        }
    }
    let projection = setting.projection_cubes(&saw);
    let mut patch_mass = vec![0.0; family.len()];
    for p in &projection.patches {
        let i = family.iter().position(|&c| c == p.cube).expect("patches follow the family");
        patch_mass[i] = p.faces.iter().map(|k| inner.get(k).copied().unwrap_or(0.0)).sum();
    }
    let mut nu = vec![0.0; domain.n_faces()];
    let mut covered = vec![false; domain.n_faces()];
    for (i, &qi) in family.iter().enumerate() {
        let members = &setting.grid.cube(qi).members;
        let w: f64 = members.iter().map(|&f| omega[f]).sum();
        for &f in members {
            covered[f] = true;
            if w > 0.0 {
                nu[f] = omega[f] / w * patch_mass[i];
            }
        }
    }
    for &f in &setting.grid.cube(q0).members {
        if !covered[f] {
            nu[f] = omega_star[f];
        }
    }
    Ok(SawtoothNu {
        q0,
        family: family.to_vec(),
        pole: corkscrew.cell,
        nu,
        omega,
        omega_star,
        patch_mass,
        corkscrew,
        projection,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DjkSample {
    pub q: usize,
    pub f_cubes: Vec<usize>,
    /// `ω(F)/ω(Q)`.
    pub omega_ratio: f64,
    /// `ν(F)/ν(Q)`.
    pub nu_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DjkReport {
    pub samples: Vec<DjkSample>,
    /// `max ν-ratio / ω-ratio`: the constant of the upper bound.
    pub upper: f64,
    /// Log-log regression slope of the `ν`-ratio against the `ω`-ratio.
    pub theta: f64,
    /// Root-mean-square residual of that fit.
    pub residual: f64,
    /// `min ν-ratio / ω-ratio^θ`: the lower-bound constant at the fitted `θ`.
    pub lower: f64,
}

/// Samples `(F, Q)` with `Q ∈ 𝔻_{Q₀}` and `F` a random nonempty union of
/// descendants of `Q` one or two generations down, and compares the ratios.
pub fn djk_bounds_check(setting: &Setting, nu: &SawtoothNu, samples: usize, seed: u64) -> Result<DjkReport> {
    let grid = &setting.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<usize> = grid
        .carleson_family(nu.q0)
        .into_iter()
        .filter(|&q| grid.cube(q).generation < grid.k_max && grid.cube(q).children.len() > 1)
        .collect();
    if pool.is_empty() {
        return Err(Error::Resolution(format!("cube {} has no subdivided descendants", nu.q0)));
    }
    let mass = |m: &[f64], cubes: &[usize]| -> f64 {
        cubes.iter().flat_map(|&c| grid.cube(c).members.iter()).map(|&f| m[f]).sum()
    };
    let mut out = Vec::with_capacity(samples);
    let mut attempts = 0;
    while out.len() < samples {
        attempts += 1;
        if attempts > 100 * samples {
            return Err(Error::Resolution("too few sample pairs with positive mass".into()));
        }
        let q = pool[rng.random_range(0..pool.len())];
        let mut level = grid.cube(q).children.clone();
        if rng.random_bool(0.5) {
            let finer: Vec<usize> = level.iter().flat_map(|&c| grid.cube(c).children.iter().copied()).collect();
            if finer.len() > 1 {
                level = finer;
            }
        }
        level.shuffle(&mut rng);
        let take = rng.random_range(1..level.len().max(2));
        let mut f_cubes: Vec<usize> = level[..take.min(level.len())].to_vec();
        f_cubes.sort_unstable();
        let (wq, vq) = (mass(&nu.omega, &[q]), mass(&nu.nu, &[q]));
        let (wf, vf) = (mass(&nu.omega, &f_cubes), mass(&nu.nu, &f_cubes));
        if !(wq > 0.0 && vq > 0.0 && wf > 0.0 && vf > 0.0) {
            continue;
        }
        out.push(DjkSample { q, f_cubes, omega_ratio: wf / wq, nu_ratio: vf / vq });
    }
    let upper = out.iter().map(|s| s.nu_ratio / s.omega_ratio).fold(0.0, f64::max);
    let xs: Vec<f64> = out.iter().map(|s| s.omega_ratio).collect();
    let ys: Vec<f64> = out.iter().map(|s| s.nu_ratio).collect();
    let (theta, residual) = if xs.iter().any(|&x| x < 1.0 - 1e-12) {
        let (_, slope, _) = power_fit(&xs, &ys);
        let c = xs.iter().zip(&ys).map(|(x, y)| y.ln() - slope * x.ln()).sum::<f64>() / xs.len() as f64;
        let res = (xs.iter().zip(&ys).map(|(x, y)| (y.ln() - slope * x.ln() - c).powi(2)).sum::<f64>()
            / xs.len() as f64)
            .sqrt();
        (slope, res)
    } else {
        (1.0, 0.0)
    };
    let lower = xs.iter().zip(&ys).map(|(x, y)| y / x.powf(theta)).fold(f64::INFINITY, f64::min);
    Ok(DjkReport { samples: out, upper, theta, residual, lower })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientField;
    use crate::domain::Shape;

    #[test]
    fn constant_solution_has_zero_square_function() {
        let s = Setting::build(&Shape::Square, 33).unwrap();
        let q0 = s.grid.roots().start;
        let u = vec![0.7; s.domain.n_cells()];
        assert!(square_function(&s, &u, q0, None).unwrap().iter().all(|&v| v == 0.0));
        let n = nontangential_max(&s, &u, q0).unwrap();
        for &f in &s.grid.cube(q0).members {
            assert!((n[f] - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_length_is_a_coverage_error() {
        let s = Setting::build(&Shape::Square, 17).unwrap();
        let q0 = s.grid.roots().start;
        assert!(matches!(square_function(&s, &[1.0], q0, None), Err(Error::Coverage(_))));
    }

    #[test]
    fn one_sided_gradient_is_exact_for_linear_data() {
        let d = GridDomain::build(&Shape::Square, 17).unwrap();
        let u: Vec<f64> = (0..d.n_cells()).map(|c| 2.0 * d.cell_point(c)[0] - d.cell_point(c)[1]).collect();
        for c in 0..d.n_cells() {
            let g = cell_gradient(&d, &u, c);
            assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_family_collapses_to_sawtooth_measure() {
        let s = Setting::build(&Shape::Square, 65).unwrap();
        let op = Operator::new(s.domain.clone(), CoefficientField::identity(&s.domain)).unwrap();
        let q0 = s.grid.generation_ids(s.grid.k_min + 1).start;
        let nu = djk_nu(&s, &op, &[], q0).unwrap();
        for &f in &s.grid.cube(q0).members {
            assert_eq!(nu.nu[f], nu.omega_star[f]);
        }
    }
}
