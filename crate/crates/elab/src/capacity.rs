//! Variational capacity and the capacity density condition.
//!
//! Capacities are computed on a local node lattice centered at `x`, finer
//! than the domain lattice, with spacing `r / NODES_PER_RADIUS`. Nodes outside
//! the open ball `D = B(x, 2r)` carry `v = 0`, nodes of the compact set `K`
//! carry `v = 1`, and the rest solve the discrete Laplace equation. The
//! capacity is the discrete Dirichlet energy `Σ_edges (v_i - v_j)² h^{d-2}`.
//! Numerator and denominator of the CDC ratio share the lattice, so the
//! discretization error largely cancels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{dist, GridDomain, Point};
use crate::error::{Error, Result};
use crate::sparse::{Csr, LinearSystem};

/// Lattice nodes per radius `r` in 2D; 3D uses half as many.
pub const NODES_PER_RADIUS: usize = 16;

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct CdcSample {
    pub face: usize,
    pub radius: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct CdcSweep {
    pub samples: Vec<CdcSample>,
    pub min_ratio: f64,
}

fn nodes_per_radius(dim: usize) -> usize {
    if dim == 3 {
        NODES_PER_RADIUS / 2
    } else {
        NODES_PER_RADIUS
    }
}

/// `Cap₂(K, B(center, 2r))` where `K` is the set of lattice nodes in `B̄(center, r)`
/// accepted by `in_k`. Empty `K` has zero capacity.
pub fn condenser_capacity(dim: usize, center: &Point, r: f64, in_k: impl Fn(&Point) -> bool) -> Result<f64> {
    if !(dim == 2 || dim == 3) {
        return Err(Error::InvalidParameter(format!("dimension {dim}")));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radius {r} must be positive")));
    }
    let m = nodes_per_radius(dim);
    let hc = r / m as f64;
    let half = 2 * m + 1;
    let side = 2 * half + 1;
    let total = side.pow(dim as u32);
    let coords = |id: usize| -> [isize; 3] {
        let mut c = [0isize; 3];
        let mut rem = id;
        for a in c.iter_mut().take(dim) {
            *a = (rem % side) as isize - half as isize;
            rem /= side;
        }
        c
    };
    let point = |c: &[isize; 3]| -> Point {
        let mut p = *center;
        for a in 0..dim {
            p[a] += c[a] as f64 * hc;
        }
        p
    };
    // 0 = fixed zero, 1 = fixed one, 2 = unknown.
    let mut kind = vec![0u8; total];
    let mut any_k = false;
    for (id, slot) in kind.iter_mut().enumerate() {
        let p = point(&coords(id));
        let d = dist(&p, center);
        if d <= r * (1.0 + 1e-12) && in_k(&p) {
            *slot = 1;
            any_k = true;
        } else if d < 2.0 * r {
            *slot = 2;
        }
    }
    if !any_k {
        return Ok(0.0);
    }
    let mut unknown = vec![usize::MAX; total];
    let mut n = 0;
    for id in 0..total {
        if kind[id] == 2 {
            unknown[id] = n;
            n += 1;
        }
    }
    let stride = |a: usize| side.pow(a as u32);
    let mut trip = Vec::with_capacity(n * (2 * dim + 1));
    let mut rhs = vec![0.0; n];
    for id in 0..total {
        if kind[id] != 2 {
            continue;
        }
        let row = unknown[id];
        let c = coords(id);
        trip.push((row, row, 2.0 * dim as f64));
        for a in 0..dim {
            for dir in [-1isize, 1] {
                // Unknowns never touch the lattice edge: they lie within 2r < half * hc.
                debug_assert!((c[a] + dir).unsigned_abs() <= half);
                let nb = (id as isize + dir * stride(a) as isize) as usize;
                match kind[nb] {
                    2 => trip.push((row, unknown[nb], -1.0)),
                    1 => rhs[row] += 1.0,
                    _ => {}
                }
            }
        }
    }
    let v = if n > 0 { LinearSystem::new(Csr::from_triplets(n, n, trip)).solve(&rhs)? } else { Vec::new() };
    let value = |id: usize| -> f64 {
        match kind[id] {
            2 => v[unknown[id]],
            1 => 1.0,
            _ => 0.0,
        }
    };
    let mut energy = 0.0;
    for id in 0..total {
        let c = coords(id);
        for a in 0..dim {
            if c[a] + 1 > half as isize {
                continue;
            }
            let nb = id + stride(a);
            if kind[id] == 0 && kind[nb] == 0 {
                continue;
            }
            let diff = value(id) - value(nb);
            energy += diff * diff;
        }
    }
    Ok(energy * hc.powi(dim as i32 - 2))
}

impl GridDomain {
    /// Face whose center is nearest to `p` (lowest index on ties).
    pub fn nearest_face(&self, p: &Point) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, q) in self.face_points().iter().enumerate() {
            let d = dist(q, p);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

/// `Cap₂(B̄(x,r) ∖ Ω, B(x,2r)) / Cap₂(B̄(x,r), B(x,2r))` at face `face`.
pub fn cdc_ratio(domain: &GridDomain, face: usize, r: f64) -> Result<CdcSample> {
    if face >= domain.n_faces() {
        return Err(Error::InvalidParameter(format!("face {face} out of range")));
    }
    let x = domain.face_points()[face];
    let numerator = condenser_capacity(domain.dim, &x, r, |p| !domain.contains(p))?;
    let denominator = condenser_capacity(domain.dim, &x, r, |_| true)?;
    Ok(CdcSample { face, radius: r, numerator, denominator, ratio: numerator / denominator })
}

/// CDC ratios at `samples` random faces with log-uniform radii in `[r_min, r_max]`.
pub fn cdc_sweep(domain: &GridDomain, samples: usize, r_min: f64, r_max: f64, seed: u64) -> Result<CdcSweep> {
    if !(r_min > 0.0 && r_max >= r_min) {
        return Err(Error::InvalidParameter(format!("radius range [{r_min}, {r_max}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(usize, f64)> = (0..samples)
        .map(|_| {
            let face = rng.random_range(0..domain.n_faces());
            let t: f64 = rng.random();
            (face, r_min * (r_max / r_min).powf(t))
        })
        .collect();
    use rayon::prelude::*;
    let samples: Vec<CdcSample> = picks.par_iter().map(|&(f, r)| cdc_ratio(domain, f, r)).collect::<Result<_>>()?;
    let min_ratio = samples.iter().map(|s| s.ratio).fold(f64::INFINITY, f64::min);
    Ok(CdcSweep { samples, min_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Shape;

    #[test]
    fn fully_exterior_ball_has_ratio_one() {
        let d = GridDomain::build(&Shape::Square, 17).unwrap();
        let x = [-0.5, -0.5, 0.0];
        let num = condenser_capacity(2, &x, 0.1, |p| !d.contains(p)).unwrap();
        let den = condenser_capacity(2, &x, 0.1, |_| true).unwrap();
        assert!(den > 0.0);
        assert_eq!(num, den);
    }

    #[test]
    fn empty_set_has_zero_capacity() {
        assert_eq!(condenser_capacity(2, &[0.5, 0.5, 0.0], 0.1, |_| false).unwrap(), 0.0);
    }

    #[test]
    fn annulus_capacity_matches_log_formula() {
        // Continuum: Cap(B̄_r, B_2r) = 2π / ln 2 in the plane, independent of r.
        let cap = condenser_capacity(2, &[0.0; 3], 1.0, |_| true).unwrap();
        let exact = 2.0 * std::f64::consts::PI / 2f64.ln();
        assert!((cap / exact - 1.0).abs() < 0.1, "{cap} vs {exact}");
    }

    #[test]
    fn square_boundary_ratio_is_large() {
        let d = GridDomain::build(&Shape::Square, 33).unwrap();
        let f = d.nearest_face(&[0.5, 0.0, 0.0]);
        let s = cdc_ratio(&d, f, 0.1).unwrap();
        assert!(s.ratio > 0.3 && s.ratio < 1.0, "{s:?}");
    }
}
