//! Christ-type dyadic cubes on a finite boundary point set.
//!
//! Generation `k` is indexed by a greedy `2^{-k}`-separated net `N_k`, and the
//! nets are nested (`N_k ⊆ N_{k+1}`). Points are assigned to their nearest
//! finest-level net point, and every level-`k+1` net point hangs under its
//! nearest level-`k` net point (itself when it already belongs to `N_k`).
//! Cubes are the resulting explicit point sets, so partition, nesting and
//! unique ancestry hold by construction and are re-checked exhaustively.

use std::collections::HashMap;

use crate::domain::{dist, dist2, GridDomain, Point, PointIndex};
use crate::error::{Error, Result};

/// Largest admissible strip ratio for the thin-boundary estimate.
pub const THIN_TAU_MAX: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct DyadicCube {
    pub id: usize,
    pub generation: i32,
    /// `2^{-k}`.
    pub length: f64,
    /// Point index of the net point that labels this cube.
    pub net_point: usize,
    /// Point index of `x_Q`, the member farthest from `E ∖ Q`.
    pub center: usize,
    pub radius: f64,
    /// `dist(x_Q, E ∖ Q)`; infinite for the root.
    pub inner_radius: f64,
    /// `max_{p ∈ Q} |p - x_Q|`.
    pub outer_radius: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Member point indices, increasing.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DyadicGrid {
    pub points: Vec<Point>,
    pub k_min: i32,
    pub k_max: i32,
    pub cubes: Vec<DyadicCube>,
    /// `gen_start[g]..gen_start[g+1]` are the cube ids of generation `k_min + g`.
    gen_start: Vec<usize>,
    /// `label[g][p]` is the cube of generation `k_min + g` containing point `p`.
    label: Vec<Vec<usize>>,
    /// `gap[g][p] = dist(p, E ∖ Q)` for the generation-`g` cube `Q ∋ p`.
    gap: Vec<Vec<f64>>,
    /// Ball-sandwich constant `C` (see [`DyadicGrid::xi`]).
    pub sandwich: f64,
    pub child_bound: usize,
}

/// Report of the exhaustive structural check.
#[derive(Clone, Debug, serde::Serialize)]
pub struct DyadicReport {
    pub generations: usize,
    pub cubes: usize,
    pub sandwich: f64,
    pub xi: f64,
    pub child_bound: usize,
    pub pairs_checked: usize,
}

/// Incremental hash grid used for net construction and nearest queries.
struct HashGrid {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl HashGrid {
    fn new(cell: f64) -> HashGrid {
        HashGrid { cell, buckets: HashMap::new() }
    }

    fn key(&self, p: &Point) -> [i64; 3] {
        [(p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64, (p[2] / self.cell).floor() as i64]
    }

    fn insert(&mut self, p: &Point, i: usize) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(i);
    }

    /// Calls `f` on all items in the 3×3×3 bucket block around `p`.
    fn around(&self, p: &Point, mut f: impl FnMut(usize)) {
        let k = self.key(p);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(v) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        v.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }
}

/// Nearest candidate to `p` among `cands`, ties to the lowest index.
fn nearest(points: &[Point], p: &Point, grid: &HashGrid) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    grid.around(p, |i| {
        let d = dist2(&points[i], p);
        match best {
            Some((bd, bi)) if bd < d || (bd == d && bi < i) => {}
            _ => best = Some((d, i)),
        }
    });
    best.map(|b| b.1)
}

impl DyadicGrid {
    /// Builds the grid on the boundary faces of `domain`.
    pub fn from_domain(domain: &GridDomain, k_range: Option<(i32, i32)>) -> Result<DyadicGrid> {
        DyadicGrid::build(domain.face_points().to_vec(), domain.h, k_range)
    }

    /// Builds the grid on an arbitrary point set. `h` sets the default finest
    /// generation, the largest `k` with `2^{-k} ≥ h`.
    pub fn build(points: Vec<Point>, h: f64, k_range: Option<(i32, i32)>) -> Result<DyadicGrid> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("empty boundary point set".into()));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("spacing {h}")));
        }
        let index = PointIndex::new(&points, h);
        let diam = exact_or_sampled_diameter(&points);
        let natural_min = if diam > 0.0 { (-diam.log2()).floor() as i32 } else { 0 };
        let natural_max = (-h.log2() + 1e-9).floor() as i32;
        let (k_min, k_max) = k_range.unwrap_or((natural_min, natural_max.max(natural_min)));
        if k_max < k_min {
            return Err(Error::Range(format!("empty generation range {k_min}..={k_max}")));
        }
        if diam > 0.0 && k_min < natural_min {
            return Err(Error::Range(format!(
                "k_min {k_min} below {natural_min}: 2^-k_min exceeds diam {diam:.4} and would repeat the root"
            )));
        }
        let gens = (k_max - k_min + 1) as usize;

        // Nested greedy nets. The coarsest net is forced to a single point when it
        // is the natural root generation.
        let mut nets: Vec<Vec<usize>> = Vec::with_capacity(gens);
        let mut in_net = vec![false; points.len()];
        for g in 0..gens {
            let s = (-(k_min + g as i32) as f64).exp2();
            let mut grid = HashGrid::new(s);
            let mut net: Vec<usize> = if g == 0 { Vec::new() } else { nets[g - 1].clone() };
            for &i in &net {
                grid.insert(&points[i], i);
            }
            if g == 0 && k_min == natural_min && diam > 0.0 {
                net.push(0);
                in_net[0] = true;
                grid.insert(&points[0], 0);
            }
            let s2 = s * s;
            for (i, p) in points.iter().enumerate() {
                if in_net[i] {
                    continue;
                }
                let mut far = true;
                grid.around(p, |j| {
                    if dist2(&points[j], p) < s2 {
                        far = false;
                    }
                });
                if far {
                    net.push(i);
                    in_net[i] = true;
                    grid.insert(p, i);
                }
            }
            if g == 0 && k_min == natural_min && diam > 0.0 && net.len() != 1 {
                return Err(Error::Range("root generation did not collapse to one cube".into()));
            }
            net.sort_unstable();
            nets.push(net);
        }

        // Parent of each net point one generation up.
        let mut net_parent: Vec<HashMap<usize, usize>> = vec![HashMap::new(); gens];
        for g in 1..gens {
            let s = (-(k_min + g as i32 - 1) as f64).exp2();
            let mut grid = HashGrid::new(s);
            for &i in &nets[g - 1] {
                grid.insert(&points[i], i);
            }
            let coarse: std::collections::HashSet<usize> = nets[g - 1].iter().copied().collect();
            for &i in &nets[g] {
                let parent = if coarse.contains(&i) {
                    i
                } else {
                    nearest(&points, &points[i], &grid).ok_or_else(|| {
                        Error::Range(format!("net point {i} has no parent at generation {}", k_min + g as i32 - 1))
                    })?
                };
                net_parent[g].insert(i, parent);
            }
        }

        // Finest assignment, then labels upward.
        let finest = gens - 1;
        let s = (-(k_max as f64)).exp2();
        let mut grid = HashGrid::new(s);
        for &i in &nets[finest] {
            grid.insert(&points[i], i);
        }
        let mut owner = vec![vec![0usize; points.len()]; gens];
        for (p, pt) in points.iter().enumerate() {
            owner[finest][p] = nearest(&points, pt, &grid)
                .ok_or_else(|| Error::Range(format!("point {p} uncovered at generation {k_max}")))?;
        }
        for g in (0..finest).rev() {
            for p in 0..points.len() {
                owner[g][p] = net_parent[g + 1][&owner[g + 1][p]];
            }
        }

        // Cubes.
        let mut cubes = Vec::new();
        let mut gen_start = vec![0usize];
        let mut label = vec![vec![0usize; points.len()]; gens];
        let mut id_of: Vec<HashMap<usize, usize>> = vec![HashMap::new(); gens];
        for g in 0..gens {
            let k = k_min + g as i32;
            for &x in &nets[g] {
                let id = cubes.len();
                id_of[g].insert(x, id);
                let parent = if g == 0 { None } else { Some(id_of[g - 1][&net_parent[g][&x]]) };
                cubes.push(DyadicCube {
                    id,
                    generation: k,
                    length: (-(k as f64)).exp2(),
                    net_point: x,
                    center: x,
                    radius: 0.0,
                    inner_radius: f64::INFINITY,
                    outer_radius: 0.0,
                    parent,
                    children: Vec::new(),
                    members: Vec::new(),
                });
                if let Some(pid) = parent {
                    cubes[pid].children.push(id);
                }
            }
            for p in 0..points.len() {
                let id = id_of[g][&owner[g][p]];
                label[g][p] = id;
                cubes[id].members.push(p);
            }
            gen_start.push(cubes.len());
        }
        if cubes.iter().any(|c| c.members.is_empty()) {
            return Err(Error::Range("a generation produced an empty cube".into()));
        }

        // Distances to the complement and cube centers.
        let gap: Vec<Vec<f64>> = (0..gens).map(|g| complement_distances(&points, &index, &label[g], h)).collect();
        let mut sandwich = 1.0f64;
        for cube in cubes.iter_mut() {
            let g = (cube.generation - k_min) as usize;
            let root_like = cube.members.len() == points.len();
            if !root_like {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for &p in &cube.members {
                    if gap[g][p] > best.0 {
                        best = (gap[g][p], p);
                    }
                }
                cube.center = best.1;
                cube.inner_radius = best.0;
            }
            let c = points[cube.center];
            cube.outer_radius = cube.members.iter().map(|&p| dist(&points[p], &c)).fold(0.0, f64::max);
            // Both containments get a relative margin so that `2r_Q = ℓ/C`
            // survives rounding on either side.
            let mut ratio = cube.outer_radius / cube.length * (1.0 + 1e-9);
            if cube.inner_radius.is_finite() {
                ratio = ratio.max(cube.length / cube.inner_radius * (1.0 + 1e-9));
            }
            sandwich = sandwich.max(ratio);
        }
        for cube in cubes.iter_mut() {
            cube.radius = cube.length / (2.0 * sandwich);
        }
        let child_bound = cubes.iter().map(|c| c.children.len()).max().unwrap_or(0);
        Ok(DyadicGrid { points, k_min, k_max, cubes, gen_start, label, gap, sandwich, child_bound })
    }

    /// `Ξ = 2C²`, so that `Δ(x_Q, 2r_Q) ⊆ Q ⊆ Δ(x_Q, Ξ r_Q)` and `Ξ^{-1}ℓ ≤ r_Q ≤ ℓ`.
    pub fn xi(&self) -> f64 {
        2.0 * self.sandwich * self.sandwich
    }

    pub fn n_generations(&self) -> usize {
        self.gen_start.len() - 1
    }

    pub fn generation(&self, k: i32) -> &[DyadicCube] {
        let g = (k - self.k_min) as usize;
        &self.cubes[self.gen_start[g]..self.gen_start[g + 1]]
    }

    pub fn generation_ids(&self, k: i32) -> std::ops::Range<usize> {
        let g = (k - self.k_min) as usize;
        self.gen_start[g]..self.gen_start[g + 1]
    }

    pub fn cube(&self, id: usize) -> &DyadicCube {
        &self.cubes[id]
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// Cube of generation `k` containing point `p`.
    pub fn cube_of(&self, k: i32, p: usize) -> usize {
        self.label[(k - self.k_min) as usize][p]
    }

    /// Top-generation cubes.
    pub fn roots(&self) -> std::ops::Range<usize> {
        self.generation_ids(self.k_min)
    }

    pub fn center_point(&self, id: usize) -> Point {
        self.points[self.cubes[id].center]
    }

    /// `dist(p, E ∖ Q)` for the generation-`k` cube containing `p`.
    pub fn complement_gap(&self, k: i32, p: usize) -> f64 {
        self.gap[(k - self.k_min) as usize][p]
    }

    /// Whether cube `a` is contained in cube `b`.
    pub fn is_descendant(&self, a: usize, b: usize) -> bool {
        let (ka, kb) = (self.cubes[a].generation, self.cubes[b].generation);
        ka >= kb && self.cube_of(kb, self.cubes[a].members[0]) == b
    }

    /// `𝔻_Q`: `Q` and all its descendants, in breadth-first order.
    pub fn carleson_family(&self, q: usize) -> Vec<usize> {
        let mut out = vec![q];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.cubes[out[i]].children);
            i += 1;
        }
        out
    }

    /// `𝔻_{ℱ,Q}`: descendants of `Q` not contained in any member of `family`.
    pub fn sawtooth_family(&self, family: &[usize], q: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![q];
        while let Some(c) = stack.pop() {
            if family.contains(&c) {
                continue;
            }
            out.push(c);
            stack.extend(self.cubes[c].children.iter().rev());
        }
        out.sort_unstable();
        out
    }

    /// `μ{x ∈ Q : dist(x, E ∖ Q) ≤ τ ℓ(Q)}` for a per-point measure `mu`.
    pub fn thin_boundary_mass(&self, q: usize, tau: f64, mu: &[f64]) -> Result<f64> {
        if !(tau > 0.0 && tau < THIN_TAU_MAX) {
            return Err(Error::InvalidParameter(format!("tau {tau} outside (0, {THIN_TAU_MAX})")));
        }
        let cube = &self.cubes[q];
        let g = (cube.generation - self.k_min) as usize;
        let limit = tau * cube.length;
        Ok(cube.members.iter().filter(|&&p| self.gap[g][p] <= limit).map(|&p| mu[p]).sum())
    }

    /// Exhaustive check of partition, nesting, unique ancestry, child partition
    /// and the ball sandwich.
    pub fn verify(&self) -> Result<DyadicReport> {
        let n = self.points.len();
        let mut pairs = 0usize;
        for g in 0..self.n_generations() {
            let mut seen = vec![0u32; n];
            for id in self.gen_start[g]..self.gen_start[g + 1] {
                for &p in &self.cubes[id].members {
                    seen[p] += 1;
                }
            }
            if let Some(p) = seen.iter().position(|&c| c != 1) {
                return Err(Error::Coverage(format!(
                    "point {p} covered {} times at generation {}",
                    seen[p],
                    self.k_min + g as i32
                )));
            }
        }
        for cube in &self.cubes {
            // Nesting and unique ancestry: every member shares the ancestor at every coarser generation.
            let first = cube.members[0];
            for k in self.k_min..cube.generation {
                let anc = self.cube_of(k, first);
                for &p in &cube.members {
                    pairs += 1;
                    if self.cube_of(k, p) != anc {
                        return Err(Error::Coverage(format!("cube {} splits across generation {k}", cube.id)));
                    }
                }
            }
            if !cube.children.is_empty() {
                let mut union: Vec<usize> =
                    cube.children.iter().flat_map(|&c| self.cubes[c].members.iter().copied()).collect();
                union.sort_unstable();
                if union != cube.members {
                    return Err(Error::Coverage(format!("children of cube {} do not partition it", cube.id)));
                }
            }
            let c = self.points[cube.center];
            let inner = 2.0 * cube.radius;
            let outer = self.xi() * cube.radius;
            for (p, pt) in self.points.iter().enumerate() {
                let d = dist(pt, &c);
                let member = self.cube_of(cube.generation, p) == cube.id;
                if d < inner && !member {
                    return Err(Error::Coverage(format!("Δ(x_Q,2r_Q) escapes cube {}", cube.id)));
                }
                if member && d >= outer {
                    return Err(Error::Coverage(format!("cube {} escapes Δ(x_Q,Ξr_Q)", cube.id)));
                }
            }
            if !(cube.radius * self.xi() >= cube.length && cube.radius <= cube.length) {
                return Err(Error::Coverage(format!("radius bounds fail for cube {}", cube.id)));
            }
        }
        Ok(DyadicReport {
            generations: self.n_generations(),
            cubes: self.cubes.len(),
            sandwich: self.sandwich,
            xi: self.xi(),
            child_bound: self.child_bound,
            pairs_checked: pairs,
        })
    }

    /// One line per cube: `k id parent x_Q r_Q n_cells cell_ids…`.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        for c in &self.cubes {
            let x = self.points[c.center];
            let parent = c.parent.map(|p| p as i64).unwrap_or(-1);
            out.push_str(&format!(
                "{} {} {} {:.9},{:.9},{:.9} {:.9e} {}",
                c.generation,
                c.id,
                parent,
                x[0],
                x[1],
                x[2],
                c.radius,
                c.members.len()
            ));
            for m in &c.members {
                out.push_str(&format!(" {m}"));
            }
            out.push('\n');
        }
        out
    }
}

fn exact_or_sampled_diameter(points: &[Point]) -> f64 {
    let stride = points.len().div_ceil(4096).max(1);
    let sample: Vec<&Point> = points.iter().step_by(stride).collect();
    let mut best = 0.0f64;
    for i in 0..sample.len() {
        for j in i + 1..sample.len() {
            best = best.max(dist2(sample[i], sample[j]));
        }
    }
    best.sqrt()
}

/// For every point, distance to the nearest point with a different label
/// (infinite when all labels agree).
fn complement_distances(points: &[Point], index: &PointIndex, label: &[usize], h: f64) -> Vec<f64> {
    let first = label[0];
    if label.iter().all(|&l| l == first) {
        return vec![f64::INFINITY; points.len()];
    }
    points
        .iter()
        .enumerate()
        .map(|(p, pt)| {
            let mut r = 2.0 * h;
            loop {
                let mut best = f64::INFINITY;
                index.for_candidates(pt, r, |q| {
                    if label[q] != label[p] {
                        best = best.min(dist2(&points[q], pt));
                    }
                });
                let d = best.sqrt();
                if d <= r {
                    return d;
                }
                r *= 2.0;
            }
        })
        .collect()
}

/// Least-squares fit of `log y = log C + η log x`; returns `(C, η, r²)`.
pub fn power_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (icept.exp(), slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Shape;

    #[test]
    fn singleton_has_one_cube_per_generation() {
        let g = DyadicGrid::build(vec![[0.3, 0.4, 0.0]], 0.1, Some((0, 4))).unwrap();
        assert_eq!(g.len(), 5);
        for k in 0..=4 {
            assert_eq!(g.generation(k).len(), 1);
            assert_eq!(g.generation(k)[0].members, vec![0]);
        }
        g.verify().unwrap();
    }

    #[test]
    fn empty_range_is_rejected() {
        let d = GridDomain::build(&Shape::Square, 17).unwrap();
        assert!(matches!(DyadicGrid::from_domain(&d, Some((3, 2))), Err(Error::Range(_))));
    }

    #[test]
    fn square_sandwich_constant() {
        let d = GridDomain::build(&Shape::Square, 65).unwrap();
        let g = DyadicGrid::from_domain(&d, None).unwrap();
        let r = g.verify().unwrap();
        assert!(r.generations >= 5);
        // Eight, up to the rounding margin of the construction.
        assert!(r.sandwich <= 8.0 * (1.0 + 1e-8), "C = {}", r.sandwich);
        assert_eq!(g.roots().len(), 1);
    }

    #[test]
    fn sawtooth_family_counts() {
        let d = GridDomain::build(&Shape::Square, 65).unwrap();
        let g = DyadicGrid::from_domain(&d, None).unwrap();
        let q = g.roots().start;
        assert_eq!(g.sawtooth_family(&[], q), {
            let mut v = g.carleson_family(q);
            v.sort_unstable();
            v
        });
        assert!(g.sawtooth_family(&[q], q).is_empty());
        let q = (0..g.len()).find(|&i| g.cube(i).children.len() >= 2).unwrap();
        let kids = &g.cube(q).children;
        let removed = &kids[..2];
        let remaining: usize = kids[2..].iter().map(|&c| g.carleson_family(c).len()).sum();
        assert_eq!(g.sawtooth_family(removed, q).len(), 1 + remaining);
    }

    #[test]
    fn thin_strips_vanish() {
        let d = GridDomain::build(&Shape::Square, 65).unwrap();
        let g = DyadicGrid::from_domain(&d, None).unwrap();
        let mu: Vec<f64> = d.faces().iter().map(|f| f.sigma).collect();
        let root = g.roots().start;
        assert_eq!(g.thin_boundary_mass(root, 0.25, &mu).unwrap(), 0.0);
        for id in 0..g.len() {
            assert_eq!(g.thin_boundary_mass(id, 1e-6, &mu).unwrap(), 0.0);
        }
    }
}
