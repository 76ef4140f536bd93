//! Interior Whitney decomposition of a voxel domain.
//!
//! Cubes are aligned blocks of `2^m × … × 2^m` lattice cells; a block of side
//! `s = 2^m h` is the box `[c h - h/2, c h - h/2 + s]` per axis. Selection is
//! top-down: a block is accepted when all its cells are interior and
//! `8 diam(I) ≤ dist(I, ∂Ω)`; otherwise it is split. Single cells that still
//! fail form the unresolved boundary layer: they are kept as side-`h` cubes
//! with `resolved = false` so the decomposition covers every interior cell.

use crate::domain::{dist2, GridDomain, Point};
use crate::error::{Error, Result};

/// Selection constant of the rule `RULE * diam(I) ≤ dist(I, ∂Ω)`.
pub const RULE: f64 = 8.0;
pub const DEFAULT_LAMBDA: f64 = 0.125;

#[derive(Clone, Debug)]
pub struct WhitneyCube {
    pub id: usize,
    /// Lattice coordinates of the lowest cell.
    pub corner: [usize; 3],
    /// Cells per side.
    pub cells: usize,
    pub side: f64,
    pub center: Point,
    /// `k_I` with `ℓ(I) = 2^{-k_I}` (rounded for non-dyadic spacings).
    pub k: i32,
    pub resolved: bool,
    /// `dist(I, ∂Ω)` to the boundary face centers.
    pub dist: f64,
    /// Face index nearest to the center.
    pub nearest_face: usize,
}

impl WhitneyCube {
    pub fn diam(&self, dim: usize) -> f64 {
        self.side * (dim as f64).sqrt()
    }

    /// The concentric box `factor · I` as `(lo, hi)`.
    pub fn scaled_box(&self, factor: f64, dim: usize) -> (Point, Point) {
        let half = 0.5 * factor * self.side;
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..dim {
            lo[a] = self.center[a] - half;
            hi[a] = self.center[a] + half;
        }
        (lo, hi)
    }
}

/// Distance from `p` to the box `[lo, hi]`.
pub fn box_distance(p: &Point, lo: &Point, hi: &Point, dim: usize) -> f64 {
    let mut s = 0.0;
    for a in 0..dim {
        let d = (lo[a] - p[a]).max(0.0).max(p[a] - hi[a]);
        s += d * d;
    }
    s.sqrt()
}

fn boxes_overlap(a: &(Point, Point), b: &(Point, Point), dim: usize) -> bool {
    (0..dim).all(|k| a.0[k] < b.1[k] && b.0[k] < a.1[k])
}

fn boxes_touch(a: &(Point, Point), b: &(Point, Point), dim: usize, eps: f64) -> bool {
    (0..dim).all(|k| a.0[k] <= b.1[k] + eps && b.0[k] <= a.1[k] + eps)
}

#[derive(Clone, Debug)]
pub struct Whitney {
    pub dim: usize,
    pub n: usize,
    pub h: f64,
    pub cubes: Vec<WhitneyCube>,
    /// Whitney cube of each interior cell.
    cube_of_cell: Vec<u32>,
    /// Touching neighbors (closed cubes intersect), excluding self.
    touching: Vec<Vec<u32>>,
    /// Fattening parameter: `I* = (1+λ)I`, `I** = (1+2λ)I`, `I*** = (1+4λ)I`.
    pub lambda: f64,
    /// Largest `τ` with `τJ ∩ I* = ∅` for all distinct `I, J`.
    pub tau: f64,
}

/// Per-cube and aggregate checks of the decomposition.
#[derive(Clone, Debug, serde::Serialize)]
pub struct WhitneyReport {
    pub cubes: usize,
    pub resolved: usize,
    pub unresolved: usize,
    /// Smallest `dist(4I,∂Ω)/diam(I)` over resolved cubes.
    pub min_lower_ratio: f64,
    /// Largest `dist(I,∂Ω)/diam(I)` over resolved cubes.
    pub max_upper_ratio: f64,
    pub max_touching_side_ratio: f64,
    pub max_star_overlap: usize,
    pub lambda: f64,
    pub tau: f64,
    /// Depth in cells of the unresolved layer (largest unresolved `δ / h`).
    pub unresolved_depth: f64,
}

struct Prefix {
    n: usize,
    dim: usize,
    sums: Vec<u32>,
}

impl Prefix {
    fn new(domain: &GridDomain) -> Prefix {
        let n = domain.n;
        let dim = domain.dim;
        let m = n + 1;
        let size = if dim == 2 { m * m } else { m * m * m };
        let mut sums = vec![0u32; size];
        let idx = |i: usize, j: usize, k: usize| i + m * (j + m * k);
        if dim == 2 {
            for j in 0..n {
                for i in 0..n {
                    let v = domain.is_interior(i + n * j) as i64;
                    let s =
                        v + sums[idx(i, j + 1, 0)] as i64 + sums[idx(i + 1, j, 0)] as i64 - sums[idx(i, j, 0)] as i64;
                    sums[idx(i + 1, j + 1, 0)] = s as u32;
                }
            }
        } else {
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        let v = domain.is_interior(i + n * (j + n * k)) as i64;
                        let g = |a, b, c| sums[idx(a, b, c)] as i64;
                        let s = v + g(i, j + 1, k + 1) + g(i + 1, j, k + 1) + g(i + 1, j + 1, k)
                            - g(i, j, k + 1)
                            - g(i, j + 1, k)
                            - g(i + 1, j, k)
                            + g(i, j, k);
                        sums[idx(i + 1, j + 1, k + 1)] = s as u32;
                    }
                }
            }
        }
        Prefix { n, dim, sums }
    }

    /// Interior cells in the block `[c, c+len)` clipped to the lattice.
    fn count(&self, c: &[usize; 3], len: usize) -> (u64, u64) {
        let m = self.n + 1;
        let idx = |i: usize, j: usize, k: usize| i + m * (j + m * k);
        let hi: Vec<usize> = (0..3).map(|a| (c[a] + len).min(self.n)).collect();
        let lo = c;
        if self.dim == 2 {
            let s = self.sums[idx(hi[0], hi[1], 0)] as i64
                - self.sums[idx(lo[0], hi[1], 0)] as i64
                - self.sums[idx(hi[0], lo[1], 0)] as i64
                + self.sums[idx(lo[0], lo[1], 0)] as i64;
            let vol = ((hi[0] - lo[0]) * (hi[1] - lo[1])) as u64;
            (s as u64, vol)
        } else {
            let g = |i, j, k| self.sums[idx(i, j, k)] as i64;
            let s = g(hi[0], hi[1], hi[2]) - g(lo[0], hi[1], hi[2]) - g(hi[0], lo[1], hi[2]) - g(hi[0], hi[1], lo[2])
                + g(lo[0], lo[1], hi[2])
                + g(lo[0], hi[1], lo[2])
                + g(hi[0], lo[1], lo[2])
                - g(lo[0], lo[1], lo[2]);
            let vol = ((hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])) as u64;
            (s as u64, vol)
        }
    }
}

/// Exact distance from a box to the nearest face center, searching within `bound`.
fn box_boundary_distance(domain: &GridDomain, lo: &Point, hi: &Point, bound: f64) -> (f64, usize) {
    let dim = domain.dim;
    let mut c = [0.0; 3];
    let mut half_diag2 = 0.0;
    for a in 0..dim {
        c[a] = 0.5 * (lo[a] + hi[a]);
        half_diag2 += (0.5 * (hi[a] - lo[a])).powi(2);
    }
    let mut radius = bound + half_diag2.sqrt() + domain.h;
    loop {
        let mut best = (f64::INFINITY, usize::MAX);
        domain.face_index().for_candidates(&c, radius, |f| {
            let d = box_distance(&domain.face_points()[f], lo, hi, dim);
            if d < best.0 || (d == best.0 && f < best.1) {
                best = (d, f);
            }
        });
        if best.0.is_finite() {
            return best;
        }
        radius *= 2.0;
    }
}

impl Whitney {
    pub fn build(domain: &GridDomain) -> Result<Whitney> {
        let dim = domain.dim;
        let n = domain.n;
        let h = domain.h;
        let prefix = Prefix::new(domain);
        let top = n.next_power_of_two();
        let mut cubes: Vec<WhitneyCube> = Vec::new();
        let mut stack = vec![([0usize; 3], top)];
        while let Some((c, len)) = stack.pop() {
            if (0..dim).any(|a| c[a] >= n) {
                continue;
            }
            let (inside, vol) = prefix.count(&c, len);
            if inside == 0 {
                continue;
            }
            let full = inside == vol && (0..dim).all(|a| c[a] + len <= n);
            if full {
                let side = len as f64 * h;
                let mut lo = [0.0; 3];
                let mut hi = [0.0; 3];
                let mut center = [0.0; 3];
                for a in 0..dim {
                    lo[a] = c[a] as f64 * h - 0.5 * h;
                    hi[a] = lo[a] + side;
                    center[a] = lo[a] + 0.5 * side;
                }
                let depth =
                    domain.delta(domain.locate(&center_cell(&c, len, dim, h)).expect("full block has interior cells"));
                let (d, face) = box_boundary_distance(domain, &lo, &hi, depth);
                let diam = side * (dim as f64).sqrt();
                if RULE * diam <= d || len == 1 {
                    let k = (-side.log2()).round() as i32;
                    cubes.push(WhitneyCube {
                        id: cubes.len(),
                        corner: c,
                        cells: len,
                        side,
                        center,
                        k,
                        resolved: RULE * diam <= d,
                        dist: d,
                        nearest_face: face,
                    });
                    continue;
                }
            } else if len == 1 {
                continue;
            }
            let half = len / 2;
            let zs: &[usize] = if dim == 3 { &[1, 0] } else { &[0] };
            for &dz in zs {
                for dy in [1usize, 0] {
                    for dx in [1usize, 0] {
                        stack.push(([c[0] + dx * half, c[1] + dy * half, c[2] + dz * half], half));
                    }
                }
            }
        }
        cubes.sort_by_key(|q| (q.cells, q.corner[2], q.corner[1], q.corner[0]));
        cubes.reverse();
        for (i, q) in cubes.iter_mut().enumerate() {
            q.id = i;
        }
        let mut cube_of_cell = vec![u32::MAX; domain.n_cells()];
        for q in &cubes {
            for_block_cells(
                &q.corner,
                q.cells,
                dim,
                |id| {
                    let u = domain.cell_of_lattice(id).expect("Whitney cells are interior");
                    cube_of_cell[u] = q.id as u32;
                },
                n,
            );
        }
        if let Some(u) = cube_of_cell.iter().position(|&c| c == u32::MAX) {
            return Err(Error::Coverage(format!("cell {u} not covered by the Whitney decomposition")));
        }
        let mut w = Whitney { dim, n, h, cubes, cube_of_cell, touching: Vec::new(), lambda: DEFAULT_LAMBDA, tau: 1.0 };
        w.touching = (0..w.cubes.len()).map(|i| w.find_touching(domain, i)).collect();
        w.choose_lambda(domain)?;
        Ok(w)
    }

    fn cubes_meeting_box(&self, domain: &GridDomain, lo: &Point, hi: &Point) -> Vec<u32> {
        let mut out = Vec::new();
        let mut a0 = [0usize; 3];
        let mut a1 = [0usize; 3];
        for a in 0..self.dim {
            a0[a] = ((lo[a] / self.h).round().max(0.0)) as usize;
            a1[a] = ((hi[a] / self.h).round().min((self.n - 1) as f64)) as usize;
        }
        for k in a0[2]..=a1[2] {
            for j in a0[1]..=a1[1] {
                for i in a0[0]..=a1[0] {
                    if let Some(u) = domain.cell_of_lattice(domain.lattice_id(&[i, j, k])) {
                        out.push(self.cube_of_cell[u]);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn find_touching(&self, domain: &GridDomain, i: usize) -> Vec<u32> {
        let q = &self.cubes[i];
        let b = q.scaled_box(1.0, self.dim);
        let mut lo = b.0;
        let mut hi = b.1;
        for a in 0..self.dim {
            lo[a] -= 0.5 * self.h;
            hi[a] += 0.5 * self.h;
        }
        let eps = 1e-9 * self.h;
        self.cubes_meeting_box(domain, &lo, &hi)
            .into_iter()
            .filter(|&j| {
                j as usize != i && boxes_touch(&b, &self.cubes[j as usize].scaled_box(1.0, self.dim), self.dim, eps)
            })
            .collect()
    }

    /// Halves `λ` until some `τ ∈ (1/2, 1)` separates every `τJ` from every `I*`.
    fn choose_lambda(&mut self, domain: &GridDomain) -> Result<()> {
        let mut lambda = DEFAULT_LAMBDA;
        for _ in 0..8 {
            let tau = self.separation_tau(domain, lambda);
            if tau > 0.5 {
                self.lambda = lambda;
                self.tau = tau.min(1.0 - 1e-12);
                return Ok(());
            }
            lambda *= 0.5;
        }
        Err(Error::Tuning("no fattening separates the Whitney cubes".into()))
    }

    /// Largest `τ` such that `τJ ∩ (1+λ)I = ∅` for all distinct `I, J`.
    fn separation_tau(&self, domain: &GridDomain, lambda: f64) -> f64 {
        let mut tau = f64::INFINITY;
        for i in 0..self.cubes.len() {
            let qi = &self.cubes[i];
            let (lo, hi) = qi.scaled_box(1.0 + lambda, self.dim);
            for j in self.cubes_meeting_box(domain, &lo, &hi) {
                let qj = &self.cubes[j as usize];
                if j as usize == i {
                    continue;
                }
                // On each axis, τJ avoids I* iff |c_J - c_I| ≥ τ s_J/2 + (1+λ) s_I/2.
                let mut allowed = f64::NEG_INFINITY;
                for a in 0..self.dim {
                    let gap = (qj.center[a] - qi.center[a]).abs() - 0.5 * (1.0 + lambda) * qi.side;
                    allowed = allowed.max(2.0 * gap / qj.side);
                }
                tau = tau.min(allowed);
            }
        }
        tau
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn cube_of_cell(&self, u: usize) -> usize {
        self.cube_of_cell[u] as usize
    }

    pub fn touching(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.touching[i].iter().map(|&j| j as usize)
    }

    /// Touching neighbors that share a `(d-1)`-dimensional piece of boundary.
    pub fn face_adjacent(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let a = self.cubes[i].scaled_box(1.0, self.dim);
        let eps = 1e-9 * self.h;
        self.touching(i).filter(move |&j| {
            let b = self.cubes[j].scaled_box(1.0, self.dim);
            let flush =
                (0..self.dim).filter(|&k| (a.1[k] - b.0[k]).abs() < eps || (b.1[k] - a.0[k]).abs() < eps).count();
            flush == 1
        })
    }

    /// Fattening factor for `stars` stars: `1`, `1+λ`, `1+2λ`, `1+4λ`.
    pub fn factor(&self, stars: u8) -> f64 {
        match stars {
            0 => 1.0,
            1 => 1.0 + self.lambda,
            2 => 1.0 + 2.0 * self.lambda,
            _ => 1.0 + 4.0 * self.lambda,
        }
    }

    /// Cells whose centers lie in the open union of the fattened cubes `ids`.
    pub fn mask(&self, domain: &GridDomain, ids: &[usize], stars: u8) -> Vec<bool> {
        let mut mask = vec![false; domain.n_cells()];
        for &i in ids {
            self.for_star_cells(domain, i, stars, |u| mask[u] = true);
        }
        mask
    }

    /// Interior cells of cube `i` (`stars = 0`) or of its fattening (lattice
    /// nodes strictly inside the scaled box).
    pub fn for_star_cells(&self, domain: &GridDomain, i: usize, stars: u8, mut f: impl FnMut(usize)) {
        let q = &self.cubes[i];
        if stars == 0 {
            for_block_cells(
                &q.corner,
                q.cells,
                self.dim,
                |id| {
                    if let Some(u) = domain.cell_of_lattice(id) {
                        f(u);
                    }
                },
                self.n,
            );
            return;
        }
        let (lo, hi) = q.scaled_box(self.factor(stars), self.dim);
        let mut a0 = [0usize; 3];
        let mut a1 = [0usize; 3];
        for a in 0..self.dim {
            a0[a] = (lo[a] / self.h).floor().max(0.0) as usize;
            a1[a] = ((hi[a] / self.h).ceil().min((self.n - 1) as f64)) as usize;
        }
        for k in a0[2]..=a1[2] {
            for j in a0[1]..=a1[1] {
                for i2 in a0[0]..=a1[0] {
                    let c = [i2, j, k];
                    let inside = (0..self.dim).all(|a| {
                        let x = c[a] as f64 * self.h;
                        x > lo[a] && x < hi[a]
                    });
                    if inside {
                        if let Some(u) = domain.cell_of_lattice(domain.lattice_id(&c)) {
                            f(u);
                        }
                    }
                }
            }
        }
    }

    /// Exhaustive verification of the Whitney bounds, cover, separation and overlap.
    pub fn verify(&self, domain: &GridDomain) -> Result<WhitneyReport> {
        let dim = self.dim;
        let mut min_lower = f64::INFINITY;
        let mut max_upper = 0.0f64;
        let mut unresolved_depth = 0.0f64;
        let mut covered = vec![0u8; domain.n_cells()];
        for q in &self.cubes {
            for_block_cells(
                &q.corner,
                q.cells,
                dim,
                |id| {
                    if let Some(u) = domain.cell_of_lattice(id) {
                        covered[u] += 1;
                    }
                },
                self.n,
            );
            if !q.resolved {
                let u = domain.cell_of_lattice(domain.lattice_id(&q.corner)).expect("unresolved cube is a cell");
                unresolved_depth = unresolved_depth.max(domain.delta(u) / self.h);
                continue;
            }
            let diam = q.diam(dim);
            let (lo4, hi4) = q.scaled_box(4.0, dim);
            let (d4, _) = box_boundary_distance(domain, &lo4, &hi4, q.dist);
            if !(4.0 * diam <= d4 && d4 <= q.dist && q.dist <= 40.0 * diam) {
                return Err(Error::Coverage(format!(
                    "Whitney cube {} violates 4diam ≤ dist(4I) ≤ dist(I) ≤ 40diam: diam {diam:.4e}, dist(4I) {d4:.4e}, dist(I) {:.4e}",
                    q.id, q.dist
                )));
            }
            min_lower = min_lower.min(d4 / diam);
            max_upper = max_upper.max(q.dist / diam);
        }
        if let Some(u) = covered.iter().position(|&c| c != 1) {
            return Err(Error::Coverage(format!("cell {u} covered {} times", covered[u])));
        }
        let mut side_ratio = 1.0f64;
        for i in 0..self.cubes.len() {
            for j in self.touching(i) {
                side_ratio = side_ratio.max(self.cubes[i].side / self.cubes[j].side);
            }
        }
        let tau = self.separation_tau(domain, self.lambda);
        if !(tau > 0.5) {
            return Err(Error::Coverage(format!("separation τ = {tau} is not above 1/2")));
        }
        Ok(WhitneyReport {
            cubes: self.cubes.len(),
            resolved: self.cubes.iter().filter(|q| q.resolved).count(),
            unresolved: self.cubes.iter().filter(|q| !q.resolved).count(),
            min_lower_ratio: min_lower,
            max_upper_ratio: max_upper,
            max_touching_side_ratio: side_ratio,
            max_star_overlap: self.star_overlap(domain, 1),
            lambda: self.lambda,
            tau,
            unresolved_depth,
        })
    }

    /// Largest number of fattened cubes sharing a point, computed exactly: the
    /// deepest point of a clique of half-open boxes is the componentwise max of
    /// their lower corners.
    pub fn star_overlap(&self, domain: &GridDomain, stars: u8) -> usize {
        let f = self.factor(stars);
        let boxes: Vec<(Point, Point)> = self.cubes.iter().map(|q| q.scaled_box(f, self.dim)).collect();
        let mut best = 0usize;
        for i in 0..boxes.len() {
            let (lo, hi) = boxes[i];
            let near: Vec<usize> = self
                .cubes_meeting_box(domain, &lo, &hi)
                .into_iter()
                .map(|j| j as usize)
                .chain(self.neighbors_by_fattening(domain, i, f))
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .filter(|&j| boxes_overlap(&boxes[i], &boxes[j], self.dim))
                .collect();
            let ys: Vec<f64> = near.iter().map(|&j| boxes[j].0[1]).collect();
            let zs: Vec<f64> = if self.dim == 3 { near.iter().map(|&j| boxes[j].0[2]).collect() } else { vec![0.0] };
            for &y in &ys {
                for &z in &zs {
                    let p = [lo[0], y, z];
                    let count = near
                        .iter()
                        .filter(|&&j| (0..self.dim).all(|a| boxes[j].0[a] <= p[a] && p[a] < boxes[j].1[a]))
                        .count();
                    best = best.max(count);
                }
            }
        }
        best
    }

    /// Cubes whose fattened box could reach cube `i` from outside its own box.
    fn neighbors_by_fattening(&self, domain: &GridDomain, i: usize, f: f64) -> Vec<usize> {
        let max_side = self.cubes.iter().map(|q| q.side).fold(0.0, f64::max);
        let (mut lo, mut hi) = self.cubes[i].scaled_box(f, self.dim);
        let reach = 0.5 * (f - 1.0) * max_side;
        for a in 0..self.dim {
            lo[a] -= reach;
            hi[a] += reach;
        }
        self.cubes_meeting_box(domain, &lo, &hi).into_iter().map(|j| j as usize).collect()
    }

    /// Distance from cube `i` (as a closed box) to a point set.
    pub fn distance_to_points(&self, i: usize, points: &[Point], members: &[usize]) -> f64 {
        let (lo, hi) = self.cubes[i].scaled_box(1.0, self.dim);
        members.iter().map(|&p| box_distance(&points[p], &lo, &hi, self.dim)).fold(f64::INFINITY, f64::min)
    }

    /// Interior cell closest to the center of cube `i` (lowest index on ties).
    pub fn center_cell(&self, domain: &GridDomain, i: usize) -> usize {
        let q = &self.cubes[i];
        let mut best = (f64::INFINITY, usize::MAX);
        for_block_cells(
            &q.corner,
            q.cells,
            self.dim,
            |id| {
                let u = domain.cell_of_lattice(id).expect("Whitney cells are interior");
                let d = dist2(&domain.cell_point(u), &q.center);
                if d < best.0 || (d == best.0 && u < best.1) {
                    best = (d, u);
                }
            },
            self.n,
        );
        best.1
    }
}

fn center_cell(c: &[usize; 3], len: usize, dim: usize, h: f64) -> Point {
    let mut p = [0.0; 3];
    for a in 0..dim {
        p[a] = (c[a] + len / 2) as f64 * h;
    }
    p
}

/// Visits the lattice ids of the block `[c, c+len)^d`.
pub fn for_block_cells(c: &[usize; 3], len: usize, dim: usize, mut f: impl FnMut(usize), n: usize) {
    let kz = if dim == 3 { len } else { 1 };
    for k in 0..kz {
        for j in 0..len {
            for i in 0..len {
                f((c[0] + i) + n * ((c[1] + j) + n * (c[2] + k)));
            }
        }
    }
}
