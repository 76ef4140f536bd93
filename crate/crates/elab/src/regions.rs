//! Whitney regions `U_Q`, Carleson boxes `T_Q` and `T_Δ`, sawtooth regions,
//! the cutoff `Ψ_N`, the common corkscrew and the projection patches `P_j`.
//!
//! All regions are masks over the interior cells of the ambient domain. A
//! fattened cube contributes the cells whose centers lie in its open box.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;

use crate::domain::{dist, GridDomain, Point, Shape};
use crate::dyadic::DyadicGrid;
use crate::error::{Error, Result};
use crate::whitney::Whitney;

/// Candidate values of `K₀`, tried in order.
pub const K0_CHOICES: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
/// `T_Δ` uses the generation with `2^{-k-1} < TDELTA_SCALE r ≤ 2^{-k}`.
pub const TDELTA_SCALE: f64 = 200.0;

/// The frozen Whitney-region families `𝒲_Q*`, with the smallest `k*` and
/// `K₀` (from [`K0_CHOICES`]) satisfied by every family.
#[derive(Clone, Debug)]
pub struct WhitneyRegions {
    pub k_star: i32,
    pub k0: f64,
    /// Corkscrew cell `X_Q` of `Δ(x_Q, max(r_Q, h))`.
    pub corkscrew: Vec<usize>,
    /// Whether `X_Q` lies in a resolved Whitney cube.
    pub resolved: Vec<bool>,
    /// `𝒲_Q*` as increasing Whitney ids.
    pub members: Vec<Vec<usize>>,
    /// `Q_I` for every Whitney cube.
    pub cube_of_whitney: Vec<usize>,
}

/// All geometric layers of one domain.
#[derive(Debug)]
pub struct Setting {
    pub domain: Arc<GridDomain>,
    pub grid: DyadicGrid,
    pub whitney: Whitney,
    pub regions: WhitneyRegions,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SandwichReport {
    /// `max(16Ξ, max_Q sup_{T_Q} |X - x_Q| / r_Q)`.
    pub kappa0: f64,
    /// The measured part of `kappa0`, before the `16Ξ` floor.
    pub kappa0_measured: f64,
    /// `min_Q inf_{Ω∖T_Q} |X - x_Q| / r_Q`.
    pub kappa1: f64,
    /// Largest number of `U_Q` sharing a cell.
    pub u_overlap: usize,
    /// Whether `T_Q ⊆ T_{Q'}` for every child `Q` of `Q'`.
    pub nested: bool,
    pub cubes: usize,
}

/// A cell-mask region together with its defining data.
#[derive(Clone, Debug)]
pub struct Sawtooth {
    pub q0: usize,
    pub family: Vec<usize>,
    /// `𝔻_{ℱ,Q₀}`.
    pub cubes: Vec<usize>,
    /// `𝒲_{ℱ,Q₀}`.
    pub whitney: Vec<usize>,
    /// Membership per interior cell of the ambient domain.
    pub mask: Vec<bool>,
    pub empty: bool,
}

impl Sawtooth {
    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(u, _)| u)
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }
}

/// A sawtooth realized as a standalone voxel domain.
#[derive(Debug)]
pub struct SubDomain {
    pub domain: GridDomain,
    /// Ambient interior cell of each sub-domain cell.
    pub cell_map: Vec<usize>,
    /// Number of face-connected components of the mask; only the largest is kept.
    pub components: usize,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct CutoffReport {
    pub n: u32,
    /// `min Ψ_N` over `Ω_N`; its inverse is the lower constant.
    pub min_on_region: f64,
    /// `max Ψ_N` outside `Ω_N*`; zero when the support bound holds.
    pub max_outside_star: f64,
    pub max_value: f64,
    /// `sup |∇Ψ_N| δ`.
    pub gradient_bound: f64,
    /// `sup |∇Ψ_N|` over `⋃_{𝒲_N ∖ 𝒲_N^Σ} I**`; zero when the flat-core property holds.
    pub max_gradient_on_core: f64,
    pub w_n: usize,
    pub w_sigma: usize,
    /// `max Σ_{I∈𝒲_N^Σ} 𝟙_{Q̂_I}` over boundary points.
    pub qhat_overlap: usize,
    /// `max ℓ(Q̂_I)/ℓ(I)`, `max ℓ(I)/ℓ(Q̂_I)` and `max dist(I, Q̂_I)/ℓ(I)`.
    pub qhat_side_ratio: f64,
    pub qhat_inverse_ratio: f64,
    pub qhat_distance_ratio: f64,
}

/// Values of `Ψ_N` and its gradient per interior cell.
#[derive(Clone, Debug)]
pub struct Cutoff {
    pub value: Vec<f64>,
    pub gradient: Vec<Point>,
    pub report: CutoffReport,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct CommonCorkscrew {
    /// Ambient interior cell of `Y_{Q₀}`.
    pub cell: usize,
    pub point: Point,
    pub delta: f64,
    pub delta_sawtooth: f64,
    /// `δ(Y) / δ_saw(Y)`, at least one.
    pub ratio: f64,
}

/// A planar patch of sawtooth boundary faces assigned to one `Q_j`.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ProjectionPatch {
    pub cube: usize,
    /// `(ambient cell, axis, dir)` of each face.
    pub faces: Vec<(usize, u8, i8)>,
    pub side: f64,
    pub distance_to_cube: f64,
    /// `dist(P_j, ∂Ω) / ℓ(Q_j)`.
    pub boundary_ratio: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ProjectionReport {
    pub patches: Vec<ProjectionPatch>,
    /// Family members without a qualifying patch.
    pub skipped: Vec<usize>,
    /// `max Σ_j 𝟙_{P_j}` over faces.
    pub overlap: usize,
    /// Ranges of `ℓ(P_j)/ℓ(Q_j)`, `dist(P_j,Q_j)/ℓ(Q_j)` and `dist(P_j,∂Ω)/ℓ(Q_j)`.
    pub side_range: (f64, f64),
    pub distance_range: (f64, f64),
    pub boundary_range: (f64, f64),
}

fn smooth_step(s: f64) -> (f64, f64) {
    // C^∞ transition from 0 at s ≤ 0 to 1 at s ≥ 1, with its derivative.
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    if s >= 1.0 {
        return (1.0, 0.0);
    }
    let a = (-1.0 / s).exp();
    let b = (-1.0 / (1.0 - s)).exp();
    let da = a / (s * s);
    let db = -b / ((1.0 - s) * (1.0 - s));
    let v = a / (a + b);
    let dv = (da * (a + b) - a * (da + db)) / ((a + b) * (a + b));
    (v, dv)
}

impl Setting {
    pub fn build(shape: &Shape, n: usize) -> Result<Setting> {
        Setting::from_domain(GridDomain::build(shape, n)?)
    }

    pub fn from_domain(domain: GridDomain) -> Result<Setting> {
        let grid = DyadicGrid::from_domain(&domain, None)?;
        let whitney = Whitney::build(&domain)?;
        let regions = WhitneyRegions::tune(&domain, &grid, &whitney)?;
        Ok(Setting { domain: Arc::new(domain), grid, whitney, regions })
    }

    /// Cells of `U_Q` (`stars = 1`), `U_Q*` (2) or `U_Q**` (3).
    pub fn u_mask(&self, q: usize, stars: u8) -> Vec<bool> {
        self.whitney.mask(&self.domain, &self.regions.members[q], stars)
    }

    /// Whitney ids of `⋃_{Q' ∈ 𝔻_Q} 𝒲_{Q'}*`.
    pub fn t_whitney(&self, q: usize) -> Vec<usize> {
        self.union_whitney(&self.grid.carleson_family(q))
    }

    fn union_whitney(&self, cubes: &[usize]) -> Vec<usize> {
        let mut set = BTreeSet::new();
        for &c in cubes {
            set.extend(self.regions.members[c].iter().copied());
        }
        set.into_iter().collect()
    }

    /// Cells of `T_Q` (`stars = 1`), `T_Q*` (2) or `T_Q**` (3).
    pub fn t_mask(&self, q: usize, stars: u8) -> Vec<bool> {
        self.whitney.mask(&self.domain, &self.t_whitney(q), stars)
    }

    /// `𝔻^Δ` for the surface ball centered at face `face` with radius `r`.
    pub fn delta_cubes(&self, face: usize, r: f64) -> Result<Vec<usize>> {
        if face >= self.domain.n_faces() || !(r > 0.0) {
            return Err(Error::InvalidParameter(format!("surface ball ({face}, {r})")));
        }
        let k = (-(TDELTA_SCALE * r).log2()).floor() as i32;
        let k = k.clamp(self.grid.k_min, self.grid.k_max);
        let x = self.domain.face_points()[face];
        let mut out: Vec<usize> = self
            .grid
            .generation_ids(k)
            .filter(|&q| self.grid.cube(q).members.iter().any(|&p| dist(&self.grid.points[p], &x) < 2.0 * r))
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Cells of `T_Δ` (`stars = 1`), `T_Δ*` (2) or `T_Δ**` (3).
    pub fn t_delta_mask(&self, face: usize, r: f64, stars: u8) -> Result<Vec<bool>> {
        let mut cubes = Vec::new();
        for q in self.delta_cubes(face, r)? {
            cubes.extend(self.grid.carleson_family(q));
        }
        Ok(self.whitney.mask(&self.domain, &self.union_whitney(&cubes), stars))
    }

    /// Exhaustive sandwich `κ₁B_Q∩Ω ⊂ T_Q ⊂ κ₀B_Q∩Ω` over all cubes, with the
    /// overlap of `{U_Q}` and nesting of the boxes.
    pub fn sandwich(&self) -> SandwichReport {
        let n_cubes = self.grid.len();
        let points: Vec<Point> = (0..self.domain.n_cells()).map(|u| self.domain.cell_point(u)).collect();
        let per_cube: Vec<(f64, f64, Vec<bool>)> = (0..n_cubes)
            .into_par_iter()
            .map(|q| {
                let mask = self.t_mask(q, 1);
                let c = self.grid.cube(q);
                let x = self.grid.points[c.center];
                let mut outer = 0.0f64;
                let mut inner = f64::INFINITY;
                for (u, p) in points.iter().enumerate() {
                    let d = dist(p, &x) / c.radius;
                    if mask[u] {
                        outer = outer.max(d);
                    } else {
                        inner = inner.min(d);
                    }
                }
                (outer, inner, mask)
            })
            .collect();
        let mut nested = true;
        for (q, (_, _, mask)) in per_cube.iter().enumerate() {
            if let Some(p) = self.grid.cube(q).parent {
                let parent = &per_cube[p].2;
                if mask.iter().zip(parent).any(|(&a, &b)| a && !b) {
                    nested = false;
                }
            }
        }
        let mut counts = vec![0usize; self.domain.n_cells()];
        for q in 0..n_cubes {
            for (u, m) in self.u_mask(q, 1).into_iter().enumerate() {
                counts[u] += m as usize;
            }
        }
        let measured = per_cube.iter().map(|t| t.0).fold(0.0, f64::max);
        SandwichReport {
            kappa0: measured.max(16.0 * self.grid.xi()),
            kappa0_measured: measured,
            kappa1: per_cube.iter().map(|t| t.1).fold(f64::INFINITY, f64::min),
            u_overlap: counts.into_iter().max().unwrap_or(0),
            nested,
            cubes: n_cubes,
        }
    }

    /// `Ω_{ℱ,Q₀}` for a family of pairwise disjoint cubes inside `Q₀`.
    pub fn sawtooth(&self, family: &[usize], q0: usize) -> Result<Sawtooth> {
        for (i, &a) in family.iter().enumerate() {
            if a >= self.grid.len() || !self.grid.is_descendant(a, q0) {
                return Err(Error::InvalidParameter(format!("cube {a} is not inside Q0 = {q0}")));
            }
            for &b in &family[i + 1..] {
                if a == b || self.grid.is_descendant(a, b) || self.grid.is_descendant(b, a) {
                    return Err(Error::InvalidParameter(format!("family cubes {a} and {b} are not disjoint")));
                }
            }
        }
        let cubes = self.grid.sawtooth_family(family, q0);
        let whitney = self.union_whitney(&cubes);
        let mask = self.whitney.mask(&self.domain, &whitney, 1);
        let empty = cubes.is_empty() || !mask.iter().any(|&m| m);
        Ok(Sawtooth { q0, family: family.to_vec(), cubes, whitney, mask, empty })
    }

    /// `ℱ_N`: descendants of `Q₀` exactly `depth` generations below it.
    pub fn descendants_at(&self, q0: usize, depth: u32) -> Result<Vec<usize>> {
        let k = self.grid.cube(q0).generation + depth as i32;
        if k > self.grid.k_max {
            return Err(Error::Range(format!(
                "depth {depth} below Q0 exceeds the finest generation {}",
                self.grid.k_max
            )));
        }
        let mut level = vec![q0];
        for _ in 0..depth {
            level = level.iter().flat_map(|&c| self.grid.cube(c).children.iter().copied()).collect();
        }
        level.sort_unstable();
        Ok(level)
    }

    /// The largest face-connected component of a sawtooth as a voxel domain.
    pub fn sub_domain(&self, saw: &Sawtooth) -> Result<SubDomain> {
        if saw.empty {
            return Err(Error::InvalidParameter("empty sawtooth".into()));
        }
        let (keep, components) = largest_component(&self.domain, &saw.mask);
        let mut lattice = vec![false; self.domain.lattice_len()];
        for &u in &keep {
            lattice[self.domain.cell_lattice(u)] = true;
        }
        let domain = GridDomain::from_mask(self.domain.dim, self.domain.n, lattice)?;
        let cell_map = (0..domain.n_cells())
            .map(|v| self.domain.cell_of_lattice(domain.cell_lattice(v)).expect("sub-domain cells are ambient cells"))
            .collect();
        Ok(SubDomain { domain, cell_map, components })
    }

    /// `Y_{Q₀}`: center of the Whitney cube holding the deepest sawtooth cell.
    pub fn common_corkscrew(&self, sub: &SubDomain) -> CommonCorkscrew {
        let d = &sub.domain;
        let mut deepest = 0usize;
        for v in 0..d.n_cells() {
            if d.delta(v) > d.delta(deepest) {
                deepest = v;
            }
        }
        let ambient = sub.cell_map[deepest];
        let center = self.whitney.center_cell(&self.domain, self.whitney.cube_of_cell(ambient));
        let sub_of = |u: usize| d.cell_of_lattice(self.domain.cell_lattice(u));
        let (cell, v) = match sub_of(center) {
            Some(v) => (center, v),
            None => (ambient, deepest),
        };
        let delta = self.domain.delta(cell);
        let delta_sawtooth = d.delta(v);
        CommonCorkscrew {
            cell,
            point: self.domain.cell_point(cell),
            delta,
            delta_sawtooth,
            ratio: delta / delta_sawtooth,
        }
    }

    /// Faces of the sawtooth that separate it from the rest of `Ω`.
    pub fn inner_boundary_faces(&self, mask: &[bool]) -> Vec<(usize, u8, i8)> {
        let mut out = Vec::new();
        for u in 0..self.domain.n_cells() {
            if !mask[u] {
                continue;
            }
            for axis in 0..self.domain.dim {
                for dir in [-1i8, 1] {
                    if let Some(v) = self.domain.neighbor(u, axis, dir) {
                        if !mask[v] {
                            out.push((u, axis as u8, dir));
                        }
                    }
                }
            }
        }
        out
    }

    fn face_point(&self, f: &(usize, u8, i8)) -> Point {
        let mut p = self.domain.cell_point(f.0);
        p[f.1 as usize] += f.2 as f64 * 0.5 * self.domain.h;
        p
    }

    /// Projection patches `P_j` on `∂Ω_{ℱ,Q₀}` for each `Q_j ∈ ℱ`.
    pub fn projection_cubes(&self, saw: &Sawtooth) -> ProjectionReport {
        let faces = self.inner_boundary_faces(&saw.mask);
        let face_pts: Vec<Point> = faces.iter().map(|f| self.face_point(f)).collect();
        let mut patches = Vec::new();
        let mut skipped = Vec::new();
        let mut cover: HashMap<(usize, u8, i8), usize> = HashMap::new();
        for &qj in &saw.family {
            let cube = self.grid.cube(qj);
            let members: Vec<Point> = cube.members.iter().map(|&p| self.grid.points[p]).collect();
            let to_cube = |p: &Point| members.iter().map(|m| dist(m, p)).fold(f64::INFINITY, f64::min);
            let start = (0..faces.len())
                .map(|i| (to_cube(&face_pts[i]), i))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let Some((_, s)) = start else {
                skipped.push(qj);
                continue;
            };
            let (axis, dir) = (faces[s].1, faces[s].2);
            let plane = face_pts[s][axis as usize];
            let reach = cube.length / 4.0;
            let chosen: Vec<usize> = (0..faces.len())
                .filter(|&i| {
                    faces[i].1 == axis
                        && faces[i].2 == dir
                        && (face_pts[i][axis as usize] - plane).abs() < 1e-9 * self.domain.h
                        && dist(&face_pts[i], &face_pts[s]) <= reach
                })
                .collect();
            let mut side = 0.0f64;
            for a in 0..self.domain.dim {
                if a == axis as usize {
                    continue;
                }
                let lo = chosen.iter().map(|&i| face_pts[i][a]).fold(f64::INFINITY, f64::min);
                let hi = chosen.iter().map(|&i| face_pts[i][a]).fold(f64::NEG_INFINITY, f64::max);
                side = side.max(hi - lo + self.domain.h);
            }
            let distance_to_cube = chosen.iter().map(|&i| to_cube(&face_pts[i])).fold(f64::INFINITY, f64::min);
            let to_boundary =
                chosen.iter().map(|&i| self.domain.boundary_distance(&face_pts[i])).fold(f64::INFINITY, f64::min);
            for &i in &chosen {
                *cover.entry(faces[i]).or_insert(0) += 1;
            }
            patches.push(ProjectionPatch {
                cube: qj,
                faces: chosen.iter().map(|&i| faces[i]).collect(),
                side,
                distance_to_cube,
                boundary_ratio: to_boundary / cube.length,
            });
        }
        let range = |f: &dyn Fn(&ProjectionPatch) -> f64| {
            patches.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let len = |p: &ProjectionPatch| self.grid.cube(p.cube).length;
        ProjectionReport {
            side_range: range(&|p| p.side / len(p)),
            distance_range: range(&|p| p.distance_to_cube / len(p)),
            boundary_range: range(&|p| p.boundary_ratio),
            overlap: cover.values().copied().max().unwrap_or(0),
            patches,
            skipped,
        }
    }

    /// The cutoff `Ψ_N` for `ℱ_N` = cubes `depth` generations below `Q₀`.
    pub fn cutoff_psi(&self, q0: usize, depth: u32) -> Result<Cutoff> {
        if depth == 0 {
            return Err(Error::InvalidParameter("cutoff depth must be positive".into()));
        }
        let family = self.descendants_at(q0, depth)?;
        let region = self.sawtooth(&family, q0)?;
        let w = &self.whitney;
        let dim = self.domain.dim;
        let mut in_wn = vec![false; w.len()];
        for &i in &region.whitney {
            in_wn[i] = true;
        }
        let sigma: Vec<usize> = region.whitney.iter().copied().filter(|&i| w.touching(i).any(|j| !in_wn[j])).collect();
        let mut in_sigma = vec![false; w.len()];
        for &i in &sigma {
            in_sigma[i] = true;
        }
        let core: Vec<usize> = region.whitney.iter().copied().filter(|&i| !in_sigma[i]).collect();
        let core_mask = w.mask(&self.domain, &core, 2);
        let star_mask = w.mask(&self.domain, &region.whitney, 2);

        let inner = 0.5 * w.factor(1);
        let outer = 0.5 * (1.0 + 1.5 * w.lambda);
        // φ_I and ∇φ_I at `p`.
        let bump = |i: usize, p: &Point| -> (f64, Point) {
            let q = &w.cubes[i];
            let mut vals = [1.0; 3];
            let mut ders = [0.0; 3];
            for a in 0..dim {
                let t = (p[a] - q.center[a]) / q.side;
                let (v, dv) = smooth_step((outer - t.abs()) / (outer - inner));
                vals[a] = v;
                ders[a] = -dv * t.signum() / ((outer - inner) * q.side);
            }
            let value: f64 = vals[..dim].iter().product();
            let mut grad = [0.0; 3];
            for a in 0..dim {
                let mut g = ders[a];
                for b in 0..dim {
                    if b != a {
                        g *= vals[b];
                    }
                }
                grad[a] = g;
            }
            (value, grad)
        };

        // Ψ_N and ∇Ψ_N at `p`, summing bumps of cubes near `home`.
        let ring = |home: usize| -> BTreeSet<usize> {
            let mut cands = BTreeSet::from([home]);
            for j in w.touching(home) {
                cands.insert(j);
                cands.extend(w.touching(j));
            }
            cands
        };
        let eval = |p: &Point, home: usize| -> (f64, Point) {
            let (mut num, mut den_out) = (0.0, 0.0);
            let (mut gnum, mut gout) = ([0.0; 3], [0.0; 3]);
            for i in ring(home) {
                let (v, g) = bump(i, p);
                if v == 0.0 && g.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let (acc, gacc) = if in_wn[i] { (&mut num, &mut gnum) } else { (&mut den_out, &mut gout) };
                *acc += v;
                for a in 0..3 {
                    gacc[a] += g[a];
                }
            }
            // Ψ = num / (num + out): only bumps outside 𝒲_N move Ψ away from 1.
            let total = num + den_out;
            if total == 0.0 {
                return (0.0, [0.0; 3]);
            }
            let mut grad = [0.0; 3];
            for a in 0..3 {
                grad[a] = (gnum[a] * den_out - num * gout[a]) / (total * total);
            }
            (num / total, grad)
        };
        let norm = |g: &Point| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();

        let n_cells = self.domain.n_cells();
        let results: Vec<(f64, Point)> =
            (0..n_cells).into_par_iter().map(|u| eval(&self.domain.cell_point(u), w.cube_of_cell(u))).collect();

        let mut min_on_region = f64::INFINITY;
        let mut max_outside_star = 0.0f64;
        let mut max_value = 0.0f64;
        let mut gradient_bound = 0.0f64;
        let mut core_gradient = 0.0f64;
        for u in 0..n_cells {
            let (v, g) = results[u];
            let gn = norm(&g);
            if region.mask[u] {
                min_on_region = min_on_region.min(v);
            }
            if !star_mask[u] {
                max_outside_star = max_outside_star.max(v);
            }
            max_value = max_value.max(v);
            gradient_bound = gradient_bound.max(gn * self.domain.delta(u));
            if core_mask[u] {
                core_gradient = core_gradient.max(gn);
            }
        }

        // The bump transition is thinner than a cell for small cubes, so the
        // gradient is also probed on the mid-band of every bump near 𝒲_N.
        let mid = 0.5 * (inner + outer);
        let in_core = |p: &Point, home: usize| {
            let f = w.factor(2);
            ring(home).into_iter().any(|i| {
                if !in_wn[i] || in_sigma[i] {
                    return false;
                }
                let (lo, hi) = w.cubes[i].scaled_box(f, dim);
                (0..dim).all(|a| p[a] > lo[a] && p[a] < hi[a])
            })
        };
        let near: Vec<usize> = (0..w.len()).filter(|&i| in_wn[i] || w.touching(i).any(|j| in_wn[j])).collect();
        let probes: Vec<(f64, f64)> = near
            .par_iter()
            .flat_map_iter(|&i| {
                let q = &w.cubes[i];
                let mut out = Vec::new();
                let steps = q.cells;
                for a in 0..dim {
                    for sign in [-1.0, 1.0] {
                        let tangential: Vec<usize> = (0..dim).filter(|&b| b != a).collect();
                        let count = steps.pow(tangential.len() as u32);
                        for t in 0..count {
                            let mut p = q.center;
                            p[a] += sign * mid * q.side;
                            let mut rem = t;
                            for &b in &tangential {
                                let idx = rem % steps;
                                rem /= steps;
                                p[b] = q.center[b] - 0.5 * q.side + (idx as f64 + 0.5) * self.domain.h;
                            }
                            let Some(u) = self.domain.locate(&p) else { continue };
                            let (_, g) = eval(&p, w.cube_of_cell(u));
                            let gn = norm(&g);
                            let core = if in_core(&p, w.cube_of_cell(u)) { gn } else { 0.0 };
                            out.push((gn * self.domain.boundary_distance(&p), core));
                        }
                    }
                }
                out
            })
            .collect();
        for (gd, core) in probes {
            gradient_bound = gradient_bound.max(gd);
            core_gradient = core_gradient.max(core);
        }

        let mut qhat_counts = vec![0usize; self.grid.points.len()];
        let (mut side_ratio, mut inverse_ratio, mut distance_ratio) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &sigma {
            let q = self.regions.cube_of_whitney[i];
            let c = self.grid.cube(q);
            let side = w.cubes[i].side;
            for &p in &c.members {
                qhat_counts[p] += 1;
            }
            side_ratio = side_ratio.max(c.length / side);
            inverse_ratio = inverse_ratio.max(side / c.length);
            distance_ratio = distance_ratio.max(w.distance_to_points(i, &self.grid.points, &c.members) / side);
        }

        let report = CutoffReport {
            n: depth,
            min_on_region,
            max_outside_star,
            max_value,
            gradient_bound,
            max_gradient_on_core: core_gradient,
            w_n: region.whitney.len(),
            w_sigma: sigma.len(),
            qhat_overlap: qhat_counts.into_iter().max().unwrap_or(0),
            qhat_side_ratio: side_ratio,
            qhat_inverse_ratio: inverse_ratio,
            qhat_distance_ratio: distance_ratio,
        };
        Ok(Cutoff {
            value: results.iter().map(|r| r.0).collect(),
            gradient: results.iter().map(|r| r.1).collect(),
            report,
        })
    }
}

/// Cells of the largest face-connected component of `mask` and the component count.
pub fn largest_component(domain: &GridDomain, mask: &[bool]) -> (Vec<usize>, usize) {
    let mut label = vec![usize::MAX; mask.len()];
    let mut best: Vec<usize> = Vec::new();
    let mut count = 0;
    for s in 0..mask.len() {
        if !mask[s] || label[s] != usize::MAX {
            continue;
        }
        let mut comp = vec![s];
        label[s] = count;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for axis in 0..domain.dim {
                for dir in [-1i8, 1] {
                    if let Some(v) = domain.neighbor(u, axis, dir) {
                        if mask[v] && label[v] == usize::MAX {
                            label[v] = count;
                            comp.push(v);
                            queue.push_back(v);
                        }
                    }
                }
            }
        }
        count += 1;
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_unstable();
    (best, count)
}

impl WhitneyRegions {
    /// Builds `𝒲_Q*` for every cube as the cubes with `Q_I = Q` together with a
    /// shortest face-adjacent chain from the corkscrew cube of `Q` into them, then
    /// records the smallest `k*` and `K₀` admitting every family.
    pub fn tune(domain: &GridDomain, grid: &DyadicGrid, whitney: &Whitney) -> Result<WhitneyRegions> {
        let n_cubes = grid.len();
        let corkscrew: Vec<usize> = (0..n_cubes)
            .into_par_iter()
            .map(|q| {
                let c = grid.cube(q);
                domain.corkscrew(&grid.points[c.center], c.radius.max(domain.h)).map(|k| k.cell)
            })
            .collect::<Result<_>>()?;
        let start: Vec<usize> = corkscrew.iter().map(|&u| whitney.cube_of_cell(u)).collect();
        let resolved: Vec<bool> = start.iter().map(|&j| whitney.cubes[j].resolved).collect();

        let cube_of_whitney: Vec<usize> =
            whitney.cubes.iter().map(|i| grid.cube_of(assignment_generation(i.dist, grid), i.nearest_face)).collect();
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n_cubes];
        for (i, &q) in cube_of_whitney.iter().enumerate() {
            assigned[q].push(i);
        }

        let members: Vec<Vec<usize>> = (0..n_cubes)
            .into_par_iter()
            .map(|q| {
                let mut set: BTreeSet<usize> = assigned[q].iter().copied().collect();
                set.extend(chain_into(whitney, start[q], &set));
                set.into_iter().collect()
            })
            .collect();

        let (mut k_star, mut k0_needed) = (0i32, 0.0f64);
        for (q, family) in members.iter().enumerate() {
            let c = grid.cube(q);
            for &i in family {
                k_star = k_star.max((whitney.cubes[i].k - c.generation).abs());
                k0_needed = k0_needed.max(whitney.distance_to_points(i, &grid.points, &c.members) / c.length);
            }
        }
        let k0 = *K0_CHOICES.iter().find(|&&k| k >= k0_needed).ok_or_else(|| {
            Error::Tuning(format!("Whitney regions reach {k0_needed:.2} ℓ(Q) from their cubes, beyond K0 = 64"))
        })?;
        Ok(WhitneyRegions { k_star, k0, corkscrew, resolved, members, cube_of_whitney })
    }
}

/// Generation of `Q_I`: the `k` with `2^{-k} ≤ dist(I, ∂Ω) < 2^{1-k}`, clamped
/// to the grid. Comparable to `ℓ(I)` by the Whitney bounds, and it keeps the
/// boxes `T_Q` at height `≈ ℓ(Q)` when only a few generations are resolved.
pub fn assignment_generation(distance: f64, grid: &DyadicGrid) -> i32 {
    ((-distance.log2()).ceil() as i32).clamp(grid.k_min, grid.k_max)
}

/// Shortest face-adjacent path from `from` to any cube of `targets`, both ends
/// included; just `from` when `targets` is empty or already contains it.
fn chain_into(whitney: &Whitney, from: usize, targets: &BTreeSet<usize>) -> Vec<usize> {
    if targets.is_empty() || targets.contains(&from) {
        return vec![from];
    }
    let mut prev = HashMap::from([(from, usize::MAX)]);
    let mut queue = VecDeque::from([from]);
    while let Some(i) = queue.pop_front() {
        if targets.contains(&i) {
            let mut path = vec![i];
            let mut cur = i;
            while prev[&cur] != usize::MAX {
                cur = prev[&cur];
                path.push(cur);
            }
            return path;
        }
        for j in whitney.face_adjacent(i) {
            if let std::collections::hash_map::Entry::Vacant(e) = prev.entry(j) {
                e.insert(i);
                queue.push_back(j);
            }
        }
    }
    vec![from]
}
