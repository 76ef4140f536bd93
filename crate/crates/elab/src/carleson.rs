//! Measures on cube trees, tent operators, discrete Carleson norms, dyadic
//! projections, the dyadic A∞ certificate and the Carleson comparability test.
//!
//! A [`CubeTree`] is a finite rooted tree of cubes whose leaves hold atoms
//! (boundary cells). Cube ids are ordered so that every parent precedes its
//! children, and the atoms of every cube form a contiguous range of the atom
//! order. Measures live on atoms; cube masses are sums over those ranges.

use std::ops::Range;

use rand::Rng;

use crate::dyadic::DyadicGrid;
use crate::error::{Error, Result};

/// Constant of the tent-space duality inequality.
pub const DUALITY_CONSTANT: f64 = 4.0;

/// Branch-and-bound node budget per knapsack before falling back to the
/// fractional lower bound.
pub const KNAPSACK_NODE_BUDGET: usize = 200_000;

#[derive(Clone, Debug)]
pub struct CubeTree {
    /// `usize::MAX` for the root.
    pub parent: Vec<usize>,
    pub children: Vec<Vec<usize>>,
    /// Generation offset from the root (`ℓ(Q) = 2^{-depth} ℓ(Q⁰)`).
    pub depth: Vec<u32>,
    /// Atom range of each cube in tree order.
    pub span: Vec<Range<usize>>,
    /// External id (e.g. boundary face) of each atom in tree order.
    pub atoms: Vec<usize>,
    /// Source id of each cube (input index, or dyadic cube id for grid trees).
    pub label: Vec<usize>,
}

impl CubeTree {
    /// Builds a tree from a nested description: `children[c]` lists the
    /// children of cube `c` (cube 0 is the root) and `leaf_atoms[c]` the atoms
    /// held directly by leaf `c`. Cubes are renumbered in depth-first order.
    pub fn from_children(children: &[Vec<usize>], leaf_atoms: &[Vec<usize>]) -> Result<CubeTree> {
        let n = children.len();
        if n == 0 || leaf_atoms.len() != n {
            return Err(Error::InvalidParameter("tree needs a root and one atom list per cube".into()));
        }
        let mut tree = CubeTree {
            parent: Vec::new(),
            children: Vec::new(),
            depth: Vec::new(),
            span: Vec::new(),
            atoms: Vec::new(),
            label: Vec::new(),
        };
        let mut seen = vec![false; n];
        // (old id, new parent, depth); a post-visit marker closes the span.
        enum Step {
            Enter(usize, usize, u32),
            Leave(usize),
        }
        let mut stack = vec![Step::Enter(0, usize::MAX, 0)];
        while let Some(step) = stack.pop() {
            match step {
                Step::Enter(old, parent, depth) => {
                    if seen[old] {
                        return Err(Error::InvalidParameter(format!("cube {old} reached twice")));
                    }
                    seen[old] = true;
                    let id = tree.parent.len();
                    tree.parent.push(parent);
                    tree.label.push(old);
                    tree.children.push(Vec::new());
                    tree.depth.push(depth);
                    let start = tree.atoms.len();
                    tree.span.push(start..start);
                    if parent != usize::MAX {
                        tree.children[parent].push(id);
                    }
                    if children[old].is_empty() {
                        if leaf_atoms[old].is_empty() {
                            return Err(Error::InvalidParameter(format!("leaf {old} holds no atoms")));
                        }
                        tree.atoms.extend_from_slice(&leaf_atoms[old]);
                        tree.span[id] = start..tree.atoms.len();
                    } else {
                        stack.push(Step::Leave(id));
                        for &c in children[old].iter().rev() {
                            if c >= n {
                                return Err(Error::InvalidParameter(format!("child {c} out of range")));
                            }
                            stack.push(Step::Enter(c, id, depth + 1));
                        }
                    }
                }
                Step::Leave(id) => {
                    let start = tree.span[id].start;
                    tree.span[id] = start..tree.atoms.len();
                }
            }
        }
        Ok(tree)
    }

    /// Uniform `m`-ary tree of the given depth with one atom per leaf.
    pub fn uniform(m: usize, depth: u32) -> Result<CubeTree> {
        if m == 0 {
            return Err(Error::InvalidParameter("branching must be positive".into()));
        }
        let mut children = vec![Vec::new()];
        let mut frontier = vec![0usize];
        for _ in 0..depth {
            let mut next = Vec::new();
            for &q in &frontier {
                for _ in 0..m {
                    let c = children.len();
                    children.push(Vec::new());
                    children[q].push(c);
                    next.push(c);
                }
            }
            frontier = next;
        }
        let mut leaf_atoms = vec![Vec::new(); children.len()];
        for (i, &q) in frontier.iter().enumerate() {
            leaf_atoms[q].push(i);
        }
        CubeTree::from_children(&children, &leaf_atoms)
    }

    /// Random tree: every cube above `depth` has 1..=`max_branch` children
    /// (at least two at the root when `max_branch ≥ 2`), leaves hold 1..=2 atoms.
    pub fn random(depth: u32, max_branch: usize, rng: &mut impl Rng) -> Result<CubeTree> {
        if max_branch == 0 {
            return Err(Error::InvalidParameter("branching must be positive".into()));
        }
        let mut children = vec![Vec::new()];
        let mut frontier = vec![0usize];
        for level in 0..depth {
            let mut next = Vec::new();
            for &q in &frontier {
                let lo = if level == 0 { max_branch.min(2) } else { 1 };
                let m = rng.random_range(lo..=max_branch);
                for _ in 0..m {
                    let c = children.len();
                    children.push(Vec::new());
                    children[q].push(c);
                    next.push(c);
                }
            }
            frontier = next;
        }
        let mut leaf_atoms = vec![Vec::new(); children.len()];
        let mut next_atom = 0;
        for &q in &frontier {
            for _ in 0..rng.random_range(1..=2) {
                leaf_atoms[q].push(next_atom);
                next_atom += 1;
            }
        }
        CubeTree::from_children(&children, &leaf_atoms)
    }

    /// The dyadic subtree `𝔻_{Q⁰}` of a boundary grid; atoms are boundary faces.
    pub fn from_grid(grid: &DyadicGrid, q0: usize) -> Result<CubeTree> {
        if q0 >= grid.len() {
            return Err(Error::InvalidParameter(format!("cube {q0} out of range")));
        }
        let ids: Vec<usize> = grid.carleson_family(q0);
        let local: std::collections::HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &q)| (q, i)).collect();
        let mut children = vec![Vec::new(); ids.len()];
        let mut leaf_atoms = vec![Vec::new(); ids.len()];
        for (i, &q) in ids.iter().enumerate() {
            let cube = grid.cube(q);
            children[i] = cube.children.iter().map(|c| local[c]).collect();
            if children[i].is_empty() {
                leaf_atoms[i] = cube.members.clone();
            }
        }
        // `carleson_family` lists Q⁰ first, so the root is local cube 0.
        let mut tree = CubeTree::from_children(&children, &leaf_atoms)?;
        for l in tree.label.iter_mut() {
            *l = ids[*l];
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Deepest cube containing atom `x` (a leaf).
    pub fn leaf_of(&self) -> Vec<usize> {
        let mut leaf = vec![0; self.n_atoms()];
        for q in 0..self.len() {
            if self.children[q].is_empty() {
                for x in self.span[q].clone() {
                    leaf[x] = q;
                }
            }
        }
        leaf
    }

    /// `a ⊆ b`.
    pub fn contains(&self, b: usize, a: usize) -> bool {
        let (sa, sb) = (&self.span[a], &self.span[b]);
        sb.start <= sa.start && sa.end <= sb.end && self.depth[a] >= self.depth[b]
    }

    /// Cube masses of an atom measure.
    pub fn cube_sums(&self, atoms: &[f64]) -> Vec<f64> {
        self.span.iter().map(|s| atoms[s.clone()].iter().sum()).collect()
    }

    /// `Σ_{Q' ⊆ Q} w_{Q'}` for every cube, one bottom-up pass.
    pub fn subtree_sums(&self, w: &[f64]) -> Vec<f64> {
        let mut s = w.to_vec();
        for q in (1..self.len()).rev() {
            let p = self.parent[q];
            s[p] += s[q];
        }
        s
    }

    /// Cubes not contained in any member of `family` (the discrete sawtooth).
    pub fn sawtooth_mask(&self, family: &[usize]) -> Result<Vec<bool>> {
        self.check_disjoint(family)?;
        let mut inside = vec![false; self.len()];
        for &f in family {
            inside[f] = true;
        }
        for q in 1..self.len() {
            if inside[self.parent[q]] {
                inside[q] = true;
            }
        }
        Ok(inside.into_iter().map(|b| !b).collect())
    }

    fn check_disjoint(&self, family: &[usize]) -> Result<()> {
        for (i, &a) in family.iter().enumerate() {
            if a >= self.len() {
                return Err(Error::InvalidParameter(format!("cube {a} out of range")));
            }
            for &b in &family[..i] {
                let (sa, sb) = (&self.span[a], &self.span[b]);
                if sa.start < sb.end && sb.start < sa.end {
                    return Err(Error::InvalidParameter(format!("family cubes {a} and {b} overlap")));
                }
            }
        }
        Ok(())
    }
}

/// Atom measure together with its cube masses.
#[derive(Clone, Debug)]
pub struct CubeMeasure {
    pub atom: Vec<f64>,
    pub cube: Vec<f64>,
}

impl CubeMeasure {
    pub fn new(tree: &CubeTree, atom: Vec<f64>) -> Result<CubeMeasure> {
        if atom.len() != tree.n_atoms() {
            return Err(Error::InvalidParameter(format!("{} atom masses for {} atoms", atom.len(), tree.n_atoms())));
        }
        if let Some(x) = atom.iter().position(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(Error::InvalidParameter(format!("atom {x} has mass {}", atom[x])));
        }
        let cube = tree.cube_sums(&atom);
        if let Some(q) = cube.iter().position(|&m| m <= 0.0) {
            return Err(Error::InvalidParameter(format!("cube {q} has zero mass")));
        }
        Ok(CubeMeasure { atom, cube })
    }

    /// Atom masses drawn uniformly from `[lo, hi]`.
    pub fn random(tree: &CubeTree, lo: f64, hi: f64, rng: &mut impl Rng) -> Result<CubeMeasure> {
        CubeMeasure::new(tree, (0..tree.n_atoms()).map(|_| rng.random_range(lo..=hi)).collect())
    }

    pub fn total(&self) -> f64 {
        self.cube[0]
    }

    /// Dyadic doubling constant `max μ(parent)/μ(child)`.
    pub fn doubling(&self, tree: &CubeTree) -> f64 {
        (1..tree.len()).map(|q| self.cube[tree.parent[q]] / self.cube[q]).fold(1.0, f64::max)
    }
}

/// `𝒜^{μ,k}_{Q⁰}γ` at every atom; `k = 0` is the untruncated operator.
pub fn tent_a_trunc(tree: &CubeTree, gamma: &[f64], mu: &CubeMeasure, k: u32) -> Vec<f64> {
    let mut acc = vec![0.0; tree.len()];
    for q in 0..tree.len() {
        let own = if tree.depth[q] >= k { gamma[q] * gamma[q] / mu.cube[q] } else { 0.0 };
        acc[q] = own + if q == 0 { 0.0 } else { acc[tree.parent[q]] };
    }
    let leaf = tree.leaf_of();
    leaf.iter().map(|&q| acc[q].sqrt()).collect()
}

/// `𝒜^μ_{Q⁰}γ` at every atom.
pub fn tent_a(tree: &CubeTree, gamma: &[f64], mu: &CubeMeasure) -> Vec<f64> {
    tent_a_trunc(tree, gamma, mu, 0)
}

/// `ℬ^μ_{Q⁰}γ` at every atom.
pub fn tent_b(tree: &CubeTree, gamma: &[f64], mu: &CubeMeasure) -> Vec<f64> {
    let sq: Vec<f64> = gamma.iter().map(|g| g * g).collect();
    let s = tree.subtree_sums(&sq);
    let mut best = vec![0.0f64; tree.len()];
    for q in 0..tree.len() {
        let own = (s[q] / mu.cube[q]).sqrt();
        best[q] = if q == 0 { own } else { own.max(best[tree.parent[q]]) };
    }
    tree.leaf_of().iter().map(|&q| best[q]).collect()
}

/// `(Σ|α_Q β_Q|, 4 ∫ 𝒜α · ℬβ dμ)`.
pub fn duality_check(tree: &CubeTree, alpha: &[f64], beta: &[f64], mu: &CubeMeasure) -> (f64, f64) {
    let lhs = alpha.iter().zip(beta).map(|(a, b)| (a * b).abs()).sum();
    let a = tent_a(tree, alpha, mu);
    let b = tent_b(tree, beta, mu);
    let integral: f64 = (0..tree.n_atoms()).map(|x| a[x] * b[x] * mu.atom[x]).sum();
    (lhs, DUALITY_CONSTANT * integral)
}

/// `‖𝔪_γ‖_{𝒞(Q⁰,μ)} = sup_Q μ(Q)^{-1} Σ_{Q'⊆Q} γ_{Q'}`.
pub fn carleson_norm(tree: &CubeTree, gamma: &[f64], mu: &CubeMeasure) -> f64 {
    let s = tree.subtree_sums(gamma);
    (0..tree.len()).map(|q| s[q] / mu.cube[q]).fold(0.0, f64::max)
}

/// `γ_ℱ`: γ on the discrete sawtooth of `family`, zero inside its cubes.
pub fn restrict_to_sawtooth(tree: &CubeTree, gamma: &[f64], family: &[usize]) -> Result<Vec<f64>> {
    let keep = tree.sawtooth_mask(family)?;
    Ok(gamma.iter().zip(&keep).map(|(&g, &k)| if k { g } else { 0.0 }).collect())
}

/// `‖𝔪_{γ,ℱ}‖_{𝒞(Q⁰,μ)}`.
pub fn carleson_norm_restricted(tree: &CubeTree, gamma: &[f64], family: &[usize], mu: &CubeMeasure) -> Result<f64> {
    Ok(carleson_norm(tree, &restrict_to_sawtooth(tree, gamma, family)?, mu))
}

/// `⫴γ⫴_μ = sup_Q μ(Q)^{-1} Σ_{Q'⊆Q} γ_{Q'} μ(Q')`.
pub fn weighted_carleson_norm(tree: &CubeTree, gamma: &[f64], mu: &CubeMeasure) -> f64 {
    let w: Vec<f64> = gamma.iter().zip(&mu.cube).map(|(g, m)| g * m).collect();
    carleson_norm(tree, &w, mu)
}

/// `𝒫_ℱ^μ ν` at atom level: ν off `⋃ℱ`, μ-proportional redistribution of `ν(Q_i)` on each `Q_i`.
pub fn project_measure(tree: &CubeTree, family: &[usize], mu: &CubeMeasure, nu: &CubeMeasure) -> Result<CubeMeasure> {
    tree.check_disjoint(family)?;
    let mut atom = nu.atom.clone();
    for &f in family {
        let scale = nu.cube[f] / mu.cube[f];
        for x in tree.span[f].clone() {
            atom[x] = mu.atom[x] * scale;
        }
    }
    CubeMeasure::new(tree, atom)
}

/// Maximal cubes `Q ⊆ Q₀` with `ν(Q)/μ(Q) > (1-α)^{-1} ν(Q₀)/μ(Q₀)`.
pub fn stopping_family(tree: &CubeTree, q0: usize, mu: &CubeMeasure, nu: &CubeMeasure, alpha: f64) -> Vec<usize> {
    let threshold = nu.cube[q0] / mu.cube[q0] / (1.0 - alpha);
    let mut out = Vec::new();
    let mut stack: Vec<usize> = tree.children[q0].clone();
    while let Some(q) = stack.pop() {
        if nu.cube[q] / mu.cube[q] > threshold {
            out.push(q);
        } else {
            stack.extend_from_slice(&tree.children[q]);
        }
    }
    out.sort_unstable();
    out
}

/// How the sets `F ⊆ Q` of the A∞ condition are formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SetModel {
    /// Atoms are patches with constant densities and may be split: the
    /// extremal `F` is a density-sorted prefix plus a fraction of one atom.
    Diffuse,
    /// `F` is a union of whole atoms: an exact 0/1 covering knapsack.
    Atomic,
}

/// Minimal `ν(F)` over `F` drawn from `items = (μ_x, ν_x)` with `μ(F) > target`.
/// Returns `(value, exact)`; `exact = false` when the atomic search exhausted its
/// budget and the value is the fractional lower bound.
pub fn min_cover(items: &[(f64, f64)], target: f64, model: SetModel) -> (f64, bool) {
    let mut sorted: Vec<(f64, f64)> = items.iter().copied().filter(|&(m, _)| m > 0.0).collect();
    sorted.sort_by(|a, b| (a.1 / a.0).total_cmp(&(b.1 / b.0)));
    let total: f64 = sorted.iter().map(|s| s.0).sum();
    if total <= target {
        return (f64::INFINITY, true);
    }
    let fractional = |from: usize, mut need: f64| -> f64 {
        // Infimum of ν over sets from `sorted[from..]` with μ > need.
        let mut v = 0.0;
        for &(m, n) in &sorted[from..] {
            if need < 0.0 {
                break;
            }
            if m >= need {
                return v + need.max(0.0) * n / m;
            }
            v += n;
            need -= m;
        }
        if need < 0.0 {
            v
        } else {
            f64::INFINITY
        }
    };
    let lp = fractional(0, target);
    if model == SetModel::Diffuse {
        return (lp, true);
    }
    // Suffix μ sums prune branches that cannot reach the target.
    let mut suffix = vec![0.0; sorted.len() + 1];
    for i in (0..sorted.len()).rev() {
        suffix[i] = suffix[i + 1] + sorted[i].0;
    }
    let mut best = f64::INFINITY;
    let mut nodes = 0usize;
    let mut stack = vec![(0usize, 0.0f64, 0.0f64)];
    while let Some((i, m, v)) = stack.pop() {
        nodes += 1;
        if nodes > KNAPSACK_NODE_BUDGET {
            return (lp, false);
        }
        if m > target {
            best = best.min(v);
            continue;
        }
        if i == sorted.len() || m + suffix[i] <= target {
            continue;
        }
        if v + fractional(i, target - m) >= best {
            continue;
        }
        let (mi, vi) = sorted[i];
        stack.push((i + 1, m, v));
        stack.push((i + 1, m + mi, v + vi));
    }
    (best, true)
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct AinftyCurve {
    pub model: SetModel,
    pub alphas: Vec<f64>,
    /// `β(α) = inf_Q inf_{F⊆Q, μ(F)>αμ(Q)} ν(F)/ν(Q)`.
    pub betas: Vec<f64>,
    /// Cube attaining each `β(α)`.
    pub witnesses: Vec<usize>,
    pub exact: bool,
}

impl AinftyCurve {
    /// Whether `μ(F)/μ(Q) > α ⟹ ν(F)/ν(Q) ≥ β` is certified for a listed `α`.
    pub fn certifies(&self, alpha: f64, beta: f64) -> Option<bool> {
        let i = self.alphas.iter().position(|&a| a == alpha)?;
        Some(self.betas[i] >= beta)
    }
}

/// The dyadic A∞ curve `α ↦ β(α)` over all cubes of the tree.
pub fn ainfty_dyadic_estimate(
    tree: &CubeTree,
    mu: &CubeMeasure,
    nu: &CubeMeasure,
    alphas: &[f64],
    model: SetModel,
) -> AinftyCurve {
    let mut betas = vec![f64::INFINITY; alphas.len()];
    let mut witnesses = vec![0; alphas.len()];
    let mut exact = true;
    for q in 0..tree.len() {
        let items: Vec<(f64, f64)> = tree.span[q].clone().map(|x| (mu.atom[x], nu.atom[x])).collect();
        for (i, &a) in alphas.iter().enumerate() {
            let (v, ex) = min_cover(&items, a * mu.cube[q], model);
            exact &= ex;
            let b = v / nu.cube[q];
            if b < betas[i] {
                betas[i] = b;
                witnesses[i] = q;
            }
        }
    }
    AinftyCurve { model, alphas: alphas.to_vec(), betas, witnesses, exact }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct Comparability {
    pub certified: bool,
    /// Cube where the hypothesis fails, when it does.
    pub witness: Option<usize>,
    pub lower: f64,
    pub ratio: f64,
    pub upper: f64,
    pub mu_norm: f64,
    pub nu_norm: f64,
}

impl Comparability {
    pub fn holds(&self) -> bool {
        !self.certified || (self.lower <= self.ratio && self.ratio <= self.upper)
    }
}

/// `(1-α)β ⫴γ⫴_μ ≤ ⫴γ⫴_ν ≤ ((1-α)β)^{-1} ⫴γ⫴_μ`, evaluated when `(μ,ν)`
/// satisfy the A∞ hypothesis at `(α,β)` over unions of atoms.
pub fn comparability_check(
    tree: &CubeTree,
    gamma: &[f64],
    mu: &CubeMeasure,
    nu: &CubeMeasure,
    alpha: f64,
    beta: f64,
) -> Comparability {
    let curve = ainfty_dyadic_estimate(tree, mu, nu, &[alpha], SetModel::Atomic);
    let certified = curve.betas[0] >= beta;
    let mu_norm = weighted_carleson_norm(tree, gamma, mu);
    let nu_norm = weighted_carleson_norm(tree, gamma, nu);
    let c = (1.0 - alpha) * beta;
    let ratio = if mu_norm > 0.0 { nu_norm / mu_norm } else { 1.0 };
    Comparability {
        certified,
        witness: (!certified).then_some(curve.witnesses[0]),
        lower: c,
        ratio,
        upper: 1.0 / c,
        mu_norm,
        nu_norm,
    }
}
