use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elab::carleson::*;

/// Random tree, measure pair and sequence from a seed.
fn instance(seed: u64, depth: u32, branch: usize) -> (CubeTree, CubeMeasure, CubeMeasure, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = CubeTree::random(depth, branch, &mut rng).unwrap();
    let mu = CubeMeasure::random(&t, 0.1, 2.0, &mut rng).unwrap();
    let nu = CubeMeasure::random(&t, 0.1, 2.0, &mut rng).unwrap();
    let g = (0..t.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    (t, mu, nu, g)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

fn cubes_containing(t: &CubeTree, x: usize) -> Vec<usize> {
    (0..t.len()).filter(|&q| t.span[q].contains(&x)).collect()
}

/// `(Σ_{Q∋x, depth ≥ k} γ_Q²/μ(Q))^{1/2}` by direct enumeration.
fn naive_a(t: &CubeTree, g: &[f64], mu: &CubeMeasure, k: u32, x: usize) -> f64 {
    cubes_containing(t, x).iter().filter(|&&q| t.depth[q] >= k).map(|&q| g[q] * g[q] / mu.cube[q]).sum::<f64>().sqrt()
}

/// `sup_{Q∋x} (μ(Q)^{-1} Σ_{Q'⊆Q} γ_{Q'}²)^{1/2}` by direct enumeration.
fn naive_b(t: &CubeTree, g: &[f64], mu: &CubeMeasure, x: usize) -> f64 {
    cubes_containing(t, x)
        .iter()
        .map(|&q| ((0..t.len()).filter(|&p| t.contains(q, p)).map(|p| g[p] * g[p]).sum::<f64>() / mu.cube[q]).sqrt())
        .fold(0.0, f64::max)
}

fn naive_carleson(t: &CubeTree, g: &[f64], mu: &CubeMeasure) -> f64 {
    (0..t.len())
        .map(|q| (0..t.len()).filter(|&p| t.contains(q, p)).map(|p| g[p]).sum::<f64>() / mu.cube[q])
        .fold(0.0, f64::max)
}

/// `β(α)` over unions of whole atoms by subset enumeration.
fn brute_beta(t: &CubeTree, mu: &CubeMeasure, nu: &CubeMeasure, alpha: f64) -> f64 {
    let mut best = f64::INFINITY;
    for q in 0..t.len() {
        let span = t.span[q].clone();
        let m = span.len();
        for mask in 1u32..(1 << m) {
            let (mut fm, mut fv) = (0.0, 0.0);
            for (i, x) in span.clone().enumerate() {
                if mask & (1 << i) != 0 {
                    fm += mu.atom[x];
                    fv += nu.atom[x];
                }
            }
            if fm > alpha * mu.cube[q] {
                best = best.min(fv / nu.cube[q]);
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tent_operators_match_direct_enumeration(seed in any::<u64>(), depth in 1u32..5, branch in 1usize..4, k in 0u32..3) {
        let (t, mu, _, g) = instance(seed, depth, branch);
        let a = tent_a_trunc(&t, &g, &mu, k);
        let b = tent_b(&t, &g, &mu);
        for x in 0..t.n_atoms() {
            prop_assert!(close(a[x], naive_a(&t, &g, &mu, k, x)));
            prop_assert!(close(b[x], naive_b(&t, &g, &mu, x)));
        }
        prop_assert!(close(carleson_norm(&t, &g, &mu), naive_carleson(&t, &g, &mu)));
    }

    #[test]
    fn duality_constant_four_holds(seed in any::<u64>(), depth in 1u32..6, branch in 1usize..4) {
        let (t, mu, nu, a) = instance(seed, depth, branch);
        let b: Vec<f64> = nu.cube.iter().map(|v| v - 1.0).collect();
        let (lhs, rhs) = duality_check(&t, &a, &b, &mu);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12), "{} > {}", lhs, rhs);
    }

    #[test]
    fn truncation_decreases_the_area_function(seed in any::<u64>(), depth in 1u32..5) {
        let (t, mu, _, g) = instance(seed, depth, 3);
        let mut prev = tent_a(&t, &g, &mu);
        for k in 1..=depth + 1 {
            let cur = tent_a_trunc(&t, &g, &mu, k);
            prop_assert!(cur.iter().zip(&prev).all(|(c, p)| *c <= *p + 1e-15));
            prev = cur;
        }
        prop_assert!(prev.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn atomic_curve_matches_subset_enumeration(seed in any::<u64>(), alpha in 0.05f64..0.95) {
        // Depth two with at most two children keeps every cube at eight atoms or fewer.
        let (t, mu, nu, _) = instance(seed, 2, 2);
        let atomic = ainfty_dyadic_estimate(&t, &mu, &nu, &[alpha], SetModel::Atomic);
        let diffuse = ainfty_dyadic_estimate(&t, &mu, &nu, &[alpha], SetModel::Diffuse);
        prop_assert!(atomic.exact);
        let brute = brute_beta(&t, &mu, &nu, alpha);
        prop_assert!(close(atomic.betas[0], brute), "{} vs {}", atomic.betas[0], brute);
        prop_assert!(diffuse.betas[0] <= atomic.betas[0] + 1e-12);
    }

    #[test]
    fn projection_keeps_mass_and_doubling(seed in any::<u64>(), depth in 2u32..5, pick in any::<u64>()) {
        let (t, mu, nu, _) = instance(seed, depth, 3);
        // A disjoint family: walk the tree and stop at cubes selected by `pick`.
        let mut rng = ChaCha8Rng::seed_from_u64(pick);
        let mut family = Vec::new();
        let mut stack = t.children[0].clone();
        while let Some(q) = stack.pop() {
            if rng.random_bool(0.4) {
                family.push(q);
            } else {
                stack.extend_from_slice(&t.children[q]);
            }
        }
        let p = project_measure(&t, &family, &mu, &nu).unwrap();
        prop_assert!(close(p.total(), nu.total()));
        for &f in &family {
            prop_assert!(close(p.cube[f], nu.cube[f]));
        }
        let bound = mu.doubling(&t).max(nu.doubling(&t));
        prop_assert!(p.doubling(&t) <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn certified_pairs_are_comparable(seed in any::<u64>(), spread in 0.0f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = CubeTree::random(3, 3, &mut rng).unwrap();
        let mu = CubeMeasure::random(&t, 0.5, 1.5, &mut rng).unwrap();
        let nu = CubeMeasure::new(&t, mu.atom.iter().map(|m| m * rng.random_range(1.0 - spread..=1.0 + spread)).collect()).unwrap();
        let g: Vec<f64> = (0..t.len()).map(|_| rng.random::<f64>()).collect();
        let c = comparability_check(&t, &g, &mu, &nu, 0.5, 0.5);
        prop_assert!(c.holds(), "{:?}", c);
    }
}

#[test]
fn stopping_cubes_exceed_the_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let t = CubeTree::random(4, 3, &mut rng).unwrap();
        let mu = CubeMeasure::random(&t, 0.1, 2.0, &mut rng).unwrap();
        let nu = CubeMeasure::random(&t, 0.1, 2.0, &mut rng).unwrap();
        let family = stopping_family(&t, 0, &mu, &nu, 0.5);
        let threshold = 2.0 * nu.total() / mu.total();
        for &f in &family {
            assert!(nu.cube[f] / mu.cube[f] > threshold);
            // Maximality: no strict ancestor below the root qualifies.
            let mut a = t.parent[f];
            while a != 0 {
                assert!(nu.cube[a] / mu.cube[a] <= threshold);
                a = t.parent[a];
            }
        }
        assert!(t.sawtooth_mask(&family).is_ok());
    }
}
