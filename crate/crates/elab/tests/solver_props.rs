use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elab::coefficients::CoefficientField;
use elab::domain::{dist, GridDomain, Shape};
use elab::dyadic::DyadicGrid;
use elab::solver::Operator;

fn domain(shape: Shape, n: usize) -> Arc<GridDomain> {
    Arc::new(GridDomain::build(&shape, n).unwrap())
}

fn random_data(d: &GridDomain, rng: &mut impl Rng) -> Vec<f64> {
    (0..d.n_faces()).map(|_| rng.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn diagonal_fields_obey_the_maximum_principle(a in 0.2f64..5.0, b in 0.2f64..5.0, seed in any::<u64>()) {
        let d = domain(Shape::KochPrefractal { depth: 1 }, 33);
        let op = Operator::new(d.clone(), CoefficientField::diag(&d, &[a, b]).unwrap()).unwrap();
        let f = random_data(&d, &mut ChaCha8Rng::seed_from_u64(seed));
        // `solve_dirichlet` returns an error when u leaves [min f, max f].
        prop_assert!(op.solve_dirichlet(&f).is_ok());
    }

    #[test]
    fn mild_random_fields_obey_the_maximum_principle(lambda in 2.0f64..3.0, seed in any::<u64>()) {
        let d = domain(Shape::Square, 33);
        let op = Operator::new(d.clone(), CoefficientField::random(&d, lambda, seed).unwrap()).unwrap();
        let f = random_data(&d, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert!(op.solve_dirichlet(&f).is_ok());
    }

    #[test]
    fn measures_are_probabilities_and_represent_solutions(seed in any::<u64>()) {
        let d = domain(Shape::Disk, 33);
        let op = Operator::new(d.clone(), CoefficientField::random(&d, 2.5, seed).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_data(&d, &mut rng);
        let u = op.solve_dirichlet_unchecked(&f).unwrap();
        for _ in 0..5 {
            let x = loop {
                let x = rng.random_range(0..d.n_cells());
                if d.delta(x) >= 2.0 * d.h {
                    break x;
                }
            };
            let m = op.elliptic_measure(x).unwrap();
            prop_assert!((m.total() - 1.0).abs() <= 1e-8);
            prop_assert!(m.omega.iter().all(|&w| w >= -1e-14));
            let pairing: f64 = m.omega.iter().zip(&f).map(|(w, g)| w * g).sum();
            prop_assert!((pairing - u[x]).abs() <= 1e-8);
        }
    }
}

#[test]
fn green_function_transposes_with_the_adjoint_field() {
    let d = domain(Shape::LipschitzGraph { slope: 1.0 }, 33);
    let field = CoefficientField::random(&d, 4.0, 9).unwrap();
    let op = Operator::new(d.clone(), field.clone()).unwrap();
    let adj = Operator::new(d.clone(), field.transpose()).unwrap();
    let deep: Vec<usize> = (0..d.n_cells()).filter(|&u| d.delta(u) >= 2.0 * d.h).step_by(37).collect();
    for &y in &deep {
        let g = op.green(y).unwrap();
        let gt = adj.green_transpose(y).unwrap();
        let ga = adj.green(deep[0]).unwrap();
        assert!((g[deep[0]] - ga[y]).abs() <= 1e-8);
        // `green_transpose` of the adjoint is the Green function of the operator.
        assert!(g.iter().zip(&gt).all(|(a, b)| (a - b).abs() <= 1e-8));
    }
}

/// Surface balls `Δ = B(x, r) ∩ ∂Ω` centered at dyadic cube centers.
fn ball_sweep(d: &GridDomain) -> Vec<(usize, f64)> {
    let g = DyadicGrid::from_domain(d, None).unwrap();
    g.cubes.iter().filter(|c| c.length >= 4.0 * d.h && c.length <= 0.25).map(|c| (c.center, c.length)).collect()
}

/// Largest `ω^X(2Δ)/ω^X(Δ)` over poles outside `4B`, for one resolution.
fn doubling_constant(n: usize) -> f64 {
    let d = domain(Shape::Square, n);
    let op = Operator::new(d.clone(), CoefficientField::diag(&d, &[1.0, 2.0]).unwrap()).unwrap();
    let poles: Vec<usize> =
        [[0.5, 0.5], [0.3, 0.7], [0.8, 0.25]].iter().map(|p| d.locate(&[p[0], p[1], 0.0]).unwrap()).collect();
    let measures = op.elliptic_measures(&poles).unwrap();
    let mut worst = 1.0f64;
    for (face, r) in ball_sweep(&d) {
        let x = d.face_points()[face];
        let small = d.faces_within(&x, r);
        let big = d.faces_within(&x, 2.0 * r);
        for m in &measures {
            if dist(&d.cell_point(m.pole), &x) >= 4.0 * r {
                worst = worst.max(m.mass(&big) / m.mass(&small));
            }
        }
    }
    worst
}

#[test]
fn elliptic_measure_doubling_constant_is_resolution_stable() {
    let (c65, c129) = (doubling_constant(65), doubling_constant(129));
    assert!(c65.is_finite() && c129.is_finite());
    assert!(c129 <= 2.0 * c65 && c65 <= 2.0 * c129, "{c65} vs {c129}");
}

/// Spread of `ω^X(Δ)/ω^X(Δ₀) / ω^{X_{Δ₀}}(Δ)` over `Δ ⊂ Δ₀` and `X` outside `2B₀`.
fn change_of_pole_spread(n: usize) -> (f64, f64) {
    let d = domain(Shape::Disk, n);
    let op = Operator::new(d.clone(), CoefficientField::identity(&d)).unwrap();
    let x_far = d.locate(&[0.5, 0.5, 0.0]).unwrap();
    let far = op.elliptic_measure(x_far).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for t in [0.0, 1.3, 2.9, 4.4] {
        let f0 = d.nearest_face(&[0.5 + 0.45 * f64::cos(t), 0.5 + 0.45 * f64::sin(t), 0.0]);
        let x0 = d.face_points()[f0];
        let r0 = 0.12;
        let pole = d.corkscrew(&x0, r0).unwrap().cell;
        let near = op.elliptic_measure(pole).unwrap();
        let delta0 = d.faces_within(&x0, r0);
        for &f in delta0.iter().step_by(3) {
            let xf = d.face_points()[f];
            for r in [0.02, 0.04] {
                if dist(&xf, &x0) + r > r0 {
                    continue;
                }
                let delta = d.faces_within(&xf, r);
                let v = far.mass(&delta) / far.mass(&delta0) / near.mass(&delta);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo, hi)
}

#[test]
fn change_of_pole_is_comparable_uniformly() {
    let (a, b) = (change_of_pole_spread(65), change_of_pole_spread(129));
    assert!(a.0 > 0.0 && b.0 > 0.0);
    let (sa, sb) = (a.1 / a.0, b.1 / b.0);
    assert!(sb <= 2.0 * sa, "{a:?} vs {b:?}");
}

#[test]
fn corkscrew_pole_sees_its_ball() {
    // Bourgain: ω^{X_Δ}(Δ) ≥ c with one c over the sweep, stable under refinement.
    let mut infima = Vec::new();
    for n in [65usize, 129] {
        let d = domain(Shape::KochPrefractal { depth: 2 }, n);
        let op = Operator::new(d.clone(), CoefficientField::identity(&d)).unwrap();
        let mut inf = f64::INFINITY;
        for (face, r) in ball_sweep(&d).into_iter().step_by(7) {
            let x = d.face_points()[face];
            let Ok(ck) = d.corkscrew(&x, r) else { continue };
            if let Ok(m) = op.elliptic_measure(ck.cell) {
                inf = inf.min(m.mass(&d.faces_within(&x, r)));
            }
        }
        infima.push(inf);
    }
    assert!(infima[0] > 0.0 && infima[1] >= 0.5 * infima[0], "{infima:?}");
}
