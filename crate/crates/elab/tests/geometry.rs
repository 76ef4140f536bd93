use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elab::domain::{dist, GridDomain, Shape};
use elab::dyadic::DyadicGrid;
use elab::regions::Setting;
use elab::whitney::Whitney;

fn shapes_2d() -> Vec<Shape> {
    vec![
        Shape::Square,
        Shape::Disk,
        Shape::LipschitzGraph { slope: 1.5 },
        Shape::KochPrefractal { depth: 1 },
        Shape::KochPrefractal { depth: 2 },
        Shape::Slit,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn distance_is_nearest_face_within_one_spacing(slope in 0.0f64..2.0, coarse in any::<bool>()) {
        let n = if coarse { 17 } else { 33 };
        let d = GridDomain::build(&Shape::LipschitzGraph { slope }, n).unwrap();
        for u in 0..d.n_cells() {
            let p = d.cell_point(u);
            let nearest = d.face_points().iter().map(|f| dist(f, &p)).fold(f64::INFINITY, f64::min);
            prop_assert!((d.delta(u) - nearest).abs() <= d.h, "cell {} δ {} nearest {}", u, d.delta(u), nearest);
        }
    }

    #[test]
    fn dump_roundtrip_preserves_every_domain(k in 0usize..6, n in 9usize..40) {
        let shape = shapes_2d()[k].clone();
        if let Ok(d) = GridDomain::build(&shape, n) {
            let e = GridDomain::from_dump(&d.to_dump()).unwrap();
            prop_assert_eq!(d.interior_mask(), e.interior_mask());
            prop_assert_eq!(d.face_points(), e.face_points());
            prop_assert_eq!(d.deltas(), e.deltas());
        }
    }

    #[test]
    fn dyadic_grid_is_exact_on_lipschitz_graphs(slope in 0.0f64..2.5) {
        let d = GridDomain::build(&Shape::LipschitzGraph { slope }, 65).unwrap();
        let g = DyadicGrid::from_domain(&d, None).unwrap();
        let r = g.verify().unwrap();
        prop_assert!(r.generations >= 5);
        prop_assert!(r.child_bound <= g.child_bound);
    }
}

#[test]
fn dyadic_grid_properties_on_every_planar_shape() {
    for shape in shapes_2d() {
        let d = GridDomain::build(&shape, 65).unwrap();
        let g = DyadicGrid::from_domain(&d, None).unwrap();
        let r = g.verify().unwrap_or_else(|e| panic!("{}: {e}", shape.name()));
        assert_eq!(g.roots().len(), 1, "{}", shape.name());
        // The child bound is one constant for every generation.
        for k in g.k_min..g.k_max {
            assert!(g.generation(k).iter().all(|c| c.children.len() <= r.child_bound));
        }
    }
}

#[test]
fn thin_strip_mass_shrinks_with_the_strip() {
    let d = GridDomain::build(&Shape::KochPrefractal { depth: 2 }, 129).unwrap();
    let g = DyadicGrid::from_domain(&d, None).unwrap();
    let sigma: Vec<f64> = d.faces().iter().map(|f| f.sigma).collect();
    for q in 0..g.len() {
        let taus = [0.4, 0.25, 0.1, 0.05, 0.01, 1e-4];
        let masses: Vec<f64> = taus.iter().map(|&t| g.thin_boundary_mass(q, t, &sigma).unwrap()).collect();
        assert!(masses.windows(2).all(|w| w[1] <= w[0]), "cube {q}: {masses:?}");
    }
    // The strip at the smallest ratio is empty on all but the finest cubes.
    let coarse: f64 = (0..g.len())
        .filter(|&q| g.cube(q).length >= 8.0 * d.h)
        .map(|q| g.thin_boundary_mass(q, 1e-4, &sigma).unwrap())
        .sum();
    assert_eq!(coarse, 0.0);
}

#[test]
fn corkscrew_ratio_is_stable_under_refinement() {
    let coarse = GridDomain::build(&Shape::Disk, 65).unwrap();
    let fine = GridDomain::build(&Shape::Disk, 129).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..40 {
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let x = [0.5 + 0.45 * t.cos(), 0.5 + 0.45 * t.sin(), 0.0];
        let r = rng.random_range(0.1..0.4);
        let a = coarse.corkscrew(&x, r).unwrap().c0;
        let b = fine.corkscrew(&x, r).unwrap().c0;
        assert!((a - b).abs() <= 2.0 * coarse.h / r, "x {x:?} r {r}: {a} vs {b}");
    }
}

#[test]
fn harnack_chains_share_one_constant() {
    let mut worst = Vec::new();
    for n in [33usize, 65] {
        let d = GridDomain::build(&Shape::KochPrefractal { depth: 2 }, n).unwrap();
        let g = DyadicGrid::from_domain(&d, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c1 = 0.0f64;
        for _ in 0..30 {
            let pick = |rng: &mut ChaCha8Rng| {
                let q = rng.random_range(0..g.len());
                d.corkscrew(&g.center_point(q), g.cube(q).length).unwrap().cell
            };
            let (x, y) = (pick(&mut rng), pick(&mut rng));
            let chain = d.harnack_chain(x, y).unwrap();
            for (c, r) in &chain.balls {
                assert!(d.boundary_distance(c) >= *r, "ball leaves the domain");
            }
            c1 = c1.max(chain.len() as f64 / elab::domain::HarnackChain::log_budget(chain.pi));
        }
        worst.push(c1);
    }
    assert!(worst[1] <= 2.0 * worst[0], "chain constants {worst:?}");
}

#[test]
fn whitney_bounds_cover_and_overlap_on_every_planar_shape() {
    for shape in shapes_2d() {
        let d = GridDomain::build(&shape, 65).unwrap();
        let w = Whitney::build(&d).unwrap();
        let r = w.verify(&d).unwrap_or_else(|e| panic!("{}: {e}", shape.name()));
        assert!(r.max_star_overlap <= 12, "{}", shape.name());
        assert!(4.0 <= r.min_lower_ratio && r.max_upper_ratio <= 40.0);
    }
}

#[test]
fn whitney_works_in_three_dimensions() {
    let d = GridDomain::build(&Shape::Ball, 49).unwrap();
    let w = Whitney::build(&d).unwrap();
    let r = w.verify(&d).unwrap();
    assert!(r.cubes > 0 && r.resolved > 0, "{r:?}");
}

#[test]
fn carleson_boxes_are_sandwiched_and_nested() {
    for shape in [Shape::Disk, Shape::KochPrefractal { depth: 2 }, Shape::LipschitzGraph { slope: 1.0 }] {
        let s = Setting::build(&shape, 65).unwrap();
        let r = s.sandwich();
        assert!(r.kappa1 > 0.0 && r.kappa0.is_finite(), "{}: {r:?}", shape.name());
        assert!(r.nested, "{}", shape.name());
        assert!(r.kappa0 >= r.kappa0_measured);
    }
}

#[test]
fn sawtooth_regions_stay_inside_the_carleson_box() {
    let s = Setting::build(&Shape::Square, 65).unwrap();
    let q0 = s.grid.roots().start;
    let family: Vec<usize> = s.descendants_at(q0, 2).unwrap().into_iter().step_by(3).collect();
    let saw = s.sawtooth(&family, q0).unwrap();
    let tbox = s.t_mask(q0, 1);
    assert!(!saw.is_empty());
    assert!(saw.cells().all(|u| tbox[u]));
    // Removing stopping cubes can only shrink the region.
    let full = s.sawtooth(&[], q0).unwrap();
    assert!(saw.len() <= full.len());
}
