use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use elab::coefficients::CoefficientField;
use elab::domain::Shape;
use elab::regions::Setting;
use elab::sfnt::*;
use elab::solver::Operator;

struct Fixture {
    setting: Setting,
    op: Operator,
    /// A first-generation cube below the root, so `Q₀` has a complement.
    q0: usize,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let setting = Setting::build(&Shape::Square, 65).unwrap();
        let d = setting.domain.clone();
        let op = Operator::new(d.clone(), CoefficientField::random(&d, 3.0, 5).unwrap()).unwrap();
        let root = setting.grid.roots().start;
        let q0 = setting.descendants_at(root, 1).unwrap()[0];
        Fixture { setting, op, q0 }
    })
}

fn solution(seed: u64) -> Vec<f64> {
    let f = fixture();
    let data = random_boundary_data(&f.setting.domain, &mut ChaCha8Rng::seed_from_u64(seed));
    f.op.solve_dirichlet_unchecked(&data).unwrap()
}

fn in_q0(f: &Fixture) -> Vec<bool> {
    let mut m = vec![false; f.setting.domain.n_faces()];
    for &x in &f.setting.grid.cube(f.q0).members {
        m[x] = true;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn truncated_square_function_grows_to_the_full_cone(seed in any::<u64>()) {
        let f = fixture();
        let u = solution(seed);
        let g = &f.setting.grid;
        let full = square_function(&f.setting, &u, f.q0, None).unwrap();
        let max_depth = (g.k_max - g.cube(f.q0).generation) as u32;
        let mut prev = vec![0.0; full.len()];
        for k in 0..=max_depth {
            let cur = square_function(&f.setting, &u, f.q0, Some(k)).unwrap();
            prop_assert!(cur.iter().zip(&prev).all(|(c, p)| c >= p));
            prev = cur;
        }
        prop_assert_eq!(prev, full);
    }

    #[test]
    fn localized_functions_vanish_off_the_cube(seed in any::<u64>()) {
        let f = fixture();
        let u = solution(seed);
        let inside = in_q0(f);
        let s = square_function(&f.setting, &u, f.q0, None).unwrap();
        let n = nontangential_max(&f.setting, &u, f.q0).unwrap();
        for x in 0..inside.len() {
            if !inside[x] {
                prop_assert_eq!(s[x], 0.0);
                prop_assert_eq!(n[x], 0.0);
                prop_assert!(cone_chain(&f.setting, x, f.q0, None).is_empty());
            } else {
                prop_assert!(n[x] > 0.0);
            }
        }
    }

    #[test]
    fn square_and_maximal_functions_are_homogeneous(seed in any::<u64>(), c in -4.0f64..4.0) {
        let f = fixture();
        let u = solution(seed);
        let cu: Vec<f64> = u.iter().map(|v| c * v).collect();
        let (s, sc) = (square_function(&f.setting, &u, f.q0, None).unwrap(), square_function(&f.setting, &cu, f.q0, None).unwrap());
        let (n, nc) = (nontangential_max(&f.setting, &u, f.q0).unwrap(), nontangential_max(&f.setting, &cu, f.q0).unwrap());
        for x in 0..s.len() {
            prop_assert!((sc[x] - c.abs() * s[x]).abs() <= 1e-10 * (1.0 + s[x]));
            prop_assert!((nc[x] - c.abs() * n[x]).abs() <= 1e-12 * (1.0 + n[x]));
        }
    }
}

#[test]
fn cone_chains_descend_through_children() {
    let f = fixture();
    let g = &f.setting.grid;
    for &x in &g.cube(f.q0).members {
        let chain = cone_chain(&f.setting, x, f.q0, None);
        assert_eq!(chain[0], f.q0);
        assert_eq!(chain.len(), (g.k_max - g.cube(f.q0).generation) as usize + 1);
        for w in chain.windows(2) {
            assert!(g.cube(w[0]).children.contains(&w[1]));
            assert!(g.cube(w[1]).members.contains(&x));
        }
        // The double-star cone contains the single-star cone.
        let one = cone_cells(&f.setting, x, f.q0, 1, None);
        let two = cone_cells(&f.setting, x, f.q0, 2, None);
        assert!(one.iter().all(|c| two.binary_search(c).is_ok()));
    }
}

#[test]
fn constants_have_no_square_function() {
    let f = fixture();
    let u = f.op.solve_dirichlet(&vec![0.7; f.setting.domain.n_faces()]).unwrap();
    let s = square_function(&f.setting, &u, f.q0, None).unwrap();
    assert!(s.iter().all(|&v| v <= 1e-9), "{}", s.iter().fold(0.0f64, |m, &v| m.max(v)));
    let n = nontangential_max(&f.setting, &u, f.q0).unwrap();
    for &x in &f.setting.grid.cube(f.q0).members {
        assert!((n[x] - 0.7).abs() <= 1e-9);
    }
}

#[test]
fn sawtooth_measure_redistributes_patch_mass() {
    let f = fixture();
    let family: Vec<usize> = f.setting.descendants_at(f.q0, 2).unwrap().into_iter().step_by(2).collect();
    let nu = djk_nu(&f.setting, &f.op, &family, f.q0).unwrap();
    let g = &f.setting.grid;
    let inside = in_q0(f);
    let mut covered = vec![false; inside.len()];
    for (i, &q) in family.iter().enumerate() {
        let members = &g.cube(q).members;
        let mass: f64 = members.iter().map(|&x| nu.nu[x]).sum();
        assert!((mass - nu.patch_mass[i]).abs() <= 1e-12, "cube {q}: {mass} vs {}", nu.patch_mass[i]);
        // Inside a stopping cube ν is a multiple of ω.
        let w: f64 = members.iter().map(|&x| nu.omega[x]).sum();
        for &x in members {
            covered[x] = true;
            assert!((nu.nu[x] - nu.omega[x] / w * nu.patch_mass[i]).abs() <= 1e-15);
        }
    }
    for x in 0..inside.len() {
        if !inside[x] {
            assert_eq!(nu.nu[x], 0.0);
        } else if !covered[x] {
            assert_eq!(nu.nu[x], nu.omega_star[x]);
        }
        assert!(nu.nu[x] >= 0.0);
    }
    let total: f64 = nu.nu.iter().sum();
    assert!(total > 0.0 && total <= 1.0 + 1e-9, "ν(Q₀) = {total}");
}
