use elab::experiments::{run_scenario, Scenario};

const EPSILON: &str = r#"
name = "small_bump"
seed = 4

[domain]
shape = "square"
resolutions = [65]

[operator.base]
kind = "identity"

[operator.perturbed]
kind = "bump"
eps = 1.0
direction = [1.0, 0.3, 0.3, -0.5]
center = [0.5, 0.3]
radius = 0.25

[operator.perturbed.base]
kind = "identity"

[sweep]
kind = "epsilon"
values = [0.05, 0.1, 0.2]

[functionals]
min_radius_cells = 2.0
sn_samples = 2
"#;

#[test]
fn scenario_output_depends_only_on_the_config() {
    let sc = Scenario::from_toml(EPSILON).unwrap();
    let a = run_scenario(&sc).unwrap();
    let b = run_scenario(&sc).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.table(), b.table());
    assert_eq!(a.rows.len(), 3);
    assert!(a.passed(), "{:?}", a.first_failure());
}

#[test]
fn too_coarse_sweeps_fail_with_a_reason() {
    let sc = Scenario::from_toml(&EPSILON.replace("[65]", "[33]")).unwrap();
    let a = run_scenario(&sc).unwrap();
    let f = a.first_failure().expect("no ball pair fits at 33 points");
    assert!(f.detail.contains("no admissible ball pair"), "{f:?}");
}

#[test]
fn sweep_order_does_not_change_rows() {
    let sc = Scenario::from_toml(EPSILON).unwrap();
    let shuffled = Scenario::from_toml(&EPSILON.replace("[0.05, 0.1, 0.2]", "[0.2, 0.05, 0.1]")).unwrap();
    let (a, b) = (run_scenario(&sc).unwrap(), run_scenario(&shuffled).unwrap());
    assert_eq!(serde_json::to_string(&a.rows).unwrap(), serde_json::to_string(&b.rows).unwrap());
}

#[test]
fn identity_scenario_has_trivial_functionals() {
    let text = r#"
name = "identity"
[domain]
shape = "disk"
resolutions = [33]
[operator.base]
kind = "identity"
[operator.perturbed]
kind = "identity"
[functionals]
min_radius_cells = 2.0
sn_samples = 0
"#;
    let r = run_scenario(&Scenario::from_toml(text).unwrap()).unwrap();
    assert!(r.passed(), "{:?}", r.first_failure());
    assert!(r.assertions.iter().any(|a| a.name.starts_with("identity_functionals_vanish")));
}

#[test]
fn malformed_scenarios_are_rejected() {
    let unknown = EPSILON.replace("sn_samples = 2", "sn_samples = 2\nsamples = 3");
    assert!(Scenario::from_toml(&unknown).is_err());
    assert!(Scenario::from_toml(&EPSILON.replace("[65]", "[]")).is_err());
    assert!(Scenario::from_toml(&EPSILON.replace("[65]", "[4]")).is_err());
    assert!(Scenario::from_toml(&EPSILON.replace("\"square\"", "\"torus\"")).is_err());
    assert!(Scenario::from_toml(&EPSILON.replace("[0.05, 0.1, 0.2]", "[0.05]")).is_err());
    assert!(Scenario::from_toml(&EPSILON.replace("sn_samples = 2", "rh_p = [1.0]")).is_err());
}

#[test]
fn shipped_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = std::fs::read_to_string(&path).unwrap();
            Scenario::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
