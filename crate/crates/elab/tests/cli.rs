use std::path::Path;
use std::process::{Command, Output};

fn elab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elab")).args(args).arg("--out").arg(out).output().expect("elab runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const BLEND: &str = r#"
name = "blend_small"
seed = 2
[domain]
shape = "square"
resolutions = [33]
[operator.base]
kind = "identity"
[operator.perturbed]
kind = "random"
lambda = 4.0
seed = 11
[sweep]
kind = "blend"
values = [0.0, 0.5, 1.0]
[functionals]
min_radius_cells = 2.0
sn_samples = 0
cme = false
"#;

#[test]
fn grid_succeeds_and_writes_json() {
    let tmp = tempfile::tempdir().unwrap();
    let o = elab(&["grid", "--resolution", "33"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_dir(tmp.path()).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "json")));
}

#[test]
fn experiment_outputs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BLEND);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = elab(&["experiment", "--config", &cfg], dir);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["summary.json", "table.csv", "plot.py"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn violated_invariant_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{BLEND}[checks]\njump_threshold = 0.0\n"));
    let o = elab(&["experiment", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("first violated invariant"));
}

#[test]
fn bad_input_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &BLEND.replace("sn_samples = 0", "sn_samples = 0\nbogus = 1"));
    assert_eq!(elab(&["experiment", "--config", &cfg], tmp.path()).status.code(), Some(2));
    assert_eq!(elab(&["experiment"], tmp.path()).status.code(), Some(2));
    assert_eq!(elab(&["grid", "--profile", "torus"], tmp.path()).status.code(), Some(2));
    assert_eq!(elab(&["measure", "--resolution", "33", "--pole", "0.5"], tmp.path()).status.code(), Some(2));
}
