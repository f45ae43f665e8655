use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[geometry]
center = [0.5, 0.5]
semi_axes = [0.12, 0.15]
target_h = 0.1

[material]
lambda = 1.0
mu = 0.1

[bloch]
n_modes = 6
refine = 0
element_order = "p1"

[macro]
refine = 0
element_order = "p1"

[zhikov.z_grid]
points = 120

[dispersion]
theta_points = 6

[steklov]
refine = 0
element_order = "p1"
"#;

fn hicon(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hicon"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HICON_CACHE")
        .output()
        .expect("hicon runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn pipeline_runs_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    let first = hicon(&["pipeline", "--config", cfg, "--out", "a"], tmp.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let listed = stdout(&first);
    for name in [
        "mesh.json",
        "bloch_eigs.csv",
        "amacro.json",
        "band_gaps.csv",
        "steklov_rate.json",
    ] {
        assert!(listed.contains(name), "{name} missing from {listed}");
    }
    assert!(tmp.path().join(".hicon-cache").is_dir());

    let second = hicon(&["pipeline", "--config", cfg, "--out", "b"], tmp.path());
    assert!(second.status.success(), "{}", stderr(&second));
    for entry in std::fs::read_dir(tmp.path().join("a")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(tmp.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
    }

    let amacro: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("a/amacro.json")).unwrap()).unwrap();
    assert!(amacro["margin"].as_f64().unwrap() > 0.0);
}

#[test]
fn touching_ellipse_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("semi_axes = [0.12, 0.15]", "semi_axes = [0.5, 0.15]");
    let cfg = write_config(tmp.path(), "bad.toml", &bad);
    let o = hicon(&["mesh", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("touches the cell boundary"), "{}", stderr(&o));
    assert!(!tmp.path().join("out/mesh.json").exists());
}

#[test]
fn unknown_keys_and_missing_files_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "typo.toml",
        &SMALL.replace("[material]", "[material]\nlamda = 2.0"),
    );
    let o = hicon(&["bloch", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = hicon(&["bloch", "--config", "does-not-exist.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_reports_each_check() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let o = hicon(&["validate", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let table = stdout(&o);
    assert!(table.lines().filter(|l| l.starts_with("PASS")).count() >= 10, "{table}");
    assert!(table.contains("0 failed"), "{table}");

    let bad = write_config(tmp.path(), "neg.toml", &SMALL.replace("lambda = 1.0", "lambda = -1.0"));
    let o = hicon(&["validate", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let table = stdout(&o);
    assert!(
        table.lines().any(|l| l.starts_with("FAIL") && l.contains("config")),
        "{table}"
    );
}

#[test]
fn mesh_can_be_written_and_reused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    let o = hicon(&["mesh", "--config", cfg, "--mesh-out", "cell.json"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("cell.json").is_file());

    let o = hicon(
        &["bloch", "--config", cfg, "--mesh-in", "cell.json", "--out", "reused"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o2 = hicon(
        &["bloch", "--config", cfg, "--out", "fresh", "--cache", "c2"],
        tmp.path(),
    );
    assert!(o2.status.success(), "{}", stderr(&o2));
    assert_eq!(
        std::fs::read(tmp.path().join("reused/bloch_eigs.csv")).unwrap(),
        std::fs::read(tmp.path().join("fresh/bloch_eigs.csv")).unwrap()
    );

    std::fs::write(tmp.path().join("junk.json"), "{\"vertices\": 3}").unwrap();
    let o = hicon(&["bloch", "--config", cfg, "--mesh-in", "junk.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn refine_override_changes_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    let head = |dir: &str| {
        let text = std::fs::read_to_string(tmp.path().join(dir).join("bloch_eigs.csv")).unwrap();
        text.lines().next().unwrap().to_string()
    };
    assert!(hicon(&["bloch", "--config", cfg, "--out", "l0"], tmp.path())
        .status
        .success());
    assert!(
        hicon(&["bloch", "--config", cfg, "--out", "l1", "--refine", "1"], tmp.path())
            .status
            .success()
    );
    assert!(head("l0").starts_with("# hicon "));
    assert_ne!(head("l0"), head("l1"));
}
