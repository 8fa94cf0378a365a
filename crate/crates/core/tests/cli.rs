use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use conic_core::scenario::{list_examples, CatalogEntry};

fn conic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conic")).args(args).env_remove("CONIC_OUT_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const STRICT: &str = r#"
schema = 1
name = "strict"
seed = 5

[metrics.plane]
kind = "blowup-euclidean"
n = 2

[[tasks]]
task = "distance-batch"
metric = "plane"
exact = false
oracle = "euclidean"
tolerance = 1e-9
pairs = { kind = "random", count = 4, r = [0.2, 0.9] }
grid = { levels = 6, samples = 6, r_min = 0.05 }
output = "d.csv"
"#;

#[test]
fn list_examples_json_round_trips() {
    let o = conic(&["list-examples", "--json"]);
    assert!(o.status.success());
    let parsed: Vec<CatalogEntry> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(parsed, list_examples().unwrap());
    assert!(parsed.len() >= 7);
    assert!(parsed.iter().all(|e| !e.description.is_empty() && !e.anchor.is_empty()));
}

#[test]
fn list_examples_text_names_every_scenario() {
    let o = conic(&["list-examples"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for e in list_examples().unwrap() {
        assert!(text.contains(&e.name), "missing {}", e.name);
    }
}

#[test]
fn bundled_run_writes_the_printed_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = conic(&["run", "log-spiral", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let paths: Vec<String> = stdout(&o).lines().map(str::to_owned).collect();
    assert!(!paths.is_empty());
    for p in &paths {
        let text = fs::read_to_string(p).unwrap();
        assert!(text.lines().count() > 1, "{p} is empty");
    }
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_conic"))
        .args(["run", "log-spiral"])
        .env("CONIC_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(fs::read_dir(dir.path()).unwrap().count() > 0);
}

#[test]
fn scenario_file_with_violations_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("strict.toml");
    fs::write(&file, STRICT).unwrap();
    let out = dir.path().join("out");
    let o = conic(&["run", file.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("violation"));
    assert!(out.join("d.csv").exists());
}

#[test]
fn seed_override_changes_random_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("strict.toml");
    fs::write(&file, STRICT).unwrap();
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        conic(&["run", file.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--seed", seed]);
        fs::read_to_string(out.join("d.csv")).unwrap()
    };
    let (a, b, c) = (run("1", "a"), run("1", "b"), run("2", "c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn unknown_scenario_exits_two() {
    let o = conic(&["run", "no-such-scenario", "--out-dir", "unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no-such-scenario"));
    assert!(!Path::new("unused").exists());
}

#[test]
fn dangling_reference_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    fs::write(&file, STRICT.replace("metric = \"plane\"", "metric = \"missing\"")).unwrap();
    let o = conic(&["run", file.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing"));
}

#[test]
fn empty_task_list_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("empty.toml");
    fs::write(&file, "schema = 1\nname = \"empty\"\n").unwrap();
    let out = dir.path().join("out");
    let o = conic(&["run", file.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).is_empty());
    assert!(!out.exists() || fs::read_dir(&out).unwrap().count() == 0);
}
