use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pqcm-lab"));
    c.env_remove("PQCM_LAB_TOL");
    c
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str], scenario: &Path) -> Output {
    bin()
        .args(["run", "--scenario"])
        .arg(scenario)
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn golden_feasibility_report() {
    let out = run(&[], &golden("feasibility.json"));
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["task"], "feasibility");
    assert_eq!(v["outputs"]["feasible"], true);
    assert!(v["outputs"]["min_eigenvalue"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["inputs_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn golden_four_state_report() {
    let v = json(&run(&[], &golden("four-state.json")));
    assert_eq!(v["outputs"]["gram_rank"], 2);
    assert!(v["outputs"]["p_max"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn missing_copies_exits_one_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(
        tmp.path(),
        "bad.json",
        r#"{"task": "max-p", "states": [[[1, 0], [0, 0]]]}"#,
    );
    let out = run(&[], &p);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`M`"));
    assert!(out.stdout.is_empty());
}

#[test]
fn malformed_json_reports_position() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "bad.json", "{\n  \"task\": \"max-p\",\n  \"M\": 2,,\n}");
    let out = run(&[], &p);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn infeasible_explicit_p_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let body =
        format!(r#"{{"task": "feasibility", "M": 2, "p": [0.7, 0.7], "states": [[[1,0],[0,0]], [[{h},0],[{h},0]]]}}"#);
    let out = run(&[], &write(tmp.path(), "f.json", &body));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["outputs"]["feasible"], false);

    let body = format!(
        r#"{{"task": "build-machine", "M": 2, "p": [0.7, 0.7], "states": [[[1,0],[0,0]], [[{h},0],[{h},0]]]}}"#
    );
    let out = run(&[], &write(tmp.path(), "b.json", &body));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn csv_output_and_out_file() {
    let tmp = tempfile::tempdir().unwrap();
    let target = tmp.path().join("report.csv");
    let out = run(
        &["--format", "csv", "--out", target.to_str().unwrap()],
        &golden("build-machine.json"),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = fs::read_to_string(target).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("name,pass,value,tolerance"));
    assert!(lines.all(|l| l.split(',').nth(1) == Some("true")));
}

#[test]
fn unsupported_format_is_rejected() {
    let out = run(&["--format", "xml"], &golden("max-p.json"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tolerance_from_environment_and_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "bad_env.json", r#"{"task": "four-state", "theta": 0.5}"#);
    let out = bin()
        .args(["run", "--scenario"])
        .arg(&p)
        .env("PQCM_LAB_TOL", "abc")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin()
        .args(["run", "--tol", "1e-9", "--scenario"])
        .arg(&p)
        .env("PQCM_LAB_TOL", "abc")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn seed_flag_changes_only_seeded_tasks() {
    let a = run(&["--seed", "1"], &golden("epr-run.json"));
    let b = run(&["--seed", "2"], &golden("epr-run.json"));
    assert_eq!(json(&a)["outputs"]["seed"], 1);
    assert_eq!(json(&b)["outputs"]["seed"], 2);
    let c = run(&["--seed", "1"], &golden("max-p.json"));
    let d = run(&["--seed", "2"], &golden("max-p.json"));
    assert_eq!(c.stdout, d.stdout);
}

#[test]
fn batch_directory_writes_one_report_per_file() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("in");
    fs::create_dir(&src).unwrap();
    fs::copy(golden("max-p.json"), src.join("a.json")).unwrap();
    write(&src, "b.json", r#"{"task": "max-p", "states": [[[1, 0], [0, 0]]]}"#);
    write(&src, "notes.txt", "ignored");
    let dest = tmp.path().join("out");
    let out = bin()
        .args(["run", "--jobs", "2", "--scenario"])
        .arg(&src)
        .arg("--out")
        .arg(&dest)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let mut names: Vec<String> = fs::read_dir(&dest)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, vec!["a.json"]);
}
