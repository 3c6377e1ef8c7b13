//! End-to-end checks of the command-line interface: output formats,
//! round-tripping through files, and exit codes.

use std::io::Write;
use std::process::{Command, Output};

fn hqas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hqas"))
        .args(args)
        .output()
        .expect("failed to launch binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn psi_prints_exact_rationals() {
    let out = hqas(&["psi", "--r", "2", "--j", "1"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "-1/4");

    let out = hqas(&["psi", "--r", "3", "--a", "3"]);
    assert_eq!(stdout(&out).trim(), "3");

    let out = hqas(&["psi", "--r", "3", "--a", "1,2", "--brute"]);
    assert_eq!(stdout(&out).trim(), "-3/2");
}

#[test]
fn compute_json_round_trips() {
    let out = hqas(&[
        "compute", "--rs", "2,3", "--chi-max", "2", "--q-max", "5", "--format", "json",
    ]);
    assert!(out.status.success());
    let rows: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rows = rows.as_array().unwrap();
    assert!(!rows.is_empty());
    // A known value: the genus-zero three-point function at levels 1,1,1.
    let cubic = rows
        .iter()
        .find(|e| e["g"] == "0" && e["idx"] == serde_json::json!([1, 1, 1]))
        .unwrap();
    assert_eq!(cubic["value"], "-1");

    // Writing to a file and re-reading gives byte-identical content.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.json");
    let out2 = hqas(&[
        "compute", "--rs", "2,3", "--chi-max", "2", "--q-max", "5", "--format", "json",
        "--out", path.to_str().unwrap(),
    ]);
    assert!(out2.status.success());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), stdout(&out));
}

#[test]
fn compute_csv_has_header_and_values() {
    let out = hqas(&[
        "compute", "--rs", "3,2", "--chi-max", "2", "--q-max", "4", "--format", "csv",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "g,n,idx,value");
    // The genus-one one-point function at level 2.
    assert!(text.lines().any(|l| l == "1,1,1:2,-1/3"), "missing row in:\n{text}");
}

#[test]
fn curve_files_reproduce_builtin_structures() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.json");
    let mut f = std::fs::File::create(&path).unwrap();
    write!(f, r#"{{"components": [{{"r": 3, "tau": {{"4": "-1"}}}}]}}"#).unwrap();
    drop(f);

    let from_curve = hqas(&[
        "compute", "--curve", path.to_str().unwrap(), "--chi-max", "2", "--q-max", "4",
    ]);
    let from_builtin = hqas(&["compute", "--rs", "3,4", "--chi-max", "2", "--q-max", "4"]);
    assert!(from_curve.status.success());
    assert_eq!(stdout(&from_curve), stdout(&from_builtin));
}

#[test]
fn exit_codes_distinguish_failures_from_errors() {
    // A clean verification exits 0.
    let ok = hqas(&["check", "symmetry", "--rs", "2,3", "--chi-max", "2"]);
    assert_eq!(ok.status.code(), Some(0), "{ok:?}");

    // Inadmissible data is rejected up front: exit 2.
    let rejected = hqas(&["check", "symmetry", "--rs", "7,5", "--chi-max", "1"]);
    assert_eq!(rejected.status.code(), Some(2));
    let msg = String::from_utf8(rejected.stderr).unwrap();
    assert!(msg.contains("not admissible"), "stderr: {msg}");

    // Forcing the build surfaces genuine violations: exit 1.
    let failing = hqas(&[
        "check", "symmetry", "--rs", "7,5", "--force", "--chi-max", "1", "--q-max", "5",
    ]);
    assert_eq!(failing.status.code(), Some(1));
    assert!(!stdout(&failing).trim().is_empty());

    // Malformed input is a usage error: exit 2.
    let bad = hqas(&["compute", "--rs", "banana"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn annihilation_check_passes_on_crosscapped_cycle() {
    let out = hqas(&[
        "check", "annihilate", "--cycle", "3,3,1/2", "--chi-max", "1", "--q-max", "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
}
