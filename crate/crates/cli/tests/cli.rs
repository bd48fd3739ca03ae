use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causalwit"))
        .args(args)
        .arg("--artifacts")
        .arg(dir.join("artifacts"))
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("bad report ({e}): {}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

#[test]
fn reproduce_ocb() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["reproduce", "ocb"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    let rr = &r["results"]["random_robustness"];
    assert!((rr["value"].as_f64().unwrap() - (std::f64::consts::SQRT_2 - 1.0)).abs() < 1e-6);
    assert_eq!(rr["pass"], Value::Bool(true));
    assert_eq!(r["tolerances"]["sdp_tol"].as_f64(), Some(1e-8));
}

#[test]
fn repeated_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(dir.path(), &["reproduce", "ocb"]);
    let b = run(dir.path(), &["reproduce", "ocb"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let a = run(dir.path(), &["decompose", "ocb", "--samples", "1000", "--seed", "5"]);
    let b = run(dir.path(), &["decompose", "ocb", "--samples", "1000", "--seed", "5"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn check_sep_white_noise() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["check-sep", "white-noise"]);
    assert!(out.status.success());
    let r = report(&out);
    assert_eq!(r["results"]["verdict"], "separable");
    let arts = r["artifacts"].as_object().unwrap();
    assert!(!arts.is_empty());
    for p in arts.values() {
        assert!(Path::new(p.as_str().unwrap()).is_file());
    }
}

#[test]
fn check_sep_ocb_writes_verifiable_witness() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["check-sep", "ocb"]);
    assert!(out.status.success());
    let r = report(&out);
    assert_eq!(r["results"]["verdict"], "not_separable");
    let path = r["artifacts"]["witness"].as_str().unwrap().to_string();
    let v = run(dir.path(), &["witness-verify", &path]);
    assert!(v.status.success(), "{}", String::from_utf8_lossy(&v.stderr));
    assert_eq!(report(&v)["results"]["accepted"], Value::Bool(true));
}

#[test]
fn report_goes_to_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["game", "ocb", "--out", "rep.json"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep.json")).unwrap()).unwrap();
    let p = r["results"]["p_succ"]["value"].as_f64().unwrap();
    assert!((p - (2.0 + std::f64::consts::SQRT_2) / 4.0).abs() < 1e-12);
}

#[test]
fn correlations_from_random_instruments() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["correlations", "--instruments", "random", "--seed", "3"]);
    assert!(out.status.success());
    let r = report(&out);
    assert_eq!(r["results"]["verdict"]["causal"], Value::Bool(true));
}

#[test]
fn invalid_process_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["check-sep", "white-noise"]);
    let r = report(&out);
    let comp = r["artifacts"].as_object().unwrap().values().next().unwrap().as_str().unwrap().to_string();
    let mut j: Value = serde_json::from_str(&std::fs::read_to_string(&comp).unwrap()).unwrap();
    // Flip the sign of every matrix entry.
    fn negate(v: &mut Value) {
        match v {
            Value::Number(n) => *v = Value::from(-n.as_f64().unwrap()),
            Value::Array(a) => a.iter_mut().for_each(negate),
            _ => {}
        }
    }
    negate(&mut j["matrix"]);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, j.to_string()).unwrap();
    let out = run(dir.path(), &["robustness", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["reproduce", "nothing"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["check-sep", "no-such-process"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["game", "ocb", "--sdp-tol", "-1"]).status.code(), Some(2));
}
