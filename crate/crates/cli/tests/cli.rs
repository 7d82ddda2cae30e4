use std::io::Write;
use std::process::Command;

use hmm_analytic_cli::{run_args, RunOutcome, EXIT_MALFORMED, EXIT_NEGATIVE, EXIT_OK};
use serde_json::{json, Value};
use tempfile::NamedTempFile;

const BSC: &str = r#"{"bsc": {"pi": [[0.7, 0.3], [0.4, 0.6]], "eps": 0.1}}"#;

fn model_file(text: &str) -> NamedTempFile {
    let mut f = NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

fn triangular(c: f64, d: f64) -> String {
    json!({
        "example": "7.2",
        "params": {"e": 0.2, "a": 0.5, "b": 0.3, "f": 1.0 - c, "c": c, "g": 1.0 - d, "d": d, "eps": 0.05}
    })
    .to_string()
}

fn cli(args: &[&str]) -> RunOutcome {
    run_args(std::iter::once("hmm-analytic").chain(args.iter().copied()))
}

fn json_of(out: &RunOutcome) -> Value {
    serde_json::from_str(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", out.stdout))
}

#[test]
fn check_positive_bsc() {
    let f = model_file(BSC);
    let out = cli(&["check", "--model", f.path().to_str().unwrap()]);
    assert_eq!(out.exit_code, EXIT_OK, "{}", out.stderr);
    let v = json_of(&out);
    assert_eq!(v["theorem_1_1"], json!({"cond1": true, "cond2": true}));
    assert_eq!(v["theorem_6_1"]["cond3"], json!(true));
}

#[test]
fn entropy_of_iid_source_is_marginal() {
    let model = r#"{"delta": [[0.2, 0.3, 0.5], [0.2, 0.3, 0.5], [0.2, 0.3, 0.5]], "phi": [0, 0, 1]}"#;
    let out = cli(&["entropy", "--model", model, "--tol", "1e-9"]);
    assert_eq!(out.exit_code, EXIT_OK, "{}", out.stderr);
    let v = json_of(&out);
    let h = -(0.5f64 * 0.5f64.ln()) * 2.0;
    assert!((v["value"].as_f64().unwrap() - h).abs() < 1e-12);
    assert_eq!(v["n"], json!(0));
    assert_eq!(v["method"], json!("enumeration"));

    let bits = json_of(&cli(&["entropy", "--model", model, "--bits"]));
    assert!((bits["value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn entropy_tolerance_not_reached_exits_2() {
    let f = model_file(BSC);
    let out = cli(&["entropy", "--model", f.path().to_str().unwrap(), "--tol", "1e-30", "--max-n", "3"]);
    assert_eq!(out.exit_code, EXIT_NEGATIVE);
    assert_eq!(json_of(&out)["n"], json!(3));
    assert!(out.stderr.contains("not reached"));
}

#[test]
fn unambiguous_verdicts() {
    let good = model_file(&triangular(0.4, 0.3));
    let out = cli(&["unambiguous", "--model", good.path().to_str().unwrap()]);
    assert_eq!(out.exit_code, EXIT_OK, "{}", out.stderr);
    assert_eq!(json_of(&out)["analytic"], json!(true));

    let bad = model_file(&triangular(0.35, 0.35));
    let out = cli(&["unambiguous", "--model", bad.path().to_str().unwrap()]);
    assert_eq!(out.exit_code, EXIT_NEGATIVE);
    let v = json_of(&out);
    assert_eq!(v["analytic"], json!(false));
    assert_eq!(v["condition2"], json!(false));

    let out = cli(&["unambiguous", "--model", good.path().to_str().unwrap(), "--report", "entropy"]);
    let v = json_of(&out);
    assert!((v["value"].as_f64().unwrap() - 0.5973729278053502).abs() < 1e-8);
    assert_eq!(v["method"], json!("series"));
}

#[test]
fn malformed_input_exits_1() {
    let out = cli(&["entropy", "--model", r#"{"delta": [[0.5, 0.6], [0.5, 0.5]], "phi": [0, 1]}"#]);
    assert_eq!(out.exit_code, EXIT_MALFORMED);
    assert!(out.stdout.is_empty());
    assert!(out.stderr.contains("row 0"));

    assert_eq!(cli(&["entropy", "--model", "/does/not/exist.json"]).exit_code, EXIT_MALFORMED);
    assert_eq!(cli(&["radius", "--pi", "0.7,0.3"]).exit_code, EXIT_MALFORMED);
    assert_eq!(cli(&["bounds"]).exit_code, EXIT_MALFORMED);
    assert_eq!(cli(&["frobnicate"]).exit_code, EXIT_MALFORMED);
    let not_binary = r#"{"delta": [[0.2, 0.3, 0.5], [0.3, 0.3, 0.4], [0.5, 0.2, 0.3]], "phi": [0, 1, 2]}"#;
    assert_eq!(cli(&["unambiguous", "--model", not_binary]).exit_code, EXIT_MALFORMED);
}

#[test]
fn radius_feasible_and_infeasible() {
    let out = cli(&["radius", "--pi", "0.7,0.3,0.4,0.6"]);
    assert_eq!(out.exit_code, EXIT_OK, "{}", out.stderr);
    let v = json_of(&out);
    assert_eq!(v["feasible"], json!(true));
    assert!(v["r"].as_f64().unwrap() > 0.0);
    assert_eq!(v["slacks"].as_array().unwrap().len(), 10);

    let out = cli(&["radius", "--pi", "0.7,0.3,0.4,0.6", "--rho-grid", "0.5", "--R-grid", "10"]);
    assert_eq!(out.exit_code, EXIT_NEGATIVE);
    assert_eq!(json_of(&out)["feasible"], json!(false));
}

#[test]
fn blackwell_is_reproducible() {
    let f = model_file(BSC);
    let path = f.path().to_str().unwrap();
    let args = ["blackwell", "--model", path, "--samples", "2000", "--seed", "7"];
    let (a, b) = (cli(&args), cli(&args));
    assert_eq!(a.exit_code, EXIT_OK);
    assert_eq!(a.stdout, b.stdout);
    let other = cli(&["blackwell", "--model", path, "--samples", "2000", "--seed", "8"]);
    assert_ne!(a.stdout, other.stdout);
    assert_eq!(json_of(&a)["seed"], json!(7));
}

#[test]
fn floats_carry_seventeen_digits() {
    let f = model_file(BSC);
    let out = cli(&["bounds", "--model", f.path().to_str().unwrap(), "--max-n", "2"]);
    let v = json_of(&out);
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for key in ["n", "upper", "lower", "gap"] {
        assert!(rows[0].get(key).is_some(), "missing {key}");
    }
    assert!(out.stdout.contains("6.8660227721941980e-1"), "{}", out.stdout);
}

#[test]
fn csv_and_pretty_formats() {
    let f = model_file(BSC);
    let path = f.path().to_str().unwrap();
    let out = cli(&["--format", "csv", "bounds", "--model", path, "--max-n", "1"]);
    let mut reader = csv::Reader::from_reader(out.stdout.as_bytes());
    assert_eq!(reader.headers().unwrap(), vec!["n", "upper", "lower", "gap"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][0], "1");

    let out = cli(&["check", "--model", path, "--format", "csv"]);
    assert!(out.stdout.starts_with("theorem,condition,holds\n"));
    assert!(out.stdout.contains("theorem_1_1,cond2,true"));

    let out = cli(&["entropy", "--model", path, "--format", "pretty"]);
    assert!(out.stdout.lines().any(|l| l.starts_with("value: 0.66814")), "{}", out.stdout);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_hmm-analytic");
    let f = model_file(BSC);
    let ok = Command::new(bin).args(["check", "--model"]).arg(f.path()).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["theorem_1_1"]["cond1"], json!(true));

    let bad = Command::new(bin).args(["entropy", "--model", "{not json"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(!bad.stderr.is_empty());

    let neg = Command::new(bin).args(["radius", "--pi", "0.7,0.3,0.4,0.6", "--rho-grid", "0.5", "--R-grid", "10"]).output().unwrap();
    assert_eq!(neg.status.code(), Some(2));

    let help = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}
