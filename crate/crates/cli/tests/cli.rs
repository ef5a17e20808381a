use std::path::Path;
use std::process::{Command, Output};

fn lerrw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lerrw"))
        .args(args)
        .env_remove("RW_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn verify_oracle_passes() {
    let out = lerrw(&["verify-oracle", "--max-n", "4", "--max-len", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn moments_table_passes() {
    let out = lerrw(&["moments"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&lerrw(&["experiment", "--no-such-flag"])), 2);
    assert_eq!(code(&lerrw(&["frobnicate"])), 2);
}

#[test]
fn missing_spec_is_a_usage_error() {
    let out = lerrw(&["experiment", "--spec", "/definitely/not/here.toml"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn bad_override_is_a_usage_error() {
    let out = lerrw(&["experiment", "--scenario", "potential-clt", "--alpha", "1.5"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn help_and_version_exit_zero() {
    let help = lerrw(&["--help"]);
    assert_eq!(code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["gen-tree", "simulate", "verify-oracle", "moments", "experiment", "report"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
    let version = lerrw(&["--version"]);
    assert_eq!(code(&version), 0);
    assert!(String::from_utf8_lossy(&version.stdout).contains(env!("CARGO_PKG_VERSION")));
}

fn run_walk(dir: &Path, threads: &str) -> Vec<u8> {
    let out = dir.join(format!("walk-{threads}"));
    let status = lerrw(&[
        "experiment",
        "--scenario",
        "displacement-critical",
        "--horizon",
        "20000",
        "--replicas",
        "8",
        "--seed",
        "11",
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ]);
    // the shortened run may miss its bands; only exit codes 0 and 1 are acceptable
    assert!(matches!(code(&status), 0 | 1), "{}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out.with_extension("csv")).unwrap()
}

#[test]
fn same_seed_gives_identical_csv_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let one = run_walk(dir.path(), "1");
    let three = run_walk(dir.path(), "3");
    assert!(!one.is_empty());
    assert_eq!(one, three);
}

#[test]
fn tree_simulate_and_report_chain() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("tree.txt");
    let out = lerrw(&["gen-tree", "--n", "200", "--seed", "3", "--out", tree.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let sim = dir.path().join("sim.json");
    let out = lerrw(&[
        "simulate",
        "--tree",
        tree.to_str().unwrap(),
        "--alpha",
        "0.5",
        "--delta",
        "1",
        "--horizon",
        "5000",
        "--out",
        sim.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&sim).unwrap()).unwrap();
    assert!(json.is_object());

    let res = dir.path().join("pem");
    let out = lerrw(&["experiment", "--scenario", "pemantle-equivalence", "--set", "oracle.max_n=3", "--out", res.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = lerrw(&["report", res.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(!out.stdout.is_empty());
}
