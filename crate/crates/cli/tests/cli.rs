use std::path::Path;
use std::process::{Command, Output};

use mmlab::bounds::BoundReport;
use mmlab::lemmas::SuiteReport;
use mmlab::prob::{Channel, Coupling, Metric};
use mmlab::registry::{bound_strategies, BoundQuery, MembershipOutcome};
use mmlab::search::SearchOptions;
use mmlab::sim::SimulationReport;

fn mmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmlab"))
        .args(args)
        .env_remove("MMLAB_SEED")
        .env_remove("MMLAB_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().into()
}

#[test]
fn capacity_prints_four_decimals() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "w.json", r#"{"rows": [[0.97, 0.03, 0], [0.1, 0.1, 0.8]]}"#);
    let o = mmlab(&["capacity", "--channel", &w]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "0.7133\n");
    assert_eq!(stdout(&mmlab(&["capacity", "--instance", "bsc:0.1"])), "0.5310\n");
}

#[test]
fn malformed_files_name_file_row_and_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"rows": [[0.5, 0.5], [0.7, 0.2]]}"#);
    let o = mmlab(&["capacity", "--channel", &bad]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("bad.json") && msg.contains("row 1") && msg.contains("sum"), "{msg}");

    let ragged = write(dir.path(), "ragged.json", r#"{"rows": [[0.5, 0.5], [1.0]]}"#);
    let msg = stderr(&mmlab(&["capacity", "--channel", &ragged]));
    assert!(msg.contains("ragged.json") && msg.contains("row 1") && msg.contains("entries"), "{msg}");

    let neg = write(dir.path(), "neg.json", r#"{"rows": [[1.2, -0.2]]}"#);
    let msg = stderr(&mmlab(&["capacity", "--channel", &neg]));
    assert!(msg.contains("neg.json") && msg.contains("row 0"), "{msg}");

    let syntax = write(dir.path(), "syntax.json", r#"{"rows": [[1.0, 0.0]"#);
    let o = mmlab(&["capacity", "--channel", &syntax]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("syntax.json"));

    let wrong_key = write(dir.path(), "m.json", r#"{"rows": [[0.0]]}"#);
    let msg = stderr(&mmlab(&["bound", "--mode", "prior", "--instance", "example", "--metric", &wrong_key]));
    assert!(msg.contains("m.json") && msg.contains("values"), "{msg}");
}

#[test]
fn shape_mismatch_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let q = write(dir.path(), "q.json", r#"{"values": [[0.0, 1.0], [1.0, 0.0]]}"#);
    let o = mmlab(&["bound", "--mode", "prior", "--instance", "example", "--metric", &q]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dimension mismatch"));
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        &["bound", "--mode", "nope", "--instance", "example"][..],
        &["check-maximal", "--set", "nope", "--instance", "example"],
        &["lemma-test", "--which", "nope"],
        &["capacity", "--instance", "nope"],
        &["capacity"],
        &["frobnicate"],
        &["bound", "--instance", "example"],
    ] {
        assert_eq!(mmlab(args).status.code(), Some(2), "{:?}", args);
    }
}

#[test]
fn spec_aliases_select_the_same_strategies() {
    let a = stdout(&mmlab(&["bound", "--mode", "corollary1", "--instance", "example"]));
    let b = stdout(&mmlab(&["bound", "--mode", "auxiliary-capacity", "--instance", "example"]));
    assert_eq!(a, "0.4999\n");
    assert_eq!(a, b);
    let c = stdout(&mmlab(&["--json", "lemma-test", "--which", "appendixC"]));
    let r: SuiteReport = serde_json::from_str(&c).unwrap();
    assert_eq!(r.suite, "conditioning");
}

#[test]
fn membership_text_and_exclusions() {
    let o = mmlab(&["check-maximal", "--set", "mmax", "--instance", "example", "--px", "uniform"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("member slack="));
    let o = mmlab(&["check-maximal", "--set", "mmax-prior", "--instance", "example"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "not-member\nviolation x=1 y=2 yhat=1 mass=0.1133\n");
    // Sets that need an input distribution say so.
    let o = mmlab(&["check-maximal", "--set", "theta-star", "--instance", "example"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("input distribution"));
}

#[test]
fn json_reports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bound.json");
    let o = mmlab(&["bound", "--mode", "prior", "--instance", "example", "--grid-step", "0.1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let parsed: BoundReport = serde_json::from_str(&text).unwrap();
    let again: BoundReport = serde_json::from_str(&serde_json::to_string(&parsed).unwrap()).unwrap();
    assert_eq!(parsed, again);

    // The file carries exactly what the library computes in-process.
    let w = Channel::new(vec![vec![0.97, 0.03, 0.0], vec![0.1, 0.1, 0.8]]).unwrap();
    let q = Metric::new(vec![vec![0.0; 3], vec![0.0, 0.5f64.ln(), 1.36f64.ln()]]).unwrap();
    let direct = bound_strategies()
        .get("prior")
        .unwrap()
        .compute(&BoundQuery {
            w: &w,
            q: &q,
            coupling: None::<&Coupling>,
            grid_step: 0.1,
            tol_marginal: 1e-2,
            tol: 1e-8,
            search: SearchOptions::default(),
        })
        .unwrap();
    assert_eq!(parsed, direct);

    let o = mmlab(&["--json", "check-maximal", "--set", "vmax", "--instance", "example", "--px", "uniform"]);
    let m: MembershipOutcome = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(m.set, "vmax");
    let back: MembershipOutcome = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(m, back);
}

#[test]
fn seed_comes_from_the_environment() {
    let run = |seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mmlab"));
        c.args(["--json", "simulate", "--instance", "example", "--n", "8", "--messages", "4", "--trials", "300"]);
        c.env_remove("MMLAB_SEED");
        if let Some(s) = seed {
            c.env("MMLAB_SEED", s);
        }
        let o = c.output().unwrap();
        assert!(o.status.success());
        serde_json::from_slice::<SimulationReport>(&o.stdout).unwrap()
    };
    let (a, b, c) = (run(None), run(Some("0")), run(Some("5")));
    assert_eq!(a.seed, 0);
    assert_eq!(a, b);
    assert_eq!(c.seed, 5);
    assert_ne!(a.errors, c.errors);

    let o = Command::new(env!("CARGO_BIN_EXE_mmlab"))
        .args(["--json", "simulate", "--instance", "example", "--n", "8", "--messages", "4", "--trials", "300"])
        .env("MMLAB_SEED", "5")
        .env("MMLAB_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(serde_json::from_slice::<SimulationReport>(&o.stdout).unwrap(), c);
}

#[test]
fn exponent_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    let o = mmlab(&[
        "exponent", "--instance", "example", "--steps", "3", "--starts", "4", "--r-min", "0.5",
        "--csv", csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rate_bits,exponent_bits,certified");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], "0.500000,0.000000,true");
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f.len(), 3);
        assert_eq!(f[0].split('.').nth(1).unwrap().len(), 6);
    }
}

#[test]
fn log_of_metrics_accept_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "w.json", r#"{"rows": [[0.97, 0.03, 0], [0.1, 0.1, 0.8]]}"#);
    let lik = write(dir.path(), "lik.json", r#"{"values": [[0.97, 0.03, 0], [0.1, 0.1, 0.8]]}"#);
    let o = mmlab(&["check-maximal", "--set", "mmax-prior", "--channel", &w, "--metric-log-of", &lik, "--coupling",
        &write(dir.path(), "c.json", r#"{"per_input": [[[0.97,0,0],[0,0.03,0],[0,0,0]], [[0.1,0,0],[0,0.1,0],[0,0,0.8]]]}"#)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "member\n");
    let neg = write(dir.path(), "neg.json", r#"{"values": [[1, -1], [0, 1]]}"#);
    let o = mmlab(&["bound", "--mode", "prior", "--instance", "bsc:0.1", "--metric-log-of", &neg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nonnegative"));
}

#[test]
fn self_check_suites_pass() {
    for which in ["appendixB", "appendixC", "decomposition", "minimax"] {
        let o = mmlab(&["lemma-test", "--which", which]);
        assert!(o.status.success(), "{which}: {}", stdout(&o));
        assert!(stdout(&o).lines().all(|l| l.starts_with("PASS ")));
    }
}
