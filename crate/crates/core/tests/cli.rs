use std::path::PathBuf;
use std::process::{Command, Output};

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn data(name: &str) -> &'static str {
    Box::leak(data_path(name).into_os_string().into_string().unwrap().into_boxed_str())
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_switchstab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("JSON on stdout")
}

#[test]
fn check_reference_certificate_passes() {
    let o = run(&["check", "--config", data("example1.json"), "--certificate", data("example1_certificate.json")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["condzeta"]["method"], "geometric");
    assert_eq!(v["condp"]["residuals"].as_array().unwrap().len(), 4);
    assert!(v["rate"].as_f64().unwrap() < 0.0);
}

#[test]
fn force_general_agrees_with_closed_form() {
    let args = ["check", "--config", data("example1.json"), "--certificate", data("example1_certificate.json")];
    let closed = json(&run(&args))["condzeta"]["lhs"].as_f64().unwrap();
    let mut forced = args.to_vec();
    forced.push("--force-general");
    let v = json(&run(&forced));
    assert_eq!(v["condzeta"]["method"], "general");
    assert!((v["condzeta"]["lhs"].as_f64().unwrap() - closed).abs() < 1e-8);
}

#[test]
fn unit_zeta_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("ones.json");
    let mut c: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data_path("example1_certificate.json")).unwrap()).unwrap();
    c["zeta"] = serde_json::json!([[1.0, 1.0], [1.0, 1.0]]);
    std::fs::write(&cert, c.to_string()).unwrap();
    let o = run(&["check", "--config", data("example1.json"), "--certificate", cert.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&o)["condzeta"]["verdict"], "LHS = 0, not < 0");
}

#[test]
fn bad_row_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let text = std::fs::read_to_string(data_path("example1.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["chain"]["P"][1] = serde_json::json!([0.3, 0.6]);
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = run(&["check", "--config", cfg.to_str().unwrap(), "--certificate", data("example1_certificate.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("chain.P[2]"));

    std::fs::write(&cfg, "{ \"system\": ").unwrap();
    let o = run(&["check", "--config", cfg.to_str().unwrap(), "--certificate", data("example1_certificate.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn bounded_gap_check_on_example_two() {
    let o = run(&[
        "check",
        "--config",
        data("example2.json"),
        "--certificate",
        data("example2_certificate.json"),
        "--theorem2",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert_eq!(v["theorem2"]["pass"], true);
    assert_eq!(v["theorem2"]["tau_bar"], 5);
}

#[test]
fn synthesize_then_check_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("cert.json");
    let o = run(&["synthesize", "--config", data("example1.json"), "--out", cert.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let c: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    assert!(c["condzeta_lhs"].as_f64().unwrap() < 0.0);
    assert_eq!(c["K"].as_array().unwrap().len(), 2);
    let o = run(&["check", "--config", data("example1.json"), "--certificate", cert.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn simulate_is_deterministic_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--config",
        data("example1.json"),
        "--gains",
        data("example1_gains.json"),
        "--trials",
        "3",
        "--horizon",
        "50",
        "--seed",
        "7",
        "--out",
        dir.path().to_str().unwrap(),
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["trials"], 3);
    let csv = std::fs::read_to_string(dir.path().join("trial_0000.csv")).unwrap();
    assert_eq!(csv.lines().count(), 52);
    assert!(csv.starts_with("k,x_1,x_2,u_1,r,sigma,observed"));
}

#[test]
fn sweep_rows_and_empty_range() {
    let base = ["sweep", "--config", data("example1.json"), "--gains", data("example1_gains.json"), "--param", "theta"];
    let mut args = base.to_vec();
    args.extend(["--from", "0.3", "--to", "0.5", "--step", "0.1"]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "parameter,feasible,condzeta_lhs,converged_fraction");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.contains(",true,")));

    let mut empty = base.to_vec();
    empty.extend(["--from", "0.5", "--to", "0.3", "--step", "0.1"]);
    let o = run(&empty);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported"));

    let mut wrong = base.to_vec();
    wrong[6] = "period";
    wrong.extend(["--from", "1", "--to", "3", "--step", "1"]);
    assert_eq!(run(&wrong).status.code(), Some(2));
}

#[test]
fn enumerate_lists_sequences() {
    let o = run(&["enumerate", "--config", data("example2.json"), "--max-len", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sequence,length,lambda,phi"));
    // lengths 2..=5 over three modes with all transitions allowed
    assert_eq!(lines.count(), 9 + 27 + 81 + 243);
}

#[test]
fn reproduce_two_passes_and_unknown_example_is_rejected() {
    let o = run(&["reproduce", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
    let o = run(&["reproduce", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown example 3"));
}
