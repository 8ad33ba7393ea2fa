use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_mixhmm");

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().expect("spawn mixhmm");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_fit_identify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("series.csv");
    let model = dir.path().join("model.txt");

    let (code, _, err) = run(&[
        "simulate",
        "--scenario",
        "scenario-a",
        "--n",
        "400",
        "--seed",
        "7",
        "--out",
        path_str(&csv),
    ]);
    assert_eq!(code, 0, "simulate failed: {err}");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,y,state\n"));
    assert_eq!(text.lines().count(), 401);

    let (code, stdout, err) = run(&[
        "fit",
        "--data",
        path_str(&csv),
        "--k",
        "3",
        "--mode",
        "gauss",
        "--seed",
        "1",
        "--out",
        path_str(&model),
    ]);
    assert_eq!(code, 0, "fit failed: {err}");
    assert!(stdout.contains("log-likelihood"), "fit output: {stdout}");
    assert!(model.exists());

    let (code, stdout, err) = run(&["identify", "--model", path_str(&model)]);
    assert_eq!(code, 0, "identify failed: {err}\n{stdout}");
    assert!(stdout.contains("Kruskal"), "identify output: {stdout}");
    assert!(stdout.contains("recovery error"), "identify output: {stdout}");
}

#[test]
fn gof_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("series.csv");
    let report = dir.path().join("gof.json");
    let config = dir.path().join("fit.conf");
    std::fs::write(&config, "restarts=2\nseed=5\n").unwrap();

    let (code, _, err) = run(&[
        "simulate",
        "--scenario",
        "scenario-a",
        "--n",
        "150",
        "--seed",
        "3",
        "--out",
        path_str(&csv),
    ]);
    assert_eq!(code, 0, "simulate failed: {err}");

    let (code, stdout, err) = run(&[
        "gof",
        "--data",
        path_str(&csv),
        "--k",
        "3",
        "--alt",
        "two-comp",
        "--B",
        "100",
        "--config",
        path_str(&config),
        "--out",
        path_str(&report),
    ]);
    assert_eq!(code, 0, "gof failed: {err}\n{stdout}");
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("\"statistic\""));
    assert!(text.contains("\"decisions\""));
}

#[test]
fn counterexample_runs_without_a_model_file() {
    let (code, stdout, err) = run(&["identify", "--counterexample", "delta=0.3 beta=0.6"]);
    assert_eq!(code, 0, "counterexample failed: {err}\n{stdout}");
    assert!(stdout.contains("p=0.461538"), "output: {stdout}");
}

#[test]
fn validation_failures_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");

    // Unknown scenario.
    let (code, _, _) = run(&[
        "simulate",
        "--scenario",
        "scenario-z",
        "--n",
        "10",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code, 2);

    // Missing data file.
    let (code, _, _) = run(&[
        "fit",
        "--data",
        path_str(&dir.path().join("absent.csv")),
        "--k",
        "2",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code, 2);

    // Malformed counterexample parameters.
    let (code, _, _) = run(&["identify", "--counterexample", "delta=2.0 beta=0.6"]);
    assert_eq!(code, 2);

    // B below the bootstrap minimum.
    std::fs::write(&out, "t,y\n1,0.5\n2,0.7\n3,-0.2\n4,0.1\n").unwrap();
    let report = dir.path().join("gof.json");
    let (code, _, _) = run(&[
        "gof",
        "--data",
        path_str(&out),
        "--k",
        "1",
        "--B",
        "50",
        "--out",
        path_str(&report),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn reproduce_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, err) = run(&[
        "reproduce",
        "--scenario",
        "scenario-b",
        "--n",
        "120",
        "--reps",
        "10",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code, 0, "reproduce failed: {err}\n{stdout}");
    let rel = std::fs::read_to_string(dir.path().join("relative_errors.csv")).unwrap();
    assert!(rel.contains("scenario=scenario-b"));
    assert!(rel.contains("nonpar"));
    let trans = std::fs::read_to_string(dir.path().join("transition_errors.csv")).unwrap();
    assert!(trans.contains("Gauss"));
}
