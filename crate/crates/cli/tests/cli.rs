//! End-to-end tests of the `fw` command line: output, exit codes, report
//! files, and the frozen RNG dump vectors.

use std::process::{Command, Output};

const FW_BIN: &str = env!("CARGO_BIN_EXE_fw");

fn fw(args: &[&str]) -> Output {
    Command::new(FW_BIN).args(args).output().expect("fw runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn run_prints_the_value_and_exits_zero() {
    let out = fw(&[
        "run",
        "--plan",
        "sequential",
        "--expr",
        "(+ x 1)",
        "--env",
        "x=41",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_of(&out).trim(), "42");
}

#[test]
fn run_relays_output_before_the_value() {
    let out = fw(&[
        "run",
        "--plan",
        "process_pool:2",
        "--expr",
        "(begin (print \"Hello world\") (print \"Bye bye\") (sum x))",
        "--env",
        "x=[1,2,3]",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_of(&out), "Hello world\nBye bye\n6\n");
}

#[test]
fn eval_errors_exit_one() {
    let out = fw(&[
        "run",
        "--plan",
        "process_pool:2",
        "--expr",
        "(lookup \"k\")",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("object 'k' not found"), "{err}");
}

#[test]
fn infrastructure_errors_exit_two() {
    let out = fw(&[
        "run",
        "--plan",
        "tcp_cluster:127.0.0.1:9",
        "--expr",
        "(+ 1 1)",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_three() {
    let out = fw(&["run", "--plan", "warp_drive:9", "--expr", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let out = fw(&["run", "--plan", "sequential", "--expr", "(+ 1"]);
    assert_eq!(out.status.code(), Some(3));
    let out = fw(&["run", "--plan", "sequential", "--expr", "1", "--env", "novalue"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn env_values_parse_as_literals() {
    let out = fw(&[
        "run",
        "--expr",
        "(log x)",
        "--env",
        "x=\"24\"",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr)
        .contains("non-numeric argument to mathematical function"));

    let out = fw(&["run", "--expr", "(sum v)", "--env", "v=[1,2,3,4]"]);
    assert_eq!(stdout_of(&out).trim(), "10");

    let out = fw(&["run", "--expr", "(+ r 0.5)", "--env", "r=1.25"]);
    assert_eq!(stdout_of(&out).trim(), "1.75");
}

/// Frozen reference vectors: the first uniforms from the all-ones state and
/// from that state jumped ahead one stream.
#[test]
fn rng_dump_matches_the_frozen_oracle() {
    let out = fw(&[
        "rng", "dump", "--state", "1,1,1,1,1,1", "--stream", "0", "--n", "5",
    ]);
    let lines: Vec<String> = stdout_of(&out).lines().map(str::to_string).collect();
    assert_eq!(
        lines,
        vec![
            "0.0003395772237870988",
            "0.5558807159827996",
            "0.014204660652803588",
            "0.08812267131393675",
            "0.4411733820485099",
        ]
    );
    let out = fw(&[
        "rng", "dump", "--state", "1,1,1,1,1,1", "--stream", "1", "--n", "3",
    ]);
    let lines: Vec<String> = stdout_of(&out).lines().map(str::to_string).collect();
    assert_eq!(
        lines,
        vec![
            "0.16644822611036503",
            "0.823817202903791",
            "0.7544544718522882",
        ]
    );
}

#[test]
fn rng_dump_is_identical_for_a_fixed_seed() {
    let a = stdout_of(&fw(&["rng", "dump", "--seed", "7", "--stream", "3", "--n", "8"]));
    let b = stdout_of(&fw(&["rng", "dump", "--seed", "7", "--stream", "3", "--n", "8"]));
    assert_eq!(a, b);
    let c = stdout_of(&fw(&["rng", "dump", "--seed", "7", "--stream", "4", "--n", "8"]));
    assert_ne!(a, c);
}

#[test]
fn demo_map_prints_results_and_timing() {
    let out = fw(&["demo", "map", "--plan", "process_pool:2", "--n", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    assert!(text.starts_with("[1, 4, 9, 16, 25]"), "{text}");
    assert!(text.contains("elapsed_ms="), "{text}");
}

#[test]
fn demo_map_seeded_is_plan_invariant() {
    let a = stdout_of(&fw(&["demo", "map", "--n", "6", "--seed", "9"]));
    let b = stdout_of(&fw(&[
        "demo", "map", "--plan", "process_pool:2", "--n", "6", "--seed", "9", "--chunks", "3",
    ]));
    assert_eq!(a.lines().next(), b.lines().next());
}

#[test]
fn conformance_cli_writes_a_report_and_exits_zero() {
    let report_path = std::env::temp_dir().join(format!("fw-report-{}.json", std::process::id()));
    let out = fw(&[
        "conformance",
        "run",
        "--plan",
        "process_pool:2",
        "--filter",
        "relay",
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout_of(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(json["passed"], true);
    assert!(json["results"].as_array().unwrap().len() >= 3);
    let _ = std::fs::remove_file(&report_path);
}

#[test]
fn run_output_is_plan_invariant() {
    let args = |plan: &str| {
        vec![
            "run".to_string(),
            "--plan".to_string(),
            plan.to_string(),
            "--expr".to_string(),
            "(begin (print \"x\") (message \"m\") (sort (vec 3.5 1.25 2.75)))".to_string(),
        ]
    };
    let seq = fw(&args("sequential").iter().map(String::as_str).collect::<Vec<_>>());
    let pool = fw(&args("process_pool:2").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(stdout_of(&seq), stdout_of(&pool));
    assert_eq!(seq.status.code(), pool.status.code());
}
