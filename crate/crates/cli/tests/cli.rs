//! Command-line behavior: flag validation, exit codes, output wiring.

use std::path::{Path, PathBuf};
use std::process::Command;

fn sample(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../samples/{name}"))
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_faircc"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn exit_codes_map_outcomes() {
    let cases = [
        ("tell1.fcc", vec![], 0),
        ("threshold_eventual.fcc", vec!["--fair", "crisp"], 0),
        ("threshold.fcc", vec!["--fair", "crisp"], 1),
        ("deadlock.fcc", vec![], 2),
        (
            "carpool.fcc",
            vec!["--fair", "crisp", "--max-steps", "30"],
            3,
        ),
    ];
    for (file, extra, expected) in cases {
        let path = sample(file);
        let mut args = vec!["run", path.to_str().unwrap()];
        args.extend(extra);
        let (code, _, stderr) = run_cli(&args);
        assert_eq!(code, expected, "{file}: {stderr}");
    }
}

#[test]
fn invalid_flag_combinations_exit_64() {
    let tell1 = sample("tell1.fcc");
    let tell1 = tell1.to_str().unwrap();
    let bad: &[&[&str]] = &[
        &["run", tell1, "--choice", "seeded"],
        &["run", tell1, "--seed", "7"],
        &["run", tell1, "--soft-select", "max"],
        &["run", tell1, "--soft-select", "max", "--fair", "crisp"],
        &["run", "/no/such/file.fcc"],
        &["run", tell1, "--mode", "nonsense"],
    ];
    for args in bad {
        let (code, _, stderr) = run_cli(args);
        assert_eq!(code, 64, "{args:?}: {stderr}");
    }
    // Active thresholds cannot run under cc mode.
    let threshold = sample("threshold.fcc");
    let (code, _, _) = run_cli(&["run", threshold.to_str().unwrap(), "--mode", "cc"]);
    assert_eq!(code, 64);
}

#[test]
fn parse_errors_report_location_and_exit_64() {
    let dir = std::env::temp_dir().join("faircc-cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("broken.fcc");
    std::fs::write(
        &path,
        "semiring fuzzy;\ndomain { a };\nvars { x }\ninit success\n",
    )
    .unwrap();
    let (code, _, stderr) = run_cli(&["run", path.to_str().unwrap()]);
    assert_eq!(code, 64);
    assert!(stderr.contains("4:1"), "location in: {stderr}");
}

#[test]
fn report_goes_to_file_when_asked() {
    let dir = std::env::temp_dir().join("faircc-cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    let report_path = dir.join("report.json");
    let _ = std::fs::remove_file(&report_path);
    let tell1 = sample("tell1.fcc");
    let (code, stdout, _) = run_cli(&[
        "run",
        tell1.to_str().unwrap(),
        "--trace",
        "off",
        "--report-file",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.is_empty(), "trace off writes nothing to stdout");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["n_bound"], "0");
}

#[test]
fn report_on_stdout_after_separator() {
    let tell1 = sample("tell1.fcc");
    let (code, stdout, _) =
        run_cli(&["run", tell1.to_str().unwrap(), "--trace", "off", "--report"]);
    assert_eq!(code, 0);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("---"));
    let report: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    // A single agent with no fair group: an empty ledger and bound zero.
    assert_eq!(report["n_bound"], "0");
    assert!(report["agents"].as_object().unwrap().is_empty());
}

#[test]
fn pretty_trace_mentions_rules_and_scores() {
    let carpool = sample("carpool.fcc");
    let (code, stdout, _) = run_cli(&[
        "run",
        carpool.to_str().unwrap(),
        "--fair",
        "crisp",
        "--max-steps",
        "3",
        "--trace",
        "pretty",
    ]);
    assert_eq!(code, 3);
    assert!(stdout.contains("call"), "{stdout}");
    assert!(stdout.contains("scores={0:4, 1:-2, 2:-2}"), "{stdout}");
    assert!(stdout.lines().last().unwrap().starts_with("outcome:"));
}

#[test]
fn sla_run_emits_all_nine_tells() {
    let sla = sample("sla3.fcc");
    let (code, stdout, _) = run_cli(&[
        "run",
        sla.to_str().unwrap(),
        "--mode",
        "scc",
        "--fair",
        "soft",
    ]);
    assert_eq!(code, 0);
    let mut tells = Vec::new();
    for line in stdout.lines() {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        if value["rule"].as_str().is_some_and(|r| r.ends_with("tell")) {
            tells.push(value["constraint"].as_str().unwrap().to_string());
        }
    }
    tells.sort();
    assert_eq!(tells, (1..=9).map(|i| format!("c{i}")).collect::<Vec<_>>());
}
