//! The `specforge` binary end to end.

use std::process::{Command, Output};

fn specforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["launch"][..],
        &["bench", "mmul", "--no-such-flag"],
        &["explore", "quicksort"],
        &["dump-ir", "mmul", "--config", "B"],
        &[
            "bench",
            "mmul",
            "--config",
            "Q=1",
            "--duration",
            "2",
            "--deterministic",
        ],
        &["adapt", "batch", "--watch-threshold", "1.5"],
    ] {
        let out = specforge(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?} printed nothing on stderr");
    }
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("rules.txt");
    std::fs::write(&bad, "10.0.0.1/8 3\n").unwrap();
    let out = specforge(&[
        "bench",
        "lpm",
        "--rules",
        bad.to_str().unwrap(),
        "--deterministic",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let missing = dir.path().join("none.txt");
    assert_eq!(
        specforge(&["explore", "mmul", "--phases", missing.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn dump_ir_is_stable() {
    let a = specforge(&["dump-ir", "mmul", "--config", "B=8", "--passes", "default"]);
    let b = specforge(&["dump-ir", "mmul", "--config", "B=8", "--passes", "default"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8(a.stdout).unwrap().starts_with("(module"));
}

#[test]
fn bench_with_rules_file_and_phases() {
    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("r.txt");
    std::fs::write(
        &rules,
        "# table\n0.0.0.0/0 0\n10.0.0.0/8 1\n10.1.0.0/16 2\n192.168.1.0/24 3\n",
    )
    .unwrap();
    let phases = dir.path().join("p.txt");
    std::fs::write(&phases, "duration=300 s=1.5 universe=4\n").unwrap();
    let csv = dir.path().join("out.csv");
    let out = specforge(&[
        "bench",
        "lpm",
        "--rules",
        rules.to_str().unwrap(),
        "--phases",
        phases.to_str().unwrap(),
        "--config",
        "fp=on",
        "--sample-every",
        "1",
        "--deterministic",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with(
        "time_ms,handler,config_id,config,phase,event,metric,invocations,ops_executed,guard_failures\n"
    ));
    assert!(text.contains(",instrument-start,"));
    assert!(dir.path().join("profiles.csv").exists());
}

#[test]
fn adapt_is_deterministic_and_re_explores_once() {
    let run = || specforge(&["adapt", "batch", "--seed", "7", "--deterministic"]);
    let (a, b) = (run(), run());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.matches(",re-explore-trigger,").count(), 1);
    assert_eq!(text.matches(",explore-start,").count(), 2);
}

#[test]
fn live_mode_runs_to_completion() {
    let out = specforge(&["explore", "batch", "--duration", "4000"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches(",explore-best,").count(), 1);
}
