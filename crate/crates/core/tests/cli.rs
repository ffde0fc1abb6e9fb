use std::path::Path;
use std::process::{Command, Output};

use contract_net::trace::read_trace;
use contract_net::RunConfig;

fn cnp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cnp"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn run_writes_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = cnp(&["run", "--out", out_dir]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = read(&dir.path().join("trace_updated_acl-f.txt"));
    assert!(trace.starts_with("# cnp-trace variant=updated dialect=acl-f tasks=5 changes=2"));
    let metrics = read(&dir.path().join("metrics.csv"));
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("updated,acl-f,5,2,0,"));
}

#[test]
fn reruns_are_byte_identical() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = cnp(&[
            "run",
            "--variant",
            "conventional",
            "--dialect",
            "acl-k",
            "--seed",
            "3",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
    }
    let name = "trace_conventional_acl-k.txt";
    assert_eq!(
        read(&dirs[0].path().join(name)),
        read(&dirs[1].path().join(name))
    );
}

#[test]
fn header_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnp(&[
        "run",
        "--seed",
        "11",
        "--latency",
        "2:1",
        "--report-interval",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = read(&dir.path().join("trace_updated_acl-f.txt"));
    let header = read_trace(&text).unwrap().header.unwrap();
    let cfg = RunConfig::from_header(&header).unwrap();
    assert_eq!(cfg.seed, 11);
    let again = contract_net::run(&cfg).unwrap();
    let rendered =
        contract_net::trace::write_trace(Some(&cfg.header_line()), &again.trace, cfg.dialect)
            .unwrap();
    assert_eq!(rendered, text);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for args in [
        vec!["run", "--changes", "7"],
        vec!["run", "--grid", "ten"],
        vec!["run", "--variant", "hybrid"],
        vec!["run", "--frobnicate"],
        vec!["compare", "--retry-budget", "-1"],
    ] {
        let mut args = args;
        args.extend(["--out", out_dir]);
        if args.contains(&"--frobnicate") {
            args.truncate(2);
        }
        let out = cnp(&args);
        assert_eq!(code(&out), 2, "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "tasks = 3\ncolour = blue\n").unwrap();
    let out = cnp(&["run", "--config", bad.to_str().unwrap(), "--out", out_dir]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "# experiment\nseed = 7\ntasks = 3\nchanges = 1\n").unwrap();
    let out = cnp(&[
        "run",
        "--config",
        conf.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = read(&dir.path().join("trace_updated_acl-f.txt"));
    assert!(text.starts_with("# cnp-trace variant=updated dialect=acl-f tasks=3 changes=1 contractors=4 grid=10x10 seed=9 "));
}

#[test]
fn timeout_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnp(&[
        "run",
        "--contractors",
        "0",
        "--retry-budget",
        "unlimited",
        "--max-ticks",
        "50",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("task-01"));
}

#[test]
fn compare_writes_the_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnp(&["compare", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    for v in ["updated", "conventional"] {
        for d in ["acl-f", "acl-k"] {
            assert!(dir.path().join(format!("trace_{v}_{d}.txt")).exists());
        }
    }
    let table = read(&dir.path().join("comparison.csv"));
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 6);
    for r in &rows[..4] {
        match r[0] {
            "updated" => assert_eq!((r[3], r[4]), ("2", "0")),
            "conventional" => assert_eq!((r[3], r[4]), ("0", "2")),
            other => panic!("row label {other}"),
        }
    }
    for r in &rows[4..] {
        assert_eq!(r[0], "updated-vs-conventional");
        assert_eq!(&r[7..10], ["0", "2", "-2"]);
        assert!(r[10].parse::<i64>().unwrap() < 0);
    }
    assert_eq!(read(&dir.path().join("metrics.csv")).lines().count(), 5);
}

#[test]
fn compare_without_changes_has_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnp(&[
        "compare",
        "--changes",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let table = read(&dir.path().join("comparison.csv"));
    let deltas: Vec<&str> = table
        .lines()
        .skip(5)
        .flat_map(|l| l.split(',').skip(7))
        .collect();
    assert_eq!(deltas.len(), 10);
    assert!(deltas.iter().all(|d| *d == "0"));
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&cnp(&["run", "--out", dir.path().to_str().unwrap()])),
        0
    );
    let trace = dir.path().join("trace_updated_acl-f.txt");
    let path = trace.to_str().unwrap();

    let out = cnp(&["validate", path]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("0 violations (updated acl-f)"));

    let out = cnp(&["validate", path, "--variant", "conventional"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out)
        .lines()
        .any(|l| l.starts_with("line ") && l.contains("variant")));

    assert_eq!(
        code(&cnp(&[
            "validate",
            dir.path().join("missing.txt").to_str().unwrap()
        ])),
        2
    );

    let broken = dir.path().join("broken.txt");
    std::fs::write(&broken, read(&trace) + "not|a|trace\n").unwrap();
    assert_eq!(code(&cnp(&["validate", broken.to_str().unwrap()])), 2);

    let headless = dir.path().join("headless.txt");
    let body: String = read(&trace)
        .lines()
        .skip(1)
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&headless, body).unwrap();
    assert_eq!(code(&cnp(&["validate", headless.to_str().unwrap()])), 2);
    assert_eq!(
        code(&cnp(&[
            "validate",
            headless.to_str().unwrap(),
            "--variant",
            "updated"
        ])),
        0
    );
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&cnp(&["--help"])), 0);
    assert_eq!(code(&cnp(&["--version"])), 0);
    assert_eq!(code(&cnp(&[])), 2);
}
