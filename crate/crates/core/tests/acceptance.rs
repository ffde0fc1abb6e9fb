//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use contract_net::conformance::validate_trace;
use contract_net::engine::plan_experiment;
use contract_net::messaging::dialect_equivalent;
use contract_net::trace::{read_trace, write_trace};
use contract_net::{
    run, run_scenario, Dialect, Performative, ProtocolVariant, RunConfig, RunResult,
};
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn config(pairs: &[(&str, &str)]) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in pairs {
        cfg.set(k, v).unwrap_or_else(|e| panic!("{k}={v}: {e}"));
    }
    cfg
}

fn trace_text(r: &RunResult) -> String {
    write_trace(Some(&r.config.header_line()), &r.trace, r.config.dialect).unwrap()
}

fn run_ok(cfg: &RunConfig) -> Result<RunResult, String> {
    run(cfg).map_err(|e| format!("{}: {e}", cfg.header_line()))
}

fn violations(text: &str) -> Result<usize, String> {
    let t = read_trace(text).map_err(|e| e.to_string())?;
    let cfg = RunConfig::from_header(t.header.as_deref().ok_or("no header")?)
        .map_err(|e| e.to_string())?;
    Ok(validate_trace(&t.entries, cfg.variant, cfg.dialect)
        .violations
        .len())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn headline_shape() -> Outcome {
    let mut slowest = Duration::ZERO;
    for (variant, updated, reps) in [("updated", 2, 0), ("conventional", 0, 2)] {
        let cfg = config(&[("variant", variant)]);
        let start = Instant::now();
        let r = run_ok(&cfg)?;
        slowest = slowest.max(start.elapsed());
        let got = (
            r.report.tasks_total,
            r.report.tasks_updated,
            r.report.task_repetitions,
        );
        ensure(got == (5, updated, reps), || {
            format!("{variant}: (tasks, updated, repetitions) = {got:?}")
        })?;
    }
    ensure(slowest < Duration::from_secs(1), || {
        format!("slowest run {slowest:?}")
    })?;
    Ok(format!("slowest run {slowest:.1?}"))
}

fn overhead_ordering() -> Outcome {
    let start = Instant::now();
    let mut pairs = 0;
    for seed in 1..=20 {
        for changes in 1..=3 {
            let base = config(&[
                ("seed", &seed.to_string()),
                ("changes", &changes.to_string()),
            ]);
            let scenario = plan_experiment(&base).map_err(|e| format!("seed {seed}: {e}"))?;
            let mut reports = Vec::new();
            for variant in ProtocolVariant::ALL {
                let cfg = RunConfig {
                    variant,
                    ..base.clone()
                };
                reports.push(
                    run_scenario(&cfg, scenario.clone())
                        .map_err(|e| e.to_string())?
                        .report,
                );
            }
            let (conv, upd) = (&reports[0], &reports[1]);
            ensure(upd.message_count < conv.message_count, || {
                format!(
                    "seed {seed} changes {changes}: messages {} vs {}",
                    upd.message_count, conv.message_count
                )
            })?;
            ensure(upd.elapsed_ticks <= conv.elapsed_ticks, || {
                format!(
                    "seed {seed} changes {changes}: ticks {} vs {}",
                    upd.elapsed_ticks, conv.elapsed_ticks
                )
            })?;
            pairs += 1;
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!("{pairs} seed/change pairs in {took:.1?}"))
}

fn zero_change_equivalence() -> Outcome {
    let mut compared = 0;
    for seed in [42, 1, 2, 3, 4, 5] {
        for dialect in ["acl-f", "acl-k"] {
            let mut texts = Vec::new();
            for variant in ["conventional", "updated"] {
                let cfg = config(&[
                    ("seed", &seed.to_string()),
                    ("changes", "0"),
                    ("dialect", dialect),
                    ("variant", variant),
                ]);
                let text = trace_text(&run_ok(&cfg)?);
                texts.push(text.replacen(&format!("variant={variant} "), "variant=* ", 1));
            }
            ensure(texts[0] == texts[1], || {
                format!("seed {seed} {dialect}: traces differ")
            })?;
            compared += 1;
        }
    }
    Ok(format!("{compared} pairs byte-identical"))
}

/// Envelope sequence for two contractors, one task, seed 42, worked by hand:
/// CFPs leave at 0 and land at 1, both contractors bid at 1 (landing at 2),
/// the window closes at 2 and the deadline fires at 3, the cheaper bidder
/// (predator-02, cost 6 against 8) is accepted and the other rejected, and
/// ten ticks of work from the award landing at 4 finish at 14.
const HAND_STEPPED: [(Performative, &str, &str, u64, u64); 7] = [
    (
        Performative::CallForProposals,
        "predator-00",
        "predator-01",
        0,
        1,
    ),
    (
        Performative::CallForProposals,
        "predator-00",
        "predator-02",
        0,
        1,
    ),
    (Performative::Propose, "predator-01", "predator-00", 1, 2),
    (Performative::Propose, "predator-02", "predator-00", 1, 2),
    (
        Performative::AcceptProposal,
        "predator-00",
        "predator-02",
        3,
        4,
    ),
    (
        Performative::RejectProposal,
        "predator-00",
        "predator-01",
        3,
        4,
    ),
    (Performative::Inform, "predator-02", "predator-00", 14, 15),
];

fn message_count_formula() -> Outcome {
    let mut counts = Vec::new();
    for n in 1..=5usize {
        let cfg = config(&[
            ("tasks", "1"),
            ("changes", "0"),
            ("contractors", &n.to_string()),
            ("report_interval", "1000"),
        ]);
        let r = run_ok(&cfg)?;
        ensure(r.trace.len() == 3 * n + 1, || {
            format!("n={n}: {} envelopes, expected {}", r.trace.len(), 3 * n + 1)
        })?;
        counts.push(r.trace.len());
        if n == 2 {
            let got: Vec<_> = r
                .trace
                .iter()
                .map(|e| {
                    (
                        e.performative,
                        e.sender.to_string(),
                        e.receiver.to_string(),
                        e.sent_at,
                        e.delivered_at,
                    )
                })
                .collect();
            let want: Vec<_> = HAND_STEPPED
                .iter()
                .map(|(p, s, d, a, b)| (*p, s.to_string(), d.to_string(), *a, *b))
                .collect();
            ensure(got == want, || format!("n=2 trace {got:?}"))?;
            ensure(r.final_clock == 15, || {
                format!("n=2 clock {}", r.final_clock)
            })?;
        }
    }
    Ok(format!(
        "envelopes {counts:?}, n=2 matches the hand-stepped trace"
    ))
}

fn change_cost_law() -> Outcome {
    let seeds: Vec<u64> = (1..=10).chain([42]).collect();
    for &seed in &seeds {
        let count = |k: u32| -> Result<usize, String> {
            let cfg = config(&[
                ("seed", &seed.to_string()),
                ("changes", &k.to_string()),
                ("report_interval", "1000"),
            ]);
            Ok(run_ok(&cfg)?.report.message_count)
        };
        let base = count(0)?;
        for k in 1..=3 {
            let m = count(k)?;
            ensure(m == base + 2 * k as usize, || {
                format!("seed {seed} k={k}: {m} messages against {base} at k=0")
            })?;
        }
    }
    Ok(format!("exact 2k over seeds {seeds:?}"))
}

fn erase_keywords(text: &str) -> String {
    text.lines()
        .map(|l| {
            if l.starts_with('#') {
                l.split(' ')
                    .filter(|w| !w.starts_with("dialect="))
                    .collect::<Vec<_>>()
                    .join(" ")
            } else {
                let mut f: Vec<&str> = l.split('|').collect();
                f[4] = "*";
                f.join("|")
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn dialect_transparency() -> Outcome {
    let mut compared = 0;
    for seed in [42, 1, 2, 3, 4, 5] {
        for variant in ["conventional", "updated"] {
            let runs: Vec<RunResult> = ["acl-f", "acl-k"]
                .iter()
                .map(|d| {
                    run_ok(&config(&[
                        ("seed", &seed.to_string()),
                        ("variant", variant),
                        ("dialect", d),
                    ]))
                })
                .collect::<Result<_, _>>()?;
            let (f, k) = (trace_text(&runs[0]), trace_text(&runs[1]));
            ensure(f != k, || {
                format!("seed {seed} {variant}: dialects render identically")
            })?;
            ensure(erase_keywords(&f) == erase_keywords(&k), || {
                format!("seed {seed} {variant}: traces differ beyond keywords")
            })?;
            ensure(dialect_equivalent(&runs[0].trace, &runs[1].trace), || {
                format!("seed {seed} {variant}: envelopes differ")
            })?;
            compared += 1;
        }
    }
    Ok(format!("{compared} pairs identical after erasing keywords"))
}

fn lines_of(text: &str) -> Vec<String> {
    text.lines().map(str::to_owned).collect()
}

fn field(line: &str, i: usize) -> &str {
    line.split('|').nth(i).unwrap()
}

fn set_field(line: &str, i: usize, value: &str) -> String {
    let mut f: Vec<&str> = line.split('|').collect();
    f[i] = value;
    f.join("|")
}

fn find(lines: &[String], keyword: &str) -> usize {
    lines
        .iter()
        .position(|l| !l.starts_with('#') && field(l, 4) == keyword)
        .unwrap_or_else(|| panic!("no {keyword} line"))
}

fn mutations(updated: &str, conventional: &str, pair: &str) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    let u = lines_of(updated);
    let join = |l: Vec<String>| l.join("\n") + "\n";

    let mut m = u.clone();
    let reject = set_field(
        &set_field(
            &set_field(&m[find(&u, "reject-proposal")], 0, "9999"),
            5,
            "0",
        ),
        6,
        "1",
    );
    m.insert(1, reject);
    out.push(("reject before its call for proposals", join(m)));

    out.push((
        "updated trace relabelled conventional",
        updated.replacen("variant=updated", "variant=conventional", 1),
    ));
    out.push((
        "conventional trace relabelled updated",
        conventional.replacen("variant=conventional", "variant=updated", 1),
    ));

    let mut m = lines_of(pair);
    let (a, r) = (find(&m, "accept-proposal"), find(&m, "reject-proposal"));
    let (winner, loser) = (field(&m[a], 3).to_owned(), field(&m[r], 3).to_owned());
    m[a] = set_field(&m[a], 3, &loser);
    m[r] = set_field(&m[r], 3, &winner);
    out.push(("award to the costlier bidder", join(m)));

    let mut m = lines_of(pair);
    let last = m.len() - 1;
    let holder = field(&m[find(&m, "accept-proposal")], 3).to_owned();
    let other = if holder == "predator-01" {
        "predator-02"
    } else {
        "predator-01"
    };
    m[last] = set_field(&m[last], 2, other);
    out.push(("final report from a non-holder", join(m)));

    let mut m = u.clone();
    let i = find(&u, "propose");
    let sent: u64 = field(&m[i], 5).parse().unwrap();
    m[i] = set_field(&m[i], 6, &(sent - 1).to_string());
    out.push(("delivered before sent", join(m)));

    let mut m = u.clone();
    let i = find(&u, "propose");
    m[i] = set_field(&m[i], 4, Dialect::AclK.keyword(Performative::Propose));
    out.push(("keyword from the other dialect", join(m)));

    let mut m = lines_of(pair);
    m.pop();
    out.push(("final report removed", join(m)));

    let mut m = u.clone();
    let id = field(&m[1], 0).to_owned();
    m[2] = set_field(&m[2], 0, &id);
    out.push(("duplicate message id", join(m)));

    out
}

fn cli_validate(text: &str, dir: &std::path::Path, name: &str) -> Result<i32, String> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_cnp"))
        .arg("validate")
        .arg(&path)
        .output()
        .map_err(|e| e.to_string())?;
    out.status
        .code()
        .ok_or_else(|| "validate killed".to_owned())
}

fn conformance() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut generated = 0;
    for seed in 1..=10 {
        for changes in 0..=3 {
            for variant in ["conventional", "updated"] {
                for dialect in ["acl-f", "acl-k"] {
                    let cfg = config(&[
                        ("seed", &seed.to_string()),
                        ("changes", &changes.to_string()),
                        ("variant", variant),
                        ("dialect", dialect),
                    ]);
                    let text = trace_text(&run_ok(&cfg)?);
                    let n = violations(&text)?;
                    ensure(n == 0, || format!("{}: {n} violations", cfg.header_line()))?;
                    generated += 1;
                }
            }
        }
    }
    let updated = trace_text(&run_ok(&config(&[]))?);
    let conventional = trace_text(&run_ok(&config(&[("variant", "conventional")]))?);
    let pair = trace_text(&run_ok(&config(&[
        ("tasks", "1"),
        ("changes", "0"),
        ("contractors", "2"),
        ("report_interval", "1000"),
    ]))?);
    for (name, text) in [
        ("updated", &updated),
        ("conventional", &conventional),
        ("pair", &pair),
    ] {
        let code = cli_validate(text, dir.path(), &format!("{name}.txt"))?;
        ensure(code == 0, || format!("cnp validate {name}: exit {code}"))?;
    }
    let fixtures = mutations(&updated, &conventional, &pair);
    for (i, (name, text)) in fixtures.iter().enumerate() {
        let n = violations(text).map_err(|e| format!("{name}: {e}"))?;
        ensure(n > 0, || format!("fixture '{name}' accepted"))?;
        let code = cli_validate(text, dir.path(), &format!("mutant{i}.txt"))?;
        ensure(code == 1, || {
            format!("cnp validate on '{name}': exit {code}")
        })?;
    }
    Ok(format!(
        "{generated} generated traces clean, {} mutated fixtures rejected",
        fixtures.len()
    ))
}

fn determinism() -> Outcome {
    let mut digests = Vec::new();
    for variant in ["updated", "conventional"] {
        let cfg = config(&[("variant", variant)]);
        let hashes: Vec<String> = (0..10)
            .map(|_| run_ok(&cfg).map(|r| hex::encode(Sha256::digest(trace_text(&r)))))
            .collect::<Result<_, _>>()?;
        ensure(hashes.iter().all(|h| *h == hashes[0]), || {
            format!("{variant}: hashes differ")
        })?;
        digests.push(format!("{variant} {}", &hashes[0][..12]));
    }
    Ok(format!("10/10 identical ({})", digests.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("headline experiment shape", headline_shape),
        ("overhead ordering", overhead_ordering),
        ("zero-change equivalence", zero_change_equivalence),
        ("message-count formula", message_count_formula),
        ("change-cost law", change_cost_law),
        ("dialect transparency", dialect_transparency),
        ("conformance", conformance),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
