//! The `cnp` command line: `run`, `compare` and `validate`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};
use crate::conformance::validate_trace;
use crate::engine::{plan_experiment, run_scenario, RunError, RunResult};
use crate::messaging::Dialect;
use crate::metrics::{compare, comparison_csv, metrics_csv};
use crate::protocol::ProtocolVariant;
use crate::trace::{read_trace, write_trace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATIONS: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TIMEOUT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cnp", version, about = "Contract Net Protocol simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one seeded experiment and write its trace and metrics row.
    Run {
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        dialect: Option<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run both variants under both dialects and write the comparison tables.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check a trace file against the protocol rules.
    Validate {
        trace: PathBuf,
        /// Defaults to the variant recorded in the trace header.
        #[arg(long)]
        variant: Option<String>,
        /// Defaults to the dialect recorded in the trace header.
        #[arg(long)]
        dialect: Option<String>,
    },
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    #[arg(long)]
    pub tasks: Option<String>,
    #[arg(long)]
    pub changes: Option<String>,
    #[arg(long)]
    pub contractors: Option<String>,
    /// Grid size as WxH.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Per-hop latency as BASE[:JITTER].
    #[arg(long)]
    pub latency: Option<String>,
    /// Retry count for unanswered announcements, or `unlimited`.
    #[arg(long)]
    pub retry_budget: Option<String>,
    #[arg(long)]
    pub report_interval: Option<String>,
    /// `reset` or `keep`.
    #[arg(long)]
    pub progress_policy: Option<String>,
    #[arg(long)]
    pub work_rate: Option<String>,
    /// Ticks from announcement to expiration, or `auto`.
    #[arg(long)]
    pub bid_window: Option<String>,
    #[arg(long)]
    pub max_ticks: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// File of key=value lines; flags win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl CommonArgs {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        [
            ("tasks", &self.tasks),
            ("changes", &self.changes),
            ("contractors", &self.contractors),
            ("grid", &self.grid),
            ("seed", &self.seed),
            ("latency", &self.latency),
            ("retry_budget", &self.retry_budget),
            ("report_interval", &self.report_interval),
            ("progress_policy", &self.progress_policy),
            ("work_rate", &self.work_rate),
            ("bid_window", &self.bid_window),
            ("max_ticks", &self.max_ticks),
            ("out", &self.out),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(
    common: &CommonArgs,
    variant: Option<&String>,
    dialect: Option<&String>,
) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for (k, v) in common.pairs() {
        cfg.set(k, v)?;
    }
    if let Some(v) = variant {
        cfg.set("variant", v)?;
    }
    if let Some(d) = dialect {
        cfg.set("dialect", d)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn trace_file_name(variant: ProtocolVariant, dialect: Dialect) -> String {
    format!("trace_{}_{}.txt", variant, dialect.slug())
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Timeout(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_timeout() {
            Failure::Timeout(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_run(result: &RunResult, out: &mut dyn Write) -> Result<PathBuf, Failure> {
    let cfg = &result.config;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let text = write_trace(Some(&cfg.header_line()), &result.trace, cfg.dialect)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let path = cfg.out_dir.join(trace_file_name(cfg.variant, cfg.dialect));
    write_file(&path, &text)?;
    let r = &result.report;
    let _ = writeln!(
        out,
        "{} {}: tasks {} updated {} repetitions {} messages {} ticks {} -> {}",
        r.variant,
        r.dialect.slug(),
        r.tasks_total,
        r.tasks_updated,
        r.task_repetitions,
        r.message_count,
        r.elapsed_ticks,
        path.display()
    );
    Ok(path)
}

fn cmd_run(cfg: RunConfig, out: &mut dyn Write) -> Result<i32, Failure> {
    let scenario = plan_experiment(&cfg)?;
    let result = run_scenario(&cfg, scenario)?;
    write_run(&result, out)?;
    let csv = metrics_csv(std::slice::from_ref(&result.report))
        .map_err(|e| Failure::Config(e.to_string()))?;
    write_file(&cfg.out_dir.join("metrics.csv"), &csv)?;
    Ok(EXIT_OK)
}

fn cmd_compare(base: RunConfig, out: &mut dyn Write) -> Result<i32, Failure> {
    let scenario = plan_experiment(&base)?;
    let mut reports = Vec::new();
    let mut tables = Vec::new();
    for dialect in Dialect::ALL {
        let mut pair = Vec::new();
        for variant in ProtocolVariant::ALL {
            let cfg = RunConfig {
                variant,
                dialect,
                ..base.clone()
            };
            let result = run_scenario(&cfg, scenario.clone())?;
            write_run(&result, out)?;
            pair.push(result.report);
        }
        tables.push(compare(&pair[0], &pair[1]).map_err(|e| Failure::Config(e.to_string()))?);
        reports.extend(pair);
    }
    let csv_err = |e: crate::metrics::MetricsError| Failure::Config(e.to_string());
    write_file(
        &base.out_dir.join("metrics.csv"),
        &metrics_csv(&reports).map_err(csv_err)?,
    )?;
    let path = base.out_dir.join("comparison.csv");
    write_file(&path, &comparison_csv(&reports, &tables).map_err(csv_err)?)?;
    for t in &tables {
        let _ = writeln!(
            out,
            "{}: message_count delta {} elapsed_ticks delta {}",
            t.b.dialect.slug(),
            t.deltas.message_count,
            t.deltas.elapsed_ticks
        );
    }
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_validate(
    path: &Path,
    variant: Option<&String>,
    dialect: Option<&String>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let trace =
        read_trace(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let recorded = match &trace.header {
        Some(h) => Some(RunConfig::from_header(h)?),
        None => None,
    };
    let pick = |flag: Option<&String>, key: &str| -> Result<Option<RunConfig>, ConfigError> {
        match flag {
            Some(v) => {
                let mut c = RunConfig::default();
                c.set(key, v)?;
                Ok(Some(c))
            }
            None => Ok(None),
        }
    };
    let variant = match (pick(variant, "variant")?, &recorded) {
        (Some(c), _) => c.variant,
        (None, Some(r)) => r.variant,
        (None, None) => {
            return Err(Failure::Config(
                "trace has no header; pass --variant".into(),
            ))
        }
    };
    let dialect = match (pick(dialect, "dialect")?, &recorded) {
        (Some(c), _) => c.dialect,
        (None, Some(r)) => r.dialect,
        (None, None) => trace
            .entries
            .first()
            .map_or(Dialect::AclF, |(_, e)| e.dialect),
    };
    let report = validate_trace(&trace.entries, variant, dialect);
    for v in &report.violations {
        let _ = writeln!(out, "{v}");
    }
    let _ = writeln!(
        out,
        "{}: {} envelopes, {} conversations, {} violations ({} {})",
        path.display(),
        report.envelopes,
        report.conversations,
        report.violations.len(),
        variant,
        dialect.slug()
    );
    Ok(if report.is_conformant() {
        EXIT_OK
    } else {
        EXIT_VIOLATIONS
    })
}

/// Parses `args` (program name first) and runs the command, returning the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            if e.use_stderr() {
                let _ = write!(err, "{e}");
            } else {
                let _ = write!(out, "{e}");
            }
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Run {
            variant,
            dialect,
            common,
        } => resolve_config(common, variant.as_ref(), dialect.as_ref())
            .map_err(Failure::from)
            .and_then(|cfg| cmd_run(cfg, out)),
        Command::Compare { common } => resolve_config(common, None, None)
            .map_err(Failure::from)
            .and_then(|cfg| cmd_compare(cfg, out)),
        Command::Validate {
            trace,
            variant,
            dialect,
        } => cmd_validate(trace, variant.as_ref(), dialect.as_ref(), out),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Timeout(msg)) => {
            let _ = writeln!(err, "timeout: {msg}");
            EXIT_TIMEOUT
        }
    }
}
