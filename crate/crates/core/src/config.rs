//! Run configuration: defaults, `key=value` files, the trace header echo and
//! the scenario fingerprint used to pair runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{ticks_for, ProgressPolicy, RetryBudget};
use crate::messaging::Dialect;
use crate::protocol::{ProtocolVariant, Tick};
use crate::scenario::{ChangeWindow, ExperimentParams};
use crate::sim::LatencyModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
    #[error("invalid value {value:?} for '{key}': {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Keys accepted in config files, on the trace header and by [`RunConfig::set`].
pub const KEYS: [&str; 15] = [
    "variant",
    "dialect",
    "tasks",
    "changes",
    "contractors",
    "grid",
    "seed",
    "latency",
    "retry_budget",
    "report_interval",
    "progress_policy",
    "work_rate",
    "bid_window",
    "max_ticks",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: ProtocolVariant,
    pub dialect: Dialect,
    pub tasks: usize,
    pub changes: usize,
    pub contractors: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub latency_base: Tick,
    pub latency_jitter: Tick,
    pub retry_budget: RetryBudget,
    pub report_interval: u64,
    pub progress_policy: ProgressPolicy,
    /// Progress per tick of work, in `(0, 1]`.
    pub work_rate: f64,
    /// Ticks between an announcement and its expiration; `None` picks
    /// twice the worst-case latency.
    pub bid_window: Option<Tick>,
    pub max_ticks: Tick,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: ProtocolVariant::Updated,
            dialect: Dialect::AclF,
            tasks: 5,
            changes: 2,
            contractors: 4,
            width: 10,
            height: 10,
            seed: 42,
            latency_base: 1,
            latency_jitter: 0,
            retry_budget: RetryBudget::Limited(2),
            report_interval: 5,
            progress_policy: ProgressPolicy::Reset,
            work_rate: 0.1,
            bid_window: None,
            max_ticks: 10_000,
            out_dir: PathBuf::from("."),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| bad(key, value, e.to_string()))
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
        reason: reason.into(),
    }
}

/// Parses `WxH`.
pub fn parse_grid(value: &str) -> Result<(u32, u32), ConfigError> {
    let (w, h) = value
        .split_once(['x', 'X'])
        .ok_or_else(|| bad("grid", value, "expected WxH"))?;
    Ok((parse_num("grid", w)?, parse_num("grid", h)?))
}

/// Parses `BASE[:JITTER]`.
pub fn parse_latency(value: &str) -> Result<(Tick, Tick), ConfigError> {
    match value.split_once(':') {
        Some((b, j)) => Ok((parse_num("latency", b)?, parse_num("latency", j)?)),
        None => Ok((parse_num("latency", value)?, 0)),
    }
}

impl RunConfig {
    /// Sets one option from its textual form. Keys may use `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "variant" => self.variant = value.parse().map_err(|e: String| bad(&key, value, e))?,
            "dialect" => self.dialect = value.parse().map_err(|e: String| bad(&key, value, e))?,
            "tasks" => self.tasks = parse_num(&key, value)?,
            "changes" => self.changes = parse_num(&key, value)?,
            "contractors" => self.contractors = parse_num(&key, value)?,
            "grid" => (self.width, self.height) = parse_grid(value)?,
            "seed" => self.seed = parse_num(&key, value)?,
            "latency" => (self.latency_base, self.latency_jitter) = parse_latency(value)?,
            "retry_budget" => {
                self.retry_budget = value.parse().map_err(|e: String| bad(&key, value, e))?
            }
            "report_interval" => self.report_interval = parse_num(&key, value)?,
            "progress_policy" => {
                self.progress_policy = value.parse().map_err(|e: String| bad(&key, value, e))?
            }
            "work_rate" => self.work_rate = parse_num(&key, value)?,
            "bid_window" => {
                self.bid_window = if value.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(parse_num(&key, value)?)
                }
            }
            "max_ticks" => self.max_ticks = parse_num(&key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    /// Applies `key=value` lines. Blank lines and lines starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_owned(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.changes > self.tasks {
            return Err(ConfigError::Invalid(format!(
                "changes ({}) must not exceed tasks ({})",
                self.changes, self.tasks
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ConfigError::Invalid(
                "grid dimensions must be positive".into(),
            ));
        }
        if !(self.work_rate > 0.0 && self.work_rate <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "work_rate must lie in (0, 1], got {}",
                self.work_rate
            )));
        }
        if self.report_interval == 0 {
            return Err(ConfigError::Invalid(
                "report_interval must be at least 1".into(),
            ));
        }
        if self.bid_window == Some(0) {
            return Err(ConfigError::Invalid("bid_window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_bid_window(&self) -> Tick {
        self.bid_window
            .unwrap_or(2 * (self.latency_base + self.latency_jitter))
            .max(1)
    }

    pub fn latency_model(&self) -> LatencyModel {
        LatencyModel {
            base: self.latency_base,
            jitter: self.latency_jitter,
            seed: self.seed ^ 0x9e37_79b9_7f4a_7c15,
        }
    }

    /// Ticks in which every first-round contract is already running at its
    /// contractor and cannot have finished its work yet, with room for the
    /// change message to arrive.
    pub fn change_window(&self) -> ChangeWindow {
        let worst = self.latency_base + self.latency_jitter;
        let processed = self.effective_bid_window() + 1;
        ChangeWindow {
            earliest: processed + worst + 1,
            latest: (processed + self.latency_base + ticks_for(self.work_rate))
                .saturating_sub(worst + 1),
        }
    }

    pub fn experiment_params(&self) -> ExperimentParams {
        ExperimentParams {
            tasks: self.tasks,
            changes: self.changes,
            contractors: self.contractors,
            width: self.width,
            height: self.height,
            seed: self.seed,
            window: self.change_window(),
        }
    }

    fn render(&self, key: &str) -> String {
        match key {
            "variant" => self.variant.to_string(),
            "dialect" => self.dialect.slug().to_owned(),
            "tasks" => self.tasks.to_string(),
            "changes" => self.changes.to_string(),
            "contractors" => self.contractors.to_string(),
            "grid" => format!("{}x{}", self.width, self.height),
            "seed" => self.seed.to_string(),
            "latency" => format!("{}:{}", self.latency_base, self.latency_jitter),
            "retry_budget" => self.retry_budget.to_string(),
            "report_interval" => self.report_interval.to_string(),
            "progress_policy" => self.progress_policy.to_string(),
            "work_rate" => self.work_rate.to_string(),
            "bid_window" => self
                .bid_window
                .map_or_else(|| "auto".to_owned(), |w| w.to_string()),
            "max_ticks" => self.max_ticks.to_string(),
            "out" => self.out_dir.display().to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Every setting that shapes a run, as `key=value` pairs (output paths excluded).
    pub fn effective_pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .filter(|k| **k != "out")
            .map(|k| (*k, self.render(k)))
            .collect()
    }

    /// The `#` comment line written at the top of every trace file.
    pub fn header_line(&self) -> String {
        let mut line = String::from("# cnp-trace");
        for (k, v) in self.effective_pairs() {
            let _ = write!(line, " {k}={v}");
        }
        line
    }

    /// Rebuilds a configuration from a trace header line.
    pub fn from_header(line: &str) -> Result<RunConfig, ConfigError> {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| ConfigError::Invalid("trace header must start with '#'".into()))?;
        let mut cfg = RunConfig::default();
        for token in body.split_whitespace().filter(|t| t.contains('=')) {
            let (k, v) = token.split_once('=').expect("filtered on '='");
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Hex SHA-256 over everything but the variant and dialect, so paired
    /// runs of one experiment share it.
    pub fn scenario_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.effective_pairs() {
            if k != "variant" && k != "dialect" {
                h.update(k.as_bytes());
                h.update(b"=");
                h.update(v.as_bytes());
                h.update(b"\n");
            }
        }
        hex::encode(h.finalize())
    }
}
