//! Run summaries and pairwise variant comparison, with CSV output.

use thiserror::Error;

use crate::messaging::{conversation_for, Dialect, Envelope};
use crate::protocol::{
    AgentId, ChangeOutcome, ContractRecord, ContractState, ProtocolVariant, TaskId, Tick,
};

/// Column order of the per-run CSV.
pub const CSV_HEADER: [&str; 7] = [
    "variant",
    "dialect",
    "tasks_total",
    "tasks_updated",
    "task_repetitions",
    "message_count",
    "elapsed_ticks",
];

/// Label of a comparison row in the comparison CSV.
pub const COMPARISON_LABEL: &str = "updated-vs-conventional";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("reports describe different scenarios ({a} vs {b})")]
    ScenarioMismatch { a: String, b: String },
    #[error("reports use different dialects ({a} vs {b})")]
    DialectMismatch { a: Dialect, b: Dialect },
    #[error("csv output failed: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRow {
    pub task_id: TaskId,
    pub state: ContractState,
    pub awarded_to: Option<AgentId>,
    pub revision: u32,
    pub repetitions: u32,
    pub attempts: u32,
    pub messages: usize,
    pub completed_at: Option<Tick>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub variant: ProtocolVariant,
    pub dialect: Dialect,
    pub scenario_hash: String,
    pub tasks_total: usize,
    /// Changes absorbed into a running contract.
    pub tasks_updated: usize,
    /// Full announcement cycles forced by changes.
    pub task_repetitions: u64,
    /// Envelopes delivered over the whole run.
    pub message_count: usize,
    pub elapsed_ticks: Tick,
    pub per_task: Vec<TaskRow>,
}

impl ExperimentReport {
    fn metric_values(&self) -> [i64; 5] {
        [
            self.tasks_total as i64,
            self.tasks_updated as i64,
            self.task_repetitions as i64,
            self.message_count as i64,
            self.elapsed_ticks as i64,
        ]
    }

    fn csv_row(&self) -> Vec<String> {
        let mut row = vec![self.variant.to_string(), self.dialect.slug().to_owned()];
        row.extend(self.metric_values().iter().map(i64::to_string));
        row
    }
}

pub fn summarize(
    variant: ProtocolVariant,
    dialect: Dialect,
    scenario_hash: &str,
    trace: &[Envelope],
    contracts: &[ContractRecord],
    final_clock: Tick,
) -> ExperimentReport {
    let per_task = contracts
        .iter()
        .map(|c| {
            let conversation = conversation_for(c.task_id());
            TaskRow {
                task_id: c.task_id().clone(),
                state: c.state(),
                awarded_to: c.awarded_to().cloned(),
                revision: c.task.revision,
                repetitions: c.repetitions,
                attempts: c.attempt,
                messages: trace
                    .iter()
                    .filter(|e| e.conversation_id == conversation)
                    .count(),
                completed_at: c.final_report.as_ref().map(|r| r.completed_at),
            }
        })
        .collect();
    ExperimentReport {
        variant,
        dialect,
        scenario_hash: scenario_hash.to_owned(),
        tasks_total: contracts.len(),
        tasks_updated: contracts
            .iter()
            .flat_map(|c| &c.change_log)
            .filter(|ch| ch.outcome == ChangeOutcome::Absorbed)
            .count(),
        task_repetitions: contracts.iter().map(|c| u64::from(c.repetitions)).sum(),
        message_count: trace.len(),
        elapsed_ticks: final_clock,
        per_task,
    }
}

/// Per-metric `b - a`, in CSV column order after the labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricDeltas {
    pub tasks_total: i64,
    pub tasks_updated: i64,
    pub task_repetitions: i64,
    pub message_count: i64,
    pub elapsed_ticks: i64,
}

/// Per-metric `b / a`; `None` where `a` is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRatios {
    pub tasks_total: Option<f64>,
    pub tasks_updated: Option<f64>,
    pub task_repetitions: Option<f64>,
    pub message_count: Option<f64>,
    pub elapsed_ticks: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub a: ExperimentReport,
    pub b: ExperimentReport,
    pub deltas: MetricDeltas,
    pub ratios: MetricRatios,
}

pub fn compare(
    a: &ExperimentReport,
    b: &ExperimentReport,
) -> Result<ComparisonTable, MetricsError> {
    if a.scenario_hash != b.scenario_hash {
        return Err(MetricsError::ScenarioMismatch {
            a: a.scenario_hash.clone(),
            b: b.scenario_hash.clone(),
        });
    }
    if a.dialect != b.dialect {
        return Err(MetricsError::DialectMismatch {
            a: a.dialect,
            b: b.dialect,
        });
    }
    let (x, y) = (a.metric_values(), b.metric_values());
    let d: Vec<i64> = x.iter().zip(&y).map(|(p, q)| q - p).collect();
    let r: Vec<Option<f64>> = x
        .iter()
        .zip(&y)
        .map(|(p, q)| (*p != 0).then(|| *q as f64 / *p as f64))
        .collect();
    Ok(ComparisonTable {
        a: a.clone(),
        b: b.clone(),
        deltas: MetricDeltas {
            tasks_total: d[0],
            tasks_updated: d[1],
            task_repetitions: d[2],
            message_count: d[3],
            elapsed_ticks: d[4],
        },
        ratios: MetricRatios {
            tasks_total: r[0],
            tasks_updated: r[1],
            task_repetitions: r[2],
            message_count: r[3],
            elapsed_ticks: r[4],
        },
    })
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, MetricsError> {
    let bytes = w
        .into_inner()
        .map_err(|e| MetricsError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| MetricsError::Csv(e.to_string()))
}

/// One row per run under [`CSV_HEADER`].
pub fn metrics_csv(reports: &[ExperimentReport]) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| MetricsError::Csv(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in reports {
        w.write_record(r.csv_row()).map_err(csv_err)?;
    }
    finish(w)
}

/// Header of the comparison CSV: the run columns followed by `_delta` columns.
pub fn comparison_header() -> Vec<String> {
    let mut h: Vec<String> = CSV_HEADER.iter().map(|s| s.to_string()).collect();
    h.extend(CSV_HEADER[2..].iter().map(|c| format!("{c}_delta")));
    h
}

/// Every run as a row with empty deltas, then one row per comparison
/// labelled [`COMPARISON_LABEL`] carrying `b`'s values and `b - a`.
pub fn comparison_csv(
    runs: &[ExperimentReport],
    tables: &[ComparisonTable],
) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| MetricsError::Csv(e.to_string());
    w.write_record(comparison_header()).map_err(csv_err)?;
    for r in runs {
        let mut row = r.csv_row();
        row.extend(std::iter::repeat_n(String::new(), 5));
        w.write_record(row).map_err(csv_err)?;
    }
    for t in tables {
        let mut row = t.b.csv_row();
        row[0] = COMPARISON_LABEL.to_owned();
        let d = t.deltas;
        row.extend(
            [
                d.tasks_total,
                d.tasks_updated,
                d.task_repetitions,
                d.message_count,
                d.elapsed_ticks,
            ]
            .iter()
            .map(i64::to_string),
        );
        w.write_record(row).map_err(csv_err)?;
    }
    finish(w)
}
