//! Task, bid and contract types shared by managers and contractors, plus the
//! pure decision functions of the protocol: eligibility, bid ranking, award
//! selection, the contract state machine and task modification.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Logical simulation time.
pub type Tick = u64;

/// Identifier of an agent (manager or contractor).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_owned())
    }
}

/// Identifier of a task; unique per manager.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId(String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        TaskId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.to_owned())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("change for task {got} applied to contract for task {expected}")]
    TaskMismatch { expected: TaskId, got: TaskId },
    #[error("bids for several tasks passed to one ranking ({first} and {other})")]
    MixedTasks { first: TaskId, other: TaskId },
    #[error("illegal transition {from:?} -> {to:?} under {variant} variant")]
    IllegalTransition {
        from: ContractState,
        to: ContractState,
        variant: ProtocolVariant,
    },
    #[error("task change not applicable in state {0:?}")]
    ChangeNotApplicable(ContractState),
    #[error("task {0} is already open")]
    DuplicateTask(TaskId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("invalid bid cost {0}")]
    InvalidCost(f64),
    #[error("expiration {expiration} must be later than announcement time {now}")]
    ExpirationNotInFuture { expiration: Tick, now: Tick },
}

/// Eligibility requirements attached to an announced task.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BidSpecification {
    /// Capability tags a contractor must hold. Empty means everyone qualifies.
    pub required_capabilities: BTreeSet<String>,
    /// Inclusive ceiling on the bid cost.
    pub max_cost: Option<f64>,
}

impl BidSpecification {
    pub fn requiring<I, S>(caps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        BidSpecification {
            required_capabilities: caps.into_iter().map(Into::into).collect(),
            max_cost: None,
        }
    }

    pub fn with_max_cost(mut self, max_cost: f64) -> Self {
        self.max_cost = Some(max_cost);
        self
    }
}

/// A unit of work announced by a manager.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub name: String,
    pub abstraction: String,
    pub bid_spec: BidSpecification,
    /// Deadline for bids, on the manager's logical clock.
    pub expiration: Tick,
    /// Scenario payload, opaque to the protocol (a prey id in the pursuit scenario).
    pub target: String,
    /// Number of absorbed modifications.
    pub revision: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bid {
    pub task_id: TaskId,
    pub contractor_id: AgentId,
    pub cost: f64,
    pub submitted_at: Tick,
}

impl Bid {
    pub fn new(
        task_id: TaskId,
        contractor_id: AgentId,
        cost: f64,
        submitted_at: Tick,
    ) -> Result<Self, ProtocolError> {
        if !cost.is_finite() || cost < 0.0 {
            return Err(ProtocolError::InvalidCost(cost));
        }
        Ok(Bid {
            task_id,
            contractor_id,
            cost,
            submitted_at,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked<T> {
    pub item: T,
    /// 1 is best.
    pub rank: usize,
}

/// Items sorted best-first with dense ranks `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList<T> {
    entries: Vec<Ranked<T>>,
    ordering_key: &'static str,
}

impl<T> RankedList<T> {
    pub fn entries(&self) -> &[Ranked<T>] {
        &self.entries
    }

    pub fn ordering_key(&self) -> &'static str {
        self.ordering_key
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> Option<&T> {
        self.entries.first().map(|r| &r.item)
    }

    pub fn items(&self) -> impl Iterator<Item = &T> {
        self.entries.iter().map(|r| &r.item)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolVariant {
    /// Classic CNP: an awarded task can only be changed by restarting the auction.
    Conventional,
    /// Updated CNP: the manager may modify an awarded task in flight.
    Updated,
}

impl ProtocolVariant {
    pub const ALL: [ProtocolVariant; 2] = [ProtocolVariant::Conventional, ProtocolVariant::Updated];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolVariant::Conventional => "conventional",
            ProtocolVariant::Updated => "updated",
        }
    }
}

impl fmt::Display for ProtocolVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "conventional" => Ok(ProtocolVariant::Conventional),
            "updated" => Ok(ProtocolVariant::Updated),
            other => Err(format!(
                "unknown variant '{other}' (expected conventional or updated)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContractState {
    Announced,
    Bidding,
    BidProcessing,
    Awarded,
    InProgress,
    Completed,
    Failed,
    Cancelled,
}

impl ContractState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            ContractState::Completed | ContractState::Failed | ContractState::Cancelled
        )
    }

    /// States in which a contract has an awarded contractor.
    pub fn has_award(self) -> bool {
        matches!(
            self,
            ContractState::Awarded | ContractState::InProgress | ContractState::Completed
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContractState::Announced => "announced",
            ContractState::Bidding => "bidding",
            ContractState::BidProcessing => "bid-processing",
            ContractState::Awarded => "awarded",
            ContractState::InProgress => "in-progress",
            ContractState::Completed => "completed",
            ContractState::Failed => "failed",
            ContractState::Cancelled => "cancelled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterimReport {
    pub task_id: TaskId,
    pub contractor_id: AgentId,
    /// In `[0, 1)`.
    pub progress_fraction: f64,
    pub at: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalReport {
    pub task_id: TaskId,
    pub contractor_id: AgentId,
    /// Completion time the contractor committed to when the work started.
    pub deadline: Tick,
    pub completed_at: Tick,
    pub revision_completed: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangeOutcome {
    Absorbed,
    ForcedRestart,
    RejectedTooLate,
}

impl ChangeOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeOutcome::Absorbed => "absorbed",
            ChangeOutcome::ForcedRestart => "forced-restart",
            ChangeOutcome::RejectedTooLate => "rejected-too-late",
        }
    }
}

/// A manager's request to modify a task after it has been awarded.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeRequest {
    pub task_id: TaskId,
    pub new_target: String,
    pub new_bid_spec: Option<BidSpecification>,
    pub requested_at: Tick,
}

/// A change request together with what happened to it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskChange {
    pub task_id: TaskId,
    pub new_target: String,
    pub new_bid_spec: Option<BidSpecification>,
    pub requested_at: Tick,
    pub outcome: ChangeOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateTransition {
    pub from: ContractState,
    pub to: ContractState,
    pub at: Tick,
}

/// Per-task lifecycle kept by the manager.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractRecord {
    pub task: TaskSpec,
    state: ContractState,
    awarded_to: Option<AgentId>,
    pub bids_received: Vec<Bid>,
    pub interim_reports: Vec<InterimReport>,
    pub final_report: Option<FinalReport>,
    pub change_log: Vec<TaskChange>,
    /// Full protocol restarts forced by task changes.
    pub repetitions: u32,
    /// Announcement rounds so far, counting retries and restarts. Starts at 1.
    pub attempt: u32,
    /// Re-announcements caused by rounds without eligible bids.
    pub retries_used: u32,
    history: Vec<StateTransition>,
}

impl ContractRecord {
    pub fn new(task: TaskSpec) -> Self {
        ContractRecord {
            task,
            state: ContractState::Announced,
            awarded_to: None,
            bids_received: Vec::new(),
            interim_reports: Vec::new(),
            final_report: None,
            change_log: Vec::new(),
            repetitions: 0,
            attempt: 1,
            retries_used: 0,
            history: Vec::new(),
        }
    }

    pub fn task_id(&self) -> &TaskId {
        &self.task.task_id
    }

    pub fn state(&self) -> ContractState {
        self.state
    }

    pub fn awarded_to(&self) -> Option<&AgentId> {
        self.awarded_to.as_ref()
    }

    /// Every state change the record went through, oldest first.
    pub fn history(&self) -> &[StateTransition] {
        &self.history
    }

    /// Moves to `to` if the transition is legal for `variant`.
    pub fn transition(
        &mut self,
        to: ContractState,
        variant: ProtocolVariant,
        at: Tick,
    ) -> Result<(), ProtocolError> {
        if !validate_transition(self.state, to, variant) {
            return Err(ProtocolError::IllegalTransition {
                from: self.state,
                to,
                variant,
            });
        }
        self.history.push(StateTransition {
            from: self.state,
            to,
            at,
        });
        self.state = to;
        if !to.has_award() {
            self.awarded_to = None;
        }
        Ok(())
    }

    /// BidProcessing -> Awarded, recording the winner.
    pub fn award(
        &mut self,
        contractor: AgentId,
        variant: ProtocolVariant,
        at: Tick,
    ) -> Result<(), ProtocolError> {
        self.transition(ContractState::Awarded, variant, at)?;
        self.awarded_to = Some(contractor);
        Ok(())
    }

    /// Applies a task change according to the protocol variant.
    ///
    /// Under `Updated` an awarded or running contract absorbs the change and
    /// bumps the task revision. Under `Conventional` the contract is thrown
    /// back to `Announced` and counted as a repetition. A change that arrives
    /// after completion is logged as too late and leaves the record untouched.
    pub fn apply_change(
        &mut self,
        change: ChangeRequest,
        variant: ProtocolVariant,
        now: Tick,
    ) -> Result<ChangeOutcome, ProtocolError> {
        if change.task_id != self.task.task_id {
            return Err(ProtocolError::TaskMismatch {
                expected: self.task.task_id.clone(),
                got: change.task_id,
            });
        }
        let outcome = match (self.state, variant) {
            (ContractState::Completed, _) => ChangeOutcome::RejectedTooLate,
            (ContractState::Awarded | ContractState::InProgress, ProtocolVariant::Updated) => {
                self.transition(self.state, variant, now)?;
                self.task.revision += 1;
                self.task.target = change.new_target.clone();
                if let Some(spec) = &change.new_bid_spec {
                    self.task.bid_spec = spec.clone();
                }
                ChangeOutcome::Absorbed
            }
            (ContractState::Awarded | ContractState::InProgress, ProtocolVariant::Conventional) => {
                self.transition(ContractState::Announced, variant, now)?;
                self.repetitions += 1;
                self.bids_received.clear();
                self.task.target = change.new_target.clone();
                if let Some(spec) = &change.new_bid_spec {
                    self.task.bid_spec = spec.clone();
                }
                ChangeOutcome::ForcedRestart
            }
            (state, _) => return Err(ProtocolError::ChangeNotApplicable(state)),
        };
        self.change_log.push(TaskChange {
            task_id: change.task_id,
            new_target: change.new_target,
            new_bid_spec: change.new_bid_spec,
            requested_at: change.requested_at,
            outcome,
        });
        Ok(outcome)
    }
}

/// Whether a contractor holding `capabilities` and quoting `cost` may bid.
pub fn eligible(bid_spec: &BidSpecification, capabilities: &BTreeSet<String>, cost: f64) -> bool {
    bid_spec.required_capabilities.is_subset(capabilities)
        && bid_spec.max_cost.is_none_or(|ceiling| cost <= ceiling)
}

/// Cheapest first; equal costs go to the earlier bid, then the smaller contractor id.
pub fn bid_order(a: &Bid, b: &Bid) -> Ordering {
    a.cost
        .total_cmp(&b.cost)
        .then(a.submitted_at.cmp(&b.submitted_at))
        .then_with(|| a.contractor_id.cmp(&b.contractor_id))
}

pub fn rank_bids(bids: &[Bid]) -> Result<RankedList<Bid>, ProtocolError> {
    if let Some(first) = bids.first() {
        if let Some(other) = bids.iter().find(|b| b.task_id != first.task_id) {
            return Err(ProtocolError::MixedTasks {
                first: first.task_id.clone(),
                other: other.task_id.clone(),
            });
        }
    }
    let mut sorted = bids.to_vec();
    sorted.sort_by(bid_order);
    Ok(RankedList {
        entries: sorted
            .into_iter()
            .enumerate()
            .map(|(i, item)| Ranked { item, rank: i + 1 })
            .collect(),
        ordering_key: "cost asc, submitted_at asc, contractor_id asc",
    })
}

pub fn select_award(ranked: &RankedList<Bid>) -> Option<AgentId> {
    ranked.best().map(|bid| bid.contractor_id.clone())
}

/// The legal contract state transitions for each protocol variant.
pub fn validate_transition(
    from: ContractState,
    to: ContractState,
    variant: ProtocolVariant,
) -> bool {
    use ContractState::*;
    match (from, to) {
        (Announced, Bidding)
        | (Bidding, BidProcessing)
        | (BidProcessing, Awarded)
        | (BidProcessing, Failed)
        | (BidProcessing, Announced)
        | (Awarded, InProgress)
        | (InProgress, Completed)
        | (InProgress, Failed)
        | (InProgress, Cancelled) => true,
        (Awarded | InProgress, Announced) => variant == ProtocolVariant::Conventional,
        (Awarded, Awarded) | (InProgress, InProgress) => variant == ProtocolVariant::Updated,
        _ => false,
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn arb_bids() -> impl Strategy<Value = Vec<Bid>> {
        prop::collection::vec((0u8..6, 0u32..5, 0u64..4), 0..8).prop_map(|raw| {
            raw.into_iter()
                .map(|(c, cost, t)| {
                    Bid::new(
                        TaskId::from("task-01"),
                        AgentId::new(format!("c{c}")),
                        f64::from(cost),
                        t,
                    )
                    .unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn ranking_ignores_input_order(bids in arb_bids(), seed in any::<u64>()) {
            let ranked = rank_bids(&bids).unwrap();
            let mut shuffled = bids.clone();
            // Deterministic rotation/reversal driven by the seed.
            if !shuffled.is_empty() {
                let k = (seed as usize) % shuffled.len();
                shuffled.rotate_left(k);
                if seed % 2 == 0 {
                    shuffled.reverse();
                }
            }
            let again = rank_bids(&shuffled).unwrap();
            prop_assert_eq!(ranked.clone(), again);
            prop_assert_eq!(ranked.clone(), rank_bids(&bids).unwrap());
            let ranks: Vec<_> = ranked.entries().iter().map(|r| r.rank).collect();
            prop_assert_eq!(ranks, (1..=bids.len()).collect::<Vec<_>>());
            for w in ranked.entries().windows(2) {
                prop_assert_ne!(bid_order(&w[0].item, &w[1].item), Ordering::Greater);
            }
        }

        #[test]
        fn updated_changes_never_repeat(n in 1usize..6) {
            let mut r = ContractRecord::new(TaskSpec {
                task_id: TaskId::from("t"),
                name: String::new(),
                abstraction: String::new(),
                bid_spec: BidSpecification::default(),
                expiration: 1,
                target: "p0".into(),
                revision: 0,
            });
            let v = ProtocolVariant::Updated;
            r.transition(ContractState::Bidding, v, 0).unwrap();
            r.transition(ContractState::BidProcessing, v, 1).unwrap();
            r.award(AgentId::from("c"), v, 1).unwrap();
            r.transition(ContractState::InProgress, v, 2).unwrap();
            for i in 0..n {
                let out = r.apply_change(ChangeRequest {
                    task_id: TaskId::from("t"),
                    new_target: format!("p{}", i + 1),
                    new_bid_spec: None,
                    requested_at: 3 + i as u64,
                }, v, 3 + i as u64).unwrap();
                prop_assert_eq!(out, ChangeOutcome::Absorbed);
            }
            prop_assert_eq!(r.repetitions, 0);
            prop_assert_eq!(r.task.revision as usize, n);
            for t in r.history() {
                prop_assert!(validate_transition(t.from, t.to, v));
            }
        }
    }
}
