//! Manager and contractor behaviour. Both are plain state machines: the
//! simulator feeds them delivered content and sends whatever envelopes they
//! return.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::messaging::{conversation_for, Content, Envelope};
use crate::protocol::{
    eligible, rank_bids, select_award, AgentId, Bid, BidSpecification, ChangeOutcome,
    ChangeRequest, ContractRecord, ContractState, FinalReport, InterimReport, ProtocolError,
    ProtocolVariant, TaskId, TaskSpec, Tick,
};

/// How many times a task with no eligible bids is re-announced before it fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryBudget {
    Limited(u32),
    Unlimited,
}

impl RetryBudget {
    fn allows(self, used: u32) -> bool {
        match self {
            RetryBudget::Limited(n) => used < n,
            RetryBudget::Unlimited => true,
        }
    }
}

impl fmt::Display for RetryBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetryBudget::Limited(n) => write!(f, "{n}"),
            RetryBudget::Unlimited => f.write_str("unlimited"),
        }
    }
}

impl FromStr for RetryBudget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("unlimited") {
            return Ok(RetryBudget::Unlimited);
        }
        s.parse()
            .map(RetryBudget::Limited)
            .map_err(|_| format!("retry budget must be a count or 'unlimited', got '{s}'"))
    }
}

/// What a contractor does with its progress when a change is absorbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgressPolicy {
    /// Start the work over under the new revision.
    Reset,
    /// Carry progress over to the new revision.
    Keep,
}

impl fmt::Display for ProgressPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProgressPolicy::Reset => "reset",
            ProgressPolicy::Keep => "keep",
        })
    }
}

impl FromStr for ProgressPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reset" => Ok(ProgressPolicy::Reset),
            "keep" => Ok(ProgressPolicy::Keep),
            other => Err(format!(
                "unknown progress policy '{other}' (expected reset or keep)"
            )),
        }
    }
}

/// A bid deadline the simulator must schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deadline {
    pub task_id: TaskId,
    pub attempt: u32,
    pub due: Tick,
}

#[derive(Debug, Clone)]
pub struct ManagerAgent {
    id: AgentId,
    variant: ProtocolVariant,
    retry_budget: RetryBudget,
    bid_window: Tick,
    contractors: Vec<AgentId>,
    contracts: BTreeMap<TaskId, ContractRecord>,
    deadlines: Vec<Deadline>,
}

impl ManagerAgent {
    pub fn new(
        id: AgentId,
        variant: ProtocolVariant,
        retry_budget: RetryBudget,
        bid_window: Tick,
        contractors: Vec<AgentId>,
    ) -> Self {
        ManagerAgent {
            id,
            variant,
            retry_budget,
            bid_window: bid_window.max(1),
            contractors,
            contracts: BTreeMap::new(),
            deadlines: Vec::new(),
        }
    }

    pub fn id(&self) -> &AgentId {
        &self.id
    }

    pub fn variant(&self) -> ProtocolVariant {
        self.variant
    }

    pub fn contract(&self, task_id: &TaskId) -> Option<&ContractRecord> {
        self.contracts.get(task_id)
    }

    pub fn contracts(&self) -> impl Iterator<Item = &ContractRecord> {
        self.contracts.values()
    }

    pub fn into_contracts(self) -> Vec<ContractRecord> {
        self.contracts.into_values().collect()
    }

    /// Bid deadlines created since the last call.
    pub fn take_deadlines(&mut self) -> Vec<Deadline> {
        std::mem::take(&mut self.deadlines)
    }

    /// Opens a contract for `task` and broadcasts a call for proposals.
    pub fn announce(&mut self, task: TaskSpec, now: Tick) -> Result<Vec<Envelope>, ProtocolError> {
        if self.contracts.contains_key(&task.task_id) {
            return Err(ProtocolError::DuplicateTask(task.task_id));
        }
        let task_id = task.task_id.clone();
        self.contracts
            .insert(task_id.clone(), ContractRecord::new(task));
        self.broadcast(&task_id, now)
    }

    fn broadcast(&mut self, task_id: &TaskId, now: Tick) -> Result<Vec<Envelope>, ProtocolError> {
        let record = self
            .contracts
            .get_mut(task_id)
            .ok_or_else(|| ProtocolError::UnknownTask(task_id.clone()))?;
        record.task.expiration = now + self.bid_window;
        record.transition(ContractState::Bidding, self.variant, now)?;
        let content = Content::Announce {
            task: record.task.clone(),
            attempt: record.attempt,
        };
        let conversation = conversation_for(task_id);
        let out = self
            .contractors
            .iter()
            .map(|c| Envelope::draft(&conversation, self.id.clone(), c.clone(), &content, now))
            .collect();
        // Bids delivered at the expiration tick still count.
        self.deadlines.push(Deadline {
            task_id: task_id.clone(),
            attempt: record.attempt,
            due: record.task.expiration + 1,
        });
        Ok(out)
    }

    /// Records a proposal. Returns false when it is stale or arrived after expiration.
    pub fn on_bid(&mut self, bid: Bid, attempt: u32, delivered_at: Tick) -> bool {
        let Some(record) = self.contracts.get_mut(&bid.task_id) else {
            return false;
        };
        if record.state() != ContractState::Bidding
            || record.attempt != attempt
            || delivered_at > record.task.expiration
        {
            return false;
        }
        record.bids_received.push(bid);
        true
    }

    /// Bid processing once the bidding window has closed.
    pub fn on_deadline(
        &mut self,
        task_id: &TaskId,
        attempt: u32,
        now: Tick,
    ) -> Result<Vec<Envelope>, ProtocolError> {
        let variant = self.variant;
        let Some(record) = self.contracts.get_mut(task_id) else {
            return Ok(Vec::new());
        };
        if record.state() != ContractState::Bidding || record.attempt != attempt {
            return Ok(Vec::new());
        }
        record.transition(ContractState::BidProcessing, variant, now)?;
        let spec = record.task.bid_spec.clone();
        let qualifying: Vec<Bid> = record
            .bids_received
            .iter()
            .filter(|b| spec.max_cost.is_none_or(|m| b.cost <= m))
            .cloned()
            .collect();
        let ranked = rank_bids(&qualifying)?;
        let conversation = conversation_for(task_id);
        match select_award(&ranked) {
            Some(winner) => {
                record.award(winner.clone(), variant, now)?;
                let mut out = vec![Envelope::draft(
                    &conversation,
                    self.id.clone(),
                    winner.clone(),
                    &Content::Award {
                        task_id: task_id.clone(),
                        attempt,
                        revision: record.task.revision,
                        target: record.task.target.clone(),
                    },
                    now,
                )];
                let reject = Content::Rejection {
                    task_id: task_id.clone(),
                    attempt,
                };
                for loser in ranked.items().skip(1) {
                    out.push(Envelope::draft(
                        &conversation,
                        self.id.clone(),
                        loser.contractor_id.clone(),
                        &reject,
                        now,
                    ));
                }
                Ok(out)
            }
            None if self.retry_budget.allows(record.retries_used) => {
                record.retries_used += 1;
                record.attempt += 1;
                record.transition(ContractState::Announced, variant, now)?;
                let id = task_id.clone();
                self.broadcast(&id, now)
            }
            None => {
                record.transition(ContractState::Failed, variant, now)?;
                Ok(Vec::new())
            }
        }
    }

    /// The award reached the contractor, which starts working.
    pub fn on_award_delivered(
        &mut self,
        task_id: &TaskId,
        attempt: u32,
        now: Tick,
    ) -> Result<bool, ProtocolError> {
        let variant = self.variant;
        match self.contracts.get_mut(task_id) {
            Some(r) if r.state() == ContractState::Awarded && r.attempt == attempt => {
                r.transition(ContractState::InProgress, variant, now)?;
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    fn running_from(
        &mut self,
        task_id: &TaskId,
        sender: &AgentId,
        attempt: u32,
    ) -> Option<&mut ContractRecord> {
        self.contracts.get_mut(task_id).filter(|r| {
            r.state() == ContractState::InProgress
                && r.attempt == attempt
                && r.awarded_to() == Some(sender)
        })
    }

    pub fn on_interim(&mut self, report: InterimReport, attempt: u32) -> bool {
        let sender = report.contractor_id.clone();
        match self.running_from(&report.task_id.clone(), &sender, attempt) {
            Some(r) => {
                r.interim_reports.push(report);
                true
            }
            None => false,
        }
    }

    pub fn on_final(
        &mut self,
        report: FinalReport,
        attempt: u32,
        now: Tick,
    ) -> Result<bool, ProtocolError> {
        let variant = self.variant;
        let sender = report.contractor_id.clone();
        match self.running_from(&report.task_id.clone(), &sender, attempt) {
            Some(r) => {
                r.final_report = Some(report);
                r.transition(ContractState::Completed, variant, now)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub fn on_failure(
        &mut self,
        task_id: &TaskId,
        sender: &AgentId,
        attempt: u32,
        now: Tick,
    ) -> Result<bool, ProtocolError> {
        let variant = self.variant;
        match self.running_from(task_id, sender, attempt) {
            Some(r) => {
                r.transition(ContractState::Failed, variant, now)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Asks for a change to an awarded task.
    ///
    /// Updated: one change request to the contractor. Conventional: a cancel
    /// to the contractor followed by a fresh announcement round. After
    /// completion nothing is sent and the change is logged as too late.
    pub fn request_change(
        &mut self,
        change: ChangeRequest,
        now: Tick,
    ) -> Result<(ChangeOutcome, Vec<Envelope>), ProtocolError> {
        let variant = self.variant;
        let task_id = change.task_id.clone();
        let record = self
            .contracts
            .get_mut(&task_id)
            .ok_or_else(|| ProtocolError::UnknownTask(task_id.clone()))?;
        let holder = record.awarded_to().cloned();
        let attempt = record.attempt;
        let outcome = record.apply_change(change, variant, now)?;
        let conversation = conversation_for(&task_id);
        let holder = match outcome {
            ChangeOutcome::RejectedTooLate => return Ok((outcome, Vec::new())),
            _ => holder.expect("awarded contract has a contractor"),
        };
        match outcome {
            ChangeOutcome::Absorbed => {
                let content = Content::ChangeRequest {
                    task_id: task_id.clone(),
                    target: record.task.target.clone(),
                    bid_spec: record
                        .change_log
                        .last()
                        .and_then(|c| c.new_bid_spec.clone()),
                    revision: record.task.revision,
                };
                Ok((
                    outcome,
                    vec![Envelope::draft(
                        &conversation,
                        self.id.clone(),
                        holder,
                        &content,
                        now,
                    )],
                ))
            }
            ChangeOutcome::ForcedRestart => {
                record.attempt += 1;
                let cancel = Envelope::draft(
                    &conversation,
                    self.id.clone(),
                    holder,
                    &Content::Cancellation {
                        task_id: task_id.clone(),
                        attempt,
                        reason: "task changed".into(),
                    },
                    now,
                );
                let mut out = vec![cancel];
                out.extend(self.broadcast(&task_id, now)?);
                Ok((outcome, out))
            }
            ChangeOutcome::RejectedTooLate => unreachable!(),
        }
    }

    /// Terminates a running contract without replacement.
    pub fn cancel(&mut self, task_id: &TaskId, now: Tick) -> Result<Vec<Envelope>, ProtocolError> {
        let variant = self.variant;
        let record = self
            .contracts
            .get_mut(task_id)
            .ok_or_else(|| ProtocolError::UnknownTask(task_id.clone()))?;
        let holder = record.awarded_to().cloned();
        let attempt = record.attempt;
        record.transition(ContractState::Cancelled, variant, now)?;
        let holder = holder.expect("running contract has a contractor");
        Ok(vec![Envelope::draft(
            conversation_for(task_id),
            self.id.clone(),
            holder,
            &Content::Cancellation {
                task_id: task_id.clone(),
                attempt,
                reason: "terminated".into(),
            },
            now,
        )])
    }
}

/// Ticks of uninterrupted work needed at `work_rate` progress per tick.
pub fn ticks_for(work_rate: f64) -> u64 {
    ((1.0 / work_rate) - 1e-9).ceil().max(1.0) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveContract {
    pub manager: AgentId,
    pub attempt: u32,
    pub revision: u32,
    pub target: String,
    pub ticks_worked: u64,
    pub started_at: Tick,
    pub deadline: Tick,
    award_seq: u64,
}

#[derive(Debug, Clone)]
pub struct ContractorAgent {
    id: AgentId,
    capabilities: BTreeSet<String>,
    work_rate: f64,
    report_interval: u64,
    policy: ProgressPolicy,
    active: BTreeMap<TaskId, ActiveContract>,
    awards: u64,
}

impl ContractorAgent {
    /// `work_rate` is progress per tick in `(0, 1]`; an interim report goes
    /// out every `report_interval` ticks of work.
    pub fn new(
        id: AgentId,
        capabilities: BTreeSet<String>,
        work_rate: f64,
        report_interval: u64,
        policy: ProgressPolicy,
    ) -> Self {
        assert!(
            work_rate > 0.0 && work_rate <= 1.0,
            "work rate must lie in (0, 1], got {work_rate}"
        );
        ContractorAgent {
            id,
            capabilities,
            work_rate,
            report_interval: report_interval.max(1),
            policy,
            active: BTreeMap::new(),
            awards: 0,
        }
    }

    pub fn id(&self) -> &AgentId {
        &self.id
    }

    pub fn capabilities(&self) -> &BTreeSet<String> {
        &self.capabilities
    }

    /// Ticks of uninterrupted work needed to finish a contract.
    pub fn ticks_needed(&self) -> u64 {
        ticks_for(self.work_rate)
    }

    pub fn active(&self) -> &BTreeMap<TaskId, ActiveContract> {
        &self.active
    }

    pub fn is_busy(&self) -> bool {
        !self.active.is_empty()
    }

    pub fn progress(&self, task_id: &TaskId) -> Option<f64> {
        self.active
            .get(task_id)
            .map(|c| (c.ticks_worked as f64 * self.work_rate).min(1.0))
    }

    /// Target of the oldest running contract; that is the prey this predator chases.
    pub fn pursuit_target(&self) -> Option<&str> {
        self.active
            .values()
            .min_by_key(|c| c.award_seq)
            .map(|c| c.target.as_str())
    }

    /// Running contracts in award order.
    pub fn tasks_in_award_order(&self) -> Vec<TaskId> {
        let mut tasks: Vec<_> = self
            .active
            .iter()
            .map(|(t, c)| (c.award_seq, t.clone()))
            .collect();
        tasks.sort();
        tasks.into_iter().map(|(_, t)| t).collect()
    }

    /// Answers a call for proposals with a bid or a refusal. `cost` is the
    /// scenario's estimate, `None` when the contractor cannot evaluate it.
    pub fn on_cfp(
        &self,
        manager: &AgentId,
        task: &TaskSpec,
        attempt: u32,
        cost: Option<f64>,
        now: Tick,
    ) -> Envelope {
        let conversation = conversation_for(&task.task_id);
        let refuse = |reason: &str| {
            Envelope::draft(
                &conversation,
                self.id.clone(),
                manager.clone(),
                &Content::Refusal {
                    task_id: task.task_id.clone(),
                    attempt,
                    reason: reason.to_owned(),
                },
                now,
            )
        };
        if now > task.expiration {
            return refuse("expired");
        }
        let Some(cost) = cost else {
            return refuse("cannot evaluate");
        };
        if !eligible(&task.bid_spec, &self.capabilities, cost) {
            return refuse("ineligible");
        }
        match Bid::new(task.task_id.clone(), self.id.clone(), cost, now) {
            Ok(bid) => Envelope::draft(
                &conversation,
                self.id.clone(),
                manager.clone(),
                &Content::Bid { bid, attempt },
                now,
            ),
            Err(_) => refuse("ineligible"),
        }
    }

    pub fn on_award(
        &mut self,
        manager: &AgentId,
        task_id: &TaskId,
        attempt: u32,
        revision: u32,
        target: &str,
        now: Tick,
    ) {
        self.awards += 1;
        let deadline = now + self.ticks_needed();
        self.active.insert(
            task_id.clone(),
            ActiveContract {
                manager: manager.clone(),
                attempt,
                revision,
                target: target.to_owned(),
                ticks_worked: 0,
                started_at: now,
                deadline,
                award_seq: self.awards,
            },
        );
    }

    /// Absorbs a change and confirms it. `None` if the task is no longer held.
    pub fn on_change(
        &mut self,
        task_id: &TaskId,
        target: &str,
        bid_spec: Option<&BidSpecification>,
        revision: u32,
        now: Tick,
    ) -> Option<Envelope> {
        let needed = self.ticks_needed();
        let policy = self.policy;
        let c = self.active.get_mut(task_id)?;
        c.revision = revision;
        c.target = target.to_owned();
        if policy == ProgressPolicy::Reset {
            c.ticks_worked = 0;
            c.started_at = now;
            c.deadline = now + needed;
        }
        // A new bid specification only matters for future announcements.
        let _ = bid_spec;
        Some(Envelope::draft(
            conversation_for(task_id),
            self.id.clone(),
            c.manager.clone(),
            &Content::ChangeConfirm {
                task_id: task_id.clone(),
                revision,
            },
            now,
        ))
    }

    pub fn on_cancel(&mut self, task_id: &TaskId, attempt: u32) -> bool {
        match self.active.get(task_id) {
            Some(c) if c.attempt == attempt => {
                self.active.remove(task_id);
                true
            }
            _ => false,
        }
    }

    fn final_report(&mut self, task_id: &TaskId, now: Tick) -> Option<Envelope> {
        let c = self.active.remove(task_id)?;
        Some(Envelope::draft(
            conversation_for(task_id),
            self.id.clone(),
            c.manager,
            &Content::Final {
                report: FinalReport {
                    task_id: task_id.clone(),
                    contractor_id: self.id.clone(),
                    deadline: c.deadline,
                    completed_at: now,
                    revision_completed: c.revision,
                },
                attempt: c.attempt,
            },
            now,
        ))
    }

    /// One tick of work on `task_id`. Emits an interim report every
    /// `report_interval` ticks and the final report once the work is done.
    pub fn execute_tick(&mut self, task_id: &TaskId, now: Tick) -> Option<Envelope> {
        let needed = self.ticks_needed();
        let c = self.active.get_mut(task_id)?;
        if now <= c.started_at {
            return None;
        }
        c.ticks_worked += 1;
        if c.ticks_worked >= needed {
            return self.final_report(task_id, now);
        }
        if c.ticks_worked % self.report_interval != 0 {
            return None;
        }
        let report = InterimReport {
            task_id: task_id.clone(),
            contractor_id: self.id.clone(),
            progress_fraction: c.ticks_worked as f64 * self.work_rate,
            at: now,
        };
        Some(Envelope::draft(
            conversation_for(task_id),
            self.id.clone(),
            c.manager.clone(),
            &Content::Interim {
                report,
                attempt: c.attempt,
                revision: c.revision,
            },
            now,
        ))
    }

    /// The contract's goal was reached outright (the target was captured).
    pub fn complete_now(&mut self, task_id: &TaskId, now: Tick) -> Option<Envelope> {
        self.final_report(task_id, now)
    }

    /// Gives up on a contract and tells the manager why.
    pub fn abandon(&mut self, task_id: &TaskId, reason: &str, now: Tick) -> Option<Envelope> {
        let c = self.active.remove(task_id)?;
        Some(Envelope::draft(
            conversation_for(task_id),
            self.id.clone(),
            c.manager,
            &Content::Failure {
                task_id: task_id.clone(),
                attempt: c.attempt,
                reason: reason.to_owned(),
            },
            now,
        ))
    }
}
