//! Replays a trace against the contract lifecycle and the role rules of each
//! protocol variant, reporting every violation with its line number.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use crate::messaging::{conversation_for, Content, Dialect, Envelope, Performative};
use crate::protocol::{
    rank_bids, select_award, validate_transition, AgentId, Bid, BidSpecification, ContractState,
    ProtocolVariant, Tick,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub line: usize,
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: [{}] {}", self.line, self.rule, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConformanceReport {
    pub envelopes: usize,
    pub conversations: usize,
    pub violations: Vec<Violation>,
}

impl ConformanceReport {
    pub fn is_conformant(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

/// Validates envelopes numbered from line 1.
pub fn validate_envelopes(
    envelopes: &[Envelope],
    variant: ProtocolVariant,
    dialect: Dialect,
) -> ConformanceReport {
    let entries: Vec<(usize, Envelope)> = envelopes
        .iter()
        .enumerate()
        .map(|(i, e)| (i + 1, e.clone()))
        .collect();
    validate_trace(&entries, variant, dialect)
}

/// Validates `(line, envelope)` pairs in file order.
pub fn validate_trace(
    entries: &[(usize, Envelope)],
    variant: ProtocolVariant,
    dialect: Dialect,
) -> ConformanceReport {
    let mut v = Validator {
        variant,
        dialect,
        convs: BTreeMap::new(),
        seen_ids: HashSet::new(),
        last_sent: None,
        last_delivery: HashMap::new(),
        violations: Vec::new(),
    };
    for (line, env) in entries {
        v.check(*line, env);
    }
    let conversations = v.convs.len();
    v.finish();
    ConformanceReport {
        envelopes: entries.len(),
        conversations,
        violations: v.violations,
    }
}

#[derive(Debug)]
struct Retired {
    holder: AgentId,
    attempt: u32,
    cutoff: Tick,
}

#[derive(Debug)]
struct Conversation {
    manager: AgentId,
    state: ContractState,
    attempt: u32,
    bid_spec: BidSpecification,
    expiration: BTreeMap<u32, Tick>,
    invited: BTreeMap<u32, BTreeSet<AgentId>>,
    responded: BTreeSet<(u32, AgentId)>,
    bids: Vec<Bid>,
    awarded: Option<AgentId>,
    award_line: usize,
    rejected: BTreeSet<AgentId>,
    revision: u32,
    confirmed: u32,
    pending: Vec<(u32, Tick, usize)>,
    cancel: Option<(Tick, usize)>,
    retired: Vec<Retired>,
    final_sent: Option<Tick>,
    last_line: usize,
}

impl Conversation {
    fn closed(&self) -> bool {
        self.state.is_terminal()
    }

    fn qualifying_bids(&self) -> Vec<Bid> {
        self.bids
            .iter()
            .filter(|b| self.bid_spec.max_cost.is_none_or(|m| b.cost <= m))
            .cloned()
            .collect()
    }
}

struct Validator {
    variant: ProtocolVariant,
    dialect: Dialect,
    convs: BTreeMap<String, Conversation>,
    seen_ids: HashSet<u64>,
    last_sent: Option<Tick>,
    last_delivery: HashMap<(AgentId, AgentId), Tick>,
    violations: Vec<Violation>,
}

fn manager_sends(p: Performative) -> bool {
    matches!(
        p,
        Performative::CallForProposals
            | Performative::AcceptProposal
            | Performative::RejectProposal
            | Performative::RequestChange
            | Performative::Cancel
    )
}

impl Validator {
    fn flag(&mut self, line: usize, rule: &'static str, detail: impl Into<String>) {
        self.violations.push(Violation {
            line,
            rule,
            detail: detail.into(),
        });
    }

    fn step(&mut self, key: &str, to: ContractState, line: usize) {
        let variant = self.variant;
        let conv = self.convs.get_mut(key).expect("known conversation");
        let from = conv.state;
        conv.state = to;
        if !validate_transition(from, to, variant) {
            self.flag(
                line,
                "transition",
                format!(
                    "{} -> {} is not allowed under the {} protocol",
                    from.as_str(),
                    to.as_str(),
                    variant
                ),
            );
        }
    }

    fn check(&mut self, line: usize, env: &Envelope) {
        if env.dialect != self.dialect {
            self.flag(
                line,
                "dialect",
                format!(
                    "keyword '{}' belongs to {}, trace is {}",
                    env.keyword(),
                    env.dialect.name(),
                    self.dialect.name()
                ),
            );
        }
        if env.delivered_at < env.sent_at {
            self.flag(
                line,
                "timing",
                format!(
                    "delivered at {} before it was sent at {}",
                    env.delivered_at, env.sent_at
                ),
            );
        }
        if !self.seen_ids.insert(env.msg_id) {
            self.flag(
                line,
                "unique-id",
                format!("message id {} repeats", env.msg_id),
            );
        }
        if let Some(prev) = self.last_sent {
            if env.sent_at < prev {
                self.flag(
                    line,
                    "send-order",
                    format!("sent at {} after a message sent at {prev}", env.sent_at),
                );
            }
        }
        self.last_sent = Some(self.last_sent.map_or(env.sent_at, |p| p.max(env.sent_at)));
        let link = (env.sender.clone(), env.receiver.clone());
        if let Some(&prev) = self.last_delivery.get(&link) {
            if env.delivered_at < prev {
                self.flag(
                    line,
                    "fifo",
                    format!(
                        "{} -> {} delivered at {} overtakes an earlier message delivered at {prev}",
                        env.sender, env.receiver, env.delivered_at
                    ),
                );
            }
        }
        let latest = self
            .last_delivery
            .get(&link)
            .copied()
            .unwrap_or(0)
            .max(env.delivered_at);
        self.last_delivery.insert(link, latest);

        let content = match env.content() {
            Ok(c) => c,
            Err(e) => {
                self.flag(line, "payload", e.to_string());
                return;
            }
        };
        let key = env.conversation_id.clone();
        if key != conversation_for(content.task_id()) {
            self.flag(
                line,
                "conversation",
                format!("conversation {key} carries task {}", content.task_id()),
            );
        }
        if let Some(conv) = self.convs.get(&key) {
            let manager = conv.manager.clone();
            if manager_sends(env.performative) {
                if env.sender != manager {
                    self.flag(
                        line,
                        "role",
                        format!(
                            "{} is sent by {}, not the manager {manager}",
                            env.keyword(),
                            env.sender
                        ),
                    );
                }
            } else if env.receiver != manager {
                self.flag(
                    line,
                    "role",
                    format!(
                        "{} must go to the manager {manager}, not {}",
                        env.keyword(),
                        env.receiver
                    ),
                );
            }
            if env.sender == env.receiver {
                self.flag(line, "role", format!("{} sends to itself", env.sender));
            }
        } else if env.performative != Performative::CallForProposals {
            self.flag(
                line,
                "opening",
                format!("{} before any call for proposals in {key}", env.keyword()),
            );
            return;
        }
        if let Some(conv) = self.convs.get_mut(&key) {
            conv.last_line = line;
        }
        match content {
            Content::Announce { task, attempt } => self.on_cfp(
                line,
                env,
                &key,
                task.bid_spec,
                task.expiration,
                task.revision,
                attempt,
            ),
            Content::Bid { bid, attempt } => self.on_response(line, env, &key, attempt, Some(bid)),
            Content::Refusal { attempt, .. } => self.on_response(line, env, &key, attempt, None),
            Content::Award {
                attempt, revision, ..
            } => self.on_accept(line, env, &key, attempt, revision),
            Content::Rejection { attempt, .. } => self.on_reject(line, env, &key, attempt),
            Content::Interim {
                report,
                attempt,
                revision,
            } => {
                if self.sent_by_holder(line, env, &key, attempt) {
                    if !(0.0..1.0).contains(&report.progress_fraction) {
                        self.flag(
                            line,
                            "progress",
                            format!(
                                "interim progress {} outside [0, 1)",
                                report.progress_fraction
                            ),
                        );
                    }
                    let confirmed = self.convs[&key].confirmed;
                    if revision != confirmed {
                        self.flag(
                            line,
                            "revision",
                            format!("report for revision {revision}, contractor holds revision {confirmed}"),
                        );
                    }
                }
            }
            Content::Final { report, attempt } => {
                if self.sent_by_holder(line, env, &key, attempt) {
                    let confirmed = self.convs[&key].confirmed;
                    if report.revision_completed != confirmed {
                        self.flag(
                            line,
                            "revision",
                            format!(
                                "final report for revision {}, contractor holds revision {confirmed}",
                                report.revision_completed
                            ),
                        );
                    }
                    self.convs.get_mut(&key).expect("known").final_sent = Some(env.sent_at);
                    self.step(&key, ContractState::Completed, line);
                }
            }
            Content::Failure { attempt, .. } => {
                if self.sent_by_holder(line, env, &key, attempt) {
                    self.step(&key, ContractState::Failed, line);
                }
            }
            Content::ChangeRequest { revision, .. } => {
                self.on_change_request(line, env, &key, revision)
            }
            Content::ChangeConfirm { revision, .. } => {
                let conv = self.convs.get_mut(&key).expect("known");
                if conv.awarded.as_ref() != Some(&env.sender) {
                    let who = env.sender.clone();
                    self.flag(
                        line,
                        "confirm",
                        format!("{who} confirms a change to a contract it does not hold"),
                    );
                } else if let Some(i) = conv.pending.iter().position(|p| p.0 == revision) {
                    conv.pending.remove(i);
                    conv.confirmed = revision;
                } else {
                    self.flag(
                        line,
                        "confirm",
                        format!("confirmation of revision {revision} that was never requested"),
                    );
                }
            }
            Content::Cancellation { attempt, .. } => {
                let conv = self.convs.get_mut(&key).expect("known");
                if conv.state != ContractState::InProgress
                    || conv.awarded.as_ref() != Some(&env.receiver)
                    || conv.attempt != attempt
                {
                    let detail = format!(
                        "cancel to {} which holds no running contract here",
                        env.receiver
                    );
                    self.flag(line, "cancel", detail);
                } else if conv.cancel.is_some() {
                    self.flag(line, "cancel", "contract cancelled twice");
                } else {
                    conv.cancel = Some((env.delivered_at, line));
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_cfp(
        &mut self,
        line: usize,
        env: &Envelope,
        key: &str,
        bid_spec: BidSpecification,
        expiration: Tick,
        revision: u32,
        attempt: u32,
    ) {
        if expiration <= env.sent_at {
            self.flag(
                line,
                "expiration",
                format!(
                    "expiration {expiration} is not after the announcement at {}",
                    env.sent_at
                ),
            );
        }
        if !self.convs.contains_key(key) {
            if attempt != 1 {
                self.flag(
                    line,
                    "attempt",
                    format!("conversation opens with attempt {attempt}"),
                );
            }
            self.convs.insert(
                key.to_owned(),
                Conversation {
                    manager: env.sender.clone(),
                    state: ContractState::Announced,
                    attempt,
                    bid_spec: bid_spec.clone(),
                    expiration: BTreeMap::new(),
                    invited: BTreeMap::new(),
                    responded: BTreeSet::new(),
                    bids: Vec::new(),
                    awarded: None,
                    award_line: 0,
                    rejected: BTreeSet::new(),
                    revision,
                    confirmed: revision,
                    pending: Vec::new(),
                    cancel: None,
                    retired: Vec::new(),
                    final_sent: None,
                    last_line: line,
                },
            );
            self.new_round(line, env, key, bid_spec, expiration, revision, attempt);
            return;
        }
        let conv = &self.convs[key];
        if conv.closed() {
            self.flag(
                line,
                "after-close",
                format!(
                    "call for proposals after the contract was {}",
                    conv.state.as_str()
                ),
            );
            return;
        }
        if attempt == conv.attempt {
            if conv.state != ContractState::Bidding {
                self.flag(
                    line,
                    "cfp",
                    format!(
                        "call for proposals while the contract is {}",
                        conv.state.as_str()
                    ),
                );
            }
            let conv = self.convs.get_mut(key).expect("known");
            if !conv
                .invited
                .entry(attempt)
                .or_default()
                .insert(env.receiver.clone())
            {
                let detail = format!("{} invited twice to attempt {attempt}", env.receiver);
                self.flag(line, "cfp", detail);
            }
            return;
        }
        if attempt != conv.attempt + 1 {
            let detail = format!(
                "call for proposals for attempt {attempt} while at attempt {}",
                conv.attempt
            );
            self.flag(line, "attempt", detail);
            return;
        }
        if conv.awarded.is_some() {
            if conv.cancel.is_none() {
                self.flag(
                    line,
                    "restart",
                    "contract re-announced without cancelling its contractor",
                );
            }
            self.step(key, ContractState::Announced, line);
            let conv = self.convs.get_mut(key).expect("known");
            let holder = conv.awarded.take().expect("checked");
            conv.retired.push(Retired {
                holder,
                attempt: conv.attempt,
                cutoff: conv.cancel.map_or(env.sent_at, |c| c.0),
            });
            conv.cancel = None;
            conv.pending.clear();
        } else {
            if !conv.qualifying_bids().is_empty() {
                self.flag(
                    line,
                    "retry",
                    "re-announced although qualifying bids were received",
                );
            }
            self.step(key, ContractState::BidProcessing, line);
            self.step(key, ContractState::Announced, line);
        }
        self.new_round(line, env, key, bid_spec, expiration, revision, attempt);
    }

    #[allow(clippy::too_many_arguments)]
    fn new_round(
        &mut self,
        line: usize,
        env: &Envelope,
        key: &str,
        bid_spec: BidSpecification,
        expiration: Tick,
        revision: u32,
        attempt: u32,
    ) {
        self.step(key, ContractState::Bidding, line);
        let conv = self.convs.get_mut(key).expect("known");
        conv.attempt = attempt;
        conv.bid_spec = bid_spec;
        conv.expiration.insert(attempt, expiration);
        conv.invited
            .insert(attempt, BTreeSet::from([env.receiver.clone()]));
        conv.bids.clear();
        conv.rejected.clear();
        conv.revision = revision;
        conv.confirmed = revision;
    }

    fn on_response(
        &mut self,
        line: usize,
        env: &Envelope,
        key: &str,
        attempt: u32,
        bid: Option<Bid>,
    ) {
        let conv = self.convs.get_mut(key).expect("known");
        if !conv
            .invited
            .get(&attempt)
            .is_some_and(|s| s.contains(&env.sender))
        {
            let detail = format!(
                "{} answers attempt {attempt} without being invited",
                env.sender
            );
            self.flag(line, "uninvited", detail);
            return;
        }
        if !conv.responded.insert((attempt, env.sender.clone())) {
            let detail = format!("{} answered attempt {attempt} twice", env.sender);
            self.flag(line, "duplicate-response", detail);
            return;
        }
        let Some(bid) = bid else { return };
        if bid.contractor_id != env.sender {
            let detail = format!(
                "bid names {} but was sent by {}",
                bid.contractor_id, env.sender
            );
            self.flag(line, "bid", detail);
            return;
        }
        let expiration = conv.expiration[&attempt];
        if env.sent_at > expiration {
            self.flag(
                line,
                "late-bid",
                format!("bid sent at {} after expiration {expiration}", env.sent_at),
            );
            return;
        }
        if attempt == conv.attempt
            && conv.state == ContractState::Bidding
            && env.delivered_at <= expiration
        {
            conv.bids.push(bid);
        }
    }

    fn on_accept(&mut self, line: usize, env: &Envelope, key: &str, attempt: u32, revision: u32) {
        let conv = &self.convs[key];
        if conv.state != ContractState::Bidding || conv.attempt != attempt {
            let detail = format!(
                "award for attempt {attempt} while the contract is {} at attempt {}",
                conv.state.as_str(),
                conv.attempt
            );
            self.flag(line, "accept", detail);
            return;
        }
        let expiration = conv.expiration[&attempt];
        let current_revision = conv.revision;
        let qualifying = conv.qualifying_bids();
        if env.sent_at <= expiration {
            self.flag(
                line,
                "early-award",
                format!(
                    "award sent at {} before bidding closed at {expiration}",
                    env.sent_at
                ),
            );
        }
        if revision != current_revision {
            let detail =
                format!("award carries revision {revision}, task is at {current_revision}");
            self.flag(line, "revision", detail);
        }
        if !qualifying.iter().any(|b| b.contractor_id == env.receiver) {
            let detail = format!("{} is awarded without a qualifying bid", env.receiver);
            self.flag(line, "accept", detail);
        } else if let Some(best) = rank_bids(&qualifying).ok().as_ref().and_then(select_award) {
            if best != env.receiver {
                let detail = format!(
                    "{} is awarded but the lowest qualifying bid came from {best}",
                    env.receiver
                );
                self.flag(line, "lowest-bid", detail);
            }
        }
        self.step(key, ContractState::BidProcessing, line);
        self.step(key, ContractState::Awarded, line);
        self.step(key, ContractState::InProgress, line);
        let conv = self.convs.get_mut(key).expect("known");
        conv.awarded = Some(env.receiver.clone());
        conv.award_line = line;
    }

    fn on_reject(&mut self, line: usize, env: &Envelope, key: &str, attempt: u32) {
        let conv = self.convs.get_mut(key).expect("known");
        if attempt != conv.attempt {
            let detail = format!(
                "rejection for attempt {attempt} while at attempt {}",
                conv.attempt
            );
            self.flag(line, "reject", detail);
            return;
        }
        if !conv.bids.iter().any(|b| b.contractor_id == env.receiver) {
            let detail = format!("{} is rejected without having bid in time", env.receiver);
            self.flag(line, "reject", detail);
            return;
        }
        if conv.awarded.as_ref() == Some(&env.receiver) {
            let detail = format!("{} is both awarded and rejected", env.receiver);
            self.flag(line, "reject", detail);
            return;
        }
        if !conv.rejected.insert(env.receiver.clone()) {
            let detail = format!("{} rejected twice", env.receiver);
            self.flag(line, "reject", detail);
        }
    }

    /// Checks a contractor report; false when it should be ignored.
    fn sent_by_holder(&mut self, line: usize, env: &Envelope, key: &str, attempt: u32) -> bool {
        let conv = &self.convs[key];
        if let Some(r) = conv
            .retired
            .iter()
            .find(|r| r.holder == env.sender && r.attempt == attempt)
        {
            if env.sent_at > r.cutoff {
                let detail = format!(
                    "{} reports after its contract was cancelled at {}",
                    env.sender, r.cutoff
                );
                self.flag(line, "after-cancel", detail);
            }
            return false;
        }
        if conv.closed() {
            let detail = format!(
                "{} after the contract was {}",
                env.keyword(),
                conv.state.as_str()
            );
            self.flag(line, "after-close", detail);
            return false;
        }
        if conv.awarded.as_ref() != Some(&env.sender) || conv.attempt != attempt {
            let detail = format!("{} reports on a contract it does not hold", env.sender);
            self.flag(line, "holder", detail);
            return false;
        }
        if let Some((cutoff, _)) = conv.cancel {
            if env.sent_at > cutoff {
                let detail = format!(
                    "{} reports after its contract was cancelled at {cutoff}",
                    env.sender
                );
                self.flag(line, "after-cancel", detail);
            }
            return false;
        }
        true
    }

    fn on_change_request(&mut self, line: usize, env: &Envelope, key: &str, revision: u32) {
        if self.variant == ProtocolVariant::Conventional {
            self.flag(
                line,
                "variant",
                "change requests are not part of the conventional protocol",
            );
            return;
        }
        let conv = &self.convs[key];
        if conv.state != ContractState::InProgress
            || conv.awarded.as_ref() != Some(&env.receiver)
            || conv.cancel.is_some()
        {
            let detail = format!(
                "change request to {} which holds no running contract here",
                env.receiver
            );
            self.flag(line, "change", detail);
            return;
        }
        if revision != conv.revision + 1 {
            let detail = format!(
                "change to revision {revision} from revision {}",
                conv.revision
            );
            self.flag(line, "revision", detail);
        }
        self.step(key, ContractState::InProgress, line);
        let conv = self.convs.get_mut(key).expect("known");
        conv.revision = revision;
        conv.pending.push((revision, env.delivered_at, line));
    }

    fn finish(&mut self) {
        let keys: Vec<String> = self.convs.keys().cloned().collect();
        for key in keys {
            let conv = &self.convs[&key];
            let last = conv.last_line;
            match conv.state {
                ContractState::Bidding => {
                    if conv.qualifying_bids().is_empty() {
                        self.step(&key, ContractState::BidProcessing, last);
                        self.step(&key, ContractState::Failed, last);
                    } else {
                        self.flag(
                            last,
                            "unanswered-bids",
                            format!("{key} ends with bids that were never evaluated"),
                        );
                    }
                }
                ContractState::InProgress => {
                    if let Some((_, cancel_line)) = conv.cancel {
                        self.step(&key, ContractState::Cancelled, cancel_line);
                    } else {
                        let detail = format!(
                            "{key} awarded to {} never reached a final report or failure",
                            conv.awarded.as_ref().map_or("?", |a| a.as_str())
                        );
                        let award_line = conv.award_line;
                        self.flag(award_line, "open-contract", detail);
                    }
                }
                _ => {}
            }
            let conv = &self.convs[&key];
            let stray: Vec<(u32, usize)> = conv
                .pending
                .iter()
                .filter(|(_, delivered, _)| conv.final_sent.is_none_or(|f| f >= *delivered))
                .map(|(r, _, l)| (*r, *l))
                .collect();
            let unanswered: Vec<AgentId> = conv
                .bids
                .iter()
                .map(|b| b.contractor_id.clone())
                .filter(|c| Some(c) != conv.awarded.as_ref() && !conv.rejected.contains(c))
                .collect();
            let award_line = conv.award_line;
            for (r, l) in stray {
                self.flag(
                    l,
                    "unconfirmed-change",
                    format!("change to revision {r} was never confirmed"),
                );
            }
            if award_line > 0 {
                for c in unanswered {
                    self.flag(
                        award_line,
                        "unanswered-bidder",
                        format!("{c} bid in time but was neither awarded nor rejected"),
                    );
                }
            }
        }
    }
}
