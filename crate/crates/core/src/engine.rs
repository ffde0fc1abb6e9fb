//! The event loop tying agents, network and pursuit arena together.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::agents::{ContractorAgent, ManagerAgent};
use crate::config::{ConfigError, RunConfig};
use crate::messaging::{CodecError, Content, Dialect, Envelope};
use crate::metrics::{summarize, ExperimentReport};
use crate::protocol::{
    AgentId, ChangeOutcome, ChangeRequest, ContractRecord, ProtocolError, ProtocolVariant, TaskId,
    TaskSpec, Tick,
};
use crate::scenario::{ExperimentPlanner, PreyStatus, Scenario, ScenarioError, WorldEvent};
use crate::sim::{EventQueue, LatencySource, Network, SimClock, SimError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

impl RunError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, RunError::Sim(SimError::Timeout { .. }))
    }
}

#[derive(Debug, Clone)]
pub enum Event {
    Deliver(Envelope),
    Deadline { task_id: TaskId, attempt: u32 },
    Tick,
    Change(usize),
}

impl From<Envelope> for Event {
    fn from(e: Envelope) -> Self {
        Event::Deliver(e)
    }
}

/// A change injection that did not meet a running contract.
#[derive(Debug, Clone, PartialEq)]
pub struct MissedChange {
    pub task_id: TaskId,
    pub tick: Tick,
    pub detail: String,
}

pub struct Simulation {
    clock: SimClock,
    queue: EventQueue<Event>,
    network: Network,
    manager: ManagerAgent,
    contractors: BTreeMap<AgentId, ContractorAgent>,
    scenario: Scenario,
    trace: Vec<Envelope>,
    tick_pending: bool,
    started: bool,
    outcomes: Vec<(TaskId, ChangeOutcome)>,
    missed: Vec<MissedChange>,
    ignored: usize,
}

impl Simulation {
    pub fn new(scenario: Scenario, config: &RunConfig) -> Self {
        let latency = Box::new(config.latency_model().sampler());
        Self::with_latency(scenario, config, latency)
    }

    pub fn with_latency(
        scenario: Scenario,
        config: &RunConfig,
        latency: Box<dyn LatencySource>,
    ) -> Self {
        let mut network = Network::new(config.dialect, latency);
        network.register(scenario.manager.clone());
        let mut contractors = BTreeMap::new();
        for profile in &scenario.contractors {
            network.register(profile.id.clone());
            contractors.insert(
                profile.id.clone(),
                ContractorAgent::new(
                    profile.id.clone(),
                    profile.capabilities.clone(),
                    config.work_rate,
                    config.report_interval,
                    config.progress_policy,
                ),
            );
        }
        let manager = ManagerAgent::new(
            scenario.manager.clone(),
            config.variant,
            config.retry_budget,
            config.effective_bid_window(),
            scenario.contractors.iter().map(|c| c.id.clone()).collect(),
        );
        Simulation {
            clock: SimClock::default(),
            queue: EventQueue::new(),
            network,
            manager,
            contractors,
            scenario,
            trace: Vec::new(),
            tick_pending: false,
            started: false,
            outcomes: Vec::new(),
            missed: Vec::new(),
            ignored: 0,
        }
    }

    pub fn now(&self) -> Tick {
        self.clock.now()
    }

    pub fn variant(&self) -> ProtocolVariant {
        self.manager.variant()
    }

    pub fn dialect(&self) -> Dialect {
        self.network.dialect()
    }

    pub fn trace(&self) -> &[Envelope] {
        &self.trace
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn manager(&self) -> &ManagerAgent {
        &self.manager
    }

    /// Outcome of every change injection that reached a contract, in injection order.
    pub fn change_outcomes(&self) -> &[(TaskId, ChangeOutcome)] {
        &self.outcomes
    }

    /// Change injections that found no awarded contract.
    pub fn missed_changes(&self) -> &[MissedChange] {
        &self.missed
    }

    /// Messages delivered to an agent that no longer had a use for them.
    pub fn ignored_messages(&self) -> usize {
        self.ignored
    }

    fn start(&mut self) -> Result<(), RunError> {
        self.started = true;
        let tasks: Vec<TaskSpec> = self.scenario.tasks.clone();
        for task in tasks {
            let out = self.manager.announce(task, 0)?;
            self.send_all(out)?;
        }
        self.schedule_deadlines();
        for (i, inj) in self.scenario.schedule.injections().iter().enumerate() {
            self.queue.push(inj.tick, Event::Change(i));
        }
        Ok(())
    }

    /// Processes events in order until none remain.
    ///
    /// Returns the final clock. Fails with a timeout if an event is due after
    /// `max_ticks`; the error lists every contract still open.
    pub fn run_until_quiescent(&mut self, max_ticks: Tick) -> Result<Tick, RunError> {
        if !self.started {
            self.start()?;
        }
        while let Some(due) = self.queue.peek_due() {
            if due > max_ticks {
                return Err(SimError::Timeout {
                    max_ticks,
                    now: self.clock.now(),
                    stuck: self.stuck(),
                }
                .into());
            }
            let (key, event) = self.queue.pop().expect("peeked");
            self.clock.advance_to(key.due)?;
            self.handle(event)?;
        }
        Ok(self.clock.now())
    }

    fn stuck(&self) -> Vec<String> {
        self.manager
            .contracts()
            .filter(|r| !r.state().is_terminal())
            .map(|r| {
                format!(
                    "{} {} (attempt {}, {} retries)",
                    r.task_id(),
                    r.state().as_str(),
                    r.attempt,
                    r.retries_used
                )
            })
            .collect()
    }

    fn send_all(&mut self, out: Vec<Envelope>) -> Result<(), RunError> {
        for env in out {
            let sent = self.network.send(env, &mut self.queue)?;
            self.trace.push(sent);
        }
        Ok(())
    }

    fn schedule_deadlines(&mut self) {
        for d in self.manager.take_deadlines() {
            self.queue.push(
                d.due,
                Event::Deadline {
                    task_id: d.task_id,
                    attempt: d.attempt,
                },
            );
        }
    }

    fn ensure_tick(&mut self) {
        if !self.tick_pending {
            self.tick_pending = true;
            self.queue.push(self.clock.now() + 1, Event::Tick);
        }
    }

    fn handle(&mut self, event: Event) -> Result<(), RunError> {
        let now = self.clock.now();
        match event {
            Event::Deliver(env) => {
                if env.receiver == *self.manager.id() {
                    self.deliver_to_manager(env)
                } else {
                    self.deliver_to_contractor(env)
                }
            }
            Event::Deadline { task_id, attempt } => {
                let out = self.manager.on_deadline(&task_id, attempt, now)?;
                self.send_all(out)?;
                self.schedule_deadlines();
                Ok(())
            }
            Event::Tick => self.tick(),
            Event::Change(i) => self.inject_change(i),
        }
    }

    fn deliver_to_manager(&mut self, env: Envelope) -> Result<(), RunError> {
        let now = self.clock.now();
        let used = match env.content()? {
            Content::Bid { bid, attempt } => self.manager.on_bid(bid, attempt, env.delivered_at),
            Content::Refusal { .. } | Content::ChangeConfirm { .. } => true,
            Content::Interim {
                report, attempt, ..
            } => self.manager.on_interim(report, attempt),
            Content::Final { report, attempt } => self.manager.on_final(report, attempt, now)?,
            Content::Failure {
                task_id, attempt, ..
            } => self
                .manager
                .on_failure(&task_id, &env.sender, attempt, now)?,
            _ => false,
        };
        if !used {
            self.ignored += 1;
        }
        Ok(())
    }

    fn deliver_to_contractor(&mut self, env: Envelope) -> Result<(), RunError> {
        let now = self.clock.now();
        let content = env.content()?;
        let Some(contractor) = self.contractors.get_mut(&env.receiver) else {
            return Err(SimError::UnknownAgent(env.receiver.clone()).into());
        };
        match content {
            Content::Announce { task, attempt } => {
                let cost = self
                    .scenario
                    .world
                    .pursuit_cost(contractor.id(), &task.target)
                    .ok()
                    .map(f64::from);
                let reply = contractor.on_cfp(&env.sender, &task, attempt, cost, now);
                self.send_all(vec![reply])?;
            }
            Content::Award {
                task_id,
                attempt,
                revision,
                target,
            } => {
                contractor.on_award(&env.sender, &task_id, attempt, revision, &target, now);
                self.manager.on_award_delivered(&task_id, attempt, now)?;
                self.ensure_tick();
            }
            Content::Rejection { .. } => {}
            Content::ChangeRequest {
                task_id,
                target,
                bid_spec,
                revision,
            } => match contractor.on_change(&task_id, &target, bid_spec.as_ref(), revision, now) {
                Some(confirm) => self.send_all(vec![confirm])?,
                None => {
                    self.ignored += 1;
                    self.missed.push(MissedChange {
                        task_id,
                        tick: now,
                        detail: "contractor had already finished".into(),
                    });
                }
            },
            Content::Cancellation {
                task_id, attempt, ..
            } => {
                if !contractor.on_cancel(&task_id, attempt) {
                    self.ignored += 1;
                    self.missed.push(MissedChange {
                        task_id,
                        tick: now,
                        detail: "contractor had already finished".into(),
                    });
                }
            }
            _ => self.ignored += 1,
        }
        Ok(())
    }

    fn tick(&mut self) -> Result<(), RunError> {
        self.tick_pending = false;
        let now = self.clock.now();
        for c in self.contractors.values() {
            self.scenario.world.set_target(c.id(), c.pursuit_target())?;
        }
        let events = self.scenario.world.step();
        let mut out = Vec::new();
        for event in events {
            if let WorldEvent::Escaped { prey } = event {
                for c in self.contractors.values_mut() {
                    for task in c.tasks_in_award_order() {
                        if c.active()[&task].target == prey {
                            out.extend(c.abandon(&task, "target escaped", now));
                        }
                    }
                }
            }
        }
        for c in self.contractors.values_mut() {
            for task in c.tasks_in_award_order() {
                let target = c.active()[&task].target.clone();
                let captured = matches!(
                    self.scenario.world.prey(&target).map(|p| &p.status),
                    Some(PreyStatus::Captured { .. })
                );
                let msg = if captured {
                    c.complete_now(&task, now)
                } else {
                    c.execute_tick(&task, now)
                };
                out.extend(msg);
            }
        }
        self.send_all(out)?;
        if self.contractors.values().any(ContractorAgent::is_busy) {
            self.ensure_tick();
        }
        Ok(())
    }

    fn inject_change(&mut self, i: usize) -> Result<(), RunError> {
        let now = self.clock.now();
        let inj = self.scenario.schedule.injections()[i].clone();
        let request = ChangeRequest {
            task_id: inj.task_id.clone(),
            new_target: inj.new_target.clone(),
            new_bid_spec: None,
            requested_at: now,
        };
        match self.manager.request_change(request, now) {
            Ok((outcome, out)) => {
                self.outcomes.push((inj.task_id.clone(), outcome));
                if outcome == ChangeOutcome::RejectedTooLate {
                    self.missed.push(MissedChange {
                        task_id: inj.task_id,
                        tick: now,
                        detail: "contract already completed".into(),
                    });
                }
                self.send_all(out)?;
                self.schedule_deadlines();
                Ok(())
            }
            Err(ProtocolError::ChangeNotApplicable(state)) => {
                self.missed.push(MissedChange {
                    task_id: inj.task_id,
                    tick: now,
                    detail: format!("contract was {}", state.as_str()),
                });
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn into_contracts(self) -> Vec<ContractRecord> {
        self.manager.into_contracts()
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: RunConfig,
    pub trace: Vec<Envelope>,
    pub contracts: Vec<ContractRecord>,
    pub final_clock: Tick,
    pub report: ExperimentReport,
    pub change_outcomes: Vec<(TaskId, ChangeOutcome)>,
    pub missed_changes: Vec<MissedChange>,
}

/// Schedule draws tried before giving up on an experiment.
pub const MAX_SCHEDULE_DRAWS: usize = 64;

/// Builds the configured experiment. Change schedules are redrawn until
/// every change meets a running contract under both protocol variants, so
/// paired runs always share one schedule.
pub fn plan_experiment(config: &RunConfig) -> Result<Scenario, RunError> {
    config.validate()?;
    let mut planner = ExperimentPlanner::new(&config.experiment_params())?;
    if config.changes == 0 {
        return Ok(planner.draw()?);
    }
    for _ in 0..MAX_SCHEDULE_DRAWS {
        let scenario = planner.draw()?;
        let mut lands = true;
        for variant in ProtocolVariant::ALL {
            let probe = RunConfig {
                variant,
                ..config.clone()
            };
            let mut sim = Simulation::new(scenario.clone(), &probe);
            sim.run_until_quiescent(config.max_ticks)?;
            lands &= sim.missed.is_empty();
        }
        if lands {
            return Ok(scenario);
        }
    }
    Err(ScenarioError::NoViableSchedule {
        draws: MAX_SCHEDULE_DRAWS,
    }
    .into())
}

/// Builds the configured experiment and runs it to completion.
pub fn run(config: &RunConfig) -> Result<RunResult, RunError> {
    let scenario = plan_experiment(config)?;
    run_scenario(config, scenario)
}

/// Runs a prepared scenario under `config`'s protocol settings.
pub fn run_scenario(config: &RunConfig, scenario: Scenario) -> Result<RunResult, RunError> {
    let mut sim = Simulation::new(scenario, config);
    let final_clock = sim.run_until_quiescent(config.max_ticks)?;
    let trace = sim.trace.clone();
    let change_outcomes = sim.outcomes.clone();
    let missed_changes = sim.missed.clone();
    let contracts = sim.into_contracts();
    let report = summarize(
        config.variant,
        config.dialect,
        &config.scenario_hash(),
        &trace,
        &contracts,
        final_clock,
    );
    Ok(RunResult {
        config: config.clone(),
        trace,
        contracts,
        final_clock,
        report,
        change_outcomes,
        missed_changes,
    })
}
