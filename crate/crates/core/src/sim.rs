//! Discrete-event plumbing: logical clock, seeded latency, an ordered event
//! queue and a reliable FIFO network between registered agents.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::messaging::{Dialect, Envelope};
use crate::protocol::{AgentId, Tick};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("no route to agent {0}")]
    UnknownAgent(AgentId),
    #[error("clock would move backwards from {now} to {to}")]
    ClockRegression { now: Tick, to: Tick },
    #[error("run exceeded {max_ticks} ticks (clock {now}); stuck: {}", stuck.join("; "))]
    Timeout {
        max_ticks: Tick,
        now: Tick,
        stuck: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now: Tick,
}

impl SimClock {
    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn advance_to(&mut self, to: Tick) -> Result<(), SimError> {
        if to < self.now {
            return Err(SimError::ClockRegression { now: self.now, to });
        }
        self.now = to;
        Ok(())
    }
}

/// Per-hop delay of `base` ticks plus up to `jitter` extra, drawn from a
/// seeded generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyModel {
    pub base: Tick,
    pub jitter: Tick,
    pub seed: u64,
}

impl LatencyModel {
    pub fn fixed(base: Tick) -> Self {
        LatencyModel {
            base,
            jitter: 0,
            seed: 0,
        }
    }

    /// Largest delay the model can produce.
    pub fn worst_case(&self) -> Tick {
        self.base + self.jitter
    }

    pub fn sampler(&self) -> SeededLatency {
        SeededLatency {
            model: *self,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        }
    }
}

/// Source of per-message delays.
pub trait LatencySource {
    fn sample(&mut self) -> Tick;
}

#[derive(Debug, Clone)]
pub struct SeededLatency {
    model: LatencyModel,
    rng: ChaCha8Rng,
}

impl LatencySource for SeededLatency {
    fn sample(&mut self) -> Tick {
        if self.model.jitter == 0 {
            return self.model.base;
        }
        self.model.base + self.rng.random_range(0..=self.model.jitter)
    }
}

/// Replays a fixed list of delays, cycling. Handy for tests.
#[derive(Debug, Clone)]
pub struct ScriptedLatency {
    delays: Vec<Tick>,
    next: usize,
}

impl ScriptedLatency {
    pub fn new(delays: Vec<Tick>) -> Self {
        assert!(
            !delays.is_empty(),
            "scripted latency needs at least one delay"
        );
        ScriptedLatency { delays, next: 0 }
    }
}

impl LatencySource for ScriptedLatency {
    fn sample(&mut self) -> Tick {
        let d = self.delays[self.next % self.delays.len()];
        self.next += 1;
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventKey {
    pub due: Tick,
    pub seq: u64,
}

/// Pending events ordered by `(due, insertion sequence)`.
#[derive(Debug, Clone)]
pub struct EventQueue<E> {
    pending: BTreeMap<EventKey, E>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            pending: BTreeMap::new(),
            next_seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, due: Tick, event: E) -> EventKey {
        let key = EventKey {
            due,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.pending.insert(key, event);
        key
    }

    pub fn pop(&mut self) -> Option<(EventKey, E)> {
        self.pending.pop_first()
    }

    pub fn peek_due(&self) -> Option<Tick> {
        self.pending.keys().next().map(|k| k.due)
    }

    pub fn cancel(&mut self, key: EventKey) -> Option<E> {
        self.pending.remove(&key)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EventKey, &E)> {
        self.pending.iter()
    }
}

/// Reliable, FIFO-per-link message transport over an [`EventQueue`].
///
/// Sending stamps the envelope with a fresh message id, the wire dialect and
/// its delivery time, then schedules it. A message never overtakes an earlier
/// one on the same ordered `(sender, receiver)` link.
pub struct Network {
    agents: BTreeSet<AgentId>,
    latency: Box<dyn LatencySource>,
    dialect: Dialect,
    last_delivery: HashMap<(AgentId, AgentId), Tick>,
    next_msg_id: u64,
}

impl Network {
    pub fn new(dialect: Dialect, latency: Box<dyn LatencySource>) -> Self {
        Network {
            agents: BTreeSet::new(),
            latency,
            dialect,
            last_delivery: HashMap::new(),
            next_msg_id: 1,
        }
    }

    pub fn register(&mut self, agent: AgentId) {
        self.agents.insert(agent);
    }

    pub fn dialect(&self) -> Dialect {
        self.dialect
    }

    pub fn knows(&self, agent: &AgentId) -> bool {
        self.agents.contains(agent)
    }

    pub fn send<E: From<Envelope>>(
        &mut self,
        mut envelope: Envelope,
        queue: &mut EventQueue<E>,
    ) -> Result<Envelope, SimError> {
        for id in [&envelope.sender, &envelope.receiver] {
            if !self.agents.contains(id) {
                return Err(SimError::UnknownAgent(id.clone()));
            }
        }
        let link = (envelope.sender.clone(), envelope.receiver.clone());
        let mut delivered_at = envelope.sent_at + self.latency.sample();
        if let Some(&prev) = self.last_delivery.get(&link) {
            delivered_at = delivered_at.max(prev);
        }
        self.last_delivery.insert(link, delivered_at);
        envelope.msg_id = self.next_msg_id;
        self.next_msg_id += 1;
        envelope.dialect = self.dialect;
        envelope.delivered_at = delivered_at;
        queue.push(delivered_at, E::from(envelope.clone()));
        Ok(envelope)
    }
}
