//! Performative-tagged envelopes, the two concrete keyword dialects, typed
//! message content, and the one-line trace wire format:
//!
//! ```text
//! msg_id|conversation_id|sender|receiver|keyword|sent_at|delivered_at|payload
//! ```
//!
//! Payloads are `key=value` pairs joined by `,`; values are percent-escaped.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, CONTROLS};
use thiserror::Error;

use crate::protocol::{
    AgentId, Bid, BidSpecification, FinalReport, InterimReport, TaskId, TaskSpec, Tick,
};

/// Default ceiling on the encoded payload length, in bytes.
pub const DEFAULT_MAX_PAYLOAD: usize = 4096;

const VALUE_ESCAPES: &AsciiSet = &CONTROLS.add(b'%').add(b'|').add(b',').add(b'=').add(b' ');

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("malformed {field}: {detail}")]
    Parse { field: &'static str, detail: String },
    #[error("unknown performative keyword '{0}'")]
    UnknownKeyword(String),
    #[error("payload of {len} bytes exceeds limit of {limit}")]
    PayloadTooLarge { len: usize, limit: usize },
    #[error("field {field} contains a reserved character: {value:?}")]
    ReservedCharacter { field: &'static str, value: String },
    #[error("payload for {performative} is missing key '{key}'")]
    MissingKey {
        performative: Performative,
        key: &'static str,
    },
    #[error("payload value for '{key}' is invalid: {value:?}")]
    BadValue { key: &'static str, value: String },
}

/// The closed set of abstract speech acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Performative {
    CallForProposals,
    Propose,
    Refuse,
    AcceptProposal,
    RejectProposal,
    Inform,
    RequestChange,
    Cancel,
    Failure,
    ConfirmChange,
}

impl Performative {
    pub const ALL: [Performative; 10] = [
        Performative::CallForProposals,
        Performative::Propose,
        Performative::Refuse,
        Performative::AcceptProposal,
        Performative::RejectProposal,
        Performative::Inform,
        Performative::RequestChange,
        Performative::Cancel,
        Performative::Failure,
        Performative::ConfirmChange,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Performative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

const ACL_F_KEYWORDS: [&str; 10] = [
    "cfp",
    "propose",
    "refuse",
    "accept-proposal",
    "reject-proposal",
    "inform",
    "request",
    "cancel",
    "failure",
    "confirm",
];

const ACL_K_KEYWORDS: [&str; 10] = [
    "achieve",
    "tell",
    "sorry",
    "accept",
    "decline",
    "reply",
    "ask-one",
    "untell",
    "error",
    "acknowledge",
];

/// A concrete surface vocabulary for the abstract performatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dialect {
    /// FIPA-ACL-like keywords.
    AclF,
    /// KQML-like keywords.
    AclK,
}

impl Dialect {
    pub const ALL: [Dialect; 2] = [Dialect::AclF, Dialect::AclK];

    pub fn name(self) -> &'static str {
        match self {
            Dialect::AclF => "ACL-F",
            Dialect::AclK => "ACL-K",
        }
    }

    /// Lower-case form used on the command line and in CSV output.
    pub fn slug(self) -> &'static str {
        match self {
            Dialect::AclF => "acl-f",
            Dialect::AclK => "acl-k",
        }
    }

    fn table(self) -> &'static [&'static str; 10] {
        match self {
            Dialect::AclF => &ACL_F_KEYWORDS,
            Dialect::AclK => &ACL_K_KEYWORDS,
        }
    }

    pub fn keyword(self, performative: Performative) -> &'static str {
        self.table()[performative.index()]
    }

    pub fn performative(self, keyword: &str) -> Option<Performative> {
        self.table()
            .iter()
            .position(|k| *k == keyword)
            .map(|i| Performative::ALL[i])
    }

    /// Looks a keyword up in every dialect. The tables are disjoint, so the
    /// answer is unique.
    pub fn resolve(keyword: &str) -> Option<(Dialect, Performative)> {
        Dialect::ALL
            .iter()
            .find_map(|d| d.performative(keyword).map(|p| (*d, p)))
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "acl-f" => Ok(Dialect::AclF),
            "acl-k" => Ok(Dialect::AclK),
            other => Err(format!(
                "unknown dialect '{other}' (expected acl-f or acl-k)"
            )),
        }
    }
}

/// Ordered `key=value` pairs. Keys may repeat.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Payload(Vec<(String, String)>);

impl Payload {
    pub fn new() -> Self {
        Payload(Vec::new())
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_owned(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.0
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.0
    }

    pub fn encode(&self) -> String {
        self.0
            .iter()
            .map(|(k, v)| format!("{}={}", k, utf8_percent_encode(v, VALUE_ESCAPES)))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse(text: &str) -> Result<Payload, CodecError> {
        if text.is_empty() {
            return Ok(Payload::new());
        }
        let mut pairs = Vec::new();
        for item in text.split(',') {
            let (k, v) = item.split_once('=').ok_or_else(|| CodecError::Parse {
                field: "payload",
                detail: format!("pair without '=': {item:?}"),
            })?;
            if k.is_empty() {
                return Err(CodecError::Parse {
                    field: "payload",
                    detail: "empty key".into(),
                });
            }
            let value = percent_decode_str(v)
                .decode_utf8()
                .map_err(|e| CodecError::Parse {
                    field: "payload",
                    detail: e.to_string(),
                })?;
            pairs.push((k.to_owned(), value.into_owned()));
        }
        Ok(Payload(pairs))
    }
}

/// One message between two agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub msg_id: u64,
    pub conversation_id: String,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub performative: Performative,
    pub dialect: Dialect,
    pub payload: Payload,
    pub sent_at: Tick,
    pub delivered_at: Tick,
}

impl Envelope {
    /// An unsent envelope. The network assigns id, dialect and delivery time.
    pub fn draft(
        conversation_id: impl Into<String>,
        sender: AgentId,
        receiver: AgentId,
        content: &Content,
        sent_at: Tick,
    ) -> Self {
        Envelope {
            msg_id: 0,
            conversation_id: conversation_id.into(),
            sender,
            receiver,
            performative: content.performative(),
            dialect: Dialect::AclF,
            payload: content.to_payload(),
            sent_at,
            delivered_at: sent_at,
        }
    }

    pub fn keyword(&self) -> &'static str {
        self.dialect.keyword(self.performative)
    }

    pub fn content(&self) -> Result<Content, CodecError> {
        Content::from_parts(self.performative, &self.payload)
    }

    /// Whether two envelopes agree on everything but the surface dialect.
    pub fn same_modulo_dialect(&self, other: &Envelope) -> bool {
        self.msg_id == other.msg_id
            && self.conversation_id == other.conversation_id
            && self.sender == other.sender
            && self.receiver == other.receiver
            && self.performative == other.performative
            && self.payload == other.payload
            && self.sent_at == other.sent_at
            && self.delivered_at == other.delivered_at
    }
}

/// Conversation id shared by every message about one task.
pub fn conversation_for(task_id: &TaskId) -> String {
    format!("cnv-{task_id}")
}

/// Line codec for envelopes.
#[derive(Debug, Clone, Copy)]
pub struct Codec {
    pub max_payload_bytes: usize,
}

impl Default for Codec {
    fn default() -> Self {
        Codec {
            max_payload_bytes: DEFAULT_MAX_PAYLOAD,
        }
    }
}

fn check_field(field: &'static str, value: &str) -> Result<(), CodecError> {
    if value.is_empty() || value.contains(['|', '\n', '\r']) {
        return Err(CodecError::ReservedCharacter {
            field,
            value: value.to_owned(),
        });
    }
    Ok(())
}

fn parse_u64(field: &'static str, raw: &str) -> Result<u64, CodecError> {
    raw.parse().map_err(|_| CodecError::Parse {
        field,
        detail: format!("expected unsigned integer, got {raw:?}"),
    })
}

impl Codec {
    /// Renders `envelope` with the keywords of `dialect`.
    pub fn encode(&self, envelope: &Envelope, dialect: Dialect) -> Result<String, CodecError> {
        check_field("conversation_id", &envelope.conversation_id)?;
        check_field("sender", envelope.sender.as_str())?;
        check_field("receiver", envelope.receiver.as_str())?;
        let payload = envelope.payload.encode();
        if payload.len() > self.max_payload_bytes {
            return Err(CodecError::PayloadTooLarge {
                len: payload.len(),
                limit: self.max_payload_bytes,
            });
        }
        Ok(format!(
            "{}|{}|{}|{}|{}|{}|{}|{}",
            envelope.msg_id,
            envelope.conversation_id,
            envelope.sender,
            envelope.receiver,
            dialect.keyword(envelope.performative),
            envelope.sent_at,
            envelope.delivered_at,
            payload
        ))
    }

    pub fn decode(&self, line: &str) -> Result<Envelope, CodecError> {
        const FIELDS: [&str; 8] = [
            "msg_id",
            "conversation_id",
            "sender",
            "receiver",
            "keyword",
            "sent_at",
            "delivered_at",
            "payload",
        ];
        let parts: Vec<&str> = line.splitn(8, '|').collect();
        if parts.len() < 8 {
            return Err(CodecError::Parse {
                field: FIELDS[parts.len()],
                detail: "line ends before this field".into(),
            });
        }
        if parts[7].len() > self.max_payload_bytes {
            return Err(CodecError::PayloadTooLarge {
                len: parts[7].len(),
                limit: self.max_payload_bytes,
            });
        }
        for (i, name) in [(1, "conversation_id"), (2, "sender"), (3, "receiver")] {
            if parts[i].is_empty() {
                return Err(CodecError::Parse {
                    field: name,
                    detail: "empty".into(),
                });
            }
        }
        let (dialect, performative) = Dialect::resolve(parts[4])
            .ok_or_else(|| CodecError::UnknownKeyword(parts[4].to_owned()))?;
        Ok(Envelope {
            msg_id: parse_u64("msg_id", parts[0])?,
            conversation_id: parts[1].to_owned(),
            sender: AgentId::new(parts[2]),
            receiver: AgentId::new(parts[3]),
            performative,
            dialect,
            sent_at: parse_u64("sent_at", parts[5])?,
            delivered_at: parse_u64("delivered_at", parts[6])?,
            payload: Payload::parse(parts[7])?,
        })
    }
}

pub fn encode(envelope: &Envelope, dialect: Dialect) -> Result<String, CodecError> {
    Codec::default().encode(envelope, dialect)
}

pub fn decode(line: &str) -> Result<Envelope, CodecError> {
    Codec::default().decode(line)
}

/// True iff both traces have the same length and match pairwise once the
/// dialect is erased.
pub fn dialect_equivalent(trace_f: &[Envelope], trace_k: &[Envelope]) -> bool {
    trace_f.len() == trace_k.len()
        && trace_f
            .iter()
            .zip(trace_k)
            .all(|(a, b)| a.same_modulo_dialect(b))
}

/// Typed view of a message payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Content {
    Announce {
        task: TaskSpec,
        attempt: u32,
    },
    Bid {
        bid: Bid,
        attempt: u32,
    },
    Refusal {
        task_id: TaskId,
        attempt: u32,
        reason: String,
    },
    Award {
        task_id: TaskId,
        attempt: u32,
        revision: u32,
        target: String,
    },
    Rejection {
        task_id: TaskId,
        attempt: u32,
    },
    Interim {
        report: InterimReport,
        attempt: u32,
        revision: u32,
    },
    Final {
        report: FinalReport,
        attempt: u32,
    },
    ChangeRequest {
        task_id: TaskId,
        target: String,
        bid_spec: Option<BidSpecification>,
        revision: u32,
    },
    ChangeConfirm {
        task_id: TaskId,
        revision: u32,
    },
    Cancellation {
        task_id: TaskId,
        attempt: u32,
        reason: String,
    },
    Failure {
        task_id: TaskId,
        attempt: u32,
        reason: String,
    },
}

impl Content {
    pub fn performative(&self) -> Performative {
        match self {
            Content::Announce { .. } => Performative::CallForProposals,
            Content::Bid { .. } => Performative::Propose,
            Content::Refusal { .. } => Performative::Refuse,
            Content::Award { .. } => Performative::AcceptProposal,
            Content::Rejection { .. } => Performative::RejectProposal,
            Content::Interim { .. } | Content::Final { .. } => Performative::Inform,
            Content::ChangeRequest { .. } => Performative::RequestChange,
            Content::ChangeConfirm { .. } => Performative::ConfirmChange,
            Content::Cancellation { .. } => Performative::Cancel,
            Content::Failure { .. } => Performative::Failure,
        }
    }

    pub fn task_id(&self) -> &TaskId {
        match self {
            Content::Announce { task, .. } => &task.task_id,
            Content::Bid { bid, .. } => &bid.task_id,
            Content::Interim { report, .. } => &report.task_id,
            Content::Final { report, .. } => &report.task_id,
            Content::Refusal { task_id, .. }
            | Content::Award { task_id, .. }
            | Content::Rejection { task_id, .. }
            | Content::ChangeRequest { task_id, .. }
            | Content::ChangeConfirm { task_id, .. }
            | Content::Cancellation { task_id, .. }
            | Content::Failure { task_id, .. } => task_id,
        }
    }

    /// Announcement round the message belongs to, when it carries one.
    pub fn attempt(&self) -> Option<u32> {
        match self {
            Content::Announce { attempt, .. }
            | Content::Bid { attempt, .. }
            | Content::Refusal { attempt, .. }
            | Content::Award { attempt, .. }
            | Content::Rejection { attempt, .. }
            | Content::Interim { attempt, .. }
            | Content::Final { attempt, .. }
            | Content::Cancellation { attempt, .. }
            | Content::Failure { attempt, .. } => Some(*attempt),
            Content::ChangeRequest { .. } | Content::ChangeConfirm { .. } => None,
        }
    }

    pub fn to_payload(&self) -> Payload {
        match self {
            Content::Announce { task, attempt } => {
                let mut p = Payload::new()
                    .with("task", &task.task_id)
                    .with("attempt", attempt)
                    .with("name", &task.name)
                    .with("abstraction", &task.abstraction);
                push_bid_spec(&mut p, &task.bid_spec);
                p.with("expiration", task.expiration)
                    .with("target", &task.target)
                    .with("revision", task.revision)
            }
            Content::Bid { bid, attempt } => Payload::new()
                .with("task", &bid.task_id)
                .with("attempt", attempt)
                .with("contractor", &bid.contractor_id)
                .with("cost", bid.cost)
                .with("submitted_at", bid.submitted_at),
            Content::Refusal {
                task_id,
                attempt,
                reason,
            }
            | Content::Cancellation {
                task_id,
                attempt,
                reason,
            }
            | Content::Failure {
                task_id,
                attempt,
                reason,
            } => Payload::new()
                .with("task", task_id)
                .with("attempt", attempt)
                .with("reason", reason),
            Content::Award {
                task_id,
                attempt,
                revision,
                target,
            } => Payload::new()
                .with("task", task_id)
                .with("attempt", attempt)
                .with("revision", revision)
                .with("target", target),
            Content::Rejection { task_id, attempt } => Payload::new()
                .with("task", task_id)
                .with("attempt", attempt),
            Content::Interim {
                report,
                attempt,
                revision,
            } => Payload::new()
                .with("kind", "interim")
                .with("task", &report.task_id)
                .with("attempt", attempt)
                .with("revision", revision)
                .with("contractor", &report.contractor_id)
                .with("progress", report.progress_fraction)
                .with("at", report.at),
            Content::Final { report, attempt } => Payload::new()
                .with("kind", "final")
                .with("task", &report.task_id)
                .with("attempt", attempt)
                .with("revision", report.revision_completed)
                .with("contractor", &report.contractor_id)
                .with("deadline", report.deadline)
                .with("completed_at", report.completed_at),
            Content::ChangeRequest {
                task_id,
                target,
                bid_spec,
                revision,
            } => {
                let mut p = Payload::new()
                    .with("task", task_id)
                    .with("revision", revision)
                    .with("target", target);
                if let Some(spec) = bid_spec {
                    p.push("respec", "true");
                    push_bid_spec(&mut p, spec);
                }
                p
            }
            Content::ChangeConfirm { task_id, revision } => Payload::new()
                .with("task", task_id)
                .with("revision", revision),
        }
    }

    pub fn from_parts(performative: Performative, p: &Payload) -> Result<Content, CodecError> {
        let req = |key: &'static str| {
            p.get(key)
                .ok_or(CodecError::MissingKey { performative, key })
        };
        let num = |key: &'static str| -> Result<u64, CodecError> {
            let raw = req(key)?;
            raw.parse().map_err(|_| CodecError::BadValue {
                key,
                value: raw.to_owned(),
            })
        };
        let small = |key: &'static str| -> Result<u32, CodecError> {
            let raw = req(key)?;
            raw.parse().map_err(|_| CodecError::BadValue {
                key,
                value: raw.to_owned(),
            })
        };
        let float = |key: &'static str| -> Result<f64, CodecError> {
            let raw = req(key)?;
            raw.parse().map_err(|_| CodecError::BadValue {
                key,
                value: raw.to_owned(),
            })
        };
        let task_id = || req("task").map(TaskId::new);
        let attempt = || small("attempt");
        Ok(match performative {
            Performative::CallForProposals => Content::Announce {
                task: TaskSpec {
                    task_id: task_id()?,
                    name: req("name")?.to_owned(),
                    abstraction: req("abstraction")?.to_owned(),
                    bid_spec: read_bid_spec(p)?,
                    expiration: num("expiration")?,
                    target: req("target")?.to_owned(),
                    revision: small("revision")?,
                },
                attempt: attempt()?,
            },
            Performative::Propose => {
                let cost = float("cost")?;
                let bid = Bid::new(
                    task_id()?,
                    AgentId::new(req("contractor")?),
                    cost,
                    num("submitted_at")?,
                )
                .map_err(|_| CodecError::BadValue {
                    key: "cost",
                    value: cost.to_string(),
                })?;
                Content::Bid {
                    bid,
                    attempt: attempt()?,
                }
            }
            Performative::Refuse => Content::Refusal {
                task_id: task_id()?,
                attempt: attempt()?,
                reason: req("reason")?.to_owned(),
            },
            Performative::AcceptProposal => Content::Award {
                task_id: task_id()?,
                attempt: attempt()?,
                revision: small("revision")?,
                target: req("target")?.to_owned(),
            },
            Performative::RejectProposal => Content::Rejection {
                task_id: task_id()?,
                attempt: attempt()?,
            },
            Performative::Inform => match req("kind")? {
                "interim" => Content::Interim {
                    report: InterimReport {
                        task_id: task_id()?,
                        contractor_id: AgentId::new(req("contractor")?),
                        progress_fraction: float("progress")?,
                        at: num("at")?,
                    },
                    attempt: attempt()?,
                    revision: small("revision")?,
                },
                "final" => Content::Final {
                    report: FinalReport {
                        task_id: task_id()?,
                        contractor_id: AgentId::new(req("contractor")?),
                        deadline: num("deadline")?,
                        completed_at: num("completed_at")?,
                        revision_completed: small("revision")?,
                    },
                    attempt: attempt()?,
                },
                other => {
                    return Err(CodecError::BadValue {
                        key: "kind",
                        value: other.to_owned(),
                    })
                }
            },
            Performative::RequestChange => Content::ChangeRequest {
                task_id: task_id()?,
                target: req("target")?.to_owned(),
                bid_spec: match p.get("respec") {
                    Some(_) => Some(read_bid_spec(p)?),
                    None => None,
                },
                revision: small("revision")?,
            },
            Performative::ConfirmChange => Content::ChangeConfirm {
                task_id: task_id()?,
                revision: small("revision")?,
            },
            Performative::Cancel => Content::Cancellation {
                task_id: task_id()?,
                attempt: attempt()?,
                reason: req("reason")?.to_owned(),
            },
            Performative::Failure => Content::Failure {
                task_id: task_id()?,
                attempt: attempt()?,
                reason: req("reason")?.to_owned(),
            },
        })
    }
}

fn push_bid_spec(p: &mut Payload, spec: &BidSpecification) {
    for cap in &spec.required_capabilities {
        p.push("cap", cap);
    }
    if let Some(max) = spec.max_cost {
        p.push("max_cost", max);
    }
}

fn read_bid_spec(p: &Payload) -> Result<BidSpecification, CodecError> {
    let required_capabilities: BTreeSet<String> = p.get_all("cap").map(str::to_owned).collect();
    let max_cost = match p.get("max_cost") {
        None => None,
        Some(raw) => Some(raw.parse::<f64>().map_err(|_| CodecError::BadValue {
            key: "max_cost",
            value: raw.to_owned(),
        })?),
    };
    Ok(BidSpecification {
        required_capabilities,
        max_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_task() -> TaskSpec {
        TaskSpec {
            task_id: TaskId::from("task-01"),
            name: "capture prey-01".into(),
            abstraction: "chase, corner | capture = 100%".into(),
            bid_spec: BidSpecification::requiring(["chase"]).with_max_cost(12.5),
            expiration: 2,
            target: "prey-01".into(),
            revision: 0,
        }
    }

    fn cfp() -> Envelope {
        let content = Content::Announce {
            task: sample_task(),
            attempt: 1,
        };
        let mut e = Envelope::draft(
            "cnv-task-01",
            AgentId::from("predator-00"),
            AgentId::from("predator-01"),
            &content,
            0,
        );
        e.msg_id = 1;
        e.delivered_at = 1;
        e
    }

    #[test]
    fn dialect_tables_are_total_and_injective() {
        for d in Dialect::ALL {
            let kws: BTreeSet<_> = Performative::ALL.iter().map(|p| d.keyword(*p)).collect();
            assert_eq!(kws.len(), Performative::ALL.len());
            for p in Performative::ALL {
                assert_eq!(d.performative(d.keyword(p)), Some(p));
            }
        }
        // Disjoint across dialects, so decoding can infer the dialect.
        for p in Performative::ALL {
            for q in Performative::ALL {
                assert_ne!(Dialect::AclF.keyword(p), Dialect::AclK.keyword(q));
            }
        }
    }

    #[test]
    fn cfp_keyword_per_dialect() {
        let e = cfp();
        let f = encode(&e, Dialect::AclF).unwrap();
        assert!(f.split('|').nth(4) == Some("cfp"));
        let k = encode(&e, Dialect::AclK).unwrap();
        assert!(k.split('|').nth(4) == Some("achieve"));

        let back_f = decode(&f).unwrap();
        let back_k = decode(&k).unwrap();
        assert_eq!(back_f, e);
        assert_eq!(back_k.dialect, Dialect::AclK);
        assert!(back_f.same_modulo_dialect(&back_k));
        assert_eq!(back_f.content().unwrap(), e.content().unwrap());
    }

    #[test]
    fn golden_line() {
        let line = encode(&cfp(), Dialect::AclF).unwrap();
        assert_eq!(
            line,
            "1|cnv-task-01|predator-00|predator-01|cfp|0|1|task=task-01,attempt=1,\
             name=capture%20prey-01,abstraction=chase%2C%20corner%20%7C%20capture%20%3D%20100%25,\
             cap=chase,max_cost=12.5,expiration=2,target=prey-01,revision=0"
        );
    }

    #[test]
    fn unknown_keyword_is_a_dialect_error() {
        let line = "1|c|a|b|frobnicate|0|1|task=t";
        assert_eq!(
            decode(line),
            Err(CodecError::UnknownKeyword("frobnicate".into()))
        );
    }

    #[test]
    fn truncated_line_names_missing_field() {
        let line = encode(&cfp(), Dialect::AclF).unwrap();
        let cut: String = line.split('|').take(5).collect::<Vec<_>>().join("|");
        assert!(matches!(
            decode(&cut),
            Err(CodecError::Parse {
                field: "sent_at",
                ..
            })
        ));
        assert!(matches!(
            decode("7|c|a|b|cfp|x|1|"),
            Err(CodecError::Parse {
                field: "sent_at",
                ..
            })
        ));
    }

    #[test]
    fn oversized_payload_rejected() {
        let codec = Codec {
            max_payload_bytes: 16,
        };
        assert!(matches!(
            codec.encode(&cfp(), Dialect::AclF),
            Err(CodecError::PayloadTooLarge { limit: 16, .. })
        ));
    }

    #[test]
    fn pipe_in_agent_id_rejected() {
        let mut e = cfp();
        e.sender = AgentId::from("a|b");
        assert!(matches!(
            encode(&e, Dialect::AclF),
            Err(CodecError::ReservedCharacter {
                field: "sender",
                ..
            })
        ));
    }

    #[test]
    fn equivalence_examples() {
        let a = vec![cfp()];
        let mut b = a.clone();
        b[0].dialect = Dialect::AclK;
        assert!(dialect_equivalent(&a, &b));
        assert!(dialect_equivalent(&a, &a));
        assert!(!dialect_equivalent(&a, &[]));
        b[0].sent_at = 9;
        assert!(!dialect_equivalent(&a, &b));
    }

    #[test]
    fn every_content_round_trips_through_payload() {
        let t = TaskId::from("task-02");
        let c = AgentId::from("predator-03");
        let samples = vec![
            Content::Announce {
                task: sample_task(),
                attempt: 3,
            },
            Content::Bid {
                bid: Bid::new(t.clone(), c.clone(), 7.0, 4).unwrap(),
                attempt: 1,
            },
            Content::Refusal {
                task_id: t.clone(),
                attempt: 1,
                reason: "expired".into(),
            },
            Content::Award {
                task_id: t.clone(),
                attempt: 1,
                revision: 0,
                target: "prey-02".into(),
            },
            Content::Rejection {
                task_id: t.clone(),
                attempt: 2,
            },
            Content::Interim {
                report: InterimReport {
                    task_id: t.clone(),
                    contractor_id: c.clone(),
                    progress_fraction: 0.30000000000000004,
                    at: 9,
                },
                attempt: 1,
                revision: 1,
            },
            Content::Final {
                report: FinalReport {
                    task_id: t.clone(),
                    contractor_id: c.clone(),
                    deadline: 14,
                    completed_at: 13,
                    revision_completed: 1,
                },
                attempt: 1,
            },
            Content::ChangeRequest {
                task_id: t.clone(),
                target: "prey-04".into(),
                bid_spec: None,
                revision: 1,
            },
            Content::ChangeRequest {
                task_id: t.clone(),
                target: "prey-04".into(),
                bid_spec: Some(BidSpecification::default()),
                revision: 2,
            },
            Content::ChangeConfirm {
                task_id: t.clone(),
                revision: 1,
            },
            Content::Cancellation {
                task_id: t.clone(),
                attempt: 1,
                reason: "task changed".into(),
            },
            Content::Failure {
                task_id: t,
                attempt: 1,
                reason: "prey escaped".into(),
            },
        ];
        for content in samples {
            let payload = Payload::parse(&content.to_payload().encode()).unwrap();
            assert_eq!(
                Content::from_parts(content.performative(), &payload).unwrap(),
                content
            );
        }
    }

    #[test]
    fn missing_payload_key_reported() {
        let p = Payload::new().with("task", "t");
        assert_eq!(
            Content::from_parts(Performative::Refuse, &p),
            Err(CodecError::MissingKey {
                performative: Performative::Refuse,
                key: "attempt"
            })
        );
    }
}
