//! Message model, queue files and the ordering engine.
//!
//! Orderings are deterministic functions of the queue and a seed: the
//! shuffle and latency model draw from [`Rng`], a SplitMix64 stream.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::cells::{Cell, CellError, Slice};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// One SplitMix64 output for state `x`; used to derive independent seeds.
pub fn mix(x: u64) -> u64 {
    Rng::new(x).next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    #[serde(rename = "internal")]
    Internal,
    #[serde(rename = "external-in")]
    ExternalIn,
}

impl MessageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MessageKind::Internal => "internal",
            MessageKind::ExternalIn => "external-in",
        }
    }

    pub fn parse(text: &str) -> Option<MessageKind> {
        match text {
            "internal" => Some(MessageKind::Internal),
            "external-in" => Some(MessageKind::ExternalIn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub id: u64,
    pub kind: MessageKind,
    pub body: Cell,
    /// Attached value in nanotokens (always 0 for external-in).
    pub value: u128,
    pub sender_id: u64,
    pub name: Option<String>,
    pub bounceable: bool,
}

impl Message {
    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or("-")
    }
}

/// Address cell for a numeric sender: the id as 64-bit big-endian.
pub fn address_cell(sender_id: u64) -> Cell {
    Cell::from_uint(sender_id as u128, 64).expect("64 bits fit")
}

pub fn address_slice(sender_id: u64) -> Slice {
    Slice::new(address_cell(sender_id))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueueError {
    #[error("invalid queue JSON: {0}")]
    Json(String),
    #[error("message {index}: {message}")]
    Element { index: usize, message: String },
    #[error("duplicate message id {0}")]
    DuplicateId(u64),
    #[error("invalid explicit order: {0}")]
    InvalidPermutation(String),
    #[error("invalid policy: {0}")]
    Policy(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoins {
    coins: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMessage {
    id: Option<u64>,
    #[serde(rename = "type")]
    kind: Option<String>,
    body: String,
    value: Option<RawCoins>,
    #[serde(rename = "senderId")]
    sender_id: Option<u64>,
    name: Option<String>,
    bounceable: Option<bool>,
}

/// Parses a queue file. See [`parse_queue_with`].
pub fn parse_queue(json: &str, rng: &mut Rng) -> Result<Vec<Message>, QueueError> {
    parse_queue_with(json, rng, &BTreeSet::new())
}

/// Parses a queue file whose ids must also avoid `taken`.
///
/// Missing ids get the smallest unused positive id, missing sender ids are
/// drawn from `rng`, missing types default to internal.
pub fn parse_queue_with(
    json: &str,
    rng: &mut Rng,
    taken: &BTreeSet<u64>,
) -> Result<Vec<Message>, QueueError> {
    let elements: Vec<Json> = serde_json::from_str(json).map_err(|e| QueueError::Json(e.to_string()))?;
    let mut raws = Vec::with_capacity(elements.len());
    for (index, element) in elements.into_iter().enumerate() {
        let raw: RawMessage = serde_json::from_value(element)
            .map_err(|e| QueueError::Element { index, message: e.to_string() })?;
        raws.push(raw);
    }

    let mut used = taken.clone();
    for raw in &raws {
        if let Some(id) = raw.id {
            if !used.insert(id) {
                return Err(QueueError::DuplicateId(id));
            }
        }
    }

    let mut next_free = 1u64;
    let mut out = Vec::with_capacity(raws.len());
    for (index, raw) in raws.into_iter().enumerate() {
        let bad = |message: String| QueueError::Element { index, message };
        let id = match raw.id {
            Some(id) => id,
            None => {
                while used.contains(&next_free) {
                    next_free += 1;
                }
                used.insert(next_free);
                next_free
            }
        };
        let kind = match raw.kind.as_deref() {
            None => MessageKind::Internal,
            Some(t) => MessageKind::parse(t).ok_or_else(|| bad(format!("unknown type '{t}'")))?,
        };
        let body = Cell::from_base64(&raw.body).map_err(|e: CellError| bad(format!("body: {e}")))?;
        let value = match &raw.value {
            None => 0,
            Some(v) => v.coins.parse::<u128>().map_err(|_| bad(format!("bad coin amount '{}'", v.coins)))?,
        };
        if kind == MessageKind::ExternalIn && value != 0 {
            return Err(bad("external-in messages cannot carry value".into()));
        }
        let sender_id = raw.sender_id.unwrap_or_else(|| rng.next_u64());
        out.push(Message {
            id,
            kind,
            body,
            value,
            sender_id,
            name: raw.name,
            bounceable: raw.bounceable.unwrap_or(kind == MessageKind::Internal),
        });
    }
    Ok(out)
}

/// Serializes messages in queue-file form with every field explicit.
pub fn queue_to_json(messages: &[Message]) -> Json {
    Json::Array(
        messages
            .iter()
            .map(|m| {
                let mut obj = serde_json::Map::new();
                obj.insert("id".into(), m.id.into());
                obj.insert("type".into(), m.kind.as_str().into());
                obj.insert("body".into(), m.body.to_base64().into());
                obj.insert("value".into(), serde_json::json!({ "coins": m.value.to_string() }));
                obj.insert("senderId".into(), m.sender_id.into());
                if let Some(name) = &m.name {
                    obj.insert("name".into(), name.clone().into());
                }
                obj.insert("bounceable".into(), m.bounceable.into());
                Json::Object(obj)
            })
            .collect(),
    )
}

/// Seeded in-place Fisher–Yates: for i = len-1..1, swap i with `next_u64 % (i + 1)`.
pub fn fisher_yates<T>(items: &mut [T], rng: &mut Rng) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OrderingPolicy {
    Reverse,
    Random {
        seed: u64,
    },
    ByValueDesc,
    /// Ascending priority per kind, ties broken by value descending.
    ByTypePriority {
        priorities: BTreeMap<MessageKind, i64>,
    },
    /// Arrival = queue index + uniform[mean - jitter, mean + jitter].
    Latency {
        seed: u64,
        mean_ticks: f64,
        jitter_ticks: f64,
    },
    Explicit {
        ids: Vec<u64>,
    },
}

impl OrderingPolicy {
    /// External-in ahead of internal.
    pub fn default_priorities() -> BTreeMap<MessageKind, i64> {
        BTreeMap::from([(MessageKind::ExternalIn, 0), (MessageKind::Internal, 1)])
    }

    pub fn name(&self) -> &'static str {
        match self {
            OrderingPolicy::Reverse => "reverse",
            OrderingPolicy::Random { .. } => "random",
            OrderingPolicy::ByValueDesc => "by_value_desc",
            OrderingPolicy::ByTypePriority { .. } => "by_type_priority",
            OrderingPolicy::Latency { .. } => "latency",
            OrderingPolicy::Explicit { .. } => "explicit",
        }
    }

    /// Parses a policy file: `{"policy": ..., "seed"?, "mean_ticks"?, "jitter_ticks"?, "priorities"?, "ids"?}`.
    pub fn from_json(text: &str) -> Result<OrderingPolicy, QueueError> {
        let raw: RawPolicy = serde_json::from_str(text).map_err(|e| QueueError::Policy(e.to_string()))?;
        raw.into_policy()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawPolicy {
    policy: String,
    seed: Option<u64>,
    mean_ticks: Option<f64>,
    jitter_ticks: Option<f64>,
    priorities: Option<BTreeMap<String, i64>>,
    ids: Option<Vec<u64>>,
}

impl RawPolicy {
    fn into_policy(self) -> Result<OrderingPolicy, QueueError> {
        let policy = match self.policy.as_str() {
            "reverse" => OrderingPolicy::Reverse,
            "random" => OrderingPolicy::Random { seed: self.seed.unwrap_or(0) },
            "by_value_desc" => OrderingPolicy::ByValueDesc,
            "by_type_priority" => {
                let priorities = match self.priorities {
                    None => OrderingPolicy::default_priorities(),
                    Some(map) => map
                        .into_iter()
                        .map(|(k, v)| {
                            MessageKind::parse(&k)
                                .map(|kind| (kind, v))
                                .ok_or_else(|| QueueError::Policy(format!("unknown message type '{k}'")))
                        })
                        .collect::<Result<_, _>>()?,
                };
                OrderingPolicy::ByTypePriority { priorities }
            }
            "latency" => {
                let mean_ticks = self.mean_ticks.unwrap_or(0.0);
                let jitter_ticks = self.jitter_ticks.unwrap_or(0.0);
                if !mean_ticks.is_finite() || !jitter_ticks.is_finite() || jitter_ticks < 0.0 {
                    return Err(QueueError::Policy("latency needs finite mean and jitter >= 0".into()));
                }
                OrderingPolicy::Latency { seed: self.seed.unwrap_or(0), mean_ticks, jitter_ticks }
            }
            "explicit" => OrderingPolicy::Explicit {
                ids: self.ids.ok_or_else(|| QueueError::Policy("explicit policy needs 'ids'".into()))?,
            },
            other => return Err(QueueError::Policy(format!("unknown policy '{other}'"))),
        };
        Ok(policy)
    }
}

/// Returns the queue reordered by `policy`. Every output is a permutation of the input.
pub fn apply_policy(queue: &[Message], policy: &OrderingPolicy) -> Result<Vec<Message>, QueueError> {
    let mut out = queue.to_vec();
    match policy {
        OrderingPolicy::Reverse => out.reverse(),
        OrderingPolicy::Random { seed } => fisher_yates(&mut out, &mut Rng::new(*seed)),
        OrderingPolicy::ByValueDesc => out.sort_by_key(|m| std::cmp::Reverse(m.value)),
        OrderingPolicy::ByTypePriority { priorities } => {
            let rank = |m: &Message| priorities.get(&m.kind).copied().unwrap_or(i64::MAX);
            out.sort_by(|a, b| rank(a).cmp(&rank(b)).then(b.value.cmp(&a.value)));
        }
        OrderingPolicy::Latency { seed, mean_ticks, jitter_ticks } => {
            let mut rng = Rng::new(*seed);
            let low = mean_ticks - jitter_ticks;
            let mut keyed: Vec<(f64, Message)> = out
                .into_iter()
                .enumerate()
                .map(|(i, m)| (i as f64 + low + rng.next_f64() * 2.0 * jitter_ticks, m))
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
            out = keyed.into_iter().map(|(_, m)| m).collect();
        }
        OrderingPolicy::Explicit { ids } => {
            let current: BTreeSet<u64> = queue.iter().map(|m| m.id).collect();
            let requested: BTreeSet<u64> = ids.iter().copied().collect();
            if ids.len() != queue.len() || requested != current {
                return Err(QueueError::InvalidPermutation(format!(
                    "{ids:?} is not a permutation of the queued ids {:?}",
                    queue.iter().map(|m| m.id).collect::<Vec<_>>()
                )));
            }
            let by_id: BTreeMap<u64, &Message> = queue.iter().map(|m| (m.id, m)).collect();
            out = ids.iter().map(|id| by_id[id].clone()).collect();
        }
    }
    Ok(out)
}
