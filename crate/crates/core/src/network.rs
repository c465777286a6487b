//! Radio ranges, contact detection and epidemic message exchange.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Grid, Message, MessageId, Minutes, NodeId, Position, RadioParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid radio parameters: mean {mean} ft, variance {variance} ft^2")]
    InvalidRadioParams { mean: f64, variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioProfile {
    pub node_id: NodeId,
    pub range_ft: f64,
}

/// Draws one range per node from a normal distribution, clamped at zero.
pub fn sample_ranges<R: Rng + ?Sized>(
    node_ids: impl IntoIterator<Item = NodeId>,
    params: &RadioParams,
    rng: &mut R,
) -> Result<Vec<RadioProfile>, NetworkError> {
    let bad = || NetworkError::InvalidRadioParams {
        mean: params.range_mean_ft,
        variance: params.range_var_ft2,
    };
    if !(params.range_var_ft2 >= 0.0 && params.range_var_ft2.is_finite() && params.range_mean_ft.is_finite()) {
        return Err(bad());
    }
    let normal = Normal::new(params.range_mean_ft, params.range_var_ft2.sqrt()).map_err(|_| bad())?;
    Ok(node_ids
        .into_iter()
        .map(|node_id| RadioProfile {
            node_id,
            range_ft: normal.sample(rng).max(0.0),
        })
        .collect())
}

/// Two nodes within mutual radio range at `time`; `node_a < node_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContactEvent {
    pub time: Minutes,
    pub node_a: NodeId,
    pub node_b: NodeId,
}

/// All node pairs whose cell centers lie within the smaller of their two
/// ranges, sorted by `(node_a, node_b)`. `positions[i]` and `ranges[i]`
/// describe node `i`.
///
/// Nodes are bucketed on a square hash grid whose bucket width is at least
/// the largest range, so only the 3x3 neighbourhood of a bucket needs to be
/// scanned.
pub fn detect_contacts(grid: &Grid, positions: &[Position], ranges: &[f64], time: Minutes) -> Vec<ContactEvent> {
    assert_eq!(positions.len(), ranges.len(), "one range per positioned node");
    if positions.len() < 2 {
        return Vec::new();
    }
    let width = ranges.iter().copied().fold(grid.cell_size_ft, f64::max);
    let bucket_of = |p: Position| {
        let (x, y) = grid.center_ft(p);
        ((x / width).floor() as i64, (y / width).floor() as i64)
    };

    let mut buckets: HashMap<(i64, i64), Vec<NodeId>> = HashMap::new();
    for (id, &p) in positions.iter().enumerate() {
        buckets.entry(bucket_of(p)).or_default().push(id);
    }

    let mut out = Vec::new();
    for (a, &pa) in positions.iter().enumerate() {
        let (bx, by) = bucket_of(pa);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(members) = buckets.get(&(bx + dx, by + dy)) else {
                    continue;
                };
                for &b in members {
                    if b <= a {
                        continue;
                    }
                    if grid.distance_ft(pa, positions[b]) <= ranges[a].min(ranges[b]) {
                        out.push(ContactEvent {
                            time,
                            node_a: a,
                            node_b: b,
                        });
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Messages a node currently holds, i.e. its membership in each replica set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageStore {
    pub node_id: NodeId,
    pub held: BTreeSet<MessageId>,
}

impl MessageStore {
    pub fn new(node_id: NodeId) -> Self {
        MessageStore {
            node_id,
            held: BTreeSet::new(),
        }
    }

    pub fn holds(&self, m: MessageId) -> bool {
        self.held.contains(&m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub message: MessageId,
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub message: MessageId,
    pub destination: NodeId,
    pub time: Minutes,
    pub latency: Minutes,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundOutcome {
    pub transfers: Vec<Transfer>,
    pub deliveries: Vec<Delivery>,
}

/// One synchronous epidemic round.
///
/// Holdings are read from the start of the round: a message copied in this
/// round does not travel a second hop until the next one. Destinations absorb
/// messages but never forward them. A message is delivered the first time any
/// destination receives it; from then on it no longer spreads.
pub fn exchange(
    contacts: &[ContactEvent],
    stores: &mut [MessageStore],
    messages: &mut [Message],
    is_destination: &[bool],
    time: Minutes,
) -> RoundOutcome {
    let live: Vec<MessageId> = messages
        .iter()
        .filter(|m| m.is_live_at(time))
        .map(|m| m.id)
        .collect();
    let mut outcome = RoundOutcome::default();
    if live.is_empty() {
        return outcome;
    }

    let mut pending: BTreeSet<(NodeId, MessageId, NodeId)> = BTreeSet::new();
    for c in contacts {
        for &(from, to) in &[(c.node_a, c.node_b), (c.node_b, c.node_a)] {
            if is_destination[from] {
                continue;
            }
            for &m in &live {
                if stores[from].holds(m) && !stores[to].holds(m) {
                    pending.insert((to, m, from));
                }
            }
        }
    }

    for (to, m, from) in pending {
        if !stores[to].held.insert(m) {
            // Already received from another neighbour this round.
            continue;
        }
        outcome.transfers.push(Transfer { message: m, from, to });
        if is_destination[to] && messages[m].delivered_at.is_none() {
            messages[m].delivered_at = Some(time);
            outcome.deliveries.push(Delivery {
                message: m,
                destination: to,
                time,
                latency: time - messages[m].created_at,
            });
        }
    }
    outcome
}

/// Marks undelivered messages past their TTL as expired and drops every copy.
/// Returns the ids expired by this call.
pub fn expire(messages: &mut [Message], stores: &mut [MessageStore], time: Minutes) -> Vec<MessageId> {
    let mut expired = Vec::new();
    for m in messages.iter_mut() {
        if m.delivered_at.is_none() && !m.expired && time > m.expires_at() {
            m.expired = true;
            expired.push(m.id);
        }
    }
    if !expired.is_empty() {
        for s in stores.iter_mut() {
            for id in &expired {
                s.held.remove(id);
            }
        }
    }
    expired
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Contact,
    Transfer,
    Delivery,
    Expiry,
}

impl EventKind {
    fn label(self) -> &'static str {
        match self {
            EventKind::Contact => "contact",
            EventKind::Transfer => "transfer",
            EventKind::Delivery => "delivery",
            EventKind::Expiry => "expiry",
        }
    }
}

/// CSV event log: `time_min,event,node_a,node_b,message_id`. Fields that do
/// not apply to an event are left empty.
pub struct EventLogWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> EventLogWriter<W> {
    pub fn new(writer: W) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(["time_min", "event", "node_a", "node_b", "message_id"])?;
        Ok(EventLogWriter { inner })
    }

    pub fn write(
        &mut self,
        time: Minutes,
        kind: EventKind,
        node_a: Option<NodeId>,
        node_b: Option<NodeId>,
        message: Option<MessageId>,
    ) -> csv::Result<()> {
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        self.inner.write_record([
            time.to_string(),
            kind.label().to_string(),
            opt(node_a),
            opt(node_b),
            opt(message),
        ])
    }

    pub fn contacts(&mut self, contacts: &[ContactEvent]) -> csv::Result<()> {
        for c in contacts {
            self.write(c.time, EventKind::Contact, Some(c.node_a), Some(c.node_b), None)?;
        }
        Ok(())
    }

    pub fn round(&mut self, time: Minutes, outcome: &RoundOutcome) -> csv::Result<()> {
        for t in &outcome.transfers {
            self.write(time, EventKind::Transfer, Some(t.from), Some(t.to), Some(t.message))?;
        }
        for d in &outcome.deliveries {
            self.write(time, EventKind::Delivery, Some(d.destination), None, Some(d.message))?;
        }
        Ok(())
    }

    pub fn expiries(&mut self, time: Minutes, ids: &[MessageId]) -> csv::Result<()> {
        for &m in ids {
            self.write(time, EventKind::Expiry, None, None, Some(m))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| e.into_error())
    }
}
