//! The per-run main loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::population::synthesize_population;
use super::HarnessError;
use crate::metrics::RunResult;
use crate::mobility::{assign_locations, initial_nodes, MobileNode, Placement, Site};
use crate::model::{period_of, Message, MessageId, Minutes, NodeClass, NodeId, Position, Roster, ScenarioSpec};
use crate::network::{detect_contacts, exchange, expire, sample_ranges, ContactEvent, MessageStore, RoundOutcome};

// Independent ChaCha streams per concern, so that e.g. the site layout of a
// seed does not depend on how many nodes later draw ranges.
const STREAM_PLACEMENT: u64 = 0;
const STREAM_RADIO: u64 = 1;
const STREAM_MOBILITY: u64 = 2;
const STREAM_MESSAGES: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// What happened in one exchange round.
#[derive(Debug, Clone, Serialize)]
pub struct RoundReport {
    pub time: Minutes,
    pub period: u8,
    pub contacts: Vec<ContactEvent>,
    pub transfers: Vec<crate::network::Transfer>,
    pub deliveries: Vec<crate::network::Delivery>,
    pub expired: Vec<MessageId>,
}

/// One seeded run of a scenario, advanced round by round.
///
/// Round 0 happens at t = 0 with the initial states; every later round first
/// moves each mobile node one DTMC step, then detects contacts, exchanges
/// messages and expires stale ones. The run ends after `duration` or as soon
/// as every message is delivered or expired.
#[derive(Debug, Clone)]
pub struct Simulation {
    spec: ScenarioSpec,
    seed: u64,
    fingerprint: String,
    roster: Roster,
    placement: Placement,
    nodes: Vec<MobileNode>,
    positions: Vec<Position>,
    ranges: Vec<f64>,
    is_destination: Vec<bool>,
    stores: Vec<MessageStore>,
    messages: Vec<Message>,
    injected: Vec<bool>,
    round: u32,
    rng: ChaCha8Rng,
}

impl Simulation {
    /// Synthesizes the population and draws everything from `seed`.
    pub fn new(spec: &ScenarioSpec, seed: u64) -> Result<Self, HarnessError> {
        let roster = synthesize_population(spec);
        let placement = assign_locations(spec, &roster, &mut stream(seed, STREAM_PLACEMENT));
        let ranges = sample_ranges(0..roster.len(), &spec.radio, &mut stream(seed, STREAM_RADIO))?
            .into_iter()
            .map(|r| r.range_ft)
            .collect();
        Self::from_parts(spec, roster, placement, ranges, seed)
    }

    /// Builds a run from an explicit roster, placement and per-node ranges.
    /// Initial states, message jitter and mobility are still drawn from `seed`.
    pub fn from_parts(
        spec: &ScenarioSpec,
        roster: Roster,
        placement: Placement,
        ranges: Vec<f64>,
        seed: u64,
    ) -> Result<Self, HarnessError> {
        if ranges.len() != roster.len() {
            return Err(HarnessError::Setup(format!(
                "{} ranges for {} nodes",
                ranges.len(),
                roster.len()
            )));
        }
        let spec = spec.with_seed(seed);
        let mut rng = stream(seed, STREAM_MOBILITY);
        let period = period_of(0, &spec.schedule, spec.start_time_of_day);
        let nodes = initial_nodes(&roster, &placement, &spec.transitions, period, &mut rng);

        let mut positions = vec![Position::new(0, 0); roster.len()];
        for site in placement.pois.iter().chain(&placement.destinations) {
            positions[site.node] = site.cell;
        }
        for n in &nodes {
            positions[n.node_id] = n.position;
        }
        let is_destination = roster.nodes.iter().map(|n| n.class == NodeClass::Destination).collect();
        let messages = create_messages(&spec, &roster, seed);
        let injected = vec![false; messages.len()];
        Ok(Simulation {
            fingerprint: spec.fingerprint(),
            stores: (0..roster.len()).map(MessageStore::new).collect(),
            spec,
            seed,
            roster,
            placement,
            nodes,
            positions,
            ranges,
            is_destination,
            messages,
            injected,
            round: 0,
            rng,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn pois(&self) -> &[Site] {
        &self.placement.pois
    }

    pub fn mobile_nodes(&self) -> &[MobileNode] {
        &self.nodes
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn stores(&self) -> &[MessageStore] {
        &self.stores
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    /// Time of the next round to run.
    pub fn time(&self) -> Minutes {
        self.round * self.spec.timestep
    }

    /// Holders of message `m` (its replica set).
    pub fn replicas(&self, m: MessageId) -> impl Iterator<Item = NodeId> + '_ {
        self.stores.iter().filter(move |s| s.holds(m)).map(|s| s.node_id)
    }

    pub fn is_finished(&self) -> bool {
        if self.round > self.spec.steps() {
            return true;
        }
        self.injected.iter().all(|&i| i)
            && self.messages.iter().all(|m| m.delivered_at.is_some() || m.expired)
    }

    /// Runs the next round, or returns `None` once the run is over.
    pub fn advance(&mut self) -> Option<RoundReport> {
        if self.is_finished() {
            return None;
        }
        let time = self.time();
        let period = period_of(time, &self.spec.schedule, self.spec.start_time_of_day);
        if self.round > 0 {
            for node in &mut self.nodes {
                let table = self
                    .spec
                    .transitions
                    .get(node.class_group(), period)
                    .expect("validated scenario has a table for every period");
                node.step(table, &self.placement.pois, &mut self.rng);
                self.positions[node.node_id] = node.position;
            }
        }
        for (m, injected) in self.messages.iter().zip(self.injected.iter_mut()) {
            if !*injected && m.created_at <= time {
                self.stores[m.source].held.insert(m.id);
                *injected = true;
            }
        }

        let contacts = detect_contacts(&self.spec.grid, &self.positions, &self.ranges, time);
        let RoundOutcome { transfers, deliveries } =
            exchange(&contacts, &mut self.stores, &mut self.messages, &self.is_destination, time);
        let expired = expire(&mut self.messages, &mut self.stores, time);
        self.round += 1;
        Some(RoundReport {
            time,
            period,
            contacts,
            transfers,
            deliveries,
            expired,
        })
    }

    pub fn result(&self) -> Result<RunResult, HarnessError> {
        Ok(RunResult::from_messages(self.seed, self.fingerprint.clone(), &self.messages)?)
    }

    /// Runs to completion, handing every round to `observe`.
    pub fn run_with<F>(mut self, mut observe: F) -> Result<RunResult, HarnessError>
    where
        F: FnMut(&Simulation, &RoundReport) -> Result<(), HarnessError>,
    {
        while let Some(report) = self.advance() {
            observe(&self, &report)?;
        }
        self.result()
    }

    pub fn run(self) -> Result<RunResult, HarnessError> {
        self.run_with(|_, _| Ok(()))
    }
}

/// One message per patient per day slot, in (patient, slot) order.
fn create_messages(spec: &ScenarioSpec, roster: &Roster, seed: u64) -> Vec<Message> {
    let mut rng = stream(seed, STREAM_MESSAGES);
    let last_round = spec.steps() * spec.timestep;
    let slots = spec.message_slots();
    let mut out = Vec::new();
    for patient in roster.ids_of(NodeClass::Patient) {
        for &slot in &slots {
            let jitter = if spec.creation_jitter > 0 {
                rng.random_range(0..=spec.creation_jitter)
            } else {
                0
            };
            let t = (slot + jitter).min(last_round);
            let t = t - t % spec.timestep;
            out.push(Message::new(out.len(), patient, t, spec.ttl));
        }
    }
    out
}

/// Runs one seed of a scenario.
pub fn run_simulation(spec: &ScenarioSpec, seed: u64) -> Result<RunResult, HarnessError> {
    Simulation::new(spec, seed)?.run()
}
