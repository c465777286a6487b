//! Location assignment and period-dependent Markov mobility.
//!
//! Every mobile node owns three kinds of location: a home cell, an optional
//! work cell (employed relays and clinical staff only) and whichever POI it is
//! currently visiting. Each timestep the node draws its next state from the
//! transition row of its current state, then teleports to the matching cell.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    ClassGroup, Grid, Minutes, MobilityState, NodeClass, NodeId, Position, Roster, ScenarioSpec,
    TransitionSet, TransitionTable,
};

/// A stationary node pinned to one cell (a POI or a destination).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Site {
    pub node: NodeId,
    pub cell: Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationAssignment {
    pub node_id: NodeId,
    pub home_cell: Position,
    pub work_cell: Option<Position>,
    pub paired_patient: Option<NodeId>,
}

/// Output of [`assign_locations`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub pois: Vec<Site>,
    pub destinations: Vec<Site>,
    /// One entry per mobile node, in roster order.
    pub assignments: Vec<LocationAssignment>,
}

impl Placement {
    pub fn assignment(&self, node: NodeId) -> Option<&LocationAssignment> {
        self.assignments.iter().find(|a| a.node_id == node)
    }
}

/// Places POIs and destinations, then gives every mobile node a home and,
/// for the employed/clinical group, a work cell.
///
/// POI and destination cells are distinct. Caregivers share the home of their
/// paired patient. Employed relays work at a uniformly chosen POI; clinical
/// staff work at a destination (round-robin when there are several).
pub fn assign_locations<R: Rng + ?Sized>(spec: &ScenarioSpec, roster: &Roster, rng: &mut R) -> Placement {
    let poi_ids: Vec<NodeId> = roster.ids_of(NodeClass::PointOfInterest).collect();
    let dest_ids: Vec<NodeId> = roster.ids_of(NodeClass::Destination).collect();

    let cells: Vec<Position> = match &spec.sites {
        Some(layout) => layout.pois.iter().chain(&layout.destinations).copied().collect(),
        None => draw_distinct_cells(&spec.grid, poi_ids.len() + dest_ids.len(), rng),
    };
    let (poi_cells, dest_cells) = cells.split_at(poi_ids.len());
    let pois: Vec<Site> = poi_ids
        .iter()
        .zip(poi_cells)
        .map(|(&node, &cell)| Site { node, cell })
        .collect();
    let destinations: Vec<Site> = dest_ids
        .iter()
        .zip(dest_cells)
        .map(|(&node, &cell)| Site { node, cell })
        .collect();

    let side = spec.grid.side_cells;
    let mut assignments: Vec<LocationAssignment> = Vec::new();
    let mut staff_seen = 0usize;
    for info in roster.nodes.iter().filter(|n| !n.class.is_stationary()) {
        let home_cell = Position::new(rng.random_range(0..side), rng.random_range(0..side));
        let work_cell = match info.class {
            NodeClass::RelayEmployed => Some(pois[rng.random_range(0..pois.len())].cell),
            NodeClass::ClinicalStaff => {
                let d = destinations[staff_seen % destinations.len()].cell;
                staff_seen += 1;
                Some(d)
            }
            _ => None,
        };
        assignments.push(LocationAssignment {
            node_id: info.id,
            home_cell,
            work_cell,
            paired_patient: info.paired_patient,
        });
    }
    // Caregivers move in with their patient once every home is known.
    for i in 0..assignments.len() {
        if let Some(patient) = assignments[i].paired_patient {
            let home = assignments
                .iter()
                .find(|a| a.node_id == patient)
                .map(|a| a.home_cell)
                .expect("paired patient is a mobile node");
            assignments[i].home_cell = home;
        }
    }

    Placement {
        pois,
        destinations,
        assignments,
    }
}

fn draw_distinct_cells<R: Rng + ?Sized>(grid: &Grid, count: usize, rng: &mut R) -> Vec<Position> {
    let total = grid.total_cells() as usize;
    index::sample(rng, total, count)
        .into_iter()
        .map(|i| grid.position_at(i as u64))
        .collect()
}

/// Draws an index from a probability vector. Zero-probability entries are
/// never chosen, even when the entries sum to slightly less than one.
pub(crate) fn categorical<R: Rng + ?Sized>(probs: &[f64; 3], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && *p > 0.0 {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|p| *p > 0.0)
        .expect("probability vector has positive mass")
}

pub fn sample_initial_state<R: Rng + ?Sized>(
    group: ClassGroup,
    period_id: u8,
    tables: &TransitionSet,
    rng: &mut R,
) -> MobilityState {
    let table = table_for(tables, group, period_id);
    MobilityState::from_index(categorical(&table.initial, rng))
}

fn table_for(tables: &TransitionSet, group: ClassGroup, period: u8) -> &TransitionTable {
    tables
        .get(group, period)
        .unwrap_or_else(|| panic!("no transition table for {group} period {period}"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MobileNode {
    pub node_id: NodeId,
    pub class: NodeClass,
    pub assignment: LocationAssignment,
    pub state: MobilityState,
    pub position: Position,
    pub current_poi: Option<NodeId>,
}

impl MobileNode {
    /// Creates a node in `state`, drawing a POI to visit when needed.
    pub fn new<R: Rng + ?Sized>(
        class: NodeClass,
        assignment: LocationAssignment,
        state: MobilityState,
        pois: &[Site],
        rng: &mut R,
    ) -> Self {
        let mut node = MobileNode {
            node_id: assignment.node_id,
            class,
            assignment,
            state: MobilityState::Home,
            position: assignment.home_cell,
            current_poi: None,
        };
        node.enter(state, pois, rng);
        node
    }

    pub fn class_group(&self) -> ClassGroup {
        self.class
            .class_group()
            .expect("mobile nodes belong to a class group")
    }

    fn enter<R: Rng + ?Sized>(&mut self, state: MobilityState, pois: &[Site], rng: &mut R) {
        self.state = state;
        match state {
            MobilityState::Home => {
                self.position = self.assignment.home_cell;
                self.current_poi = None;
            }
            MobilityState::Work => {
                self.position = self
                    .assignment
                    .work_cell
                    .expect("only nodes with a work cell can be at work");
                self.current_poi = None;
            }
            MobilityState::Poi => {
                let site = pois[rng.random_range(0..pois.len())];
                self.position = site.cell;
                self.current_poi = Some(site.node);
            }
        }
    }

    /// One DTMC transition. A fresh POI is drawn on every transition into Poi,
    /// including Poi to Poi.
    pub fn step<R: Rng + ?Sized>(&mut self, table: &TransitionTable, pois: &[Site], rng: &mut R) {
        let next = MobilityState::from_index(categorical(table.row(self.state), rng));
        self.enter(next, pois, rng);
    }

    /// State and position agree with the assignment.
    pub fn is_consistent(&self, pois: &[Site]) -> bool {
        match self.state {
            MobilityState::Home => {
                self.position == self.assignment.home_cell && self.current_poi.is_none()
            }
            MobilityState::Work => {
                Some(self.position) == self.assignment.work_cell && self.current_poi.is_none()
            }
            MobilityState::Poi => self
                .current_poi
                .and_then(|id| pois.iter().find(|s| s.node == id))
                .is_some_and(|s| s.cell == self.position),
        }
    }
}

pub fn step_mobility<R: Rng + ?Sized>(
    node: &MobileNode,
    period_id: u8,
    tables: &TransitionSet,
    pois: &[Site],
    rng: &mut R,
) -> MobileNode {
    let mut next = node.clone();
    next.step(table_for(tables, node.class_group(), period_id), pois, rng);
    next
}

/// Builds every mobile node of a placement with states drawn from the initial
/// vectors of `period_id`.
pub fn initial_nodes<R: Rng + ?Sized>(
    roster: &Roster,
    placement: &Placement,
    tables: &TransitionSet,
    period_id: u8,
    rng: &mut R,
) -> Vec<MobileNode> {
    placement
        .assignments
        .iter()
        .map(|a| {
            let class = roster.class_of(a.node_id);
            let group = class.class_group().expect("assignments cover mobile nodes");
            let state = sample_initial_state(group, period_id, tables, rng);
            MobileNode::new(class, *a, state, &placement.pois, rng)
        })
        .collect()
}

/// CSV trajectory dump: `time_min,node_id,class,state,col,row`.
pub struct TrajectoryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(writer: W) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(["time_min", "node_id", "class", "state", "col", "row"])?;
        Ok(TrajectoryWriter { inner })
    }

    pub fn record(&mut self, time: Minutes, nodes: &[MobileNode]) -> csv::Result<()> {
        for n in nodes {
            self.inner.write_record([
                time.to_string(),
                n.node_id.to_string(),
                n.class.label().to_string(),
                n.state.label().to_string(),
                n.position.col.to_string(),
                n.position.row.to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| e.into_error())
    }
}
