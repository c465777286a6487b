//! Domain types, scenario validation, transition-table repair and the period
//! clock shared by the rest of the simulator.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Index of a node in the run's roster.
pub type NodeId = usize;
/// Index of a message in the run's message ledger.
pub type MessageId = usize;
/// Simulation time and durations, in whole minutes.
pub type Minutes = u32;

pub const MINUTES_PER_DAY: Minutes = 24 * 60;

/// Tolerance below which a row is considered already stochastic and left untouched.
const ALREADY_STOCHASTIC: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("missing value for key `{0}`")]
    MissingKey(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("cannot parse `{value}` for key `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("`{key}` out of range: {reason}")]
    OutOfRange { key: String, reason: String },
    #[error("cardinality violation: {0}")]
    CardinalityViolation(String),
    #[error("degenerate {what} in {group} period {period}: entries sum to zero")]
    DegenerateRow {
        group: ClassGroup,
        period: u8,
        what: &'static str,
    },
    #[error("invalid period schedule: {0}")]
    InvalidSchedule(String),
    #[error("transition table file: {0}")]
    TransitionFile(String),
}

// ---------------------------------------------------------------------------
// Grid geometry

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Cells per side.
    pub side_cells: u32,
    /// Edge length of one cell, in feet.
    pub cell_size_ft: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            side_cells: 820,
            cell_size_ft: 10.0,
        }
    }
}

impl Grid {
    pub fn new(side_cells: u32, cell_size_ft: f64) -> Result<Self, ModelError> {
        if side_cells == 0 {
            return Err(ModelError::OutOfRange {
                key: "grid.side_cells".into(),
                reason: "must be at least 1".into(),
            });
        }
        if !(cell_size_ft.is_finite() && cell_size_ft > 0.0) {
            return Err(ModelError::OutOfRange {
                key: "grid.cell_size_ft".into(),
                reason: "must be a positive length".into(),
            });
        }
        Ok(Grid {
            side_cells,
            cell_size_ft,
        })
    }

    pub fn total_cells(&self) -> u64 {
        u64::from(self.side_cells) * u64::from(self.side_cells)
    }

    pub fn contains(&self, pos: Position) -> bool {
        pos.col < self.side_cells && pos.row < self.side_cells
    }

    /// Row-major cell index to position.
    pub fn position_at(&self, index: u64) -> Position {
        let side = u64::from(self.side_cells);
        debug_assert!(index < side * side);
        Position {
            col: (index % side) as u32,
            row: (index / side) as u32,
        }
    }

    /// Center of a cell in feet from the grid origin.
    pub fn center_ft(&self, pos: Position) -> (f64, f64) {
        (
            (f64::from(pos.col) + 0.5) * self.cell_size_ft,
            (f64::from(pos.row) + 0.5) * self.cell_size_ft,
        )
    }

    /// Euclidean distance between two cell centers, in feet.
    pub fn distance_ft(&self, a: Position, b: Position) -> f64 {
        let dx = (f64::from(a.col) - f64::from(b.col)) * self.cell_size_ft;
        let dy = (f64::from(a.row) - f64::from(b.row)) * self.cell_size_ft;
        dx.hypot(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub col: u32,
    pub row: u32,
}

impl Position {
    pub const fn new(col: u32, row: u32) -> Self {
        Position { col, row }
    }
}

// ---------------------------------------------------------------------------
// Node classes and mobility states

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeClass {
    Patient,
    Caregiver,
    RelayEmployed,
    RelayUnemployed,
    ClinicalStaff,
    Destination,
    PointOfInterest,
}

impl NodeClass {
    /// Transition-matrix family for mobile classes; `None` for stationary ones.
    pub fn class_group(self) -> Option<ClassGroup> {
        match self {
            NodeClass::Patient | NodeClass::Caregiver | NodeClass::RelayUnemployed => {
                Some(ClassGroup::Cua)
            }
            NodeClass::RelayEmployed | NodeClass::ClinicalStaff => Some(ClassGroup::Es),
            NodeClass::Destination | NodeClass::PointOfInterest => None,
        }
    }

    pub fn is_stationary(self) -> bool {
        self.class_group().is_none()
    }

    pub fn label(self) -> &'static str {
        match self {
            NodeClass::Patient => "patient",
            NodeClass::Caregiver => "caregiver",
            NodeClass::RelayEmployed => "relay_employed",
            NodeClass::RelayUnemployed => "relay_unemployed",
            NodeClass::ClinicalStaff => "clinical_staff",
            NodeClass::Destination => "destination",
            NodeClass::PointOfInterest => "poi",
        }
    }
}

impl fmt::Display for NodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The two families of transition matrices: {caregivers, unemployed, patients}
/// and {employed, clinical staff}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassGroup {
    Cua,
    Es,
}

impl ClassGroup {
    pub const ALL: [ClassGroup; 2] = [ClassGroup::Cua, ClassGroup::Es];

    pub fn label(self) -> &'static str {
        match self {
            ClassGroup::Cua => "CUA",
            ClassGroup::Es => "ES",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CUA" => Some(ClassGroup::Cua),
            "ES" => Some(ClassGroup::Es),
            _ => None,
        }
    }
}

impl fmt::Display for ClassGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MobilityState {
    Home,
    Work,
    Poi,
}

impl MobilityState {
    /// Column/row order used by every probability vector and matrix.
    pub const ORDER: [MobilityState; 3] = [MobilityState::Home, MobilityState::Work, MobilityState::Poi];

    pub fn index(self) -> usize {
        match self {
            MobilityState::Home => 0,
            MobilityState::Work => 1,
            MobilityState::Poi => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ORDER[i]
    }

    pub fn label(self) -> &'static str {
        match self {
            MobilityState::Home => "home",
            MobilityState::Work => "work",
            MobilityState::Poi => "poi",
        }
    }
}

impl fmt::Display for MobilityState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

// ---------------------------------------------------------------------------
// Period clock

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub id: u8,
    /// Minute of day the period starts (inclusive).
    pub start: Minutes,
    /// Minute of day the period ends (exclusive). May be less than `start` when
    /// the period wraps midnight.
    pub end: Minutes,
}

impl Period {
    pub fn length(&self) -> Minutes {
        (self.end + MINUTES_PER_DAY - self.start) % MINUTES_PER_DAY
    }

    fn contains(&self, tod: Minutes) -> bool {
        if self.start < self.end {
            tod >= self.start && tod < self.end
        } else {
            tod >= self.start || tod < self.end
        }
    }
}

/// Periods that partition the 24-hour day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodSchedule {
    periods: Vec<Period>,
}

impl Default for PeriodSchedule {
    fn default() -> Self {
        PeriodSchedule {
            periods: vec![
                Period { id: 1, start: 19 * 60, end: 6 * 60 + 30 },
                Period { id: 2, start: 6 * 60 + 30, end: 9 * 60 + 30 },
                Period { id: 3, start: 9 * 60 + 30, end: 16 * 60 + 30 },
                Period { id: 4, start: 16 * 60 + 30, end: 19 * 60 },
            ],
        }
    }
}

impl PeriodSchedule {
    pub fn new(periods: Vec<Period>) -> Result<Self, ModelError> {
        if periods.is_empty() {
            return Err(ModelError::InvalidSchedule("no periods".into()));
        }
        let mut ids: Vec<u8> = periods.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != periods.len() {
            return Err(ModelError::InvalidSchedule("duplicate period id".into()));
        }
        for p in &periods {
            if p.start >= MINUTES_PER_DAY || p.end >= MINUTES_PER_DAY {
                return Err(ModelError::InvalidSchedule(format!(
                    "period {} has a bound outside 00:00..24:00",
                    p.id
                )));
            }
            if p.start == p.end {
                return Err(ModelError::InvalidSchedule(format!("period {} is empty", p.id)));
            }
        }
        // Each start must be the end of exactly one other period and the
        // lengths must add up to a day.
        let mut sorted = periods.clone();
        sorted.sort_by_key(|p| p.start);
        for (i, p) in sorted.iter().enumerate() {
            let next = &sorted[(i + 1) % sorted.len()];
            if p.end != next.start {
                return Err(ModelError::InvalidSchedule(format!(
                    "period {} ends at {} but the next period starts at {}",
                    p.id,
                    format_hhmm(p.end),
                    format_hhmm(next.start)
                )));
            }
        }
        let total: Minutes = periods.iter().map(Period::length).sum();
        if total != MINUTES_PER_DAY {
            return Err(ModelError::InvalidSchedule(format!(
                "periods cover {total} minutes, not a full day"
            )));
        }
        Ok(PeriodSchedule { periods })
    }

    pub fn periods(&self) -> &[Period] {
        &self.periods
    }

    pub fn period_ids(&self) -> impl Iterator<Item = u8> + '_ {
        self.periods.iter().map(|p| p.id)
    }

    /// Period containing a minute of the day.
    pub fn at_time_of_day(&self, tod: Minutes) -> u8 {
        let tod = tod % MINUTES_PER_DAY;
        self.periods
            .iter()
            .find(|p| p.contains(tod))
            .map(|p| p.id)
            .expect("validated schedule covers the whole day")
    }
}

/// Maps simulation time (minutes since start) to the active period, given the
/// time of day at which the simulation started.
pub fn period_of(time: Minutes, schedule: &PeriodSchedule, start_time_of_day: Minutes) -> u8 {
    let tod = ((u64::from(start_time_of_day) + u64::from(time)) % u64::from(MINUTES_PER_DAY)) as Minutes;
    schedule.at_time_of_day(tod)
}

pub fn parse_hhmm(s: &str) -> Option<Minutes> {
    let (h, m) = s.trim().split_once(':')?;
    let h: Minutes = h.parse().ok()?;
    let m: Minutes = m.parse().ok()?;
    (h < 24 && m < 60).then_some(h * 60 + m)
}

pub fn format_hhmm(minutes: Minutes) -> String {
    format!("{:02}:{:02}", minutes / 60, minutes % 60)
}

// ---------------------------------------------------------------------------
// Transition tables

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub class_group: ClassGroup,
    pub period_id: u8,
    /// Probability of each state (Home, Work, Poi) at the start of a run.
    pub initial: [f64; 3],
    /// `matrix[from][to]` in (Home, Work, Poi) order.
    pub matrix: [[f64; 3]; 3],
}

impl TransitionTable {
    pub fn row(&self, from: MobilityState) -> &[f64; 3] {
        &self.matrix[from.index()]
    }

    pub fn is_stochastic(&self, tol: f64) -> bool {
        let ok = |v: &[f64; 3]| {
            v.iter().all(|p| (0.0..=1.0).contains(p)) && (v.iter().sum::<f64>() - 1.0).abs() <= tol
        };
        ok(&self.initial) && self.matrix.iter().all(ok)
    }
}

fn normalize_vector(
    v: [f64; 3],
    group: ClassGroup,
    period: u8,
    what: &'static str,
) -> Result<[f64; 3], ModelError> {
    if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(ModelError::OutOfRange {
            key: format!("transitions.{group}.{period}.{what}"),
            reason: "probabilities must be finite and non-negative".into(),
        });
    }
    let sum: f64 = v.iter().sum();
    if sum <= 0.0 {
        return Err(ModelError::DegenerateRow { group, period, what });
    }
    if (sum - 1.0).abs() <= ALREADY_STOCHASTIC {
        return Ok(v);
    }
    Ok(v.map(|p| p / sum))
}

/// Divides every matrix row and the initial vector by its own sum.
pub fn normalize_transition_table(raw: &TransitionTable) -> Result<TransitionTable, ModelError> {
    const ROWS: [&str; 3] = ["row_home", "row_work", "row_poi"];
    let (g, p) = (raw.class_group, raw.period_id);
    let initial = normalize_vector(raw.initial, g, p, "initial")?;
    let mut matrix = [[0.0; 3]; 3];
    for (i, row) in raw.matrix.iter().enumerate() {
        matrix[i] = normalize_vector(*row, g, p, ROWS[i])?;
    }
    Ok(TransitionTable {
        class_group: g,
        period_id: p,
        initial,
        matrix,
    })
}

/// One table per (class group, period).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    tables: Vec<TransitionTable>,
}

impl TransitionSet {
    pub fn new(mut tables: Vec<TransitionTable>) -> Self {
        tables.sort_by_key(|t| (t.class_group, t.period_id));
        TransitionSet { tables }
    }

    /// Values exactly as estimated from the 2017 ATUS non-metropolitan sample,
    /// before any repair. Several rows do not sum to one.
    pub fn atus_raw() -> Self {
        use ClassGroup::{Cua, Es};
        let t = |class_group, period_id, initial, matrix| TransitionTable {
            class_group,
            period_id,
            initial,
            matrix,
        };
        TransitionSet::new(vec![
            t(Cua, 1, [0.85, 0.0, 0.015], [[0.94, 0.0, 0.064], [0.0, 1.0, 0.0], [0.37, 0.0, 0.63]]),
            t(Cua, 2, [0.93, 0.0, 0.070], [[0.97, 0.0, 0.032], [0.0, 1.0, 0.0], [0.59, 0.0, 0.41]]),
            t(Cua, 3, [0.76, 0.0, 0.24], [[0.89, 0.0, 0.11], [0.0, 1.0, 0.0], [0.36, 0.0, 0.64]]),
            t(Cua, 4, [0.77, 0.0, 0.23], [[0.91, 0.0, 0.086], [0.0, 1.0, 0.0], [0.30, 0.0, 0.70]]),
            t(Es, 1, [0.70, 0.079, 0.22], [[0.85, 0.019, 0.13], [0.14, 0.81, 0.043], [0.39, 0.32, 0.58]]),
            t(Es, 2, [0.71, 0.16, 0.13], [[0.86, 0.079, 0.061], [0.17, 0.61, 0.21], [0.51, 0.18, 0.31]]),
            t(Es, 3, [0.50, 0.33, 0.13], [[0.80, 0.083, 0.12], [0.063, 0.90, 0.037], [0.30, 0.057, 0.64]]),
            t(Es, 4, [0.48, 0.20, 0.32], [[0.80, 0.027, 0.17], [0.042, 0.88, 0.78], [0.28, 0.058, 0.66]]),
        ])
    }

    pub fn get(&self, group: ClassGroup, period: u8) -> Option<&TransitionTable> {
        self.tables
            .iter()
            .find(|t| t.class_group == group && t.period_id == period)
    }

    pub fn tables(&self) -> &[TransitionTable] {
        &self.tables
    }

    pub fn normalized(&self) -> Result<Self, ModelError> {
        Ok(TransitionSet::new(
            self.tables
                .iter()
                .map(normalize_transition_table)
                .collect::<Result<_, _>>()?,
        ))
    }

    /// Reads a CSV with header
    /// `class_group,period,kind,p_home,p_work,p_poi`, where `kind` is one of
    /// `initial`, `row_home`, `row_work`, `row_poi`. Every (group, period) that
    /// appears must be given all four kinds.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Line {
            class_group: String,
            period: u8,
            kind: String,
            p_home: f64,
            p_work: f64,
            p_poi: f64,
        }

        let mut parts: BTreeMap<(ClassGroup, u8), [Option<[f64; 3]>; 4]> = BTreeMap::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (i, rec) in rdr.deserialize::<Line>().enumerate() {
            let line = rec.map_err(|e| ModelError::TransitionFile(e.to_string()))?;
            let group = ClassGroup::parse(&line.class_group).ok_or_else(|| {
                ModelError::TransitionFile(format!(
                    "record {}: unknown class group `{}`",
                    i + 1,
                    line.class_group
                ))
            })?;
            let slot = match line.kind.trim() {
                "initial" => 0,
                "row_home" => 1,
                "row_work" => 2,
                "row_poi" => 3,
                other => {
                    return Err(ModelError::TransitionFile(format!(
                        "record {}: unknown kind `{other}`",
                        i + 1
                    )))
                }
            };
            let entry = parts.entry((group, line.period)).or_default();
            if entry[slot].is_some() {
                return Err(ModelError::TransitionFile(format!(
                    "record {}: duplicate {} for {group} period {}",
                    i + 1,
                    line.kind,
                    line.period
                )));
            }
            entry[slot] = Some([line.p_home, line.p_work, line.p_poi]);
        }
        let mut tables = Vec::with_capacity(parts.len());
        for ((group, period), slots) in parts {
            const KINDS: [&str; 4] = ["initial", "row_home", "row_work", "row_poi"];
            let mut vals = [[0.0; 3]; 4];
            for (k, slot) in slots.iter().enumerate() {
                vals[k] = slot.ok_or_else(|| {
                    ModelError::MissingKey(format!("transitions.{group}.{period}.{}", KINDS[k]))
                })?;
            }
            tables.push(TransitionTable {
                class_group: group,
                period_id: period,
                initial: vals[0],
                matrix: [vals[1], vals[2], vals[3]],
            });
        }
        Ok(TransitionSet::new(tables))
    }

    /// Replaces tables of `self` with those present in `overrides`.
    pub fn overridden_by(&self, overrides: &TransitionSet) -> Self {
        let mut tables = self.tables.clone();
        for o in &overrides.tables {
            match tables
                .iter_mut()
                .find(|t| t.class_group == o.class_group && t.period_id == o.period_id)
            {
                Some(t) => *t = o.clone(),
                None => tables.push(o.clone()),
            }
        }
        TransitionSet::new(tables)
    }
}

// ---------------------------------------------------------------------------
// Roster

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: NodeId,
    pub class: NodeClass,
    /// Patient a caregiver looks after.
    pub paired_patient: Option<NodeId>,
}

/// Every node in a run, indexed by `NodeId`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Roster {
    pub nodes: Vec<NodeInfo>,
}

impl Roster {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn class_of(&self, id: NodeId) -> NodeClass {
        self.nodes[id].class
    }

    pub fn ids_of(&self, class: NodeClass) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(move |n| n.class == class).map(|n| n.id)
    }

    pub fn count(&self, class: NodeClass) -> usize {
        self.ids_of(class).count()
    }

    /// Builds a roster from classes in id order, pairing nothing.
    pub fn from_classes(classes: &[NodeClass]) -> Self {
        Roster {
            nodes: classes
                .iter()
                .enumerate()
                .map(|(id, &class)| NodeInfo {
                    id,
                    class,
                    paired_patient: None,
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Messages

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub source: NodeId,
    pub created_at: Minutes,
    pub ttl: Minutes,
    pub delivered_at: Option<Minutes>,
    pub expired: bool,
}

impl Message {
    pub fn new(id: MessageId, source: NodeId, created_at: Minutes, ttl: Minutes) -> Self {
        Message {
            id,
            source,
            created_at,
            ttl,
            delivered_at: None,
            expired: false,
        }
    }

    /// Last instant at which the message may still be delivered.
    pub fn expires_at(&self) -> Minutes {
        self.created_at.saturating_add(self.ttl)
    }

    /// Created, undelivered, unexpired and inside its TTL at `time`.
    pub fn is_live_at(&self, time: Minutes) -> bool {
        self.delivered_at.is_none() && !self.expired && time >= self.created_at && time <= self.expires_at()
    }

    pub fn latency(&self) -> Option<Minutes> {
        self.delivered_at.map(|t| t - self.created_at)
    }
}

// ---------------------------------------------------------------------------
// Scenario

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub range_mean_ft: f64,
    pub range_var_ft2: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            range_mean_ft: 60.0,
            range_var_ft2: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub adults: u32,
    pub patients: u32,
    pub caregivers: u32,
    pub clinical_staff: u32,
    pub destinations: u32,
    pub pois: u32,
    /// Fraction of adults carrying a participating device.
    pub participation: f64,
    pub employed_ratio: f64,
}

impl Default for Population {
    fn default() -> Self {
        Population {
            adults: 400,
            patients: 10,
            caregivers: 10,
            clinical_staff: 2,
            destinations: 1,
            pois: 25,
            participation: 0.3,
            employed_ratio: 0.935,
        }
    }
}

impl Population {
    /// Participating adults, `round(I * adults)`. Signed so that infeasible
    /// configurations can be reported rather than wrapped.
    pub fn participants(&self) -> i64 {
        (self.participation * f64::from(self.adults)).round() as i64
    }

    pub fn relays(&self) -> i64 {
        self.participants()
            - i64::from(self.patients)
            - i64::from(self.caregivers)
            - i64::from(self.clinical_staff)
    }

    pub fn employed_relays(&self) -> u32 {
        let relays = self.relays().max(0) as f64;
        (self.employed_ratio * relays).round() as u32
    }

    pub fn unemployed_relays(&self) -> u32 {
        self.relays().max(0) as u32 - self.employed_relays()
    }
}

/// Fixed locations for POIs and destinations, replacing the random draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteLayout {
    pub pois: Vec<Position>,
    pub destinations: Vec<Position>,
}

impl SiteLayout {
    /// Reads a CSV with header `kind,col,row`, `kind` being `poi` or `destination`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Line {
            kind: String,
            col: u32,
            row: u32,
        }
        let mut layout = SiteLayout {
            pois: Vec::new(),
            destinations: Vec::new(),
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for rec in rdr.deserialize::<Line>() {
            let line = rec.map_err(|e| ModelError::InvalidValue {
                key: "sites".into(),
                value: e.to_string(),
            })?;
            let pos = Position::new(line.col, line.row);
            match line.kind.as_str() {
                "poi" => layout.pois.push(pos),
                "destination" => layout.destinations.push(pos),
                other => {
                    return Err(ModelError::InvalidValue {
                        key: "sites.kind".into(),
                        value: other.into(),
                    })
                }
            }
        }
        Ok(layout)
    }
}

/// A validated, fully-populated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub grid: Grid,
    pub schedule: PeriodSchedule,
    /// Normalized tables for both class groups and every period.
    pub transitions: TransitionSet,
    pub population: Population,
    pub radio: RadioParams,
    pub ttl: Minutes,
    pub messages_per_patient_per_day: u32,
    /// Upper bound of a uniform per-message creation delay; 0 creates every
    /// message at the start of its day slot.
    pub creation_jitter: Minutes,
    pub timestep: Minutes,
    pub duration: Minutes,
    pub start_time_of_day: Minutes,
    pub seed: u64,
    pub sites: Option<SiteLayout>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        validate_scenario(&BTreeMap::new()).expect("built-in defaults are valid")
    }
}

/// Keys accepted in a scenario file.
pub const SCENARIO_KEYS: &[&str] = &[
    "grid.side_cells",
    "grid.cell_size_ft",
    "population.adults",
    "population.patients",
    "population.caregivers",
    "population.clinical_staff",
    "population.destinations",
    "population.pois",
    "population.participation",
    "population.employed_ratio",
    "radio.range_mean_ft",
    "radio.range_var_ft2",
    "message.ttl_hours",
    "message.per_patient_per_day",
    "message.creation_jitter_minutes",
    "sim.timestep_minutes",
    "sim.duration_hours",
    "sim.start_time",
    "sim.seed",
];

impl ScenarioSpec {
    /// Flat key-value form; feeding it back through validation reproduces `self`
    /// when combined with the same tables, schedule and sites.
    pub fn to_raw(&self) -> BTreeMap<String, String> {
        let p = &self.population;
        let hours = |m: Minutes| format!("{}", f64::from(m) / 60.0);
        [
            ("grid.side_cells", self.grid.side_cells.to_string()),
            ("grid.cell_size_ft", format!("{}", self.grid.cell_size_ft)),
            ("population.adults", p.adults.to_string()),
            ("population.patients", p.patients.to_string()),
            ("population.caregivers", p.caregivers.to_string()),
            ("population.clinical_staff", p.clinical_staff.to_string()),
            ("population.destinations", p.destinations.to_string()),
            ("population.pois", p.pois.to_string()),
            ("population.participation", format!("{}", p.participation)),
            ("population.employed_ratio", format!("{}", p.employed_ratio)),
            ("radio.range_mean_ft", format!("{}", self.radio.range_mean_ft)),
            ("radio.range_var_ft2", format!("{}", self.radio.range_var_ft2)),
            ("message.ttl_hours", hours(self.ttl)),
            ("message.per_patient_per_day", self.messages_per_patient_per_day.to_string()),
            ("message.creation_jitter_minutes", self.creation_jitter.to_string()),
            ("sim.timestep_minutes", self.timestep.to_string()),
            ("sim.duration_hours", hours(self.duration)),
            ("sim.start_time", format_hhmm(self.start_time_of_day)),
            ("sim.seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Re-runs validation on an existing spec.
    pub fn revalidate(&self) -> Result<ScenarioSpec, ModelError> {
        validate_parts(&self.to_raw(), &self.transitions, self.schedule.clone(), self.sites.clone())
    }

    /// Same scenario with a different seed.
    pub fn with_seed(&self, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            seed,
            ..self.clone()
        }
    }

    /// Number of DTMC steps in a run.
    pub fn steps(&self) -> u32 {
        self.duration / self.timestep
    }

    /// Hash of every field except the seed; runs of the same scenario under
    /// different seeds share it.
    pub fn fingerprint(&self) -> String {
        let unseeded = self.with_seed(0);
        let bytes = serde_json::to_vec(&unseeded).expect("scenario serializes");
        let digest = Sha256::digest(&bytes);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Creation times of one patient's messages inside the run, before jitter.
    pub fn message_slots(&self) -> Vec<Minutes> {
        let per_day = u64::from(self.messages_per_patient_per_day);
        (0u64..)
            .map(|k| (k * u64::from(MINUTES_PER_DAY) / per_day) as Minutes)
            .map(|t| t - t % self.timestep)
            .take_while(|t| *t < self.duration.max(1))
            .collect()
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_scenario_text(text: &str) -> Result<BTreeMap<String, String>, ModelError> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ModelError::InvalidValue {
            key: line.to_string(),
            value: String::new(),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Validates a raw key-value configuration against the built-in transition tables.
pub fn validate_scenario(raw: &BTreeMap<String, String>) -> Result<ScenarioSpec, ModelError> {
    validate_parts(raw, &TransitionSet::atus_raw(), PeriodSchedule::default(), None)
}

/// Validates a raw configuration with explicit transition tables (raw or
/// already normalized) and optional fixed sites.
pub fn validate_scenario_with(
    raw: &BTreeMap<String, String>,
    transitions: &TransitionSet,
    sites: Option<SiteLayout>,
) -> Result<ScenarioSpec, ModelError> {
    validate_parts(raw, transitions, PeriodSchedule::default(), sites)
}

struct Fields<'a> {
    raw: &'a BTreeMap<String, String>,
}

impl Fields<'_> {
    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ModelError> {
        match self.raw.get(key) {
            None => Ok(default),
            Some(v) if v.trim().is_empty() => Err(ModelError::MissingKey(key.to_string())),
            Some(v) => v.trim().parse().map_err(|_| ModelError::InvalidValue {
                key: key.to_string(),
                value: v.clone(),
            }),
        }
    }

    fn get_f64(&self, key: &str, default: f64) -> Result<f64, ModelError> {
        let v: f64 = self.get(key, default)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::InvalidValue {
                key: key.to_string(),
                value: v.to_string(),
            })
        }
    }

    fn hours_as_minutes(&self, key: &str, default: Minutes) -> Result<Minutes, ModelError> {
        let hours = self.get_f64(key, f64::from(default) / 60.0)?;
        let minutes = hours * 60.0;
        if minutes <= 0.0 || minutes > f64::from(u32::MAX) || (minutes - minutes.round()).abs() > 1e-9 {
            return Err(ModelError::OutOfRange {
                key: key.to_string(),
                reason: "must be a positive whole number of minutes".into(),
            });
        }
        Ok(minutes.round() as Minutes)
    }
}

fn out_of_range(key: &str, reason: impl Into<String>) -> ModelError {
    ModelError::OutOfRange {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn validate_parts(
    raw: &BTreeMap<String, String>,
    transitions: &TransitionSet,
    schedule: PeriodSchedule,
    sites: Option<SiteLayout>,
) -> Result<ScenarioSpec, ModelError> {
    if let Some(k) = raw.keys().find(|k| !SCENARIO_KEYS.contains(&k.as_str())) {
        return Err(ModelError::UnknownKey(k.clone()));
    }
    let f = Fields { raw };
    let dp = Population::default();
    let dr = RadioParams::default();
    let dg = Grid::default();

    let grid = Grid::new(
        f.get("grid.side_cells", dg.side_cells)?,
        f.get_f64("grid.cell_size_ft", dg.cell_size_ft)?,
    )?;

    let population = Population {
        adults: f.get("population.adults", dp.adults)?,
        patients: f.get("population.patients", dp.patients)?,
        caregivers: f.get("population.caregivers", dp.caregivers)?,
        clinical_staff: f.get("population.clinical_staff", dp.clinical_staff)?,
        destinations: f.get("population.destinations", dp.destinations)?,
        pois: f.get("population.pois", dp.pois)?,
        participation: f.get_f64("population.participation", dp.participation)?,
        employed_ratio: f.get_f64("population.employed_ratio", dp.employed_ratio)?,
    };
    if population.adults == 0 {
        return Err(out_of_range("population.adults", "must be at least 1"));
    }
    if population.patients == 0 {
        return Err(out_of_range("population.patients", "must be at least 1"));
    }
    if population.destinations == 0 {
        return Err(out_of_range("population.destinations", "must be at least 1"));
    }
    if population.pois == 0 {
        return Err(out_of_range("population.pois", "must be at least 1"));
    }
    if population.clinical_staff > 2 {
        return Err(out_of_range("population.clinical_staff", "at most 2 clinical staff"));
    }
    if population.participation <= 0.0 || !(0.0..=1.0).contains(&population.participation) {
        return Err(out_of_range("population.participation", "must lie in (0, 1]"));
    }
    if !(0.0..=1.0).contains(&population.employed_ratio) {
        return Err(out_of_range("population.employed_ratio", "must lie in [0, 1]"));
    }
    if u64::from(population.pois) + u64::from(population.destinations) > grid.total_cells() {
        return Err(out_of_range("population.pois", "more sites than grid cells"));
    }

    let relays = population.relays();
    if relays < 1 {
        return Err(ModelError::CardinalityViolation(format!(
            "relay count round({} x {}) - ({} + {} + {}) = {relays} must be at least 1",
            population.participation,
            population.adults,
            population.patients,
            population.caregivers,
            population.clinical_staff
        )));
    }
    if population.destinations > population.patients {
        return Err(ModelError::CardinalityViolation(format!(
            "|D| = {} exceeds |A| = {}",
            population.destinations, population.patients
        )));
    }
    if i64::from(population.patients) >= relays {
        return Err(ModelError::CardinalityViolation(format!(
            "|A| = {} must be smaller than |R| = {relays}",
            population.patients
        )));
    }
    if relays < 5 * i64::from(population.patients) {
        log::warn!(
            "only {relays} relays for {} patients; the relay population is not much larger than the patient population",
            population.patients
        );
    }

    let radio = RadioParams {
        range_mean_ft: f.get_f64("radio.range_mean_ft", dr.range_mean_ft)?,
        range_var_ft2: f.get_f64("radio.range_var_ft2", dr.range_var_ft2)?,
    };
    if radio.range_mean_ft < 0.0 {
        return Err(out_of_range("radio.range_mean_ft", "must be non-negative"));
    }
    if radio.range_var_ft2 < 0.0 {
        return Err(out_of_range("radio.range_var_ft2", "must be non-negative"));
    }

    let ttl = f.hours_as_minutes("message.ttl_hours", MINUTES_PER_DAY)?;
    let messages_per_patient_per_day: u32 = f.get("message.per_patient_per_day", 1)?;
    if messages_per_patient_per_day == 0 || messages_per_patient_per_day > MINUTES_PER_DAY {
        return Err(out_of_range(
            "message.per_patient_per_day",
            "must be between 1 and 1440",
        ));
    }
    let creation_jitter: Minutes = f.get("message.creation_jitter_minutes", 0)?;

    let timestep: Minutes = f.get("sim.timestep_minutes", 30)?;
    if timestep == 0 {
        return Err(out_of_range("sim.timestep_minutes", "must be positive"));
    }
    let duration = f.hours_as_minutes("sim.duration_hours", MINUTES_PER_DAY)?;
    if duration % timestep != 0 {
        return Err(out_of_range(
            "sim.duration_hours",
            format!("{duration} minutes is not a multiple of the {timestep}-minute timestep"),
        ));
    }
    let start_time_of_day = match raw.get("sim.start_time") {
        None => 0,
        Some(v) if v.trim().is_empty() => return Err(ModelError::MissingKey("sim.start_time".into())),
        Some(v) => parse_hhmm(v).ok_or_else(|| ModelError::InvalidValue {
            key: "sim.start_time".into(),
            value: v.clone(),
        })?,
    };
    let seed: u64 = f.get("sim.seed", 0)?;

    let transitions = transitions.normalized()?;
    for group in ClassGroup::ALL {
        for period in schedule.period_ids() {
            let table = transitions.get(group, period).ok_or_else(|| {
                ModelError::MissingKey(format!("transitions.{group}.{period}"))
            })?;
            if group == ClassGroup::Cua
                && (table.initial[1] != 0.0 || table.matrix[0][1] != 0.0 || table.matrix[2][1] != 0.0)
            {
                return Err(out_of_range(
                    &format!("transitions.CUA.{period}"),
                    "the CUA group has no work location; Work must be unreachable",
                ));
            }
        }
    }

    if let Some(layout) = &sites {
        if layout.pois.len() != population.pois as usize {
            return Err(out_of_range(
                "sites",
                format!("{} POIs listed, {} configured", layout.pois.len(), population.pois),
            ));
        }
        if layout.destinations.len() != population.destinations as usize {
            return Err(out_of_range(
                "sites",
                format!(
                    "{} destinations listed, {} configured",
                    layout.destinations.len(),
                    population.destinations
                ),
            ));
        }
        if let Some(p) = layout
            .pois
            .iter()
            .chain(&layout.destinations)
            .find(|p| !grid.contains(**p))
        {
            return Err(out_of_range(
                "sites",
                format!("cell ({}, {}) lies outside the grid", p.col, p.row),
            ));
        }
    }

    Ok(ScenarioSpec {
        grid,
        schedule,
        transitions,
        population,
        radio,
        ttl,
        messages_per_patient_per_day,
        creation_jitter,
        timestep,
        duration,
        start_time_of_day,
        seed,
        sites,
    })
}
