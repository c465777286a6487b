//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints its `PASS` or `FAIL` line; the process exits non-zero if
//! any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_instance, spearman, stationary, Comparison};
use rrpm_core::harness::{run_sweep, Simulation, SweepSpec, SweepTable};
use rrpm_core::mobility::{sample_initial_state, LocationAssignment, MobileNode, Site};
use rrpm_core::model::{ClassGroup, MobilityState, NodeClass, Position, ScenarioSpec, TransitionSet};

const SEEDS: std::ops::RangeInclusive<u64> = 0..=99;

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn report(id: &str, name: &str, pass: bool, detail: &str) {
    println!("{id} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn hours(minutes: Option<f64>) -> f64 {
    minutes.map_or(f64::NAN, |m| m / 60.0)
}

/// Patients 2..=10 step 2 at participation 0.30, 100 seeds each.
fn patients_sweep() -> &'static SweepTable {
    static TABLE: OnceLock<SweepTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut spec = SweepSpec::new(ScenarioSpec::default());
        spec.patients = vec![2, 4, 6, 8, 10];
        spec.participation = vec![0.3];
        spec.seeds = SEEDS.collect();
        run_sweep(&spec, jobs()).expect("patients sweep runs")
    })
}

/// Participation 0.1..=1.0 step 0.1 with ten patients, 100 seeds each.
fn participation_sweep() -> &'static (SweepTable, f64) {
    static TABLE: OnceLock<(SweepTable, f64)> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut spec = SweepSpec::new(ScenarioSpec::default());
        spec.participation = (1..=10).map(|i| f64::from(i) / 10.0).collect();
        spec.seeds = SEEDS.collect();
        let start = Instant::now();
        let table = run_sweep(&spec, jobs()).expect("participation sweep runs");
        (table, start.elapsed().as_secs_f64())
    })
}

fn ac1_headline_default_scenario() -> bool {
    let mut spec = SweepSpec::new(ScenarioSpec::default());
    spec.seeds = SEEDS.collect();
    let start = Instant::now();
    let table = run_sweep(&spec, jobs()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let row = &table.rows[0];
    assert_eq!((row.point.patients, row.point.participation), (10, 0.3));
    let latency_h = hours(row.mean_latency);
    let pass = (0.80..=1.00).contains(&row.mean_delivery) && (9.0..=17.0).contains(&latency_h) && secs < 60.0;
    report(
        "AC1",
        "headline delivery and latency",
        pass,
        &format!("delivery {:.3}, latency {latency_h:.2} h, {secs:.1} s", row.mean_delivery),
    );
    pass
}

fn ac2_participation_range() -> bool {
    let (table, secs) = participation_sweep();
    let deliveries: Vec<f64> = table.rows.iter().map(|r| r.mean_delivery).collect();
    let min = deliveries.iter().copied().fold(f64::INFINITY, f64::min);
    let max = deliveries.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grand = deliveries.iter().sum::<f64>() / deliveries.len() as f64;
    let pass = min <= 0.40 && max >= 0.99 && (0.75..=0.97).contains(&grand) && *secs < 600.0;
    report(
        "AC2",
        "delivery range over participation",
        pass,
        &format!("per-point min {min:.3}, max {max:.3}, grand mean {grand:.3}, {secs:.1} s"),
    );
    pass
}

fn ac3_trends() -> bool {
    let (part, _) = participation_sweep();
    let pats = patients_sweep();
    let lat_at = |t: &SweepTable, pick: &dyn Fn(&rrpm_core::AggregateResult) -> bool| {
        t.rows.iter().find(|r| pick(r)).and_then(|r| r.mean_latency).unwrap()
    };
    let low = lat_at(part, &|r| (r.point.participation - 0.1).abs() < 1e-9);
    let high = lat_at(part, &|r| (r.point.participation - 1.0).abs() < 1e-9);
    let two = lat_at(pats, &|r| r.point.patients == 2);
    let ten = lat_at(pats, &|r| r.point.patients == 10);
    let xs: Vec<f64> = part.rows.iter().map(|r| r.point.participation).collect();
    let ys: Vec<f64> = part.rows.iter().map(|r| r.mean_delivery).collect();
    let rho = spearman(&xs, &ys);

    let faster = high < low;
    let slower = ten >= two;
    let monotone = rho >= 0.9;
    report(
        "AC3a",
        "latency falls with participation",
        faster,
        &format!("I=1.0 {:.2} h vs I=0.1 {:.2} h", high / 60.0, low / 60.0),
    );
    report(
        "AC3b",
        "latency grows with patients",
        slower,
        &format!("|A|=10 {:.2} h vs |A|=2 {:.2} h", ten / 60.0, two / 60.0),
    );
    report("AC3c", "delivery rank-correlates with participation", monotone, &format!("spearman {rho:.3}"));
    report("AC3", "trend reproduction", faster && slower && monotone, "all three trends");
    faster && slower && monotone
}

fn ac4_latency_window() -> bool {
    let table = patients_sweep();
    let lat: Vec<(u32, f64)> = table
        .rows
        .iter()
        .map(|r| (r.point.patients, hours(r.mean_latency)))
        .collect();
    let pass = lat.iter().all(|(_, h)| (2.0..=20.0).contains(h));
    let detail = lat
        .iter()
        .map(|(a, h)| format!("|A|={a}: {h:.2} h"))
        .collect::<Vec<_>>()
        .join(", ");
    report("AC4", "latency window over patients", pass, &detail);
    pass
}

fn ac5_oracle_equivalence() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut total = Comparison::default();
    let instances = 100;
    for _ in 0..instances {
        let c = random_instance(&mut rng);
        total.rounds += c.rounds;
        total.checks += c.checks;
        total.mismatches += c.mismatches;
    }
    let pass = total.mismatches == 0;
    report(
        "AC5",
        "oracle equivalence",
        pass,
        &format!(
            "{instances} instances, {} rounds, {} checks, {} mismatches",
            total.rounds, total.checks, total.mismatches
        ),
    );
    pass
}

/// Every invariant violation seen while stepping whole simulations.
#[derive(Default)]
struct Violations {
    node_steps: u64,
    failures: Vec<String>,
}

impl Violations {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok && self.failures.len() < 20 {
            self.failures.push(what());
        }
    }
}

fn check_run(spec: &ScenarioSpec, seed: u64, v: &mut Violations) {
    let mut sim = Simulation::new(spec, seed).unwrap();
    let n_nodes = sim.roster().len();
    let n_msgs = sim.messages().len();
    let ttl = spec.ttl;
    let mut prev: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_msgs];
    let mut prev_delivered = vec![None; n_msgs];

    while let Some(report) = sim.advance() {
        v.node_steps += sim.mobile_nodes().len() as u64;
        for node in sim.mobile_nodes() {
            v.check(node.is_consistent(sim.pois()), || format!("seed {seed} t={} node {} inconsistent", report.time, node.node_id));
            v.check(sim.positions()[node.node_id] == node.position, || format!("seed {seed} node {} position cache", node.node_id));
            let cua = node.class_group() == ClassGroup::Cua;
            v.check(!(cua && node.state == MobilityState::Work), || format!("seed {seed} t={} CUA node {} at work", report.time, node.node_id));
        }
        for (m, msg) in sim.messages().iter().enumerate() {
            let holders: BTreeSet<usize> = sim.replicas(m).collect();
            // N_m and L_m split the node set: every holder is a real node.
            v.check(holders.iter().all(|&n| n < n_nodes), || format!("seed {seed} message {m} unknown holder"));
            if msg.expired {
                v.check(holders.is_empty(), || format!("seed {seed} message {m} expired with copies"));
            } else if prev_delivered[m].is_some() {
                v.check(holders == prev[m], || format!("seed {seed} message {m} changed after delivery"));
            } else {
                v.check(prev[m].is_subset(&holders), || format!("seed {seed} t={} message {m} lost a replica", report.time));
            }
            if let Some(z) = msg.latency() {
                v.check(z <= ttl, || format!("seed {seed} message {m} latency {z} > ttl {ttl}"));
                v.check(msg.delivered_at.unwrap() >= msg.created_at, || format!("seed {seed} message {m} delivered before creation"));
            }
            v.check(!(msg.expired && msg.delivered_at.is_some()), || format!("seed {seed} message {m} both expired and delivered"));
            prev[m] = holders;
            prev_delivered[m] = msg.delivered_at;
        }
    }
    let r = sim.result().unwrap();
    v.check((0.0..=1.0).contains(&r.delivery_probability), || format!("seed {seed} p = {}", r.delivery_probability));
    v.check(
        r.delivered_count + r.expired_count + r.live_count == r.total_messages,
        || format!("seed {seed} message accounting"),
    );
    v.check(
        (r.delivery_probability - r.delivered_count as f64 / r.total_messages as f64).abs() < 1e-12,
        || format!("seed {seed} p disagrees with counts"),
    );
}

fn ac6_invariants() -> bool {
    let mut v = Violations::default();
    for table in TransitionSet::atus_raw().normalized().unwrap().tables() {
        for row in std::iter::once(&table.initial).chain(table.matrix.iter()) {
            let s: f64 = row.iter().sum();
            v.check((s - 1.0).abs() <= 1e-9, || format!("{:?} period {} row sum {s}", table.class_group, table.period_id));
        }
    }
    let spec = ScenarioSpec::default();
    for &i in &[1.0, 0.3] {
        let mut s = spec.clone();
        s.population.participation = i;
        let s = s.revalidate().unwrap();
        let mut seed = 0;
        let target = if i == 1.0 { 1_000_000 } else { 1_200_000 };
        while v.node_steps < target {
            check_run(&s, seed, &mut v);
            seed += 1;
        }
    }
    let pass = v.failures.is_empty() && v.node_steps >= 1_000_000;
    report(
        "AC6",
        "invariant suite",
        pass,
        &format!("{} node-steps, {} violations", v.node_steps, v.failures.len()),
    );
    for f in &v.failures {
        println!("    {f}");
    }
    pass
}

fn cli_sweep(jobs: &str) -> Vec<u8> {
    let o = Command::new(env!("CARGO_BIN_EXE_rrpm"))
        .args(["sweep", "--vary", "participation=0.1:0.3:1.0", "--vary", "patients=2:4:10", "--seeds", "0:19", "--jobs", jobs])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o.stdout
}

fn ac7_determinism() -> bool {
    let first = cli_sweep("1");
    let second = cli_sweep("1");
    let parallel = cli_sweep("8");
    let pass = !first.is_empty() && first == second && first == parallel;
    report(
        "AC7",
        "byte-identical sweep CSV",
        pass,
        &format!("{} bytes; repeat equal {}, jobs 1 vs 8 equal {}", first.len(), first == second, first == parallel),
    );
    pass
}

fn ac8_stationary_occupancy() -> bool {
    const NODES: usize = 10_000;
    const STEPS: usize = 200;
    let tables = TransitionSet::atus_raw().normalized().unwrap();
    let pois = [Site { node: 0, cell: Position::new(5, 5) }];
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for table in tables.tables() {
        let group = table.class_group;
        let class = match group {
            ClassGroup::Cua => NodeClass::RelayUnemployed,
            ClassGroup::Es => NodeClass::RelayEmployed,
        };
        let work_cell = (group == ClassGroup::Es).then_some(Position::new(1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from(table.period_id) + 10 * (group as u64));
        let mut nodes: Vec<MobileNode> = (0..NODES)
            .map(|id| {
                let a = LocationAssignment { node_id: id, home_cell: Position::new(0, 0), work_cell, paired_patient: None };
                let s = sample_initial_state(group, table.period_id, &tables, &mut rng);
                MobileNode::new(class, a, s, &pois, &mut rng)
            })
            .collect();
        let mut counts = [0u64; 3];
        for step in 0..STEPS {
            for n in &mut nodes {
                n.step(table, &pois, &mut rng);
                if step >= STEPS / 2 {
                    counts[n.state.index()] += 1;
                }
            }
        }
        let total = counts.iter().sum::<u64>() as f64;
        let empirical = counts.map(|c| c as f64 / total);
        let oracle = stationary(table.initial, table.matrix);
        let l1: f64 = empirical.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).sum();
        worst = worst.max(l1);
        lines.push(format!("{}/P{} L1 {l1:.4}", group.label(), table.period_id));
    }
    let pass = worst <= 0.02;
    report("AC8", "stationary occupancy", pass, &format!("worst L1 {worst:.4}; {}", lines.join(", ")));
    pass
}

fn main() {
    let criteria: [fn() -> bool; 8] = [
        ac1_headline_default_scenario,
        ac2_participation_range,
        ac3_trends,
        ac4_latency_window,
        ac5_oracle_equivalence,
        ac6_invariants,
        ac7_determinism,
        ac8_stationary_occupancy,
    ];
    let failed = criteria.iter().filter(|c| !c()).count();
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
