//! Brute-force reference implementations shared by the integration tests.
//! They follow the definitions directly and share no code with the library.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rrpm_core::model::{Grid, Message, Minutes, Position};
use rrpm_core::network::{exchange, expire, ContactEvent, MessageStore};

/// Every unordered pair within mutual range, straight from the definition.
pub fn brute_contacts(grid: &Grid, positions: &[Position], ranges: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..positions.len() {
        for b in a + 1..positions.len() {
            let dx = (positions[a].col as f64 - positions[b].col as f64) * grid.cell_size_ft;
            let dy = (positions[a].row as f64 - positions[b].row as f64) * grid.cell_size_ft;
            if (dx * dx + dy * dy).sqrt() <= ranges[a].min(ranges[b]) {
                out.push((a, b));
            }
        }
    }
    out
}

pub fn pairs(c: &[ContactEvent]) -> Vec<(usize, usize)> {
    c.iter().map(|e| (e.node_a, e.node_b)).collect()
}

/// Reference epidemic process over explicit replica sets.
pub struct OracleSim {
    pub replicas: Vec<BTreeSet<usize>>,
    pub created: Vec<Minutes>,
    pub ttl: Minutes,
    pub delivered: Vec<Option<Minutes>>,
    pub expired: Vec<bool>,
    pub destinations: BTreeSet<usize>,
}

impl OracleSim {
    pub fn round(&mut self, contacts: &[(usize, usize)], time: Minutes) {
        for m in 0..self.replicas.len() {
            let live = self.delivered[m].is_none() && !self.expired[m] && time <= self.created[m] + self.ttl;
            if !live {
                continue;
            }
            let before = self.replicas[m].clone();
            for &(a, b) in contacts {
                for (n, l) in [(a, b), (b, a)] {
                    if before.contains(&n) && !before.contains(&l) && !self.destinations.contains(&n) {
                        self.replicas[m].insert(l);
                    }
                }
            }
            if self.replicas[m].iter().any(|n| self.destinations.contains(n)) {
                self.delivered[m] = Some(time);
            }
        }
        for m in 0..self.replicas.len() {
            if self.delivered[m].is_none() && !self.expired[m] && time > self.created[m] + self.ttl {
                self.expired[m] = true;
                self.replicas[m].clear();
            }
        }
    }
}

/// Outcome of one randomized comparison between the library and the oracles.
#[derive(Debug, Default, Clone, Copy)]
pub struct Comparison {
    pub rounds: usize,
    pub checks: usize,
    pub mismatches: usize,
}

/// Random small world: up to 10 nodes on a small grid with random ranges,
/// random positions every round, and up to 10 rounds. Contacts come from the
/// library's spatial hash and are checked against the all-pairs oracle before
/// being fed to both exchange implementations.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Comparison {
    let nodes = rng.random_range(2..=10);
    let rounds = rng.random_range(1..=10);
    let n_msgs = rng.random_range(1..=4);
    let step: Minutes = 30;
    let ttl: Minutes = step * rng.random_range(1..=8);
    let grid = Grid::new(8, 10.0).unwrap();
    let ranges: Vec<f64> = (0..nodes).map(|_| rng.random_range(0.0..50.0)).collect();

    // Node 0 is never a destination so every instance has a possible source.
    let destinations: BTreeSet<usize> = (1..nodes).filter(|_| rng.random_bool(0.2)).collect();
    let is_dest: Vec<bool> = (0..nodes).map(|n| destinations.contains(&n)).collect();
    let candidates: Vec<usize> = (0..nodes).filter(|n| !destinations.contains(n)).collect();
    let sources: Vec<usize> = (0..n_msgs)
        .map(|_| candidates[rng.random_range(0..candidates.len())])
        .collect();
    let created: Vec<Minutes> = (0..n_msgs).map(|_| step * rng.random_range(0..3)).collect();

    let mut messages: Vec<Message> = (0..n_msgs)
        .map(|id| Message::new(id, sources[id], created[id], ttl))
        .collect();
    let mut stores: Vec<MessageStore> = (0..nodes).map(MessageStore::new).collect();
    let mut oracle = OracleSim {
        replicas: vec![BTreeSet::new(); n_msgs],
        created: created.clone(),
        ttl,
        delivered: vec![None; n_msgs],
        expired: vec![false; n_msgs],
        destinations,
    };

    let mut out = Comparison {
        rounds,
        ..Comparison::default()
    };
    for r in 0..rounds {
        let time = r as Minutes * step;
        for m in 0..n_msgs {
            if created[m] == time {
                stores[sources[m]].held.insert(m);
                oracle.replicas[m].insert(sources[m]);
            }
        }
        let positions: Vec<Position> = (0..nodes)
            .map(|_| Position::new(rng.random_range(0..8), rng.random_range(0..8)))
            .collect();
        let events = rrpm_core::network::detect_contacts(&grid, &positions, &ranges, time);
        let contacts = brute_contacts(&grid, &positions, &ranges);
        out.checks += 1;
        if pairs(&events) != contacts {
            out.mismatches += 1;
        }
        exchange(&events, &mut stores, &mut messages, &is_dest, time);
        expire(&mut messages, &mut stores, time);
        oracle.round(&contacts, time);

        for (m, replica) in oracle.replicas.iter().enumerate() {
            let held: BTreeSet<usize> = stores.iter().filter(|s| s.holds(m)).map(|s| s.node_id).collect();
            out.checks += 3;
            out.mismatches += usize::from(&held != replica);
            out.mismatches += usize::from(messages[m].delivered_at != oracle.delivered[m]);
            out.mismatches += usize::from(messages[m].expired != oracle.expired[m]);
        }
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Long-run occupancy of a chain started from `initial`, by power iteration
/// on the lazy chain (P + I) / 2. The lazy chain has the same stationary
/// distributions and no periodicity, so the iteration converges.
pub fn stationary(initial: [f64; 3], matrix: [[f64; 3]; 3]) -> [f64; 3] {
    let mut pi = initial;
    for _ in 0..100_000 {
        let mut next = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                let lazy = 0.5 * matrix[i][j] + if i == j { 0.5 } else { 0.0 };
                next[j] += pi[i] * lazy;
            }
        }
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}
