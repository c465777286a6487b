//! Parameter sweeps over patients, participation and seeds.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simulation::run_simulation;
use super::HarnessError;
use crate::metrics::{aggregate, AggregateResult, ConfigPoint, RunResult};
use crate::model::{ModelError, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dimension {
    Patients,
    Participation,
}

impl Dimension {
    pub fn label(self) -> &'static str {
        match self {
            Dimension::Patients => "patients",
            Dimension::Participation => "participation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "patients" => Some(Dimension::Patients),
            "participation" => Some(Dimension::Participation),
            _ => None,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ScenarioSpec,
    /// Patient counts to visit; empty keeps the base value.
    pub patients: Vec<u32>,
    /// Participation ratios to visit; empty keeps the base value.
    pub participation: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Keep the caregiver count equal to the patient count.
    pub caregivers_follow_patients: bool,
}

impl SweepSpec {
    pub fn new(base: ScenarioSpec) -> Self {
        SweepSpec {
            base,
            patients: Vec::new(),
            participation: Vec::new(),
            seeds: (0..=99).collect(),
            caregivers_follow_patients: true,
        }
    }

    pub fn varied(&self) -> Vec<Dimension> {
        let mut v = Vec::new();
        if !self.patients.is_empty() {
            v.push(Dimension::Patients);
        }
        if !self.participation.is_empty() {
            v.push(Dimension::Participation);
        }
        v
    }

    /// Validated scenario for every sweep point, patients-major.
    pub fn points(&self) -> Result<Vec<(ConfigPoint, ScenarioSpec)>, ModelError> {
        let base = &self.base.population;
        let patients = if self.patients.is_empty() {
            vec![base.patients]
        } else {
            self.patients.clone()
        };
        let participation = if self.participation.is_empty() {
            vec![base.participation]
        } else {
            self.participation.clone()
        };
        let mut out = Vec::with_capacity(patients.len() * participation.len());
        for &a in &patients {
            for &i in &participation {
                let mut spec = self.base.clone();
                spec.population.patients = a;
                if self.caregivers_follow_patients && !self.patients.is_empty() {
                    spec.population.caregivers = a;
                }
                spec.population.participation = i;
                let spec = spec.revalidate()?;
                out.push((
                    ConfigPoint {
                        patients: a,
                        participation: i,
                    },
                    spec,
                ));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub varied: Vec<Dimension>,
    pub rows: Vec<AggregateResult>,
}

/// Runs every (point, seed) pair on `jobs` worker threads. The table does not
/// depend on `jobs` or on scheduling order: each run is seeded only by its
/// own seed and results are gathered by index.
pub fn run_sweep(sweep: &SweepSpec, jobs: usize) -> Result<SweepTable, HarnessError> {
    let points = sweep.points()?;
    let tasks: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| sweep.seeds.iter().map(move |&s| (p, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Setup(e.to_string()))?;
    let results: Vec<Result<RunResult, HarnessError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(p, seed)| run_simulation(&points[p].1, seed))
            .collect()
    });

    let mut per_point: Vec<Vec<RunResult>> = vec![Vec::new(); points.len()];
    for ((p, _), r) in tasks.iter().zip(results) {
        per_point[*p].push(r?);
    }
    let rows = points
        .iter()
        .zip(per_point)
        .map(|((point, _), runs)| {
            aggregate(*point, &runs).map_err(|source| HarnessError::Point {
                patients: point.patients,
                participation: point.participation,
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepTable {
        varied: sweep.varied(),
        rows,
    })
}

fn range_error(text: &str) -> HarnessError {
    HarnessError::Usage(format!("cannot parse range `{text}`; expected start:end or start:step:end"))
}

/// Parses `start:end` or `start:step:end` (inclusive) integer ranges, or a
/// single value.
pub fn parse_int_range(text: &str) -> Result<Vec<u64>, HarnessError> {
    let parts: Vec<u64> = text
        .split(':')
        .map(|p| p.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|_| range_error(text))?;
    let (start, step, end) = match parts[..] {
        [v] => (v, 1, v),
        [s, e] => (s, 1, e),
        [s, st, e] => (s, st, e),
        _ => return Err(range_error(text)),
    };
    if step == 0 || end < start {
        return Err(range_error(text));
    }
    Ok((start..=end).step_by(step as usize).collect())
}

/// Float version of [`parse_int_range`]. Values are rounded to 12 decimals
/// so that `0.1:0.1:1.0` yields exactly 0.3 rather than 0.30000000000000004.
pub fn parse_float_range(text: &str) -> Result<Vec<f64>, HarnessError> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| range_error(text))?;
    let (start, step, end) = match parts[..] {
        [v] => (v, 1.0, v),
        [s, e] => (s, 1.0, e),
        [s, st, e] => (s, st, e),
        _ => return Err(range_error(text)),
    };
    if !step.is_finite() || step <= 0.0 || end < start || !start.is_finite() || !end.is_finite() {
        return Err(range_error(text));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}
