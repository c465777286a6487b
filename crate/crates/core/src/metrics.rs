//! Per-run delivery metrics and cross-seed aggregation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Message, Minutes};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no messages were generated")]
    EmptyMessageSet,
    #[error("no message was delivered")]
    NoDeliveries,
    #[error("runs come from different scenarios ({0} vs {1})")]
    MixedScenarios(String, String),
    #[error("at least 2 seeds are needed for a standard error, got {0}")]
    InsufficientSeeds(usize),
}

/// Fraction of generated messages that reached a destination.
pub fn delivery_probability(delivered: usize, total: usize) -> Result<f64, MetricsError> {
    if total == 0 {
        return Err(MetricsError::EmptyMessageSet);
    }
    debug_assert!(delivered <= total);
    Ok(delivered as f64 / total as f64)
}

/// Worst delivery latency among delivered messages.
pub fn max_latency(latencies: &[Minutes]) -> Result<Minutes, MetricsError> {
    latencies.iter().copied().max().ok_or(MetricsError::NoDeliveries)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean using the n-1 sample standard deviation.
pub fn sem(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub fingerprint: String,
    pub total_messages: usize,
    pub delivered_count: usize,
    pub expired_count: usize,
    /// Messages neither delivered nor expired when the run ended.
    pub live_count: usize,
    pub delivery_probability: f64,
    /// Latency of each delivered message, in message-id order.
    pub latencies: Vec<Minutes>,
    pub z_max: Option<Minutes>,
    pub mean_latency: Option<f64>,
}

impl RunResult {
    pub fn from_messages(seed: u64, fingerprint: String, messages: &[Message]) -> Result<Self, MetricsError> {
        let latencies: Vec<Minutes> = messages.iter().filter_map(Message::latency).collect();
        let delivered_count = latencies.len();
        let expired_count = messages.iter().filter(|m| m.expired).count();
        let lat_f: Vec<f64> = latencies.iter().map(|&l| f64::from(l)).collect();
        Ok(RunResult {
            seed,
            fingerprint,
            total_messages: messages.len(),
            delivered_count,
            expired_count,
            live_count: messages.len() - delivered_count - expired_count,
            delivery_probability: delivery_probability(delivered_count, messages.len())?,
            z_max: max_latency(&latencies).ok(),
            mean_latency: (!lat_f.is_empty()).then(|| mean(&lat_f)),
            latencies,
        })
    }
}

/// Where a set of runs sits in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub patients: u32,
    pub participation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub point: ConfigPoint,
    pub n_seeds: usize,
    pub mean_delivery: f64,
    pub sem_delivery: f64,
    /// Mean over seeds of each seed's mean latency, in minutes.
    pub mean_latency: Option<f64>,
    pub sem_latency: Option<f64>,
    pub max_latency: Option<Minutes>,
    pub seeds_no_delivery: usize,
    /// Per-seed results, sorted by seed.
    pub runs: Vec<RunResult>,
}

/// Means and standard errors across seeds of one scenario. Latency statistics
/// skip seeds without any delivery.
pub fn aggregate(point: ConfigPoint, results: &[RunResult]) -> Result<AggregateResult, MetricsError> {
    if results.len() < 2 {
        return Err(MetricsError::InsufficientSeeds(results.len()));
    }
    let first = &results[0].fingerprint;
    if let Some(other) = results.iter().find(|r| &r.fingerprint != first) {
        return Err(MetricsError::MixedScenarios(first.clone(), other.fingerprint.clone()));
    }
    let mut runs = results.to_vec();
    runs.sort_by_key(|r| r.seed);

    let delivery: Vec<f64> = runs.iter().map(|r| r.delivery_probability).collect();
    let latency: Vec<f64> = runs.iter().filter_map(|r| r.mean_latency).collect();
    Ok(AggregateResult {
        point,
        n_seeds: runs.len(),
        mean_delivery: mean(&delivery),
        sem_delivery: sem(&delivery).expect("at least two seeds"),
        mean_latency: (!latency.is_empty()).then(|| mean(&latency)),
        sem_latency: sem(&latency),
        max_latency: runs.iter().filter_map(|r| r.z_max).max(),
        seeds_no_delivery: runs.len() - latency.len(),
        runs,
    })
}
