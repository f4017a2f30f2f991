//! Question-level weights: pass-rate estimation, the alpha-parameterized
//! variance weight, batch-adaptive normalization, and the baseline
//! schemes (hard filter, frozen offline table).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Empirical pass rate of one rollout group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassRateEstimate {
    pub successes: usize,
    pub group_size: usize,
    pub p_hat: f64,
}

pub fn pass_rate(rewards: &[bool]) -> Result<PassRateEstimate> {
    if rewards.is_empty() {
        return Err(Error::Parameter("empty rollout group".into()));
    }
    let successes = rewards.iter().filter(|&&r| r).count();
    Ok(PassRateEstimate {
        successes,
        group_size: rewards.len(),
        p_hat: successes as f64 / rewards.len() as f64,
    })
}

/// `[p(1-p)]^alpha`: zero at the endpoints, maximal at p = 0.5.
pub fn raw_weight(p_hat: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::Parameter(format!(
            "pass rate {p_hat} outside [0, 1]"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::Parameter(format!("alpha {alpha} must be > 0")));
    }
    Ok((p_hat * (1.0 - p_hat)).powf(alpha))
}

/// Raw and batch-normalized weights for one question batch.
#[derive(Debug, Clone)]
pub struct WeightVector {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    /// Indices with raw weight > 0.
    pub active_set: Vec<usize>,
    pub alpha: f64,
}

/// Divides each nonzero weight by the mean over the active set, so the
/// mean normalized weight over informative questions is exactly 1.
pub fn normalize_batch(raw: Vec<f64>, alpha: f64) -> WeightVector {
    let active_set: Vec<usize> = raw
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(j, _)| j)
        .collect();
    let normalized = if active_set.is_empty() {
        vec![0.0; raw.len()]
    } else {
        let mean: f64 =
            active_set.iter().map(|&j| raw[j]).sum::<f64>() / active_set.len() as f64;
        raw.iter().map(|&w| if w > 0.0 { w / mean } else { 0.0 }).collect()
    };
    WeightVector {
        raw,
        normalized,
        active_set,
        alpha,
    }
}

/// Binary retain/discard weight on an inclusive pass-rate band.
pub fn hard_filter_weight(p_hat: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&p_hat) {
        1.0
    } else {
        0.0
    }
}

/// Per-question weights computed once from an offline rollout pass,
/// normalized globally over the whole table, then frozen.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrozenWeightTable {
    pub alpha: f64,
    weights: BTreeMap<u64, f64>,
}

pub fn frozen_weight_table(
    initial_pass_rates: &BTreeMap<u64, f64>,
    alpha: f64,
) -> Result<FrozenWeightTable> {
    let mut raw = BTreeMap::new();
    for (&id, &p) in initial_pass_rates {
        raw.insert(id, raw_weight(p, alpha)?);
    }
    let nonzero: Vec<f64> = raw.values().copied().filter(|&w| w > 0.0).collect();
    let weights = if nonzero.is_empty() {
        raw
    } else {
        let mean: f64 = nonzero.iter().sum::<f64>() / nonzero.len() as f64;
        raw.into_iter()
            .map(|(id, w)| (id, if w > 0.0 { w / mean } else { 0.0 }))
            .collect()
    };
    Ok(FrozenWeightTable { alpha, weights })
}

impl FrozenWeightTable {
    pub fn weight(&self, question_id: u64) -> Result<f64> {
        self.weights.get(&question_id).copied().ok_or_else(|| {
            Error::Config(format!(
                "question {question_id} missing from the frozen weight table"
            ))
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}
