//! Probability vectors over a finite vocabulary, KL / Jensen-Shannon
//! divergences, and the top-K + tail-bucket truncation used by the
//! distillation loss.
//!
//! All arithmetic is f64. Truncated distributions treat the tail bucket
//! as one ordinary outcome, so a divergence on a `TruncatedDist` pair is
//! just the divergence over K+1 outcomes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for "sums to one" checks.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A full probability mass function over token ids `0..V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    mass: Vec<f64>,
}

impl ProbVector {
    /// Validates non-negativity and unit total mass.
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::InvalidDistribution("empty mass vector".into()));
        }
        for (i, &m) in mass.iter().enumerate() {
            if !m.is_finite() || m < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "entry {i} is {m}, expected a finite non-negative value"
                )));
            }
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "total mass {total} differs from 1 by more than {MASS_TOLERANCE}"
            )));
        }
        Ok(Self { mass })
    }

    /// Normalizes raw non-negative scores into a distribution.
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidDistribution("empty input".into()));
        }
        for (i, &r) in raw.iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "entry {i} is {r}, expected a finite non-negative value"
                )));
            }
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution(
                "all entries are zero".into(),
            ));
        }
        Ok(Self {
            mass: raw.iter().map(|r| r / total).collect(),
        })
    }

    /// Numerically stable softmax.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self {
            mass: exps.iter().map(|e| e / total).collect(),
        }
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            mass: vec![1.0 / len as f64; len],
        }
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Keeps the `k` highest-mass tokens as named buckets and folds the
    /// rest into a tail bucket. Ties break toward the lower token id.
    pub fn truncate_top_k(&self, k: usize) -> Result<TruncatedDist> {
        if k == 0 || k > self.len() {
            return Err(Error::Parameter(format!(
                "top-k {k} out of range 1..={}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.mass[b]
                .partial_cmp(&self.mass[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        order.truncate(k);
        let bucket_mass: Vec<f64> = order.iter().map(|&i| self.mass[i]).collect();
        let kept: f64 = bucket_mass.iter().sum();
        Ok(TruncatedDist {
            indices: order,
            bucket_mass,
            tail_mass: snap_tail(1.0 - kept),
        })
    }

    /// Gathers this distribution onto another truncation's index set;
    /// mass outside the set goes to the tail bucket.
    pub fn project_onto(&self, template: &TruncatedDist) -> Result<TruncatedDist> {
        for &i in &template.indices {
            if i >= self.len() {
                return Err(Error::ShapeMismatch(format!(
                    "template index {i} out of range for vocabulary {}",
                    self.len()
                )));
            }
        }
        let bucket_mass: Vec<f64> = template.indices.iter().map(|&i| self.mass[i]).collect();
        let kept: f64 = bucket_mass.iter().sum();
        Ok(TruncatedDist {
            indices: template.indices.clone(),
            bucket_mass,
            tail_mass: snap_tail(1.0 - kept),
        })
    }
}

/// Residual tail mass below rounding noise is treated as exactly zero so
/// that a k = V truncation keeps the same support as the full vector.
fn snap_tail(tail: f64) -> f64 {
    if tail < 1e-12 {
        0.0
    } else {
        tail
    }
}

/// Top-K buckets plus an aggregated tail bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedDist {
    indices: Vec<usize>,
    bucket_mass: Vec<f64>,
    tail_mass: f64,
}

impl TruncatedDist {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn bucket_mass(&self) -> &[f64] {
        &self.bucket_mass
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Bucket masses with the tail appended as the final outcome.
    pub fn outcome_masses(&self) -> Vec<f64> {
        let mut out = self.bucket_mass.clone();
        out.push(self.tail_mass);
        out
    }

    fn check_same_indices(&self, other: &Self) -> Result<()> {
        if self.indices != other.indices {
            return Err(Error::ShapeMismatch(
                "truncated distributions have different index sets".into(),
            ));
        }
        Ok(())
    }
}

/// KL(p || q) over shared outcomes. Terms with p = 0 contribute nothing;
/// p > 0 where q = 0 is a support violation.
pub fn kl_on_outcomes(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "lengths {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::SupportMismatch {
                    outcome: i,
                    p_mass: pi,
                });
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total)
}

/// Jensen-Shannon divergence over shared outcomes; bounded by ln 2 and
/// finite for any pair since the mixture covers both supports.
pub fn jsd_on_outcomes(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "lengths {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(&a, &b)| 0.5 * (a + b)).collect();
    Ok(0.5 * kl_on_outcomes(p, &m)? + 0.5 * kl_on_outcomes(q, &m)?)
}

pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    kl_on_outcomes(p.mass(), q.mass())
}

pub fn jsd(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    jsd_on_outcomes(p.mass(), q.mass())
}

pub fn kl_divergence_truncated(p: &TruncatedDist, q: &TruncatedDist) -> Result<f64> {
    p.check_same_indices(q)?;
    kl_on_outcomes(&p.outcome_masses(), &q.outcome_masses())
}

pub fn jsd_truncated(p: &TruncatedDist, q: &TruncatedDist) -> Result<f64> {
    p.check_same_indices(q)?;
    jsd_on_outcomes(&p.outcome_masses(), &q.outcome_masses())
}
