//! Linear-softmax sequence policy with a feedback-conditioned
//! self-teacher branch and an EMA teacher copy.
//!
//! Student logits are `W phi + bias * onehot(answer_t)`; the teacher runs
//! on the EMA weights with an extra additive bonus `gamma_f` on the
//! feedback token. All log-probabilities and gradients are analytic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::ProbVector;
use crate::env::{evaluate, Feedback, Question, Rollout, RolloutGroup};
use crate::error::{Error, Result};
use crate::weighting::pass_rate;

/// Deterministic embedding of (question context, position, previous
/// token) into the policy's feature space: the context vector, a one-hot
/// of the position, and a one-hot of the previous token (zero at t = 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub context_dim: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        self.context_dim + self.seq_len + self.vocab_size
    }

    pub fn features(&self, question: &Question, t: usize, prefix: &[usize]) -> Vec<f64> {
        let mut phi = vec![0.0; self.dim()];
        phi[..self.context_dim].copy_from_slice(&question.context);
        phi[self.context_dim + t] = 1.0;
        if let Some(&prev) = prefix.last() {
            phi[self.context_dim + self.seq_len + prev] = 1.0;
        }
        phi
    }
}

/// Policy parameters: live weights, their EMA copy for the teacher
/// branch, and the feedback-conditioning gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub feature_map: FeatureMap,
    /// Row-major `vocab_size x feature_dim` weight matrix.
    pub w: Vec<f64>,
    pub ema_w: Vec<f64>,
    pub feedback_gain: f64,
    pub ema_rate: f64,
    pub step: u64,
}

impl PolicyParams {
    pub fn new(feature_map: FeatureMap, feedback_gain: f64, ema_rate: f64) -> Result<Self> {
        if feedback_gain < 0.0 {
            return Err(Error::Parameter(format!(
                "feedback gain {feedback_gain} must be non-negative"
            )));
        }
        if !(ema_rate > 0.0 && ema_rate <= 1.0) {
            return Err(Error::Parameter(format!(
                "ema rate {ema_rate} must lie in (0, 1]"
            )));
        }
        let n = feature_map.vocab_size * feature_map.dim();
        Ok(Self {
            feature_map,
            w: vec![0.0; n],
            ema_w: vec![0.0; n],
            feedback_gain,
            ema_rate,
            step: 0,
        })
    }

    fn logits_with(&self, weights: &[f64], question: &Question, t: usize, prefix: &[usize]) -> Vec<f64> {
        let dim = self.feature_map.dim();
        let phi = self.feature_map.features(question, t, prefix);
        let mut logits: Vec<f64> = (0..self.feature_map.vocab_size)
            .map(|v| {
                weights[v * dim..(v + 1) * dim]
                    .iter()
                    .zip(&phi)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect();
        logits[question.answer[t]] += question.difficulty_bias;
        logits
    }

    pub fn student_logits(&self, question: &Question, t: usize, prefix: &[usize]) -> Vec<f64> {
        self.logits_with(&self.w, question, t, prefix)
    }

    /// Teacher branch: EMA weights plus the privileged-feedback bonus on
    /// the feedback token at this position.
    pub fn teacher_logits(
        &self,
        question: &Question,
        t: usize,
        prefix: &[usize],
        feedback: &Feedback,
    ) -> Result<Vec<f64>> {
        if feedback.question_id != question.id || feedback.answer_tokens != question.answer {
            return Err(Error::Parameter(format!(
                "feedback for question {} does not match question {}",
                feedback.question_id, question.id
            )));
        }
        let mut logits = self.logits_with(&self.ema_w, question, t, prefix);
        logits[feedback.answer_tokens[t]] += self.feedback_gain;
        Ok(logits)
    }

    pub fn student_dist(&self, question: &Question, t: usize, prefix: &[usize]) -> ProbVector {
        ProbVector::from_logits(&self.student_logits(question, t, prefix))
    }

    pub fn teacher_dist(
        &self,
        question: &Question,
        t: usize,
        prefix: &[usize],
        feedback: &Feedback,
    ) -> Result<ProbVector> {
        Ok(ProbVector::from_logits(&self.teacher_logits(
            question, t, prefix, feedback,
        )?))
    }

    /// Samples G rollouts token-by-token at the given temperature and
    /// scores them with the exact-match reward.
    pub fn sample_rollouts(
        &self,
        question: &Question,
        group_size: usize,
        temperature: f64,
        rng: &mut impl Rng,
        step: u64,
    ) -> Result<RolloutGroup> {
        if group_size < 1 {
            return Err(Error::Parameter("group size must be at least 1".into()));
        }
        if !(temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature {temperature} must be > 0"
            )));
        }
        let mut rollouts = Vec::with_capacity(group_size);
        for _ in 0..group_size {
            let mut tokens = Vec::with_capacity(self.feature_map.seq_len);
            for t in 0..self.feature_map.seq_len {
                let logits: Vec<f64> = self
                    .student_logits(question, t, &tokens)
                    .iter()
                    .map(|z| z / temperature)
                    .collect();
                let probs = ProbVector::from_logits(&logits);
                tokens.push(sample_index(probs.mass(), rng));
            }
            let reward = evaluate(question, &tokens)?;
            rollouts.push(Rollout {
                question_id: question.id,
                tokens,
                reward,
            });
        }
        let rewards: Vec<bool> = rollouts.iter().map(|r| r.reward).collect();
        Ok(RolloutGroup {
            question_id: question.id,
            rollouts,
            pass_rate: pass_rate(&rewards)?,
            step,
        })
    }

    /// Sum of per-token student log-probabilities for a response.
    pub fn sequence_log_prob(&self, question: &Question, tokens: &[usize]) -> f64 {
        let mut total = 0.0;
        for t in 0..tokens.len() {
            let probs = self.student_dist(question, t, &tokens[..t]);
            total += probs.mass()[tokens[t]].ln();
        }
        total
    }

    /// `ema_w += rate * (w - ema_w)`; a bitwise no-op when the copies
    /// already agree.
    pub fn ema_update(&mut self) {
        let rate = self.ema_rate;
        for (e, &w) in self.ema_w.iter_mut().zip(&self.w) {
            *e += rate * (w - *e);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

fn sample_index(mass: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &m) in mass.iter().enumerate() {
        acc += m;
        if u < acc {
            return i;
        }
    }
    mass.len() - 1
}
