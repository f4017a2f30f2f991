//! Synthetic verifiable-reward environment: questions with controllable
//! per-question difficulty, exact-match binary rewards, and a privileged
//! feedback channel that always knows the correct answer.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weighting::PassRateEstimate;

/// How per-question difficulty biases are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultySpec {
    /// Uniform over [lo, hi]; the default [-1, 3] spans hard to easy.
    Uniform { lo: f64, hi: f64 },
    Constant { bias: f64 },
}

impl Default for DifficultySpec {
    fn default() -> Self {
        DifficultySpec::Uniform { lo: -1.0, hi: 3.0 }
    }
}

/// One synthetic question. The difficulty bias is an additive logit
/// bonus toward the correct token; larger means easier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: u64,
    pub context: Vec<f64>,
    pub answer: Vec<usize>,
    pub difficulty_bias: f64,
}

/// A full generated task, serializable for experiment reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub seed: u64,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub context_dim: usize,
    pub questions: Vec<Question>,
}

impl Task {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Deterministic task generation: spherical Gaussian contexts, uniform
/// answers, difficulty biases per `difficulty_spec`.
pub fn generate_task(
    seed: u64,
    num_questions: usize,
    vocab_size: usize,
    seq_len: usize,
    context_dim: usize,
    difficulty_spec: DifficultySpec,
) -> Result<Task> {
    if vocab_size < 2 {
        return Err(Error::Parameter(format!(
            "vocab size {vocab_size} must be at least 2"
        )));
    }
    if seq_len < 1 || num_questions < 1 || context_dim < 1 {
        return Err(Error::Parameter(
            "num_questions, seq_len and context_dim must all be positive".into(),
        ));
    }
    if let DifficultySpec::Uniform { lo, hi } = difficulty_spec {
        if !(lo <= hi) {
            return Err(Error::Parameter(format!(
                "difficulty range [{lo}, {hi}] is empty"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let questions = (0..num_questions as u64)
        .map(|id| {
            let context: Vec<f64> = (0..context_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let answer: Vec<usize> = (0..seq_len)
                .map(|_| rng.random_range(0..vocab_size))
                .collect();
            let difficulty_bias = match difficulty_spec {
                DifficultySpec::Uniform { lo, hi } => {
                    if lo == hi {
                        lo
                    } else {
                        rng.random_range(lo..hi)
                    }
                }
                DifficultySpec::Constant { bias } => bias,
            };
            Question {
                id,
                context,
                answer,
                difficulty_bias,
            }
        })
        .collect();
    Ok(Task {
        seed,
        vocab_size,
        seq_len,
        context_dim,
        questions,
    })
}

/// Exact-match binary reward.
pub fn evaluate(question: &Question, tokens: &[usize]) -> Result<bool> {
    if tokens.len() != question.answer.len() {
        return Err(Error::Parameter(format!(
            "response length {} differs from answer length {}",
            tokens.len(),
            question.answer.len()
        )));
    }
    Ok(tokens == question.answer.as_slice())
}

/// Privileged information handed to the teacher branch: the correct
/// answer, available regardless of rollout outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub question_id: u64,
    pub answer_tokens: Vec<usize>,
}

pub fn render_feedback(question: &Question) -> Feedback {
    Feedback {
        question_id: question.id,
        answer_tokens: question.answer.clone(),
    }
}

/// One sampled response with its binary reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub question_id: u64,
    pub tokens: Vec<usize>,
    pub reward: bool,
}

/// The G rollouts for one question in one on-policy batch. `step` stamps
/// the training step the group was sampled at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub question_id: u64,
    pub rollouts: Vec<Rollout>,
    pub pass_rate: PassRateEstimate,
    pub step: u64,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<bool> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }
}

/// An independent, reproducible random stream for one (seed, question,
/// step) cell, so samplers can run in any order.
pub fn rollout_rng(seed: u64, question_id: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed, question_id), step))
}

/// splitmix64-style mixing of two words into a stream seed.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
