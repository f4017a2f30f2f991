//! The on-policy training loop: rollout-group assembly, method-specific
//! losses with exact analytic gradients, weighted updates, and per-step
//! metrics.
//!
//! Every method takes exactly one gradient update per on-policy batch,
//! so importance ratios are identically 1 and no PPO-style clipping is
//! applied.

use serde::{Deserialize, Serialize};

use crate::advantage::{
    centered_rewards, grpo_advantages, jsd_token_advantage, sdpo_token_advantage,
};
use crate::env::{render_feedback, rollout_rng, Question, RolloutGroup, Task};
use crate::error::{Error, Result};
use crate::optim::{clip_grad_norm, AdamW};
use crate::policy::{FeatureMap, PolicyParams};
use crate::weighting::{
    frozen_weight_table, hard_filter_weight, normalize_batch, raw_weight, FrozenWeightTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grpo,
    GrpoNoNorm,
    Sdpo,
    SdpoPaced,
    SdpoHardFilter,
    ScSdpo,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Grpo => "grpo",
            Method::GrpoNoNorm => "grpo_no_norm",
            Method::Sdpo => "sdpo",
            Method::SdpoPaced => "sdpo_paced",
            Method::SdpoHardFilter => "sdpo_hard_filter",
            Method::ScSdpo => "sc_sdpo",
        }
    }

    pub fn is_distillation(&self) -> bool {
        !matches!(self, Method::Grpo | Method::GrpoNoNorm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    Kl,
    Jsd,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_divergence() -> Divergence {
    Divergence::Jsd
}
fn default_top_k() -> usize {
    100
}
fn default_group_size() -> usize {
    8
}
fn default_batch_size() -> usize {
    32
}
fn default_steps() -> u64 {
    200
}
fn default_learning_rate() -> f64 {
    // The reference setting for 8B models is 1e-5; the toy linear policy
    // needs a much larger constant rate to converge within 200 steps.
    0.2
}
fn default_grad_clip_norm() -> f64 {
    1.0
}
fn default_ema_rate() -> f64 {
    0.05
}
fn default_hard_filter_bounds() -> [f64; 2] {
    [0.2, 0.8]
}
fn default_feedback_gain() -> f64 {
    3.0
}
fn default_temperature() -> f64 {
    1.0
}
fn default_eval_temperature() -> f64 {
    0.6
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_warmup_steps() -> u64 {
    10
}
fn default_method() -> Method {
    Method::ScSdpo
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    /// Exponent of the pass-rate variance weight.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_divergence")]
    pub divergence: Divergence,
    /// Top-K distillation truncation; capped at the vocabulary size.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_grad_clip_norm")]
    pub grad_clip_norm: f64,
    #[serde(default = "default_ema_rate")]
    pub ema_rate: f64,
    #[serde(default = "default_hard_filter_bounds")]
    pub hard_filter_bounds: [f64; 2],
    /// Drop groups with pass rate 0 before the distillation loss.
    #[serde(default)]
    pub exclude_zero_pass: bool,
    #[serde(default = "default_feedback_gain")]
    pub feedback_gain: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_eval_temperature")]
    pub eval_temperature: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_warmup_steps")]
    pub warmup_steps: u64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha {} must be > 0", self.alpha)));
        }
        if !(self.ema_rate > 0.0 && self.ema_rate <= 1.0) {
            return Err(Error::Config(format!(
                "ema_rate {} must lie in (0, 1]",
                self.ema_rate
            )));
        }
        if self.top_k < 1 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be at least 2".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let [lo, hi] = self.hard_filter_bounds;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "hard_filter_bounds [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        Ok(())
    }

    pub fn effective_top_k(&self, vocab_size: usize) -> usize {
        self.top_k.min(vocab_size)
    }
}

/// One training-step record, exported as a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_pass_rate: f64,
    /// Counts of batch questions at pass rate k/8 for k in 0..=8.
    pub bin_counts: [usize; 9],
    /// Fraction of the batch in bins 1/8..=7/8.
    pub frac_mid_wide: f64,
    /// Fraction of the batch in bins 2/8..=6/8.
    pub frac_mid_narrow: f64,
    pub grad_norm: f64,
    pub loss: f64,
    pub mean_weight: f64,
    pub active_questions: usize,
}

impl StepMetrics {
    pub fn csv_header() -> String {
        let bins: Vec<String> = (0..9).map(|k| format!("bin_{k}")).collect();
        format!(
            "step,mean_pass_rate,{},frac_mid_wide,frac_mid_narrow,grad_norm,loss,mean_weight,active_questions",
            bins.join(",")
        )
    }

    pub fn csv_row(&self) -> String {
        let bins: Vec<String> = self.bin_counts.iter().map(|c| c.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.mean_pass_rate,
            bins.join(","),
            self.frac_mid_wide,
            self.frac_mid_narrow,
            self.grad_norm,
            self.loss,
            self.mean_weight,
            self.active_questions
        )
    }
}

/// Full CSV document: header plus one row per step, LF line endings.
pub fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut out = StepMetrics::csv_header();
    out.push('\n');
    for m in metrics {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

fn find_question<'a>(task: &'a Task, id: u64) -> Result<&'a Question> {
    task.questions
        .iter()
        .find(|q| q.id == id)
        .ok_or_else(|| Error::Config(format!("question {id} not present in task")))
}

/// Distillation loss over one batch: the global mean over all
/// (question, rollout, token) cells of `w_j * D(student_t || teacher_t)`
/// on top-K truncated distributions, with the teacher detached. Returns
/// the loss and its exact gradient with respect to the live weights.
///
/// The weight multiplies each cell before the global token mean, and
/// zero-weight groups still count toward the denominator.
pub fn distill_loss(
    groups: &[RolloutGroup],
    weights: &[f64],
    params: &PolicyParams,
    task: &Task,
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    if groups.len() != weights.len() {
        return Err(Error::Parameter(format!(
            "{} groups but {} weights",
            groups.len(),
            weights.len()
        )));
    }
    let dim = params.feature_map.dim();
    let vocab = params.feature_map.vocab_size;
    let k = config.effective_top_k(vocab);
    let mut grad = vec![0.0; params.w.len()];
    let mut loss = 0.0;
    let cells: usize = groups
        .iter()
        .map(|g| g.rollouts.iter().map(|r| r.tokens.len()).sum::<usize>())
        .sum();
    if cells == 0 {
        return Ok((0.0, grad));
    }
    let inv_cells = 1.0 / cells as f64;

    for (group, &weight) in groups.iter().zip(weights) {
        let question = find_question(task, group.question_id)?;
        let feedback = render_feedback(question);
        for rollout in &group.rollouts {
            for t in 0..rollout.tokens.len() {
                let prefix = &rollout.tokens[..t];
                let student_full = params.student_dist(question, t, prefix);
                let student = student_full.truncate_top_k(k)?;
                let teacher_full = params.teacher_dist(question, t, prefix, &feedback)?;
                let teacher = teacher_full.project_onto(&student)?;

                let s = student.outcome_masses();
                let tm = teacher.outcome_masses();
                // Per-bucket coefficient c with dD/ds_b = c_b (up to an
                // additive constant that cancels against the softmax).
                let (cell_loss, coeff): (f64, Vec<f64>) = match config.divergence {
                    Divergence::Kl => {
                        let adv = sdpo_token_advantage(&student, &teacher)?;
                        let c: Vec<f64> = adv.per_bucket.iter().map(|a| -a).collect();
                        let d = s.iter().zip(&c).map(|(&si, &ci)| si * ci).sum();
                        (d, c)
                    }
                    Divergence::Jsd => {
                        let adv = jsd_token_advantage(&student, &teacher)?;
                        let student_half: f64 = s
                            .iter()
                            .zip(&adv.per_bucket)
                            .map(|(&si, &ai)| si * ai)
                            .sum();
                        let teacher_half: f64 = tm
                            .iter()
                            .zip(&s)
                            .map(|(&ti, &si)| {
                                if ti > 0.0 {
                                    0.5 * ti * (ti / (0.5 * (si + ti))).ln()
                                } else {
                                    0.0
                                }
                            })
                            .sum();
                        (student_half + teacher_half, adv.per_bucket)
                    }
                };
                loss += weight * cell_loss * inv_cells;

                if weight == 0.0 {
                    continue;
                }
                // dD/dz_v = pi_v (c_{bucket(v)} - E_pi[c]); see the
                // softmax chain rule with the tail as one outcome.
                let mut bucket_of = vec![student.indices().len(); vocab];
                for (b, &idx) in student.indices().iter().enumerate() {
                    bucket_of[idx] = b;
                }
                let pi = student_full.mass();
                let mean_c: f64 = (0..vocab).map(|v| pi[v] * coeff[bucket_of[v]]).sum();
                let phi = params.feature_map.features(question, t, prefix);
                let scale = weight * inv_cells;
                for v in 0..vocab {
                    let dz = pi[v] * (coeff[bucket_of[v]] - mean_c) * scale;
                    if dz == 0.0 {
                        continue;
                    }
                    let row = &mut grad[v * dim..(v + 1) * dim];
                    for (gw, &x) in row.iter_mut().zip(&phi) {
                        *gw += dz * x;
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}

/// SC-SDPO: distillation loss weighted by the batch-normalized
/// `[p(1-p)]^alpha` factor recomputed from this batch's pass rates.
pub fn sc_sdpo_loss(
    groups: &[RolloutGroup],
    params: &PolicyParams,
    task: &Task,
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let raw: Vec<f64> = groups
        .iter()
        .map(|g| raw_weight(g.pass_rate.p_hat, config.alpha))
        .collect::<Result<_>>()?;
    let weights = normalize_batch(raw, config.alpha);
    distill_loss(groups, &weights.normalized, params, task, config)
}

/// Unweighted SDPO. With `exclude_zero_pass`, groups that never
/// succeeded are dropped before averaging.
pub fn sdpo_loss(
    groups: &[RolloutGroup],
    params: &PolicyParams,
    task: &Task,
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let retained: Vec<RolloutGroup> = if config.exclude_zero_pass {
        groups
            .iter()
            .filter(|g| g.pass_rate.p_hat > 0.0)
            .cloned()
            .collect()
    } else {
        groups.to_vec()
    };
    let weights = vec![1.0; retained.len()];
    distill_loss(&retained, &weights, params, task, config)
}

/// GRPO policy-gradient objective `-mean_{i,t} A_i log pi(y_t)` with
/// group-normalized (or centered-only) advantages.
pub fn grpo_loss(
    groups: &[RolloutGroup],
    params: &PolicyParams,
    task: &Task,
    normalize_advantages: bool,
) -> Result<(f64, Vec<f64>)> {
    let dim = params.feature_map.dim();
    let vocab = params.feature_map.vocab_size;
    let mut grad = vec![0.0; params.w.len()];
    let mut loss = 0.0;
    let cells: usize = groups
        .iter()
        .map(|g| g.rollouts.iter().map(|r| r.tokens.len()).sum::<usize>())
        .sum();
    if cells == 0 {
        return Ok((0.0, grad));
    }
    let inv_cells = 1.0 / cells as f64;

    for group in groups {
        let question = find_question(task, group.question_id)?;
        let rewards = group.rewards();
        let adv = if normalize_advantages {
            grpo_advantages(&rewards)?
        } else {
            centered_rewards(&rewards)?
        };
        for (rollout, &a) in group.rollouts.iter().zip(&adv.values) {
            for t in 0..rollout.tokens.len() {
                let prefix = &rollout.tokens[..t];
                let pi = params.student_dist(question, t, prefix);
                let y = rollout.tokens[t];
                loss -= a * pi.mass()[y].ln() * inv_cells;
                if a == 0.0 {
                    continue;
                }
                let phi = params.feature_map.features(question, t, prefix);
                let scale = a * inv_cells;
                for v in 0..vocab {
                    let dz = scale * (pi.mass()[v] - if v == y { 1.0 } else { 0.0 });
                    let row = &mut grad[v * dim..(v + 1) * dim];
                    for (gw, &x) in row.iter_mut().zip(&phi) {
                        *gw += dz * x;
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Mutable training state: policy, optimizer, and (for the PACED
/// baseline) the frozen offline weight table.
pub struct TrainState {
    pub params: PolicyParams,
    pub task: Task,
    pub config: TrainConfig,
    optimizer: AdamW,
    frozen: Option<FrozenWeightTable>,
    pub step: u64,
}

/// Reserved stream id for draws that are not tied to one question.
const BATCH_STREAM: u64 = u64::MAX;
/// Reserved step stamp for the PACED offline rollout pass.
const OFFLINE_STEP: u64 = u64::MAX;

impl TrainState {
    pub fn new(config: TrainConfig, task: Task) -> Result<Self> {
        config.validate()?;
        let feature_map = FeatureMap {
            context_dim: task.context_dim,
            seq_len: task.seq_len,
            vocab_size: task.vocab_size,
        };
        let params = PolicyParams::new(feature_map, config.feedback_gain, config.ema_rate)?;
        let optimizer = AdamW::new(
            params.w.len(),
            config.learning_rate,
            config.weight_decay,
            config.warmup_steps,
        );
        let frozen = if config.method == Method::SdpoPaced {
            // Single offline rollout pass over the whole question table,
            // then frozen for the rest of training (alpha = 1).
            let mut table = std::collections::BTreeMap::new();
            for q in &task.questions {
                let mut rng = rollout_rng(config.seed, q.id, OFFLINE_STEP);
                let group = params.sample_rollouts(
                    q,
                    config.group_size,
                    config.temperature,
                    &mut rng,
                    OFFLINE_STEP,
                )?;
                table.insert(q.id, group.pass_rate.p_hat);
            }
            Some(frozen_weight_table(&table, 1.0)?)
        } else {
            None
        };
        Ok(Self {
            params,
            task,
            config,
            optimizer,
            frozen,
            step: 0,
        })
    }

    pub fn frozen_table(&self) -> Option<&FrozenWeightTable> {
        self.frozen.as_ref()
    }

    fn select_batch(&self) -> Vec<usize> {
        let n = self.task.questions.len();
        let m = self.config.batch_size.min(n);
        if m == n {
            return (0..n).collect();
        }
        // Partial Fisher-Yates with a step-keyed stream.
        use rand::Rng;
        let mut rng = rollout_rng(self.config.seed, BATCH_STREAM, self.step);
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = rng.random_range(i..n);
            indices.swap(i, j);
        }
        indices.truncate(m);
        indices
    }

    /// One on-policy update: sample, weight, differentiate, clip, step,
    /// EMA. Pass rates always come from this step's rollouts (the PACED
    /// baseline alone reads its frozen table for the weights).
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let config = self.config.clone();
        let step = self.step;
        let batch = self.select_batch();
        let mut groups = Vec::with_capacity(batch.len());
        for &qi in &batch {
            let q = &self.task.questions[qi];
            let mut rng = rollout_rng(config.seed, q.id, step);
            groups.push(self.params.sample_rollouts(
                q,
                config.group_size,
                config.temperature,
                &mut rng,
                step,
            )?);
        }
        debug_assert!(groups.iter().all(|g| g.step == step));

        let weights: Option<Vec<f64>> = match config.method {
            Method::Grpo | Method::GrpoNoNorm => None,
            Method::Sdpo => Some(vec![1.0; groups.len()]),
            Method::ScSdpo => {
                let raw: Vec<f64> = groups
                    .iter()
                    .map(|g| raw_weight(g.pass_rate.p_hat, config.alpha))
                    .collect::<Result<_>>()?;
                Some(normalize_batch(raw, config.alpha).normalized)
            }
            Method::SdpoHardFilter => {
                let [lo, hi] = config.hard_filter_bounds;
                Some(
                    groups
                        .iter()
                        .map(|g| hard_filter_weight(g.pass_rate.p_hat, lo, hi))
                        .collect(),
                )
            }
            Method::SdpoPaced => {
                let table = self.frozen.as_ref().expect("frozen table built at init");
                Some(
                    groups
                        .iter()
                        .map(|g| table.weight(g.question_id))
                        .collect::<Result<_>>()?,
                )
            }
        };

        let (loss, mut grad) = match config.method {
            Method::Grpo => grpo_loss(&groups, &self.params, &self.task, true)?,
            Method::GrpoNoNorm => grpo_loss(&groups, &self.params, &self.task, false)?,
            Method::Sdpo => sdpo_loss(&groups, &self.params, &self.task, &config)?,
            _ => {
                let weights = weights.as_ref().expect("distillation weights present");
                let (retained_groups, retained_weights): (Vec<_>, Vec<_>) =
                    if config.exclude_zero_pass {
                        groups
                            .iter()
                            .zip(weights)
                            .filter(|(g, _)| g.pass_rate.p_hat > 0.0)
                            .map(|(g, &w)| (g.clone(), w))
                            .unzip()
                    } else {
                        (groups.clone(), weights.clone())
                    };
                distill_loss(
                    &retained_groups,
                    &retained_weights,
                    &self.params,
                    &self.task,
                    &config,
                )?
            }
        };

        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let dump: Vec<(u64, f64)> = groups
                .iter()
                .map(|g| (g.question_id, g.pass_rate.p_hat))
                .collect();
            return Err(Error::NumericalAbort {
                step,
                detail: format!("non-finite loss {loss} on batch {dump:?}"),
            });
        }

        let pre_clip = clip_grad_norm(&mut grad, config.grad_clip_norm);
        let grad_norm = pre_clip.min(config.grad_clip_norm);
        // A batch with no learning signal leaves the policy untouched.
        if pre_clip > 0.0 {
            self.optimizer.step(&mut self.params.w, &grad);
        }
        self.params.ema_update();
        self.step += 1;
        self.params.step = self.step;

        let m = groups.len();
        let mut bin_counts = [0usize; 9];
        for g in &groups {
            let bin = ((g.pass_rate.p_hat * 8.0).round() as usize).min(8);
            bin_counts[bin] += 1;
        }
        let mid_wide: usize = bin_counts[1..=7].iter().sum();
        let mid_narrow: usize = bin_counts[2..=6].iter().sum();
        let mean_pass_rate = groups.iter().map(|g| g.pass_rate.p_hat).sum::<f64>() / m as f64;
        let (mean_weight, active_questions) = match &weights {
            Some(w) => (
                w.iter().sum::<f64>() / m as f64,
                w.iter().filter(|&&x| x > 0.0).count(),
            ),
            None => (
                1.0,
                groups
                    .iter()
                    .filter(|g| g.pass_rate.p_hat > 0.0 && g.pass_rate.p_hat < 1.0)
                    .count(),
            ),
        };
        Ok(StepMetrics {
            step,
            mean_pass_rate,
            bin_counts,
            frac_mid_wide: mid_wide as f64 / m as f64,
            frac_mid_narrow: mid_narrow as f64 / m as f64,
            grad_norm,
            loss,
            mean_weight,
            active_questions,
        })
    }
}

/// Runs the configured number of steps; deterministic given the seed.
pub fn run_training(config: &TrainConfig, task: &Task) -> Result<(Vec<StepMetrics>, PolicyParams)> {
    let mut state = TrainState::new(config.clone(), task.clone())?;
    let mut metrics = Vec::with_capacity(config.steps as usize);
    for _ in 0..config.steps {
        metrics.push(state.train_step()?);
    }
    Ok((metrics, state.params))
}
