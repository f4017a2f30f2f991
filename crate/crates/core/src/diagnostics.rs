//! Numerical verification utilities: finite-difference gradient checks,
//! exhaustive identity checks, learnability bound tables, and the
//! flat-advantage pass-rate scan. The CLI fronts these; the acceptance
//! suite calls them directly.

use rand::Rng;

use crate::advantage::{grpo_total_magnitude, jsd_token_advantage, sdpo_token_advantage};
use crate::env::{generate_task, render_feedback, rollout_rng, DifficultySpec, Task};
use crate::error::{Error, Result};
use crate::learnability::{
    exact_kl_normalized, exact_kl_raw, leading_term_normalized, verify_expansion,
};
use crate::policy::{FeatureMap, PolicyParams};
use crate::trainer::{distill_loss, Divergence, TrainConfig};
use crate::weighting::{normalize_batch, raw_weight};

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe);
        probe[i] = x[i] - step;
        let minus = f(&probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Norm-scaled relative error: the largest componentwise difference
/// divided by the largest gradient magnitude, so that entries near zero
/// are judged against the scale of the whole gradient rather than
/// against finite-difference noise.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|g| g.abs())
        .fold(0.0, f64::max)
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct GradcheckCase {
    pub label: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub cases: Vec<GradcheckCase>,
    pub stop_gradient_exact: bool,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.stop_gradient_exact && self.cases.iter().all(|c| c.max_rel_err < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }
}

/// Finite-difference check of the distillation gradients on random small
/// instances (V = 8, d = 4, L = 2), covering {kl, jsd} x {weighted,
/// unweighted} x {full, truncated}. `corrupt` biases the analytic
/// gradient as a negative control.
pub fn gradcheck(seed: u64, instances: usize, corrupt: bool) -> Result<GradcheckReport> {
    let h = 1e-5;
    let mut cases = Vec::new();
    let mut stop_gradient_exact = true;

    for instance in 0..instances {
        let task = generate_task(
            seed.wrapping_add(instance as u64),
            2,
            8,
            2,
            4,
            DifficultySpec::default(),
        )?;
        let mut rng = rollout_rng(seed, instance as u64, 0);
        let mut params = random_params(&task, 3.0, &mut rng);
        let groups: Vec<_> = task
            .questions
            .iter()
            .map(|q| {
                params.sample_rollouts(q, 4, 1.0, &mut rollout_rng(seed, q.id, instance as u64), 0)
            })
            .collect::<Result<_>>()?;

        for divergence in [Divergence::Kl, Divergence::Jsd] {
            for (weights, weighted) in [(vec![1.0, 1.0], false), (vec![0.4, 1.6], true)] {
                // Alternate between full-vocabulary and truncated top-K.
                let top_k = if instance % 2 == 0 { 8 } else { 5 };
                let config = TrainConfig {
                    divergence,
                    top_k,
                    ..TrainConfig::default()
                };
                let (_, mut analytic) =
                    distill_loss(&groups, &weights, &params, &task, &config)?;
                if corrupt {
                    analytic[0] += 1e-3;
                }
                let base = params.w.clone();
                let mut eval = |w: &[f64]| {
                    let mut probe = params.clone();
                    probe.w = w.to_vec();
                    distill_loss(&groups, &weights, &probe, &task, &config)
                        .expect("loss evaluation")
                        .0
                };
                let numeric = central_difference(&mut eval, &base, h);
                cases.push(GradcheckCase {
                    label: format!(
                        "instance {instance} {:?} {} k={top_k}",
                        divergence,
                        if weighted { "weighted" } else { "unweighted" }
                    ),
                    max_rel_err: max_relative_error(&analytic, &numeric),
                });

                // Stop-gradient: a perturb-then-restore round trip of the
                // teacher parameters must reproduce the gradient exactly.
                let (_, reference) = distill_loss(&groups, &weights, &params, &task, &config)?;
                let saved_ema = params.ema_w.clone();
                let saved_gain = params.feedback_gain;
                for e in params.ema_w.iter_mut() {
                    *e += 0.37;
                }
                params.feedback_gain += 1.0;
                params.ema_w = saved_ema;
                params.feedback_gain = saved_gain;
                let (_, restored) = distill_loss(&groups, &weights, &params, &task, &config)?;
                if reference != restored {
                    stop_gradient_exact = false;
                }
            }
        }
    }
    Ok(GradcheckReport {
        cases,
        stop_gradient_exact,
        tolerance: 1e-5,
    })
}

fn random_params(task: &Task, feedback_gain: f64, rng: &mut impl Rng) -> PolicyParams {
    let map = FeatureMap {
        context_dim: task.context_dim,
        seq_len: task.seq_len,
        vocab_size: task.vocab_size,
    };
    let mut params = PolicyParams::new(map, feedback_gain, 0.05).expect("valid params");
    for w in params.w.iter_mut() {
        *w = rng.random_range(-0.5..0.5);
    }
    for e in params.ema_w.iter_mut() {
        *e = rng.random_range(-0.5..0.5);
    }
    params
}

#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub magnitude_max_err: f64,
    pub weight_symmetry_max_err: f64,
    pub unimodal: bool,
    pub unit_mean_max_err: f64,
    pub tolerance: f64,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.magnitude_max_err < self.tolerance
            && self.weight_symmetry_max_err < 1e-12
            && self.unimodal
            && self.unit_mean_max_err < 1e-12
    }
}

/// Exhaustive check of the GRPO magnitude identity for G in 2..=16 and
/// every success count, plus the weight symmetry/unimodality and the
/// batch-normalization unit-mean contract.
pub fn identity_checks() -> Result<IdentityReport> {
    let mut magnitude_max_err: f64 = 0.0;
    for g in 2..=16usize {
        for k in 0..=g {
            let rewards: Vec<bool> = (0..g).map(|i| i < k).collect();
            let p = k as f64 / g as f64;
            let expected = 2.0 * g as f64 * (p * (1.0 - p)).sqrt();
            let actual = grpo_total_magnitude(&rewards)?;
            magnitude_max_err = magnitude_max_err.max((actual - expected).abs());
        }
    }

    let mut weight_symmetry_max_err: f64 = 0.0;
    let mut unimodal = true;
    for alpha in [0.5, 1.0, 2.0] {
        let grid: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
        for &p in &grid {
            let err = (raw_weight(p, alpha)? - raw_weight(1.0 - p, alpha)?).abs();
            weight_symmetry_max_err = weight_symmetry_max_err.max(err);
        }
        for pair in grid.windows(2) {
            let (wa, wb) = (raw_weight(pair[0], alpha)?, raw_weight(pair[1], alpha)?);
            if pair[1] <= 0.5 && wb <= wa {
                unimodal = false;
            }
            if pair[0] >= 0.5 && wb >= wa {
                unimodal = false;
            }
        }
    }

    let mut unit_mean_max_err: f64 = 0.0;
    let mut rng = rollout_rng(0, 0, 0);
    for _ in 0..1000 {
        let m = rng.random_range(1..32usize);
        let raw: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random::<f64>() < 0.2 {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let w = normalize_batch(raw, 0.5);
        if !w.active_set.is_empty() {
            let mean = w.active_set.iter().map(|&j| w.normalized[j]).sum::<f64>()
                / w.active_set.len() as f64;
            unit_mean_max_err = unit_mean_max_err.max((mean - 1.0).abs());
        }
    }

    Ok(IdentityReport {
        magnitude_max_err,
        weight_symmetry_max_err,
        unimodal,
        unit_mean_max_err,
        tolerance: 1e-9,
    })
}

#[derive(Debug, Clone)]
pub struct BoundsRow {
    pub p: f64,
    pub beta: f64,
    pub kl_raw: f64,
    pub kl_normalized: f64,
    pub leading_term: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct BoundsReport {
    pub rows: Vec<BoundsRow>,
    /// Fitted residual log-log slope per p over the beta grid.
    pub slopes: Vec<(f64, f64)>,
}

impl BoundsReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("p,beta,kl_raw,kl_normalized,leading_term,residual,residual_slope\n");
        for r in &self.rows {
            let slope = self
                .slopes
                .iter()
                .find(|(p, _)| *p == r.p)
                .map(|(_, s)| *s)
                .unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.p, r.beta, r.kl_raw, r.kl_normalized, r.leading_term, r.residual, slope
            ));
        }
        out
    }
}

/// Learnability bound table over a (p, beta) grid plus the residual
/// decay slope per p.
pub fn bounds_table(p_grid: &[f64], beta_grid: &[f64]) -> Result<BoundsReport> {
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &p in p_grid {
        for &beta in beta_grid {
            let kl_normalized = exact_kl_normalized(p, beta)?;
            let leading_term = leading_term_normalized(beta);
            rows.push(BoundsRow {
                p,
                beta,
                kl_raw: exact_kl_raw(p, beta)?,
                kl_normalized,
                leading_term,
                residual: kl_normalized - leading_term,
            });
        }
        slopes.push((p, verify_expansion(p, beta_grid)?.slope));
    }
    Ok(BoundsReport { rows, slopes })
}

#[derive(Debug, Clone)]
pub struct FlatAdvantageBin {
    pub p_hat: f64,
    pub questions: usize,
    pub rollouts: usize,
    pub kl_mean: f64,
    pub kl_std: f64,
    pub jsd_mean: f64,
    pub jsd_std: f64,
    pub adv_kl_mean: f64,
    pub adv_kl_std: f64,
    pub adv_jsd_mean: f64,
    pub adv_jsd_std: f64,
}

pub fn flat_advantage_csv(bins: &[FlatAdvantageBin]) -> String {
    let mut out = String::from(
        "p_hat,questions,rollouts,kl_mean,kl_std,jsd_mean,jsd_std,adv_kl_mean,adv_kl_std,adv_jsd_mean,adv_jsd_std\n",
    );
    for b in bins {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            b.p_hat,
            b.questions,
            b.rollouts,
            b.kl_mean,
            b.kl_std,
            b.jsd_mean,
            b.jsd_std,
            b.adv_kl_mean,
            b.adv_kl_std,
            b.adv_jsd_mean,
            b.adv_jsd_std
        ));
    }
    out
}

/// Bins questions by empirical pass rate (questions with p = 0 excluded)
/// and reports per-bin mean and std of the rollout-averaged per-token
/// KL, JSD, and the two advantage magnitudes at the sampled tokens.
pub fn flat_advantage(
    params: &PolicyParams,
    task: &Task,
    rollouts_per_question: usize,
    top_k: usize,
    seed: u64,
) -> Result<Vec<FlatAdvantageBin>> {
    if rollouts_per_question < 1 {
        return Err(Error::Parameter(
            "rollouts_per_question must be at least 1".into(),
        ));
    }
    let k = top_k.min(task.vocab_size);
    // bin index = success count 1..=n; per-rollout metric tuples.
    let mut bins: Vec<Vec<[f64; 4]>> = vec![Vec::new(); rollouts_per_question];
    let mut bin_questions = vec![0usize; rollouts_per_question];

    for q in &task.questions {
        let mut rng = rollout_rng(seed, q.id, 0);
        let group = params.sample_rollouts(q, rollouts_per_question, 1.0, &mut rng, 0)?;
        let successes = group.pass_rate.successes;
        if successes == 0 {
            continue;
        }
        let bin = successes - 1;
        bin_questions[bin] += 1;
        let feedback = render_feedback(q);
        for rollout in &group.rollouts {
            let mut sums = [0.0f64; 4];
            let len = rollout.tokens.len();
            for t in 0..len {
                let prefix = &rollout.tokens[..t];
                let student = params.student_dist(q, t, prefix).truncate_top_k(k)?;
                let teacher = params
                    .teacher_dist(q, t, prefix, &feedback)?
                    .project_onto(&student)?;
                let adv_kl = sdpo_token_advantage(&student, &teacher)?;
                let adv_jsd = jsd_token_advantage(&student, &teacher)?;
                // The sampled token's bucket, or the tail if truncated away.
                let y = rollout.tokens[t];
                let bucket = student
                    .indices()
                    .iter()
                    .position(|&i| i == y)
                    .unwrap_or(student.indices().len());
                sums[0] += crate::dist::kl_divergence_truncated(&student, &teacher)?;
                sums[1] += crate::dist::jsd_truncated(&student, &teacher)?;
                sums[2] += adv_kl.per_bucket[bucket].abs();
                sums[3] += adv_jsd.per_bucket[bucket].abs();
            }
            bins[bin].push([
                sums[0] / len as f64,
                sums[1] / len as f64,
                sums[2] / len as f64,
                sums[3] / len as f64,
            ]);
        }
    }

    let mut out = Vec::new();
    for (bin, samples) in bins.iter().enumerate() {
        if samples.is_empty() {
            continue;
        }
        let mut stats = [[0.0f64; 2]; 4];
        for metric in 0..4 {
            let values: Vec<f64> = samples.iter().map(|s| s[metric]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / values.len() as f64;
            stats[metric] = [mean, var.sqrt()];
        }
        out.push(FlatAdvantageBin {
            p_hat: (bin + 1) as f64 / rollouts_per_question as f64,
            questions: bin_questions[bin],
            rollouts: samples.len(),
            kl_mean: stats[0][0],
            kl_std: stats[0][1],
            jsd_mean: stats[1][0],
            jsd_std: stats[1][1],
            adv_kl_mean: stats[2][0],
            adv_kl_std: stats[2][1],
            adv_jsd_mean: stats[3][0],
            adv_jsd_std: stats[3][1],
        });
    }
    Ok(out)
}
