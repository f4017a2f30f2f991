//! Advantage formulas: GRPO group-relative advantages, the sweet-spot
//! magnitude identity, and the per-token log-ratio advantages of the
//! distillation losses.

use crate::dist::TruncatedDist;
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before any log so that
/// truncation-induced zeros never produce infinities.
pub const PROB_FLOOR: f64 = 1e-12;

/// Group-relative advantages for one rollout group.
///
/// Non-degenerate groups have mean 0 and population std 1; a group with
/// all-equal rewards collapses to zeros with `degenerate` set.
#[derive(Debug, Clone)]
pub struct GroupAdvantages {
    pub values: Vec<f64>,
    pub pass_rate: f64,
    pub degenerate: bool,
}

/// `(r_i - mean) / popstd`, with the degenerate all-equal case mapped to
/// zeros rather than an error.
pub fn grpo_advantages(rewards: &[bool]) -> Result<GroupAdvantages> {
    let centered = centered_rewards(rewards)?;
    if centered.degenerate {
        return Ok(centered);
    }
    let p = centered.pass_rate;
    let std = (p * (1.0 - p)).sqrt();
    Ok(GroupAdvantages {
        values: centered.values.iter().map(|v| v / std).collect(),
        pass_rate: p,
        degenerate: false,
    })
}

/// `r_i - mean` without the std division (the GRPO w/o Norm baseline).
pub fn centered_rewards(rewards: &[bool]) -> Result<GroupAdvantages> {
    if rewards.len() < 2 {
        return Err(Error::Parameter(format!(
            "group size {} is too small; need at least 2 rollouts",
            rewards.len()
        )));
    }
    let g = rewards.len() as f64;
    let successes = rewards.iter().filter(|&&r| r).count();
    let p = successes as f64 / g;
    if successes == 0 || successes == rewards.len() {
        return Ok(GroupAdvantages {
            values: vec![0.0; rewards.len()],
            pass_rate: p,
            degenerate: true,
        });
    }
    Ok(GroupAdvantages {
        values: rewards
            .iter()
            .map(|&r| if r { 1.0 - p } else { -p })
            .collect(),
        pass_rate: p,
        degenerate: false,
    })
}

/// Total per-question update magnitude `sum_i |A_i|`; equals
/// `2 G sqrt(p(1-p))` for binary rewards.
pub fn grpo_total_magnitude(rewards: &[bool]) -> Result<f64> {
    let adv = grpo_advantages(rewards)?;
    Ok(adv.values.iter().map(|v| v.abs()).sum())
}

/// Per-bucket advantage over the truncated outcome set (K named buckets
/// followed by the tail bucket).
#[derive(Debug, Clone)]
pub struct TokenAdvantage {
    /// One value per bucket, tail last; length K + 1.
    pub per_bucket: Vec<f64>,
}

fn paired_outcomes(
    student: &TruncatedDist,
    teacher: &TruncatedDist,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if student.indices() != teacher.indices() {
        return Err(Error::ShapeMismatch(
            "student and teacher truncations have different index sets".into(),
        ));
    }
    Ok((student.outcome_masses(), teacher.outcome_masses()))
}

/// Reverse-KL advantage `log(teacher(y) / student(y))` per bucket, with
/// both probabilities floored at [`PROB_FLOOR`].
pub fn sdpo_token_advantage(
    student: &TruncatedDist,
    teacher: &TruncatedDist,
) -> Result<TokenAdvantage> {
    let (s, t) = paired_outcomes(student, teacher)?;
    let per_bucket = s
        .iter()
        .zip(&t)
        .map(|(&si, &ti)| {
            if si <= 0.0 && ti <= 0.0 {
                0.0
            } else {
                (ti.max(PROB_FLOOR) / si.max(PROB_FLOOR)).ln()
            }
        })
        .collect();
    Ok(TokenAdvantage { per_bucket })
}

/// Jensen-Shannon advantage `½ log(student(y) / M(y))` per bucket, where
/// `M = ½(student + teacher)`. Entries never exceed `½ ln 2`.
pub fn jsd_token_advantage(
    student: &TruncatedDist,
    teacher: &TruncatedDist,
) -> Result<TokenAdvantage> {
    let (s, t) = paired_outcomes(student, teacher)?;
    let per_bucket = s
        .iter()
        .zip(&t)
        .map(|(&si, &ti)| {
            let m = 0.5 * (si + ti);
            if si <= 0.0 && ti <= 0.0 {
                0.0
            } else {
                0.5 * (si.max(PROB_FLOOR) / m.max(PROB_FLOOR)).ln()
            }
        })
        .collect();
    Ok(TokenAdvantage { per_bucket })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{kl_divergence_truncated, ProbVector};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn trunc(mass: Vec<f64>) -> TruncatedDist {
        let v = mass.len();
        ProbVector::new(mass).unwrap().truncate_top_k(v).unwrap()
    }

    #[test]
    fn grpo_half_pass() {
        let adv = grpo_advantages(&[true, true, false, false]).unwrap();
        assert_eq!(adv.values, vec![1.0, 1.0, -1.0, -1.0]);
        assert_eq!(adv.pass_rate, 0.5);
        assert!(!adv.degenerate);
    }

    #[test]
    fn grpo_degenerate() {
        let adv = grpo_advantages(&[true; 4]).unwrap();
        assert!(adv.degenerate);
        assert_eq!(adv.values, vec![0.0; 4]);
    }

    #[test]
    fn grpo_single_success_of_eight() {
        let mut rewards = vec![false; 8];
        rewards[0] = true;
        let adv = grpo_advantages(&rewards).unwrap();
        assert_abs_diff_eq!(adv.values[0], 7f64.sqrt(), epsilon = 1e-12);
        for v in &adv.values[1..] {
            assert_abs_diff_eq!(*v, -1.0 / 7f64.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn grpo_rejects_tiny_group() {
        assert!(grpo_advantages(&[true]).is_err());
    }

    #[test]
    fn magnitude_identity_examples() {
        let half: Vec<bool> = (0..8).map(|i| i < 4).collect();
        assert_abs_diff_eq!(grpo_total_magnitude(&half).unwrap(), 8.0, epsilon = 1e-9);
        assert_eq!(grpo_total_magnitude(&[false; 8]).unwrap(), 0.0);
        let mut one = vec![false; 8];
        one[0] = true;
        assert_abs_diff_eq!(
            grpo_total_magnitude(&one).unwrap(),
            2.0 * 8.0 * (7.0f64 / 64.0).sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn magnitude_identity_exhaustive() {
        for g in 2..=16usize {
            for k in 0..=g {
                let rewards: Vec<bool> = (0..g).map(|i| i < k).collect();
                let p = k as f64 / g as f64;
                let expected = 2.0 * g as f64 * (p * (1.0 - p)).sqrt();
                assert_abs_diff_eq!(
                    grpo_total_magnitude(&rewards).unwrap(),
                    expected,
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn sdpo_advantage_log_ratio() {
        let s = trunc(vec![0.5, 0.5]);
        let same = sdpo_token_advantage(&s, &s).unwrap();
        assert!(same.per_bucket.iter().all(|&a| a == 0.0));

        let s = trunc(vec![0.5, 0.5]);
        let t = trunc(vec![0.9, 0.1]);
        let adv = sdpo_token_advantage(&s, &t).unwrap();
        assert_abs_diff_eq!(adv.per_bucket[0], (0.9f64 / 0.5).ln(), epsilon = 1e-12);

        let flipped = sdpo_token_advantage(&t, &s).unwrap();
        assert_abs_diff_eq!(flipped.per_bucket[0], (0.5f64 / 0.9).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(flipped.per_bucket[0], -adv.per_bucket[0], epsilon = 1e-12);
    }

    #[test]
    fn jsd_advantage_values() {
        let s = trunc(vec![0.8, 0.2]);
        let t = ProbVector::new(vec![0.2, 0.8])
            .unwrap()
            .project_onto(&s)
            .unwrap();
        let adv = jsd_token_advantage(&s, &t).unwrap();
        // M = [0.5, 0.5] on both buckets.
        assert_abs_diff_eq!(adv.per_bucket[0], 0.5 * (0.8f64 / 0.5).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(adv.per_bucket[1], 0.5 * 0.4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(adv.per_bucket[0], 0.235002, epsilon = 1e-6);
        assert_abs_diff_eq!(adv.per_bucket[1], -0.458145, epsilon = 1e-6);

        let same = jsd_token_advantage(&s, &s).unwrap();
        assert!(same.per_bucket.iter().all(|&a| a == 0.0));
    }

    fn arb_trunc_pair() -> impl Strategy<Value = (TruncatedDist, TruncatedDist)> {
        (
            prop::collection::vec(1e-6..1.0f64, 8),
            prop::collection::vec(1e-6..1.0f64, 8),
        )
            .prop_map(|(s, t)| {
                let s = ProbVector::normalize(&s).unwrap();
                let t = ProbVector::normalize(&t).unwrap();
                let ts = s.truncate_top_k(4).unwrap();
                let tt = t.project_onto(&ts).unwrap();
                (ts, tt)
            })
    }

    proptest! {
        #[test]
        fn grpo_zero_mean_unit_std(
            g in 2usize..=16,
            seed in 0u64..1000,
        ) {
            let k = (seed as usize) % (g + 1);
            let rewards: Vec<bool> = (0..g).map(|i| i < k).collect();
            let adv = grpo_advantages(&rewards).unwrap();
            if !adv.degenerate {
                let mean: f64 = adv.values.iter().sum::<f64>() / g as f64;
                let var: f64 = adv.values.iter().map(|v| v * v).sum::<f64>() / g as f64;
                prop_assert!(mean.abs() < 1e-12);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn sdpo_expectation_is_negative_kl((s, t) in arb_trunc_pair()) {
            // sum_y pi_S(y) A(y) = -KL(pi_S || pi_T), an algebraic identity.
            let adv = sdpo_token_advantage(&s, &t).unwrap();
            let expect: f64 = s
                .outcome_masses()
                .iter()
                .zip(&adv.per_bucket)
                .map(|(&p, &a)| p * a)
                .sum();
            let kl = kl_divergence_truncated(&s, &t).unwrap();
            prop_assert!((expect + kl).abs() < 1e-9);
        }

        #[test]
        fn jsd_advantage_bounded((s, t) in arb_trunc_pair()) {
            let adv = jsd_token_advantage(&s, &t).unwrap();
            for &a in &adv.per_bucket {
                prop_assert!(a <= 0.5 * std::f64::consts::LN_2 + 1e-12);
            }
        }
    }
}
