//! Acceptance gate: one test per criterion, each printing a PASS/FAIL
//! line (visible with `cargo test --test acceptance -- --nocapture`).

use sdpo_core::advantage::{grpo_total_magnitude, sdpo_token_advantage};
use sdpo_core::diagnostics::{flat_advantage, gradcheck};
use sdpo_core::dist::{kl_divergence_truncated, ProbVector};
use sdpo_core::env::{generate_task, rollout_rng, DifficultySpec, Task};
use sdpo_core::learnability::{exact_kl_normalized, verify_expansion, DEFAULT_BETA_GRID};
use sdpo_core::policy::{FeatureMap, PolicyParams};
use sdpo_core::trainer::{run_training, Method, StepMetrics, TrainConfig, TrainState};
use sdpo_core::weighting::normalize_batch;

use rand::Rng;

fn report(criterion: usize, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn default_task() -> Task {
    generate_task(42, 64, 8, 2, 4, DifficultySpec::default()).unwrap()
}

#[test]
fn criterion_1_magnitude_identity() {
    let mut max_err: f64 = 0.0;
    for g in 2..=16usize {
        for k in 0..=g {
            let rewards: Vec<bool> = (0..g).map(|i| i < k).collect();
            let p = k as f64 / g as f64;
            let expected = 2.0 * g as f64 * (p * (1.0 - p)).sqrt();
            max_err = max_err.max((grpo_total_magnitude(&rewards).unwrap() - expected).abs());
        }
    }
    report(1, max_err < 1e-9, &format!("max error {max_err:.2e}"));
}

#[test]
fn criterion_2_normalization_contract() {
    let mut rng = rollout_rng(2, 0, 0);
    let mut max_mean_err: f64 = 0.0;
    let mut max_ratio_err: f64 = 0.0;
    for batch in 0..10_000 {
        let m = rng.random_range(1..=32usize);
        let raw: Vec<f64> = match batch {
            0 => vec![0.0; m],
            1 => {
                let mut v = vec![0.0; m];
                v[0] = 0.7;
                v
            }
            _ => (0..m)
                .map(|_| {
                    if rng.random::<f64>() < 0.15 {
                        0.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect(),
        };
        let w = normalize_batch(raw.clone(), 0.5);
        if w.active_set.is_empty() {
            assert!(w.normalized.iter().all(|&x| x == 0.0));
            continue;
        }
        let mean = w.active_set.iter().map(|&j| w.normalized[j]).sum::<f64>()
            / w.active_set.len() as f64;
        max_mean_err = max_mean_err.max((mean - 1.0).abs());
        // Ratios between active entries are preserved.
        let a = w.active_set[0];
        for &b in &w.active_set {
            let err = (w.normalized[b] / w.normalized[a] - raw[b] / raw[a]).abs();
            max_ratio_err = max_ratio_err.max(err);
        }
    }
    report(
        2,
        max_mean_err < 1e-12 && max_ratio_err < 1e-12,
        &format!("max mean error {max_mean_err:.2e}, max ratio error {max_ratio_err:.2e}"),
    );
}

#[test]
fn criterion_3_learnability_expansion() {
    let mut pass = true;
    let mut detail = String::new();
    for i in 1..=9 {
        let p = i as f64 / 10.0;
        let scaled = exact_kl_normalized(p, 100.0).unwrap() * 2.0 * 100.0 * 100.0;
        if !(0.95..=1.05).contains(&scaled) {
            pass = false;
            detail = format!("scaled KL {scaled} out of range at p={p}");
        }
        let slope = verify_expansion(p, &DEFAULT_BETA_GRID).unwrap().slope;
        let slope_ok = if (p - 0.5).abs() < 1e-12 {
            (slope + 4.0).abs() <= 0.1
        } else {
            slope <= -2.9
        };
        if !slope_ok {
            pass = false;
            detail = format!("residual slope {slope} at p={p}");
        }
    }
    if detail.is_empty() {
        detail = "2 beta^2 scaling in [0.95, 1.05]; slopes -3/-4 as expected".into();
    }
    report(3, pass, &detail);
}

#[test]
fn criterion_4_gradient_oracle() {
    let rep = gradcheck(0, 20, false).unwrap();
    let pass = rep.passed() && rep.cases.len() >= 20;
    report(
        4,
        pass,
        &format!(
            "{} cases, max rel err {:.2e}, stop-gradient exact: {}",
            rep.cases.len(),
            rep.worst(),
            rep.stop_gradient_exact
        ),
    );
}

#[test]
fn criterion_5_advantage_expectation_identity() {
    let mut rng = rollout_rng(5, 0, 0);
    let mut max_err: f64 = 0.0;
    for _ in 0..1000 {
        let s_raw: Vec<f64> = (0..8).map(|_| rng.random_range(1e-6..1.0)).collect();
        let t_raw: Vec<f64> = (0..8).map(|_| rng.random_range(1e-6..1.0)).collect();
        let k = rng.random_range(1..=8usize);
        let s = ProbVector::normalize(&s_raw)
            .unwrap()
            .truncate_top_k(k)
            .unwrap();
        let t = ProbVector::normalize(&t_raw)
            .unwrap()
            .project_onto(&s)
            .unwrap();
        let adv = sdpo_token_advantage(&s, &t).unwrap();
        let expect: f64 = s
            .outcome_masses()
            .iter()
            .zip(&adv.per_bucket)
            .map(|(&p, &a)| p * a)
            .sum();
        let kl = kl_divergence_truncated(&s, &t).unwrap();
        max_err = max_err.max((expect + kl).abs());
    }
    report(5, max_err < 1e-9, &format!("max error {max_err:.2e}"));
}

#[test]
fn criterion_6_degenerate_batch() {
    let mut pass = true;
    let mut detail = String::new();
    for bias in [20.0, -20.0] {
        let task = generate_task(6, 32, 8, 2, 4, DifficultySpec::Constant { bias }).unwrap();
        let config = TrainConfig {
            method: Method::ScSdpo,
            steps: 1,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(config, task).unwrap();
        let before = state.params.clone();
        let metrics = state.train_step().unwrap();
        if metrics.active_questions != 0 {
            pass = false;
            detail = format!("bias {bias}: batch was not fully degenerate");
            break;
        }
        if state.params.w != before.w || state.params.ema_w != before.ema_w {
            pass = false;
            detail = format!("bias {bias}: parameters changed");
            break;
        }
        if metrics.grad_norm != 0.0 {
            pass = false;
            detail = format!("bias {bias}: nonzero gradient norm {}", metrics.grad_norm);
            break;
        }
    }
    if detail.is_empty() {
        detail = "parameters bitwise unchanged for all-pass and all-fail batches".into();
    }
    report(6, pass, &detail);
}

#[test]
fn criterion_7_flat_advantage() {
    let task = default_task();
    let map = FeatureMap {
        context_dim: task.context_dim,
        seq_len: task.seq_len,
        vocab_size: task.vocab_size,
    };
    let params = PolicyParams::new(map, 3.0, 0.05).unwrap();
    let bins = flat_advantage(&params, &task, 16, 100, 0).unwrap();
    let populated: Vec<_> = bins.iter().filter(|b| b.questions >= 5).collect();
    let lo = populated
        .iter()
        .map(|b| b.adv_jsd_mean)
        .fold(f64::INFINITY, f64::min);
    let hi = populated
        .iter()
        .map(|b| b.adv_jsd_mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = populated.len() >= 2 && lo > 0.0 && hi / lo < 2.0;
    report(
        7,
        pass,
        &format!(
            "{} bins with >= 5 questions, JSD advantage range [{lo:.4}, {hi:.4}], ratio {:.3}",
            populated.len(),
            hi / lo
        ),
    );
}

fn final_window_mean(metrics: &[StepMetrics]) -> f64 {
    let tail = &metrics[metrics.len() - 40..];
    tail.iter().map(|m| m.mean_pass_rate).sum::<f64>() / tail.len() as f64
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn run_method(method: Method, alpha: f64, seed: u64, task: &Task) -> Vec<StepMetrics> {
    let config = TrainConfig {
        method,
        alpha,
        seed,
        ..TrainConfig::default()
    };
    run_training(&config, task).unwrap().0
}

#[test]
fn criteria_8_and_9_directional_training_and_determinism() {
    let task = default_task();
    let seeds: Vec<u64> = (0..10).collect();
    let mut pr_sdpo: Vec<f64> = Vec::new();
    let mut pr_sc05: Vec<f64> = Vec::new();
    let mut pr_sc10: Vec<f64> = Vec::new();
    let mut gn_sdpo = Vec::new();
    let mut gn_sc05 = Vec::new();
    let mut gn_sc10 = Vec::new();

    for &seed in &seeds {
        let sdpo = run_method(Method::Sdpo, 0.5, seed, &task);
        let sc05 = run_method(Method::ScSdpo, 0.5, seed, &task);
        let sc10 = run_method(Method::ScSdpo, 1.0, seed, &task);
        pr_sdpo.push(final_window_mean(&sdpo));
        pr_sc05.push(final_window_mean(&sc05));
        pr_sc10.push(final_window_mean(&sc10));
        gn_sdpo.push(median(
            &mut sdpo.iter().map(|m| m.grad_norm).collect::<Vec<_>>(),
        ));
        gn_sc05.push(median(
            &mut sc05.iter().map(|m| m.grad_norm).collect::<Vec<_>>(),
        ));
        gn_sc10.push(median(
            &mut sc10.iter().map(|m| m.grad_norm).collect::<Vec<_>>(),
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m_sdpo, m_sc05, m_sc10) = (mean(&pr_sdpo), mean(&pr_sc05), mean(&pr_sc10));
    let med_sdpo = median(&mut gn_sdpo);
    let med_sc05 = median(&mut gn_sc05);
    let med_sc10 = median(&mut gn_sc10);
    let ratio = med_sc05 / med_sdpo;

    let a = m_sc05 >= m_sdpo - 0.01;
    let b = m_sc05 >= m_sc10;
    let c = (0.5..=2.0).contains(&ratio) && med_sc10 < med_sdpo;
    report(
        8,
        a && b && c,
        &format!(
            "pass rates sdpo {m_sdpo:.3} sc05 {m_sc05:.3} sc10 {m_sc10:.3}; \
             grad-norm medians sdpo {med_sdpo:.3} sc05 {med_sc05:.3} sc10 {med_sc10:.3} (ratio {ratio:.3})"
        ),
    );

    // Criterion 9: repeating seed 0 yields byte-identical CSV output.
    let csv = |metrics: &[StepMetrics]| {
        let mut s = StepMetrics::csv_header();
        for m in metrics {
            s.push_str(&m.csv_row());
        }
        s
    };
    let first = csv(&run_method(Method::ScSdpo, 0.5, 0, &task));
    let second = csv(&run_method(Method::ScSdpo, 0.5, 0, &task));
    let grpo_first = csv(&run_method(Method::Grpo, 0.5, 3, &task));
    let grpo_second = csv(&run_method(Method::Grpo, 0.5, 3, &task));
    report(
        9,
        first == second && grpo_first == grpo_second,
        "repeated runs produce byte-identical metrics CSVs",
    );
}
