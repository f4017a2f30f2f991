//! Python bindings: tasks, policies, training runs, and the numerical
//! primitives (divergences, advantages, weights, learnability bounds).
//!
//! Build with `cargo build -p sdpo-py`, then load the produced cdylib as
//! module `sdpo_py` (see python/smoke_test.py).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use sdpo_core::advantage;
use sdpo_core::diagnostics;
use sdpo_core::dist::ProbVector;
use sdpo_core::env::{self, DifficultySpec};
use sdpo_core::learnability;
use sdpo_core::policy::{FeatureMap, PolicyParams};
use sdpo_core::trainer::{self, TrainConfig};
use sdpo_core::weighting;

fn err(e: sdpo_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A generated question set.
#[pyclass(name = "Task", skip_from_py_object)]
#[derive(Clone)]
struct PyTask {
    inner: env::Task,
}

#[pymethods]
impl PyTask {
    /// Generates a task with difficulty biases uniform on [lo, hi].
    #[staticmethod]
    #[pyo3(signature = (seed=42, num_questions=64, vocab_size=8, seq_len=2, context_dim=4, lo=-1.0, hi=3.0))]
    fn generate(
        seed: u64,
        num_questions: usize,
        vocab_size: usize,
        seq_len: usize,
        context_dim: usize,
        lo: f64,
        hi: f64,
    ) -> PyResult<Self> {
        let inner = env::generate_task(
            seed,
            num_questions,
            vocab_size,
            seq_len,
            context_dim,
            DifficultySpec::Uniform { lo, hi },
        )
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(Self {
            inner: env::Task::from_json(json).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn num_questions(&self) -> usize {
        self.inner.questions.len()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size
    }

    #[getter]
    fn seq_len(&self) -> usize {
        self.inner.seq_len
    }

    /// Per-question additive logit bonus toward the correct answer.
    fn difficulty_biases(&self) -> Vec<f64> {
        self.inner
            .questions
            .iter()
            .map(|q| q.difficulty_bias)
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Task(questions={}, vocab={}, seq_len={})",
            self.inner.questions.len(),
            self.inner.vocab_size,
            self.inner.seq_len
        )
    }
}

/// Linear-softmax policy with a privileged-feedback teacher branch.
#[pyclass(name = "Policy", skip_from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    inner: PolicyParams,
}

#[pymethods]
impl PyPolicy {
    #[new]
    #[pyo3(signature = (context_dim=4, seq_len=2, vocab_size=8, feedback_gain=3.0, ema_rate=0.05))]
    fn new(
        context_dim: usize,
        seq_len: usize,
        vocab_size: usize,
        feedback_gain: f64,
        ema_rate: f64,
    ) -> PyResult<Self> {
        let map = FeatureMap {
            context_dim,
            seq_len,
            vocab_size,
        };
        Ok(Self {
            inner: PolicyParams::new(map, feedback_gain, ema_rate).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PolicyParams::from_json(json).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn feedback_gain(&self) -> f64 {
        self.inner.feedback_gain
    }

    /// Student next-token distribution for one question and prefix.
    fn student_dist(&self, task: &PyTask, question: usize, prefix: Vec<usize>) -> PyResult<Vec<f64>> {
        let q = task
            .inner
            .questions
            .get(question)
            .ok_or_else(|| PyValueError::new_err(format!("question {question} out of range")))?;
        Ok(self
            .inner
            .student_dist(q, prefix.len(), &prefix)
            .mass()
            .to_vec())
    }

    /// Teacher next-token distribution (EMA weights + feedback bonus).
    fn teacher_dist(&self, task: &PyTask, question: usize, prefix: Vec<usize>) -> PyResult<Vec<f64>> {
        let q = task
            .inner
            .questions
            .get(question)
            .ok_or_else(|| PyValueError::new_err(format!("question {question} out of range")))?;
        let feedback = env::render_feedback(q);
        Ok(self
            .inner
            .teacher_dist(q, prefix.len(), &prefix, &feedback)
            .map_err(err)?
            .mass()
            .to_vec())
    }

    /// Empirical pass rate of the policy on every question.
    fn pass_rates(&self, task: &PyTask, rollouts: usize, seed: u64) -> PyResult<Vec<f64>> {
        task.inner
            .questions
            .iter()
            .map(|q| {
                let mut rng = env::rollout_rng(seed, q.id, 0);
                Ok(self
                    .inner
                    .sample_rollouts(q, rollouts, 1.0, &mut rng, 0)
                    .map_err(err)?
                    .pass_rate
                    .p_hat)
            })
            .collect()
    }
}

/// KL(p || q) between two probability vectors.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let p = ProbVector::new(p).map_err(err)?;
    let q = ProbVector::new(q).map_err(err)?;
    sdpo_core::dist::kl_divergence(&p, &q).map_err(err)
}

/// Jensen-Shannon divergence between two probability vectors.
#[pyfunction]
fn jsd(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let p = ProbVector::new(p).map_err(err)?;
    let q = ProbVector::new(q).map_err(err)?;
    sdpo_core::dist::jsd(&p, &q).map_err(err)
}

/// Top-K truncation: (kept token ids, kept masses, tail mass).
#[pyfunction]
fn truncate_top_k(p: Vec<f64>, k: usize) -> PyResult<(Vec<usize>, Vec<f64>, f64)> {
    let p = ProbVector::new(p).map_err(err)?;
    let t = p.truncate_top_k(k).map_err(err)?;
    Ok((t.indices().to_vec(), t.bucket_mass().to_vec(), t.tail_mass()))
}

/// Group-relative advantages (r - mean) / popstd; zeros when degenerate.
#[pyfunction]
fn grpo_advantages(rewards: Vec<bool>) -> PyResult<Vec<f64>> {
    Ok(advantage::grpo_advantages(&rewards).map_err(err)?.values)
}

/// Total update magnitude sum |A_i| = 2 G sqrt(p (1-p)).
#[pyfunction]
fn total_update_magnitude(rewards: Vec<bool>) -> PyResult<f64> {
    advantage::grpo_total_magnitude(&rewards).map_err(err)
}

/// Difficulty weight [p (1-p)]^alpha.
#[pyfunction]
fn raw_weight(p_hat: f64, alpha: f64) -> PyResult<f64> {
    weighting::raw_weight(p_hat, alpha).map_err(err)
}

/// Batch-normalized weights with unit mean over the active set.
#[pyfunction]
fn normalize_weights(raw: Vec<f64>, alpha: f64) -> Vec<f64> {
    weighting::normalize_batch(raw, alpha).normalized
}

/// Exact normalized two-point KL under reward scale 1/beta.
#[pyfunction]
fn exact_kl_normalized(p: f64, beta: f64) -> PyResult<f64> {
    learnability::exact_kl_normalized(p, beta).map_err(err)
}

/// Leading expansion term 1 / (2 beta^2), independent of p.
#[pyfunction]
fn leading_term(beta: f64) -> f64 {
    learnability::leading_term_normalized(beta)
}

/// Fitted log-log slope of the expansion residual over a beta grid.
#[pyfunction]
fn residual_slope(p: f64) -> PyResult<f64> {
    Ok(
        learnability::verify_expansion(p, &learnability::DEFAULT_BETA_GRID)
            .map_err(err)?
            .slope,
    )
}

/// Trains on a task; config_json uses the same schema as the CLI's
/// "train" section. Returns (metrics CSV, trained Policy).
#[pyfunction]
fn run_training(config_json: &str, task: &PyTask) -> PyResult<(String, PyPolicy)> {
    let config: TrainConfig = serde_json::from_str(config_json)
        .map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
    config.validate().map_err(err)?;
    let (metrics, params) = trainer::run_training(&config, &task.inner).map_err(err)?;
    Ok((trainer::metrics_csv(&metrics), PyPolicy { inner: params }))
}

/// Max norm-scaled error of the analytic gradients against central
/// finite differences.
#[pyfunction]
#[pyo3(signature = (seed=0, instances=5))]
fn gradcheck_max_error(seed: u64, instances: usize) -> PyResult<f64> {
    Ok(diagnostics::gradcheck(seed, instances, false)
        .map_err(err)?
        .worst())
}

/// Pass-rate-binned divergence/advantage table as a CSV string.
#[pyfunction]
#[pyo3(signature = (policy, task, rollouts=16, seed=0))]
fn flat_advantage_csv(policy: &PyPolicy, task: &PyTask, rollouts: usize, seed: u64) -> PyResult<String> {
    let bins =
        diagnostics::flat_advantage(&policy.inner, &task.inner, rollouts, 100, seed).map_err(err)?;
    Ok(diagnostics::flat_advantage_csv(&bins))
}

#[pymodule]
fn sdpo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTask>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(jsd, m)?)?;
    m.add_function(wrap_pyfunction!(truncate_top_k, m)?)?;
    m.add_function(wrap_pyfunction!(grpo_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(total_update_magnitude, m)?)?;
    m.add_function(wrap_pyfunction!(raw_weight, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_weights, m)?)?;
    m.add_function(wrap_pyfunction!(exact_kl_normalized, m)?)?;
    m.add_function(wrap_pyfunction!(leading_term, m)?)?;
    m.add_function(wrap_pyfunction!(residual_slope, m)?)?;
    m.add_function(wrap_pyfunction!(run_training, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck_max_error, m)?)?;
    m.add_function(wrap_pyfunction!(flat_advantage_csv, m)?)?;
    Ok(())
}
