//! Experiment harness: training runs, method sweeps, bound tables,
//! gradient checks, identity checks, and the flat-advantage diagnostic.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sdpo_core::diagnostics::{bounds_table, flat_advantage, flat_advantage_csv, gradcheck, identity_checks};
use sdpo_core::env::{generate_task, DifficultySpec, Task};
use sdpo_core::policy::{FeatureMap, PolicyParams};
use sdpo_core::trainer::{metrics_csv, run_training, StepMetrics, TrainConfig};

#[derive(Parser)]
#[command(name = "sdpo", version, about = "Difficulty-aware self-distillation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write a metrics CSV plus a checkpoint.
    Run {
        /// JSON file with optional "task" and "train" sections.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Run a method x seed grid and write per-run CSVs plus an aggregate.
    Sweep {
        /// JSON experiment spec: task, method configs, seeds, out dir.
        #[arg(long)]
        spec: PathBuf,
    },
    /// Emit the learnability bound table over a (p, beta) grid.
    Bounds {
        /// Comma-separated pass rates.
        #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        p_grid: String,
        /// Comma-separated inverse-temperature values (>= 4 points >= 10).
        #[arg(long, default_value = "10,20,40,80")]
        beta_grid: String,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the distillation gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random instances (4 loss variants each).
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Negative-control hook: corrupt the analytic gradient.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Exhaustive algebraic identity checks.
    Identity,
    /// Pass-rate-binned divergence and advantage-magnitude table.
    FlatAdvantage {
        /// Policy checkpoint JSON; a fresh policy when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Task JSON; the default 64-question task when omitted.
        #[arg(long)]
        task: Option<PathBuf>,
        /// Rollouts per question (also the number of pass-rate bins).
        #[arg(long, default_value_t = 16)]
        rollouts: usize,
        /// Feedback gain for a fresh policy (ignored with --checkpoint).
        #[arg(long, default_value_t = 3.0)]
        gain: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Task-generation parameters; the defaults reproduce the standard
/// 64-question mixed-difficulty task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TaskSpec {
    seed: u64,
    num_questions: usize,
    vocab_size: usize,
    seq_len: usize,
    context_dim: usize,
    difficulty: DifficultySpec,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            num_questions: 64,
            vocab_size: 8,
            seq_len: 2,
            context_dim: 4,
            difficulty: DifficultySpec::default(),
        }
    }
}

impl TaskSpec {
    fn build(&self) -> Result<Task, CliError> {
        generate_task(
            self.seed,
            self.num_questions,
            self.vocab_size,
            self.seq_len,
            self.context_dim,
            self.difficulty,
        )
        .map_err(CliError::from)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    task: TaskSpec,
    train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExperimentSpec {
    #[serde(default)]
    task: TaskSpec,
    /// One train config per method variant to sweep.
    methods: Vec<TrainConfig>,
    seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    out: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Usage/config errors exit 2, numerical failures exit 3.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Numerical(String),
}

impl From<sdpo_core::Error> for CliError {
    fn from(e: sdpo_core::Error) -> Self {
        match e {
            sdpo_core::Error::NumericalAbort { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    // serde_json errors carry line and column positions.
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn cmd_run(config_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let config: RunConfig = read_json(config_path)?;
    config.train.validate()?;
    let task = config.task.build()?;
    fs::create_dir_all(out_dir)?;
    let (metrics, params) = run_training(&config.train, &task)?;
    let stem = format!("{}_{}", config.train.method.name(), config.train.seed);
    let csv_path = out_dir.join(format!("{stem}.csv"));
    write_text(&csv_path, &metrics_csv(&metrics))?;
    let ckpt_path = out_dir.join(format!("{stem}_checkpoint.json"));
    write_text(&ckpt_path, &params.to_json()?)?;
    println!(
        "wrote {} ({} steps) and {}",
        csv_path.display(),
        metrics.len(),
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_sweep(spec_path: &Path) -> Result<(), CliError> {
    let spec: ExperimentSpec = read_json(spec_path)?;
    if spec.methods.is_empty() || spec.seeds.is_empty() {
        return Err(CliError::Usage(
            "sweep spec needs at least one method and one seed".into(),
        ));
    }
    for m in &spec.methods {
        m.validate()?;
    }
    let task = spec.task.build()?;
    fs::create_dir_all(&spec.out)?;

    let mut aggregate =
        String::from("method,step,mean_pass_rate,frac_mid_wide,frac_mid_narrow\n");
    let mut failures: Vec<String> = Vec::new();
    for method_config in &spec.methods {
        let mut per_seed: Vec<Vec<StepMetrics>> = Vec::new();
        for &seed in &spec.seeds {
            let mut config = method_config.clone();
            config.seed = seed;
            let stem = format!("{}_{}", config.method.name(), seed);
            match run_training(&config, &task) {
                Ok((metrics, params)) => {
                    write_text(&spec.out.join(format!("{stem}.csv")), &metrics_csv(&metrics))?;
                    write_text(
                        &spec.out.join(format!("{stem}_checkpoint.json")),
                        &params.to_json()?,
                    )?;
                    per_seed.push(metrics);
                }
                Err(e) => {
                    // Partial failures are recorded; the sweep continues.
                    eprintln!("run {stem} failed: {e}");
                    failures.push(format!("{stem}: {e}"));
                }
            }
        }
        if per_seed.is_empty() {
            continue;
        }
        let steps = per_seed[0].len();
        let n = per_seed.len() as f64;
        let name = method_config.method.name();
        for s in 0..steps {
            let mean = |f: fn(&StepMetrics) -> f64| {
                per_seed.iter().map(|run| f(&run[s])).sum::<f64>() / n
            };
            aggregate.push_str(&format!(
                "{name},{s},{},{},{}\n",
                mean(|m| m.mean_pass_rate),
                mean(|m| m.frac_mid_wide),
                mean(|m| m.frac_mid_narrow)
            ));
        }
    }
    let agg_path = spec.out.join("aggregate.csv");
    write_text(&agg_path, &aggregate)?;
    println!(
        "sweep complete: {} runs, {} failures, aggregate at {}",
        spec.methods.len() * spec.seeds.len() - failures.len(),
        failures.len(),
        agg_path.display()
    );
    if !failures.is_empty() {
        write_text(&spec.out.join("failures.txt"), &failures.join("\n"))?;
    }
    Ok(())
}

fn parse_grid(text: &str, name: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Usage(format!("bad {name} entry {s:?}: {e}")))
        })
        .collect()
}

fn cmd_bounds(p_grid: &str, beta_grid: &str, out: Option<&Path>) -> Result<(), CliError> {
    let ps = parse_grid(p_grid, "p-grid")?;
    let betas = parse_grid(beta_grid, "beta-grid")?;
    let report = bounds_table(&ps, &betas)?;
    emit(out, &report.csv())
}

fn cmd_gradcheck(seed: u64, instances: usize, corrupt: bool) -> Result<(), CliError> {
    let report = gradcheck(seed, instances, corrupt)?;
    println!(
        "{} cases, max relative error {:.3e} (tolerance {:.0e})",
        report.cases.len(),
        report.worst(),
        report.tolerance
    );
    println!(
        "stop-gradient check (teacher perturbation leaves the student gradient unchanged): {}",
        if report.stop_gradient_exact { "PASS" } else { "FAIL" }
    );
    if report.passed() {
        println!("gradcheck: PASS");
        Ok(())
    } else {
        println!("gradcheck: FAIL");
        Err(CliError::Numerical("gradient check failed".into()))
    }
}

fn cmd_identity() -> Result<(), CliError> {
    let report = identity_checks()?;
    let line = |label: &str, ok: bool, detail: String| {
        println!("{label}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    };
    line(
        "magnitude identity",
        report.magnitude_max_err < report.tolerance,
        format!("max error {:.2e}", report.magnitude_max_err),
    );
    line(
        "weight symmetry",
        report.weight_symmetry_max_err < 1e-12,
        format!("max error {:.2e}", report.weight_symmetry_max_err),
    );
    line("weight unimodality", report.unimodal, "grid scan".into());
    line(
        "normalization unit mean",
        report.unit_mean_max_err < 1e-12,
        format!("max error {:.2e}", report.unit_mean_max_err),
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Numerical("identity checks failed".into()))
    }
}

fn cmd_flat_advantage(
    checkpoint: Option<&Path>,
    task_path: Option<&Path>,
    rollouts: usize,
    gain: f64,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let task = match task_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            Task::from_json(&text)?
        }
        None => TaskSpec::default().build()?,
    };
    let params = match checkpoint {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            PolicyParams::from_json(&text)?
        }
        None => PolicyParams::new(
            FeatureMap {
                context_dim: task.context_dim,
                seq_len: task.seq_len,
                vocab_size: task.vocab_size,
            },
            gain,
            0.05,
        )?,
    };
    let bins = flat_advantage(&params, &task, rollouts, 100, seed)?;
    emit(out, &flat_advantage_csv(&bins))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            write_text(path, text)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out } => cmd_run(config, out),
        Command::Sweep { spec } => cmd_sweep(spec),
        Command::Bounds { p_grid, beta_grid, out } => {
            cmd_bounds(p_grid, beta_grid, out.as_deref())
        }
        Command::Gradcheck { seed, instances, corrupt } => {
            cmd_gradcheck(*seed, *instances, *corrupt)
        }
        Command::Identity => cmd_identity(),
        Command::FlatAdvantage { checkpoint, task, rollouts, gain, seed, out } => {
            cmd_flat_advantage(
                checkpoint.as_deref(),
                task.as_deref(),
                *rollouts,
                *gain,
                *seed,
                out.as_deref(),
            )
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
