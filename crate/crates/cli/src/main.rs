//! `submitq`: generate workloads, simulate the merge queue, compare
//! strategies and inspect finish-order probabilities.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use submitq::completion::{p_finishes_before, z_score, FinishTimeModel};
use submitq::prediction::{DurationEstimate, PredictorSpec};
use submitq::sim::{self, RunConfig, WorkloadParams, WorkloadSpec};
use submitq::{EngineConfig, Strategy};

#[derive(Debug, Parser)]
#[command(name = "submitq", version, about = "Speculative merge-queue simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic workload file.
    GenWorkload(GenArgs),
    /// Simulate one strategy on a workload.
    Simulate(SimulateArgs),
    /// Simulate several strategies on the same workload.
    Compare(CompareArgs),
    /// Probability that change Y finishes before change X.
    Cdf(CdfArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 500)]
    changes: usize,
    /// Mean arrivals per minute.
    #[arg(long, default_value_t = 0.7)]
    arrival_rate: f64,
    #[arg(long, default_value_t = 0.3)]
    conflict_density: f64,
    #[arg(long, default_value_t = 0.4)]
    long_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    fail_rate: f64,
    #[arg(long, default_value_t = 0.02)]
    breaker_rate: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = sim::STANDARD_CAPACITY)]
    capacity: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Overrides of the workload's engine configuration.
#[derive(Debug, Args)]
struct Overrides {
    /// Speculation threshold.
    #[arg(long)]
    delta: Option<f64>,
    /// Bypass eligibility threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Bypass product floor.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long)]
    depth_cap: Option<usize>,
}

impl Overrides {
    fn apply(&self, mut cfg: EngineConfig) -> Result<EngineConfig, Failure> {
        if let Some(v) = self.delta {
            cfg.speculation_threshold = v;
        }
        if let Some(v) = self.tau {
            cfg.blrd_eligibility_threshold = v;
        }
        if let Some(v) = self.epsilon {
            cfg.bypass_product_floor = v;
        }
        if let Some(v) = self.capacity {
            cfg.executor_capacity = v;
        }
        if let Some(v) = self.depth_cap {
            cfg.depth_cap = v;
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    workload: PathBuf,
    /// Replaces the workload's seed for build durations and predictor noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to the strategy recorded in the workload.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[command(flatten)]
    overrides: Overrides,
    /// Metrics CSV.
    #[arg(long)]
    out_metrics: Option<PathBuf>,
    /// Event trace TSV.
    #[arg(long)]
    out_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated; the first is the reference row.
    #[arg(long, value_delimiter = ',', default_value = "baseline,enhanced")]
    strategies: Vec<Strategy>,
    #[command(flatten)]
    overrides: Overrides,
    /// Run the strategies on separate threads (same output).
    #[arg(long)]
    parallel: bool,
    /// Comparison CSV.
    #[arg(long)]
    out_metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CdfArgs {
    #[arg(long, allow_hyphen_values = true)]
    at_x: f64,
    #[arg(long, allow_hyphen_values = true)]
    mu_x: f64,
    #[arg(long, allow_hyphen_values = true)]
    var_x: f64,
    #[arg(long, allow_hyphen_values = true)]
    at_y: f64,
    #[arg(long, allow_hyphen_values = true)]
    mu_y: f64,
    #[arg(long, allow_hyphen_values = true)]
    var_y: f64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    fn data(e: impl std::fmt::Display) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenWorkload(a) => gen_workload(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Compare(a) => compare(&a),
        Command::Cdf(a) => cdf(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn gen_workload(a: &GenArgs) -> Result<(), Failure> {
    let params = WorkloadParams {
        n_changes: a.changes,
        arrival_rate: a.arrival_rate,
        conflict_density: a.conflict_density,
        long_fraction: a.long_fraction,
        fail_rate: a.fail_rate,
        breaker_rate: a.breaker_rate,
        seed: a.seed,
    };
    params.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut w = sim::generate_workload(&params).map_err(Failure::data)?;
    w.config.executor_capacity = a.capacity;
    w.config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let rate = w.conflict_rate().map_err(Failure::data)?;
    write_atomic(&a.out, &w.to_text())?;
    println!(
        "wrote {} changes to {} (conflict rate {:.1}%)",
        w.changes.len(),
        a.out.display(),
        100.0 * rate
    );
    Ok(())
}

fn load(path: &Path, seed: Option<u64>) -> Result<WorkloadSpec, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut w = WorkloadSpec::parse(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        w.seed = s;
        if let PredictorSpec::OracleWithNoise { seed, .. } = &mut w.predictor {
            *seed = s;
        }
    }
    Ok(w)
}

fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let w = load(&a.workload, a.seed)?;
    let cfg = a.overrides.apply(w.config)?;
    let strategy = a.strategy.unwrap_or(w.strategy);
    let r = sim::run_with(&w, strategy, &cfg).map_err(Failure::data)?;
    if let Some(p) = &a.out_metrics {
        write_atomic(p, &r.metrics.to_csv())?;
    }
    if let Some(p) = &a.out_trace {
        write_atomic(p, &r.trace.to_text())?;
    }
    print!("{}", r.metrics.summary());
    if !r.safety.is_clean() {
        eprintln!(
            "warning: {} green-mainline and {} bypass-safety violations against the workload's ground truth",
            r.safety.green_violations.len(),
            r.safety.blrd_violations.len()
        );
    }
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<(), Failure> {
    let w = load(&a.workload, a.seed)?;
    let cfg = a.overrides.apply(w.config)?;
    let configs: Vec<RunConfig> = a.strategies.iter().map(|&s| RunConfig::new(s, cfg)).collect();
    if configs.len() < 2 {
        return Err(Failure::Usage("--strategies needs at least two entries".into()));
    }
    let table = sim::compare(&w, &configs, a.parallel).map_err(Failure::data)?.to_csv();
    if let Some(p) = &a.out_metrics {
        write_atomic(p, &table)?;
    }
    print!("{table}");
    Ok(())
}

fn cdf(a: &CdfArgs) -> Result<(), Failure> {
    let est = |mean, var| DurationEstimate::new(mean, var).map_err(|e| Failure::Usage(e.to_string()));
    let (x, y) = (est(a.mu_x, a.var_x)?, est(a.mu_y, a.var_y)?);
    if !a.at_x.is_finite() || !a.at_y.is_finite() {
        return Err(Failure::Usage("arrival times must be finite".into()));
    }
    let z = z_score(a.at_x, &x, a.at_y, &y);
    let p = p_finishes_before(&FinishTimeModel::new(a.at_y, y), &FinishTimeModel::new(a.at_x, x));
    println!("Z = {z:.6}");
    println!("P(FT_y < FT_x) = {p:.6}");
    Ok(())
}

/// Writes through a temporary file in the target directory, so a failed run
/// never leaves a partial file behind.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Data(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
