//! Command-line surface: generate datasets, train networks, evaluate and
//! monitor formulas, and extract formulas from saved reports.
//!
//! All stdout output is `key=value` lines so scripts and tests can parse it.
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 numerical
//! divergence during training.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tlinet::data::{self, GeneratorSpec, Scenario};
use tlinet::learn::{self, LossConfig, LossKind, Optimizer, RegWeights, TrainError, TrainerConfig};
use tlinet::net::{self, NetworkSpec};
use tlinet::stl;

#[derive(Parser)]
#[command(
    name = "tlinet",
    version,
    about = "Learn temporal logic formulas from labeled time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file
    Generate(GenerateArgs),
    /// Train a network on a dataset and write a report
    Train(TrainArgs),
    /// Misclassification rate of a formula (or a report's formula) on a dataset
    Eval(EvalArgs),
    /// Robustness of a formula on every signal of a dataset
    Monitor(MonitorArgs),
    /// Decode the network stored in a report into a formula
    Extract(ExtractArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// naval | reach-avoid | periodic
    #[arg(long)]
    scenario: String,
    /// Samples per class
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Signal length
    #[arg(long, default_value_t = 60)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian noise added after generation
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file
    #[arg(long)]
    data: PathBuf,
    /// Preset name (naval-1 | reach-avoid | periodic) or a spec file path
    #[arg(long)]
    net: String,
    /// exp | hinge
    #[arg(long, default_value = "hinge")]
    loss: String,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.05)]
    lambda2: f64,
    #[arg(long, default_value_t = 0.05)]
    lambda3: f64,
    /// Hinge margin trade-off
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Time-function ramp width override
    #[arg(long)]
    eta: Option<f64>,
    /// Sparse-softmax scale override
    #[arg(long)]
    beta: Option<f64>,
    /// Sparse-softmax target override (raised automatically if unsound)
    #[arg(long)]
    h: Option<f64>,
    /// Held-out fraction
    #[arg(long, default_value_t = 0.25)]
    holdout: f64,
    /// Independent restarts; best training error wins
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    /// adam | sgd
    #[arg(long, default_value = "adam")]
    optimizer: String,
    /// Report path
    #[arg(long)]
    out: PathBuf,
    /// Print one line per epoch
    #[arg(long, default_value_t = false)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Formula text, or a path to a file containing one
    #[arg(long)]
    formula: Option<String>,
    /// Report file whose formula is evaluated
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MonitorArgs {
    /// Formula text, or a path to a file containing one
    #[arg(long)]
    formula: String,
    #[arg(long)]
    data: PathBuf,
    /// Evaluation time step
    #[arg(long, default_value_t = 0)]
    at: usize,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    report: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Monitor(a) => cmd_monitor(a),
        Command::Extract(a) => cmd_extract(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn cmd_generate(a: GenerateArgs) -> Result<ExitCode, AnyError> {
    let Some(scenario) = Scenario::parse(&a.scenario) else {
        eprintln!(
            "error: unknown scenario '{}'; expected naval, reach-avoid, or periodic",
            a.scenario
        );
        return Ok(ExitCode::from(2));
    };
    let spec = GeneratorSpec::new(scenario, a.n, a.len, a.seed);
    let mut dataset = data::generate(&spec)?;
    if a.noise > 0.0 {
        dataset = data::add_gaussian_noise(&dataset, a.noise, a.seed.wrapping_add(1));
    }
    data::save_dataset(&dataset, a.seed, &a.out)?;
    println!("scenario={}", scenario.name());
    println!("n_signals={}", dataset.len());
    println!("d={}", dataset.d());
    println!("l={}", dataset.l());
    println!("path={}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_spec(name: &str) -> Result<NetworkSpec, AnyError> {
    if let Some(spec) = net::preset(name) {
        return Ok(spec);
    }
    let path = Path::new(name);
    if path.exists() {
        return Ok(NetworkSpec::parse(&std::fs::read_to_string(path)?)?);
    }
    Err(format!(
        "'{name}' is neither a preset ({}) nor a spec file",
        net::PRESET_NAMES.join(", ")
    )
    .into())
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode, AnyError> {
    let dataset = data::load_dataset(&a.data)?;
    let mut spec = load_spec(&a.net)?;
    for layer in &mut spec.layers {
        if let Some(eta) = a.eta {
            layer.eta = eta;
        }
        if let Some(beta) = a.beta {
            layer.method.beta = beta;
        }
        if let Some(h) = a.h {
            layer.method.h = h;
        }
    }
    let loss = LossConfig {
        kind: match a.loss.as_str() {
            "exp" | "exponential" => LossKind::Exponential,
            "hinge" => LossKind::Hinge,
            other => {
                eprintln!("error: unknown loss '{other}'; expected exp or hinge");
                return Ok(ExitCode::from(2));
            }
        },
        gamma: a.gamma,
        ..Default::default()
    };
    let reg = RegWeights {
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        lambda3: a.lambda3,
    };
    let threads = std::env::var("TLINET_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let cfg = TrainerConfig {
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        optimizer: match a.optimizer.as_str() {
            "adam" => Optimizer::Adam,
            "sgd" => Optimizer::Sgd,
            other => {
                eprintln!("error: unknown optimizer '{other}'; expected adam or sgd");
                return Ok(ExitCode::from(2));
            }
        },
        holdout: a.holdout,
        threads,
        restarts: a.restarts,
    };
    let quiet = a.quiet;
    let mut progress = move |s: &learn::EpochStats| {
        if !quiet {
            println!(
                "restart={} epoch={} loss={:.6} mcr_train={:.4}",
                s.restart, s.epoch, s.loss, s.train_mcr
            );
        }
    };
    let outcome = match learn::train(&spec, &dataset, &loss, &reg, &cfg, Some(&mut progress)) {
        Ok(o) => o,
        Err(e @ TrainError::Diverged { .. }) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(3));
        }
        Err(e) => return Err(e.into()),
    };
    std::fs::write(
        &a.out,
        learn::write_report(&outcome.report, &outcome.network),
    )?;
    for w in &outcome.report.warnings {
        println!("warning={w}");
    }
    println!("formula={}", outcome.report.formula_text);
    println!("mcr_train_net={}", outcome.report.train_mcr_net);
    println!("mcr_test_net={}", outcome.report.test_mcr_net);
    println!("mcr_train_formula={}", outcome.report.train_mcr_formula);
    println!("mcr_test_formula={}", outcome.report.test_mcr_formula);
    println!("gate_convergence={}", outcome.report.gate_convergence);
    println!("time_s={:.1}", outcome.report.wall_secs);
    println!("report={}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Accept a formula as literal text or as a path to a text file.
fn read_formula(arg: &str) -> Result<stl::Formula, AnyError> {
    let path = Path::new(arg);
    let text = if path.exists() {
        std::fs::read_to_string(path)?
    } else {
        arg.to_string()
    };
    Ok(stl::parse_formula(text.trim())?)
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode, AnyError> {
    let dataset = data::load_dataset(&a.data)?;
    let formula = match (&a.formula, &a.report) {
        (Some(text), None) => read_formula(text)?,
        (None, Some(path)) => {
            let report = learn::read_report(&std::fs::read_to_string(path)?)?;
            stl::parse_formula(&report.formula_text)?
        }
        _ => {
            eprintln!("error: pass exactly one of --formula or --report");
            return Ok(ExitCode::from(2));
        }
    };
    let mcr = learn::evaluate_formula_padded(&formula, &dataset)?;
    println!("formula={}", stl::format_formula(&formula));
    println!("n_signals={}", dataset.len());
    println!("mcr={mcr}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_monitor(a: MonitorArgs) -> Result<ExitCode, AnyError> {
    let dataset = data::load_dataset(&a.data)?;
    let formula = read_formula(&a.formula)?;
    println!("formula={}", stl::format_formula(&formula));
    for (i, s) in dataset.signals.iter().enumerate() {
        let r = stl::robustness(s, &formula, a.at)?;
        println!("signal={i} robustness={r}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_extract(a: ExtractArgs) -> Result<ExitCode, AnyError> {
    let report = learn::read_report(&std::fs::read_to_string(&a.report)?)?;
    let extraction = net::extract_formula(&report.network)?;
    for w in &extraction.warnings {
        println!("warning={w}");
    }
    println!("formula={}", stl::format_formula(&extraction.formula));
    Ok(ExitCode::SUCCESS)
}
