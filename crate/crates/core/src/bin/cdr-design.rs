//! Command-line front end over `cdr_codesign::harness`.
//!
//! Flags fill an experiment config; `--config FILE` is applied last, so any
//! top-level key set in the file replaces the flag value.

use std::io::{self, BufReader};
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cdr_codesign::denoiser::{ToyModelConfig, TrainConfig};
use cdr_codesign::evaluators::external::{protocol_round_trip, serve_echo};
use cdr_codesign::evaluators::{EchoMode, ExternalConfig, ExternalEvaluator};
use cdr_codesign::guidance::{SigmaPolicy, Strategy};
use cdr_codesign::harness::{
    calibrate, run_experiment, train_toy_on_task, DenoiserSpec, EvaluatorSpec, ExperimentConfig,
    Mode, TaskSpec,
};
use cdr_codesign::ScheduleParams;

#[derive(Parser)]
#[command(
    name = "cdr-design",
    version,
    about = "Guided diffusion sampling experiments for CDR loop co-design"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample designs for every strategy at one K.
    Run(ExperimentArgs),
    /// Sample designs over the K sweep and write the query curve.
    SweepK(ExperimentArgs),
    /// Sample designs over the weight sweep and write the trade-off data.
    SweepW(ExperimentArgs),
    /// Fit objective normalizers on unconditional samples.
    Calibrate(ExperimentArgs),
    /// Round-trip requests through an external evaluator.
    EvalProtocolTest(ProtocolArgs),
    /// Train a toy denoiser against the mixture oracle and save it.
    Train(TrainArgs),
    /// Test double speaking the evaluator protocol on stdin/stdout.
    #[command(hide = true)]
    EchoEvaluator {
        #[arg(long, default_value = "echo")]
        mode: EchoMode,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment config; its keys override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated strategies: H, S, W, W+H, W+S, guideraw_H, guideraw_S, none.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    k_sweep: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    t_init: Option<usize>,
    /// Fixed latent noise scale instead of sigma = beta_t.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    n_designs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Mixture task parameters (JSON or TOML) instead of the built-in task.
    #[arg(long)]
    task: Option<PathBuf>,
    /// Toy checkpoint; the mixture oracle when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Built-in reward: `quadratic` or `hydropathy`.
    #[arg(long)]
    evaluator: Option<String>,
    /// External evaluator command line, split on whitespace.
    #[arg(long, conflicts_with = "evaluator")]
    evaluator_cmd: Option<String>,
    #[arg(long)]
    evaluator_timeout: Option<f64>,
}

#[derive(Args)]
struct ProtocolArgs {
    #[arg(long, default_value_t = 1000)]
    requests: u64,
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    /// Evaluator program and its arguments.
    #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
    command: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 2000)]
    dataset_size: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    task: Option<PathBuf>,
    #[arg(long, default_value = "toy.json")]
    out: PathBuf,
}

fn parse_evaluator(name: &str) -> Result<EvaluatorSpec> {
    Ok(match name {
        "quadratic" | "quad" => EvaluatorSpec::Quadratic { component: None },
        "hydropathy" | "hydro" => EvaluatorSpec::Hydropathy,
        other => bail!(
            "unknown built-in evaluator `{other}` (use quadratic, hydropathy or --evaluator-cmd)"
        ),
    })
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = &args.strategies {
        cfg.strategies = v.clone();
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = &args.k_sweep {
        cfg.k_sweep = v.clone();
    }
    if let Some(v) = &args.weights {
        cfg.weight_sweep = v.clone();
    }
    if let Some(v) = args.t_init {
        cfg.t_init = v;
    }
    if let Some(v) = args.sigma {
        cfg.sigma_policy = SigmaPolicy::Fixed(v);
    }
    if let Some(v) = args.steps {
        cfg.schedule.steps = v;
    }
    if let Some(v) = args.n_designs {
        cfg.n_designs = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.output_dir {
        cfg.output_dir = v.clone();
    }
    cfg.workers = args.workers.or(cfg.workers);
    if let Some(p) = &args.task {
        cfg.task = TaskSpec::Custom { path: p.clone() };
    }
    if let Some(p) = &args.checkpoint {
        cfg.denoiser = DenoiserSpec::Toy {
            checkpoint: p.clone(),
        };
    }
    if let Some(name) = &args.evaluator {
        cfg.evaluator = parse_evaluator(name)?;
    }
    if let Some(cmd) = &args.evaluator_cmd {
        let mut parts = cmd.split_whitespace().map(String::from);
        let program = parts.next().context("empty --evaluator-cmd")?;
        let mut ext = ExternalConfig::new("external", program, parts.collect());
        if let Some(t) = args.evaluator_timeout {
            ext = ext.with_timeout(Duration::from_secs_f64(t));
        }
        cfg.evaluator = EvaluatorSpec::External(ext);
    }
    if let Some(path) = &args.config {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: toml::Table =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut merged = toml::Table::try_from(&cfg)?;
        merged.extend(file);
        cfg = merged
            .try_into()
            .with_context(|| format!("invalid config {}", path.display()))?;
    }
    Ok(cfg)
}

fn experiment(args: &ExperimentArgs, mode: Mode) -> Result<()> {
    let cfg = experiment_config(args)?;
    let res = run_experiment(&cfg, mode)?;
    for a in res
        .aggregates
        .iter()
        .filter(|a| a.metric == format!("reward:{}", res.meta.primary_reward))
    {
        let w = a.w.map(|w| format!(" w={w}")).unwrap_or_default();
        println!(
            "{:<10} K={:<3}{w} n={:<4} mean {:.4} std {:.4}",
            a.strategy.to_string(),
            a.k,
            a.n,
            a.mean,
            a.std
        );
    }
    if res.meta.failed_designs > 0 {
        eprintln!(
            "{} design(s) failed; see designs.csv",
            res.meta.failed_designs
        );
    }
    println!("results in {}", cfg.output_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => experiment(&a, Mode::Run),
        Command::SweepK(a) => experiment(&a, Mode::SweepK),
        Command::SweepW(a) => experiment(&a, Mode::SweepW),
        Command::Calibrate(a) => {
            let cfg = experiment_config(&a)?;
            let fitted = calibrate(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("normalizers.json");
            std::fs::write(&path, serde_json::to_string_pretty(&fitted)? + "\n")?;
            for (name, n) in &fitted {
                println!("{name}: shift {} scale {}", n.shift, n.scale);
            }
            println!("written to {}", path.display());
            Ok(())
        }
        Command::EvalProtocolTest(a) => {
            let (program, rest) = a
                .command
                .split_first()
                .context("missing evaluator command")?;
            let ext = ExternalConfig::new("external", program, rest.to_vec())
                .with_timeout(Duration::from_secs_f64(a.timeout));
            let ev = ExternalEvaluator::spawn(ext)?;
            let state = cdr_codesign::task::SyntheticTask::default().target()?;
            let report = protocol_round_trip(&ev, &state, a.requests);
            println!("{}", serde_json::to_string(&report)?);
            if report.ok != report.requests {
                bail!(
                    "{} of {} requests failed",
                    report.requests - report.ok,
                    report.requests
                );
            }
            Ok(())
        }
        Command::Train(a) => {
            let task = match &a.task {
                Some(p) => TaskSpec::Custom { path: p.clone() }.load()?,
                None => TaskSpec::SyntheticMixture.load()?,
            };
            let mut params = ScheduleParams::default();
            if let Some(s) = a.steps {
                params.steps = s;
            }
            let sched = params.build()?;
            let train = TrainConfig {
                epochs: a.epochs,
                ..Default::default()
            };
            let toy = train_toy_on_task(
                &task,
                &sched,
                a.dataset_size,
                a.seed,
                ToyModelConfig::default(),
                train,
            )?;
            toy.save(&a.out)?;
            println!("saved {}", a.out.display());
            Ok(())
        }
        Command::EchoEvaluator { mode } => {
            serve_echo(
                mode,
                BufReader::new(io::stdin().lock()),
                io::stdout().lock(),
            )?;
            Ok(())
        }
    }
}
