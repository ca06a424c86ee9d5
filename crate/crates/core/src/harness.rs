//! Batch experiments: configuration, execution and result files.
//!
//! One run produces, in `output_dir`:
//!
//! - `designs.csv`: one row per design with columns `strategy, k, w, seed,
//!   design, status, aar, rmsd, reward:<name>..., queries_used, budget, error`.
//!   Empty cells mean "not available"; `status` is `ok` or `failed`.
//! - `aggregates.csv`: `strategy, k, w, metric, n, mean, std` over the `ok`
//!   rows of each cell. `std` is the sample standard deviation (0 for n = 1).
//! - `query_curve.csv` (K sweeps): `strategy, k, mean_reward, std_reward,
//!   queries_per_design`.
//! - `tradeoff.csv` (weight sweeps): `strategy, w, mean_reward1,
//!   mean_reward2, std_reward1, std_reward2`, ascending in `w`.
//! - `run_meta.json`: config hash, schedule, normalizers, denoiser id and
//!   crate version.
//!
//! Every file is a deterministic function of the config; worker count and
//! output directory do not enter the results or the hash.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::toy::train_toy_denoiser;
use crate::denoiser::{Denoiser, MixtureOracle, ToyDenoiser, ToyModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluators::{
    calibrate_normalizers, Evaluator, ExternalConfig, ExternalEvaluator, Hydropathy, Normalizer,
    QuadraticReward, WeightedComponent, WeightedObjective,
};
use crate::guidance::{GuidanceConfig, SigmaPolicy, Strategy};
use crate::metrics::DesignReport;
use crate::pipeline::{sample_batch, RunSpec};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::state::CdrState;
use crate::task::SyntheticTask;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    /// The built-in two-component mixture.
    #[default]
    SyntheticMixture,
    /// Mixture parameters read from a JSON or TOML file.
    Custom { path: PathBuf },
}

impl TaskSpec {
    pub fn load(&self) -> Result<SyntheticTask> {
        let task = match self {
            TaskSpec::SyntheticMixture => SyntheticTask::default(),
            TaskSpec::Custom { path } => {
                let text = std::fs::read_to_string(path)?;
                if path.extension().is_some_and(|e| e == "toml") {
                    toml::from_str(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                } else {
                    serde_json::from_str(&text)?
                }
            }
        };
        task.validate()?;
        Ok(task)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorSpec {
    /// Quadratic reward toward one mixture component's mode; the task's
    /// target component when `component` is absent.
    Quadratic {
        #[serde(default)]
        component: Option<usize>,
    },
    Hydropathy,
    External(ExternalConfig),
}

impl Default for EvaluatorSpec {
    fn default() -> Self {
        EvaluatorSpec::Quadratic { component: None }
    }
}

impl EvaluatorSpec {
    pub fn build(&self, task: &SyntheticTask) -> Result<Arc<dyn Evaluator>> {
        Ok(match self {
            EvaluatorSpec::Quadratic { component } => {
                let k = component.unwrap_or(task.target_component);
                let name = if component.is_some() {
                    format!("quad{k}")
                } else {
                    "quad".to_string()
                };
                Arc::new(QuadraticReward::new(
                    name,
                    task.mode(k)?,
                    task.lambda,
                    task.mu,
                ))
            }
            EvaluatorSpec::Hydropathy => Arc::new(Hydropathy::new()),
            EvaluatorSpec::External(cfg) => Arc::new(ExternalEvaluator::spawn(cfg.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiserSpec {
    /// Exact posterior of the mixture task.
    #[default]
    Oracle,
    /// A saved toy model; its schedule must match the experiment's.
    Toy { checkpoint: PathBuf },
    /// Train a toy model against the oracle before sampling.
    TrainToy {
        #[serde(default = "default_dataset_size")]
        dataset_size: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        model: ToyModelConfig,
        #[serde(default)]
        train: TrainConfig,
    },
}

fn default_dataset_size() -> usize {
    2000
}

/// Denoiser built from a [`DenoiserSpec`], with a short id for result files.
pub enum BuiltDenoiser {
    Oracle(MixtureOracle),
    Toy(ToyDenoiser),
}

impl BuiltDenoiser {
    pub fn as_dyn(&self) -> &dyn Denoiser {
        match self {
            BuiltDenoiser::Oracle(o) => o,
            BuiltDenoiser::Toy(t) => t,
        }
    }
}

impl DenoiserSpec {
    pub fn build(
        &self,
        task: &SyntheticTask,
        sched: &NoiseSchedule,
    ) -> Result<(BuiltDenoiser, String)> {
        match self {
            DenoiserSpec::Oracle => Ok((
                BuiltDenoiser::Oracle(MixtureOracle::new(task.clone(), sched.clone())?),
                "oracle".into(),
            )),
            DenoiserSpec::Toy { checkpoint } => {
                let toy = ToyDenoiser::load(checkpoint)?;
                if toy.config().schedule != *sched.params() {
                    return Err(Error::Config(
                        "checkpoint schedule differs from the experiment schedule".into(),
                    ));
                }
                Ok((
                    BuiltDenoiser::Toy(toy),
                    format!("toy:{}", checkpoint.display()),
                ))
            }
            DenoiserSpec::TrainToy {
                dataset_size,
                seed,
                model,
                train,
            } => {
                let toy =
                    train_toy_on_task(task, sched, *dataset_size, *seed, model.clone(), *train)?;
                Ok((BuiltDenoiser::Toy(toy), format!("toy-trained:{seed}")))
            }
        }
    }
}

/// Train a toy denoiser on `n` clean samples of `task`, with the mixture
/// oracle as teacher.
pub fn train_toy_on_task(
    task: &SyntheticTask,
    sched: &NoiseSchedule,
    n: usize,
    seed: u64,
    model: ToyModelConfig,
    train: TrainConfig,
) -> Result<ToyDenoiser> {
    let oracle = MixtureOracle::new(task.clone(), sched.clone())?;
    let ctx = task.context()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<CdrState> = (0..n)
        .map(|_| task.sample_clean(oracle.components(), &mut rng).0)
        .collect();
    let model = ToyModelConfig {
        schedule: *sched.params(),
        ..model
    };
    Ok(train_toy_denoiser(&data, &ctx, &oracle, sched, model, train, &mut rng)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Every strategy at the configured `k`.
    Run,
    /// Every strategy at every `k_sweep` value.
    SweepK,
    /// Every strategy at every `weight_sweep` value of the two-component objective.
    SweepW,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Run => "run",
            Mode::SweepK => "sweep-k",
            Mode::SweepW => "sweep-w",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub schedule: ScheduleParams,
    pub denoiser: DenoiserSpec,
    /// Reward that guides sampling in `run` and `sweep-k`.
    pub evaluator: EvaluatorSpec,
    /// Two components for `sweep-w`; `w` weighs the first, `1 - w` the second.
    pub objective: Vec<EvaluatorSpec>,
    /// Fixed normalizers for the objective; calibrated on unconditional
    /// samples when empty.
    pub normalizers: Vec<Normalizer>,
    pub calibration_samples: usize,
    /// Scored on every final design, never charged as queries.
    pub report: Vec<EvaluatorSpec>,
    pub strategies: Vec<Strategy>,
    pub k: usize,
    pub k_sweep: Vec<usize>,
    pub weight_sweep: Vec<f64>,
    pub t_init: usize,
    pub sigma_policy: SigmaPolicy,
    pub n_designs: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Rayon worker threads; the global pool when absent.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::default(),
            schedule: ScheduleParams::default(),
            denoiser: DenoiserSpec::default(),
            evaluator: EvaluatorSpec::default(),
            objective: vec![],
            normalizers: vec![],
            calibration_samples: 200,
            report: vec![],
            strategies: vec![Strategy::Hard],
            k: 20,
            k_sweep: vec![1, 2, 4, 8, 16, 32],
            weight_sweep: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            t_init: 50,
            sigma_policy: SigmaPolicy::AdaptiveBeta,
            n_designs: 100,
            seed: 0,
            output_dir: PathBuf::from("results"),
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("strategies must be nonempty".into()));
        }
        if self.n_designs == 0 {
            return Err(Error::Config("n_designs must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let ks: &[usize] = if mode == Mode::SweepK {
            &self.k_sweep
        } else {
            std::slice::from_ref(&self.k)
        };
        if ks.is_empty() {
            return Err(Error::Config("k_sweep must be nonempty".into()));
        }
        for &k in ks {
            self.guidance(Strategy::Hard, k)
                .validate(self.schedule.steps)?;
        }
        if let Some(w) = self.weight_sweep.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Config(format!("weight {w} outside [0, 1]")));
        }
        if mode == Mode::SweepW {
            if self.objective.len() != 2 {
                return Err(Error::Config(
                    "sweep-w needs exactly two objective components".into(),
                ));
            }
            if self.weight_sweep.is_empty() {
                return Err(Error::Config("weight_sweep must be nonempty".into()));
            }
            if !self.normalizers.is_empty() && self.normalizers.len() != 2 {
                return Err(Error::Config(
                    "normalizers must list one entry per objective component".into(),
                ));
            }
            if self.normalizers.is_empty() && self.calibration_samples < 2 {
                return Err(Error::Config("calibration needs at least 2 samples".into()));
            }
        }
        Ok(())
    }

    fn guidance(&self, strategy: Strategy, k: usize) -> GuidanceConfig {
        GuidanceConfig {
            k,
            sigma_policy: self.sigma_policy,
            t_init: self.t_init,
            strategy,
            seed: self.seed,
        }
    }

    /// Hex SHA-256 of the config with `output_dir` and `workers` cleared.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: PathBuf::new(),
            workers: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub strategy: Strategy,
    pub k: usize,
    pub w: Option<f64>,
    pub seed: u64,
    pub design: usize,
    pub report: Option<DesignReport>,
    pub budget: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub strategy: Strategy,
    pub k: usize,
    pub w: Option<f64>,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryCurveRow {
    pub strategy: Strategy,
    pub k: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub queries_per_design: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub strategy: Strategy,
    pub w: f64,
    pub mean1: f64,
    pub mean2: f64,
    pub std1: f64,
    pub std2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub mode: Mode,
    pub config_hash: String,
    pub version: String,
    pub denoiser: String,
    pub schedule: ScheduleParams,
    /// Name of the reward reported as `mean_reward` in the query curve.
    pub primary_reward: String,
    pub reward_columns: Vec<String>,
    /// Objective component names and normalizers (weight sweeps only).
    pub components: Vec<String>,
    pub normalizers: Vec<Normalizer>,
    pub n_designs: usize,
    pub failed_designs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub meta: RunMeta,
    pub rows: Vec<DesignRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Normalizers of the two objective components from `n` unconditional
/// designs.
pub fn calibrate(cfg: &ExperimentConfig) -> Result<Vec<(String, Normalizer)>> {
    if cfg.objective.is_empty() {
        return Err(Error::Config(
            "calibration needs objective components".into(),
        ));
    }
    let task = cfg.task.load()?;
    let sched = cfg.schedule.build()?;
    let (den, den_id) = cfg.denoiser.build(&task, &sched)?;
    let comps = build_components(&cfg.objective, &task)?;
    with_workers(cfg.workers, || {
        let obj = calibrate_objective(cfg, &task, &sched, den.as_dyn(), &den_id, comps)?;
        Ok(obj
            .components()
            .iter()
            .map(|c| (c.evaluator.name().to_string(), c.normalizer))
            .collect())
    })
}

fn build_components(
    specs: &[EvaluatorSpec],
    task: &SyntheticTask,
) -> Result<Vec<Arc<dyn Evaluator>>> {
    let comps: Vec<Arc<dyn Evaluator>> =
        specs.iter().map(|s| s.build(task)).collect::<Result<_>>()?;
    check_unique(comps.iter().map(|c| c.name()))?;
    Ok(comps)
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::Config(format!("duplicate evaluator name `{n}`")));
        }
    }
    Ok(())
}

fn calibrate_objective(
    cfg: &ExperimentConfig,
    task: &SyntheticTask,
    sched: &NoiseSchedule,
    den: &dyn Denoiser,
    den_id: &str,
    comps: Vec<Arc<dyn Evaluator>>,
) -> Result<WeightedObjective> {
    let ctx = task.context()?;
    let unit = comps
        .into_iter()
        .map(|evaluator| WeightedComponent {
            evaluator,
            weight: 1.0,
            normalizer: Normalizer::default(),
        })
        .collect();
    let obj = WeightedObjective::new("objective", unit)?;
    if !cfg.normalizers.is_empty() {
        let comps = obj
            .components()
            .iter()
            .zip(&cfg.normalizers)
            .map(|(c, n)| WeightedComponent {
                evaluator: c.evaluator.clone(),
                weight: 1.0,
                normalizer: *n,
            })
            .collect();
        return WeightedObjective::new("objective", comps);
    }
    let spec = RunSpec {
        schedule: sched,
        guidance: GuidanceConfig {
            strategy: Strategy::None,
            ..cfg.guidance(Strategy::None, cfg.k)
        },
        evaluator: &obj,
        report_evaluators: vec![],
        denoiser: den,
        denoiser_id: den_id.to_string(),
        context: &ctx,
        reference: None,
        n_designs: cfg.calibration_samples,
    };
    let samples = sample_batch(&spec)
        .into_iter()
        .map(|r| r.map(|(a, _)| a))
        .collect::<Result<Vec<_>>>()?;
    calibrate_normalizers(&obj, &samples)
}

fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    match workers {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(f),
    }
}

/// Run every cell of `mode` and return the rows without writing files.
pub fn run_cells(cfg: &ExperimentConfig, mode: Mode) -> Result<ExperimentResults> {
    cfg.validate(mode)?;
    let task = cfg.task.load()?;
    let sched = cfg.schedule.build()?;
    let ctx = task.context()?;
    let reference = task.target()?;
    let (den, den_id) = cfg.denoiser.build(&task, &sched)?;
    let reports = build_components(&cfg.report, &task)?;

    with_workers(cfg.workers, || {
        let (primary, objective, components): (
            Arc<dyn Evaluator>,
            Option<WeightedObjective>,
            Vec<Arc<dyn Evaluator>>,
        ) = if mode == Mode::SweepW {
            let comps = build_components(&cfg.objective, &task)?;
            let obj =
                calibrate_objective(cfg, &task, &sched, den.as_dyn(), &den_id, comps.clone())?;
            (Arc::new(obj.with_weights(&[1.0, 1.0])?), Some(obj), comps)
        } else {
            (cfg.evaluator.build(&task)?, None, vec![])
        };
        let mut columns = vec![primary.name().to_string()];
        columns.extend(components.iter().map(|c| c.name().to_string()));
        columns.extend(reports.iter().map(|c| c.name().to_string()));
        check_unique(columns.iter().map(String::as_str))?;

        let cells: Vec<(Strategy, usize, Option<f64>)> = match mode {
            Mode::Run => cfg.strategies.iter().map(|&s| (s, cfg.k, None)).collect(),
            Mode::SweepK => cfg
                .strategies
                .iter()
                .flat_map(|&s| cfg.k_sweep.iter().map(move |&k| (s, k, None)))
                .collect(),
            Mode::SweepW => cfg
                .strategies
                .iter()
                .flat_map(|&s| cfg.weight_sweep.iter().map(move |&w| (s, cfg.k, Some(w))))
                .collect(),
        };

        let mut rows = Vec::new();
        for (strategy, k, w) in cells {
            let weighted;
            let evaluator: &dyn Evaluator = match (w, &objective) {
                (Some(w), Some(obj)) => {
                    weighted = obj.with_weights(&[w, 1.0 - w])?;
                    &weighted
                }
                _ => primary.as_ref(),
            };
            let mut report_evaluators: Vec<&dyn Evaluator> =
                components.iter().map(|c| c.as_ref()).collect();
            report_evaluators.extend(reports.iter().map(|c| c.as_ref()));
            let spec = RunSpec {
                schedule: &sched,
                guidance: cfg.guidance(strategy, k),
                evaluator,
                report_evaluators,
                denoiser: den.as_dyn(),
                denoiser_id: den_id.clone(),
                context: &ctx,
                reference: Some(&reference),
                n_designs: cfg.n_designs,
            };
            let budget = spec.guidance.query_budget() as u64;
            for (design, result) in sample_batch(&spec).into_iter().enumerate() {
                let (report, error) = match result {
                    Ok((_, rep)) => {
                        if rep.queries_used != budget {
                            return Err(Error::Domain(format!(
                                "query accounting: {strategy} K={k} design {design} used {} of budget {budget}",
                                rep.queries_used
                            )));
                        }
                        (Some(rep), None)
                    }
                    Err(e) => (None, Some(e.to_string())),
                };
                rows.push(DesignRow {
                    strategy,
                    k,
                    w,
                    seed: cfg.seed,
                    design,
                    report,
                    budget,
                    error,
                });
            }
        }

        let aggregates = aggregate(&rows, &columns);
        let failed_designs = rows.iter().filter(|r| r.report.is_none()).count();
        let meta = RunMeta {
            mode,
            config_hash: cfg.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            denoiser: den_id.clone(),
            schedule: cfg.schedule,
            primary_reward: columns[0].clone(),
            reward_columns: columns,
            components: components.iter().map(|c| c.name().to_string()).collect(),
            normalizers: objective
                .as_ref()
                .map(|o| o.normalizers())
                .unwrap_or_default(),
            n_designs: cfg.n_designs,
            failed_designs,
        };
        Ok(ExperimentResults {
            meta,
            rows,
            aggregates,
        })
    })
}

/// Per-cell mean and std of every metric over successful designs, in cell
/// order and then `aar, rmsd, reward:<name>..., queries_used`.
pub fn aggregate(rows: &[DesignRow], reward_columns: &[String]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let key = (rows[start].strategy, rows[start].k, rows[start].w);
        let end = start
            + rows[start..]
                .iter()
                .take_while(|r| (r.strategy, r.k, r.w) == key)
                .count();
        let ok: Vec<&DesignReport> = rows[start..end]
            .iter()
            .filter_map(|r| r.report.as_ref())
            .collect();
        let mut metrics: Vec<(String, Vec<f64>)> = vec![
            ("aar".into(), ok.iter().filter_map(|r| r.aar).collect()),
            ("rmsd".into(), ok.iter().filter_map(|r| r.rmsd).collect()),
        ];
        for name in reward_columns {
            metrics.push((
                format!("reward:{name}"),
                ok.iter()
                    .filter_map(|r| r.rewards.get(name).copied())
                    .collect(),
            ));
        }
        metrics.push((
            "queries_used".into(),
            ok.iter().map(|r| r.queries_used as f64).collect(),
        ));
        for (metric, xs) in metrics {
            if xs.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&xs);
            out.push(AggregateRow {
                strategy: key.0,
                k: key.1,
                w: key.2,
                metric,
                n: xs.len(),
                mean,
                std,
            });
        }
        start = end;
    }
    out
}

fn find<'a>(
    results: &'a ExperimentResults,
    s: Strategy,
    k: usize,
    w: Option<f64>,
    metric: &str,
) -> Option<&'a AggregateRow> {
    results
        .aggregates
        .iter()
        .find(|a| a.strategy == s && a.k == k && a.w == w && a.metric == metric)
}

fn cells(results: &ExperimentResults) -> Vec<(Strategy, usize, Option<f64>, u64)> {
    let mut out: Vec<(Strategy, usize, Option<f64>, u64)> = Vec::new();
    for r in &results.rows {
        if out
            .last()
            .is_none_or(|c| (c.0, c.1, c.2) != (r.strategy, r.k, r.w))
        {
            out.push((r.strategy, r.k, r.w, r.budget));
        }
    }
    out
}

/// One row per (strategy, K) cell of a K sweep, in config order.
pub fn emit_query_curve(results: &ExperimentResults) -> Result<Vec<QueryCurveRow>> {
    if results.meta.mode != Mode::SweepK {
        return Err(Error::Config("query curve needs a K sweep".into()));
    }
    let metric = format!("reward:{}", results.meta.primary_reward);
    Ok(cells(results)
        .into_iter()
        .map(|(strategy, k, w, budget)| {
            let agg = find(results, strategy, k, w, &metric);
            QueryCurveRow {
                strategy,
                k,
                mean_reward: agg.map_or(f64::NAN, |a| a.mean),
                std_reward: agg.map_or(f64::NAN, |a| a.std),
                queries_per_design: budget,
            }
        })
        .collect())
}

/// One row per (strategy, w) of a weight sweep with the raw rewards of the
/// two objective components, ascending in `w` within each strategy.
pub fn emit_tradeoff_data(results: &ExperimentResults) -> Result<Vec<TradeoffRow>> {
    if results.meta.mode != Mode::SweepW {
        return Err(Error::Config("trade-off data needs a weight sweep".into()));
    }
    let [c1, c2] = results.meta.components.as_slice() else {
        return Err(Error::Config(
            "trade-off data needs two objective components".into(),
        ));
    };
    let (m1, m2) = (format!("reward:{c1}"), format!("reward:{c2}"));
    let mut rows: Vec<TradeoffRow> = cells(results)
        .into_iter()
        .map(|(strategy, k, w, _)| {
            let a1 = find(results, strategy, k, w, &m1);
            let a2 = find(results, strategy, k, w, &m2);
            TradeoffRow {
                strategy,
                w: w.unwrap_or(f64::NAN),
                mean1: a1.map_or(f64::NAN, |a| a.mean),
                mean2: a2.map_or(f64::NAN, |a| a.mean),
                std1: a1.map_or(f64::NAN, |a| a.std),
                std2: a2.map_or(f64::NAN, |a| a.std),
            }
        })
        .collect();
    // stable: keeps config order of strategies, sorts weights within each
    let strategy_rank = |s: Strategy| {
        cells(results)
            .iter()
            .position(|c| c.0 == s)
            .unwrap_or(usize::MAX)
    };
    rows.sort_by(|a, b| {
        strategy_rank(a.strategy)
            .cmp(&strategy_rank(b.strategy))
            .then(a.w.total_cmp(&b.w))
    });
    Ok(rows)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

impl ExperimentResults {
    pub fn write_designs(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<String> = [
            "strategy", "k", "w", "seed", "design", "status", "aar", "rmsd",
        ]
        .map(String::from)
        .to_vec();
        header.extend(
            self.meta
                .reward_columns
                .iter()
                .map(|c| format!("reward:{c}")),
        );
        header.extend(["queries_used", "budget", "error"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let rep = r.report.as_ref();
            let mut rec = vec![
                r.strategy.to_string(),
                r.k.to_string(),
                opt(r.w),
                r.seed.to_string(),
                r.design.to_string(),
                if rep.is_some() { "ok" } else { "failed" }.to_string(),
                opt(rep.and_then(|p| p.aar)),
                opt(rep.and_then(|p| p.rmsd)),
            ];
            rec.extend(
                self.meta
                    .reward_columns
                    .iter()
                    .map(|c| opt(rep.and_then(|p| p.rewards.get(c).copied()))),
            );
            rec.push(rep.map(|p| p.queries_used.to_string()).unwrap_or_default());
            rec.push(r.budget.to_string());
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregates(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["strategy", "k", "w", "metric", "n", "mean", "std"])
            .map_err(csv_err)?;
        for a in &self.aggregates {
            w.write_record([
                a.strategy.to_string(),
                a.k.to_string(),
                opt(a.w),
                a.metric.clone(),
                a.n.to_string(),
                a.mean.to_string(),
                a.std.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// All files for this run's mode into `dir`, created if missing.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = vec![dir.join("designs.csv"), dir.join("aggregates.csv")];
        self.write_designs(&written[0])?;
        self.write_aggregates(&written[1])?;
        match self.meta.mode {
            Mode::SweepK => {
                let path = dir.join("query_curve.csv");
                let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
                w.write_record([
                    "strategy",
                    "k",
                    "mean_reward",
                    "std_reward",
                    "queries_per_design",
                ])
                .map_err(csv_err)?;
                for r in emit_query_curve(self)? {
                    w.write_record([
                        r.strategy.to_string(),
                        r.k.to_string(),
                        r.mean_reward.to_string(),
                        r.std_reward.to_string(),
                        r.queries_per_design.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
                w.flush()?;
                written.push(path);
            }
            Mode::SweepW => {
                let path = dir.join("tradeoff.csv");
                let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
                w.write_record([
                    "strategy",
                    "w",
                    "mean_reward1",
                    "mean_reward2",
                    "std_reward1",
                    "std_reward2",
                ])
                .map_err(csv_err)?;
                for r in emit_tradeoff_data(self)? {
                    w.write_record([
                        r.strategy.to_string(),
                        r.w.to_string(),
                        r.mean1.to_string(),
                        r.mean2.to_string(),
                        r.std1.to_string(),
                        r.std2.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
                w.flush()?;
                written.push(path);
            }
            Mode::Run => {}
        }
        let path = dir.join("run_meta.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.meta)? + "\n")?;
        written.push(path);
        Ok(written)
    }
}

/// Run `mode` and write its files to `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, mode: Mode) -> Result<ExperimentResults> {
    let results = run_cells(cfg, mode)?;
    results.write_all(&cfg.output_dir)?;
    Ok(results)
}

/// Rewards by evaluator name of the `ok` rows in one cell.
pub fn cell_rewards(
    results: &ExperimentResults,
    strategy: Strategy,
    k: usize,
    w: Option<f64>,
) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results
        .rows
        .iter()
        .filter(|r| r.strategy == strategy && r.k == k && r.w == w)
    {
        if let Some(rep) = &r.report {
            for (name, v) in &rep.rewards {
                out.entry(name.clone()).or_default().push(*v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            schedule: ScheduleParams {
                steps: 10,
                ..Default::default()
            },
            t_init: 4,
            k: 3,
            n_designs: 3,
            seed: 5,
            output_dir: dir.to_path_buf(),
            ..Default::default()
        }
    }

    #[test]
    fn unconditional_rows_use_no_queries() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            strategies: vec![Strategy::None],
            ..small(dir.path())
        };
        let res = run_experiment(&cfg, Mode::Run).unwrap();
        assert_eq!(res.rows.len(), 3);
        assert!(res
            .rows
            .iter()
            .all(|r| r.report.as_ref().unwrap().queries_used == 0));
        let text = std::fs::read_to_string(dir.path().join("designs.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn k_sweep_has_one_curve_row_per_budget() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            k_sweep: vec![1, 2, 4],
            ..small(dir.path())
        };
        let res = run_experiment(&cfg, Mode::SweepK).unwrap();
        let curve = emit_query_curve(&res).unwrap();
        assert_eq!(curve.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 2, 4]);
        for r in &curve {
            assert_eq!(r.queries_per_design, (r.k * 4) as u64);
        }
        assert!(emit_tradeoff_data(&res).is_err());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = ExperimentConfig {
            strategies: vec![Strategy::Hard, Strategy::GuideRawSoft],
            ..small(a.path())
        };
        run_experiment(&cfg, Mode::Run).unwrap();
        let cfg_b = ExperimentConfig {
            output_dir: b.path().to_path_buf(),
            workers: Some(1),
            ..cfg
        };
        run_experiment(&cfg_b, Mode::Run).unwrap();
        for f in ["designs.csv", "aggregates.csv", "run_meta.json"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn aggregates_match_design_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            strategies: vec![Strategy::Hard, Strategy::Soft, Strategy::None],
            n_designs: 5,
            ..small(dir.path())
        };
        run_experiment(&cfg, Mode::Run).unwrap();
        let mut designs = csv::Reader::from_path(dir.path().join("designs.csv")).unwrap();
        let header = designs.headers().unwrap().clone();
        let rows: Vec<csv::StringRecord> = designs.records().map(|r| r.unwrap()).collect();
        let mut aggs = csv::Reader::from_path(dir.path().join("aggregates.csv")).unwrap();
        let mut checked = 0;
        for a in aggs.records().map(|r| r.unwrap()) {
            let col = header.iter().position(|h| h == &a[3]).unwrap();
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r[0] == a[0] && r[1] == a[1] && r[2] == a[2] && !r[col].is_empty())
                .map(|r| r[col].parse().unwrap())
                .collect();
            // Welford, independent of the two-pass formula used by the harness
            let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
            for x in &xs {
                n += 1.0;
                let d = x - mean;
                mean += d / n;
                m2 += d * (x - mean);
            }
            let std = if xs.len() > 1 {
                (m2 / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            assert_eq!(a[4].parse::<usize>().unwrap(), xs.len());
            assert!((a[5].parse::<f64>().unwrap() - mean).abs() <= 1e-9, "{a:?}");
            assert!((a[6].parse::<f64>().unwrap() - std).abs() <= 1e-9, "{a:?}");
            checked += 1;
        }
        assert!(checked >= 3 * 4);
    }

    #[test]
    fn weight_sweep_rows_ascend() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            objective: vec![
                EvaluatorSpec::Quadratic { component: Some(1) },
                EvaluatorSpec::Hydropathy,
            ],
            weight_sweep: vec![1.0, 0.0, 0.5],
            calibration_samples: 8,
            ..small(dir.path())
        };
        let res = run_experiment(&cfg, Mode::SweepW).unwrap();
        let rows = emit_tradeoff_data(&res).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.w).collect::<Vec<_>>(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(res.meta.normalizers.len(), 2);
        assert!(dir.path().join("tradeoff.csv").exists());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = small(dir.path());
        assert!(run_cells(
            &ExperimentConfig {
                strategies: vec![],
                ..base.clone()
            },
            Mode::Run
        )
        .is_err());
        assert!(run_cells(
            &ExperimentConfig {
                weight_sweep: vec![1.5],
                ..base.clone()
            },
            Mode::Run
        )
        .is_err());
        assert!(run_cells(
            &ExperimentConfig {
                t_init: 11,
                ..base.clone()
            },
            Mode::Run
        )
        .is_err());
        assert!(run_cells(&base, Mode::SweepW).is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig {
            denoiser: DenoiserSpec::TrainToy {
                dataset_size: 10,
                seed: 1,
                model: ToyModelConfig::default(),
                train: TrainConfig::default(),
            },
            report: vec![EvaluatorSpec::External(ExternalConfig::new(
                "ext",
                "/bin/cat",
                vec![],
            ))],
            sigma_policy: SigmaPolicy::Fixed(0.1),
            workers: Some(2),
            ..Default::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let partial =
            ExperimentConfig::from_toml("strategies = [\"W+H\", \"guideraw_H\"]\nk = 4\n").unwrap();
        assert_eq!(
            partial.strategies,
            vec![Strategy::WeightedHard, Strategy::GuideRawHard]
        );
        assert_eq!(partial.t_init, 50);
    }

    #[test]
    fn failed_designs_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            evaluator: EvaluatorSpec::External(ExternalConfig::new("gone", "/bin/false", vec![])),
            ..small(dir.path())
        };
        let res = run_experiment(&cfg, Mode::Run).unwrap();
        assert_eq!(res.meta.failed_designs, 3);
        assert!(res.rows.iter().all(|r| r.error.is_some()));
    }
}
