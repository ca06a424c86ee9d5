//! Reward against evaluator queries for hard and soft selection, through the
//! harness (the data behind a query-efficiency plot).
//!
//! cargo run --release --example query_sweep [output_dir]

mod common;

use cdr_codesign::guidance::Strategy;
use cdr_codesign::harness::{
    emit_query_curve, run_experiment, DenoiserSpec, ExperimentConfig, Mode,
};
use cdr_codesign::task::SyntheticTask;
use cdr_codesign::{Result, ScheduleParams};

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/query-sweep".into());
    let sched = ScheduleParams::default().build()?;
    common::toy_denoiser(&SyntheticTask::default(), &sched)?;

    let cfg = ExperimentConfig {
        denoiser: DenoiserSpec::Toy {
            checkpoint: common::CACHE.into(),
        },
        strategies: vec![Strategy::Hard, Strategy::Soft],
        n_designs: 50,
        output_dir: out.clone().into(),
        ..Default::default()
    };
    let results = run_experiment(&cfg, Mode::SweepK)?;
    println!(
        "{:<4} {:>3} {:>8} {:>10} {:>8}",
        "", "K", "queries", "reward", "std"
    );
    for row in emit_query_curve(&results)? {
        println!(
            "{:<4} {:>3} {:>8} {:>10.3} {:>8.3}",
            row.strategy.to_string(),
            row.k,
            row.queries_per_design,
            row.mean_reward,
            row.std_reward
        );
    }
    println!("files in {out}");
    Ok(())
}
