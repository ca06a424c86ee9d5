//! Weight sweep over two conflicting rewards, written as harness result files.
//!
//! The first component pulls toward the hydrophobic mixture mode, the second
//! is hydropathy, which prefers hydrophilic residues.
//!
//! cargo run --release --example tradeoff_sweep [output_dir]

mod common;

use cdr_codesign::guidance::Strategy;
use cdr_codesign::harness::{
    emit_tradeoff_data, run_experiment, DenoiserSpec, EvaluatorSpec, ExperimentConfig, Mode,
};
use cdr_codesign::task::SyntheticTask;
use cdr_codesign::{Result, ScheduleParams};

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/tradeoff".into());
    let sched = ScheduleParams::default().build()?;
    common::toy_denoiser(&SyntheticTask::default(), &sched)?;

    let cfg = ExperimentConfig {
        denoiser: DenoiserSpec::Toy {
            checkpoint: common::CACHE.into(),
        },
        objective: vec![
            EvaluatorSpec::Quadratic { component: Some(1) },
            EvaluatorSpec::Hydropathy,
        ],
        strategies: vec![Strategy::Hard],
        n_designs: 50,
        output_dir: out.clone().into(),
        ..Default::default()
    };
    let results = run_experiment(&cfg, Mode::SweepW)?;
    for (name, n) in results
        .meta
        .components
        .iter()
        .zip(&results.meta.normalizers)
    {
        println!(
            "normalizer {name}: shift {:.3} scale {:.3}",
            n.shift, n.scale
        );
    }
    println!("{:>5} {:>12} {:>12}", "w", "quad1", "hydro");
    for row in emit_tradeoff_data(&results)? {
        println!("{:>5} {:>12.3} {:>12.3}", row.w, row.mean1, row.mean2);
    }
    println!("files in {out}");
    Ok(())
}
