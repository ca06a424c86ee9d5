//! Latent-space selection against best-of-K in raw design space, at equal
//! query budgets.
//!
//! cargo run --release --example guideraw_baseline

mod common;

use cdr_codesign::evaluators::QuadraticReward;
use cdr_codesign::guidance::{GuidanceConfig, Strategy};
use cdr_codesign::harness::mean_std;
use cdr_codesign::pipeline::{sample_batch, RunSpec};
use cdr_codesign::task::SyntheticTask;
use cdr_codesign::{Result, ScheduleParams};

fn main() -> Result<()> {
    let task = SyntheticTask::default();
    let sched = ScheduleParams::default().build()?;
    let toy = common::toy_denoiser(&task, &sched)?;
    let ctx = task.context()?;
    let target = task.target()?;
    let reward = QuadraticReward::new("quad", target.clone(), task.lambda, task.mu);

    println!(
        "{:>3} {:>8} {:>16} {:>16}",
        "K", "queries", "latent H", "guideraw_H"
    );
    for k in [1, 2, 4, 8, 16, 32] {
        let mut cells = Vec::new();
        for strategy in [Strategy::Hard, Strategy::GuideRawHard] {
            let spec = RunSpec {
                schedule: &sched,
                guidance: GuidanceConfig {
                    strategy,
                    k,
                    t_init: 50,
                    seed: 5,
                    ..Default::default()
                },
                evaluator: &reward,
                report_evaluators: vec![],
                denoiser: &toy,
                denoiser_id: "toy".into(),
                context: &ctx,
                reference: Some(&target),
                n_designs: 50,
            };
            let rewards: Vec<f64> = sample_batch(&spec)
                .into_iter()
                .map(|r| r.map(|(_, rep)| rep.rewards["quad"]))
                .collect::<Result<_>>()?;
            let (mean, std) = mean_std(&rewards);
            cells.push(format!(
                "{mean:>8.3} ± {:<5.3}",
                std / (rewards.len() as f64).sqrt()
            ));
        }
        println!("{k:>3} {:>8} {:>16} {:>16}", k * 50, cells[0], cells[1]);
    }
    Ok(())
}
