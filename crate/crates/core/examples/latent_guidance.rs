//! Guided sampling in the shared latent space with every selection rule,
//! plus a step-by-step trace of one latent H chain.
//!
//! cargo run --release --example latent_guidance

mod common;

use cdr_codesign::evaluators::QuadraticReward;
use cdr_codesign::guidance::{GuidanceConfig, StepRecord, Strategy};
use cdr_codesign::harness::mean_std;
use cdr_codesign::pipeline::{design_rng, run_chain, sample_batch, RunSpec};
use cdr_codesign::task::SyntheticTask;
use cdr_codesign::{Result, ScheduleParams};

fn main() -> Result<()> {
    let task = SyntheticTask::default();
    let sched = ScheduleParams::default().build()?;
    let toy = common::toy_denoiser(&task, &sched)?;
    let ctx = task.context()?;
    let target = task.target()?;
    let reward = QuadraticReward::new("quad", target.clone(), task.lambda, task.mu);

    let spec_for = |strategy| RunSpec {
        schedule: &sched,
        guidance: GuidanceConfig {
            strategy,
            k: 20,
            t_init: 50,
            seed: 11,
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

    let mut trace: Vec<StepRecord> = Vec::new();
    let (design, report) = run_chain(
        &spec_for(Strategy::Hard),
        &mut design_rng(11, 0),
        Some(&mut trace),
    )?;
    println!("one latent H chain, every 10th guided step:");
    for rec in trace
        .iter()
        .filter(|r| r.selected_index.is_some() && r.t % 10 == 0)
    {
        let best = rec
            .candidate_rewards
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "  t={:>3} picked #{:<2} reward {:>8.3} (best of {} = {best:.3})",
            rec.t,
            rec.selected_index.unwrap(),
            rec.selected_reward.unwrap(),
            rec.candidate_rewards.len()
        );
    }
    println!(
        "  final {} reward {:.3}, {} queries\n",
        design.sequence(),
        report.rewards["quad"],
        report.queries_used
    );

    println!("{:<6} {:>10} {:>8} {:>8}", "", "reward", "AAR", "queries");
    for strategy in [
        Strategy::None,
        Strategy::Hard,
        Strategy::Soft,
        Strategy::WeightedHard,
        Strategy::WeightedSoft,
    ] {
        let runs: Vec<_> = sample_batch(&spec_for(strategy))
            .into_iter()
            .collect::<Result<_>>()?;
        let rewards: Vec<f64> = runs.iter().map(|(_, r)| r.rewards["quad"]).collect();
        let aar: Vec<f64> = runs.iter().filter_map(|(_, r)| r.aar).collect();
        println!(
            "{:<6} {:>10.3} {:>8.3} {:>8}",
            strategy.to_string(),
            mean_std(&rewards).0,
            mean_std(&aar).0,
            runs[0].1.queries_used
        );
    }
    Ok(())
}
