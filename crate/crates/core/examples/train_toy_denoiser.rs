//! Fit the small three-head denoiser to the mixture oracle and save it.
//!
//! cargo run --release --example train_toy_denoiser [out.json]

use cdr_codesign::denoiser::toy::train_toy_denoiser;
use cdr_codesign::denoiser::{MixtureOracle, ToyDenoiser, ToyModelConfig, TrainConfig};
use cdr_codesign::task::SyntheticTask;
use cdr_codesign::{CdrState, Result, ScheduleParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "toy.json".into());
    let task = SyntheticTask::default();
    let sched = ScheduleParams::default().build()?;
    let oracle = MixtureOracle::new(task.clone(), sched.clone())?;
    let ctx = task.context()?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<CdrState> = (0..2000)
        .map(|_| task.sample_clean(oracle.components(), &mut rng).0)
        .collect();
    let model = ToyModelConfig {
        schedule: *sched.params(),
        ..Default::default()
    };
    let started = std::time::Instant::now();
    let (toy, report) = train_toy_denoiser(
        &data,
        &ctx,
        &oracle,
        &sched,
        model,
        TrainConfig::default(),
        &mut rng,
    )?;

    println!("trained in {:.1?}", started.elapsed());
    println!(
        "validation loss {:.4} -> {:.4}",
        report.initial_validation.total(),
        report.final_validation.total()
    );
    for (epoch, loss) in report.epoch_validation.iter().enumerate().step_by(5) {
        println!("  epoch {epoch:>3}: {loss:.4}");
    }
    let f = report.final_validation;
    println!(
        "final parts: types {:.4}, coords {:.4}, rotations {:.4}",
        f.seq, f.coord, f.rot
    );

    toy.save(&out)?;
    let back = ToyDenoiser::load(&out)?;
    assert_eq!(back, toy);
    println!("saved {out}");
    Ok(())
}
