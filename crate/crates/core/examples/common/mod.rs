//! Shared setup for the examples: a toy denoiser, trained once and cached.

use std::path::Path;

use cdr_codesign::denoiser::{ToyDenoiser, ToyModelConfig, TrainConfig};
use cdr_codesign::harness::train_toy_on_task;
use cdr_codesign::task::SyntheticTask;
use cdr_codesign::{NoiseSchedule, Result};

pub const CACHE: &str = "target/example-toy.json";

/// Load the cached toy model for `sched`, training and caching it if needed.
pub fn toy_denoiser(task: &SyntheticTask, sched: &NoiseSchedule) -> Result<ToyDenoiser> {
    if Path::new(CACHE).exists() {
        if let Ok(toy) = ToyDenoiser::load(CACHE) {
            if toy.config().schedule == *sched.params() {
                return Ok(toy);
            }
        }
    }
    eprintln!("training toy denoiser (cached at {CACHE})...");
    let toy = train_toy_on_task(
        task,
        sched,
        2000,
        0,
        ToyModelConfig::default(),
        TrainConfig::default(),
    )?;
    if let Some(dir) = Path::new(CACHE).parent() {
        std::fs::create_dir_all(dir)?;
    }
    toy.save(CACHE)?;
    Ok(toy)
}
