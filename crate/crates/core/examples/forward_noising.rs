//! Noise a clean loop forward and watch each modality decay toward the prior.
//!
//! cargo run --release --example forward_noising

use cdr_codesign::diffusion::forward_state;
use cdr_codesign::so3::geodesic_distance;
use cdr_codesign::task::SyntheticTask;
use cdr_codesign::{Result, ScheduleParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let sched = ScheduleParams::default().build()?;
    let clean = SyntheticTask::default().target()?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    println!(
        "{:>4} {:>9} {:>9}  {:<8} {:>9} {:>9}",
        "t", "alpha_bar", "beta_bar", "seq", "coord rms", "rot dist"
    );
    for t in [1, 5, 10, 25, 50, 75, 100] {
        let noisy = forward_state(&clean, &sched, t, &mut rng)?;
        let m = clean.len() as f64;
        let coord = (0..clean.len())
            .map(|i| (noisy.coords[i] - clean.coords[i]).norm_squared())
            .sum::<f64>()
            / m;
        let rot = (0..clean.len())
            .map(|i| geodesic_distance(&noisy.orients[i], &clean.orients[i]))
            .sum::<f64>()
            / m;
        println!(
            "{t:>4} {:>9.4} {:>9.4}  {:<8} {:>9.4} {:>9.4}",
            sched.alpha_bar(t),
            sched.beta_bar(t),
            noisy.sequence(),
            coord.sqrt(),
            rot
        );
    }
    Ok(())
}
