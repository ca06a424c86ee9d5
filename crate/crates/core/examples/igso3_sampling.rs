//! Draw rotations from the isotropic Gaussian on SO(3) and compare the angle
//! histogram with the series density.
//!
//! cargo run --release --example igso3_sampling [epsilon]

use cdr_codesign::so3::{
    default_series_terms, igso3_density, sample_igso3, IgSo3Params, Rotation, Vec3,
};
use cdr_codesign::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let eps: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("epsilon"))
        .unwrap_or(0.5);
    let mean = Rotation::exp(&Vec3::new(0.3, -0.2, 0.9));
    let params = IgSo3Params::new(mean, eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let n = 50_000;
    let bins = 16;
    let width = std::f64::consts::PI / bins as f64;
    let mut hist = vec![0usize; bins];
    let mut worst_orth = 0.0f64;
    for _ in 0..n {
        let r = sample_igso3(&params, &mut rng)?;
        let m = r.matrix();
        worst_orth = worst_orth.max(
            (m.transpose() * m - nalgebra::Matrix3::identity())
                .abs()
                .max(),
        );
        let omega = mean.inverse().compose(&r).angle();
        hist[((omega / width) as usize).min(bins - 1)] += 1;
    }

    let terms = default_series_terms(eps);
    println!("epsilon = {eps}, {n} draws, max |R^T R - I| = {worst_orth:.2e}");
    println!("{:>7} {:>9} {:>9}", "omega", "sampled", "density");
    for (b, count) in hist.iter().enumerate() {
        let omega = (b as f64 + 0.5) * width;
        let expected = igso3_density(omega, eps, terms)? * width;
        println!(
            "{omega:>7.3} {:>9.4} {expected:>9.4}",
            *count as f64 / n as f64
        );
    }
    Ok(())
}
