//! Forward noising and one-step reverse transitions for the three
//! modalities. Forward operations take a single modality's clean value, so
//! noising one modality cannot observe another.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::denoiser::{Denoiser, DenoiserOutput, LatentCode};
use crate::error::Result;
use crate::schedule::NoiseSchedule;
use crate::so3::{sample_igso3, scale_rot, IgSo3Params, Rotation, Vec3};
use crate::state::{AminoAcid, CdrState, ComplexContext, NUM_TYPES};
use crate::task::sample_categorical;

pub use crate::state::{AminoAcid as AminoAcidType, ChainTag};

/// Keep the type with probability `alpha_bar`, otherwise resample uniformly.
pub fn forward_seq<R: Rng + ?Sized>(
    s0: AminoAcid,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut R,
) -> Result<AminoAcid> {
    sched.check_time(t)?;
    let ab = sched.alpha_bar(t);
    let mut probs = [sched.beta_bar(t) / NUM_TYPES as f64; NUM_TYPES];
    probs[s0.index()] += ab;
    Ok(sample_categorical(&probs, rng))
}

pub fn forward_coord<R: Rng + ?Sized>(
    x0: &Vec3,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut R,
) -> Result<Vec3> {
    sched.check_time(t)?;
    let z = Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    Ok(x0 * sched.alpha_bar(t).sqrt() + z * sched.beta_bar(t).sqrt())
}

pub fn forward_orient<R: Rng + ?Sized>(
    o0: &Rotation,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut R,
) -> Result<Rotation> {
    sched.check_time(t)?;
    let mean = scale_rot(sched.alpha_bar(t).sqrt(), o0);
    sample_igso3(&IgSo3Params::new(mean, sched.beta_bar(t))?, rng)
}

/// Noise a clean loop to time `t`, residue by residue and modality by modality.
pub fn forward_state<R: Rng + ?Sized>(
    a0: &CdrState,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut R,
) -> Result<CdrState> {
    let types = a0
        .types
        .iter()
        .map(|s| forward_seq(*s, sched, t, rng))
        .collect::<Result<_>>()?;
    let coords = a0
        .coords
        .iter()
        .map(|x| forward_coord(x, sched, t, rng))
        .collect::<Result<_>>()?;
    let orients = a0
        .orients
        .iter()
        .map(|o| forward_orient(o, sched, t, rng))
        .collect::<Result<_>>()?;
    Ok(CdrState {
        types,
        coords,
        orients,
        t,
    })
}

/// Sample `A^{t-1}` from decoded posterior parameters: categorical types,
/// Gaussian coordinates with variance `beta_t`, isotropic Gaussian
/// orientations with concentration `beta_t`.
pub fn ddpm_sample<R: Rng + ?Sized>(
    out: &DenoiserOutput,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut R,
) -> Result<CdrState> {
    sched.check_time(t)?;
    let m = out.len();
    out.validate(m)?;
    let beta = sched.beta(t);
    let sd = beta.sqrt();
    let types = out
        .seq_probs
        .iter()
        .map(|p| sample_categorical(p, rng))
        .collect();
    let coords = out
        .coord_means
        .iter()
        .map(|mu| {
            let z = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            mu + z * sd
        })
        .collect();
    let orients = out
        .orient_means
        .iter()
        .map(|mean| sample_igso3(&IgSo3Params::new(*mean, beta)?, rng))
        .collect::<Result<_>>()?;
    Ok(CdrState {
        types,
        coords,
        orients,
        t: t - 1,
    })
}

/// Stochastic reverse step through the denoiser.
pub fn ddpm_step<R: Rng + ?Sized>(
    a_t: &CdrState,
    ctx: &ComplexContext,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<CdrState> {
    sched.check_time(a_t.t)?;
    let out = den.predict(a_t, ctx, a_t.t)?;
    out.validate(a_t.len())?;
    ddpm_sample(&out, sched, a_t.t, rng)
}

/// Zero-noise decode: per-residue most probable type (lowest index on ties),
/// coordinate means and mean orientations, unchanged.
pub fn ddim_from_output(out: &DenoiserOutput, t: usize) -> CdrState {
    let types = out
        .seq_probs
        .iter()
        .map(|row| {
            let mut best = 0;
            for (i, p) in row.iter().enumerate() {
                if *p > row[best] {
                    best = i;
                }
            }
            AminoAcid::ALL[best]
        })
        .collect();
    CdrState {
        types,
        coords: out.coord_means.clone(),
        orients: out.orient_means.clone(),
        t: t - 1,
    }
}

/// Deterministic reverse step from a latent code: `A^{t-1} = G(Z^t)`.
pub fn ddim_step(
    z: &LatentCode,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    t: usize,
) -> Result<CdrState> {
    sched.check_time(t)?;
    let out = den.decode(z, t)?;
    out.validate(z.rows())?;
    Ok(ddim_from_output(&out, t))
}
