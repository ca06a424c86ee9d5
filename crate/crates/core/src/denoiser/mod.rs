//! The shared-encoder / three-decoder denoiser contract.
//!
//! Every reverse step goes through [`Denoiser::encode`] to a per-residue
//! latent code and then [`Denoiser::decode`] to the three posterior
//! parameter sets. Guidance perturbs the latent between those two calls.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::so3::{Rotation, Vec3};
use crate::state::{CdrState, ComplexContext, NUM_TYPES};

pub mod oracle;
pub mod toy;

pub use oracle::MixtureOracle;
pub use toy::{ToyDenoiser, ToyModelConfig, TrainConfig, TrainReport};

/// Per-residue shared embedding, `m x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub values: DMatrix<f64>,
    pub t: usize,
}

impl LatentCode {
    pub fn new(values: DMatrix<f64>, t: usize) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("latent code has non-finite entries".into()));
        }
        Ok(Self { values, t })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// `self + scale * delta`.
    pub fn offset(&self, delta: &DMatrix<f64>, scale: f64) -> Result<LatentCode> {
        if delta.shape() != self.values.shape() {
            return Err(Error::Shape(format!(
                "perturbation shape {:?} vs latent {:?}",
                delta.shape(),
                self.values.shape()
            )));
        }
        Ok(LatentCode {
            values: &self.values + delta * scale,
            t: self.t,
        })
    }
}

/// Posterior parameters of one reverse step: type probabilities, coordinate
/// means and mean orientations, one row per residue.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub seq_probs: Vec<[f64; NUM_TYPES]>,
    pub coord_means: Vec<Vec3>,
    pub orient_means: Vec<Rotation>,
}

impl DenoiserOutput {
    pub fn len(&self) -> usize {
        self.seq_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq_probs.is_empty()
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.seq_probs.len() != m || self.coord_means.len() != m || self.orient_means.len() != m
        {
            return Err(Error::Shape(format!(
                "denoiser output rows ({}, {}, {}) do not match loop length {m}",
                self.seq_probs.len(),
                self.coord_means.len(),
                self.orient_means.len()
            )));
        }
        for (i, row) in self.seq_probs.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "type probabilities of residue {i} are not a distribution"
                )));
            }
        }
        if self
            .coord_means
            .iter()
            .any(|c| !c.iter().all(|x| x.is_finite()))
        {
            return Err(Error::Domain("non-finite coordinate mean".into()));
        }
        if self
            .orient_means
            .iter()
            .any(|o| !o.is_valid(crate::so3::ROTATION_TOL))
        {
            return Err(Error::Domain("orientation mean is not a rotation".into()));
        }
        Ok(())
    }
}

/// Shared encoder `E` and the modality decoders `D1, D2, D3`.
pub trait Denoiser: Send + Sync {
    fn latent_dim(&self) -> usize;

    fn encode(&self, state: &CdrState, ctx: &ComplexContext, t: usize) -> Result<LatentCode>;

    fn decode(&self, z: &LatentCode, t: usize) -> Result<DenoiserOutput>;

    /// `decode(encode(..))`, the only route to posterior parameters.
    fn predict(&self, state: &CdrState, ctx: &ComplexContext, t: usize) -> Result<DenoiserOutput> {
        let z = self.encode(state, ctx, t)?;
        self.decode(&z, t)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }

    fn encode(&self, state: &CdrState, ctx: &ComplexContext, t: usize) -> Result<LatentCode> {
        (**self).encode(state, ctx, t)
    }

    fn decode(&self, z: &LatentCode, t: usize) -> Result<DenoiserOutput> {
        (**self).decode(z, t)
    }
}

/// Normalize a nonnegative weight vector in place; all-zero (or invalid)
/// input becomes uniform.
pub(crate) fn normalize_weights(w: &mut [f64]) {
    for x in w.iter_mut() {
        if !(*x > 0.0) || !x.is_finite() {
            *x = 0.0;
        }
    }
    let s: f64 = w.iter().sum();
    if s > 0.0 && s.is_finite() {
        w.iter_mut().for_each(|x| *x /= s);
    } else {
        let n = w.len() as f64;
        w.iter_mut().for_each(|x| *x = 1.0 / n);
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}
