//! The synthetic co-design task: a mixture over joint (type pattern,
//! coordinate cluster, orientation cluster) loops with a fixed context.
//!
//! Given the component, residues and modalities are independent: types are
//! categorical with mass `pattern_prob` on the component's pattern letter and
//! the rest spread evenly; coordinates are isotropic Gaussians around the
//! component's cluster means; orientations are the component's fixed
//! rotations. The parameters are public so the posterior of every reverse
//! step is available in closed form (see [`crate::denoiser::MixtureOracle`]).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{Rotation, Vec3};
use crate::state::{AminoAcid, CdrState, ChainTag, ComplexContext, NUM_TYPES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub pattern: String,
    pub coord_means: Vec<[f64; 3]>,
    /// Rotation vectors (axis times angle) of the per-residue orientations.
    pub orient_rotvecs: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub components: Vec<MixtureComponent>,
    /// Probability of the pattern letter at each position.
    pub pattern_prob: f64,
    /// Per-axis standard deviation of clean coordinates around a cluster mean.
    pub coord_std: f64,
    /// Type-mismatch weight of the quadratic reward.
    pub lambda: f64,
    /// Orientation weight of the quadratic reward.
    pub mu: f64,
    /// Component whose mode the coupled reward targets.
    pub target_component: usize,
    pub context_sequence: String,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        let m = 6;
        let loop_shape = |sign: f64, lift: f64| -> Vec<[f64; 3]> {
            (0..m)
                .map(|i| {
                    let u = (i as f64 + 0.5) / m as f64;
                    [
                        0.6 * (i as f64 - 2.5),
                        sign * 0.9 * (std::f64::consts::PI * u).sin(),
                        lift,
                    ]
                })
                .collect()
        };
        Self {
            components: vec![
                MixtureComponent {
                    weight: 0.5,
                    pattern: "DKNERS".into(),
                    coord_means: loop_shape(1.0, 0.2),
                    orient_rotvecs: (0..m).map(|i| [0.0, 0.0, 0.4 + 0.15 * i as f64]).collect(),
                },
                MixtureComponent {
                    weight: 0.5,
                    pattern: "AYVLFT".into(),
                    coord_means: loop_shape(-1.0, -0.2),
                    orient_rotvecs: (0..m)
                        .map(|i| [-(0.4 + 0.15 * i as f64), 0.0, 0.0])
                        .collect(),
                },
            ],
            pattern_prob: 0.6,
            coord_std: 0.15,
            lambda: 1.0,
            mu: 1.0,
            target_component: 1,
            context_sequence: "QVQLVESGGGLVQPGGSLRLSCAAS".into(),
        }
    }
}

/// Per-component parameters in evaluated form.
#[derive(Debug, Clone)]
pub struct ComponentParams {
    pub log_weight: f64,
    pub type_probs: Vec<[f64; NUM_TYPES]>,
    pub pattern: Vec<AminoAcid>,
    pub coord_means: Vec<Vec3>,
    pub orients: Vec<Rotation>,
}

impl SyntheticTask {
    pub fn loop_len(&self) -> usize {
        self.components.first().map_or(0, |c| c.pattern.len())
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.loop_len();
        if self.components.is_empty() || m == 0 {
            return Err(Error::Config(
                "task needs at least one component with a nonempty pattern".into(),
            ));
        }
        for (k, c) in self.components.iter().enumerate() {
            if c.pattern.len() != m || c.coord_means.len() != m || c.orient_rotvecs.len() != m {
                return Err(Error::Config(format!(
                    "component {k} does not have {m} residues"
                )));
            }
            AminoAcid::parse_sequence(&c.pattern)?;
            if !(c.weight > 0.0) {
                return Err(Error::Config(format!(
                    "component {k} weight must be positive"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.pattern_prob) || !(self.coord_std >= 0.0) {
            return Err(Error::Config(
                "pattern_prob must be in [0,1] and coord_std >= 0".into(),
            ));
        }
        if self.target_component >= self.components.len() {
            return Err(Error::Config("target_component out of range".into()));
        }
        AminoAcid::parse_sequence(&self.context_sequence)?;
        if self.context_sequence.len() <= m {
            return Err(Error::Config(
                "context sequence must be longer than the loop".into(),
            ));
        }
        Ok(())
    }

    pub fn component_params(&self) -> Result<Vec<ComponentParams>> {
        self.validate()?;
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let off = (1.0 - self.pattern_prob) / (NUM_TYPES - 1) as f64;
        self.components
            .iter()
            .map(|c| {
                let pattern = AminoAcid::parse_sequence(&c.pattern)?;
                let type_probs = pattern
                    .iter()
                    .map(|aa| {
                        let mut row = [off; NUM_TYPES];
                        row[aa.index()] = self.pattern_prob;
                        row
                    })
                    .collect();
                Ok(ComponentParams {
                    log_weight: (c.weight / total).ln(),
                    type_probs,
                    pattern,
                    coord_means: c.coord_means.iter().map(|v| Vec3::from(*v)).collect(),
                    orients: c
                        .orient_rotvecs
                        .iter()
                        .map(|v| Rotation::exp(&Vec3::from(*v)))
                        .collect(),
                })
            })
            .collect()
    }

    /// The most likely clean loop of component `k`.
    pub fn mode(&self, k: usize) -> Result<CdrState> {
        let p = self
            .component_params()?
            .into_iter()
            .nth(k)
            .ok_or_else(|| Error::Config(format!("no component {k}")))?;
        CdrState::new(p.pattern, p.coord_means, p.orients, 0)
    }

    /// Target of the coupled reward.
    pub fn target(&self) -> Result<CdrState> {
        self.mode(self.target_component)
    }

    /// Exact per-position type marginal of clean data.
    pub fn type_marginals(&self) -> Result<Vec<[f64; NUM_TYPES]>> {
        let params = self.component_params()?;
        let mut out = vec![[0.0; NUM_TYPES]; self.loop_len()];
        for p in &params {
            let w = p.log_weight.exp();
            for (row, probs) in out.iter_mut().zip(&p.type_probs) {
                for (o, q) in row.iter_mut().zip(probs) {
                    *o += w * q;
                }
            }
        }
        Ok(out)
    }

    /// Draw a clean loop; returns it with its component index.
    pub fn sample_clean<R: Rng + ?Sized>(
        &self,
        params: &[ComponentParams],
        rng: &mut R,
    ) -> (CdrState, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = params.len() - 1;
        for (i, p) in params.iter().enumerate() {
            acc += p.log_weight.exp();
            if u < acc {
                k = i;
                break;
            }
        }
        let p = &params[k];
        let types = p
            .type_probs
            .iter()
            .map(|row| sample_categorical(row, rng))
            .collect();
        let coords = p
            .coord_means
            .iter()
            .map(|mu| {
                let z = Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                mu + z * self.coord_std
            })
            .collect();
        let state = CdrState {
            types,
            coords,
            orients: p.orients.clone(),
            t: 0,
        };
        (state, k)
    }

    /// Fixed framework context with the loop inserted after the first third.
    pub fn context(&self) -> Result<ComplexContext> {
        self.validate()?;
        let types = AminoAcid::parse_sequence(&self.context_sequence)?;
        let n = types.len();
        let antigen = n / 3;
        let coords = (0..n)
            .map(|j| {
                let a = j as f64 * 0.45;
                if j < antigen {
                    Vec3::new(2.0 * a.cos(), 2.0 + 0.3 * a.sin(), 1.5)
                } else {
                    Vec3::new(0.5 * (j as f64 - antigen as f64) - 4.0, -2.5, 0.4 * a.sin())
                }
            })
            .collect();
        let orients = (0..n)
            .map(|j| Rotation::exp(&Vec3::new(0.0, 0.1 * j as f64, 0.0)))
            .collect();
        let chain_tags = (0..n)
            .map(|j| {
                if j < antigen {
                    ChainTag::Antigen
                } else {
                    ChainTag::Heavy
                }
            })
            .collect();
        ComplexContext::new(
            types,
            coords,
            orients,
            chain_tags,
            (antigen + 2, self.loop_len()),
        )
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64; NUM_TYPES], rng: &mut R) -> AminoAcid {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return AminoAcid::ALL[i];
        }
    }
    // rounding left u above the final partial sum: take the last positive entry
    let last = probs
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(NUM_TYPES - 1);
    AminoAcid::ALL[last]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_task_is_valid() {
        let task = SyntheticTask::default();
        task.validate().unwrap();
        assert_eq!(task.loop_len(), 6);
        let ctx = task.context().unwrap();
        assert_eq!(ctx.cdr_len(), 6);
        for row in task.type_marginals().unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clean_samples_follow_components() {
        let task = SyntheticTask::default();
        let params = task.component_params().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 2];
        for _ in 0..2000 {
            let (s, k) = task.sample_clean(&params, &mut rng);
            s.validate().unwrap();
            counts[k] += 1;
            assert_eq!(s.orients, params[k].orients);
        }
        assert!(counts[0] > 900 && counts[1] > 900);
    }

    #[test]
    fn rejects_ragged_components() {
        let mut task = SyntheticTask::default();
        task.components[1].pattern = "AYV".into();
        assert!(task.validate().is_err());
    }
}
