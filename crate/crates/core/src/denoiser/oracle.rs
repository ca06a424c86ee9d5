//! Closed-form denoiser for the synthetic mixture task.
//!
//! The latent row of residue `i` is the concatenation
//! `[log p(c | A^t) for each component | one-hot s_i^t | x_i^t | log O_i^t]`,
//! so `d = C + 20 + 3 + 3`. Component log-responsibilities are global and
//! repeated on every row; decoding averages them over rows, which keeps a
//! perturbed latent meaningful.

use nalgebra::{DMatrix, Matrix3};

use super::{normalize_weights, softmax_in_place, Denoiser, DenoiserOutput, LatentCode};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::so3::{geodesic_distance, igso3_log_kernel, scale_rot, Rotation, Vec3};
use crate::state::{CdrState, ComplexContext, NUM_TYPES};
use crate::task::{ComponentParams, SyntheticTask};

#[derive(Debug, Clone)]
pub struct MixtureOracle {
    task: SyntheticTask,
    params: Vec<ComponentParams>,
    schedule: NoiseSchedule,
}

impl MixtureOracle {
    pub fn new(task: SyntheticTask, schedule: NoiseSchedule) -> Result<Self> {
        let params = task.component_params()?;
        Ok(Self {
            task,
            params,
            schedule,
        })
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn components(&self) -> &[ComponentParams] {
        &self.params
    }

    fn n_comp(&self) -> usize {
        self.params.len()
    }

    /// Normalized component log-posteriors `log p(c | A^t)`.
    pub fn log_responsibilities(&self, state: &CdrState, t: usize) -> Result<Vec<f64>> {
        self.schedule.check_time(t)?;
        let m = self.task.loop_len();
        if state.len() != m {
            return Err(Error::Shape(format!(
                "oracle expects {m} residues, got {}",
                state.len()
            )));
        }
        let ab = self.schedule.alpha_bar(t);
        let bb = self.schedule.beta_bar(t);
        let sa = ab.sqrt();
        let var = ab * self.task.coord_std.powi(2) + bb;
        let mut logits: Vec<f64> = self
            .params
            .iter()
            .map(|p| {
                let mut l = p.log_weight;
                for i in 0..m {
                    l +=
                        (ab * p.type_probs[i][state.types[i].index()] + bb / NUM_TYPES as f64).ln();
                    let d = state.coords[i] - p.coord_means[i] * sa;
                    l += -d.norm_squared() / (2.0 * var) - 1.5 * var.ln();
                    let mean = scale_rot(sa, &p.orients[i]);
                    l += igso3_log_kernel(geodesic_distance(&mean, &state.orients[i]), bb);
                }
                l
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter_mut().for_each(|l| *l -= lse);
        Ok(logits)
    }

    /// One-step categorical posterior `q(s^{t-1} = b | s^t = a, c)` for all `b`.
    fn type_posterior(&self, probs: &[f64; NUM_TYPES], a: usize, t: usize) -> [f64; NUM_TYPES] {
        let s = &self.schedule;
        let beta = s.beta(t);
        let (ab_prev, bb_prev) = (s.alpha_bar(t - 1), s.beta_bar(t - 1));
        let k = NUM_TYPES as f64;
        let mut out = [0.0; NUM_TYPES];
        for (b, o) in out.iter_mut().enumerate() {
            let step = if a == b { 1.0 - beta } else { 0.0 } + beta / k;
            *o = step * (ab_prev * probs[b] + bb_prev / k);
        }
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|o| *o /= z);
        out
    }
}

impl Denoiser for MixtureOracle {
    fn latent_dim(&self) -> usize {
        self.n_comp() + NUM_TYPES + 6
    }

    fn encode(&self, state: &CdrState, ctx: &ComplexContext, t: usize) -> Result<LatentCode> {
        ctx.check_state(state)?;
        let logr = self.log_responsibilities(state, t)?;
        let c = self.n_comp();
        let m = state.len();
        let mut z = DMatrix::zeros(m, self.latent_dim());
        for i in 0..m {
            for (k, l) in logr.iter().enumerate() {
                z[(i, k)] = *l;
            }
            z[(i, c + state.types[i].index())] = 1.0;
            for a in 0..3 {
                z[(i, c + NUM_TYPES + a)] = state.coords[i][a];
            }
            let v = state.orients[i].log();
            for a in 0..3 {
                z[(i, c + NUM_TYPES + 3 + a)] = v[a];
            }
        }
        LatentCode::new(z, t)
    }

    fn decode(&self, z: &LatentCode, t: usize) -> Result<DenoiserOutput> {
        self.schedule.check_time(t)?;
        let m = self.task.loop_len();
        let c = self.n_comp();
        if z.rows() != m || z.dim() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "oracle latent must be {m}x{}, got {}x{}",
                self.latent_dim(),
                z.rows(),
                z.dim()
            )));
        }
        let v = &z.values;
        let mut resp: Vec<f64> = (0..c).map(|k| v.column(k).mean()).collect();
        softmax_in_place(&mut resp);

        let s = &self.schedule;
        let ab = s.alpha_bar(t);
        let bb = s.beta_bar(t);
        let sa = ab.sqrt();
        let tau2 = self.task.coord_std.powi(2);
        let gain = sa * tau2 / (ab * tau2 + bb);
        let (c0, ct) = s.posterior_coefficients(t);

        let mut seq_probs = Vec::with_capacity(m);
        let mut coord_means = Vec::with_capacity(m);
        let mut orient_means = Vec::with_capacity(m);
        for i in 0..m {
            let mut w: Vec<f64> = (0..NUM_TYPES).map(|a| v[(i, c + a)]).collect();
            normalize_weights(&mut w);
            let x = Vec3::new(
                v[(i, c + NUM_TYPES)],
                v[(i, c + NUM_TYPES + 1)],
                v[(i, c + NUM_TYPES + 2)],
            );
            let rv = Vec3::new(
                v[(i, c + NUM_TYPES + 3)],
                v[(i, c + NUM_TYPES + 4)],
                v[(i, c + NUM_TYPES + 5)],
            );
            let o = Rotation::exp(&rv);
            let o_log = o.log();

            let mut probs = [0.0; NUM_TYPES];
            let mut mean = Vec3::zeros();
            let mut rot_acc = Matrix3::zeros();
            for (p, r) in self.params.iter().zip(&resp) {
                for (a, wa) in w.iter().enumerate() {
                    if *wa == 0.0 {
                        continue;
                    }
                    let post = self.type_posterior(&p.type_probs[i], a, t);
                    for (pb, qb) in probs.iter_mut().zip(post) {
                        *pb += r * wa * qb;
                    }
                }
                let mu = p.coord_means[i];
                let x0 = mu + (x - mu * sa) * gain;
                mean += (x0 * c0 + x * ct) * *r;
                let rot = Rotation::exp(&(p.orients[i].log() * c0 + o_log * ct));
                rot_acc += rot.matrix() * *r;
            }
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);
            seq_probs.push(probs);
            coord_means.push(mean);
            orient_means.push(Rotation::nearest(&rot_acc));
        }
        Ok(DenoiserOutput {
            seq_probs,
            coord_means,
            orient_means,
        })
    }
}
