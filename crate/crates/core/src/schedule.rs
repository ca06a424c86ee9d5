//! Diffusion time discretization and noise-schedule coefficients.
//!
//! Time is 1-based: `t = 1..=T` are noisy steps and `t = 0` denotes clean
//! data, for which `alpha_bar(0) = 1` and `beta_bar(0) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// Parameters a schedule is built from; this is what config files carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    #[serde(default)]
    pub kind: ScheduleKind,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 100,
            kind: ScheduleKind::Linear,
            beta_min: 1e-4,
            beta_max: 0.05,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.steps, self.kind, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(steps: usize, kind: ScheduleKind, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|i| {
                    if steps == 1 {
                        beta_min
                    } else {
                        beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                    }
                })
                .collect(),
            ScheduleKind::Cosine => {
                // Cosine alpha_bar profile, with betas clipped into [beta_min, beta_max].
                let s = 0.008;
                let f = |t: f64| {
                    ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
                        .cos()
                        .powi(2)
                };
                (1..=steps)
                    .map(|t| (1.0 - f(t as f64) / f((t - 1) as f64)).clamp(beta_min, beta_max))
                    .collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let beta_bar = alpha_bar.iter().map(|a| 1.0 - a).collect();
        Ok(Self {
            params: ScheduleParams {
                steps,
                kind,
                beta_min,
                beta_max,
            },
            beta,
            alpha_bar,
            beta_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn check_time(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Domain(format!(
                "time {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Per-step variance `beta_t`, `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// Cumulative signal fraction; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn beta_bar(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.beta_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta_bars(&self) -> &[f64] {
        &self.beta_bar
    }

    /// Coefficients `(c0, ct)` of the Gaussian posterior mean
    /// `E[x_{t-1} | x_t, x_0] = c0 * x_0 + ct * x_t`.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        let bb = self.beta_bar(t);
        let c0 = self.alpha_bar(t - 1).sqrt() * self.beta(t) / bb;
        let ct = (1.0 - self.beta(t)).sqrt() * self.beta_bar(t - 1) / bb;
        (c0, ct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_step() {
        let s = NoiseSchedule::new(1, ScheduleKind::Linear, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
        assert_eq!(s.beta_bars(), &[0.5]);
    }

    #[test]
    fn two_constant_steps() {
        let s = NoiseSchedule::new(2, ScheduleKind::Linear, 0.1, 0.1).unwrap();
        assert_abs_diff_eq!(s.alpha_bar(1), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(s.alpha_bar(2), 0.81, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(NoiseSchedule::new(0, ScheduleKind::Linear, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::new(10, ScheduleKind::Linear, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::new(10, ScheduleKind::Linear, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::new(10, ScheduleKind::Cosine, 0.1, 1.0).is_err());
    }

    #[test]
    fn default_is_linear_100() {
        let s = ScheduleParams::default().build().unwrap();
        assert_eq!(s.steps(), 100);
        assert_abs_diff_eq!(s.beta(1), 1e-4);
        assert_abs_diff_eq!(s.beta(100), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn posterior_coefficients_at_first_step() {
        let s = ScheduleParams::default().build().unwrap();
        let (c0, ct) = s.posterior_coefficients(1);
        assert_abs_diff_eq!(c0, 1.0, epsilon = 1e-12);
        assert_eq!(ct, 0.0);
    }

    #[test]
    fn time_bounds() {
        let s = ScheduleParams::default().build().unwrap();
        assert!(s.check_time(0).is_err());
        assert!(s.check_time(101).is_err());
        assert!(s.check_time(100).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn invariants_hold(steps in 1usize..300, lo in 1e-5f64..0.3, span in 0.0f64..0.6, cosine: bool) {
            let hi = (lo + span).min(0.99);
            let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
            let s = NoiseSchedule::new(steps, kind, lo, hi).unwrap();
            let mut acc = 1.0;
            for t in 1..=steps {
                acc *= 1.0 - s.beta(t);
                proptest::prop_assert!((s.alpha_bar(t) - acc).abs() < 1e-12);
                proptest::prop_assert!((s.beta_bar(t) - (1.0 - s.alpha_bar(t))).abs() < 1e-15);
                proptest::prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }
}
