//! Black-box reward functions. Every evaluator reports a reward where higher
//! is better; lower-better raw properties are negated here and nowhere else.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError, Result};
use crate::so3::geodesic_distance;
use crate::state::{AminoAcid, CdrState};

pub mod external;

pub use external::{EchoMode, ExternalConfig, ExternalEvaluator};

pub trait Evaluator: Send + Sync {
    fn name(&self) -> &str;

    /// Reward of `a`. Each call, successful or not, counts as one query.
    fn evaluate(&self, a: &CdrState) -> Result<f64, EvalError>;

    /// Calls made so far.
    fn queries(&self) -> u64;
}

impl<E: Evaluator + ?Sized> Evaluator for Arc<E> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn evaluate(&self, a: &CdrState) -> Result<f64, EvalError> {
        (**self).evaluate(a)
    }
    fn queries(&self) -> u64 {
        (**self).queries()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn evaluate(&self, a: &CdrState) -> Result<f64, EvalError> {
        (**self).evaluate(a)
    }
    fn queries(&self) -> u64 {
        (**self).queries()
    }
}

/// Monotone call counter shared by the built-in evaluators.
#[derive(Debug, Default)]
pub struct QueryCounter(AtomicU64);

impl QueryCounter {
    pub fn tick(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Wraps another evaluator with a private counter, so one design's queries
/// can be counted while the inner evaluator is shared across designs.
pub struct Counted<E> {
    inner: E,
    counter: QueryCounter,
}

impl<E: Evaluator> Counted<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            counter: QueryCounter::default(),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Evaluator> Evaluator for Counted<E> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn evaluate(&self, a: &CdrState) -> Result<f64, EvalError> {
        self.counter.tick();
        self.inner.evaluate(a)
    }
    fn queries(&self) -> u64 {
        self.counter.get()
    }
}

/// Evaluator from a closure; handy for tests and ad-hoc objectives.
pub struct FnEvaluator<F> {
    name: String,
    f: F,
    counter: QueryCounter,
}

impl<F> FnEvaluator<F>
where
    F: Fn(&CdrState) -> Result<f64, EvalError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
            counter: QueryCounter::default(),
        }
    }
}

impl<F> Evaluator for FnEvaluator<F>
where
    F: Fn(&CdrState) -> Result<f64, EvalError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn evaluate(&self, a: &CdrState) -> Result<f64, EvalError> {
        self.counter.tick();
        (self.f)(a)
    }
    fn queries(&self) -> u64 {
        self.counter.get()
    }
}

/// Kyte-Doolittle hydropathy index, indexed like [`AminoAcid::ALL`].
pub const KYTE_DOOLITTLE: [f64; 20] = [
    1.8,  // A
    2.5,  // C
    -3.5, // D
    -3.5, // E
    2.8,  // F
    -0.4, // G
    -3.2, // H
    4.5,  // I
    -3.9, // K
    3.8,  // L
    1.9,  // M
    -3.5, // N
    -1.6, // P
    -3.5, // Q
    -4.5, // R
    -0.8, // S
    -0.7, // T
    4.2,  // V
    -0.9, // W
    -1.3, // Y
];

pub fn kyte_doolittle(aa: AminoAcid) -> f64 {
    KYTE_DOOLITTLE[aa.index()]
}

/// Mean hydropathy of the sequence (lower is more hydrophilic).
pub fn hydropathy(types: &[AminoAcid]) -> Result<f64, EvalError> {
    if types.is_empty() {
        return Err(EvalError::Input("empty sequence".into()));
    }
    Ok(types.iter().map(|a| kyte_doolittle(*a)).sum::<f64>() / types.len() as f64)
}

/// `-mean KD(s_i)`.
pub fn hydropathy_reward(a: &CdrState) -> Result<f64, EvalError> {
    hydropathy(&a.types).map(|h| -h)
}

#[derive(Debug, Default)]
pub struct Hydropathy {
    counter: QueryCounter,
}

impl Hydropathy {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Evaluator for Hydropathy {
    fn name(&self) -> &str {
        "hydro"
    }
    fn evaluate(&self, a: &CdrState) -> Result<f64, EvalError> {
        self.counter.tick();
        hydropathy_reward(a)
    }
    fn queries(&self) -> u64 {
        self.counter.get()
    }
}

/// `-sum |x_i - x*_i|^2 - lambda #{s_i != s*_i} - mu sum d(O_i, O*_i)^2`.
pub fn synthetic_quadratic_reward(
    a: &CdrState,
    target: &CdrState,
    lambda: f64,
    mu: f64,
) -> Result<f64, EvalError> {
    if a.len() != target.len() {
        return Err(EvalError::Input(format!(
            "loop length {} vs target {}",
            a.len(),
            target.len()
        )));
    }
    let mut r = 0.0;
    for i in 0..a.len() {
        r -= (a.coords[i] - target.coords[i]).norm_squared();
        if a.types[i] != target.types[i] {
            r -= lambda;
        }
        r -= mu * geodesic_distance(&a.orients[i], &target.orients[i]).powi(2);
    }
    Ok(r)
}

#[derive(Debug)]
pub struct QuadraticReward {
    name: String,
    target: CdrState,
    lambda: f64,
    mu: f64,
    counter: QueryCounter,
}

impl QuadraticReward {
    pub fn new(name: impl Into<String>, target: CdrState, lambda: f64, mu: f64) -> Self {
        Self {
            name: name.into(),
            target,
            lambda,
            mu,
            counter: QueryCounter::default(),
        }
    }

    pub fn target(&self) -> &CdrState {
        &self.target
    }
}

impl Evaluator for QuadraticReward {
    fn name(&self) -> &str {
        &self.name
    }
    fn evaluate(&self, a: &CdrState) -> Result<f64, EvalError> {
        self.counter.tick();
        synthetic_quadratic_reward(a, &self.target, self.lambda, self.mu)
    }
    fn queries(&self) -> u64 {
        self.counter.get()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub shift: f64,
    pub scale: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
        }
    }
}

impl Normalizer {
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.shift) / self.scale
    }
}

pub const MIN_SCALE: f64 = 1e-8;

pub struct WeightedComponent {
    pub evaluator: Arc<dyn Evaluator>,
    pub weight: f64,
    pub normalizer: Normalizer,
}

/// `sum_i w_i (raw_i - shift_i) / scale_i`.
pub struct WeightedObjective {
    name: String,
    components: Vec<WeightedComponent>,
    counter: QueryCounter,
}

impl WeightedObjective {
    pub fn new(name: impl Into<String>, components: Vec<WeightedComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config(
                "weighted objective needs at least one component".into(),
            ));
        }
        for c in &components {
            if !(c.normalizer.scale > 0.0)
                || !c.normalizer.shift.is_finite()
                || !c.weight.is_finite()
            {
                return Err(Error::Config(format!(
                    "invalid weight or normalizer for `{}`",
                    c.evaluator.name()
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            components,
            counter: QueryCounter::default(),
        })
    }

    pub fn components(&self) -> &[WeightedComponent] {
        &self.components
    }

    pub fn normalizers(&self) -> Vec<Normalizer> {
        self.components.iter().map(|c| c.normalizer).collect()
    }

    /// Copy with different weights, same evaluators and normalizers.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.components.len() {
            return Err(Error::Config(
                "weight count does not match components".into(),
            ));
        }
        let comps = self
            .components
            .iter()
            .zip(weights)
            .map(|(c, w)| WeightedComponent {
                evaluator: c.evaluator.clone(),
                weight: *w,
                normalizer: c.normalizer,
            })
            .collect();
        Self::new(self.name.clone(), comps)
    }

    /// Raw (un-normalized) component rewards, in component order.
    pub fn component_rewards(&self, a: &CdrState) -> Result<Vec<f64>, EvalError> {
        self.components
            .iter()
            .map(|c| {
                c.evaluator.evaluate(a).map_err(|e| EvalError::Component {
                    name: c.evaluator.name().to_string(),
                    source: Box::new(e),
                })
            })
            .collect()
    }

    pub fn combine(&self, raw: &[f64]) -> f64 {
        self.components
            .iter()
            .zip(raw)
            .map(|(c, r)| c.weight * c.normalizer.apply(*r))
            .sum()
    }
}

/// One call of the objective counts as one query, however many components
/// it has.
pub fn weighted_reward(obj: &WeightedObjective, a: &CdrState) -> Result<f64, EvalError> {
    let raw = obj.component_rewards(a)?;
    Ok(obj.combine(&raw))
}

impl Evaluator for WeightedObjective {
    fn name(&self) -> &str {
        &self.name
    }
    fn evaluate(&self, a: &CdrState) -> Result<f64, EvalError> {
        self.counter.tick();
        weighted_reward(self, a)
    }
    fn queries(&self) -> u64 {
        self.counter.get()
    }
}

/// Z-score each component over `samples`: shift is the sample mean, scale the
/// sample standard deviation floored at [`MIN_SCALE`].
pub fn calibrate_normalizers(
    obj: &WeightedObjective,
    samples: &[CdrState],
) -> Result<WeightedObjective> {
    if samples.len() < 2 {
        return Err(Error::Config("calibration needs at least 2 samples".into()));
    }
    let n = samples.len() as f64;
    let mut comps = Vec::with_capacity(obj.components.len());
    for c in &obj.components {
        let raw = samples
            .iter()
            .map(|s| {
                c.evaluator.evaluate(s).map_err(|e| EvalError::Component {
                    name: c.evaluator.name().to_string(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<f64>, EvalError>>()?;
        let mean = raw.iter().sum::<f64>() / n;
        let var = raw.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        comps.push(WeightedComponent {
            evaluator: c.evaluator.clone(),
            weight: c.weight,
            normalizer: Normalizer {
                shift: mean,
                scale: var.sqrt().max(MIN_SCALE),
            },
        });
    }
    WeightedObjective::new(obj.name.clone(), comps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{Rotation, Vec3};
    use crate::task::SyntheticTask;

    fn state(seq: &str) -> CdrState {
        let types = AminoAcid::parse_sequence(seq).unwrap();
        let m = types.len();
        CdrState::new(
            types,
            vec![Vec3::zeros(); m],
            vec![Rotation::identity(); m],
            0,
        )
        .unwrap()
    }

    #[test]
    fn hydropathy_cases() {
        assert_eq!(hydropathy_reward(&state("III")).unwrap(), -4.5);
        assert_eq!(hydropathy_reward(&state("IR")).unwrap(), 0.0);
        for aa in AminoAcid::ALL {
            let s = state(&aa.letter().to_string());
            assert_eq!(hydropathy_reward(&s).unwrap(), -kyte_doolittle(aa));
        }
    }

    #[test]
    fn hydropathy_table_matches_second_transcription() {
        // published order: A R N D C Q E G H I L K M F P S T W Y V
        let letters = "ARNDCQEGHILKMFPSTWYV";
        let values = [
            1.8, -4.5, -3.5, -3.5, 2.5, -3.5, -3.5, -0.4, -3.2, 4.5, 3.8, -3.9, 1.9, 2.8, -1.6,
            -0.8, -0.7, -0.9, -1.3, 4.2,
        ];
        for (c, v) in letters.chars().zip(values) {
            assert_eq!(kyte_doolittle(AminoAcid::from_letter(c).unwrap()), v, "{c}");
        }
    }

    #[test]
    fn hydropathy_ignores_structure() {
        let a = state("DKNERS");
        let mut b = a.clone();
        b.coords[2] = Vec3::new(4.0, 1.0, -3.0);
        b.orients[5] = Rotation::exp(&Vec3::new(0.2, 1.0, 0.0));
        let h = Hydropathy::new();
        assert_eq!(h.evaluate(&a).unwrap(), h.evaluate(&b).unwrap());
        assert_eq!(h.queries(), 2);
    }

    #[test]
    fn quadratic_cases() {
        let task = SyntheticTask::default();
        let target = task.target().unwrap();
        assert_eq!(
            synthetic_quadratic_reward(&target, &target, 1.0, 1.0).unwrap(),
            0.0
        );
        let mut a = target.clone();
        a.coords[3] += Vec3::new(1.0, 0.0, 0.0);
        assert!((synthetic_quadratic_reward(&a, &target, 1.0, 1.0).unwrap() + 1.0).abs() < 1e-12);
        let mut prev = 0.0;
        for k in 1..10 {
            let mut b = target.clone();
            b.coords[0] += Vec3::new(0.0, 0.3 * k as f64, 0.0);
            let r = synthetic_quadratic_reward(&b, &target, 1.0, 1.0).unwrap();
            assert!(r < prev);
            prev = r;
        }
        assert!(synthetic_quadratic_reward(&state("AC"), &target, 1.0, 1.0).is_err());
    }

    fn constant(name: &str, v: f64) -> Arc<dyn Evaluator> {
        Arc::new(FnEvaluator::new(name, move |_: &CdrState| Ok(v)))
    }

    #[test]
    fn weighted_cases() {
        let a = state("ACD");
        let comps = |w1: f64, w2: f64| {
            vec![
                WeightedComponent {
                    evaluator: constant("one", 3.0),
                    weight: w1,
                    normalizer: Normalizer {
                        shift: 1.0,
                        scale: 2.0,
                    },
                },
                WeightedComponent {
                    evaluator: constant("two", 5.0),
                    weight: w2,
                    normalizer: Normalizer {
                        shift: 4.0,
                        scale: 1.0,
                    },
                },
            ]
        };
        let obj = WeightedObjective::new("w", comps(1.0, 0.0)).unwrap();
        assert_eq!(weighted_reward(&obj, &a).unwrap(), 1.0);
        let obj = WeightedObjective::new("w", comps(0.5, 0.5)).unwrap();
        assert_eq!(weighted_reward(&obj, &a).unwrap(), 1.0);
        let bad = vec![WeightedComponent {
            evaluator: constant("x", 0.0),
            weight: 1.0,
            normalizer: Normalizer {
                shift: 0.0,
                scale: 0.0,
            },
        }];
        assert!(WeightedObjective::new("w", bad).is_err());
    }

    #[test]
    fn component_failure_names_component() {
        let failing: Arc<dyn Evaluator> = Arc::new(FnEvaluator::new("ddg", |_: &CdrState| {
            Err(EvalError::Remote("boom".into()))
        }));
        let obj = WeightedObjective::new(
            "w",
            vec![WeightedComponent {
                evaluator: failing,
                weight: 1.0,
                normalizer: Normalizer::default(),
            }],
        )
        .unwrap();
        match obj.evaluate(&state("A")) {
            Err(EvalError::Component { name, .. }) => assert_eq!(name, "ddg"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn calibration_centers_and_floors() {
        let samples: Vec<CdrState> = ["AAA", "DDD", "IRK", "WYV", "GGS"]
            .iter()
            .map(|s| state(s))
            .collect();
        let obj = WeightedObjective::new(
            "w",
            vec![
                WeightedComponent {
                    evaluator: Arc::new(Hydropathy::new()),
                    weight: 1.0,
                    normalizer: Normalizer::default(),
                },
                WeightedComponent {
                    evaluator: constant("flat", 7.0),
                    weight: 1.0,
                    normalizer: Normalizer::default(),
                },
            ],
        )
        .unwrap();
        let cal = calibrate_normalizers(&obj, &samples).unwrap();
        assert_eq!(cal.normalizers()[1].scale, MIN_SCALE);
        let hydro: Vec<f64> = samples
            .iter()
            .map(|s| {
                cal.components()[0]
                    .normalizer
                    .apply(hydropathy_reward(s).unwrap())
            })
            .collect();
        let mean = hydro.iter().sum::<f64>() / 5.0;
        let sd = (hydro.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((sd - 1.0).abs() < 1e-9);
        for s in &samples {
            assert_eq!(cal.component_rewards(s).unwrap()[1], 7.0);
            assert!(cal.components()[1].normalizer.apply(7.0).abs() < 1e-9);
        }
        assert!(calibrate_normalizers(&obj, &samples[..1]).is_err());
    }

    #[test]
    fn counted_wrapper_counts_separately() {
        let shared = Arc::new(Hydropathy::new());
        let a = Counted::new(shared.clone());
        let b = Counted::new(shared.clone());
        let s = state("AC");
        a.evaluate(&s).unwrap();
        a.evaluate(&s).unwrap();
        b.evaluate(&s).unwrap();
        assert_eq!((a.queries(), b.queries(), shared.queries()), (2, 1, 3));
    }
}
