//! Whole sampling chains from the prior at `t = T` down to `t = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::evaluators::{Counted, Evaluator};
use crate::guidance::{guided_step_traced, GuidanceConfig, StepRecord, Strategy};
use crate::metrics::DesignReport;
use crate::schedule::NoiseSchedule;
use crate::so3::{sample_igso3, IgSo3Params, Rotation, Vec3};
use crate::state::{AminoAcid, CdrState, ComplexContext, NUM_TYPES};

/// Everything one batch of designs needs.
pub struct RunSpec<'a> {
    pub schedule: &'a NoiseSchedule,
    pub guidance: GuidanceConfig,
    pub evaluator: &'a dyn Evaluator,
    /// Scored on each final design for the report; never charged as queries.
    pub report_evaluators: Vec<&'a dyn Evaluator>,
    pub denoiser: &'a dyn Denoiser,
    pub denoiser_id: String,
    pub context: &'a ComplexContext,
    pub reference: Option<&'a CdrState>,
    pub n_designs: usize,
}

impl RunSpec<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.n_designs == 0 {
            return Err(Error::Config("n_designs must be at least 1".into()));
        }
        self.guidance.validate(self.schedule.steps())?;
        if let Some(r) = self.reference {
            self.context.check_state(r)?;
        }
        Ok(())
    }

    pub fn loop_len(&self) -> usize {
        self.context.cdr_len()
    }

    fn with_strategy(&self, strategy: Strategy) -> RunSpec<'_> {
        RunSpec {
            schedule: self.schedule,
            guidance: GuidanceConfig {
                strategy,
                ..self.guidance.clone()
            },
            evaluator: self.evaluator,
            report_evaluators: self.report_evaluators.clone(),
            denoiser: self.denoiser,
            denoiser_id: self.denoiser_id.clone(),
            context: self.context,
            reference: self.reference,
            n_designs: self.n_designs,
        }
    }
}

/// Independent stream for design `index` of a run seeded with `seed`.
pub fn design_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `A^T`: uniform types, standard-normal coordinates, orientations from the
/// isotropic Gaussian around the identity with unit concentration.
pub fn init_prior<R: Rng + ?Sized>(
    m: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<CdrState> {
    if m == 0 {
        return Err(Error::Domain("loop length must be at least 1".into()));
    }
    let types = (0..m)
        .map(|_| AminoAcid::ALL[rng.random_range(0..NUM_TYPES)])
        .collect();
    let coords = (0..m)
        .map(|_| {
            Vec3::new(
                rng.sample(rand_distr::StandardNormal),
                rng.sample(rand_distr::StandardNormal),
                rng.sample(rand_distr::StandardNormal),
            )
        })
        .collect();
    let prior = IgSo3Params::new(Rotation::identity(), 1.0)?;
    let orients = (0..m)
        .map(|_| sample_igso3(&prior, rng))
        .collect::<Result<_>>()?;
    Ok(CdrState {
        types,
        coords,
        orients,
        t: sched.steps(),
    })
}

/// One chain under `spec.guidance`, recording every step.
pub fn run_chain<R: Rng + ?Sized>(
    spec: &RunSpec<'_>,
    rng: &mut R,
    mut trace: Option<&mut Vec<StepRecord>>,
) -> Result<(CdrState, DesignReport)> {
    spec.validate()?;
    let counted = Counted::new(spec.evaluator);
    let mut a = init_prior(spec.loop_len(), spec.schedule, rng)?;
    for t in (1..=spec.schedule.steps()).rev() {
        let (next, rec) = guided_step_traced(
            &a,
            spec.context,
            spec.denoiser,
            &counted,
            &spec.guidance,
            spec.schedule,
            rng,
        )
        .map_err(|e| Error::AtStep {
            t,
            source: Box::new(e),
        })?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(rec);
        }
        a = next;
    }
    a.validate()?;
    let mut report = DesignReport {
        queries_used: counted.queries(),
        ..Default::default()
    };
    for f in std::iter::once(&spec.evaluator).chain(&spec.report_evaluators) {
        let r = f
            .evaluate(&a)
            .map_err(|source| Error::Candidate { index: 0, source })?;
        report.rewards.insert(f.name().to_string(), r);
    }
    let report = report.with_reference(&a, spec.reference)?;
    Ok((a, report))
}

/// Guided chain: DDPM while `t > T_init`, the configured strategy after.
pub fn sample_lead<R: Rng + ?Sized>(
    spec: &RunSpec<'_>,
    rng: &mut R,
) -> Result<(CdrState, DesignReport)> {
    run_chain(spec, rng, None)
}

/// Plain DDPM chain; no evaluator queries.
pub fn sample_unconditional<R: Rng + ?Sized>(
    spec: &RunSpec<'_>,
    rng: &mut R,
) -> Result<(CdrState, DesignReport)> {
    run_chain(&spec.with_strategy(Strategy::None), rng, None)
}

/// Best-of-K among raw DDPM candidates for `t <= T_init`. Uses soft
/// selection if the spec asks for `guideraw_S`, hard selection otherwise.
pub fn sample_guideraw<R: Rng + ?Sized>(
    spec: &RunSpec<'_>,
    rng: &mut R,
) -> Result<(CdrState, DesignReport)> {
    let strategy = if spec.guidance.strategy == Strategy::GuideRawSoft {
        Strategy::GuideRawSoft
    } else {
        Strategy::GuideRawHard
    };
    run_chain(&spec.with_strategy(strategy), rng, None)
}

/// All designs of a spec, each on its own stream of `spec.guidance.seed`.
/// Results are in design order; a failed design does not stop the others.
pub fn sample_batch(spec: &RunSpec<'_>) -> Vec<Result<(CdrState, DesignReport)>> {
    (0..spec.n_designs)
        .into_par_iter()
        .map(|i| {
            let mut rng = design_rng(spec.guidance.seed, i as u64);
            run_chain(spec, &mut rng, None)
        })
        .collect()
}
