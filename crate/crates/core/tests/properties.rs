use std::path::PathBuf;
use std::sync::Arc;

use cdr_codesign::denoiser::{Denoiser, LatentCode, MixtureOracle, ToyDenoiser, ToyModelConfig};
use cdr_codesign::diffusion::forward_state;
use cdr_codesign::evaluators::{
    Evaluator, Hydropathy, Normalizer, WeightedComponent, WeightedObjective,
};
use cdr_codesign::guidance::{
    hard_select, selection_probabilities, standard_normal_matrix, weighted_direction,
    GuidanceConfig, PerturbationBatch, Strategy as Guide,
};
use cdr_codesign::harness::ExperimentConfig;
use cdr_codesign::metrics::{aar, rmsd};
use cdr_codesign::so3::{sample_igso3, scale_rot, IgSo3Params, Rotation, Vec3};
use cdr_codesign::task::SyntheticTask;
use cdr_codesign::{AminoAcid, CdrState, ScheduleParams, NUM_TYPES};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rotation() -> impl Strategy<Value = Rotation> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.0f64..3.14).prop_filter_map(
        "zero axis",
        |(x, y, z, angle)| {
            let axis = Vec3::new(x, y, z);
            (axis.norm() > 1e-3).then(|| Rotation::exp(&(axis.normalize() * angle)))
        },
    )
}

fn state(max_len: usize) -> impl Strategy<Value = CdrState> {
    (1..=max_len).prop_flat_map(state_of_len)
}

fn state_of_len(m: usize) -> impl Strategy<Value = CdrState> {
    (
        proptest::collection::vec(0..NUM_TYPES, m),
        proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0), m),
        proptest::collection::vec(rotation(), m),
    )
        .prop_map(|(types, coords, orients)| {
            let types = types
                .into_iter()
                .map(|i| AminoAcid::from_index(i).unwrap())
                .collect();
            let coords = coords
                .into_iter()
                .map(|(x, y, z)| Vec3::new(x, y, z))
                .collect();
            CdrState::new(types, coords, orients, 0).unwrap()
        })
}

fn all_strategies() -> impl Strategy<Value = Guide> {
    proptest::sample::select(Guide::ALL.to_vec())
}

proptest! {
    #[test]
    fn exp_log_round_trip(r in rotation()) {
        let back = Rotation::exp(&r.log());
        prop_assert!((back.matrix() - r.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn scale_rot_scales_the_angle(r in rotation(), s in 0.0f64..=1.0) {
        let scaled = scale_rot(s, &r);
        prop_assert!(scaled.is_valid(1e-9));
        prop_assert!((scaled.angle() - s * r.angle()).abs() < 1e-9);
    }

    #[test]
    fn igso3_draws_are_rotations(mean in rotation(), eps in 1e-6f64..10.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = sample_igso3(&IgSo3Params::new(mean, eps).unwrap(), &mut rng).unwrap();
        prop_assert!(r.is_valid(1e-9));
    }

    #[test]
    fn selection_probabilities_are_a_shift_invariant_distribution(
        rewards in proptest::collection::vec(-50.0f64..50.0, 1..40),
        shift in -100.0f64..100.0,
    ) {
        let p = selection_probabilities(&rewards).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
        let q = selection_probabilities(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        let best = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let p_best = rewards.iter().zip(&p).filter(|(r, _)| **r == best).map(|(_, p)| *p).fold(0.0, f64::max);
        prop_assert!(p.iter().all(|&x| x <= p_best + 1e-15));
    }

    #[test]
    fn hard_selection_picks_a_maximum(rewards in proptest::collection::vec(-5i32..5, 1..30), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rewards: Vec<f64> = rewards.into_iter().map(f64::from).collect();
        let deltas = rewards.iter().map(|_| standard_normal_matrix(3, 4, &mut rng)).collect();
        let batch = PerturbationBatch { deltas, rewards: rewards.clone(), decoded: vec![] };
        let (delta, i) = hard_select(&batch).unwrap();
        prop_assert_eq!(rewards[i], rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        prop_assert_eq!(&delta, &batch.deltas[i]);
    }

    #[test]
    fn weighted_direction_is_linear_in_rewards(
        rewards in proptest::collection::vec(-5.0f64..5.0, 1..20),
        a in -3.0f64..3.0,
        sigma in 1e-3f64..1.0,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let deltas: Vec<_> = rewards.iter().map(|_| standard_normal_matrix(2, 5, &mut rng)).collect();
        let scaled: Vec<f64> = rewards.iter().map(|r| a * r).collect();
        let base = PerturbationBatch { deltas: deltas.clone(), rewards, decoded: vec![] };
        let other = PerturbationBatch { deltas, rewards: scaled, decoded: vec![] };
        let d1 = weighted_direction(&base, sigma).unwrap() * a;
        let d2 = weighted_direction(&other, sigma).unwrap();
        prop_assert!((d1 - &d2).abs().max() <= 1e-9 * (1.0 + d2.abs().max()));
    }

    #[test]
    fn budget_is_per_step_cost_times_t_init(s in all_strategies(), k in 1usize..64, t_init in 0usize..=100) {
        let cfg = GuidanceConfig { k, t_init, strategy: s, ..Default::default() };
        let per_step = match s {
            Guide::None => 0,
            Guide::WeightedHard | Guide::WeightedSoft => k + 2,
            _ => k,
        };
        prop_assert_eq!(cfg.query_budget(), per_step * t_init);
        prop_assert_eq!(cfg.is_guided(t_init.max(1)), s != Guide::None && t_init >= 1);
    }

    #[test]
    fn forward_noising_keeps_shape(a0 in state(12), t in 1usize..=100, seed: u64) {
        let sched = ScheduleParams::default().build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_t = forward_state(&a0, &sched, t, &mut rng).unwrap();
        prop_assert_eq!(a_t.len(), a0.len());
        prop_assert_eq!(a_t.t, t);
        prop_assert!(a_t.validate().is_ok());
        prop_assert!(a_t.orients.iter().all(|o| o.is_valid(1e-9)));
    }

    #[test]
    fn metric_ranges_and_symmetry((a, b) in (1usize..=10).prop_flat_map(|m| (state_of_len(m), state_of_len(m)))) {
        let r = aar(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(aar(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(rmsd(&a, &a).unwrap(), 0.0);
        prop_assert!((rmsd(&a, &b).unwrap() - rmsd(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(rmsd(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn rmsd_of_a_translation_is_its_length(a in state(10), v in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0)) {
        let v = Vec3::new(v.0, v.1, v.2);
        let mut b = a.clone();
        for c in &mut b.coords {
            *c += v;
        }
        prop_assert!((rmsd(&b, &a).unwrap() - v.norm()).abs() < 1e-9);
    }

    #[test]
    fn objective_is_weighted_normalized_sum(
        a in state(8),
        w in proptest::collection::vec(-2.0f64..2.0, 2),
        shift in -3.0f64..3.0,
        scale in 0.1f64..5.0,
    ) {
        let hydro: Arc<dyn Evaluator> = Arc::new(Hydropathy::new());
        let norm = Normalizer { shift, scale };
        let obj = WeightedObjective::new("obj", vec![
            WeightedComponent { evaluator: hydro.clone(), weight: w[0], normalizer: norm },
            WeightedComponent { evaluator: hydro.clone(), weight: w[1], normalizer: Normalizer::default() },
        ]).unwrap();
        let raw = hydro.evaluate(&a).unwrap();
        let expect = w[0] * (raw - shift) / scale + w[1] * raw;
        prop_assert!((obj.evaluate(&a).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn config_hash_ignores_output_location(seed: u64, workers in 1usize..8, n in 1usize..500) {
        let a = ExperimentConfig { seed, n_designs: n, ..Default::default() };
        let b = ExperimentConfig { output_dir: PathBuf::from("elsewhere"), workers: Some(workers), ..a.clone() };
        let c = ExperimentConfig { seed: seed.wrapping_add(1), ..a.clone() };
        prop_assert_eq!(a.hash(), b.hash());
        prop_assert_ne!(a.hash(), c.hash());
        let text = toml::to_string(&a).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        prop_assert_eq!(a.hash(), back.hash());
    }

    #[test]
    fn decoded_outputs_are_valid_for_any_latent(
        values in proptest::collection::vec(-50.0f64..50.0, 6 * 32),
        t in 1usize..=100,
        seed: u64,
    ) {
        let model = ToyDenoiser::new(ToyModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let z = LatentCode::new(DMatrix::from_row_slice(6, 32, &values), t).unwrap();
        let out = model.decode(&z, t).unwrap();
        prop_assert!(out.validate(6).is_ok());
        prop_assert!(out.orient_means.iter().all(|o| o.is_valid(1e-9)));
    }

    #[test]
    fn oracle_decodes_perturbed_latents(t in 1usize..=100, scale in 0.0f64..5.0, seed: u64) {
        let task = SyntheticTask::default();
        let sched = ScheduleParams::default().build().unwrap();
        let oracle = MixtureOracle::new(task.clone(), sched.clone()).unwrap();
        let ctx = task.context().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a0 = task.sample_clean(oracle.components(), &mut rng).0;
        let a_t = forward_state(&a0, &sched, t, &mut rng).unwrap();
        let z = oracle.encode(&a_t, &ctx, t).unwrap();
        let delta = standard_normal_matrix(z.rows(), z.dim(), &mut rng);
        let out = oracle.decode(&z.offset(&delta, scale).unwrap(), t).unwrap();
        prop_assert!(out.validate(a0.len()).is_ok());
    }
}
