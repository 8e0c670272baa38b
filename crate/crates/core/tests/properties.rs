use fbcap::linalg::{min_eigenvalue, SymMatrix};
use fbcap::maxdet::SolverConfig;
use fbcap::nblock::{feedback_bound, noisy_feedback_program, nonfeedback_nblock, perfect_feedback_nblock, NBlockProblem};
use fbcap::noise::{NoiseModel, Psd};
use fbcap::oracle::{finite_diff_check, sample_point, schur_identity_check};
use fbcap::spectral::{
    noisy_spectral_bound, nonfeedback_shannon, perfect_feedback_shannon, waterfill_frequency, Quadrature,
    SpectralProblem,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn channel() -> impl Strategy<Value = NoiseModel<f64>> {
    prop_oneof![
        (0.1f64..3.0).prop_map(|v| NoiseModel::white(v).unwrap()),
        (-1.0f64..=1.0).prop_map(|a| NoiseModel::ma1(a).unwrap()),
        (-0.95f64..=0.95, 0.1f64..2.0).prop_map(|(r, s)| NoiseModel::ar1(r, s).unwrap()),
    ]
}

fn problem(fwd: &NoiseModel<f64>, n: usize, fb: f64, p: f64) -> NBlockProblem<f64> {
    NBlockProblem::new(fwd.covariance(n).unwrap(), SymMatrix::scaled_identity(n, fb), p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_psd_and_nested(model in channel(), n in 1usize..64) {
        let k = model.covariance(n).unwrap();
        let k1 = model.covariance(n + 1).unwrap();
        prop_assert!(min_eigenvalue(&k) >= -1e-10);
        prop_assert_eq!(k1.leading_block(n), k);
    }

    #[test]
    fn spectrum_integrates_to_variance(model in channel()) {
        let psd = model.psd().unwrap();
        let q = Quadrature::trapezoid(4096).unwrap();
        let mean = q.integrate(&psd.sample(4096));
        prop_assert!((mean - model.autocov(0)).abs() < 1e-6);
    }

    #[test]
    fn waterfill_meets_budget(
        floor in prop::collection::vec(0.01f64..50.0, 65..300),
        budget in 0.0f64..100.0,
    ) {
        let q = Quadrature::from_weights(vec![1.0; floor.len()]).unwrap();
        let wf = waterfill_frequency(&q, &floor, &floor, budget);
        prop_assert!(wf.s_s.iter().all(|&s| s >= 0.0));
        if budget > 0.0 {
            prop_assert!((wf.power_used - budget).abs() <= 1e-10 * budget.max(1.0));
        }
        prop_assert!(wf.value_nats >= -1e-15);
    }

    #[test]
    fn identities_at_random_points(model in channel(), n in 1usize..6, fb in 0.01f64..2.0, seed in any::<u64>()) {
        let p = problem(&model, n, fb, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = sample_point(&p, &mut rng);
        let r = schur_identity_check(p.kw(), p.kv(), &point).unwrap();
        prop_assert!(r.determinant_error <= 1e-9);
        prop_assert!(r.objective_error.unwrap() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn nblock_sandwich(model in channel(), n in 1usize..5, fb in 0.0f64..1.0, p in 0.5f64..20.0) {
        let prob = problem(&model, n, fb, p);
        let cfg = SolverConfig::default();
        let nf = nonfeedback_nblock(prob.kw(), p).unwrap();
        let pf = perfect_feedback_nblock(prob.kw(), p, &cfg).unwrap().value_bits;
        let v = feedback_bound(&prob, &cfg).unwrap().value_bits;
        prop_assert!(nf <= v + 1e-6 && v <= pf + 1e-6, "{} {} {}", nf, v, pf);
    }

    #[test]
    fn nblock_scale_invariance(model in channel(), n in 1usize..5, fb in 0.05f64..1.0, c in 0.1f64..10.0) {
        let cfg = SolverConfig::default();
        let base = feedback_bound(&problem(&model, n, fb, 3.0), &cfg).unwrap().value_bits;
        let scaled = NBlockProblem::new(
            model.covariance(n).unwrap().scale(c),
            SymMatrix::scaled_identity(n, fb * c),
            3.0 * c,
        ).unwrap();
        let v = feedback_bound(&scaled, &cfg).unwrap().value_bits;
        prop_assert!((v - base).abs() <= 1e-7, "{} vs {}", v, base);
    }

    #[test]
    fn barrier_derivatives(model in channel(), n in 1usize..4, fb in 0.05f64..1.0, t in 0.5f64..100.0) {
        let (prog, x0) = noisy_feedback_program(&problem(&model, n, fb, 2.0)).unwrap();
        let r = finite_diff_check(&prog, &x0, t, 1e-5).unwrap();
        prop_assert!(r.gradient <= 1e-5 && r.hessian <= 1e-4, "{:?}", r);
    }

    #[test]
    fn spectral_sandwich(alpha in -0.9f64..0.9, var in 0.0f64..1.0) {
        let s_w = NoiseModel::ma1(alpha).unwrap().psd().unwrap();
        let (taps, grid) = (4, 128);
        let prob = SpectralProblem::new(s_w.clone(), Psd::constant(var).unwrap(), 10.0, taps, grid).unwrap();
        let v = noisy_spectral_bound(&prob).value_bits;
        let nf = nonfeedback_shannon(&s_w, 10.0, grid).unwrap();
        let pf = perfect_feedback_shannon(&s_w, 10.0, taps, grid).unwrap().value_bits;
        prop_assert!(nf <= v + 1e-8 && v <= pf + 1e-8, "{} {} {}", nf, v, pf);
    }
}
