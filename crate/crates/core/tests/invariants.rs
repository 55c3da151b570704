use ddpredict::lti::{self, simulate, StateRange};
use ddpredict::nalgebra::{DMatrix, DVector};
use ddpredict::predictors::{lambda_for, predict_pinv, solve_unified, NoiseModel, PredictionProblem, PredictorKind};
use ddpredict::uncertainty::{assemble_sigma, chi2_cdf, chi2_quantile};
use ddpredict::{Construction, SignalMatrix, StateSpaceModel, Trajectory};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(seed: u64) -> StateSpaceModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lti::random_system(StateRange { min: 2, max: 5 }, 1, 1, &mut rng).unwrap()
}

fn siso(v: &[f64]) -> Vec<DVector<f64>> {
    v.iter().map(|&x| DVector::from_element(1, x)).collect()
}

fn random_matrix(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(r, c, |_, _| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
}

fn problem(seed: u64, l: usize, l0: usize) -> PredictionProblem {
    let v = random_matrix(seed, 2 * l0 + l - l0, 1);
    PredictionProblem::new(
        v.rows(0, l0).column(0).into_owned(),
        v.rows(l0, l0).column(0).into_owned(),
        v.rows(2 * l0, l - l0).column(0).into_owned(),
    )
}

fn noisy_matrix(seed: u64, l: usize, l0: usize, m: usize) -> SignalMatrix {
    let z = random_matrix(seed, 2 * l, m);
    SignalMatrix::from_matrix(z, l, l0, 1, 1, Construction::Independent).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simulation_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let m = model(seed);
        let u1 = random_matrix(seed + 1, 30, 1);
        let u2 = random_matrix(seed + 2, 30, 1);
        let x1 = random_matrix(seed + 3, m.n_x(), 1).column(0).into_owned();
        let x2 = random_matrix(seed + 4, m.n_x(), 1).column(0).into_owned();
        let run = |x: &DVector<f64>, u: &DMatrix<f64>| simulate(&m, x, &siso(u.as_slice()), None).unwrap().stacked_outputs();
        let mix = run(&(&x1 * a + &x2 * b), &(&u1 * a + &u2 * b));
        let sep = run(&x1, &u1) * a + run(&x2, &u2) * b;
        prop_assert!((mix - &sep).norm() <= 1e-10 * sep.norm().max(1.0));
    }

    #[test]
    fn h2_norm_matches_impulse_energy(seed in 0u64..1000) {
        let m = model(seed);
        let mut u = vec![0.0; 4000];
        u[0] = 1.0;
        let y = simulate(&m, &DVector::zeros(m.n_x()), &siso(&u), None).unwrap().stacked_outputs();
        let energy: f64 = y.iter().map(|v| v * v).sum();
        prop_assert!((energy.sqrt() - lti::h2_norm(&m).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn partition_restacks_to_z(seed in 0u64..1000, l0 in 1usize..5, lp in 1usize..5, m in 1usize..12) {
        let l = l0 + lp;
        let t = Trajectory::siso(
            random_matrix(seed, l * m, 1).as_slice(),
            random_matrix(seed + 1, l * m, 1).as_slice(),
        ).unwrap();
        let page = SignalMatrix::build_page(&t, l, l0).unwrap();
        prop_assert_eq!(page.partition().restack(), page.z().clone());
        prop_assert_eq!(page.m(), m);
        let hankel = SignalMatrix::build_hankel(&t, l, l0).unwrap();
        prop_assert_eq!(hankel.m(), l * m - l + 1);
        prop_assert_eq!(hankel.partition().restack(), hankel.z().clone());
    }

    #[test]
    fn pinv_prediction_is_linear_in_the_problem(seed in 0u64..1000, a in -4.0f64..4.0) {
        let sm = noisy_matrix(seed, 7, 4, 30);
        let p = problem(seed + 7, 7, 4);
        let base = predict_pinv(&sm, &p).unwrap().y;
        let scaled = predict_pinv(&sm, &p.scaled(a)).unwrap().y;
        prop_assert!((scaled - &base * a).norm() <= 1e-10 * base.norm().max(1.0) * a.abs().max(1.0));
    }

    #[test]
    fn unified_solution_satisfies_stationarity(seed in 0u64..1000, log_lambda in -3.0f64..2.0) {
        let (l, l0) = (7, 4);
        let sm = noisy_matrix(seed, l, l0, 25);
        let p = problem(seed + 9, l, l0);
        let lambda = 10f64.powf(log_lambda);
        let r = solve_unified(&sm, &p, lambda, None).unwrap();
        let part = sm.partition();
        let u = part.inputs();
        // Primal feasibility.
        prop_assert!((&u * &r.g - p.input_target()).norm() < 1e-9);
        prop_assert!((&part.y_p * &r.g - &p.y_ini - &r.delta).norm() < 1e-9);
        // Gradient lambda g + Y_p^T delta lies in the row space of U.
        let grad = &r.g * lambda + part.y_p.transpose() * &r.delta;
        let ut = u.transpose();
        let proj = &ut * ut.clone().pseudo_inverse(1e-12).unwrap() * &grad;
        prop_assert!((&grad - proj).norm() <= 1e-8 * grad.norm().max(1.0));
    }

    #[test]
    fn slack_shrinks_as_lambda_decreases(seed in 0u64..1000) {
        let (l, l0) = (7, 4);
        let sm = noisy_matrix(seed, l, l0, 12);
        let p = problem(seed + 3, l, l0);
        let mut prev = f64::INFINITY;
        let mut prev_g = 0.0;
        for lambda in [100.0, 10.0, 1.0, 0.1, 0.01] {
            let r = solve_unified(&sm, &p, lambda, None).unwrap();
            prop_assert!(r.delta.norm() <= prev * (1.0 + 1e-9));
            prop_assert!(r.g.norm() >= prev_g * (1.0 - 1e-9));
            prev = r.delta.norm();
            prev_g = r.g.norm();
        }
    }

    #[test]
    fn chi2_cdf_is_monotone_and_inverts(d in 1u32..60, a in 0.01f64..80.0, b in 0.01f64..80.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(chi2_cdf(lo, d) <= chi2_cdf(hi, d));
        let p = chi2_cdf(hi, d);
        if p > 1e-6 && p < 1.0 - 1e-6 {
            prop_assert!((chi2_quantile(p, d) - hi).abs() <= 1e-7 * hi.max(1.0));
        }
    }

    #[test]
    fn sigma_is_symmetric_positive_definite(seed in 0u64..1000, sigma2 in 1e-4f64..10.0) {
        let gamma = random_matrix(seed, 3, 5);
        let g = random_matrix(seed + 1, 20, 1).column(0).into_owned();
        let s = assemble_sigma(&gamma, &g, &NoiseModel::iid(sigma2).unwrap()).unwrap();
        prop_assert!((&s - s.transpose()).norm() <= 1e-12 * s.norm());
        let eig = s.symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() > 0.0);
    }

    #[test]
    fn lambda_follows_the_noise_level(seed in 0u64..200, sigma2 in 1e-3f64..5.0) {
        let sm = noisy_matrix(seed, 7, 4, 30);
        let p = problem(seed, 7, 4);
        let noise = NoiseModel::iid(sigma2).unwrap();
        let smm = lambda_for(&sm, &p, PredictorKind::Smm, &noise, None).unwrap();
        let double = lambda_for(&sm, &p, PredictorKind::Smm, &NoiseModel::iid(2.0 * sigma2).unwrap(), None).unwrap();
        prop_assert!(smm > 0.0);
        prop_assert!(double > smm);
    }
}
