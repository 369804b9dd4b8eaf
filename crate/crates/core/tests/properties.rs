use jointcox_core::covariate::{cond_latent_params, log_joint_density};
use jointcox_core::fit::{e_step, lambda_update, w_n};
use jointcox_core::{
    em_fit, gen_dataset, posterior_atoms, FitConfig, MeasurementGrid, SieveHazard, SimConfig,
    Subject, Theta, TransitionParams,
};
use proptest::prelude::*;

fn alpha() -> impl Strategy<Value = TransitionParams> {
    (-1.0..1.0, 0.2..2.0, -1.0..1.0, -1.0..1.0, 0.05..2.0)
        .prop_map(|(m, s0, a, b, s)| TransitionParams::new(m, s0, a, b, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn weights_are_a_probability_vector(
        alpha in alpha(),
        beta in -2.0..2.0_f64,
        m in 1usize..4,
        offset in 0.05..0.5_f64,
        delta: bool,
        jump in 0.0..1.0_f64,
    ) {
        let grid = MeasurementGrid::new(vec![0.0, 0.5, 1.0]).unwrap();
        let x = grid.times()[m - 1] + offset;
        let s = Subject::new(1, x, delta, vec![0.3; m]);
        let theta = Theta { alpha, beta, hazard: SieveHazard::new(vec![x], vec![jump + 1e-3]).unwrap() };
        let atoms = posterior_atoms(&s, &theta, 40, &grid).unwrap();
        let total: f64 = atoms.weights.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(atoms.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn censored_without_latent_hazard_is_the_conditional_gaussian(
        alpha in alpha(),
        beta in -2.0..2.0_f64,
        values in prop::collection::vec(-2.0..2.0_f64, 2..4),
    ) {
        let grid = MeasurementGrid::new(vec![0.0, 0.5, 1.0]).unwrap();
        let x = grid.times()[values.len() - 1] + 0.2;
        let s = Subject::new(1, x, false, values.clone());
        // the only jump precedes the latent window
        let theta = Theta { alpha, beta, hazard: SieveHazard::new(vec![0.01], vec![0.5]).unwrap() };
        let atoms = posterior_atoms(&s, &theta, 40, &grid).unwrap();
        let (mean, var) = cond_latent_params(&values, &alpha);
        let m1 = atoms.expect(|z| z);
        let m2 = atoms.expect(|z| (z - mean).powi(2));
        prop_assert!((m1 - mean).abs() <= 1e-10 * (1.0 + mean.abs()));
        prop_assert!((m2 - var).abs() <= 1e-10 * var.max(1.0));
    }

    // transition variances of the order seen in fitted models; wider priors are covered by the
    // oracle comparison in the acceptance suite
    #[test]
    fn quadrature_order_is_converged(
        alpha in (-1.0..1.0, 0.2..2.0, -1.0..1.0, -1.0..1.0, 0.05..0.6)
            .prop_map(|(m, s0, a, b, s)| TransitionParams::new(m, s0, a, b, s)),
        beta in -1.5..1.5_f64,
        delta: bool,
        jump in 0.0..0.3_f64,
    ) {
        let grid = MeasurementGrid::new(vec![0.0, 0.5]).unwrap();
        let x = 0.8;
        let s = Subject::new(1, x, delta, vec![0.1, -0.4]);
        let theta = Theta { alpha, beta, hazard: SieveHazard::new(vec![0.7, x], vec![jump, 0.1]).unwrap() };
        let lo = posterior_atoms(&s, &theta, 40, &grid).unwrap().tilted_moments(beta);
        let hi = posterior_atoms(&s, &theta, 80, &grid).unwrap().tilted_moments(beta);
        for (a, b) in [(lo.mean, hi.mean), (lo.e0, hi.e0), (lo.e1, hi.e1), (lo.e2, hi.e2)] {
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn joint_density_integrates_to_one(alpha in alpha(), prefix in prop::collection::vec(-2.0..2.0_f64, 1..3)) {
        let (mean, var) = cond_latent_params(&prefix, &alpha);
        let sd = var.sqrt();
        let base = log_joint_density(&prefix, &alpha).unwrap();
        let k = 20_000;
        let h = 20.0 * sd / k as f64;
        let mut total = 0.0;
        for i in 0..=k {
            let z = mean - 10.0 * sd + h * i as f64;
            let mut v = prefix.clone();
            v.push(z);
            let end = if i == 0 || i == k { 0.5 } else { 1.0 };
            total += end * (log_joint_density(&v, &alpha).unwrap() - base).exp();
        }
        prop_assert!((total * h - 1.0).abs() <= 1e-8);
    }
}

#[test]
fn lambda_update_solves_the_risk_identity() {
    let (d, _) = gen_dataset(&SimConfig {
        n: 40,
        seed: 12,
        ..SimConfig::default()
    })
    .unwrap();
    let fit = em_fit(&d, None, &FitConfig::default()).unwrap();
    let theta = Theta {
        beta: 0.4,
        ..fit.theta_hat
    };
    let atoms = e_step(&d, &theta, 40).unwrap();
    let hazard = lambda_update(&d, &atoms, theta.beta).unwrap();
    for (&u, &dl) in hazard.times().iter().zip(hazard.jumps()) {
        let w = w_n(u, &d, &atoms, theta.beta).unwrap();
        assert!((dl * w - 1.0 / d.n() as f64).abs() <= 1e-12);
    }
}
