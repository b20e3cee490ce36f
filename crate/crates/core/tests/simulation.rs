mod common;

use nalgebra::DVector;
use netpass::analysis::{closed_loop_sms, passivity_lmi, AnalysisOptions};
use netpass::model::{Gain, LossModel, Plant, Schedule};
use netpass::sim::{decay_fit, ensemble, simulate, EnsembleOptions, InputSignal};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_gain, random_plant, s};

fn scalar_0488() -> (Plant, Gain, LossModel) {
    // 0.2·1.2² + 0.8·0.5² = 0.488
    (Plant::scalar(1.2, 1.0, 1.0, 0.5, 1.0, 0.0), Gain::new(s(-0.7)).unwrap(), LossModel::new(0.0, 0.2).unwrap())
}

#[test]
fn certified_stable_ensemble_decays() {
    let (plant, k, loss) = scalar_0488();
    let opts = EnsembleOptions { trials: 500, x0: Some(DVector::from_element(1, 1.0)), ..Default::default() };
    let st = ensemble(&plant, &k, &Schedule::FullPacket, &loss, &InputSignal::Zero, 200, &opts).unwrap();
    assert!(st.mean_sq_norm[200] < 1e-4);
    assert!(st.frac_converged > 0.99);
}

#[test]
fn unstable_ensemble_grows() {
    let plant = Plant::scalar(2.0, 1.0, 1.0, 0.5, 1.0, 0.0);
    let opts = EnsembleOptions { trials: 200, x0: Some(DVector::from_element(1, 1.0)), ..Default::default() };
    let st = ensemble(&plant, &Gain::zeros(1, 1), &Schedule::FullPacket, &LossModel::new(0.3, 0.3).unwrap(), &InputSignal::Zero, 30, &opts)
        .unwrap();
    assert!(st.mean_sq_norm[30] > 1e6);
}

#[test]
fn decay_fit_tracks_second_moment_rate() {
    let (plant, k, loss) = scalar_0488();
    let opts = EnsembleOptions { trials: 1000, base_seed: 3, x0: Some(DVector::from_element(1, 1.0)), ..Default::default() };
    let st = ensemble(&plant, &k, &Schedule::FullPacket, &loss, &InputSignal::Zero, 200, &opts).unwrap();
    let fit = decay_fit(&st).unwrap();
    assert!((fit.alpha - 0.488).abs() <= 0.05, "alpha = {}", fit.alpha);
    assert!(!fit.steady_state);
}

#[test]
fn decay_fit_agrees_with_oracle_on_scalar_family() {
    for (i, (a, kv, a2)) in [(0.9, -0.4, 0.1), (1.1, -0.9, 0.3), (0.6, 0.2, 0.5), (1.3, -1.0, 0.15)].into_iter().enumerate() {
        let plant = Plant::scalar(a, 1.0, 1.0, 0.5, 1.0, 0.0);
        let k = Gain::new(s(kv)).unwrap();
        let loss = LossModel::new(0.0, a2).unwrap();
        let rho = closed_loop_sms(&plant, &k, &Schedule::FullPacket, &loss.mode_distribution()).unwrap().rho;
        assert!(rho < 1.0);
        let opts = EnsembleOptions {
            trials: 1000,
            base_seed: 100 * i as u64,
            x0: Some(DVector::from_element(1, 1.0)),
            ..Default::default()
        };
        let st = ensemble(&plant, &k, &Schedule::FullPacket, &loss, &InputSignal::Zero, 200, &opts).unwrap();
        let fit = decay_fit(&st).unwrap();
        assert!((fit.alpha - rho).abs() <= 0.1, "alpha = {}, rho = {rho}", fit.alpha);
    }
}

#[test]
fn certified_passive_system_dissipates() {
    let plant = Plant::scalar(0.5, 1.0, 0.0, 0.5, 1.0, 0.0);
    let loss = LossModel::lossless();
    passivity_lmi(&plant, &Gain::zeros(1, 1), &loss.mode_distribution(), 0.4, &AnalysisOptions::default()).unwrap();
    let opts = EnsembleOptions { trials: 1000, eta: 0.4, ..Default::default() };
    let sig = InputSignal::WhiteNoise { sigma: 1.0 };
    let st = ensemble(&plant, &Gain::zeros(1, 1), &Schedule::FullPacket, &loss, &sig, 200, &opts).unwrap();
    assert!(st.dissipation_zscore() > 3.0, "z = {}", st.dissipation_zscore());
}

#[test]
fn mode_frequencies_match_distribution() {
    let (plant, k, _) = scalar_0488();
    for (a1, a2) in [(0.2, 0.1), (0.5, 0.5), (0.05, 0.7)] {
        let loss = LossModel::new(a1, a2).unwrap();
        let opts = EnsembleOptions { trials: 500, base_seed: 9, ..Default::default() };
        let st = ensemble(&plant, &k, &Schedule::FullPacket, &loss, &InputSignal::Zero, 200, &opts).unwrap();
        assert!(st.draws() >= 100_000);
        assert!(st.mode_frequency_zscore(&loss.mode_distribution()) < 4.0);
    }
}

#[test]
fn ensemble_independent_of_thread_count() {
    let (plant, k, loss) = scalar_0488();
    let opts = EnsembleOptions { trials: 300, base_seed: 21, eta: 0.1, ..Default::default() };
    let sig = InputSignal::WhiteNoise { sigma: 1.0 };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ensemble(&plant, &k, &Schedule::FullPacket, &loss, &sig, 100, &opts).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn driven_system_reports_no_decay() {
    let (plant, k, loss) = scalar_0488();
    let opts = EnsembleOptions { trials: 500, ..Default::default() };
    let sig = InputSignal::WhiteNoise { sigma: 1.0 };
    let st = ensemble(&plant, &k, &Schedule::FullPacket, &loss, &sig, 200, &opts).unwrap();
    match decay_fit(&st) {
        Err(netpass::Error::FitUnavailable(_)) => {}
        Ok(f) => assert!(f.steady_state, "{f:?}"),
        Err(e) => panic!("{e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lossless_traces_follow_deterministic_loop(seed in 0u64..1000, n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plant = random_plant(&mut rng, n, 1, 1, 0.5);
        let k = random_gain(&mut rng, 1, n, 0.3);
        let sig = InputSignal::WhiteNoise { sigma: 1.0 };
        let x0 = DVector::from_element(n, 1.0);
        let tr = simulate(&plant, &k, &Schedule::FullPacket, &LossModel::lossless(), &sig, 50, seed, Some(&x0)).unwrap();
        let acl = plant.lossless_closed_loop(&k);
        let mut x = x0;
        for i in 0..50 {
            let r = tr.step(i);
            prop_assert!((r.x - &x).amax() <= 1e-12 * (1.0 + x.amax()));
            x = &acl * &x + plant.b1() * r.w;
        }
    }

    #[test]
    fn identical_seeds_identical_traces(seed in 0u64..10_000, a1 in 0.0f64..1.0, a2 in 0.0f64..1.0) {
        let (plant, k, _) = scalar_0488();
        let loss = LossModel::new(a1, a2).unwrap();
        let sig = InputSignal::Sinusoid { amplitude: 1.0, period: 9.0 };
        let a = simulate(&plant, &k, &Schedule::FullPacket, &loss, &sig, 80, seed, None).unwrap();
        let b = simulate(&plant, &k, &Schedule::FullPacket, &loss, &sig, 80, seed, None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn recorded_sums_reproduce(seed in 0u64..1000) {
        let (plant, k, loss) = scalar_0488();
        let tr = simulate(&plant, &k, &Schedule::FullPacket, &loss, &InputSignal::WhiteNoise { sigma: 2.0 }, 150, seed, None).unwrap();
        let wz: f64 = (0..150).map(|i| tr.step(i).w.dot(tr.step(i).z)).sum();
        prop_assert!((wz - tr.sum_wz()).abs() <= 1e-10 * (1.0 + wz.abs()));
        prop_assert_eq!(tr.horizon(), 150);
    }
}
