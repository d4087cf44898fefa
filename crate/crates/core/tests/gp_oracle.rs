mod common;

use mortgp::gp::{fit, input_points, log_marginal_likelihood, profile_likelihood, Bounds};
use mortgp::{CoregionalizationMatrix, FitConfig, FittedModel, Hyperparameters, InputPoint, KernelFamily, KernelParams, TrainingSet, TrendMode};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn training(pts: &[InputPoint], y: &[f64], outputs: usize) -> TrainingSet {
    TrainingSet {
        populations: (0..outputs).map(|i| format!("P{i}")).collect(),
        inputs: pts.iter().map(|p| (p.age as u32, p.year as i32)).collect(),
        outputs: y.to_vec(),
        labels: pts.iter().map(|p| p.population).collect(),
        excluded: Vec::new(),
    }
}

/// Distinct integer cells per population plus a GP-free response.
fn instance(seed: u64, outputs: usize, per: usize, family: KernelFamily, trend: TrendMode) -> (TrainingSet, Hyperparameters, Vec<InputPoint>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for l in 0..outputs {
        let mut cells = std::collections::BTreeSet::new();
        while cells.len() < per {
            cells.insert((rng.random_range(60..85u32), rng.random_range(1990..2019i32)));
        }
        pts.extend(cells.into_iter().map(|(a, t)| InputPoint::new(a as f64, t as f64, l)));
    }
    let y: Vec<f64> =
        pts.iter().map(|p| -4.5 + 0.08 * (p.age - 60.0) - 0.01 * (p.year - 1990.0) + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let q = rng.random_range(1..=3usize);
    let a = DMatrix::from_fn(outputs, q, |_, _| rng.random_range(-1.0..1.0));
    let hyp = Hyperparameters {
        kernel: KernelParams::new(
            family,
            [rng.random_range(2.0..30.0), rng.random_range(2.0..30.0), rng.random_range(2.0..30.0)],
            if outputs == 1 { rng.random_range(0.05..2.0) } else { 1.0 },
        )
        .unwrap(),
        coregionalization: if outputs == 1 { CoregionalizationMatrix::single() } else { CoregionalizationMatrix::new(a).unwrap() },
        noise: (0..outputs).map(|_| rng.random_range(1e-4..0.05)).collect(),
    };
    let test: Vec<_> =
        (0..6).map(|i| InputPoint::new(rng.random_range(58.0..88.0f64).round(), rng.random_range(1988.0..2022.0f64).round(), i % outputs)).collect();
    let _ = trend;
    (training(&pts, &y, outputs), hyp, test)
}

fn trend_mode() -> impl Strategy<Value = TrendMode> {
    prop_oneof![Just(TrendMode::PerPopulationIntercept), Just(TrendMode::Shared), Just(TrendMode::Separate)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn matches_dense_oracle(seed in any::<u64>(), outputs in 1..=3usize, per in 3..=12usize, sq in any::<bool>(), trend in trend_mode(), latent in any::<bool>()) {
        let family = if sq { KernelFamily::SqExp } else { KernelFamily::Matern52 };
        let (data, hyp, test) = instance(seed, outputs, per, family, trend);
        let model = FittedModel::from_hyperparameters(&data, hyp.clone(), trend).unwrap();
        let pred = model.predict(&test, true, latent).unwrap();
        let oracle = common::dense_kriging(&hyp, trend, &input_points(&data), &data.outputs, &test, model.jitter, latent);
        let lml = log_marginal_likelihood(&hyp, &data, trend).unwrap();
        prop_assert!((lml - oracle.lml).abs() <= 1e-8 * (1.0 + oracle.lml.abs()), "lml {} vs {}", lml, oracle.lml);
        for i in 0..test.len() {
            prop_assert!((pred.mean[i] - oracle.mean[i]).abs() <= 1e-8 * (1.0 + oracle.mean[i].abs()));
        }
        let cov = pred.covariance.unwrap();
        prop_assert!((cov - &oracle.cov).abs().max() <= 1e-6);
        let beta = DVector::from_column_slice(&model.beta_hat);
        prop_assert!((beta - oracle.beta).abs().max() <= 1e-6);
    }
}

#[test]
fn likelihood_is_finite_across_bounds() {
    let (data, hyp, _) = instance(3, 2, 10, KernelFamily::Matern52, TrendMode::PerPopulationIntercept);
    let b = Bounds::default();
    for i in 0..20 {
        let f = (i as f64 + 0.5) / 20.0;
        let lerp = |(lo, hi): (f64, f64)| (lo.ln() + f * (hi.ln() - lo.ln())).exp();
        let mut h = hyp.clone();
        h.kernel.lengthscales = [lerp(b.lengthscale); 3];
        h.noise = vec![lerp(b.noise); 2];
        let pl = profile_likelihood(&h, &data, TrendMode::PerPopulationIntercept, true).unwrap();
        assert!(pl.log_likelihood.is_finite());
        let g = pl.gradient.unwrap();
        assert!(g.log_lengthscales.iter().chain(&g.log_noise).all(|v| v.is_finite()));
    }
}

#[test]
fn interpolates_at_vanishing_noise() {
    for seed in 0..10 {
        let (data, mut hyp, _) = instance(seed, 1, 20, KernelFamily::Matern52, TrendMode::Shared);
        hyp.noise = vec![1e-12];
        // draw y from the GP itself so the response is representable
        let pts = input_points(&data);
        let k = common::dense_kernel(&hyp, &pts, &pts) + DMatrix::identity(pts.len(), pts.len()) * 1e-10;
        let l = k.cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let z = DVector::from_fn(pts.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (l * z).iter().zip(&pts).map(|(v, p)| v - 4.0 + 0.08 * p.age).collect();
        let data = training(&pts, &y, 1);
        let model = FittedModel::from_hyperparameters(&data, hyp, TrendMode::Shared).unwrap();
        let pred = model.predict(&pts, false, true).unwrap();
        let err = pred.mean.iter().zip(&y).map(|(m, y)| (m - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "seed {seed}: {err}");
        assert!(pred.std.iter().all(|s| *s < 1e-3));
    }
}

#[test]
fn sogp_recovers_noise_and_beats_truth() {
    let truth = Hyperparameters::single_output(KernelParams::new(KernelFamily::Matern52, [6.0, 10.0, 8.0], 0.04).unwrap(), 0.05f64.powi(2));
    let pts: Vec<_> = (60..85).flat_map(|a| (1990..2019).map(move |t| InputPoint::new(a as f64, t as f64, 0))).collect();
    assert_eq!(pts.len(), 725);
    let k = common::dense_kernel(&truth, &pts, &pts) + DMatrix::identity(725, 725) * (truth.noise[0] + 1e-10);
    let l = k.cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let z = DVector::from_fn(725, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = (l * z).iter().zip(&pts).map(|(v, p)| v - 10.0 + 0.09 * p.age).collect();
    let data = training(&pts, &y, 1);
    let config = FitConfig { restarts: 2, seed: 1, ..FitConfig::default() };
    let model = fit(&data, &config).unwrap();
    let sigma = model.hyperparameters.noise[0].sqrt();
    assert!((0.03..=0.08).contains(&sigma), "sigma {sigma}");
    let at_truth = log_marginal_likelihood(&truth, &data, config.trend).unwrap();
    assert!(model.diagnostics.log_likelihood >= at_truth - 1e-6, "{} < {}", model.diagnostics.log_likelihood, at_truth);
}

#[test]
fn constant_response_gives_flat_surface() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<_> = (60..72).flat_map(|a| (2000..2010).map(move |t| InputPoint::new(a as f64, t as f64, 0))).collect();
    let y: Vec<f64> = pts.iter().map(|_| -4.0 + 1e-6 * rng.sample::<f64, _>(StandardNormal)).collect();
    let data = training(&pts, &y, 1);
    let model = fit(&data, &FitConfig { restarts: 2, trend: TrendMode::Shared, ..FitConfig::default() }).unwrap();
    assert!(model.hyperparameters.kernel.variance < 1e-3, "eta2 {}", model.hyperparameters.kernel.variance);
    let grid: Vec<_> = (60..72).flat_map(|a| (1998..2012).map(move |t| InputPoint::new(a as f64, t as f64, 0))).collect();
    let pred = model.predict(&grid, false, true).unwrap();
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let dev = pred.mean.iter().map(|m| (m - ybar).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-3, "max deviation {dev}");
}
