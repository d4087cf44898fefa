mod common;

use mortgp::kernels::{apc_kernel, cholesky_with_jitter, icm_covariance, matern52, sqexp};
use mortgp::{CoregionalizationMatrix, Hyperparameters, InputPoint, KernelFamily, KernelParams};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![Just(KernelFamily::Matern52), Just(KernelFamily::SqExp)]
}

fn params() -> impl Strategy<Value = KernelParams> {
    (family(), 1.0..100.0f64, 1.0..100.0f64, 1.0..100.0f64, 1e-3..25.0f64).prop_map(|(f, a, t, c, v)| KernelParams::new(f, [a, t, c], v).unwrap())
}

fn point(l: usize) -> impl Strategy<Value = InputPoint> {
    (60.0..85.0f64, 1990.0..2019.0f64, 0..l).prop_map(|(a, t, p)| InputPoint::new(a, t, p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn base_kernels_are_monotone_and_bounded(theta in 0.5..50.0f64, d1 in 0.0..10.0f64, step in 0.0..10.0f64) {
        let d2 = d1 + step;
        for f in [matern52, sqexp] {
            let (k1, k2) = (f(d1, theta).unwrap(), f(d2, theta).unwrap());
            prop_assert!(k1 > 0.0 && k1 <= 1.0);
            prop_assert!(k2 <= k1);
        }
    }

    #[test]
    fn apc_is_product_of_factors(p in params(), x in point(1), y in point(1)) {
        let base = match p.family {
            KernelFamily::Matern52 => matern52,
            KernelFamily::SqExp => sqexp,
        };
        let factors = base(x.age - y.age, p.lengthscales[0]).unwrap()
            * base(x.year - y.year, p.lengthscales[1]).unwrap()
            * base(x.cohort() - y.cohort(), p.lengthscales[2]).unwrap();
        let got = apc_kernel(&x, &y, &p);
        prop_assert!((got - p.variance * factors).abs() <= 1e-14 * got.max(f64::MIN_POSITIVE));
        // independent closed form; exp amplifies argument rounding by |ln k|
        let expect = common::kernel_entry(&Hyperparameters::single_output(p, 0.0), &x, &y);
        if expect > 1e-250 {
            prop_assert!((got - expect).abs() <= 1e-14 * expect * (1.0 + expect.ln().abs()));
        }
    }

    #[test]
    fn apc_is_translation_invariant(p in params(), x in point(1), y in point(1), da in -20.0..20.0f64, dt in -50.0..50.0f64) {
        let shift = |q: &InputPoint| InputPoint::new(q.age + da, q.year + dt, q.population);
        let a = apc_kernel(&x, &y, &p);
        let b = apc_kernel(&shift(&x), &shift(&y), &p);
        if a > 1e-250 {
            prop_assert!((a - b).abs() <= 1e-12 * a * (1.0 + a.ln().abs()));
        }
    }

    #[test]
    fn icm_is_symmetric_and_factorizes(
        p in params(),
        pts in prop::collection::vec(point(3), 1..40),
        a in prop::collection::vec(-2.0..2.0f64, 6),
    ) {
        let coreg = CoregionalizationMatrix::new(DMatrix::from_row_slice(3, 2, &a)).unwrap();
        let k = icm_covariance(&pts, &coreg, &p, None).unwrap();
        prop_assert_eq!(&k, &k.transpose());
        let hyp = Hyperparameters { kernel: p, coregionalization: coreg, noise: vec![0.0; 3] };
        let (_, jitter) = cholesky_with_jitter(&k, hyp.jitter_scale()).unwrap();
        prop_assert!(jitter <= 1e-6 * hyp.jitter_scale());
    }
}

#[test]
fn icm_single_output_matches_apc() {
    let p = KernelParams::new(KernelFamily::Matern52, [5.0, 7.0, 9.0], 0.8).unwrap();
    let pts: Vec<_> = (0..10).map(|i| InputPoint::new(60.0 + i as f64, 1990.0 + (i * 3 % 7) as f64, 0)).collect();
    let k = icm_covariance(&pts, &CoregionalizationMatrix::single(), &p, None).unwrap();
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            assert_eq!(k[(i, j)], apc_kernel(&pts[i], &pts[j], &p));
        }
    }
}

#[test]
fn icm_matches_kronecker_construction() {
    let a = DMatrix::from_row_slice(3, 2, &[0.7, -0.2, 0.1, 0.9, -0.5, 0.4]);
    let coreg = CoregionalizationMatrix::new(a).unwrap();
    let p = KernelParams::new(KernelFamily::SqExp, [4.0, 6.0, 8.0], 1.3).unwrap();
    let grid: Vec<(f64, f64)> = vec![(60.0, 1990.0), (62.0, 1993.0), (65.0, 1991.0), (70.0, 2000.0)];
    let pts: Vec<_> = (0..3).flat_map(|l| grid.iter().map(move |&(a, t)| InputPoint::new(a, t, l))).collect();
    let k = icm_covariance(&pts, &coreg, &p, None).unwrap();
    let base: Vec<_> = grid.iter().map(|&(a, t)| InputPoint::new(a, t, 0)).collect();
    let c = DMatrix::from_fn(4, 4, |i, j| apc_kernel(&base[i], &base[j], &p));
    let kron = coreg.b().kronecker(&c);
    assert!((k - kron).abs().max() < 1e-14);
}

#[test]
fn icm_rank_is_bounded_by_q_times_n() {
    let a = DMatrix::from_row_slice(3, 1, &[0.7, -0.2, 1.1]);
    let coreg = CoregionalizationMatrix::new(a).unwrap();
    let p = KernelParams::new(KernelFamily::Matern52, [3.0, 3.0, 3.0], 1.0).unwrap();
    let grid: Vec<(f64, f64)> = (0..5).map(|i| (60.0 + 2.0 * i as f64, 1990.0 + 3.0 * i as f64)).collect();
    let pts: Vec<_> = (0..3).flat_map(|l| grid.iter().map(move |&(a, t)| InputPoint::new(a, t, l))).collect();
    let k = icm_covariance(&pts, &coreg, &p, None).unwrap();
    let sv = k.singular_values();
    let rank = sv.iter().filter(|&&s| s > 1e-10 * sv.max()).count();
    assert!(rank <= 5, "rank {rank}");
}

#[test]
fn identity_loadings_decouple_outputs() {
    let p = KernelParams::new(KernelFamily::Matern52, [3.0, 3.0, 3.0], 1.0).unwrap();
    let pts: Vec<_> = (0..8).map(|i| InputPoint::new(60.0 + i as f64, 1995.0, i % 3)).collect();
    let k = icm_covariance(&pts, &CoregionalizationMatrix::identity(3), &p, Some(&[0.1, 0.2, 0.3])).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            if pts[i].population != pts[j].population {
                assert_eq!(k[(i, j)], 0.0);
            }
        }
        assert_eq!(k[(i, i)], 1.0 + [0.1, 0.2, 0.3][pts[i].population]);
    }
}
