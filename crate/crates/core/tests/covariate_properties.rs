mod common;

use mortgp::{CovariateTable, StateId};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn table(seed: u64, n: usize, p: usize) -> CovariateTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a few shared factors give a spread-out spectrum
    let f = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w = DMatrix::from_fn(3, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = DMatrix::from_fn(n, p, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let values = f * w + noise;
    CovariateTable::new(StateId::ALL[..n].to_vec(), (0..p).map(|j| format!("C{j}")).collect(), values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn pca_matches_jacobi_oracle(seed in any::<u64>(), n in 20..=51usize, p in 2..=18usize) {
        let t = table(seed, n, p);
        let pca = t.pca(1).unwrap();
        let (values, vectors) = common::jacobi_eigen(&common::correlation_matrix(&t.values));
        let sum: f64 = pca.all_eigenvalues.iter().sum();
        prop_assert!((sum - p as f64).abs() < 1e-8);
        for c in 0..p {
            prop_assert!((pca.all_eigenvalues[c] - values[c]).abs() < 1e-8, "eigenvalue {}", c);
            // only well-separated components have a defined direction
            let gap = [c.checked_sub(1).map(|i| values[i] - values[c]), values.get(c + 1).map(|v| values[c] - v)]
                .into_iter().flatten().fold(f64::INFINITY, f64::min);
            if gap > 1e-4 {
                let ours = common::sign_canonical(pca.rotation.column(c).into_owned());
                let oracle = common::sign_canonical(DVector::from_iterator(p, vectors.column(c).iter().copied()));
                prop_assert!((ours - oracle).abs().max() < 1e-8 / gap.min(1.0), "component {}", c);
            }
        }
        let back = pca.reconstruct();
        prop_assert!((back - &pca.standardized).abs().max() < 1e-9);
    }

    #[test]
    fn distance_is_a_metric(seed in any::<u64>(), k in 1..=3usize, i in 0..51usize, j in 0..51usize, l in 0..51usize) {
        let t = table(seed, 51, 18);
        let pca = t.pca(k).unwrap();
        let (a, b, c) = (StateId::ALL[i], StateId::ALL[j], StateId::ALL[l]);
        let d = |x, y| pca.distance(x, y).unwrap();
        prop_assert!(d(a, b) >= 0.0);
        prop_assert_eq!(d(a, b), d(b, a));
        prop_assert_eq!(d(a, a), 0.0);
        prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-12 * (1.0 + d(a, c)));
    }
}
