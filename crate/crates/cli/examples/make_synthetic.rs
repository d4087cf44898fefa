//! Regenerate the bundled synthetic inputs.
//!
//! ```text
//! cargo run -p mortgp-cli --example make_synthetic -- data/synthetic
//! ```
//!
//! Three latent state factors drive both the covariates and the mortality
//! surfaces, so groups, rankings and correlations have structure to find.
//! Deaths are Poisson draws around a Gompertz-like log-linear surface.

use std::fmt::Write as _;
use std::path::PathBuf;

use mortgp::covariates::COVARIATE_IDS;
use mortgp::StateId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

const SEED: u64 = 20181;
const AGES: std::ops::RangeInclusive<u32> = 62..=68;
const YEARS: std::ops::RangeInclusive<i32> = 2010..=2018;

/// Approximate 2018 resident populations, millions.
const POPULATION_M: [f64; 51] = [
    0.74, 4.89, 3.01, 7.17, 39.56, 5.70, 3.57, 0.70, 0.97, 21.30, 10.52, 1.42, 3.16, 1.75, 12.74, 6.69, 2.91, 4.47, 4.66, 6.90, 6.04, 1.34, 9.99,
    5.61, 6.13, 2.99, 1.06, 10.38, 0.76, 1.93, 1.36, 8.91, 2.10, 3.03, 19.54, 11.69, 3.94, 4.19, 12.81, 1.06, 5.08, 0.88, 6.77, 28.70, 3.16, 8.52,
    0.63, 7.54, 5.81, 1.81, 0.58,
];

fn main() -> std::io::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/synthetic"));
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    let factors: Vec<[f64; 3]> =
        StateId::ALL.iter().map(|_| [std_normal.sample(&mut rng), std_normal.sample(&mut rng), std_normal.sample(&mut rng)]).collect();
    let weights: Vec<[f64; 3]> =
        COVARIATE_IDS.iter().map(|_| [std_normal.sample(&mut rng), 0.7 * std_normal.sample(&mut rng), 0.5 * std_normal.sample(&mut rng)]).collect();

    let mut covariates = String::from("state");
    for id in COVARIATE_IDS {
        write!(covariates, ",{id}").unwrap();
    }
    covariates.push('\n');
    let mut populations = String::from("state,population\n");
    let mut life = String::from("state,e0\n");
    for (i, s) in StateId::ALL.iter().enumerate() {
        let f = factors[i];
        covariates.push_str(s.code());
        for w in &weights {
            let v = 10.0 + w[0] * f[0] + w[1] * f[1] + w[2] * f[2] + 0.4 * std_normal.sample(&mut rng);
            write!(covariates, ",{v:.6}").unwrap();
        }
        covariates.push('\n');
        writeln!(populations, "{},{}", s.code(), (POPULATION_M[i] * 1e6).round()).unwrap();
        writeln!(life, "{},{:.3}", s.code(), 78.8 + 1.1 * f[0] - 0.3 * f[1] + 0.2 * std_normal.sample(&mut rng)).unwrap();
    }

    let mut mortality = String::from("PopName,Sex,Year,Age,Deaths,Exposure\n");
    for (i, s) in StateId::ALL.iter().enumerate() {
        let f = factors[i];
        let level = -4.3 - 0.12 * f[0] + 0.05 * f[1];
        let improvement = 0.012 + 0.004 * f[2];
        for (sex, offset, extra_improvement, share) in [("f", 0.0, 0.0, 0.0125), ("m", 0.38, 0.004, 0.0115)] {
            for age in AGES {
                for year in YEARS {
                    let da = age as f64 - 65.0;
                    let dt = year as f64 - 2014.0;
                    let log_rate = level + offset + 0.09 * da - (improvement + extra_improvement) * dt + 0.01 * (0.7 * dt).sin();
                    let exposure = (POPULATION_M[i] * 1e6 * share * (-0.03 * da).exp()).round();
                    let expected = exposure * log_rate.exp();
                    let deaths = Poisson::new(expected).expect("positive mean").sample(&mut rng).max(1.0);
                    writeln!(mortality, "{},{sex},{year},{age},{deaths},{exposure}", s.code()).unwrap();
                }
            }
        }
    }

    for (name, text) in
        [("mortality.csv", mortality), ("covariates.csv", covariates), ("populations.csv", populations), ("life_expectancy.csv", life)]
    {
        std::fs::write(dir.join(name), text)?;
    }
    println!("wrote synthetic inputs to {}", dir.display());
    Ok(())
}
