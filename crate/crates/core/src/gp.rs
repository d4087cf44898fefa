//! Profile-likelihood fitting and universal-kriging prediction for single- and
//! multi-output GPs with a generalized-least-squares linear trend.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kernels::{
    cholesky_with_jitter, cross_covariance, icm_covariance, CoregionalizationMatrix, InputPoint, KernelError, KernelFamily, KernelParams,
    JITTER_LADDER,
};
use crate::lifetable::TrainingSet;
use crate::optimize;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, thiserror::Error)]
pub enum GpError {
    #[error("training set is empty")]
    EmptyData,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("all {restarts} restarts failed: {last}")]
    AllRestartsFailed { restarts: usize, last: String },
    #[error("unknown population {0:?}")]
    UnknownPopulation(String),
    #[error("internal invariant breach: {0}")]
    Invariant(String),
    #[error("model file does not match its training data fingerprint")]
    FingerprintMismatch,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// How the linear age trend is shared across the populations of a group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendMode {
    /// One intercept per population and a common age slope.
    #[default]
    PerPopulationIntercept,
    /// A single intercept and slope.
    Shared,
    /// Intercept and slope per population.
    Separate,
}

impl TrendMode {
    pub fn columns(self, outputs: usize) -> usize {
        match self {
            TrendMode::PerPopulationIntercept => outputs + 1,
            TrendMode::Shared => 2,
            TrendMode::Separate => 2 * outputs,
        }
    }

    /// Row of the design matrix for `x` in a group with `outputs` populations.
    pub fn row(self, x: &InputPoint, outputs: usize) -> Vec<f64> {
        let [one, age] = trend_basis(x);
        let mut row = vec![0.0; self.columns(outputs)];
        match self {
            TrendMode::PerPopulationIntercept => {
                row[x.population] = one;
                row[outputs] = age;
            }
            TrendMode::Shared => {
                row[0] = one;
                row[1] = age;
            }
            TrendMode::Separate => {
                row[2 * x.population] = one;
                row[2 * x.population + 1] = age;
            }
        }
        row
    }

    pub fn design(self, points: &[InputPoint], outputs: usize) -> DMatrix<f64> {
        let p = self.columns(outputs);
        let mut h = DMatrix::zeros(points.len(), p);
        for (i, x) in points.iter().enumerate() {
            for (j, v) in self.row(x, outputs).into_iter().enumerate() {
                h[(i, j)] = v;
            }
        }
        h
    }
}

/// Linear-in-age trend basis `(1, age)`.
pub fn trend_basis(x: &InputPoint) -> [f64; 2] {
    [1.0, x.age]
}

/// Kernel, coregionalization loadings and per-population noise variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub kernel: KernelParams,
    pub coregionalization: CoregionalizationMatrix,
    pub noise: Vec<f64>,
}

impl Hyperparameters {
    pub fn single_output(kernel: KernelParams, noise: f64) -> Self {
        Self { kernel, coregionalization: CoregionalizationMatrix::single(), noise: vec![noise] }
    }

    pub fn outputs(&self) -> usize {
        self.coregionalization.outputs()
    }

    pub fn validate(&self) -> Result<(), GpError> {
        self.kernel.validate()?;
        if self.noise.len() != self.outputs() {
            return Err(GpError::InvalidHyperparameters(format!("{} noise variances for {} outputs", self.noise.len(), self.outputs())));
        }
        if let Some(v) = self.noise.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(GpError::InvalidHyperparameters(format!("noise variance {v}")));
        }
        if self.coregionalization.a.iter().any(|v| !v.is_finite()) {
            return Err(GpError::InvalidHyperparameters("non-finite coregionalization loading".into()));
        }
        Ok(())
    }

    /// Noise-free prior variance scale the jitter ladder is relative to.
    pub fn jitter_scale(&self) -> f64 {
        let b = self.coregionalization.b();
        let max_b = (0..b.nrows()).map(|i| b[(i, i)]).fold(0.0, f64::max);
        let s = self.kernel.variance * max_b;
        if s > 0.0 && s.is_finite() {
            s
        } else {
            self.kernel.variance
        }
    }

    /// Smallest jitter ever added before factorization.
    pub fn base_jitter(&self) -> f64 {
        JITTER_LADDER[0] * self.jitter_scale()
    }
}

/// Search box for the positive hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bounds {
    pub lengthscale: (f64, f64),
    pub variance: (f64, f64),
    pub noise: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Self { lengthscale: (1.0, 100.0), variance: (1e-4, 25.0), noise: (1e-8, 1.0) }
    }
}

impl Bounds {
    fn validate(&self) -> Result<(), GpError> {
        for (name, (lo, hi)) in [("lengthscale", self.lengthscale), ("variance", self.variance), ("noise", self.noise)] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(GpError::InvalidConfig(format!("{name} bounds ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub family: KernelFamily,
    /// Coregionalization rank.
    pub q: usize,
    pub bounds: Bounds,
    pub restarts: usize,
    pub seed: u64,
    pub trend: TrendMode,
    pub max_iterations: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            q: 3,
            bounds: Bounds::default(),
            restarts: 10,
            seed: 0,
            trend: TrendMode::default(),
            max_iterations: 500,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), GpError> {
        self.bounds.validate()?;
        if self.q == 0 {
            return Err(GpError::InvalidConfig("q must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(GpError::InvalidConfig("at least one restart is required".into()));
        }
        Ok(())
    }
}

/// Training cells as kernel inputs.
pub fn input_points(data: &TrainingSet) -> Vec<InputPoint> {
    data.inputs.iter().zip(&data.labels).map(|(&(a, t), &l)| InputPoint::new(a as f64, t as f64, l)).collect()
}

/// Gradient of the profile log-likelihood in natural coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodGradient {
    pub log_lengthscales: [f64; 3],
    pub log_variance: f64,
    pub a: DMatrix<f64>,
    pub log_noise: Vec<f64>,
}

/// Profile log-likelihood at fixed hyperparameters.
#[derive(Clone, Debug)]
pub struct ProfileLikelihood {
    pub log_likelihood: f64,
    pub beta_hat: Vec<f64>,
    /// Absolute diagonal jitter that made the covariance factorizable.
    pub jitter: f64,
    pub gradient: Option<LikelihoodGradient>,
}

struct Solved {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    beta: DVector<f64>,
    alpha: DVector<f64>,
    /// `(HᵀK⁻¹H)⁺`.
    g_pinv: DMatrix<f64>,
    lml: f64,
}

/// Factorize `K`, estimate β by GLS (minimum-norm when the whitened design is
/// rank deficient) and evaluate the profile likelihood.
fn solve(points: &[InputPoint], y: &DVector<f64>, h: &DMatrix<f64>, hyp: &Hyperparameters) -> Result<Solved, GpError> {
    let k = icm_covariance(points, &hyp.coregionalization, &hyp.kernel, Some(&hyp.noise))?;
    let (chol, jitter) = cholesky_with_jitter(&k, hyp.jitter_scale())?;
    let l = chol.l_dirty();
    let ht = l.solve_lower_triangular(h).ok_or_else(|| GpError::Invariant("triangular solve failed".into()))?;
    let yt = l.solve_lower_triangular(y).ok_or_else(|| GpError::Invariant("triangular solve failed".into()))?;
    let p = h.ncols();
    let (beta, g_pinv) = if p == 0 {
        (DVector::zeros(0), DMatrix::zeros(0, 0))
    } else {
        let svd = ht.clone().svd(true, true);
        let u = svd.u.as_ref().expect("requested U");
        let vt = svd.v_t.as_ref().expect("requested Vᵀ");
        let smax = svd.singular_values.max();
        let tol = smax * f64::EPSILON * (ht.nrows().max(p) as f64);
        let mut beta = DVector::zeros(p);
        let mut g = DMatrix::zeros(p, p);
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s <= tol {
                continue;
            }
            let v = vt.row(i).transpose();
            beta += &v * (u.column(i).dot(&yt) / s);
            g += &v * v.transpose() / (s * s);
        }
        (beta, g)
    };
    let resid_w = &yt - &ht * &beta;
    let r = y - h * &beta;
    let alpha = chol.solve(&r);
    let n = y.len() as f64;
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let lml = -0.5 * resid_w.norm_squared() - 0.5 * log_det - 0.5 * n * LN_2PI;
    if !lml.is_finite() {
        return Err(GpError::Invariant("non-finite log-likelihood".into()));
    }
    Ok(Solved { chol, jitter, beta, alpha, g_pinv, lml })
}

fn gradient(points: &[InputPoint], hyp: &Hyperparameters, s: &Solved) -> LikelihoodGradient {
    let kinv = s.chol.inverse();
    let alpha = &s.alpha;
    let w = |i: usize, j: usize| 0.5 * (alpha[i] * alpha[j] - kinv[(i, j)]);
    let b = hyp.coregionalization.b();
    let eta2 = hyp.kernel.variance;
    let nl = hyp.outputs();
    let mut g_theta = [0.0; 3];
    let mut g_eta = 0.0;
    let mut m = DMatrix::zeros(nl, nl);
    let mut diag_w = vec![0.0; nl];
    for i in 0..points.len() {
        let li = points[i].population;
        diag_w[li] += w(i, i);
        for j in 0..=i {
            let lj = points[j].population;
            let (c, dc) = hyp.kernel.correlation_with_grad(&points[i], &points[j]);
            let wij = w(i, j);
            let mult = if i == j { 1.0 } else { 2.0 };
            let scale = mult * wij * eta2 * b[(li, lj)];
            for k in 0..3 {
                g_theta[k] += scale * dc[k];
            }
            g_eta += scale * c;
            m[(li, lj)] += wij * c;
            if i != j {
                m[(lj, li)] += wij * c;
            }
        }
    }
    let a = &hyp.coregionalization.a;
    let g_a = (&m * a) * (2.0 * eta2);
    LikelihoodGradient {
        log_lengthscales: g_theta,
        log_variance: g_eta,
        a: g_a,
        log_noise: diag_w.iter().zip(&hyp.noise).map(|(w, s2)| w * s2).collect(),
    }
}

fn check_data(data: &TrainingSet, outputs: usize) -> Result<(), GpError> {
    if data.is_empty() {
        return Err(GpError::EmptyData);
    }
    if data.labels.iter().any(|&l| l >= outputs) || data.population_count() != outputs {
        return Err(GpError::InvalidHyperparameters(format!(
            "{} populations in data, {outputs} outputs in the coregionalization",
            data.population_count()
        )));
    }
    Ok(())
}

/// Profile log-likelihood `−½ rᵀK⁻¹r − ½ log|K| − (n/2) log 2π` with the trend
/// replaced by its GLS estimate.
pub fn log_marginal_likelihood(hyp: &Hyperparameters, data: &TrainingSet, trend: TrendMode) -> Result<f64, GpError> {
    Ok(profile_likelihood(hyp, data, trend, false)?.log_likelihood)
}

pub fn profile_likelihood(hyp: &Hyperparameters, data: &TrainingSet, trend: TrendMode, with_gradient: bool) -> Result<ProfileLikelihood, GpError> {
    hyp.validate()?;
    check_data(data, hyp.outputs())?;
    let points = input_points(data);
    let y = DVector::from_column_slice(&data.outputs);
    let h = trend.design(&points, hyp.outputs());
    let s = solve(&points, &y, &h, hyp)?;
    let gradient = with_gradient.then(|| gradient(&points, hyp, &s));
    Ok(ProfileLikelihood { log_likelihood: s.lml, beta_hat: s.beta.iter().copied().collect(), jitter: s.jitter, gradient })
}

/// Maps the optimizer vector to hyperparameters. Positive quantities are
/// optimized as logarithms and held inside their bounds by a quadratic wall;
/// the entries of `A` are free. η² stays free for multi-output fits too (its
/// redundancy with the scale of `A` straightens the variance-lengthscale
/// ridge) and is folded into `A` afterwards.
struct Layout {
    outputs: usize,
    q: usize,
    family: KernelFamily,
    bounds: Bounds,
}

/// Curvature of the quadratic wall outside the bounds, in units of the
/// per-observation objective per squared log-parameter.
const WALL: f64 = 1.0;

impl Layout {
    fn free_a(&self) -> bool {
        self.outputs > 1
    }

    fn len(&self) -> usize {
        4 + if self.free_a() { self.outputs * self.q } else { 0 } + self.outputs
    }

    /// Log-space bounds for each coordinate; `None` for the free entries of `A`.
    fn coordinate_bounds(&self) -> Vec<Option<(f64, f64)>> {
        let log = |(lo, hi): (f64, f64)| Some((lo.ln(), hi.ln()));
        let mut out = vec![log(self.bounds.lengthscale); 4];
        out[3] = log(self.bounds.variance);
        if self.free_a() {
            out.extend(std::iter::repeat_n(None, self.outputs * self.q));
        }
        out.extend(std::iter::repeat_n(log(self.bounds.noise), self.outputs));
        out
    }

    /// Quadratic penalty on log-parameters outside their bounds, and its gradient.
    fn wall(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let grad = u
            .iter()
            .zip(self.coordinate_bounds())
            .map(|(&x, b)| match b {
                Some((_, hi)) if x > hi => {
                    value += 0.5 * WALL * (x - hi).powi(2);
                    WALL * (x - hi)
                }
                Some((lo, _)) if x < lo => {
                    value += 0.5 * WALL * (lo - x).powi(2);
                    -WALL * (lo - x)
                }
                _ => 0.0,
            })
            .collect();
        (value, grad)
    }

    fn clamp(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.coordinate_bounds()).map(|(&x, b)| b.map_or(x, |(lo, hi)| x.clamp(lo, hi))).collect()
    }

    /// Hyperparameters from coordinates: log-parameters, then `A` row-major,
    /// then log-noise.
    fn unpack(&self, u: &[f64]) -> Hyperparameters {
        let mut it = 0;
        let mut next = || {
            it += 1;
            u[it - 1].exp()
        };
        let ls = [next(), next(), next()];
        let variance = next();
        let a = if self.free_a() {
            let a = DMatrix::from_fn(self.outputs, self.q, |l, q| u[it + l * self.q + q]);
            it += self.outputs * self.q;
            a
        } else {
            DMatrix::from_element(1, 1, 1.0)
        };
        let noise: Vec<f64> = u[it..it + self.outputs].iter().map(|v| v.exp()).collect();
        Hyperparameters {
            kernel: KernelParams { family: self.family, lengthscales: ls, variance },
            coregionalization: CoregionalizationMatrix { a },
            noise,
        }
    }

    fn pack_gradient(&self, g: &LikelihoodGradient) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&g.log_lengthscales);
        out.push(g.log_variance);
        if self.free_a() {
            for l in 0..self.outputs {
                for q in 0..self.q {
                    out.push(g.a[(l, q)]);
                }
            }
        }
        out.extend_from_slice(&g.log_noise);
        out
    }

    fn initial(&self, restart: usize, seed: u64, signal: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let spread = if restart == 0 { 0.0 } else { 1.0 };
        let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        let mut u = Vec::with_capacity(self.len());
        for _ in 0..3 {
            u.push(10.0f64.ln() + spread * normal(&mut rng));
        }
        u.push(signal.ln() + spread * normal(&mut rng));
        if self.free_a() {
            let scale = (1.0 / self.q as f64).sqrt();
            for _ in 0..self.outputs {
                for q in 0..self.q {
                    let shared = if q == 0 { 1.0 } else { 0.0 };
                    u.push(scale * (shared + 0.5 * normal(&mut rng)));
                }
            }
        }
        for _ in 0..self.outputs {
            u.push((0.1 * signal).ln() + spread * normal(&mut rng));
        }
        u
    }
}

/// Residual variance of the ordinary least-squares trend fit.
fn trend_residual_variance(y: &DVector<f64>, h: &DMatrix<f64>) -> f64 {
    let n = y.len();
    let resid = match h.clone().svd(true, true).solve(y, 1e-10) {
        Ok(beta) => y - h * beta,
        Err(_) => y.add_scalar(-y.mean()),
    };
    let v = resid.norm_squared() / n.max(1) as f64;
    if v.is_finite() && v > 1e-8 {
        v
    } else {
        1e-4
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart: usize,
    pub log_likelihood: Option<f64>,
    pub iterations: u64,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub log_likelihood: f64,
    pub iterations: u64,
    pub restart: usize,
    pub converged: bool,
    pub restarts: Vec<RestartRecord>,
}

/// Cached solve at the stored hyperparameters.
#[derive(Clone, Debug)]
struct Factorization {
    points: Vec<InputPoint>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    h: DMatrix<f64>,
    g_pinv: DMatrix<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedModel {
    pub hyperparameters: Hyperparameters,
    pub trend: TrendMode,
    pub beta_hat: Vec<f64>,
    pub jitter: f64,
    pub diagnostics: FitDiagnostics,
    /// SHA-256 of the training set in its canonical CSV form.
    pub data_fingerprint: String,
    pub training: TrainingSet,
    #[serde(skip)]
    cache: OnceLock<Factorization>,
}

/// SHA-256 of the canonical training CSV.
pub fn data_fingerprint(data: &TrainingSet) -> String {
    let mut buf = Vec::new();
    data.write_csv(&mut buf).expect("writing to memory cannot fail");
    hex::encode(Sha256::digest(&buf))
}

/// Maximize the profile likelihood over seeded restarts. The first restart
/// starts from a data-scaled default, the others from random perturbations.
pub fn fit(data: &TrainingSet, config: &FitConfig) -> Result<FittedModel, GpError> {
    config.validate()?;
    if data.is_empty() {
        return Err(GpError::EmptyData);
    }
    let outputs = data.population_count();
    if outputs == 0 || data.labels.iter().any(|&l| l >= outputs) {
        return Err(GpError::InvalidConfig("population labels out of range".into()));
    }
    let layout = Layout { outputs, q: config.q, family: config.family, bounds: config.bounds };
    let points = input_points(data);
    let y = DVector::from_column_slice(&data.outputs);
    let h = config.trend.design(&points, outputs);
    let signal = trend_residual_variance(&y, &h).clamp(config.bounds.variance.0, config.bounds.variance.1);

    // Per-observation scale keeps the first quasi-Newton step O(1) in log
    // coordinates instead of O(n).
    let scale = 1.0 / data.len() as f64;
    let objective = |u: &[f64]| -> Result<(f64, Vec<f64>), GpError> {
        let hyp = layout.unpack(u);
        let s = solve(&points, &y, &h, &hyp)?;
        let g = gradient(&points, &hyp, &s);
        let (wall, wall_grad) = layout.wall(u);
        let grad = layout.pack_gradient(&g).into_iter().zip(wall_grad).map(|(v, w)| -v * scale + w).collect();
        Ok((-s.lml * scale + wall, grad))
    };

    let runs: Vec<(RestartRecord, Option<Vec<f64>>)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let u0 = layout.initial(r, config.seed, signal);
            let failed = |e: String| (RestartRecord { restart: r, log_likelihood: None, iterations: 0, converged: false, error: Some(e) }, None);
            let out = match optimize::minimize(objective, u0, config.max_iterations) {
                Ok(out) => out,
                Err(e) => return failed(e),
            };
            // score the in-bounds point actually reported, without the wall
            let x = layout.clamp(&out.x);
            match solve(&points, &y, &h, &layout.unpack(&x)) {
                Ok(s) => (
                    RestartRecord { restart: r, log_likelihood: Some(s.lml), iterations: out.iterations, converged: out.converged, error: None },
                    Some(x),
                ),
                Err(e) => failed(e.to_string()),
            }
        })
        .collect();

    let best = runs.iter().filter_map(|(rec, x)| Some((rec, x.as_ref()?, rec.log_likelihood?))).fold(
        None::<(&RestartRecord, &Vec<f64>, f64)>,
        |acc, cur| match acc {
            Some(a) if a.2 >= cur.2 => Some(a),
            _ => Some(cur),
        },
    );
    let Some((best_rec, best_u, _)) = best else {
        let last = runs.iter().rev().find_map(|(r, _)| r.error.clone()).unwrap_or_default();
        return Err(GpError::AllRestartsFailed { restarts: config.restarts, last });
    };
    if !best_rec.converged {
        log::warn!("best restart {} did not report convergence", best_rec.restart);
    }

    let mut hyp = layout.unpack(best_u);
    if layout.free_a() {
        // η² and the scale of A are redundant while optimizing; store B = AAᵀ with η² = 1
        hyp.coregionalization.a *= hyp.kernel.variance.sqrt();
        hyp.kernel.variance = 1.0;
    }
    hyp.coregionalization = hyp.coregionalization.canonical();
    let s = solve(&points, &y, &h, &hyp)?;
    let diagnostics = FitDiagnostics {
        log_likelihood: s.lml,
        iterations: best_rec.iterations,
        restart: best_rec.restart,
        converged: best_rec.converged,
        restarts: runs.into_iter().map(|(r, _)| r).collect(),
    };
    let model = FittedModel {
        hyperparameters: hyp,
        trend: config.trend,
        beta_hat: s.beta.iter().copied().collect(),
        jitter: s.jitter,
        diagnostics,
        data_fingerprint: data_fingerprint(data),
        training: data.clone(),
        cache: OnceLock::new(),
    };
    let _ = model.cache.set(Factorization { points, chol: s.chol, alpha: s.alpha, h, g_pinv: s.g_pinv });
    Ok(model)
}

/// Posterior mean, standard deviation and optional joint covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    pub points: Vec<InputPoint>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub covariance: Option<DMatrix<f64>>,
}

impl FittedModel {
    /// Build a model at fixed hyperparameters without optimizing.
    pub fn from_hyperparameters(data: &TrainingSet, hyperparameters: Hyperparameters, trend: TrendMode) -> Result<Self, GpError> {
        hyperparameters.validate()?;
        check_data(data, hyperparameters.outputs())?;
        let points = input_points(data);
        let y = DVector::from_column_slice(&data.outputs);
        let h = trend.design(&points, hyperparameters.outputs());
        let s = solve(&points, &y, &h, &hyperparameters)?;
        let model = Self {
            hyperparameters,
            trend,
            beta_hat: s.beta.iter().copied().collect(),
            jitter: s.jitter,
            diagnostics: FitDiagnostics { log_likelihood: s.lml, iterations: 0, restart: 0, converged: true, restarts: Vec::new() },
            data_fingerprint: data_fingerprint(data),
            training: data.clone(),
            cache: OnceLock::new(),
        };
        let _ = model.cache.set(Factorization { points, chol: s.chol, alpha: s.alpha, h, g_pinv: s.g_pinv });
        Ok(model)
    }

    pub fn outputs(&self) -> usize {
        self.hyperparameters.outputs()
    }

    pub fn population_index(&self, name: &str) -> Result<usize, GpError> {
        self.training.populations.iter().position(|p| p == name).ok_or_else(|| GpError::UnknownPopulation(name.to_string()))
    }

    /// Cross-population correlation matrix implied by `B`.
    pub fn correlations(&self) -> DMatrix<f64> {
        self.hyperparameters.coregionalization.correlations()
    }

    fn factorization(&self) -> Result<&Factorization, GpError> {
        if let Some(f) = self.cache.get() {
            return Ok(f);
        }
        let points = input_points(&self.training);
        let y = DVector::from_column_slice(&self.training.outputs);
        let h = self.trend.design(&points, self.outputs());
        let s = solve(&points, &y, &h, &self.hyperparameters)?;
        let beta_err = s.beta.iter().zip(&self.beta_hat).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())).fold(0.0, f64::max);
        if s.beta.len() != self.beta_hat.len() || beta_err > 1e-6 || (s.jitter - self.jitter).abs() > 1e-12 * (1.0 + self.jitter) {
            return Err(GpError::Invariant("stored trend or jitter is inconsistent with the hyperparameters".into()));
        }
        let _ = self.cache.set(Factorization { points, chol: s.chol, alpha: s.alpha, h, g_pinv: s.g_pinv });
        Ok(self.cache.get().expect("just set"))
    }

    /// Universal-kriging posterior at `points`. `latent_only` drops the
    /// observation noise from the variance.
    pub fn predict(&self, points: &[InputPoint], with_covariance: bool, latent_only: bool) -> Result<PosteriorPrediction, GpError> {
        let f = self.factorization()?;
        let hyp = &self.hyperparameters;
        let l = self.outputs();
        if let Some(p) = points.iter().find(|p| p.population >= l) {
            return Err(GpError::InvalidConfig(format!("population index {} with {l} outputs", p.population)));
        }
        let m = points.len();
        let ks = cross_covariance(points, &f.points, &hyp.coregionalization, &hyp.kernel)?;
        let hs = self.trend.design(points, l);
        let beta = DVector::from_column_slice(&self.beta_hat);
        let mean = &hs * &beta + &ks * &f.alpha;

        let v = f.chol.l_dirty().solve_lower_triangular(&ks.transpose()).ok_or_else(|| GpError::Invariant("triangular solve failed".into()))?;
        // Rᵀ = h* − k*K⁻¹H
        let kinv_h = f.chol.solve(&f.h);
        let rt = &hs - &ks * &kinv_h;
        let rg = &rt * &f.g_pinv;
        let prior_diag = |i: usize| {
            let b = hyp.coregionalization.b();
            b[(points[i].population, points[i].population)] * hyp.kernel.variance
        };
        let noise = |i: usize| if latent_only { 0.0 } else { hyp.noise[points[i].population] };

        let (std, covariance) = if with_covariance {
            let prior = cross_covariance(points, points, &hyp.coregionalization, &hyp.kernel)?;
            let mut c = prior - v.transpose() * &v + &rg * rt.transpose();
            for i in 0..m {
                c[(i, i)] += noise(i);
            }
            c = (&c + c.transpose()) * 0.5;
            let std = (0..m).map(|i| c[(i, i)].max(0.0).sqrt()).collect();
            (std, Some(c))
        } else {
            let std = (0..m)
                .map(|i| {
                    let var = prior_diag(i) - v.column(i).norm_squared() + rg.row(i).dot(&rt.row(i)) + noise(i);
                    var.max(0.0).sqrt()
                })
                .collect();
            (std, None)
        };
        Ok(PosteriorPrediction { points: points.to_vec(), mean: mean.iter().copied().collect(), std, covariance })
    }

    pub fn to_json(&self) -> Result<String, GpError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reload a serialized model, checking the stored fingerprint against the
    /// embedded training data.
    pub fn from_json(text: &str) -> Result<Self, GpError> {
        let model: FittedModel = serde_json::from_str(text)?;
        model.verify()?;
        Ok(model)
    }

    /// Check a deserialized model: valid hyperparameters and a fingerprint that
    /// matches the embedded training data.
    pub fn verify(&self) -> Result<(), GpError> {
        self.hyperparameters.validate()?;
        check_data(&self.training, self.outputs())?;
        if data_fingerprint(&self.training) != self.data_fingerprint {
            return Err(GpError::FingerprintMismatch);
        }
        Ok(())
    }
}
