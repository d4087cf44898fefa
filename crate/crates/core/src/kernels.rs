//! Base kernels, the age-period-cohort product kernel, and the ICM covariance.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("non-finite kernel input: {0}")]
    NonFinite(&'static str),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("covariance is not positive definite at jitter {0:e}")]
    NotPositiveDefinite(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Matern52,
    SqExp,
}

impl KernelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelFamily::Matern52 => "matern52",
            KernelFamily::SqExp => "sqexp",
        }
    }

    /// Unit-variance correlation at distance `d`; inputs are assumed valid.
    #[inline]
    pub(crate) fn eval(self, d: f64, theta: f64) -> f64 {
        match self {
            KernelFamily::Matern52 => {
                let r = 5f64.sqrt() * d / theta;
                (1.0 + r + r * r / 3.0) * (-r).exp()
            }
            KernelFamily::SqExp => {
                let u = d / theta;
                (-0.5 * u * u).exp()
            }
        }
    }

    /// `θ ∂k/∂θ`, the derivative with respect to `log θ`.
    #[inline]
    pub(crate) fn dlog_theta(self, d: f64, theta: f64) -> f64 {
        match self {
            KernelFamily::Matern52 => {
                let r = 5f64.sqrt() * d / theta;
                r * r / 3.0 * (1.0 + r) * (-r).exp()
            }
            KernelFamily::SqExp => {
                let u = d / theta;
                u * u * (-0.5 * u * u).exp()
            }
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "matern52" | "m52" => Ok(KernelFamily::Matern52),
            "sqexp" | "se" | "rbf" => Ok(KernelFamily::SqExp),
            other => Err(format!("unknown kernel family {other:?}")),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_args(d: f64, theta: f64) -> Result<(), KernelError> {
    if !d.is_finite() {
        return Err(KernelError::NonFinite("distance"));
    }
    if !theta.is_finite() {
        return Err(KernelError::NonFinite("lengthscale"));
    }
    if theta <= 0.0 {
        return Err(KernelError::NonPositive { name: "lengthscale", value: theta });
    }
    Ok(())
}

/// Matérn-5/2 correlation `(1 + √5 d/θ + 5d²/(3θ²)) exp(−√5 d/θ)`.
pub fn matern52(d: f64, theta: f64) -> Result<f64, KernelError> {
    check_args(d, theta)?;
    Ok(KernelFamily::Matern52.eval(d.abs(), theta))
}

/// Squared-exponential correlation `exp(−d²/(2θ²))`.
pub fn sqexp(d: f64, theta: f64) -> Result<f64, KernelError> {
    check_args(d, theta)?;
    Ok(KernelFamily::SqExp.eval(d.abs(), theta))
}

/// One observation location. Cohort is always derived from year and age.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputPoint {
    pub age: f64,
    pub year: f64,
    pub population: usize,
}

impl InputPoint {
    pub fn new(age: f64, year: f64, population: usize) -> Self {
        Self { age, year, population }
    }

    #[inline]
    pub fn cohort(&self) -> f64 {
        self.year - self.age
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub family: KernelFamily,
    /// Age, year and cohort lengthscales.
    pub lengthscales: [f64; 3],
    pub variance: f64,
}

impl KernelParams {
    pub fn new(family: KernelFamily, lengthscales: [f64; 3], variance: f64) -> Result<Self, KernelError> {
        let p = Self { family, lengthscales, variance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        for (name, v) in [
            ("age lengthscale", self.lengthscales[0]),
            ("year lengthscale", self.lengthscales[1]),
            ("cohort lengthscale", self.lengthscales[2]),
            ("process variance", self.variance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(KernelError::NonPositive { name, value: v });
            }
        }
        Ok(())
    }

    #[inline]
    fn deltas(x: &InputPoint, y: &InputPoint) -> [f64; 3] {
        [(x.age - y.age).abs(), (x.year - y.year).abs(), (x.cohort() - y.cohort()).abs()]
    }

    /// Unit-variance product correlation.
    #[inline]
    pub(crate) fn correlation(&self, x: &InputPoint, y: &InputPoint) -> f64 {
        let d = Self::deltas(x, y);
        (0..3).map(|k| self.family.eval(d[k], self.lengthscales[k])).product()
    }

    /// Correlation and its derivatives with respect to each log lengthscale.
    #[inline]
    pub(crate) fn correlation_with_grad(&self, x: &InputPoint, y: &InputPoint) -> (f64, [f64; 3]) {
        let d = Self::deltas(x, y);
        let k: [f64; 3] = std::array::from_fn(|i| self.family.eval(d[i], self.lengthscales[i]));
        let dk: [f64; 3] = std::array::from_fn(|i| self.family.dlog_theta(d[i], self.lengthscales[i]));
        (k[0] * k[1] * k[2], [dk[0] * k[1] * k[2], k[0] * dk[1] * k[2], k[0] * k[1] * dk[2]])
    }
}

/// `η² · k(Δage) · k(Δyear) · k(Δcohort)`.
pub fn apc_kernel(x: &InputPoint, y: &InputPoint, p: &KernelParams) -> f64 {
    p.variance * p.correlation(x, y)
}

/// Loadings `A` (L×Q) of the intrinsic coregionalization model, `B = AAᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoregionalizationMatrix {
    pub a: DMatrix<f64>,
}

impl CoregionalizationMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self, KernelError> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(KernelError::DimensionMismatch("coregionalization loadings must be non-empty".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::NonFinite("coregionalization loading"));
        }
        Ok(Self { a })
    }

    /// `B = [1]`, the single-output case.
    pub fn single() -> Self {
        Self { a: DMatrix::from_element(1, 1, 1.0) }
    }

    pub fn identity(l: usize) -> Self {
        Self { a: DMatrix::identity(l, l) }
    }

    pub fn outputs(&self) -> usize {
        self.a.nrows()
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn b(&self) -> DMatrix<f64> {
        &self.a * self.a.transpose()
    }

    /// Cross-population correlations `B_lk / √(B_ll B_kk)`.
    pub fn correlations(&self) -> DMatrix<f64> {
        let b = self.b();
        let l = b.nrows();
        DMatrix::from_fn(l, l, |i, j| {
            let s = (b[(i, i)] * b[(j, j)]).sqrt();
            if s > 0.0 {
                b[(i, j)] / s
            } else if i == j {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Representative of `{AR : R orthogonal}` with `A` lower-triangular and a
    /// nonnegative diagonal; leaves `B` unchanged.
    pub fn canonical(&self) -> Self {
        let (l, q) = self.a.shape();
        let qr = self.a.transpose().qr();
        // Aᵀ = QR  ⇒  A = RᵀQᵀ, and Rᵀ is (L × min(Q, L)) lower-triangular
        let r = qr.r();
        let mut lower = DMatrix::zeros(l, q);
        for i in 0..r.nrows() {
            let sign = if r[(i, i)] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..l {
                lower[(j, i)] = sign * r[(i, j)];
            }
        }
        Self { a: lower }
    }
}

fn check_points(points: &[InputPoint], l: usize) -> Result<(), KernelError> {
    if let Some(p) = points.iter().find(|p| p.population >= l) {
        return Err(KernelError::DimensionMismatch(format!("population index {} with only {l} outputs", p.population)));
    }
    if points.iter().any(|p| !(p.age.is_finite() && p.year.is_finite())) {
        return Err(KernelError::NonFinite("input point"));
    }
    Ok(())
}

/// `B[l_i, l_j] · apc(x_i, x_j) + σ²_{l_i} δ_ij`.
pub fn icm_covariance(
    points: &[InputPoint],
    coreg: &CoregionalizationMatrix,
    params: &KernelParams,
    noise: Option<&[f64]>,
) -> Result<DMatrix<f64>, KernelError> {
    let l = coreg.outputs();
    params.validate()?;
    check_points(points, l)?;
    if let Some(noise) = noise {
        if noise.len() != l {
            return Err(KernelError::DimensionMismatch(format!("{} noise variances for {l} outputs", noise.len())));
        }
    }
    let b = coreg.b();
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = b[(points[i].population, points[j].population)] * apc_kernel(&points[i], &points[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    if let Some(noise) = noise {
        for (i, p) in points.iter().enumerate() {
            k[(i, i)] += noise[p.population];
        }
    }
    Ok(k)
}

/// Noise-free covariance between `rows` and `cols`.
pub fn cross_covariance(
    rows: &[InputPoint],
    cols: &[InputPoint],
    coreg: &CoregionalizationMatrix,
    params: &KernelParams,
) -> Result<DMatrix<f64>, KernelError> {
    let l = coreg.outputs();
    params.validate()?;
    check_points(rows, l)?;
    check_points(cols, l)?;
    let b = coreg.b();
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| b[(rows[i].population, cols[j].population)] * apc_kernel(&rows[i], &cols[j], params)))
}

/// Relative jitter levels tried in order.
pub const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];

/// Cholesky of `k + jitter·scale·I`, escalating through [`JITTER_LADDER`].
/// Returns the factor and the absolute jitter that was added.
pub fn cholesky_with_jitter(k: &DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64), KernelError> {
    let scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
    for (step, rel) in JITTER_LADDER.iter().enumerate() {
        let jitter = rel * scale;
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            if step > 0 {
                log::warn!("covariance needed jitter {jitter:e} to factorize");
            }
            return Ok((c, jitter));
        }
    }
    Err(KernelError::NotPositiveDefinite(JITTER_LADDER[JITTER_LADDER.len() - 1] * scale))
}
