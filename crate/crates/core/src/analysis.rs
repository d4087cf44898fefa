//! Improvement factors with credible intervals, state rankings, ratios to the
//! national surface and dispersion metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::gp::{FittedModel, GpError, PosteriorPrediction};
use crate::kernels::{InputPoint, KernelFamily};
use crate::lifetable::Sex;
use crate::state::StateId;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("state {0} is missing")]
    MissingState(StateId),
    #[error("no prediction for {state} at age {age}, year {year}")]
    MissingCell { state: String, age: u32, year: i32 },
    #[error("at least {required} states are needed, got {found}")]
    TooFewStates { required: usize, found: usize },
    #[error("credible level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("negative posterior variance {0:e} for the log-rate difference")]
    NegativeVariance(f64),
    #[error("nothing to analyze")]
    Empty,
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `1 − exp(Δ)` for a log-rate difference Δ; positive when mortality falls.
pub fn improvement_from_log_difference(delta: f64) -> f64 {
    1.0 - delta.exp()
}

/// Credible interval for an improvement factor, `lower ≤ point ≤ upper`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiInterval {
    pub lower: f64,
    pub point: f64,
    pub upper: f64,
}

fn z_quantile(level: f64) -> Result<f64, AnalysisError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(AnalysisError::InvalidLevel(level));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// Map the Gaussian interval of Δ ~ N(μ, v) through `1 − exp`, which reverses
/// the endpoints.
pub fn mi_interval_from_gaussian(mean: f64, variance: f64, level: f64) -> Result<MiInterval, AnalysisError> {
    let z = z_quantile(level)?;
    let variance = if variance < 0.0 {
        if variance < -1e-12 * (1.0 + mean.abs()) {
            return Err(AnalysisError::NegativeVariance(variance));
        }
        0.0
    } else {
        variance
    };
    let sd = variance.sqrt();
    Ok(MiInterval {
        lower: improvement_from_log_difference(mean + z * sd),
        point: improvement_from_log_difference(mean),
        upper: improvement_from_log_difference(mean - z * sd),
    })
}

fn warn_family(model: &FittedModel) {
    if model.hyperparameters.kernel.family != KernelFamily::SqExp {
        log::warn!("improvement factors from a {} fit; sqexp fits are intended for this", model.hyperparameters.kernel.family);
    }
}

/// `1 − exp(m(a, t) − m(a, t − 1))` from latent posterior means of output `population`.
pub fn improvement_factor(model: &FittedModel, population: usize, age: u32, year: i32) -> Result<f64, AnalysisError> {
    warn_family(model);
    let pts = [InputPoint::new(age as f64, year as f64, population), InputPoint::new(age as f64, (year - 1) as f64, population)];
    let pred = model.predict(&pts, false, true)?;
    Ok(improvement_from_log_difference(pred.mean[0] - pred.mean[1]))
}

/// Improvement factor and its credible interval from the joint latent posterior
/// of the two adjacent years.
pub fn mi_interval(model: &FittedModel, population: usize, age: u32, year: i32, level: f64) -> Result<MiInterval, AnalysisError> {
    warn_family(model);
    let pts = [InputPoint::new(age as f64, year as f64, population), InputPoint::new(age as f64, (year - 1) as f64, population)];
    let pred = model.predict(&pts, true, true)?;
    let c = pred.covariance.expect("requested covariance");
    let var = c[(0, 0)] + c[(1, 1)] - 2.0 * c[(0, 1)];
    mi_interval_from_gaussian(pred.mean[0] - pred.mean[1], var, level)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiCell {
    pub age: u32,
    pub year: i32,
    pub interval: MiInterval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiSurface {
    pub state: String,
    pub sex: Sex,
    pub level: f64,
    pub cells: Vec<MiCell>,
}

impl MiSurface {
    pub fn get(&self, age: u32, year: i32) -> Option<&MiInterval> {
        self.cells.iter().find(|c| c.age == age && c.year == year).map(|c| &c.interval)
    }
}

/// Improvement factors with intervals over an age × year grid, one joint
/// posterior per age.
pub fn mi_surface(
    model: &FittedModel,
    population: usize,
    state: &str,
    sex: Sex,
    ages: &[u32],
    years: &[i32],
    level: f64,
) -> Result<MiSurface, AnalysisError> {
    warn_family(model);
    z_quantile(level)?;
    let mut cells = Vec::with_capacity(ages.len() * years.len());
    let mut span: Vec<i32> = years.iter().flat_map(|&t| [t - 1, t]).collect::<BTreeSet<_>>().into_iter().collect();
    span.sort();
    for &age in ages {
        let pts: Vec<InputPoint> = span.iter().map(|&t| InputPoint::new(age as f64, t as f64, population)).collect();
        let pred = model.predict(&pts, true, true)?;
        let c = pred.covariance.expect("requested covariance");
        let idx = |t: i32| span.binary_search(&t).expect("year in span");
        for &year in years {
            let (i, j) = (idx(year), idx(year - 1));
            let var = c[(i, i)] + c[(j, j)] - 2.0 * c[(i, j)];
            cells.push(MiCell { age, year, interval: mi_interval_from_gaussian(pred.mean[i] - pred.mean[j], var, level)? });
        }
    }
    Ok(MiSurface { state: state.to_string(), sex, level, cells })
}

/// Posterior mean and standard deviation of log-mortality per (age, year).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub cells: BTreeMap<(u32, i32), (f64, f64)>,
}

impl Surface {
    /// Cells of one output of a prediction; ages and years are rounded.
    pub fn from_prediction(pred: &PosteriorPrediction, population: usize) -> Self {
        let cells = pred
            .points
            .iter()
            .zip(pred.mean.iter().zip(&pred.std))
            .filter(|(p, _)| p.population == population)
            .map(|(p, (m, s))| ((p.age.round() as u32, p.year.round() as i32), (*m, *s)))
            .collect();
        Self { cells }
    }

    pub fn mean(&self, age: u32, year: i32) -> Option<f64> {
        self.cells.get(&(age, year)).map(|c| c.0)
    }
}

fn log_rate(surfaces: &BTreeMap<StateId, Surface>, s: StateId, age: u32, year: i32) -> Result<f64, AnalysisError> {
    let surface = surfaces.get(&s).ok_or(AnalysisError::MissingState(s))?;
    surface.mean(age, year).ok_or_else(|| AnalysisError::MissingCell { state: s.code().into(), age, year })
}

/// States in ascending order of predicted mortality rate at one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub age: u32,
    pub year: i32,
    /// `(state, rate)`, best first; equal rates in alphabetical order.
    pub entries: Vec<(StateId, f64)>,
}

impl RankTable {
    pub fn from_rates(age: u32, year: i32, rates: impl IntoIterator<Item = (StateId, f64)>) -> Self {
        let mut entries: Vec<(StateId, f64)> = rates.into_iter().collect();
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Self { age, year, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, k: usize) -> &[(StateId, f64)] {
        &self.entries[..k.min(self.len())]
    }

    /// The `k` highest-mortality states, worst last.
    pub fn bottom(&self, k: usize) -> &[(StateId, f64)] {
        &self.entries[self.len().saturating_sub(k)..]
    }

    /// 1-based rank of `s`.
    pub fn rank_of(&self, s: StateId) -> Option<usize> {
        self.entries.iter().position(|(t, _)| *t == s).map(|i| i + 1)
    }
}

/// Rank the `roster` states by `exp` of their latent mean at (age, year).
pub fn rank_states(surfaces: &BTreeMap<StateId, Surface>, roster: &[StateId], age: u32, year: i32) -> Result<RankTable, AnalysisError> {
    if roster.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let rates = roster.iter().map(|&s| Ok((s, log_rate(surfaces, s, age, year)?.exp()))).collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(RankTable::from_rates(age, year, rates))
}

/// `exp(m_state − m_national)`.
pub fn ratio_to_national(state: &Surface, national: &Surface, age: u32, year: i32) -> Result<f64, AnalysisError> {
    let s = state.mean(age, year).ok_or_else(|| AnalysisError::MissingCell { state: "state".into(), age, year })?;
    let n = national.mean(age, year).ok_or_else(|| AnalysisError::MissingCell { state: "US".into(), age, year })?;
    Ok((s - n).exp())
}

/// Second-highest rate over second-lowest rate among `roster`.
pub fn spread_metric(surfaces: &BTreeMap<StateId, Surface>, roster: &[StateId], age: u32, year: i32) -> Result<f64, AnalysisError> {
    if roster.len() < 4 {
        return Err(AnalysisError::TooFewStates { required: 4, found: roster.len() });
    }
    let table = rank_states(surfaces, roster, age, year)?;
    let n = table.len();
    Ok(table.entries[n - 2].1 / table.entries[1].1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub year: i32,
    pub state: StateId,
    pub rank: usize,
    pub rate: f64,
}

/// Rank of every roster state in each of `years` at a fixed age.
pub fn rank_trajectory(
    surfaces: &BTreeMap<StateId, Surface>,
    roster: &[StateId],
    age: u32,
    years: &[i32],
) -> Result<Vec<TrajectoryPoint>, AnalysisError> {
    let mut out = Vec::with_capacity(roster.len() * years.len());
    for &year in years {
        let table = rank_states(surfaces, roster, age, year)?;
        out.extend(table.entries.iter().enumerate().map(|(i, &(state, rate))| TrajectoryPoint { year, state, rank: i + 1, rate }));
    }
    Ok(out)
}

/// Years at which `a` and `b` swap order relative to the previous year listed.
pub fn rank_crossings(trajectory: &[TrajectoryPoint], a: StateId, b: StateId) -> Vec<i32> {
    let mut by_year: BTreeMap<i32, (Option<usize>, Option<usize>)> = BTreeMap::new();
    for p in trajectory {
        let e = by_year.entry(p.year).or_default();
        if p.state == a {
            e.0 = Some(p.rank);
        } else if p.state == b {
            e.1 = Some(p.rank);
        }
    }
    let mut out = Vec::new();
    let mut prev: Option<bool> = None;
    for (year, ranks) in by_year {
        let (Some(ra), Some(rb)) = ranks else { continue };
        let a_ahead = ra < rb;
        if prev.is_some_and(|p| p != a_ahead) {
            out.push(year);
        }
        prev = Some(a_ahead);
    }
    out
}

/// Age × state improvement factors with states sorted descending by their
/// value at `sort_age`, ties alphabetical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub year: i32,
    pub sort_age: u32,
    pub states: Vec<StateId>,
    pub ages: Vec<u32>,
    /// `values[age_index][state_index]`.
    pub values: Vec<Vec<f64>>,
}

pub fn mi_heatmap_data(surfaces: &BTreeMap<StateId, MiSurface>, year: i32, sort_age: u32) -> Result<Heatmap, AnalysisError> {
    if surfaces.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let key = |s: StateId, m: &MiSurface| {
        m.get(sort_age, year).map(|i| i.point).ok_or_else(|| AnalysisError::MissingCell { state: s.code().into(), age: sort_age, year })
    };
    let mut order = surfaces.iter().map(|(s, m)| Ok((*s, key(*s, m)?))).collect::<Result<Vec<_>, AnalysisError>>()?;
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let states: Vec<StateId> = order.into_iter().map(|(s, _)| s).collect();
    let ages: Vec<u32> =
        surfaces.values().flat_map(|m| m.cells.iter().filter(|c| c.year == year).map(|c| c.age)).collect::<BTreeSet<_>>().into_iter().collect();
    let values = ages.iter().map(|&a| states.iter().map(|s| surfaces[s].get(a, year).map_or(f64::NAN, |i| i.point)).collect()).collect();
    Ok(Heatmap { year, sort_age, states, ages, values })
}

/// Number of states whose female improvement factor exceeds the male one at
/// (age, year), and the number compared.
pub fn female_advantage_count(female: &BTreeMap<StateId, MiSurface>, male: &BTreeMap<StateId, MiSurface>, age: u32, year: i32) -> (usize, usize) {
    let mut wins = 0;
    let mut total = 0;
    for (s, f) in female {
        let (Some(fi), Some(mi)) = (f.get(age, year), male.get(s).and_then(|m| m.get(age, year))) else { continue };
        total += 1;
        if fi.point > mi.point {
            wins += 1;
        }
    }
    (wins, total)
}

pub fn write_rankings_csv<W: Write>(tables: &[(Sex, RankTable)], sink: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["sex", "age", "year", "rank", "state", "rate"])?;
    for (sex, t) in tables {
        for (i, (s, r)) in t.entries.iter().enumerate() {
            w.write_record([
                sex.as_str().to_string(),
                t.age.to_string(),
                t.year.to_string(),
                (i + 1).to_string(),
                s.code().to_string(),
                r.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_mi_csv<W: Write>(surfaces: &[&MiSurface], sink: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["state", "sex", "age", "year", "mi", "lower", "upper", "level"])?;
    for m in surfaces {
        for c in &m.cells {
            w.write_record([
                m.state.clone(),
                m.sex.as_str().to_string(),
                c.age.to_string(),
                c.year.to_string(),
                c.interval.point.to_string(),
                c.interval.lower.to_string(),
                c.interval.upper.to_string(),
                m.level.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv<W: Write>(rows: &[(Sex, u32, TrajectoryPoint)], sink: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["sex", "age", "year", "state", "rank", "rate"])?;
    for (sex, age, p) in rows {
        w.write_record([
            sex.as_str().to_string(),
            age.to_string(),
            p.year.to_string(),
            p.state.code().to_string(),
            p.rank.to_string(),
            p.rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
