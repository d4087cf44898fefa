//! L-BFGS minimization of a smooth objective with best-so-far tracking.

use std::sync::Mutex;

use argmin::core::{CostFunction, Error, Executor, Gradient, State, TerminationReason, TerminationStatus};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: u64,
    pub converged: bool,
}

#[derive(Default)]
struct Memo {
    last: Option<(Vec<f64>, f64, Vec<f64>)>,
    best: Option<(Vec<f64>, f64)>,
}

struct Problem<F> {
    f: F,
    memo: Mutex<Memo>,
}

struct Borrowed<'a, F>(&'a Problem<F>);

impl<F, E> Problem<F>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>), E>,
    E: std::fmt::Display,
{
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>), Error> {
        let mut memo = self.memo.lock().expect("objective memo poisoned");
        if let Some((lx, v, g)) = &memo.last {
            if lx.as_slice() == x {
                return Ok((*v, g.clone()));
            }
        }
        let (v, g) = (self.f)(x).map_err(|e| Error::msg(e.to_string()))?;
        if !v.is_finite() || g.iter().any(|d| !d.is_finite()) {
            return Err(Error::msg("objective is not finite"));
        }
        if memo.best.as_ref().is_none_or(|(_, b)| v < *b) {
            memo.best = Some((x.to_vec(), v));
        }
        memo.last = Some((x.to_vec(), v, g.clone()));
        Ok((v, g))
    }
}

impl<F, E> CostFunction for Borrowed<'_, F>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>), E>,
    E: std::fmt::Display,
{
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> Result<f64, Error> {
        self.0.eval(x).map(|(v, _)| v)
    }
}

impl<F, E> Gradient for Borrowed<'_, F>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>), E>,
    E: std::fmt::Display,
{
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Self::Param) -> Result<Vec<f64>, Error> {
        self.0.eval(x).map(|(_, g)| g)
    }
}

/// Minimize `f` (value and gradient) from `x0`. Solver errors fall back to the
/// lowest value seen, flagged unconverged; `Err` only if no point evaluated.
pub(crate) fn minimize<F, E>(f: F, x0: Vec<f64>, max_iterations: u64) -> Result<Outcome, String>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>), E>,
    E: std::fmt::Display,
{
    let problem = Problem { f, memo: Mutex::new(Memo::default()) };
    if let Err(e) = problem.eval(&x0) {
        return Err(format!("initial point failed: {e}"));
    }
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 20)
        .with_tolerance_grad(1e-7)
        .and_then(|s| s.with_tolerance_cost(1e-12))
        .map_err(|e| e.to_string())?;
    let run = Executor::new(Borrowed(&problem), solver).configure(|s| s.param(x0).max_iters(max_iterations)).run();

    let best = |iterations| {
        let memo = problem.memo.lock().expect("objective memo poisoned");
        let (x, value) = memo.best.clone().expect("initial point was evaluated");
        Outcome { x, value, iterations, converged: false }
    };
    match run {
        Ok(res) => {
            let state = res.state();
            let iterations = state.get_iter();
            let converged = matches!(state.get_termination_status(), TerminationStatus::Terminated(TerminationReason::SolverConverged));
            match (state.get_best_param(), state.get_best_cost()) {
                (Some(x), v) if v.is_finite() => {
                    let fallback = best(iterations);
                    if fallback.value < v {
                        return Ok(fallback);
                    }
                    Ok(Outcome { x: x.clone(), value: v, iterations, converged })
                }
                _ => Ok(best(iterations)),
            }
        }
        Err(e) => {
            log::debug!("optimizer stopped early: {e}");
            Ok(best(0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), String> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            Ok((v, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]))
        };
        let out = minimize(f, vec![-1.2, 1.0], 500).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5);
        assert!(out.converged);
    }

    #[test]
    fn failing_region_returns_best_so_far() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), String> {
            if x[0] < -0.5 {
                return Err("outside domain".into());
            }
            Ok((x[0], vec![1.0]))
        };
        let out = minimize(f, vec![0.0], 50).unwrap();
        assert!(out.value <= 0.0);
        assert!(!out.converged);
    }
}
