//! Posterior surfaces for every fitted target and the national model.

use std::collections::BTreeMap;

use mortgp::{InputPoint, KernelFamily, Sex, StateId};
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::pipeline::{load_model, population_code, Context};

pub const SURFACE_HEADER: [&str; 12] =
    ["kernel", "sex", "state", "age", "year", "mean", "std", "predictive_std", "rate", "observed", "residual", "out_of_sample"];

fn predict_one(ctx: &Context, kernel: KernelFamily, sex: Sex, state: Option<StateId>) -> Result<Vec<[String; 12]>> {
    let file = load_model(ctx, kernel, sex, state)?;
    let model = &file.model;
    let code = population_code(state);
    let idx = model.population_index(code)?;
    if idx != 0 {
        return Err(CliError::Invariant(format!("{code} is not the first output of its own model")));
    }
    let w = &ctx.config.window;
    let years = ctx.config.predict_years();
    let points: Vec<InputPoint> = w.ages().flat_map(|a| years.iter().map(move |&t| InputPoint::new(a as f64, t as f64, idx))).collect();
    let pred = model.predict(&points, false, true)?;
    let noise = model.hyperparameters.noise[idx];
    let observed: BTreeMap<(u32, i32), f64> = model
        .training
        .inputs
        .iter()
        .zip(&model.training.outputs)
        .zip(&model.training.labels)
        .filter(|(_, &l)| l == idx)
        .map(|((&cell, &y), _)| (cell, y))
        .collect();
    let rows = points
        .iter()
        .zip(pred.mean.iter().zip(&pred.std))
        .map(|(p, (&m, &s))| {
            let (age, year) = (p.age as u32, p.year as i32);
            let obs = observed.get(&(age, year));
            [
                kernel.to_string(),
                sex.to_string(),
                code.to_string(),
                age.to_string(),
                year.to_string(),
                m.to_string(),
                s.to_string(),
                (s * s + noise).sqrt().to_string(),
                m.exp().to_string(),
                obs.map(|y| y.to_string()).unwrap_or_default(),
                obs.map(|y| (y - m).to_string()).unwrap_or_default(),
                (!w.contains(age, year)).to_string(),
            ]
        })
        .collect();
    Ok(rows)
}

pub fn run(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let mut jobs = Vec::new();
    for &kernel in &cfg.fit.kernels {
        for &sex in &cfg.fit.sexes {
            jobs.extend(StateId::ALL.iter().copied().map(Some).chain([None]).map(|s| (kernel, sex, s)));
        }
    }
    let parts: Vec<Vec<[String; 12]>> = jobs.par_iter().map(|&(k, sex, s)| predict_one(ctx, k, sex, s)).collect::<Result<_>>()?;
    ctx.out.table("surfaces.csv", &SURFACE_HEADER, parts.into_iter().flatten())?;
    log::info!("wrote surfaces for {} models", jobs.len());
    Ok(())
}

/// Posterior log-rate mean and sd keyed by (kernel, sex, population code).
pub type SurfaceTable = BTreeMap<(KernelFamily, Sex, String), mortgp::Surface>;

pub fn read_surfaces(ctx: &Context) -> Result<SurfaceTable> {
    let text = ctx.out.read_to_string("surfaces.csv")?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(SURFACE_HEADER) {
        return Err(CliError::Config("surfaces.csv has an unexpected header".into()));
    }
    let mut out = SurfaceTable::new();
    for row in reader.records() {
        let row = row?;
        let bad = || CliError::Config(format!("surfaces.csv: malformed row {:?}", row.position().map(|p| p.line())));
        let kernel: KernelFamily = row[0].parse().map_err(|_| bad())?;
        let sex: Sex = row[1].parse().map_err(|_| bad())?;
        let age: u32 = row[3].parse().map_err(|_| bad())?;
        let year: i32 = row[4].parse().map_err(|_| bad())?;
        let mean: f64 = row[5].parse().map_err(|_| bad())?;
        let std: f64 = row[6].parse().map_err(|_| bad())?;
        out.entry((kernel, sex, row[2].to_string())).or_default().cells.insert((age, year), (mean, std));
    }
    Ok(out)
}
