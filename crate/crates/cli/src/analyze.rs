//! Rankings, ratios, dispersion, improvement factors and covariate
//! correlations from the predicted surfaces and fitted models.

use std::collections::{BTreeMap, BTreeSet};

use mortgp::analysis::{
    female_advantage_count, mi_heatmap_data, mi_surface, rank_states, rank_trajectory, ratio_to_national, spread_metric, write_mi_csv,
    write_rankings_csv, write_trajectory_csv,
};
use mortgp::covariates::{covariate_output_correlation, pearson, read_state_values};
use mortgp::lifetable::NATIONAL;
use mortgp::{AnalysisError, KernelFamily, MiSurface, RankTable, Sex, StateId, Surface};
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::group::covariate_pca;
use crate::pipeline::{load_model, population_code, Context};
use crate::predict::{read_surfaces, SurfaceTable};

/// The configured family when it was fitted, otherwise the first fitted one.
fn choose_kernel(wanted: KernelFamily, fitted: &[KernelFamily], purpose: &str) -> Result<KernelFamily> {
    if fitted.contains(&wanted) {
        return Ok(wanted);
    }
    let fallback = *fitted.first().ok_or_else(|| CliError::from(AnalysisError::Empty))?;
    log::warn!("{purpose} use the {fallback} fits because no {wanted} fits were requested");
    Ok(fallback)
}

struct SexSurfaces {
    states: BTreeMap<StateId, Surface>,
    national: Surface,
}

fn collect(table: &SurfaceTable, kernel: KernelFamily, sex: Sex) -> Result<SexSurfaces> {
    let mut states = BTreeMap::new();
    let mut national = None;
    for ((k, s, code), surface) in table {
        if *k != kernel || *s != sex {
            continue;
        }
        if code == NATIONAL {
            national = Some(surface.clone());
        } else {
            let st: StateId = code.parse().map_err(|e: mortgp::state::UnknownState| CliError::Config(e.to_string()))?;
            states.insert(st, surface.clone());
        }
    }
    if states.is_empty() {
        return Err(AnalysisError::Empty.into());
    }
    if let Some(s) = StateId::ALL.iter().find(|s| !states.contains_key(s)) {
        return Err(AnalysisError::MissingState(*s).into());
    }
    let national = national.ok_or_else(|| CliError::Config(format!("surfaces.csv has no {NATIONAL} {kernel} {sex} surface")))?;
    Ok(SexSurfaces { states, national })
}

fn rate(s: &Surface, state: &str, age: u32, year: i32) -> Result<f64> {
    s.mean(age, year).map(f64::exp).ok_or_else(|| AnalysisError::MissingCell { state: state.to_string(), age, year }.into())
}

pub fn run(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let table = read_surfaces(ctx)?;
    if table.is_empty() {
        return Err(AnalysisError::Empty.into());
    }
    let rate_kernel = choose_kernel(cfg.analysis.rate_kernel, &cfg.fit.kernels, "mortality rates")?;
    let mi_kernel = choose_kernel(cfg.analysis.mi_kernel, &cfg.fit.kernels, "improvement factors")?;
    let roster = StateId::ALL;
    let ages: Vec<u32> = cfg.window.ages().collect();
    let years = cfg.predict_years();
    let mi_years: Vec<i32> = years[1..].to_vec();

    let mut per_sex = BTreeMap::new();
    for &sex in &cfg.fit.sexes {
        per_sex.insert(sex, collect(&table, rate_kernel, sex)?);
    }

    let mut rankings: Vec<(Sex, RankTable)> = Vec::new();
    let mut ratios = Vec::new();
    let mut spread = Vec::new();
    let mut bump = Vec::new();
    for (&sex, s) in &per_sex {
        for &age in &cfg.analysis.rank_ages {
            for year in cfg.rank_years() {
                rankings.push((sex, rank_states(&s.states, &roster, age, year)?));
            }
        }
        for (state, surface) in &s.states {
            for &age in &ages {
                for &year in &years {
                    let r = ratio_to_national(surface, &s.national, age, year)?;
                    ratios.push([sex.to_string(), state.code().to_string(), age.to_string(), year.to_string(), r.to_string()]);
                }
            }
        }
        for &age in &ages {
            for &year in &years {
                let v = spread_metric(&s.states, &roster, age, year)?;
                spread.push([sex.to_string(), age.to_string(), year.to_string(), v.to_string()]);
            }
        }
        for &age in &cfg.analysis.bump_ages {
            bump.extend(rank_trajectory(&s.states, &roster, age, &cfg.analysis.bump_years)?.into_iter().map(|p| (sex, age, p)));
        }
    }

    let mi_jobs: Vec<(Sex, Option<StateId>)> =
        cfg.fit.sexes.iter().flat_map(|&sex| roster.iter().copied().map(Some).chain([None]).map(move |s| (sex, s))).collect();
    let mi: Vec<MiSurface> = mi_jobs
        .par_iter()
        .map(|&(sex, state)| {
            let file = load_model(ctx, mi_kernel, sex, state)?;
            let code = population_code(state);
            let idx = file.model.population_index(code)?;
            Ok(mi_surface(&file.model, idx, code, sex, &ages, &mi_years, cfg.analysis.level)?)
        })
        .collect::<Result<_>>()?;
    let mut mi_by_sex: BTreeMap<Sex, BTreeMap<StateId, MiSurface>> = BTreeMap::new();
    for ((sex, state), m) in mi_jobs.iter().zip(&mi) {
        if let Some(s) = state {
            mi_by_sex.entry(*sex).or_default().insert(*s, m.clone());
        }
    }

    let mut heatmap = Vec::new();
    for (sex, surfaces) in &mi_by_sex {
        let h = mi_heatmap_data(surfaces, cfg.heatmap_year(), cfg.analysis.sort_age)?;
        for (col, state) in h.states.iter().enumerate() {
            for (ai, age) in h.ages.iter().enumerate() {
                heatmap.push([
                    sex.to_string(),
                    h.year.to_string(),
                    h.sort_age.to_string(),
                    (col + 1).to_string(),
                    state.code().to_string(),
                    age.to_string(),
                    h.values[ai][col].to_string(),
                ]);
            }
        }
    }

    let mut summary = Vec::new();
    if let (Some(f), Some(m)) = (mi_by_sex.get(&Sex::Female), mi_by_sex.get(&Sex::Male)) {
        let year = cfg.mi_summary_year();
        for &age in &cfg.analysis.mi_summary_ages {
            let (wins, total) = female_advantage_count(f, m, age, year);
            let positive = |s: &BTreeMap<StateId, MiSurface>| s.values().filter(|x| x.get(age, year).is_some_and(|i| i.point > 0.0)).count();
            summary.push([age.to_string(), year.to_string(), wins.to_string(), positive(f).to_string(), positive(m).to_string(), total.to_string()]);
        }
    }

    let correlations = match &cfg.paths.covariates {
        Some(_) => Some(correlation_tables(ctx, &per_sex, &mi_by_sex)?),
        None => {
            log::warn!("paths.covariates is not set; skipping the covariate correlation table");
            None
        }
    };

    ctx.out.emit("rankings.csv", |buf| write_rankings_csv(&rankings, buf))?;
    ctx.out.table("ratios.csv", &["sex", "state", "age", "year", "ratio"], ratios)?;
    ctx.out.table("spread.csv", &["sex", "age", "year", "spread"], spread)?;
    ctx.out.emit("bump.csv", |buf| write_trajectory_csv(&bump, buf))?;
    ctx.out.emit("mi_surface.csv", |buf| write_mi_csv(&mi.iter().collect::<Vec<_>>(), buf))?;
    ctx.out.table("mi_heatmap.csv", &["sex", "year", "sort_age", "column", "state", "age", "mi"], heatmap)?;
    ctx.out.table("mi_summary.csv", &["age", "year", "female_higher", "female_positive", "male_positive", "compared"], summary)?;
    if let Some((wide, scatter)) = correlations {
        let mut header = vec!["variable".to_string()];
        header.extend(wide.columns.iter().cloned());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        ctx.out.table("correlations.csv", &header, wide.rows)?;
        ctx.out.table("correlation_scatter.csv", &["variable", "state", "value", "metric", "sex", "target"], scatter)?;
    }
    log::info!("analysis written with {rate_kernel} rates and {mi_kernel} improvement factors");
    Ok(())
}

struct Wide {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Pearson correlation of each covariate, PCA score and life expectancy
/// against three per-state targets: the rate, the improvement factor and the
/// rate ratio over the decade.
fn correlation_tables(
    ctx: &Context,
    per_sex: &BTreeMap<Sex, SexSurfaces>,
    mi: &BTreeMap<Sex, BTreeMap<StateId, MiSurface>>,
) -> Result<(Wide, Vec<[String; 6]>)> {
    let cfg = &ctx.config;
    let (table, pca) = covariate_pca(ctx)?;
    let le = match &cfg.paths.life_expectancy {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(CliError::io(format!("opening {}", p.display())))?;
            Some(read_state_values(f).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?)
        }
        None => {
            log::warn!("paths.life_expectancy is not set; the correlation table omits it");
            None
        }
    };
    let le_values = le
        .as_ref()
        .map(|m| {
            table
                .states
                .iter()
                .map(|s| m.get(s).copied().ok_or_else(|| CliError::Config(format!("no life expectancy for {s}"))))
                .collect::<Result<Vec<f64>>>()
        })
        .transpose()?;

    let (age, year, base) = (cfg.analysis.correlation_age, cfg.correlation_year(), cfg.decade_base_year());
    let mut variables: Vec<(String, Vec<f64>)> = Vec::new();
    for (j, id) in table.covariate_ids.iter().enumerate() {
        variables.push((id.clone(), table.values.column(j).iter().copied().collect()));
    }
    for c in 0..pca.k {
        variables.push((format!("PC{}", c + 1), table.states.iter().map(|s| pca.loading(*s, c).unwrap_or(f64::NAN)).collect()));
    }
    if let Some(v) = &le_values {
        variables.push(("life_expectancy".into(), v.clone()));
    }

    let mut columns = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); variables.len()];
    let mut scatter = Vec::new();
    for (&sex, s) in per_sex {
        let mut targets: Vec<(&str, Vec<f64>)> = Vec::new();
        let rates = table.states.iter().map(|st| rate(&s.states[st], st.code(), age, year)).collect::<Result<Vec<_>>>()?;
        let ratio = table.states.iter().zip(&rates).map(|(st, r)| Ok(r / rate(&s.states[st], st.code(), age, base)?)).collect::<Result<Vec<_>>>()?;
        targets.push(("mortality", rates));
        if let Some(m) = mi.get(&sex) {
            let v = table
                .states
                .iter()
                .map(|st| {
                    m.get(st)
                        .and_then(|x| x.get(age, year))
                        .map(|i| i.point)
                        .ok_or_else(|| CliError::from(AnalysisError::MissingCell { state: st.code().into(), age, year }))
                })
                .collect::<Result<Vec<_>>>()?;
            targets.push(("mi", v));
        }
        targets.push(("decade_ratio", ratio));

        for (metric, target) in targets {
            columns.push(format!("{metric}_{sex}"));
            let r = match covariate_output_correlation(&table, Some(&pca), &target) {
                Ok(r) => {
                    let mut r: Vec<f64> = r.into_iter().map(|(_, v)| v).collect();
                    if let Some(v) = &le_values {
                        r.push(pearson(v, &target).unwrap_or(f64::NAN));
                    }
                    r
                }
                Err(e) => {
                    log::warn!("{metric} {sex}: {e}; correlations reported as NaN");
                    vec![f64::NAN; variables.len()]
                }
            };
            for (i, v) in r.into_iter().enumerate() {
                values[i].push(v);
            }
            for (name, xs) in &variables {
                for ((st, x), y) in table.states.iter().zip(xs).zip(&target) {
                    scatter.push([name.clone(), st.code().to_string(), x.to_string(), metric.to_string(), sex.to_string(), y.to_string()]);
                }
            }
        }
    }
    let rows = variables
        .iter()
        .zip(values)
        .map(|((name, _), vals)| std::iter::once(name.clone()).chain(vals.iter().map(|v| v.to_string())).collect())
        .collect();
    let distinct: BTreeSet<&String> = variables.iter().map(|(n, _)| n).collect();
    if distinct.len() != variables.len() {
        return Err(CliError::Invariant("duplicate correlation variable names".into()));
    }
    Ok((Wide { columns, rows }, scatter))
}
