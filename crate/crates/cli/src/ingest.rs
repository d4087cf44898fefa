//! Validate inputs and write canonical per-state training sets.

use std::collections::BTreeSet;
use std::fs::File;

use mortgp::lifetable::{aggregate_national, parse_usmdb, subset};
use mortgp::{AdjacencyGraph, CovariateTable, PopulationTable, StateId, TrainingSet};

use crate::error::{CliError, Result};
use crate::output::sha256_file;
use crate::pipeline::{training_path, Context};

fn open(path: &std::path::Path) -> Result<File> {
    File::open(path).map_err(CliError::io(format!("opening {}", path.display())))
}

/// Check the auxiliary inputs parse and cover every state.
fn validate_auxiliary(ctx: &Context) -> Result<()> {
    let paths = &ctx.config.paths;
    if let Some(p) = &paths.covariates {
        CovariateTable::read_csv(open(p)?).and_then(CovariateTable::into_canonical).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = &paths.populations {
        let pops = PopulationTable::read_csv(open(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        if let Some(s) = StateId::ALL.iter().find(|s| !pops.0.contains_key(s)) {
            return Err(CliError::Config(format!("{}: no population for state {s} ({})", p.display(), s.name())));
        }
    }
    if let Some(p) = &paths.adjacency {
        AdjacencyGraph::read_csv(open(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = &paths.life_expectancy {
        let le = mortgp::covariates::read_state_values(open(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        if let Some(s) = StateId::ALL.iter().find(|s| !le.contains_key(s)) {
            return Err(CliError::Config(format!("{}: no life expectancy for state {s} ({})", p.display(), s.name())));
        }
    }
    Ok(())
}

pub fn run(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    validate_auxiliary(ctx)?;
    let records =
        parse_usmdb(open(&cfg.paths.mortality)?, &cfg.columns).map_err(|e| CliError::Config(format!("{}: {e}", cfg.paths.mortality.display())))?;
    log::info!("read {} life-table rows", records.len());

    let mut report = Vec::new();
    let mut excluded = Vec::new();
    let mut written = 0usize;
    for &sex in &cfg.fit.sexes {
        let all = subset(&records, &cfg.window, sex)?;
        let present: BTreeSet<&str> = all.populations.iter().map(String::as_str).collect();
        if let Some(s) = StateId::ALL.iter().find(|s| !present.contains(s.code())) {
            return Err(CliError::Config(format!("no {sex} mortality records for state {s} ({}) in the window", s.name())));
        }
        for (label, name) in all.populations.iter().enumerate() {
            let state: StateId = name.parse().map_err(|e: mortgp::state::UnknownState| CliError::Config(e.to_string()))?;
            let set = all.population(label);
            check_coverage(ctx, &set, name, sex)?;
            report.push([
                sex.as_str().to_string(),
                name.clone(),
                ctx.config.window.cell_count().to_string(),
                set.len().to_string(),
                set.excluded.len().to_string(),
            ]);
            excluded.extend(
                set.excluded
                    .iter()
                    .map(|c| [sex.as_str().to_string(), c.population.clone(), c.age.to_string(), c.year.to_string(), c.reason.clone()]),
            );
            ctx.out.emit(&training_path(Some(state), sex), |buf| set.write_csv(buf))?;
            written += 1;
        }
        let national = aggregate_national(&records, &cfg.window, sex)?;
        check_coverage(ctx, &national, mortgp::lifetable::NATIONAL, sex)?;
        report.push([
            sex.as_str().to_string(),
            mortgp::lifetable::NATIONAL.to_string(),
            ctx.config.window.cell_count().to_string(),
            national.len().to_string(),
            national.excluded.len().to_string(),
        ]);
        ctx.out.emit(&training_path(None, sex), |buf| national.write_csv(buf))?;
    }
    ctx.out.table("validation_report.csv", &["sex", "population", "cells_expected", "cells_used", "cells_excluded"], report)?;
    ctx.out.table("excluded_cells.csv", &["sex", "population", "age", "year", "reason"], excluded)?;

    let paths = &cfg.paths;
    let mut inputs = vec![("mortality", Some(&paths.mortality))];
    inputs.extend([
        ("covariates", paths.covariates.as_ref()),
        ("adjacency", paths.adjacency.as_ref()),
        ("populations", paths.populations.as_ref()),
        ("life_expectancy", paths.life_expectancy.as_ref()),
    ]);
    let mut manifest = Vec::new();
    for (name, path) in inputs {
        if let Some(p) = path {
            manifest.push([name.to_string(), sha256_file(p)?]);
        }
    }
    ctx.out.table("inputs.csv", &["input", "sha256"], manifest)?;
    log::info!("wrote {written} state training sets");
    Ok(())
}

/// Every window cell must be either observed or listed as excluded.
fn check_coverage(ctx: &Context, set: &TrainingSet, name: &str, sex: mortgp::Sex) -> Result<()> {
    let seen: BTreeSet<(u32, i32)> = set.inputs.iter().copied().chain(set.excluded.iter().map(|c| (c.age, c.year))).collect();
    let w = &ctx.config.window;
    for age in w.ages() {
        for year in w.years() {
            if !seen.contains(&(age, year)) {
                return Err(CliError::Config(format!("coverage gap: {name} {sex} has no record for age {age}, year {year}")));
            }
        }
    }
    Ok(())
}
