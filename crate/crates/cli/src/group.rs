//! Build one group per target state and the grouping reports.

use std::collections::BTreeMap;
use std::fs::File;

use mortgp::grouping::{
    census_region_group, group_size_distribution, pca_group, reciprocity, single_state_group, write_groups_csv, DistanceMatrix, GroupConfig,
};
use mortgp::{AdjacencyGraph, CovariateTable, PcaResult, PopulationTable, StateGroup, StateId};

use crate::config::GroupingMode;
use crate::error::{CliError, Result};
use crate::pipeline::Context;

fn read<T, E: std::fmt::Display>(path: &std::path::Path, parse: impl FnOnce(File) -> std::result::Result<T, E>) -> Result<T> {
    let f = File::open(path).map_err(CliError::io(format!("opening {}", path.display())))?;
    parse(f).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn covariate_pca(ctx: &Context) -> Result<(CovariateTable, PcaResult)> {
    let path = ctx.config.paths.covariates.as_ref().ok_or_else(|| CliError::Config("paths.covariates is not set".into()))?;
    let table = read(path, |f| CovariateTable::read_csv(f).and_then(CovariateTable::into_canonical))?;
    let pca = table.pca(ctx.config.grouping.components)?;
    for w in &pca.warnings {
        log::warn!("covariate PCA: {w}");
    }
    Ok((table, pca))
}

pub fn run(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let pops = cfg.paths.populations.as_ref().map(|p| read(p, PopulationTable::read_csv)).transpose()?;
    let mut groups: BTreeMap<StateId, StateGroup> = BTreeMap::new();
    match cfg.grouping.mode {
        GroupingMode::Pca => {
            let (_, pca) = covariate_pca(ctx)?;
            ctx.out.emit("pca_loadings.csv", |buf| pca.write_loadings_csv(buf))?;
            ctx.out.emit("pca_summary.csv", |buf| pca.write_summary_csv(buf))?;
            let graph = match &cfg.paths.adjacency {
                Some(p) => read(p, AdjacencyGraph::read_csv)?,
                None => AdjacencyGraph::us_contiguity(),
            };
            let dist = DistanceMatrix::from_pca(&pca);
            let pops = pops.as_ref().ok_or_else(|| CliError::Config("paths.populations is required in pca mode".into()))?;
            let gc =
                GroupConfig { population_floor: cfg.grouping.population_floor, rounds: cfg.grouping.rounds, max_members: cfg.grouping.max_members };
            for s in StateId::ALL {
                let g = pca_group(s, &graph, &dist, pops, &gc).map_err(|e| CliError::Config(format!("grouping {s}: {e}")))?;
                if g.floor_unmet {
                    log::warn!("group for {s} stops below the population floor");
                }
                groups.insert(s, g);
            }
        }
        GroupingMode::CensusRegion | GroupingMode::SingleState => {
            for s in StateId::ALL {
                let g = if cfg.grouping.mode == GroupingMode::CensusRegion { census_region_group(s) } else { single_state_group(s) };
                let g = match &pops {
                    Some(p) => g.with_population(p)?,
                    None => g,
                };
                groups.insert(s, g);
            }
        }
    }

    ctx.out.emit("groups.csv", |buf| write_groups_csv(&groups, buf))?;
    let rec = reciprocity(&groups);
    let mut rows: Vec<[String; 3]> = rec.pairs.iter().map(|(a, b)| ["pair".into(), a.code().into(), b.code().into()]).collect();
    rows.extend(rec.never_reciprocal.iter().map(|s| ["never_reciprocal".into(), s.code().into(), String::new()]));
    ctx.out.table("reciprocity.csv", &["kind", "state_a", "state_b"], rows)?;
    let sizes = group_size_distribution(&groups);
    ctx.out.table("group_sizes.csv", &["size", "count"], sizes.iter().map(|(k, v)| [k.to_string(), v.to_string()]))?;
    ctx.out.table(
        "group_summary.csv",
        &["target", "size", "total_population", "provenance", "floor_unmet"],
        groups.values().map(|g| {
            [
                g.target.code().to_string(),
                g.len().to_string(),
                g.total_population.map(|p| p.to_string()).unwrap_or_default(),
                g.provenance.as_str().to_string(),
                g.floor_unmet.to_string(),
            ]
        }),
    )?;
    log::info!(
        "built {} {} groups; sizes {}",
        groups.len(),
        cfg.grouping.mode,
        sizes.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(" ")
    );
    Ok(())
}
