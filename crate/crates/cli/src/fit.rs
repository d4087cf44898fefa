//! Fit one model per (kernel, sex, target) plus a national model, in a
//! bounded worker pool.

use std::collections::BTreeMap;
use std::time::Instant;

use mortgp::grouping::read_groups_csv;
use mortgp::{FitConfig, KernelFamily, Sex, StateGroup, StateId, TrainingSet};
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::output::write_atomic;
use crate::pipeline::{model_path, population_code, read_all_training, Context, ModelFile};

struct Task {
    kernel: KernelFamily,
    sex: Sex,
    /// `None` for the national model.
    target: Option<StateId>,
    members: Vec<Option<StateId>>,
}

struct Record {
    n: usize,
    outcome: std::result::Result<Summary, CliError>,
}

struct Summary {
    log_likelihood: f64,
    restart: usize,
    iterations: u64,
    converged: bool,
    restarts_ok: usize,
    noise: f64,
    jitter: f64,
}

pub fn read_groups(ctx: &Context) -> Result<BTreeMap<StateId, StateGroup>> {
    let text = ctx.out.read_to_string("groups.csv")?;
    let groups = read_groups_csv(text.as_bytes())?;
    if let Some(s) = StateId::ALL.iter().find(|s| !groups.contains_key(s)) {
        return Err(CliError::Config(format!("groups.csv has no group for {s}")));
    }
    Ok(groups)
}

fn fit_one(ctx: &Context, task: &Task, data: &TrainingSet) -> std::result::Result<Summary, CliError> {
    let f = &ctx.config.fit;
    let config = FitConfig {
        family: task.kernel,
        q: f.q.min(data.population_count()),
        bounds: f.bounds,
        restarts: f.restarts,
        seed: f.seed,
        trend: f.trend,
        max_iterations: f.max_iterations,
    };
    let started = Instant::now();
    let model = mortgp::gp::fit(data, &config)?;
    log::info!(
        "fit {} {} {} ({} outputs, n={}): lml {:.4} in {:.1}s",
        task.kernel,
        task.sex,
        population_code(task.target),
        data.population_count(),
        data.len(),
        model.diagnostics.log_likelihood,
        started.elapsed().as_secs_f64()
    );
    let summary = Summary {
        log_likelihood: model.diagnostics.log_likelihood,
        restart: model.diagnostics.restart,
        iterations: model.diagnostics.iterations,
        converged: model.diagnostics.converged,
        restarts_ok: model.diagnostics.restarts.iter().filter(|r| r.error.is_none()).count(),
        noise: model.hyperparameters.noise[0],
        jitter: model.jitter,
    };
    let file = ModelFile::new(ctx, task.kernel, task.sex, population_code(task.target), model);
    let json = serde_json::to_string_pretty(&file)?;
    write_atomic(&ctx.out.path(&model_path(task.kernel, task.sex, task.target)), json.as_bytes())?;
    Ok(summary)
}

pub fn run(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let groups = read_groups(ctx)?;
    let training = read_all_training(ctx)?;

    let mut tasks = Vec::new();
    for &kernel in &cfg.fit.kernels {
        for &sex in &cfg.fit.sexes {
            for (s, g) in &groups {
                tasks.push(Task { kernel, sex, target: Some(*s), members: g.members.iter().copied().map(Some).collect() });
            }
            tasks.push(Task { kernel, sex, target: None, members: vec![None] });
        }
    }

    let workers = if cfg.fit.workers == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { cfg.fit.workers };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    log::info!("fitting {} models on {workers} worker(s)", tasks.len());
    let records: Vec<Record> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let parts: Vec<TrainingSet> = task.members.iter().map(|m| training[&(*m, task.sex)].clone()).collect();
                let data = TrainingSet::stack(&parts);
                let outcome = fit_one(ctx, task, &data);
                if outcome.is_err() {
                    // never leave a stale model behind for a failed task
                    let _ = std::fs::remove_file(ctx.out.path(&model_path(task.kernel, task.sex, task.target)));
                }
                Record { n: data.len(), outcome }
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(tasks.len());
    let mut failures = Vec::new();
    let mut breach = None;
    for (task, rec) in tasks.iter().zip(&records) {
        let members = task.members.iter().map(|m| population_code(*m)).collect::<Vec<_>>().join(" ");
        let mut row = vec![task.kernel.to_string(), task.sex.to_string(), population_code(task.target).to_string(), members, rec.n.to_string()];
        match &rec.outcome {
            Ok(s) => {
                row.extend([
                    s.log_likelihood.to_string(),
                    s.restart.to_string(),
                    s.restarts_ok.to_string(),
                    s.iterations.to_string(),
                    s.converged.to_string(),
                    s.noise.sqrt().to_string(),
                    s.jitter.to_string(),
                    "ok".into(),
                    String::new(),
                ]);
            }
            Err(e) => {
                let name = format!("{} {} {}", task.kernel, task.sex, population_code(task.target));
                log::error!("fit {name} failed: {e}");
                if matches!(e, CliError::Invariant(_)) && breach.is_none() {
                    breach = Some(format!("{name}: {e}"));
                }
                failures.push(name);
                row.extend(std::iter::repeat_n(String::new(), 8).chain([e.to_string()]));
                row[12] = "failed".into();
            }
        }
        rows.push(row);
    }
    ctx.out.table(
        "fit_log.csv",
        &[
            "kernel",
            "sex",
            "target",
            "members",
            "n",
            "log_likelihood",
            "best_restart",
            "restarts_ok",
            "iterations",
            "converged",
            "noise_sd_target",
            "jitter",
            "status",
            "message",
        ],
        rows,
    )?;
    if let Some(b) = breach {
        return Err(CliError::Invariant(b));
    }
    if !failures.is_empty() {
        return Err(CliError::PartialFit(failures.len(), failures.join(", ")));
    }
    Ok(())
}
