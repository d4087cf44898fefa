//! Shared state and file layout for the pipeline steps.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mortgp::lifetable::NATIONAL;
use mortgp::{FittedModel, KernelFamily, Sex, StateId, TrainingSet};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{OutputTree, TOOL};

pub struct Context {
    pub config: RunConfig,
    pub out: OutputTree,
}

impl Context {
    pub fn new(config: RunConfig, config_path: &Path) -> Self {
        let base = config_path.parent().unwrap_or(Path::new("."));
        let hash = config.fingerprint(base);
        let out = OutputTree::new(config.paths.output.clone(), hash);
        Self { config, out }
    }
}

/// Population code used in file names: a state code or the national label.
pub fn population_code(state: Option<StateId>) -> &'static str {
    state.map_or(NATIONAL, StateId::code)
}

pub fn training_path(state: Option<StateId>, sex: Sex) -> String {
    match state {
        Some(s) => format!("training/{}_{}.csv", s.code(), sex.as_str()),
        None => format!("training/national/{NATIONAL}_{}.csv", sex.as_str()),
    }
}

pub fn model_path(kernel: KernelFamily, sex: Sex, state: Option<StateId>) -> String {
    format!("models/{}/{}/{}.json", kernel.as_str(), sex.as_str(), population_code(state))
}

pub fn read_training(ctx: &Context, state: Option<StateId>, sex: Sex) -> Result<TrainingSet> {
    let text = ctx.out.read_to_string(&training_path(state, sex))?;
    TrainingSet::read_csv(text.as_bytes()).map_err(|e| CliError::Config(format!("{}: {e}", training_path(state, sex))))
}

/// A serialized model with the run it came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub tool: String,
    pub config: String,
    pub kernel: KernelFamily,
    pub sex: Sex,
    pub target: String,
    pub members: Vec<String>,
    pub model: FittedModel,
}

impl ModelFile {
    pub fn new(ctx: &Context, kernel: KernelFamily, sex: Sex, target: &str, model: FittedModel) -> Self {
        Self {
            tool: TOOL.to_string(),
            config: ctx.out.config_hash().to_string(),
            kernel,
            sex,
            target: target.to_string(),
            members: model.training.populations.clone(),
            model,
        }
    }
}

pub fn load_model(ctx: &Context, kernel: KernelFamily, sex: Sex, state: Option<StateId>) -> Result<ModelFile> {
    let rel = model_path(kernel, sex, state);
    let path = ctx.out.path(&rel);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Config(format!("missing model {rel}")),
        _ => CliError::Io { context: format!("reading {}", path.display()), source: e },
    })?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{rel}: {e}")))?;
    file.model.verify().map_err(|e| CliError::from(e).within(&rel))?;
    if file.kernel != kernel || file.sex != sex || file.target != population_code(state) {
        return Err(CliError::Config(format!("{rel} describes {} {} {}", file.kernel, file.sex, file.target)));
    }
    Ok(file)
}

/// Every (population, sex) training set, read once.
pub fn read_all_training(ctx: &Context) -> Result<BTreeMap<(Option<StateId>, Sex), TrainingSet>> {
    let mut out = BTreeMap::new();
    for &sex in &ctx.config.fit.sexes {
        for state in StateId::ALL.iter().copied().map(Some).chain([None]) {
            out.insert((state, sex), read_training(ctx, state, sex)?);
        }
    }
    Ok(out)
}
