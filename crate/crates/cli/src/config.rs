//! Run configuration: one TOML file, with command-line flags as overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mortgp::gp::Bounds;
use mortgp::lifetable::ColumnSchema;
use mortgp::{KernelFamily, Sex, TrendMode, Window};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum GroupingMode {
    Pca,
    CensusRegion,
    SingleState,
}

impl fmt::Display for GroupingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupingMode::Pca => "pca",
            GroupingMode::CensusRegion => "census_region",
            GroupingMode::SingleState => "single_state",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub mortality: PathBuf,
    #[serde(default)]
    pub covariates: Option<PathBuf>,
    /// Defaults to the bundled U.S. contiguity table.
    #[serde(default)]
    pub adjacency: Option<PathBuf>,
    #[serde(default)]
    pub populations: Option<PathBuf>,
    #[serde(default)]
    pub life_expectancy: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Forecast {
    /// First predicted year; the window start when unset.
    pub year_min: Option<i32>,
    pub year_max: i32,
}

impl Default for Forecast {
    fn default() -> Self {
        Self { year_min: None, year_max: 2020 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grouping {
    pub mode: GroupingMode,
    pub population_floor: f64,
    pub components: usize,
    pub rounds: usize,
    pub max_members: usize,
}

impl Default for Grouping {
    fn default() -> Self {
        Self { mode: GroupingMode::Pca, population_floor: 5_000_000.0, components: 3, rounds: 10, max_members: 9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fit {
    pub kernels: Vec<KernelFamily>,
    pub sexes: Vec<Sex>,
    pub q: usize,
    pub restarts: usize,
    pub seed: u64,
    pub trend: TrendMode,
    pub max_iterations: u64,
    /// Concurrent fits; 0 means available parallelism.
    pub workers: usize,
    pub bounds: Bounds,
}

impl Default for Fit {
    fn default() -> Self {
        Self {
            kernels: vec![KernelFamily::Matern52, KernelFamily::SqExp],
            sexes: vec![Sex::Female, Sex::Male],
            q: 3,
            restarts: 10,
            seed: 0,
            trend: TrendMode::default(),
            max_iterations: 500,
            workers: 0,
            bounds: Bounds::default(),
        }
    }
}

/// Years left unset default to the forecast end year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analysis {
    pub rate_kernel: KernelFamily,
    pub mi_kernel: KernelFamily,
    pub level: f64,
    pub rank_ages: Vec<u32>,
    pub rank_years: Vec<i32>,
    pub bump_ages: Vec<u32>,
    pub bump_years: Vec<i32>,
    pub heatmap_year: Option<i32>,
    pub sort_age: u32,
    pub mi_summary_ages: Vec<u32>,
    pub mi_summary_year: Option<i32>,
    pub correlation_age: u32,
    pub correlation_year: Option<i32>,
    pub decade_base_year: Option<i32>,
}

impl Default for Analysis {
    fn default() -> Self {
        Self {
            rate_kernel: KernelFamily::Matern52,
            mi_kernel: KernelFamily::SqExp,
            level: 0.95,
            rank_ages: vec![65],
            rank_years: Vec::new(),
            bump_ages: vec![65],
            bump_years: vec![2000, 2010, 2020],
            heatmap_year: None,
            sort_age: 65,
            mi_summary_ages: vec![65, 75],
            mi_summary_year: None,
            correlation_age: 65,
            correlation_year: None,
            decade_base_year: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub forecast: Forecast,
    #[serde(default)]
    pub grouping: Grouping,
    #[serde(default)]
    pub fit: Fit,
    #[serde(default)]
    pub analysis: Analysis,
    #[serde(default)]
    pub columns: ColumnSchema,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SexChoice {
    Male,
    Female,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum KernelChoice {
    Matern52,
    Sqexp,
    Both,
}

/// Flag values that replace config keys when present.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<GroupingMode>,
    pub sex: Option<SexChoice>,
    pub kernel: Option<KernelChoice>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Read `path`, resolve relative paths against its directory and apply overrides.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading config {}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.apply(overrides);
        if let Some(out) = &overrides.out {
            config.paths.output = out.clone();
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.paths.mortality);
        join(&mut self.paths.output);
        for p in [&mut self.paths.covariates, &mut self.paths.adjacency, &mut self.paths.populations, &mut self.paths.life_expectancy]
            .into_iter()
            .flatten()
        {
            join(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.fit.seed = seed;
        }
        if let Some(mode) = o.mode {
            self.grouping.mode = mode;
        }
        if let Some(sex) = o.sex {
            self.fit.sexes = match sex {
                SexChoice::Male => vec![Sex::Male],
                SexChoice::Female => vec![Sex::Female],
                SexChoice::Both => vec![Sex::Female, Sex::Male],
            };
        }
        if let Some(kernel) = o.kernel {
            self.fit.kernels = match kernel {
                KernelChoice::Matern52 => vec![KernelFamily::Matern52],
                KernelChoice::Sqexp => vec![KernelFamily::SqExp],
                KernelChoice::Both => vec![KernelFamily::Matern52, KernelFamily::SqExp],
            };
        }
        if let Some(workers) = o.workers {
            self.fit.workers = workers;
        }
    }

    /// Structural checks that need no file access beyond existence.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.window.is_empty() {
            return bad("window is empty".into());
        }
        if self.fit.q == 0 {
            return bad("fit.q must be at least 1".into());
        }
        if self.fit.restarts == 0 {
            return bad("fit.restarts must be at least 1".into());
        }
        if self.fit.kernels.is_empty() || self.fit.sexes.is_empty() {
            return bad("fit.kernels and fit.sexes must be nonempty".into());
        }
        if !(self.analysis.level > 0.0 && self.analysis.level < 1.0) {
            return bad(format!("analysis.level must lie in (0, 1), got {}", self.analysis.level));
        }
        if self.grouping.components == 0 {
            return bad("grouping.components must be at least 1".into());
        }
        let (first, last) = (self.predict_year_min(), self.forecast.year_max);
        if first > last || last < self.window.year_max {
            return bad(format!("forecast years {first}..={last} must cover the window end {}", self.window.year_max));
        }
        let ages = self.window.age_min..=self.window.age_max;
        let analysis_ages = self.analysis.rank_ages.iter().chain(&self.analysis.bump_ages).chain(&self.analysis.mi_summary_ages);
        for &age in analysis_ages.chain([&self.analysis.sort_age, &self.analysis.correlation_age]) {
            if !ages.contains(&age) {
                return bad(format!("analysis age {age} lies outside the window ages {}..={}", ages.start(), ages.end()));
            }
        }
        let years = self.predict_year_min()..=self.forecast.year_max;
        for year in self.rank_years().into_iter().chain(self.analysis.bump_years.iter().copied()).chain([
            self.heatmap_year(),
            self.mi_summary_year(),
            self.correlation_year(),
            self.decade_base_year(),
        ]) {
            if !years.contains(&year) {
                return bad(format!("analysis year {year} lies outside the predicted years {}..={}", years.start(), years.end()));
            }
        }
        for year in [self.heatmap_year(), self.mi_summary_year(), self.correlation_year()] {
            if year <= self.predict_year_min() {
                return bad(format!("improvement factors need the year before {year} on the prediction grid"));
            }
        }
        let mut required = vec![("paths.mortality", Some(&self.paths.mortality))];
        if self.grouping.mode == GroupingMode::Pca {
            required.push(("paths.covariates", self.paths.covariates.as_ref()));
            required.push(("paths.populations", self.paths.populations.as_ref()));
        }
        for (key, path) in required {
            match path {
                None => return bad(format!("{key} is required in {} mode", self.grouping.mode)),
                Some(p) if !p.is_file() => return bad(format!("{key}: {} does not exist", p.display())),
                Some(_) => {}
            }
        }
        for (key, path) in [
            ("paths.covariates", &self.paths.covariates),
            ("paths.adjacency", &self.paths.adjacency),
            ("paths.populations", &self.paths.populations),
            ("paths.life_expectancy", &self.paths.life_expectancy),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return bad(format!("{key}: {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    pub fn predict_year_min(&self) -> i32 {
        self.forecast.year_min.unwrap_or(self.window.year_min)
    }

    pub fn predict_years(&self) -> Vec<i32> {
        (self.predict_year_min()..=self.forecast.year_max).collect()
    }

    pub fn rank_years(&self) -> Vec<i32> {
        if self.analysis.rank_years.is_empty() {
            vec![self.forecast.year_max]
        } else {
            self.analysis.rank_years.clone()
        }
    }

    pub fn heatmap_year(&self) -> i32 {
        self.analysis.heatmap_year.unwrap_or(self.forecast.year_max)
    }

    pub fn mi_summary_year(&self) -> i32 {
        self.analysis.mi_summary_year.unwrap_or(self.forecast.year_max)
    }

    pub fn correlation_year(&self) -> i32 {
        self.analysis.correlation_year.unwrap_or(self.forecast.year_max)
    }

    pub fn decade_base_year(&self) -> i32 {
        self.analysis.decade_base_year.unwrap_or(self.correlation_year() - 10)
    }

    /// SHA-256 of the effective configuration. The output directory and the
    /// location of the config file do not contribute, so relocated reruns
    /// hash identically.
    pub fn fingerprint(&self, base: &Path) -> String {
        let mut canonical = self.clone();
        canonical.paths.output = PathBuf::new();
        let strip = |p: &mut PathBuf| {
            if let Ok(rel) = p.strip_prefix(base) {
                *p = rel.to_path_buf();
            }
        };
        strip(&mut canonical.paths.mortality);
        for p in
            [&mut canonical.paths.covariates, &mut canonical.paths.adjacency, &mut canonical.paths.populations, &mut canonical.paths.life_expectancy]
                .into_iter()
                .flatten()
        {
            strip(p);
        }
        let text = toml::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

impl FromStr for RunConfig {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_toml(s)
    }
}
