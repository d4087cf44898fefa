//! Life-table ingestion: death/exposure rows into log-mortality training sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::state::StateId;

#[derive(Debug, thiserror::Error)]
pub enum LifeTableError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: exposure must be positive")]
    ZeroExposure { line: u64 },
    #[error("line {line}: unknown state code {code:?}")]
    UnknownState { line: u64, code: String },
    #[error("line {line}: duplicate cell {state} {sex} age {age} year {year}")]
    DuplicateCell { line: u64, state: StateId, sex: Sex, age: u32, year: i32 },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("zero deaths: log-mortality undefined")]
    MissingCell,
    #[error("exposure must be positive, got {0}")]
    NonPositiveExposure(f64),
    #[error("{state} age {age} year {year}: mortality rate {rate} is not below 1")]
    RateOutOfRange { state: StateId, age: u32, year: i32, rate: f64 },
    #[error("no records inside the requested window")]
    EmptySubset,
    #[error("window is empty")]
    EmptyWindow,
    #[error("age {age} year {year}: missing from {missing:?}")]
    IncompleteCoverage { age: u32, year: i32, missing: Vec<StateId> },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub const BOTH: [Sex; 2] = [Sex::Male, Sex::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" | "males" => Ok(Sex::Male),
            "f" | "female" | "females" => Ok(Sex::Female),
            other => Err(format!("unknown sex {other:?}")),
        }
    }
}

/// One (state, sex, age, year) cell. Deaths may be fractional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifeTableRecord {
    pub state: StateId,
    pub sex: Sex,
    pub age: u32,
    pub year: i32,
    pub deaths: f64,
    pub exposure: f64,
}

impl LifeTableRecord {
    pub fn rate(&self) -> f64 {
        self.deaths / self.exposure
    }

    pub fn log_mortality(&self) -> Result<f64, LifeTableError> {
        log_mortality(self.deaths, self.exposure)
    }
}

/// `log(deaths / exposure)`. Zero deaths is reported as [`LifeTableError::MissingCell`].
pub fn log_mortality(deaths: f64, exposure: f64) -> Result<f64, LifeTableError> {
    if exposure <= 0.0 || !exposure.is_finite() {
        return Err(LifeTableError::NonPositiveExposure(exposure));
    }
    if deaths == 0.0 {
        return Err(LifeTableError::MissingCell);
    }
    Ok((deaths / exposure).ln())
}

/// Column names used to locate each field in a delimited life-table file.
///
/// Either `deaths` + `exposure` or `rate` must resolve. When only a rate is
/// given, exposure defaults to 1 so the rate is carried in `deaths`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub state: String,
    pub sex: String,
    pub age: String,
    pub year: String,
    pub deaths: Option<String>,
    pub exposure: Option<String>,
    pub rate: Option<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            state: "PopName".into(),
            sex: "Sex".into(),
            age: "Age".into(),
            year: "Year".into(),
            deaths: Some("Deaths".into()),
            exposure: Some("Exposure".into()),
            rate: None,
        }
    }
}

struct ColumnIndex {
    state: usize,
    sex: usize,
    age: usize,
    year: usize,
    deaths: Option<usize>,
    exposure: Option<usize>,
    rate: Option<usize>,
}

impl ColumnIndex {
    fn resolve(schema: &ColumnSchema, header: &csv::StringRecord) -> Result<Self, LifeTableError> {
        let find = |name: &str| header.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let require = |name: &str| find(name).ok_or_else(|| LifeTableError::MissingColumn(name.to_string()));
        let optional = |name: &Option<String>| name.as_deref().and_then(find);
        let idx = Self {
            state: require(&schema.state)?,
            sex: require(&schema.sex)?,
            age: require(&schema.age)?,
            year: require(&schema.year)?,
            deaths: optional(&schema.deaths),
            exposure: optional(&schema.exposure),
            rate: optional(&schema.rate),
        };
        if idx.rate.is_none() && (idx.deaths.is_none() || idx.exposure.is_none()) {
            let missing = if idx.deaths.is_none() {
                schema.deaths.clone().unwrap_or_else(|| "deaths".into())
            } else {
                schema.exposure.clone().unwrap_or_else(|| "exposure".into())
            };
            return Err(LifeTableError::MissingColumn(missing));
        }
        Ok(idx)
    }
}

fn sniff_delimiter(text: &str) -> u8 {
    let header = text.lines().find(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());
    match header {
        Some(h) if h.contains('\t') => b'\t',
        _ => b',',
    }
}

fn parse_number(field: &str, what: &str, line: u64) -> Result<f64, LifeTableError> {
    let v: f64 = field.trim().parse().map_err(|_| LifeTableError::Malformed { line, message: format!("{what} {field:?} is not a number") })?;
    if !v.is_finite() {
        return Err(LifeTableError::Malformed { line, message: format!("{what} is not finite") });
    }
    Ok(v)
}

fn parse_age(field: &str, line: u64) -> Result<u32, LifeTableError> {
    // open-ended top ages are written like "110+"
    let digits = field.trim().trim_end_matches('+');
    digits.parse().map_err(|_| LifeTableError::Malformed { line, message: format!("age {field:?} is not an integer") })
}

/// Parse a comma- or tab-delimited life table with a header row.
///
/// Line numbers in errors are 1-based file lines (the header is line 1).
/// Lines starting with `#` are treated as comments.
pub fn parse_usmdb<R: Read>(mut source: R, schema: &ColumnSchema) -> Result<Vec<LifeTableRecord>, LifeTableError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut reader =
        csv::ReaderBuilder::new().delimiter(sniff_delimiter(&text)).comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let idx = ColumnIndex::resolve(schema, reader.headers()?)?;

    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            LifeTableError::Malformed { line, message: e.to_string() }
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");

        let code = field(idx.state);
        let state: StateId = code.parse().map_err(|_| LifeTableError::UnknownState { line, code: code.to_string() })?;
        let sex: Sex = field(idx.sex).parse().map_err(|message| LifeTableError::Malformed { line, message })?;
        let age = parse_age(field(idx.age), line)?;
        let year: i32 = field(idx.year)
            .trim()
            .parse()
            .map_err(|_| LifeTableError::Malformed { line, message: format!("year {:?} is not an integer", field(idx.year)) })?;

        let (deaths, exposure) = match (idx.deaths, idx.exposure) {
            (Some(d), Some(e)) => (parse_number(field(d), "deaths", line)?, parse_number(field(e), "exposure", line)?),
            (_, exposure) => {
                let rate = parse_number(field(idx.rate.expect("resolved")), "rate", line)?;
                let exposure = match exposure {
                    Some(e) => parse_number(field(e), "exposure", line)?,
                    None => 1.0,
                };
                (rate * exposure, exposure)
            }
        };
        if exposure <= 0.0 {
            return Err(LifeTableError::ZeroExposure { line });
        }
        if deaths < 0.0 {
            return Err(LifeTableError::Malformed { line, message: "deaths must be nonnegative".into() });
        }
        if !seen.insert((state, sex, age, year)) {
            return Err(LifeTableError::DuplicateCell { line, state, sex, age, year });
        }
        records.push(LifeTableRecord { state, sex, age, year, deaths, exposure });
    }
    Ok(records)
}

/// Write records in the default column layout; `parse_usmdb` with the default
/// schema reads them back exactly.
pub fn write_records<W: Write>(records: &[LifeTableRecord], sink: W) -> Result<(), LifeTableError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["PopName", "Sex", "Year", "Age", "Deaths", "Exposure"])?;
    for r in records {
        w.write_record([
            r.state.code().to_string(),
            r.sex.as_str().to_string(),
            r.year.to_string(),
            r.age.to_string(),
            r.deaths.to_string(),
            r.exposure.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Inclusive age and calendar-year ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub age_min: u32,
    pub age_max: u32,
    pub year_min: i32,
    pub year_max: i32,
}

impl Default for Window {
    fn default() -> Self {
        Self { age_min: 60, age_max: 84, year_min: 1990, year_max: 2018 }
    }
}

impl Window {
    pub fn new(ages: std::ops::RangeInclusive<u32>, years: std::ops::RangeInclusive<i32>) -> Self {
        Self { age_min: *ages.start(), age_max: *ages.end(), year_min: *years.start(), year_max: *years.end() }
    }

    pub fn is_empty(&self) -> bool {
        self.age_min > self.age_max || self.year_min > self.year_max
    }

    pub fn contains(&self, age: u32, year: i32) -> bool {
        (self.age_min..=self.age_max).contains(&age) && (self.year_min..=self.year_max).contains(&year)
    }

    pub fn ages(&self) -> impl Iterator<Item = u32> {
        self.age_min..=self.age_max
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.year_min..=self.year_max
    }

    pub fn cell_count(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.age_max - self.age_min + 1) as usize * (self.year_max - self.year_min + 1) as usize
        }
    }
}

/// A cell left out of a training set, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCell {
    pub population: String,
    pub age: u32,
    pub year: i32,
    pub reason: String,
}

/// Log-mortality observations for one or more populations.
///
/// Cells are stored in canonical order: population label, then age, then year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    /// Population name for each label index.
    pub populations: Vec<String>,
    pub inputs: Vec<(u32, i32)>,
    pub outputs: Vec<f64>,
    pub labels: Vec<usize>,
    #[serde(default)]
    pub excluded: Vec<ExcludedCell>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn population_count(&self) -> usize {
        self.populations.len()
    }

    /// Concatenate single- or multi-population sets; labels are renumbered in
    /// the order given.
    pub fn stack(parts: &[TrainingSet]) -> TrainingSet {
        let mut out = TrainingSet { populations: Vec::new(), inputs: Vec::new(), outputs: Vec::new(), labels: Vec::new(), excluded: Vec::new() };
        for part in parts {
            let offset = out.populations.len();
            out.populations.extend(part.populations.iter().cloned());
            out.inputs.extend_from_slice(&part.inputs);
            out.outputs.extend_from_slice(&part.outputs);
            out.labels.extend(part.labels.iter().map(|l| l + offset));
            out.excluded.extend(part.excluded.iter().cloned());
        }
        out
    }

    /// Cells inside `window`, preserving order and population labels.
    pub fn restrict(&self, window: &Window) -> TrainingSet {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| window.contains(self.inputs[i].0, self.inputs[i].1)).collect();
        TrainingSet {
            populations: self.populations.clone(),
            inputs: keep.iter().map(|&i| self.inputs[i]).collect(),
            outputs: keep.iter().map(|&i| self.outputs[i]).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            excluded: self.excluded.iter().filter(|c| window.contains(c.age, c.year)).cloned().collect(),
        }
    }

    /// Single population `label` as its own set.
    pub fn population(&self, label: usize) -> TrainingSet {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
        let name = self.populations[label].clone();
        TrainingSet {
            populations: vec![name.clone()],
            inputs: keep.iter().map(|&i| self.inputs[i]).collect(),
            outputs: keep.iter().map(|&i| self.outputs[i]).collect(),
            labels: vec![0; keep.len()],
            excluded: self.excluded.iter().filter(|c| c.population == name).cloned().collect(),
        }
    }

    /// CSV with columns `population,age,year,log_mortality` in canonical order.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), LifeTableError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["population", "age", "year", "log_mortality"])?;
        for i in 0..self.len() {
            let (age, year) = self.inputs[i];
            w.write_record([self.populations[self.labels[i]].clone(), age.to_string(), year.to_string(), self.outputs[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`TrainingSet::write_csv`]. Populations are labelled in order of
    /// first appearance.
    pub fn read_csv<R: Read>(source: R) -> Result<TrainingSet, LifeTableError> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(source);
        let mut set = TrainingSet { populations: Vec::new(), inputs: Vec::new(), outputs: Vec::new(), labels: Vec::new(), excluded: Vec::new() };
        for row in reader.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            if row.len() != 4 {
                return Err(LifeTableError::Malformed { line, message: format!("expected 4 fields, got {}", row.len()) });
            }
            let pop = row[0].to_string();
            let label = match set.populations.iter().position(|p| *p == pop) {
                Some(l) => l,
                None => {
                    set.populations.push(pop);
                    set.populations.len() - 1
                }
            };
            let age = parse_age(&row[1], line)?;
            let year: i32 =
                row[2].parse().map_err(|_| LifeTableError::Malformed { line, message: format!("year {:?} is not an integer", &row[2]) })?;
            let y = parse_number(&row[3], "log_mortality", line)?;
            set.inputs.push((age, year));
            set.outputs.push(y);
            set.labels.push(label);
        }
        Ok(set)
    }
}

type CellsByState<'a> = BTreeMap<StateId, BTreeMap<(u32, i32), &'a LifeTableRecord>>;

fn collect_window<'a>(records: &'a [LifeTableRecord], window: &Window, sex: Sex) -> Result<CellsByState<'a>, LifeTableError> {
    if window.is_empty() {
        return Err(LifeTableError::EmptyWindow);
    }
    let mut by_state = CellsByState::new();
    for r in records.iter().filter(|r| r.sex == sex && window.contains(r.age, r.year)) {
        if by_state.entry(r.state).or_default().insert((r.age, r.year), r).is_some() {
            return Err(LifeTableError::DuplicateCell { line: 0, state: r.state, sex, age: r.age, year: r.year });
        }
    }
    if by_state.is_empty() {
        return Err(LifeTableError::EmptySubset);
    }
    Ok(by_state)
}

fn push_cell(
    set: &mut TrainingSet,
    label: usize,
    (age, year): (u32, i32),
    deaths: f64,
    exposure: f64,
    state: Option<StateId>,
) -> Result<(), LifeTableError> {
    let rate = deaths / exposure;
    if rate >= 1.0 {
        return Err(LifeTableError::RateOutOfRange { state: state.unwrap_or(StateId::ALL[0]), age, year, rate });
    }
    match log_mortality(deaths, exposure) {
        Ok(y) => {
            set.inputs.push((age, year));
            set.outputs.push(y);
            set.labels.push(label);
        }
        Err(LifeTableError::MissingCell) => {
            set.excluded.push(ExcludedCell { population: set.populations[label].clone(), age, year, reason: "zero deaths".into() })
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

/// Records of `sex` inside `window`, one population per state present (in
/// `StateId` order), cells age-major then year ascending.
///
/// Zero-death cells are left out and listed in `excluded`.
pub fn subset(records: &[LifeTableRecord], window: &Window, sex: Sex) -> Result<TrainingSet, LifeTableError> {
    let by_state = collect_window(records, window, sex)?;
    let mut set = TrainingSet {
        populations: by_state.keys().map(|s| s.code().to_string()).collect(),
        inputs: Vec::new(),
        outputs: Vec::new(),
        labels: Vec::new(),
        excluded: Vec::new(),
    };
    for (label, (state, cells)) in by_state.iter().enumerate() {
        for (&cell, r) in cells {
            push_cell(&mut set, label, cell, r.deaths, r.exposure, Some(*state))?;
        }
    }
    if set.is_empty() {
        return Err(LifeTableError::EmptySubset);
    }
    Ok(set)
}

/// Name used for the aggregated national population.
pub const NATIONAL: &str = "US";

/// Sum deaths and exposures across every state present, per cell, then take logs.
///
/// Every state that appears in the window must cover every cell that any state
/// covers.
pub fn aggregate_national(records: &[LifeTableRecord], window: &Window, sex: Sex) -> Result<TrainingSet, LifeTableError> {
    let by_state = collect_window(records, window, sex)?;
    let cells: BTreeSet<(u32, i32)> = by_state.values().flat_map(|c| c.keys().copied()).collect();
    let mut set =
        TrainingSet { populations: vec![NATIONAL.to_string()], inputs: Vec::new(), outputs: Vec::new(), labels: Vec::new(), excluded: Vec::new() };
    for cell in cells {
        let missing: Vec<StateId> = by_state.iter().filter(|(_, c)| !c.contains_key(&cell)).map(|(s, _)| *s).collect();
        if !missing.is_empty() {
            return Err(LifeTableError::IncompleteCoverage { age: cell.0, year: cell.1, missing });
        }
        let (deaths, exposure) = by_state.values().map(|c| c[&cell]).fold((0.0, 0.0), |(d, e), r| (d + r.deaths, e + r.exposure));
        push_cell(&mut set, 0, cell, deaths, exposure, None)?;
    }
    Ok(set)
}
