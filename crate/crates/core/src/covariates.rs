//! State covariate table, correlation-matrix PCA and the eigenvalue-weighted
//! distance between states.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::state::StateId;

/// Canonical covariate identifiers, in file-column order.
pub const COVARIATE_IDS: [&str; 18] = ["EA", "GDP", "MI", "RPP", "PR", "UP", "NMP", "ED", "HI", "OR", "PP", "R", "TP", "RH", "DP", "PD", "LF", "IP"];

/// Covariate whose correlation fixes the sign of each leading component:
/// median income positive, temperature negative, GDP growth positive.
const SIGN_ANCHORS: [(&str, f64); 3] = [("MI", 1.0), ("TP", -1.0), ("GDP", 1.0)];

const EIGEN_TIE: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum CovariateError {
    #[error("covariate {0:?} has zero variance")]
    ZeroVariance(String),
    #[error("requested {requested} components but the table has effective rank {effective_rank}")]
    RankDeficient { requested: usize, effective_rank: usize },
    #[error("invalid component count {0}")]
    InvalidComponents(usize),
    #[error("state {0} not in the table")]
    UnknownState(StateId),
    #[error("no covariate row for state {} ({})", .0, .0.name())]
    MissingState(StateId),
    #[error("missing covariate column {0:?}")]
    MissingCovariate(String),
    #[error("target is constant; correlation undefined")]
    ConstantTarget,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// States × covariates matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateTable {
    pub states: Vec<StateId>,
    pub covariate_ids: Vec<String>,
    pub values: DMatrix<f64>,
}

fn column_stats(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl CovariateTable {
    pub fn new(states: Vec<StateId>, covariate_ids: Vec<String>, values: DMatrix<f64>) -> Result<Self, CovariateError> {
        if values.nrows() != states.len() {
            return Err(CovariateError::LengthMismatch { expected: states.len(), actual: values.nrows() });
        }
        if values.ncols() != covariate_ids.len() {
            return Err(CovariateError::LengthMismatch { expected: covariate_ids.len(), actual: values.ncols() });
        }
        Ok(Self { states, covariate_ids, values })
    }

    /// Parse a `state,<id>,<id>,...` CSV; rows are sorted by state.
    pub fn read_csv<R: Read>(source: R) -> Result<Self, CovariateError> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(source);
        let header = reader.headers()?.clone();
        if header.is_empty() || !header[0].eq_ignore_ascii_case("state") {
            return Err(CovariateError::Malformed { line: 1, message: "first column must be `state`".into() });
        }
        let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows: BTreeMap<StateId, Vec<f64>> = BTreeMap::new();
        for row in reader.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let state: StateId =
                row[0].parse().map_err(|e: crate::state::UnknownState| CovariateError::Malformed { line, message: e.to_string() })?;
            let vals = row
                .iter()
                .skip(1)
                .map(|f| match f.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(CovariateError::Malformed { line, message: format!("value {f:?} is not a finite number") }),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if vals.len() != ids.len() {
                return Err(CovariateError::Malformed { line, message: format!("expected {} values", ids.len()) });
            }
            if rows.insert(state, vals).is_some() {
                return Err(CovariateError::Malformed { line, message: format!("duplicate row for {state}") });
            }
        }
        let states: Vec<StateId> = rows.keys().copied().collect();
        let values = DMatrix::from_fn(states.len(), ids.len(), |i, j| rows[&states[i]][j]);
        Self::new(states, ids, values)
    }

    /// Check the table has a row for every state and the 18 canonical columns,
    /// and reorder columns canonically.
    pub fn into_canonical(self) -> Result<Self, CovariateError> {
        if let Some(missing) = StateId::ALL.iter().find(|s| !self.states.contains(s)) {
            return Err(CovariateError::MissingState(*missing));
        }
        let mut cols = Vec::with_capacity(COVARIATE_IDS.len());
        for id in COVARIATE_IDS {
            let j =
                self.covariate_ids.iter().position(|c| c.eq_ignore_ascii_case(id)).ok_or_else(|| CovariateError::MissingCovariate(id.to_string()))?;
            cols.push(j);
        }
        let rows: Vec<usize> = StateId::ALL.iter().map(|s| self.states.iter().position(|t| t == s).unwrap()).collect();
        let values = DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.values[(rows[i], cols[j])]);
        Self::new(StateId::ALL.to_vec(), COVARIATE_IDS.iter().map(|s| s.to_string()).collect(), values)
    }

    pub fn column_index(&self, id: &str) -> Option<usize> {
        self.covariate_ids.iter().position(|c| c.eq_ignore_ascii_case(id))
    }

    pub fn state_index(&self, state: StateId) -> Option<usize> {
        self.states.iter().position(|s| *s == state)
    }

    /// Center each column and scale to unit sample standard deviation (n − 1).
    pub fn standardize(&self) -> Result<CovariateTable, CovariateError> {
        let mut out = self.values.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let values: Vec<f64> = col.iter().copied().collect();
            let (mean, sd) = column_stats(&values);
            let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !sd.is_finite() || sd <= 1e-12 * scale || sd == 0.0 {
                return Err(CovariateError::ZeroVariance(self.covariate_ids[j].clone()));
            }
            col.apply(|v| *v = (*v - mean) / sd);
        }
        Ok(CovariateTable { states: self.states.clone(), covariate_ids: self.covariate_ids.clone(), values: out })
    }

    /// PCA of the sample correlation matrix, retaining `k` components.
    pub fn pca(&self, k: usize) -> Result<PcaResult, CovariateError> {
        let p = self.values.ncols();
        if k == 0 || k > p {
            return Err(CovariateError::InvalidComponents(k));
        }
        let z = self.standardize()?.values;
        let n = z.nrows() as f64;
        let corr = (z.transpose() * &z) / (n - 1.0);
        let eig = SymmetricEigen::new(corr);

        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors: Vec<DVector<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();

        let mut warnings = Vec::new();
        resolve_ties(&mut values, &mut vectors, &mut warnings);

        // roundoff can leave null directions slightly negative
        for v in values.iter_mut() {
            if *v < 0.0 && *v > -1e-9 * p as f64 {
                *v = 0.0;
            }
        }

        let tol = 1e-10 * p as f64;
        let effective_rank = values.iter().filter(|&&v| v > tol).count();
        if k > effective_rank {
            return Err(CovariateError::RankDeficient { requested: k, effective_rank });
        }

        for (c, vec) in vectors.iter_mut().enumerate() {
            let anchor = SIGN_ANCHORS.get(c).and_then(|(id, sign)| self.column_index(id).map(|j| (j, *sign)));
            let flip = match anchor {
                Some((j, sign)) if vec[j] != 0.0 => vec[j] * sign < 0.0,
                _ => {
                    let j = vec.iamax();
                    vec[j] < 0.0
                }
            };
            if flip {
                vec.neg_mut();
            }
        }

        let rotation = DMatrix::from_columns(&vectors);
        let scores = &z * &rotation;
        Ok(PcaResult {
            states: self.states.clone(),
            covariate_ids: self.covariate_ids.clone(),
            k,
            all_eigenvalues: values,
            rotation,
            scores,
            standardized: z,
            warnings,
        })
    }
}

/// Within runs of eigenvalues closer than `EIGEN_TIE`, make each vector's first
/// nonzero entry positive and order by the position of that entry.
fn resolve_ties(values: &mut [f64], vectors: &mut [DVector<f64>], warnings: &mut Vec<String>) {
    let first_nonzero = |v: &DVector<f64>| v.iter().position(|x| x.abs() > 1e-12).unwrap_or(v.len());
    let mut start = 0;
    while start < values.len() {
        let mut end = start + 1;
        while end < values.len() && (values[start] - values[end]).abs() <= EIGEN_TIE {
            end += 1;
        }
        if end - start > 1 {
            warnings.push(format!("degenerate eigenvalues at components {}..{}", start + 1, end));
            for v in vectors[start..end].iter_mut() {
                let i = first_nonzero(v);
                if i < v.len() && v[i] < 0.0 {
                    v.neg_mut();
                }
            }
            vectors[start..end].sort_by_key(first_nonzero);
            let mean = values[start..end].iter().sum::<f64>() / (end - start) as f64;
            values[start..end].fill(mean);
        }
        start = end;
    }
}

/// Result of a correlation-matrix PCA. All components are kept internally;
/// `k` marks how many are retained for reporting and distances.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PcaResult {
    pub states: Vec<StateId>,
    pub covariate_ids: Vec<String>,
    pub k: usize,
    /// All eigenvalues, nonincreasing.
    pub all_eigenvalues: Vec<f64>,
    /// Unit eigenvectors as columns, in eigenvalue order.
    pub rotation: DMatrix<f64>,
    /// Per-state component scores (states × all components).
    pub scores: DMatrix<f64>,
    pub standardized: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl PcaResult {
    /// Retained eigenvalues λ_1..λ_k.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.all_eigenvalues[..self.k]
    }

    pub fn standard_deviations(&self) -> Vec<f64> {
        self.eigenvalues().iter().map(|v| v.sqrt()).collect()
    }

    pub fn proportion_of_variance(&self) -> Vec<f64> {
        let total: f64 = self.all_eigenvalues.iter().sum();
        self.eigenvalues().iter().map(|v| v / total).collect()
    }

    /// Retained per-state scores (states × k).
    pub fn loadings(&self) -> DMatrix<f64> {
        self.scores.columns(0, self.k).into_owned()
    }

    /// Correlation of each covariate with each retained component (covariates × k).
    pub fn covariate_weights(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rotation.nrows(), self.k, |j, c| self.rotation[(j, c)] * self.all_eigenvalues[c].max(0.0).sqrt())
    }

    pub fn loading(&self, state: StateId, component: usize) -> Option<f64> {
        let i = self.states.iter().position(|s| *s == state)?;
        (component < self.k).then(|| self.scores[(i, component)])
    }

    /// Standardized table rebuilt from every component's scores.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.scores * self.rotation.transpose()
    }

    /// Eigenvalue-weighted Euclidean distance over the retained components.
    pub fn distance(&self, a: StateId, b: StateId) -> Result<f64, CovariateError> {
        let ia = self.states.iter().position(|s| *s == a).ok_or(CovariateError::UnknownState(a))?;
        let ib = self.states.iter().position(|s| *s == b).ok_or(CovariateError::UnknownState(b))?;
        let sq: f64 = (0..self.k).map(|c| self.all_eigenvalues[c] * (self.scores[(ia, c)] - self.scores[(ib, c)]).powi(2)).sum();
        Ok(sq.sqrt())
    }

    /// Per-state scores as `state,PC1,..,PCk`.
    pub fn write_loadings_csv<W: Write>(&self, sink: W) -> Result<(), CovariateError> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["state".to_string()];
        header.extend((1..=self.k).map(|c| format!("PC{c}")));
        w.write_record(&header)?;
        for (i, s) in self.states.iter().enumerate() {
            let mut row = vec![s.code().to_string()];
            row.extend((0..self.k).map(|c| self.scores[(i, c)].to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Summary block: standard deviation, proportion of variance and eigenvalue
    /// per retained component, followed by the covariate weights.
    pub fn write_summary_csv<W: Write>(&self, sink: W) -> Result<(), CovariateError> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["row".to_string()];
        header.extend((1..=self.k).map(|c| format!("PC{c}")));
        w.write_record(&header)?;
        let mut emit = |name: &str, vals: Vec<f64>| -> Result<(), csv::Error> {
            let mut row = vec![name.to_string()];
            row.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&row)
        };
        emit("standard_deviation", self.standard_deviations())?;
        emit("proportion_of_variance", self.proportion_of_variance())?;
        emit("eigenvalue", self.eigenvalues().to_vec())?;
        let weights = self.covariate_weights();
        for (j, id) in self.covariate_ids.iter().enumerate() {
            emit(&format!("weight:{id}"), weights.row(j).iter().copied().collect())?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Pearson correlation, single pass over centered data.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, CovariateError> {
    if x.len() != y.len() {
        return Err(CovariateError::LengthMismatch { expected: x.len(), actual: y.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if syy == 0.0 {
        return Err(CovariateError::ConstantTarget);
    }
    if sxx == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation of `target` (aligned with `table.states`) against every
/// covariate column, then against each retained PCA component when given.
pub fn covariate_output_correlation(table: &CovariateTable, pca: Option<&PcaResult>, target: &[f64]) -> Result<Vec<(String, f64)>, CovariateError> {
    if target.len() != table.states.len() {
        return Err(CovariateError::LengthMismatch { expected: table.states.len(), actual: target.len() });
    }
    let mut out = Vec::new();
    for (j, id) in table.covariate_ids.iter().enumerate() {
        let col: Vec<f64> = table.values.column(j).iter().copied().collect();
        out.push((id.clone(), pearson(&col, target)?));
    }
    if let Some(pca) = pca {
        for c in 0..pca.k {
            let scores: Vec<f64> =
                table.states.iter().map(|s| pca.loading(*s, c).ok_or(CovariateError::UnknownState(*s))).collect::<Result<_, _>>()?;
            out.push((format!("PC{}", c + 1), pearson(&scores, target)?));
        }
    }
    Ok(out)
}

/// Two-column `state,value` file (life expectancy and similar per-state vectors).
pub fn read_state_values<R: Read>(source: R) -> Result<BTreeMap<StateId, f64>, CovariateError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(source);
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() < 2 {
            return Err(CovariateError::Malformed { line, message: "expected `state,value`".into() });
        }
        let state: StateId = row[0].parse().map_err(|e: crate::state::UnknownState| CovariateError::Malformed { line, message: e.to_string() })?;
        let v: f64 = row[1].parse().map_err(|_| CovariateError::Malformed { line, message: format!("value {:?} is not a number", &row[1]) })?;
        out.insert(state, v);
    }
    Ok(out)
}
