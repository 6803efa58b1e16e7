use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Table;
use crate::error::{Error, Result};

const MIN_SD: f64 = 1e-12;

/// Affine map to zero mean and unit population SD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization { mean: 0.0, sd: 1.0 };

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.sd + self.mean
    }
}

/// Standardizes with the population SD (divide by n).
pub fn standardize_column(values: &[f64]) -> Result<(Vec<f64>, Standardization)> {
    standardize_named("<column>", values)
}

pub(crate) fn standardize_named(name: &str, values: &[f64]) -> Result<(Vec<f64>, Standardization)> {
    if values.len() < 2 {
        return Err(Error::Precondition(format!(
            "standardizing `{name}` needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > MIN_SD) {
        return Err(Error::DegenerateColumn(name.to_string()));
    }
    let params = Standardization { mean, sd };
    Ok((values.iter().map(|&v| params.apply(v)).collect(), params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Square,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CauseTerm {
    pub column: String,
    pub transform: Transform,
}

impl CauseTerm {
    pub fn name(&self) -> String {
        match self.transform {
            Transform::Identity => self.column.clone(),
            Transform::Square => format!("{}^2", self.column),
        }
    }
}

/// Presumed causes X, e.g. `age, age^2, sex`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseSpec {
    terms: Vec<CauseTerm>,
    pub standardize: bool,
}

impl CauseSpec {
    pub fn new(terms: Vec<CauseTerm>, standardize: bool) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Config("cause spec has no terms".into()));
        }
        let mut seen = HashSet::new();
        for t in &terms {
            if !seen.insert(t) {
                return Err(Error::Config(format!("duplicate cause term `{}`", t.name())));
            }
        }
        Ok(CauseSpec { terms, standardize })
    }

    /// age, age², sex, standardized.
    pub fn age_age2_sex() -> Self {
        "age,age^2,sex".parse().expect("valid default cause spec")
    }

    pub fn terms(&self) -> &[CauseTerm] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }
}

impl FromStr for CauseSpec {
    type Err = Error;

    /// Comma-separated terms; a `^2` suffix squares the raw column.
    fn from_str(s: &str) -> Result<Self> {
        let terms = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match t.strip_suffix("^2") {
                Some(col) => CauseTerm { column: col.trim().to_string(), transform: Transform::Square },
                None => CauseTerm { column: t.to_string(), transform: Transform::Identity },
            })
            .collect();
        CauseSpec::new(terms, true)
    }
}

impl fmt::Display for CauseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.terms.iter().map(CauseTerm::name).collect();
        write!(f, "{}", names.join(","))
    }
}

/// n × m cause matrix with the per-column standardization that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub standardization: Vec<Standardization>,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Wraps an already-prepared matrix (no standardization recorded).
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        let m = values.ncols();
        DesignMatrix {
            column_names: (1..=m).map(|j| format!("x{j}")).collect(),
            standardization: vec![Standardization::IDENTITY; m],
            values,
        }
    }
}

/// Applies each term's transform to the raw column, then standardizes each
/// resulting column independently when requested.
pub fn build_design(table: &Table, spec: &CauseSpec) -> Result<DesignMatrix> {
    let n = table.len();
    let m = spec.dim();
    if n < m + 2 {
        return Err(Error::Precondition(format!("design needs n >= m + 2 rows, got n = {n}, m = {m}")));
    }
    let mut values = DMatrix::zeros(n, m);
    let mut standardization = Vec::with_capacity(m);
    let mut column_names = Vec::with_capacity(m);
    for (j, term) in spec.terms().iter().enumerate() {
        let raw = table.column(&term.column)?;
        let transformed: Vec<f64> = match term.transform {
            Transform::Identity => raw,
            Transform::Square => raw.iter().map(|v| v * v).collect(),
        };
        let (col, params) = if spec.standardize {
            standardize_named(&term.name(), &transformed)?
        } else {
            (transformed, Standardization::IDENTITY)
        };
        values.set_column(j, &nalgebra::DVector::from_vec(col));
        standardization.push(params);
        column_names.push(term.name());
    }
    Ok(DesignMatrix { values, column_names, standardization })
}
