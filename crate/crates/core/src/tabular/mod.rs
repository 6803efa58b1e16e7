//! Subject tables: ingestion, summaries, standardization, cause design
//! matrices and stratified splits.

mod design;
mod io;
mod split;

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};

pub use design::{
    build_design, standardize_column, CauseSpec, CauseTerm, DesignMatrix, Standardization, Transform,
};
pub use io::{load_csv, read_csv, write_csv, Rejection, RejectionReport, SchemaConfig};
pub use split::{stratified_split, stratified_split_indices, SplitIndices};

pub const AGE: &str = "age";
pub const SEX: &str = "sex";

/// One subject row. `sex` is 1 for male, 0 for female.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub age: f64,
    pub sex: u8,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnosis {
    pub label: String,
    pub control: bool,
}

/// Validated, immutable subject table with a dataset label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    subjects: Vec<Subject>,
    columns: Vec<String>,
    datasets: Vec<String>,
    diagnoses: Option<Vec<Diagnosis>>,
}

impl Table {
    pub fn new(
        subjects: Vec<Subject>,
        columns: Vec<String>,
        datasets: Vec<String>,
        diagnoses: Option<Vec<Diagnosis>>,
    ) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::EmptyTable { rejected: 0 });
        }
        if datasets.len() != subjects.len() {
            return Err(Error::Dimension(format!(
                "{} dataset labels for {} subjects",
                datasets.len(),
                subjects.len()
            )));
        }
        if let Some(d) = &diagnoses {
            if d.len() != subjects.len() {
                return Err(Error::Dimension(format!("{} diagnoses for {} subjects", d.len(), subjects.len())));
            }
        }
        let mut seen_columns = HashSet::new();
        for c in &columns {
            if c == AGE || c == SEX || !seen_columns.insert(c.as_str()) {
                return Err(Error::Schema(format!("duplicate or reserved feature column `{c}`")));
            }
        }
        let mut ids = HashSet::with_capacity(subjects.len());
        for s in &subjects {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Schema(format!("duplicate subject id `{}`", s.id)));
            }
            if !(s.age.is_finite() && s.age > 0.0) {
                return Err(Error::Schema(format!("subject `{}` has invalid age {}", s.id, s.age)));
            }
            if s.sex > 1 {
                return Err(Error::Schema(format!("subject `{}` has sex code {}", s.id, s.sex)));
            }
            if s.features.len() != columns.len() || s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("subject `{}` has missing or non-finite features", s.id)));
            }
        }
        if datasets.iter().any(|d| d.is_empty()) {
            return Err(Error::Schema("empty dataset label".into()));
        }
        Ok(Table { subjects, columns, datasets, diagnoses })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    /// Feature column names in file order.
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn dataset_labels(&self) -> &[String] {
        &self.datasets
    }

    pub fn diagnoses(&self) -> Option<&[Diagnosis]> {
        self.diagnoses.as_deref()
    }

    /// Sorted distinct dataset labels.
    pub fn datasets(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.datasets.iter().cloned().collect::<HashSet<_>>().into_iter().collect();
        labels.sort();
        labels
    }

    pub fn is_control(&self, row: usize) -> bool {
        self.diagnoses.as_ref().map_or(true, |d| d[row].control)
    }

    pub fn has_column(&self, name: &str) -> bool {
        name == AGE || name == SEX || self.columns.iter().any(|c| c == name)
    }

    /// Values of a named column; `age` and `sex` resolve to the covariates.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        match name {
            AGE => Ok(self.subjects.iter().map(|s| s.age).collect()),
            SEX => Ok(self.subjects.iter().map(|s| f64::from(s.sex)).collect()),
            _ => {
                let j = self
                    .columns
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
                Ok(self.subjects.iter().map(|s| s.features[j]).collect())
            }
        }
    }

    /// Feature columns starting with `prefix`.
    pub fn columns_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.columns.iter().filter(|c| c.starts_with(prefix)).cloned().collect()
    }

    /// Row-major feature matrix for the named columns.
    pub fn feature_rows(&self, names: &[String]) -> Result<Vec<Vec<f64>>> {
        let cols = names.iter().map(|n| self.column(n)).collect::<Result<Vec<_>>>()?;
        Ok((0..self.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect())
    }

    /// New table holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Table> {
        Table::new(
            rows.iter().map(|&i| self.subjects[i].clone()).collect(),
            self.columns.clone(),
            rows.iter().map(|&i| self.datasets[i].clone()).collect(),
            self.diagnoses.as_ref().map(|d| rows.iter().map(|&i| d[i].clone()).collect()),
        )
    }

    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> Result<Table> {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.select_rows(&rows)
    }

    pub fn controls_only(&self) -> Result<Table> {
        self.filter(|i| self.is_control(i))
    }

    pub fn dataset(&self, label: &str) -> Result<Table> {
        self.filter(|i| self.datasets[i] == label)
    }
}

/// Per-dataset demographic summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub n: usize,
    pub age_mean: f64,
    /// Sample SD (n - 1); 0 for a single subject.
    pub age_sd: f64,
    pub male_pct: f64,
    pub n_diseased: usize,
}

/// One row per distinct dataset label, sorted by label.
pub fn summarize(table: &Table) -> Vec<DatasetSummary> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in table.dataset_labels().iter().enumerate() {
        groups.entry(d.as_str()).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(dataset, rows)| {
            let n = rows.len();
            let ages: Vec<f64> = rows.iter().map(|&i| table.subjects[i].age).collect();
            let mean = ages.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (ages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let males = rows.iter().filter(|&&i| table.subjects[i].sex == 1).count();
            let diseased = rows.iter().filter(|&&i| !table.is_control(i)).count();
            DatasetSummary {
                dataset: dataset.to_string(),
                n,
                age_mean: mean,
                age_sd: sd,
                male_pct: 100.0 * males as f64 / n as f64,
                n_diseased: diseased,
            }
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn subject(id: &str, age: f64, sex: u8, features: Vec<f64>) -> Subject {
        Subject { id: id.into(), age, sex, features }
    }

    pub fn small_table() -> Table {
        Table::new(
            vec![
                subject("a", 20.0, 1, vec![1.0, 5.0]),
                subject("b", 30.0, 0, vec![2.0, 6.0]),
                subject("c", 40.0, 1, vec![3.0, 8.0]),
                subject("d", 50.0, 0, vec![4.0, 7.0]),
            ],
            vec!["vol_a".into(), "thick_b".into()],
            vec!["X".into(), "X".into(), "Y".into(), "Y".into()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_subject_summary() {
        let t = Table::new(vec![subject("s", 40.0, 1, vec![])], vec![], vec!["D".into()], None).unwrap();
        let s = summarize(&t);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].n, 1);
        assert_eq!(s[0].age_mean, 40.0);
        assert_eq!(s[0].age_sd, 0.0);
        assert_eq!(s[0].male_pct, 100.0);
    }

    #[test]
    fn summary_partitions_rows() {
        let s = summarize(&small_table());
        assert_eq!(s.len(), 2);
        assert_eq!(s.iter().map(|r| r.n).sum::<usize>(), 4);
        assert_eq!(s[0].dataset, "X");
        assert_eq!(s[0].male_pct, 50.0);
        assert_eq!(s[1].age_mean, 45.0);
    }

    #[test]
    fn summary_counts_diseased() {
        let t = small_table();
        let diag = ["control", "ASD", "control", "control"]
            .iter()
            .map(|l| Diagnosis { label: l.to_string(), control: *l == "control" })
            .collect();
        let t = Table::new(t.subjects.clone(), t.columns.clone(), t.datasets.clone(), Some(diag)).unwrap();
        let s = summarize(&t);
        assert_eq!(s[0].n_diseased, 1);
        assert_eq!(s[1].n_diseased, 0);
        assert_eq!(t.controls_only().unwrap().len(), 3);
    }

    #[test]
    fn column_access() {
        let t = small_table();
        assert_eq!(t.column("age").unwrap(), vec![20.0, 30.0, 40.0, 50.0]);
        assert_eq!(t.column("sex").unwrap(), vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(t.column("thick_b").unwrap(), vec![5.0, 6.0, 8.0, 7.0]);
        assert!(matches!(t.column("vol_zz"), Err(Error::MissingColumn(_))));
        assert_eq!(t.columns_with_prefix("vol_"), vec!["vol_a".to_string()]);
        assert_eq!(t.dataset("Y").unwrap().len(), 2);
    }

    #[test]
    fn invariants_are_enforced() {
        let dup = Table::new(
            vec![subject("a", 20.0, 1, vec![]), subject("a", 21.0, 0, vec![])],
            vec![],
            vec!["D".into(), "D".into()],
            None,
        );
        assert!(dup.is_err());
        let bad_sex = Table::new(vec![subject("a", 20.0, 2, vec![])], vec![], vec!["D".into()], None);
        assert!(bad_sex.is_err());
        let nan = Table::new(vec![subject("a", 20.0, 1, vec![f64::NAN])], vec!["vol_x".into()], vec!["D".into()], None);
        assert!(nan.is_err());
        assert!(matches!(Table::new(vec![], vec![], vec![], None), Err(Error::EmptyTable { .. })));
    }
}
