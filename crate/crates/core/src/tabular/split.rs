use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::Table;
use crate::error::{Error, Result};
use crate::seed;

/// Row indices of a train/test partition, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per label, `max(1, round(fraction * n_label))` rows go to train.
pub fn stratified_split_indices(labels: &[String], train_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    let mut rng = seed::rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut rows) in groups {
        if rows.len() < 2 {
            return Err(Error::Split(format!("dataset `{label}` has fewer than 2 rows")));
        }
        let k = ((train_fraction * rows.len() as f64).round() as usize).max(1);
        rows.shuffle(&mut rng);
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    if test.is_empty() {
        return Err(Error::Split(format!("train fraction {train_fraction} leaves no test rows")));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Splits within each dataset label so both sides keep the label proportions.
pub fn stratified_split(table: &Table, train_fraction: f64, seed: u64) -> Result<(Table, Table)> {
    let idx = stratified_split_indices(table.dataset_labels(), train_fraction, seed)?;
    Ok((table.select_rows(&idx.train)?, table.select_rows(&idx.test)?))
}
