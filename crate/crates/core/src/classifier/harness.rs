use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{train_forest, ForestConfig};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tabular::{stratified_split_indices, Table, AGE, SEX};

/// A named list of columns used as classifier inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub name: String,
    pub columns: Vec<String>,
}

/// `age_sex`, `volume` (vol_*), `thickness` (thick_*) and `combined`;
/// sets without any matching column are left out.
pub fn default_feature_sets(table: &Table) -> Vec<FeatureSet> {
    let vol = table.columns_with_prefix("vol_");
    let thick = table.columns_with_prefix("thick_");
    let mut combined = vol.clone();
    combined.extend(thick.iter().cloned());
    let sets = [
        ("age_sex", vec![AGE.to_string(), SEX.to_string()]),
        ("volume", vol),
        ("thickness", thick),
        ("combined", combined),
    ];
    let mut out: Vec<FeatureSet> = Vec::new();
    for (name, columns) in sets {
        if columns.is_empty() || out.iter().any(|s| s.columns == columns) {
            continue;
        }
        out.push(FeatureSet { name: name.into(), columns });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub fractions: Vec<f64>,
    pub repetitions: usize,
    pub forest: ForestConfig,
    pub controls_only: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            fractions: vec![0.001, 0.005, 0.01, 0.05, 0.1, 0.3, 0.5, 0.7],
            repetitions: 50,
            forest: ForestConfig::default(),
            controls_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub train_fraction: f64,
    pub mean_accuracy: f64,
    /// Sample SD over repetitions; 0 for a single repetition.
    pub sd_accuracy: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let k = classes.len();
        ConfusionMatrix { classes, counts: vec![vec![0; k]; k] }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, v) in row.iter_mut().zip(o) {
                *c += v;
            }
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total() as f64
    }

    /// Share of predictions off the diagonal.
    pub fn off_diagonal_fraction(&self) -> f64 {
        1.0 - self.accuracy()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetResult {
    pub feature_set: FeatureSet,
    pub curve: LearningCurve,
    /// Accumulated over all repetitions at `confusion_fraction`.
    pub confusion: ConfusionMatrix,
    pub confusion_fraction: f64,
}

/// Accuracy and confusion counts of one train/evaluate round.
fn run_once(
    rows: &[Vec<f64>],
    labels: &[usize],
    classes: &[String],
    feature_set: &FeatureSet,
    fraction: f64,
    forest: &ForestConfig,
    seed: u64,
) -> Result<(f64, ConfusionMatrix)> {
    let label_names: Vec<String> = labels.iter().map(|&l| classes[l].clone()).collect();
    let split = stratified_split_indices(&label_names, fraction, derive_seed(seed, &["split"]))?;
    let train_rows: Vec<Vec<f64>> = split.train.iter().map(|&i| rows[i].clone()).collect();
    let train_labels: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let model = train_forest(
        &train_rows,
        &train_labels,
        classes,
        &feature_set.columns,
        forest,
        derive_seed(seed, &["forest"]),
    )?;
    let mut confusion = ConfusionMatrix::new(classes.to_vec());
    for &i in &split.test {
        confusion.record(labels[i], model.predict(&rows[i])?.class);
    }
    Ok((confusion.accuracy(), confusion))
}

/// Repeated stratified train/test rounds at every training fraction for every
/// feature set. Fractions that cannot be stratified are skipped with a warning.
pub fn name_that_dataset(
    table: &Table,
    feature_sets: &[FeatureSet],
    config: &HarnessConfig,
    seed: u64,
) -> Result<Vec<FeatureSetResult>> {
    let table = if config.controls_only { table.controls_only()? } else { table.clone() };
    let classes = table.datasets();
    if classes.len() < 2 {
        return Err(Error::Precondition(format!("need at least 2 datasets, found {}", classes.len())));
    }
    if config.fractions.is_empty() || config.fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
        return Err(Error::Config(format!("training fractions must lie in (0, 1): {:?}", config.fractions)));
    }
    if config.repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let labels: Vec<usize> = table.dataset_labels().iter().map(|l| index[l.as_str()]).collect();
    let matrices = feature_sets
        .iter()
        .map(|fs| table.feature_rows(&fs.columns))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize, usize)> = (0..feature_sets.len())
        .flat_map(|s| (0..config.fractions.len()).flat_map(move |f| (0..config.repetitions).map(move |r| (s, f, r))))
        .collect();
    let outcomes: Vec<Result<(f64, ConfusionMatrix)>> = jobs
        .par_iter()
        .map(|&(s, f, r)| {
            let fs = &feature_sets[s];
            let fraction = config.fractions[f];
            let job_seed = derive_seed(seed, &[&fs.name, &fraction.to_string(), &r.to_string()]);
            run_once(&matrices[s], &labels, &classes, fs, fraction, &config.forest, job_seed)
        })
        .collect();

    let mut results = Vec::with_capacity(feature_sets.len());
    let mut cursor = 0;
    for fs in feature_sets {
        let mut points = Vec::new();
        let mut last_confusion: Option<(f64, ConfusionMatrix)> = None;
        for &fraction in &config.fractions {
            let mut accs = Vec::with_capacity(config.repetitions);
            let mut confusion = ConfusionMatrix::new(classes.clone());
            let mut skipped = None;
            for outcome in &outcomes[cursor..cursor + config.repetitions] {
                match outcome {
                    Ok((acc, cm)) => {
                        accs.push(*acc);
                        confusion.add(cm);
                    }
                    Err(Error::Split(msg)) => skipped = Some(msg.clone()),
                    Err(e) => return Err(Error::Config(format!("feature set `{}`: {e}", fs.name))),
                }
            }
            cursor += config.repetitions;
            if let Some(msg) = skipped {
                log::warn!("feature set `{}`: skipping fraction {fraction}: {msg}", fs.name);
                continue;
            }
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let sd =
                if accs.len() > 1 { (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            points.push(CurvePoint { train_fraction: fraction, mean_accuracy: mean, sd_accuracy: sd, repetitions: accs.len() });
            if last_confusion.as_ref().is_none_or(|(f, _)| fraction > *f) {
                last_confusion = Some((fraction, confusion));
            }
        }
        let Some((confusion_fraction, confusion)) = last_confusion else {
            return Err(Error::Split(format!("feature set `{}`: no fraction could be evaluated", fs.name)));
        };
        results.push(FeatureSetResult { feature_set: fs.clone(), curve: LearningCurve { points }, confusion, confusion_fraction });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_multidataset, MultiDatasetSpec};

    fn quick(fractions: Vec<f64>, repetitions: usize) -> HarnessConfig {
        HarnessConfig {
            fractions,
            repetitions,
            forest: ForestConfig { n_trees: 25, ..ForestConfig::default() },
            controls_only: true,
        }
    }

    #[test]
    fn default_sets_skip_missing_columns() {
        let t = gen_multidataset(&MultiDatasetSpec { thickness_features: 0, ..Default::default() }).unwrap();
        let names: Vec<String> = default_feature_sets(&t).into_iter().map(|s| s.name).collect();
        assert_eq!(names, vec!["age_sex", "volume"]);
        let t = gen_multidataset(&MultiDatasetSpec::default()).unwrap();
        assert_eq!(default_feature_sets(&t).len(), 4);
    }

    #[test]
    fn disjoint_supports_are_separable() {
        let t = gen_multidataset(&MultiDatasetSpec { shifts: vec![0.0, 20.0], n_per_dataset: 100, ..Default::default() })
            .unwrap();
        let sets = vec![FeatureSet { name: "volume".into(), columns: t.columns_with_prefix("vol_") }];
        let res = name_that_dataset(&t, &sets, &quick(vec![0.3, 0.7], 3), 1).unwrap();
        let r = &res[0];
        assert!(r.curve.points.iter().all(|p| p.mean_accuracy >= 0.99));
        assert_eq!(r.confusion_fraction, 0.7);
        assert_eq!(r.confusion.counts[0][1] + r.confusion.counts[1][0], 0);
        // 30 held-out rows per dataset per repetition
        assert_eq!(r.confusion.row_sums(), vec![90, 90]);
    }

    #[test]
    fn curve_grows_with_training_data() {
        let t = gen_multidataset(&MultiDatasetSpec::graded(4, 0.5)).unwrap();
        let sets = vec![FeatureSet { name: "combined".into(), columns: t.columns().to_vec() }];
        let res = name_that_dataset(&t, &sets, &quick(vec![0.01, 0.1, 0.5], 20), 2).unwrap();
        let pts = &res[0].curve.points;
        for w in pts.windows(2) {
            assert!(w[1].mean_accuracy + w[1].sd_accuracy >= w[0].mean_accuracy, "{pts:?}");
        }
        assert!(pts[2].mean_accuracy > pts[0].mean_accuracy);
    }

    #[test]
    fn deterministic_given_seed() {
        let t = gen_multidataset(&MultiDatasetSpec::graded(3, 0.3)).unwrap();
        let sets = default_feature_sets(&t);
        let a = name_that_dataset(&t, &sets, &quick(vec![0.5], 2), 5).unwrap();
        let b = name_that_dataset(&t, &sets, &quick(vec![0.5], 2), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unstratifiable_fraction_is_skipped() {
        let t = gen_multidataset(&MultiDatasetSpec { n_per_dataset: 3, ..Default::default() }).unwrap();
        let sets = vec![FeatureSet { name: "volume".into(), columns: t.columns_with_prefix("vol_") }];
        // round(0.9 * 3) = 3 leaves no test rows
        let res = name_that_dataset(&t, &sets, &quick(vec![0.4, 0.9], 2), 0).unwrap();
        assert_eq!(res[0].curve.points.len(), 1);
        assert_eq!(res[0].confusion_fraction, 0.4);
    }

    #[test]
    fn needs_two_datasets() {
        let t = gen_multidataset(&MultiDatasetSpec::default()).unwrap();
        let one = t.dataset("SITE01").unwrap();
        assert!(name_that_dataset(&one, &default_feature_sets(&one), &quick(vec![0.5], 1), 0).is_err());
        assert!(name_that_dataset(&t, &default_feature_sets(&t), &quick(vec![1.0], 1), 0).is_err());
    }
}
