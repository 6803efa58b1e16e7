//! Per-(dataset, target) causal vs. confounded scoring and per-dataset
//! aggregation.
//!
//! Δ = L_co − L_ca in nats. Δ > 0 favors X → Y; Δ < 0 favors a latent
//! confounder of X and Y.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advi::{Family, FitConfig};
use crate::error::{Error, Result};
use crate::models::{
    l_causal, l_confounded, CausalModelSpec, CodeLength, ConfoundedModelSpec, EvidenceMethod, JointVector,
};
use crate::seed::{derive_seed, fingerprint};
use crate::tabular::{build_design, standardize_column, CauseSpec, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub causal: CausalModelSpec,
    pub confounded: ConfoundedModelSpec,
    pub causal_method: EvidenceMethod,
    pub causal_family: Family,
    pub confounded_family: Family,
    pub fit: FitConfig,
    /// Score healthy controls only.
    pub controls_only: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            causal: CausalModelSpec::default(),
            confounded: ConfoundedModelSpec::default(),
            causal_method: EvidenceMethod::Advi,
            causal_family: Family::FullRank,
            confounded_family: Family::MeanField,
            fit: FitConfig::default(),
            controls_only: true,
        }
    }
}

impl ScoreConfig {
    pub fn fingerprint(&self) -> String {
        fingerprint(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDiagnostics {
    pub causal: CodeLength,
    pub confounded: CodeLength,
    pub seed: u64,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub dataset: String,
    pub target: String,
    pub n: usize,
    #[serde(rename = "L_ca")]
    pub l_ca: f64,
    #[serde(rename = "L_co")]
    pub l_co: f64,
    pub delta: f64,
    pub delta_per_sample: f64,
    pub diagnostics: ScoreDiagnostics,
}

/// L_co − L_ca.
pub fn delta(l_co: f64, l_ca: f64) -> f64 {
    l_co - l_ca
}

impl ScoreRecord {
    pub fn converged(&self) -> bool {
        self.diagnostics.causal.converged() && self.diagnostics.confounded.converged()
    }

    /// The same record with the two models' roles exchanged.
    pub fn swapped(&self) -> ScoreRecord {
        let d = delta(self.l_ca, self.l_co);
        ScoreRecord {
            l_ca: self.l_co,
            l_co: self.l_ca,
            delta: d,
            delta_per_sample: d / self.n as f64,
            diagnostics: ScoreDiagnostics {
                causal: self.diagnostics.confounded.clone(),
                confounded: self.diagnostics.causal.clone(),
                ..self.diagnostics.clone()
            },
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFailure {
    pub dataset: String,
    pub target: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScoreEntry {
    Ok(ScoreRecord),
    Failed(ScoreFailure),
}

impl ScoreEntry {
    pub fn record(&self) -> Option<&ScoreRecord> {
        match self {
            ScoreEntry::Ok(r) => Some(r),
            ScoreEntry::Failed(_) => None,
        }
    }

    pub fn key(&self) -> (&str, &str) {
        match self {
            ScoreEntry::Ok(r) => (&r.dataset, &r.target),
            ScoreEntry::Failed(f) => (&f.dataset, &f.target),
        }
    }
}

fn dataset_label(table: &Table) -> String {
    table.datasets().join("+")
}

/// Scores one target column against the causes in `spec`, using every row of
/// `table` (after control filtering).
pub fn score_target(
    table: &Table,
    spec: &CauseSpec,
    target: &str,
    config: &ScoreConfig,
    seed: u64,
) -> Result<ScoreRecord> {
    let label = dataset_label(table);
    score_target_inner(table, spec, target, config, seed, &label).map_err(|e| e.with_context(&label, target))
}

fn score_target_inner(
    table: &Table,
    spec: &CauseSpec,
    target: &str,
    config: &ScoreConfig,
    seed: u64,
    label: &str,
) -> Result<ScoreRecord> {
    if spec.terms().iter().any(|t| t.column == target) {
        return Err(Error::Config(format!("target `{target}` is also a cause")));
    }
    let rows = if config.controls_only { table.controls_only()? } else { table.clone() };
    let n = rows.len();
    let m = spec.dim();
    if n < m + 5 {
        return Err(Error::Precondition(format!("scoring needs n >= m + 5 rows, got n = {n}, m = {m}")));
    }
    let design = build_design(&rows, spec)?;
    let raw_y = rows.column(target)?;
    let y = if spec.standardize {
        standardize_column(&raw_y).map_err(|e| match e {
            Error::DegenerateColumn(_) => Error::DegenerateColumn(target.to_string()),
            other => other,
        })?
        .0
    } else {
        raw_y
    };

    let causal_cfg = config.fit.with_seed(derive_seed(seed, &["causal"]));
    let l_ca = l_causal(&design.values, &y, &config.causal, config.causal_method, config.causal_family, &causal_cfg)?;
    let joint = JointVector::from_parts(&design.values, &y)?;
    let confounded_cfg = config.fit.with_seed(derive_seed(seed, &["confounded"]));
    let l_co = l_confounded(&joint, &config.confounded, config.confounded_family, &confounded_cfg)?;

    let d = delta(l_co.nats, l_ca.nats);
    Ok(ScoreRecord {
        dataset: label.to_string(),
        target: target.to_string(),
        n,
        l_ca: l_ca.nats,
        l_co: l_co.nats,
        delta: d,
        delta_per_sample: d / n as f64,
        diagnostics: ScoreDiagnostics {
            causal: l_ca,
            confounded: l_co,
            seed,
            config_fingerprint: config.fingerprint(),
        },
    })
}

/// One entry per (dataset, target), ordered by dataset label then target
/// order. Each pair's seed depends only on (master seed, dataset, target), so
/// the output does not depend on scheduling.
pub fn score_all(
    table: &Table,
    spec: &CauseSpec,
    targets: &[String],
    config: &ScoreConfig,
    master_seed: u64,
) -> Result<Vec<ScoreEntry>> {
    if targets.is_empty() {
        return Err(Error::Precondition("no targets to score".into()));
    }
    let datasets = table.datasets();
    let subtables: Vec<(String, Result<Table>)> =
        datasets.iter().map(|d| (d.clone(), table.dataset(d))).collect();
    let jobs: Vec<(usize, &String)> =
        (0..subtables.len()).flat_map(|i| targets.iter().map(move |t| (i, t))).collect();
    let entries = jobs
        .par_iter()
        .map(|&(i, target)| {
            let (dataset, sub) = &subtables[i];
            let seed = derive_seed(master_seed, &[dataset, target]);
            let result = sub
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|t| score_target(t, spec, target, config, seed).map_err(|e| e.to_string()));
            match result {
                Ok(r) => ScoreEntry::Ok(r),
                Err(error) => {
                    log::warn!("scoring {dataset}/{target} failed: {error}");
                    ScoreEntry::Failed(ScoreFailure { dataset: dataset.clone(), target: target.clone(), error })
                }
            }
        })
        .collect();
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAggregate {
    pub dataset: String,
    pub mean_delta: f64,
    /// Sample SD over targets; 0 for a single target.
    pub sd_delta: f64,
    pub mean_delta_per_sample: f64,
    pub n_targets: usize,
    pub n_failed: usize,
}

/// Mean and SD of Δ over targets within each dataset. Failed entries are
/// counted but excluded; datasets without any success are dropped.
pub fn aggregate_by_dataset(entries: &[ScoreEntry]) -> Vec<DatasetAggregate> {
    let mut groups: BTreeMap<&str, (Vec<&ScoreRecord>, usize)> = BTreeMap::new();
    for e in entries {
        let slot = groups.entry(e.key().0).or_default();
        match e {
            ScoreEntry::Ok(r) => slot.0.push(r),
            ScoreEntry::Failed(_) => slot.1 += 1,
        }
    }
    groups
        .into_iter()
        .filter_map(|(dataset, (records, failed))| {
            if records.is_empty() {
                log::warn!("dataset {dataset} has no successful scores; excluded from aggregate");
                return None;
            }
            let n = records.len() as f64;
            let mean = records.iter().map(|r| r.delta).sum::<f64>() / n;
            let sd = if records.len() > 1 {
                (records.iter().map(|r| (r.delta - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Some(DatasetAggregate {
                dataset: dataset.to_string(),
                mean_delta: mean,
                sd_delta: sd,
                mean_delta_per_sample: records.iter().map(|r| r.delta_per_sample).sum::<f64>() / n,
                n_targets: records.len(),
                n_failed: failed,
            })
        })
        .collect()
}
