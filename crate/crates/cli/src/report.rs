use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use confound_core::classifier::{ConfusionMatrix, FeatureSetResult};
use confound_core::score::{DatasetAggregate, ScoreEntry, ScoreFailure, ScoreRecord};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| write_err(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| write_err(path, e))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| write_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_fingerprint: String,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

pub fn envelope<'a, T: Serialize>(config: &'a RunConfig, body: T) -> impl Serialize + 'a
where
    T: 'a,
{
    Envelope { config_fingerprint: config.fingerprint(), config, body }
}

#[derive(Serialize)]
struct ScoresBody<'a> {
    rejected_rows: usize,
    records: Vec<&'a ScoreRecord>,
    failures: Vec<&'a ScoreFailure>,
    aggregates: &'a [DatasetAggregate],
}

/// `scores.json`, `scores.csv` and `aggregate.csv`.
pub fn write_scores(
    dir: &Path,
    config: &RunConfig,
    entries: &[ScoreEntry],
    aggregates: &[DatasetAggregate],
    rejected_rows: usize,
) -> Result<Vec<PathBuf>, CliError> {
    let records: Vec<&ScoreRecord> = entries.iter().filter_map(ScoreEntry::record).collect();
    let failures: Vec<&ScoreFailure> = entries
        .iter()
        .filter_map(|e| match e {
            ScoreEntry::Failed(f) => Some(f),
            ScoreEntry::Ok(_) => None,
        })
        .collect();

    let json = dir.join("scores.json");
    write_json(&json, &envelope(config, ScoresBody { rejected_rows, records: records.clone(), failures, aggregates }))?;

    let csv_path = dir.join("scores.csv");
    write_rows(
        &csv_path,
        &["dataset", "target", "n", "L_ca", "L_co", "delta", "delta_per_sample", "converged"],
        records.iter().map(|r| {
            vec![
                r.dataset.clone(),
                r.target.clone(),
                r.n.to_string(),
                r.l_ca.to_string(),
                r.l_co.to_string(),
                r.delta.to_string(),
                r.delta_per_sample.to_string(),
                r.converged().to_string(),
            ]
        }),
    )?;

    let agg = dir.join("aggregate.csv");
    write_rows(
        &agg,
        &["dataset", "mean_delta", "sd_delta", "n_targets"],
        aggregates
            .iter()
            .map(|a| vec![a.dataset.clone(), a.mean_delta.to_string(), a.sd_delta.to_string(), a.n_targets.to_string()]),
    )?;
    Ok(vec![json, csv_path, agg])
}

fn write_confusion(path: &Path, cm: &ConfusionMatrix) -> Result<(), CliError> {
    let rows = cm.classes.iter().enumerate().flat_map(|(i, t)| {
        cm.classes.iter().enumerate().map(move |(j, p)| vec![t.clone(), p.clone(), cm.counts[i][j].to_string()])
    });
    write_rows(path, &["true_dataset", "predicted_dataset", "count"], rows)
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[derive(Serialize)]
struct ClassifyBody<'a> {
    rejected_rows: usize,
    chance_accuracy: f64,
    results: &'a [FeatureSetResult],
}

/// `classify.json`, `curve.csv`, one `confusion_<feature set>.csv` per
/// feature set and `confusion.csv` for the last feature set.
pub fn write_classification(
    dir: &Path,
    config: &RunConfig,
    results: &[FeatureSetResult],
    rejected_rows: usize,
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    let chance = results.first().map_or(0.0, |r| 1.0 / r.confusion.classes.len() as f64);
    let json = dir.join("classify.json");
    write_json(&json, &envelope(config, ClassifyBody { rejected_rows, chance_accuracy: chance, results }))?;
    written.push(json);

    let curve = dir.join("curve.csv");
    write_rows(
        &curve,
        &["feature_set", "fraction", "mean_acc", "sd_acc", "repetitions"],
        results.iter().flat_map(|r| {
            r.curve.points.iter().map(|p| {
                vec![
                    r.feature_set.name.clone(),
                    p.train_fraction.to_string(),
                    p.mean_accuracy.to_string(),
                    p.sd_accuracy.to_string(),
                    p.repetitions.to_string(),
                ]
            })
        }),
    )?;
    written.push(curve);

    for r in results {
        let path = dir.join(format!("confusion_{}.csv", file_safe(&r.feature_set.name)));
        write_confusion(&path, &r.confusion)?;
        written.push(path);
    }
    if let Some(last) = results.last() {
        let path = dir.join("confusion.csv");
        write_confusion(&path, &last.confusion)?;
        written.push(path);
    }
    Ok(written)
}
