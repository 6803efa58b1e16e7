//! `confound`: batch audits of dataset bias in tabular subject cohorts.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use confound_core::classifier::{default_feature_sets, name_that_dataset};
use confound_core::score::{aggregate_by_dataset, score_all, ScoreEntry};
use confound_core::synth::{gen_mixed, gen_multidataset};
use confound_core::tabular::{load_csv, summarize, write_csv, CauseSpec, RejectionReport, Table};
use log::{info, warn};

use config::{RunConfig, Settings, SimKind};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, schema or unreadable files.
    Usage(String),
    /// Nothing could be computed.
    Compute(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Compute(m) => f.write_str(m),
        }
    }
}

impl From<confound_core::Error> for CliError {
    fn from(e: confound_core::Error) -> Self {
        use confound_core::Error as E;
        match e {
            E::Io { .. } | E::Csv(_) | E::Config(_) | E::MissingColumn(_) | E::Schema(_) | E::EmptyTable { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Compute(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "confound", version, about = "Dataset-bias audits: causal vs. confounded scores and dataset classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat TOML file with any of the settings below
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use healthy controls only (default)
    #[arg(long, overrides_with = "with_disease")]
    controls_only: bool,
    /// Include diseased subjects
    #[arg(long, overrides_with = "controls_only")]
    with_disease: bool,
    #[command(flatten)]
    settings: Settings,
}

impl Common {
    fn resolve(self) -> Result<Settings, CliError> {
        let mut flags = self.settings;
        if self.controls_only {
            flags.controls_only = Some(true);
        }
        if self.with_disease {
            flags.controls_only = Some(false);
        }
        let base = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        Ok(base.overlay(flags))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load a table, report rejected rows and print a per-dataset summary
    Validate(Common),
    /// Causal vs. confounded description-length scores per (dataset, target)
    Score(Common),
    /// Learning curves and confusion matrices for dataset-of-origin prediction
    Classify(Common),
    /// Write a synthetic table and its ground truth
    Simulate(Common),
}

fn load(settings: &Settings) -> Result<(Table, RejectionReport), CliError> {
    let input = settings.input()?;
    let (table, rejected) = load_csv(input, &settings.schema())?;
    if rejected.count() > 0 {
        warn!("{}: {} row(s) rejected", input.display(), rejected.count());
        for r in &rejected.rejected {
            info!("  line {} ({}): {}", r.line, r.subject_id, r.reason);
        }
    }
    Ok((table, rejected))
}

fn run_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Compute(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn cmd_validate(settings: &Settings) -> Result<(), CliError> {
    let (table, rejected) = load(settings)?;
    println!("{:<16} {:>6} {:>9} {:>8} {:>7} {:>9}", "dataset", "N", "age_mean", "age_sd", "male_%", "diseased");
    for s in summarize(&table) {
        println!(
            "{:<16} {:>6} {:>9.1} {:>8.1} {:>7.1} {:>9}",
            s.dataset, s.n, s.age_mean, s.age_sd, s.male_pct, s.n_diseased
        );
    }
    println!("{} valid row(s), {} feature column(s)", table.len(), table.columns().len());
    print!("{rejected}");
    Ok(())
}

fn cmd_score(settings: &Settings) -> Result<(), CliError> {
    let (table, rejected) = load(settings)?;
    let causes: CauseSpec = match &settings.causes {
        Some(s) => s.parse()?,
        None => CauseSpec::age_age2_sex(),
    };
    let cause_columns: Vec<&str> = causes.terms().iter().map(|t| t.column.as_str()).collect();
    for c in &cause_columns {
        if !table.has_column(c) {
            return Err(CliError::Usage(format!("cause column `{c}` not in table")));
        }
    }
    let targets: Vec<String> = match &settings.targets {
        Some(t) => t.clone(),
        None => table.columns().iter().filter(|c| !cause_columns.contains(&c.as_str())).cloned().collect(),
    };
    for t in &targets {
        if !table.has_column(t) {
            return Err(CliError::Usage(format!("target column `{t}` not in table")));
        }
    }
    if targets.is_empty() {
        return Err(CliError::Usage("no target columns to score".into()));
    }
    let score = settings.score();
    score.fit.validate()?;
    score
        .causal
        .validate()
        .and_then(|_| score.confounded.validate())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let run = RunConfig::Score {
        input: settings.input()?.to_path_buf(),
        schema: settings.schema(),
        causes: causes.to_string(),
        targets: targets.clone(),
        score: score.clone(),
        seed: settings.seed(),
    };
    info!("scoring {} dataset(s) x {} target(s)", table.datasets().len(), targets.len());
    let entries = run_pool(settings.jobs, || score_all(&table, &causes, &targets, &score, settings.seed()))??;
    let aggregates = aggregate_by_dataset(&entries);

    let dir = settings.out_dir();
    report::ensure_dir(&dir)?;
    let written = report::write_scores(&dir, &run, &entries, &aggregates, rejected.count())?;
    print_written(&written);

    let failed = entries.iter().filter(|e| matches!(e, ScoreEntry::Failed(_))).count();
    if failed == entries.len() {
        return Err(CliError::Compute(format!("all {failed} fits failed")));
    }
    if failed > 0 {
        warn!("{failed} of {} (dataset, target) pairs failed; see scores.json", entries.len());
    }
    Ok(())
}

fn cmd_classify(settings: &Settings) -> Result<(), CliError> {
    let (table, rejected) = load(settings)?;
    let harness = settings.harness();
    let run = RunConfig::Classify {
        input: settings.input()?.to_path_buf(),
        schema: settings.schema(),
        harness: harness.clone(),
        seed: settings.seed(),
    };
    let sets = default_feature_sets(&table);
    let results = run_pool(settings.jobs, || name_that_dataset(&table, &sets, &harness, settings.seed()))?
        .map_err(|e| match e {
            confound_core::Error::Precondition(m) => CliError::Usage(m),
            other => other.into(),
        })?;
    let dir = settings.out_dir();
    report::ensure_dir(&dir)?;
    let written = report::write_classification(&dir, &run, &results, rejected.count())?;
    print_written(&written);
    Ok(())
}

fn write_table(path: &Path, table: &Table) -> Result<(), CliError> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    write_csv(table, std::io::BufWriter::new(file))?;
    Ok(())
}

fn cmd_simulate(settings: &Settings) -> Result<(), CliError> {
    let dir = settings.out_dir();
    report::ensure_dir(&dir)?;
    let data = dir.join("simulated.csv");
    let truth = dir.join("ground_truth.json");
    match settings.kind.unwrap_or(SimKind::Mixed) {
        SimKind::Mixed => {
            let spec = settings.gen_spec();
            let run = RunConfig::SimulateMixed { spec: spec.clone() };
            let (table, gt) = gen_mixed(&spec)?;
            write_table(&data, &table)?;
            report::write_json(&truth, &report::envelope(&run, gt))?;
        }
        SimKind::Sites => {
            let spec = settings.multidataset_spec();
            let run = RunConfig::SimulateSites { spec: spec.clone() };
            let table = gen_multidataset(&spec)?;
            write_table(&data, &table)?;
            report::write_json(&truth, &report::envelope(&run, serde_json::json!({ "spec": spec })))?;
        }
    }
    print_written(&[data, truth]);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(c) => c.resolve().and_then(|s| cmd_validate(&s)),
        Command::Score(c) => c.resolve().and_then(|s| cmd_score(&s)),
        Command::Classify(c) => c.resolve().and_then(|s| cmd_classify(&s)),
        Command::Simulate(c) => c.resolve().and_then(|s| cmd_simulate(&s)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
