use std::path::{Path, PathBuf};

use clap::Args;
use confound_core::advi::{Family, FitConfig};
use confound_core::classifier::{ForestConfig, HarnessConfig, TreeConfig};
use confound_core::models::{CausalModelSpec, ConfoundedModelSpec, EvidenceMethod};
use confound_core::score::ScoreConfig;
use confound_core::seed::fingerprint;
use confound_core::synth::{GenSpec, MultiDatasetSpec};
use confound_core::tabular::SchemaConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every setting that can come from the config file or the command line.
/// The config file is flat TOML using the same names with underscores;
/// flags given on the command line win.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Input CSV table
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (does not affect results)
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(skip)]
    pub controls_only: Option<bool>,

    #[arg(long, help_heading = "Schema")]
    pub id_column: Option<String>,
    #[arg(long, help_heading = "Schema")]
    pub dataset_column: Option<String>,
    #[arg(long, help_heading = "Schema")]
    pub age_column: Option<String>,
    #[arg(long, help_heading = "Schema")]
    pub sex_column: Option<String>,
    #[arg(long, help_heading = "Schema")]
    pub diagnosis_column: Option<String>,
    /// Diagnosis values that mark a healthy control (comma-separated)
    #[arg(long, value_delimiter = ',', help_heading = "Schema")]
    pub control_labels: Option<Vec<String>>,
    /// Column-name prefixes of feature columns (comma-separated)
    #[arg(long, value_delimiter = ',', help_heading = "Schema")]
    pub feature_prefixes: Option<Vec<String>>,

    /// Presumed causes, e.g. "age,age^2,sex"
    #[arg(long, help_heading = "Scoring")]
    pub causes: Option<String>,
    /// Target columns (comma-separated); every non-cause feature when absent
    #[arg(long, value_delimiter = ',', help_heading = "Scoring")]
    pub targets: Option<Vec<String>>,
    /// Number of latent confounders
    #[arg(long, help_heading = "Scoring")]
    pub k: Option<usize>,
    /// Variational family of the confounded model
    #[arg(long, help_heading = "Scoring")]
    pub family: Option<Family>,
    /// Variational family of the causal model (used with --method advi)
    #[arg(long, help_heading = "Scoring")]
    pub causal_family: Option<Family>,
    /// Evidence method of the causal model
    #[arg(long, help_heading = "Scoring")]
    pub method: Option<EvidenceMethod>,
    #[arg(long, help_heading = "Scoring")]
    pub sigma_x: Option<f64>,
    #[arg(long, help_heading = "Scoring")]
    pub sigma_w: Option<f64>,
    #[arg(long, help_heading = "Scoring")]
    pub sigma_y: Option<f64>,
    #[arg(long, help_heading = "Scoring")]
    pub sigma_z: Option<f64>,
    #[arg(long, help_heading = "Scoring")]
    pub sigma_obs: Option<f64>,
    #[arg(long, help_heading = "Variational fit")]
    pub mc_samples: Option<usize>,
    #[arg(long, help_heading = "Variational fit")]
    pub learning_rate: Option<f64>,
    #[arg(long, help_heading = "Variational fit")]
    pub max_iterations: Option<usize>,
    #[arg(long, help_heading = "Variational fit")]
    pub convergence_window: Option<usize>,
    #[arg(long, help_heading = "Variational fit")]
    pub relative_tolerance: Option<f64>,
    #[arg(long, help_heading = "Variational fit")]
    pub final_elbo_samples: Option<usize>,

    /// Training fractions (comma-separated)
    #[arg(long, value_delimiter = ',', help_heading = "Classification")]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, help_heading = "Classification")]
    pub repetitions: Option<usize>,
    #[arg(long, help_heading = "Classification")]
    pub n_trees: Option<usize>,
    #[arg(long, help_heading = "Classification")]
    pub max_depth: Option<usize>,

    /// `mixed` (causal/confounded blend) or `sites` (shifted datasets)
    #[arg(long, help_heading = "Simulation")]
    pub kind: Option<SimKind>,
    /// 1 = pure causal, 0 = pure confounded
    #[arg(long, help_heading = "Simulation")]
    pub alpha: Option<f64>,
    #[arg(long, help_heading = "Simulation")]
    pub n: Option<usize>,
    #[arg(long, help_heading = "Simulation")]
    pub m: Option<usize>,
    #[arg(long, help_heading = "Simulation")]
    pub noise_sd: Option<f64>,
    /// Number of datasets (`sites`)
    #[arg(long, help_heading = "Simulation")]
    pub datasets: Option<usize>,
    /// Mean shift between consecutive datasets (`sites`)
    #[arg(long, help_heading = "Simulation")]
    pub shift: Option<f64>,
    #[arg(long, help_heading = "Simulation")]
    pub n_per_dataset: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SimKind {
    Mixed,
    Sites,
}

macro_rules! overlay {
    ($base:ident, $over:ident; $($field:ident),* $(,)?) => {
        Settings { $($field: $over.$field.or($base.$field)),* }
    };
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: Settings) -> Settings {
        let base = self;
        overlay!(base, over;
            input, out, seed, jobs, controls_only,
            id_column, dataset_column, age_column, sex_column, diagnosis_column, control_labels, feature_prefixes,
            causes, targets, k, family, causal_family, method,
            sigma_x, sigma_w, sigma_y, sigma_z, sigma_obs,
            mc_samples, learning_rate, max_iterations, convergence_window, relative_tolerance, final_elbo_samples,
            fractions, repetitions, n_trees, max_depth,
            kind, alpha, n, m, noise_sd, datasets, shift, n_per_dataset,
        )
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.input.as_deref().ok_or_else(|| CliError::Usage("no input file (use --input or `input` in the config)".into()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn controls_only(&self) -> bool {
        self.controls_only.unwrap_or(true)
    }

    pub fn schema(&self) -> SchemaConfig {
        let d = SchemaConfig::default();
        SchemaConfig {
            id_column: self.id_column.clone().unwrap_or(d.id_column),
            dataset_column: self.dataset_column.clone().unwrap_or(d.dataset_column),
            age_column: self.age_column.clone().unwrap_or(d.age_column),
            sex_column: self.sex_column.clone().unwrap_or(d.sex_column),
            diagnosis_column: self.diagnosis_column.clone().unwrap_or(d.diagnosis_column),
            control_labels: self.control_labels.clone().unwrap_or(d.control_labels),
            feature_prefixes: self.feature_prefixes.clone().unwrap_or(d.feature_prefixes),
        }
    }

    pub fn fit(&self) -> FitConfig {
        let d = FitConfig::default();
        FitConfig {
            mc_samples_per_step: self.mc_samples.unwrap_or(d.mc_samples_per_step),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            convergence_window: self.convergence_window.unwrap_or(d.convergence_window),
            relative_tolerance: self.relative_tolerance.unwrap_or(d.relative_tolerance),
            final_elbo_samples: self.final_elbo_samples.unwrap_or(d.final_elbo_samples),
            seed: d.seed,
        }
    }

    pub fn score(&self) -> ScoreConfig {
        let d = ScoreConfig::default();
        let causal = CausalModelSpec {
            sigma_x: self.sigma_x.unwrap_or(d.causal.sigma_x),
            sigma_w: self.sigma_w.unwrap_or(d.causal.sigma_w),
            sigma_y: self.sigma_y.unwrap_or(d.causal.sigma_y),
        };
        let confounded = ConfoundedModelSpec {
            k: self.k.unwrap_or(d.confounded.k),
            sigma_z: self.sigma_z.unwrap_or(d.confounded.sigma_z),
            sigma_w: self.sigma_w.unwrap_or(d.confounded.sigma_w),
            sigma_obs: self.sigma_obs.unwrap_or(d.confounded.sigma_obs),
        };
        ScoreConfig {
            causal,
            confounded,
            causal_method: self.method.unwrap_or(d.causal_method),
            causal_family: self.causal_family.unwrap_or(d.causal_family),
            confounded_family: self.family.unwrap_or(d.confounded_family),
            fit: self.fit(),
            controls_only: self.controls_only(),
        }
    }

    pub fn harness(&self) -> HarnessConfig {
        let d = HarnessConfig::default();
        HarnessConfig {
            fractions: self.fractions.clone().unwrap_or(d.fractions),
            repetitions: self.repetitions.unwrap_or(d.repetitions),
            forest: ForestConfig {
                n_trees: self.n_trees.unwrap_or(d.forest.n_trees),
                tree: TreeConfig { max_depth: self.max_depth.or(d.forest.tree.max_depth), ..d.forest.tree },
                ..d.forest
            },
            controls_only: self.controls_only(),
        }
    }

    pub fn gen_spec(&self) -> GenSpec {
        let d = GenSpec::default();
        GenSpec {
            n: self.n.unwrap_or(d.n),
            m: self.m.unwrap_or(d.m),
            k: self.k.unwrap_or(d.k),
            alpha: self.alpha.unwrap_or(d.alpha),
            noise_sd: self.noise_sd.unwrap_or(d.noise_sd),
            seed: self.seed(),
            ..d
        }
    }

    pub fn multidataset_spec(&self) -> MultiDatasetSpec {
        let count = self.datasets.unwrap_or(2);
        let base = MultiDatasetSpec::graded(count, self.shift.unwrap_or(0.0));
        MultiDatasetSpec {
            n_per_dataset: self.n_per_dataset.unwrap_or(base.n_per_dataset),
            seed: self.seed(),
            ..base
        }
    }
}

/// The resolved configuration of one run. Everything that can change the
/// results is in here; the worker count and output directory are not.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    Score {
        input: PathBuf,
        schema: SchemaConfig,
        causes: String,
        targets: Vec<String>,
        score: ScoreConfig,
        seed: u64,
    },
    Classify {
        input: PathBuf,
        schema: SchemaConfig,
        harness: HarnessConfig,
        seed: u64,
    },
    SimulateMixed {
        spec: GenSpec,
    },
    SimulateSites {
        spec: MultiDatasetSpec,
    },
}

impl RunConfig {
    pub fn fingerprint(&self) -> String {
        fingerprint(serde_json::to_string(self).expect("run config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_are_overridden_by_flags() {
        let file: Settings = toml::from_str("seed = 3\nk = 2\nfamily = \"full-rank\"\nfractions = [0.2, 0.4]\n").unwrap();
        let flags = Settings { seed: Some(9), ..Settings::default() };
        let s = file.overlay(flags);
        assert_eq!(s.seed(), 9);
        assert_eq!(s.score().confounded.k, 2);
        assert_eq!(s.score().confounded_family, Family::FullRank);
        assert_eq!(s.harness().fractions, vec![0.2, 0.4]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Settings>("sede = 3\n").is_err());
    }

    #[test]
    fn defaults_match_core_defaults() {
        let s = Settings::default();
        assert_eq!(s.score(), ScoreConfig::default());
        assert_eq!(s.harness(), HarnessConfig::default());
        assert_eq!(s.schema(), SchemaConfig::default());
        assert!(s.controls_only());
    }

    #[test]
    fn fingerprint_ignores_jobs_and_out() {
        let a = Settings { jobs: Some(1), out: Some("a".into()), ..Settings::default() };
        let b = Settings { jobs: Some(8), out: Some("b".into()), ..Settings::default() };
        let fp = |s: &Settings| RunConfig::SimulateMixed { spec: s.gen_spec() }.fingerprint();
        assert_eq!(fp(&a), fp(&b));
        let c = Settings { alpha: Some(0.5), ..Settings::default() };
        assert_ne!(fp(&a), fp(&c));
    }
}
