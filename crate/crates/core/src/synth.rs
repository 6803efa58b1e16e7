//! Synthetic subject tables with known structure.
//!
//! [`gen_mixed`] interpolates between a purely causal generator (α = 1,
//! x → y) and a purely confounded one (α = 0, x ← z → y).
//! [`gen_multidataset`] draws several datasets that differ only by feature
//! shift and scale.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tabular::{Subject, Table};

const AGE_RANGE: (f64, f64) = (20.0, 80.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub n: usize,
    /// Number of causes.
    pub m: usize,
    /// Number of latent confounders.
    pub k: usize,
    /// 1 = pure causal, 0 = pure confounded.
    pub alpha: f64,
    /// Causal weights w (length m); drawn N(0, 1) when absent.
    pub cause_weights: Option<Vec<f64>>,
    /// Loadings A of x on z (m × k, row-major); drawn N(0, 1) when absent.
    pub cause_loadings: Option<Vec<f64>>,
    /// Loadings b of y on z (length k); drawn N(0, 1) when absent.
    pub target_loadings: Option<Vec<f64>>,
    pub noise_sd: f64,
    pub seed: u64,
    pub dataset: String,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n: 500,
            m: 3,
            k: 1,
            alpha: 1.0,
            cause_weights: None,
            cause_loadings: None,
            target_loadings: None,
            noise_sd: 0.5,
            seed: 0,
            dataset: "SYN".into(),
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.n < 10 || self.m == 0 || self.k == 0 {
            return Err(Error::Config(format!("need n >= 10, m >= 1, k >= 1 (n = {}, m = {}, k = {})", self.n, self.m, self.k)));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise SD {} must be positive", self.noise_sd)));
        }
        let lens = [
            (self.cause_weights.as_ref(), self.m, "cause_weights"),
            (self.cause_loadings.as_ref(), self.m * self.k, "cause_loadings"),
            (self.target_loadings.as_ref(), self.k, "target_loadings"),
        ];
        for (v, len, name) in lens {
            if let Some(v) = v {
                if v.len() != len {
                    return Err(Error::Config(format!("{name} has {} entries, expected {len}", v.len())));
                }
            }
        }
        if self.dataset.is_empty() {
            return Err(Error::Config("empty dataset label".into()));
        }
        Ok(())
    }
}

/// Everything needed to replay the target column from the causes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: GenSpec,
    pub cause_columns: Vec<String>,
    pub target_column: String,
    pub cause_weights: Vec<f64>,
    pub cause_loadings: Vec<f64>,
    pub target_loadings: Vec<f64>,
    /// Latent draws, one row of length k per subject.
    pub latents: Vec<Vec<f64>>,
    /// Standard-normal target noise draws, one per subject.
    pub target_noise: Vec<f64>,
}

impl GroundTruth {
    /// Recomputes y from cause rows and the recorded latents and noise.
    pub fn replay_target(&self, causes: &[Vec<f64>]) -> Result<Vec<f64>> {
        if causes.len() != self.latents.len() {
            return Err(Error::Dimension(format!("{} cause rows for {} subjects", causes.len(), self.latents.len())));
        }
        Ok(causes
            .iter()
            .zip(&self.latents)
            .zip(&self.target_noise)
            .map(|((x, z), e)| {
                target_value(self.spec.alpha, &self.cause_weights, x, &self.target_loadings, z, self.spec.noise_sd, *e)
            })
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn target_value(alpha: f64, w: &[f64], x: &[f64], b: &[f64], z: &[f64], noise_sd: f64, eps: f64) -> f64 {
    alpha * dot(w, x) + (1.0 - alpha) * dot(b, z) + noise_sd * eps
}

fn draw_vec(rng: &mut seed::Rng, given: &Option<Vec<f64>>, len: usize) -> Vec<f64> {
    match given {
        Some(v) => v.clone(),
        None => (0..len).map(|_| rng.sample(StandardNormal)).collect(),
    }
}

fn random_demographics(rng: &mut seed::Rng) -> (f64, u8) {
    (rng.gen_range(AGE_RANGE.0..AGE_RANGE.1), u8::from(rng.gen_bool(0.5)))
}

/// z ~ N(0, I_k); xᵢ = (√α εᵢ + √(1−α) (A z)ᵢ) / sᵢ with sᵢ the exact SD of the
/// numerator, so every cause has unit variance; y = α w⊤x + (1−α) b⊤z + σ ε_y.
///
/// Causes are written as feature columns `vol_x1..vol_xm` and the target as
/// `vol_y`; age and sex are drawn independently of the structure.
pub fn gen_mixed(spec: &GenSpec) -> Result<(Table, GroundTruth)> {
    spec.validate()?;
    let (n, m, k, alpha) = (spec.n, spec.m, spec.k, spec.alpha);
    let mut rng = seed::rng(spec.seed);
    let w = draw_vec(&mut rng, &spec.cause_weights, m);
    let a = draw_vec(&mut rng, &spec.cause_loadings, m * k);
    let b = draw_vec(&mut rng, &spec.target_loadings, k);

    let scales: Vec<f64> = (0..m)
        .map(|i| (alpha + (1.0 - alpha) * dot(&a[i * k..(i + 1) * k], &a[i * k..(i + 1) * k])).sqrt())
        .collect();
    if scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config("a cause has zero variance (alpha = 0 with a zero loading row)".into()));
    }

    let mut subjects = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for row in 0..n {
        let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let x: Vec<f64> = (0..m)
            .map(|i| {
                let e: f64 = rng.sample(StandardNormal);
                (alpha.sqrt() * e + (1.0 - alpha).sqrt() * dot(&a[i * k..(i + 1) * k], &z)) / scales[i]
            })
            .collect();
        let eps: f64 = rng.sample(StandardNormal);
        let y = target_value(alpha, &w, &x, &b, &z, spec.noise_sd, eps);
        let (age, sex) = random_demographics(&mut rng);
        let mut features = x;
        features.push(y);
        subjects.push(Subject { id: format!("{}-{:05}", spec.dataset, row + 1), age, sex, features });
        latents.push(z);
        noise.push(eps);
    }

    let cause_columns: Vec<String> = (1..=m).map(|i| format!("vol_x{i}")).collect();
    let target_column = "vol_y".to_string();
    let mut columns = cause_columns.clone();
    columns.push(target_column.clone());
    let table = Table::new(subjects, columns, vec![spec.dataset.clone(); n], None)?;
    let truth = GroundTruth {
        spec: spec.clone(),
        cause_columns,
        target_column,
        cause_weights: w,
        cause_loadings: a,
        target_loadings: b,
        latents,
        target_noise: noise,
    };
    Ok((table, truth))
}

/// Several datasets whose features differ only by a per-dataset shift and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiDatasetSpec {
    /// Mean shift of every feature, one entry per dataset.
    pub shifts: Vec<f64>,
    /// Feature SD per dataset; all 1 when empty.
    pub scales: Vec<f64>,
    pub n_per_dataset: usize,
    pub volume_features: usize,
    pub thickness_features: usize,
    pub seed: u64,
}

impl Default for MultiDatasetSpec {
    fn default() -> Self {
        MultiDatasetSpec {
            shifts: vec![0.0; 2],
            scales: Vec::new(),
            n_per_dataset: 200,
            volume_features: 4,
            thickness_features: 4,
            seed: 0,
        }
    }
}

impl MultiDatasetSpec {
    /// `count` datasets with shifts 0, step, 2·step, …
    pub fn graded(count: usize, step: f64) -> Self {
        MultiDatasetSpec { shifts: (0..count).map(|i| i as f64 * step).collect(), ..Default::default() }
    }
}

pub fn dataset_name(index: usize) -> String {
    format!("SITE{:02}", index + 1)
}

pub fn gen_multidataset(spec: &MultiDatasetSpec) -> Result<Table> {
    let d = spec.shifts.len();
    if d < 2 {
        return Err(Error::Config("need at least 2 datasets".into()));
    }
    if !spec.scales.is_empty() && spec.scales.len() != d {
        return Err(Error::Config(format!("{} scales for {d} datasets", spec.scales.len())));
    }
    if spec.scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config("scales must be positive".into()));
    }
    let f = spec.volume_features + spec.thickness_features;
    let mut columns: Vec<String> = (1..=spec.volume_features).map(|i| format!("vol_{i:02}")).collect();
    columns.extend((1..=spec.thickness_features).map(|i| format!("thick_{i:02}")));
    let mut rng = seed::rng(spec.seed);
    let mut subjects = Vec::with_capacity(d * spec.n_per_dataset);
    let mut labels = Vec::with_capacity(d * spec.n_per_dataset);
    for (di, shift) in spec.shifts.iter().enumerate() {
        let scale = spec.scales.get(di).copied().unwrap_or(1.0);
        let name = dataset_name(di);
        for row in 0..spec.n_per_dataset {
            let features = (0..f).map(|_| shift + scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let (age, sex) = random_demographics(&mut rng);
            subjects.push(Subject { id: format!("{name}-{:05}", row + 1), age, sex, features });
            labels.push(name.clone());
        }
    }
    Table::new(subjects, columns, labels, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn residual(a: &[f64], z: &[f64]) -> Vec<f64> {
        let beta = dot(a, z) / dot(z, z);
        a.iter().zip(z).map(|(x, zz)| x - beta * zz).collect()
    }

    #[test]
    fn pure_causal_causes_ignore_latents() {
        let spec = GenSpec { n: 2000, alpha: 1.0, seed: 3, ..Default::default() };
        let (t, gt) = gen_mixed(&spec).unwrap();
        let z: Vec<f64> = gt.latents.iter().map(|r| r[0]).collect();
        let bound = 3.0 / (spec.n as f64).sqrt();
        for c in &gt.cause_columns {
            assert!(corr(&t.column(c).unwrap(), &z).abs() < bound);
        }
    }

    #[test]
    fn pure_confounded_has_no_direct_path() {
        let spec = GenSpec { n: 2000, alpha: 0.0, seed: 4, ..Default::default() };
        let (t, gt) = gen_mixed(&spec).unwrap();
        let z: Vec<f64> = gt.latents.iter().map(|r| r[0]).collect();
        // partial association of x and y given z: y's residual on z against x
        let ry = residual(&t.column("vol_y").unwrap(), &z);
        let bound = 3.0 / (spec.n as f64).sqrt();
        for c in &gt.cause_columns {
            assert!(corr(&t.column(c).unwrap(), &ry).abs() < bound);
        }
        // and x carries no signal beyond z
        for c in &gt.cause_columns {
            assert!(corr(&t.column(c).unwrap(), &z).abs() > 0.999);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GenSpec { alpha: 0.5, seed: 9, ..Default::default() };
        let (a, ga) = gen_mixed(&spec).unwrap();
        let (b, gb) = gen_mixed(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn causes_have_unit_moments() {
        for alpha in [0.0, 0.3, 1.0] {
            let spec = GenSpec { n: 4000, alpha, seed: 6, ..Default::default() };
            let (t, gt) = gen_mixed(&spec).unwrap();
            let tol = 4.0 / (spec.n as f64).sqrt();
            for c in &gt.cause_columns {
                let x = t.column(c).unwrap();
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                assert!(mean.abs() < tol && (sd - 1.0).abs() < tol, "alpha {alpha}: {mean} {sd}");
            }
        }
    }

    #[test]
    fn replay_reproduces_target_exactly() {
        let spec = GenSpec { alpha: 0.5, seed: 10, ..Default::default() };
        let (t, gt) = gen_mixed(&spec).unwrap();
        let causes = t.feature_rows(&gt.cause_columns).unwrap();
        assert_eq!(gt.replay_target(&causes).unwrap(), t.column(&gt.target_column).unwrap());
    }

    #[test]
    fn invalid_specs() {
        assert!(gen_mixed(&GenSpec { alpha: 1.5, ..Default::default() }).is_err());
        assert!(gen_mixed(&GenSpec { n: 5, ..Default::default() }).is_err());
        assert!(gen_mixed(&GenSpec { cause_weights: Some(vec![1.0]), ..Default::default() }).is_err());
        assert!(gen_mixed(&GenSpec { alpha: 0.0, cause_loadings: Some(vec![1.0, 0.0, 1.0]), ..Default::default() }).is_err());
    }

    #[test]
    fn multidataset_moments() {
        let spec = MultiDatasetSpec { shifts: vec![0.0, 2.0, -1.0], scales: vec![1.0, 0.5, 2.0], n_per_dataset: 3000, ..Default::default() };
        let t = gen_multidataset(&spec).unwrap();
        assert_eq!(t.datasets(), vec!["SITE01", "SITE02", "SITE03"]);
        for (i, name) in t.datasets().iter().enumerate() {
            let sub = t.dataset(name).unwrap();
            let x = sub.column("thick_02").unwrap();
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let tol = 4.0 * spec.scales[i] / n.sqrt();
            assert!((mean - spec.shifts[i]).abs() < tol);
            assert!((sd - spec.scales[i]).abs() < tol);
        }
        assert!(gen_multidataset(&MultiDatasetSpec { shifts: vec![0.0], ..Default::default() }).is_err());
    }
}
