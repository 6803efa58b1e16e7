//! Gradient-based variational inference with Gaussian families.
//!
//! Targets supply their own log density and analytic gradient. The ELBO is
//! maximized with reparameterized Monte-Carlo gradients, θ = μ + L ε with
//! ε ~ N(0, I), and Adam updates on the unconstrained parameters (means,
//! log-SDs / log-diagonal Cholesky entries). The entropy gradient is exact.

mod posterior;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use posterior::{gaussian_kl, Family, VariationalPosterior};

use crate::error::{Error, Result};
use crate::seed;
use posterior::tri_index;

/// A differentiable log density over ℝᵈ.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns log p(θ) and writes ∇ log p(θ) into `grad`.
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, theta: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.dim()];
        self.log_density_grad(theta, &mut scratch)
    }
}

/// Adapts a closure `(θ, grad) -> log p` into a [`LogDensity`].
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) -> f64 + Sync> FnDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnDensity { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) -> f64 + Sync> LogDensity for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(theta, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub mc_samples_per_step: usize,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub convergence_window: usize,
    pub relative_tolerance: f64,
    pub final_elbo_samples: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mc_samples_per_step: 8,
            learning_rate: 0.01,
            max_iterations: 20_000,
            convergence_window: 200,
            relative_tolerance: 1e-4,
            final_elbo_samples: 2_000,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mc_samples_per_step > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.max_iterations > 0
            && self.convergence_window > 0
            && self.relative_tolerance > 0.0
            && self.relative_tolerance < 1.0
            && self.final_elbo_samples > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid fit config {self:?}")))
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        FitConfig { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Trailing-window mean of the per-step ELBO estimate.
    pub elbo_history: Vec<f64>,
    pub converged: bool,
    pub iterations_run: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
    pub non_finite: usize,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const DIVERGENCE_STREAK: usize = 50;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    /// One ascent step on `params` along `grad`.
    fn step(&mut self, params: &mut [f64], grad: &[f64], offset: usize) {
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
            let k = offset + i;
            self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * g;
            self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * g * g;
            *p += self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + ADAM_EPS);
        }
    }
}

fn draw_eps(rng: &mut seed::Rng, eps: &mut [f64]) {
    for e in eps.iter_mut() {
        *e = rng.sample(StandardNormal);
    }
}

/// Maximizes the ELBO of `family` against `target`.
///
/// Convergence is checked at every multiple of the window: the mean ELBO
/// over the last window is compared with the window before it, relative to
/// `max(|previous|, 1)`. The returned parameters are the average of the
/// iterates over the final (possibly partial) window. Hitting `max_iterations`
/// is not an error; the trace reports `converged = false`.
pub fn fit(
    target: &dyn LogDensity,
    family: Family,
    config: &FitConfig,
) -> Result<(VariationalPosterior, FitTrace)> {
    config.validate()?;
    let d = target.dim();
    if d == 0 {
        return Err(Error::Precondition("target has dimension 0".into()));
    }
    let mut grad = vec![0.0; d];
    let at_zero = target.log_density_grad(&vec![0.0; d], &mut grad);
    if !at_zero.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Precondition("target is not finite at the origin".into()));
    }

    let mut q = VariationalPosterior::standard(family, d);
    let n_mean = d;
    let n_scale = q.scale_params().len();
    let mut adam = Adam::new(q.num_params(), config.learning_rate);
    let mut rng = seed::rng(config.seed);

    let mut eps = vec![0.0; d];
    let mut theta = vec![0.0; d];
    let mut g_mean = vec![0.0; n_mean];
    let mut g_scale = vec![0.0; n_scale];
    let window = config.convergence_window;
    let mut raw: Vec<f64> = Vec::new();
    let mut history = Vec::new();
    let mut window_sum = 0.0;
    let mut avg_count = 0usize;
    let mut prev_window_mean: Option<f64> = None;
    let mut avg_mean = vec![0.0; n_mean];
    let mut avg_scale = vec![0.0; n_scale];
    let mut streak = 0;
    let mut converged = false;
    let s = config.mc_samples_per_step as f64;

    for iter in 1..=config.max_iterations {
        g_mean.iter_mut().for_each(|g| *g = 0.0);
        g_scale.iter_mut().for_each(|g| *g = 0.0);
        let mut elbo = 0.0;
        let mut finite = true;
        for _ in 0..config.mc_samples_per_step {
            draw_eps(&mut rng, &mut eps);
            q.transform(&eps, &mut theta);
            let lp = target.log_density_grad(&theta, &mut grad);
            if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                finite = false;
                break;
            }
            elbo += lp - q.log_q_from_eps(&eps);
            for i in 0..d {
                g_mean[i] += grad[i];
            }
            let sp = q.scale_params();
            match family {
                Family::MeanField => {
                    for i in 0..d {
                        g_scale[i] += grad[i] * eps[i] * sp[i].exp();
                    }
                }
                Family::FullRank => {
                    for i in 0..d {
                        let row = tri_index(i, 0);
                        for j in 0..i {
                            g_scale[row + j] += grad[i] * eps[j];
                        }
                        g_scale[row + i] += grad[i] * eps[i] * sp[row + i].exp();
                    }
                }
            }
        }

        if !finite {
            streak += 1;
            history.push(history.last().copied().unwrap_or(f64::NAN));
            raw.push(f64::NAN);
            if streak >= DIVERGENCE_STREAK {
                return Err(Error::Divergence { iterations: iter });
            }
            continue;
        }
        streak = 0;
        elbo /= s;
        g_mean.iter_mut().for_each(|g| *g /= s);
        g_scale.iter_mut().for_each(|g| *g /= s);
        // entropy gradient: ∂/∂ log L_ii of Σ log L_ii
        match family {
            Family::MeanField => g_scale.iter_mut().for_each(|g| *g += 1.0),
            Family::FullRank => (0..d).for_each(|i| g_scale[tri_index(i, i)] += 1.0),
        }

        adam.t += 1;
        {
            let (mean, scale) = q.params_mut();
            adam.step(mean, &g_mean, 0);
            adam.step(scale, &g_scale, n_mean);
        }

        raw.push(elbo);
        let finite_tail = raw[raw.len().saturating_sub(window)..].iter().filter(|v| v.is_finite());
        let (sum, count) = finite_tail.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        history.push(if count > 0 { sum / count as f64 } else { f64::NAN });

        // Polyak average over the current window
        let pos = (iter - 1) % window;
        if pos == 0 {
            avg_mean.iter_mut().for_each(|v| *v = 0.0);
            avg_scale.iter_mut().for_each(|v| *v = 0.0);
            window_sum = 0.0;
            avg_count = 0;
        }
        avg_count += 1;
        for (a, p) in avg_mean.iter_mut().zip(q.mean()) {
            *a += p;
        }
        for (a, p) in avg_scale.iter_mut().zip(q.scale_params()) {
            *a += p;
        }
        window_sum += elbo;

        if pos == window - 1 {
            let current = window_sum / window as f64;
            if let Some(prev) = prev_window_mean {
                if ((current - prev) / prev.abs().max(1.0)).abs() < config.relative_tolerance {
                    converged = true;
                    break;
                }
            }
            prev_window_mean = Some(current);
        }
    }

    if avg_count > 0 {
        let w = avg_count as f64;
        let (mean, scale) = q.params_mut();
        for (p, a) in mean.iter_mut().zip(&avg_mean) {
            *p = a / w;
        }
        for (p, a) in scale.iter_mut().zip(&avg_scale) {
            *p = a / w;
        }
    }
    if !q.is_finite() {
        return Err(Error::Divergence { iterations: history.len() });
    }
    let iterations_run = history.len();
    Ok((q, FitTrace { elbo_history: history, converged, iterations_run }))
}

/// Monte-Carlo ELBO: mean and standard error of log p(θ) − log q(θ) over
/// fresh draws from q, with log q evaluated in closed form from ε.
pub fn estimate_elbo(
    posterior: &VariationalPosterior,
    target: &dyn LogDensity,
    n_samples: usize,
    seed: u64,
) -> Result<ElboEstimate> {
    if n_samples < 100 {
        return Err(Error::Precondition(format!("ELBO estimate needs >= 100 samples, got {n_samples}")));
    }
    if posterior.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "posterior has dimension {}, target {}",
            posterior.dim(),
            target.dim()
        )));
    }
    let d = posterior.dim();
    let mut rng = seed::rng(seed);
    let mut eps = vec![0.0; d];
    let mut theta = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut values = Vec::with_capacity(n_samples);
    let mut non_finite = 0;
    for _ in 0..n_samples {
        draw_eps(&mut rng, &mut eps);
        posterior.transform(&eps, &mut theta);
        let v = target.log_density_grad(&theta, &mut grad) - posterior.log_q_from_eps(&eps);
        if v.is_finite() {
            values.push(v);
        } else {
            non_finite += 1;
        }
    }
    if non_finite * 100 > n_samples {
        return Err(Error::Estimation { non_finite, total: n_samples });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(ElboEstimate { mean, se: (var / n).sqrt(), samples: values.len(), non_finite })
}
