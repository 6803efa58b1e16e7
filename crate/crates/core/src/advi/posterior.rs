use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::gaussian::LN_2PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    MeanField,
    FullRank,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "mean-field" | "mean_field" => Ok(Family::MeanField),
            "full-rank" | "full_rank" => Ok(Family::FullRank),
            other => Err(Error::Config(format!("unknown variational family `{other}`"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::MeanField => "mean-field",
            Family::FullRank => "full-rank",
        })
    }
}

/// Gaussian q(θ) = N(μ, L L⊤).
///
/// Mean-field: `scale` holds per-coordinate log-SDs and L is diagonal.
/// Full-rank: `scale` holds the lower triangle of L packed row by row, with
/// the diagonal entries stored as logs so every parameter is unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior {
    family: Family,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

#[inline]
pub(crate) fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl VariationalPosterior {
    /// Standard normal q: zero mean, unit scale.
    pub fn standard(family: Family, dim: usize) -> Self {
        let scale_len = match family {
            Family::MeanField => dim,
            Family::FullRank => dim * (dim + 1) / 2,
        };
        VariationalPosterior { family, mean: vec![0.0; dim], scale: vec![0.0; scale_len] }
    }

    pub fn mean_field(mean: Vec<f64>, log_sd: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_sd.len());
        VariationalPosterior { family: Family::MeanField, mean, scale: log_sd }
    }

    /// Full-rank q from a mean and a lower-triangular factor with positive diagonal.
    pub fn full_rank(mean: Vec<f64>, factor: &DMatrix<f64>) -> Self {
        let d = mean.len();
        assert_eq!(factor.shape(), (d, d));
        let mut scale = vec![0.0; d * (d + 1) / 2];
        for i in 0..d {
            for j in 0..i {
                scale[tri_index(i, j)] = factor[(i, j)];
            }
            assert!(factor[(i, i)] > 0.0, "factor diagonal must be positive");
            scale[tri_index(i, i)] = factor[(i, i)].ln();
        }
        VariationalPosterior { family: Family::FullRank, mean, scale }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.mean, &mut self.scale)
    }

    pub(crate) fn scale_params(&self) -> &[f64] {
        &self.scale
    }

    pub(crate) fn num_params(&self) -> usize {
        self.mean.len() + self.scale.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.scale).all(|v| v.is_finite())
    }

    /// Σ log diag(L).
    pub fn log_det_factor(&self) -> f64 {
        match self.family {
            Family::MeanField => self.scale.iter().sum(),
            Family::FullRank => (0..self.dim()).map(|i| self.scale[tri_index(i, i)]).sum(),
        }
    }

    /// Closed-form differential entropy in nats.
    pub fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (1.0 + LN_2PI) + self.log_det_factor()
    }

    /// θ = μ + L ε.
    pub fn transform(&self, eps: &[f64], theta: &mut [f64]) {
        let d = self.dim();
        match self.family {
            Family::MeanField => {
                for i in 0..d {
                    theta[i] = self.mean[i] + self.scale[i].exp() * eps[i];
                }
            }
            Family::FullRank => {
                for i in 0..d {
                    let row = tri_index(i, 0);
                    let mut acc = self.mean[i] + self.scale[row + i].exp() * eps[i];
                    for j in 0..i {
                        acc += self.scale[row + j] * eps[j];
                    }
                    theta[i] = acc;
                }
            }
        }
    }

    /// log q(μ + L ε), evaluated from ε.
    pub fn log_q_from_eps(&self, eps: &[f64]) -> f64 {
        let sq: f64 = eps.iter().map(|e| e * e).sum();
        -0.5 * sq - 0.5 * self.dim() as f64 * LN_2PI - self.log_det_factor()
    }

    /// Solves L ε = θ − μ.
    pub fn standardize(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut eps = vec![0.0; d];
        match self.family {
            Family::MeanField => {
                for i in 0..d {
                    eps[i] = (theta[i] - self.mean[i]) / self.scale[i].exp();
                }
            }
            Family::FullRank => {
                for i in 0..d {
                    let row = tri_index(i, 0);
                    let mut r = theta[i] - self.mean[i];
                    for j in 0..i {
                        r -= self.scale[row + j] * eps[j];
                    }
                    eps[i] = r / self.scale[row + i].exp();
                }
            }
        }
        eps
    }

    pub fn log_q(&self, theta: &[f64]) -> f64 {
        self.log_q_from_eps(&self.standardize(theta))
    }

    pub fn factor(&self) -> DMatrix<f64> {
        let d = self.dim();
        match self.family {
            Family::MeanField => DMatrix::from_diagonal(&DVector::from_iterator(d, self.scale.iter().map(|s| s.exp()))),
            Family::FullRank => DMatrix::from_fn(d, d, |i, j| match j.cmp(&i) {
                std::cmp::Ordering::Less => self.scale[tri_index(i, j)],
                std::cmp::Ordering::Equal => self.scale[tri_index(i, i)].exp(),
                std::cmp::Ordering::Greater => 0.0,
            }),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.factor();
        &l * l.transpose()
    }

    /// Marginal SD of coordinate `i`.
    pub fn sd(&self, i: usize) -> f64 {
        match self.family {
            Family::MeanField => self.scale[i].exp(),
            Family::FullRank => {
                let row = tri_index(i, 0);
                let off: f64 = (0..i).map(|j| self.scale[row + j].powi(2)).sum();
                (off + self.scale[row + i].exp().powi(2)).sqrt()
            }
        }
    }
}

/// KL(q ‖ N(mean, cov)) in nats.
pub fn gaussian_kl(q: &VariationalPosterior, mean: &[f64], cov: &DMatrix<f64>) -> crate::error::Result<f64> {
    let d = q.dim();
    let p = crate::gaussian::SpdMatrix::new(cov.clone())?;
    let sq = q.covariance();
    let mut trace = 0.0;
    for j in 0..d {
        trace += p.solve(&sq.column(j).into_owned())[j];
    }
    let diff = DVector::from_iterator(d, mean.iter().zip(q.mean()).map(|(a, b)| a - b));
    let logdet_q = 2.0 * q.log_det_factor();
    Ok(0.5 * (trace + p.inv_quad_form(&diff) - d as f64 + p.log_det() - logdet_q))
}
