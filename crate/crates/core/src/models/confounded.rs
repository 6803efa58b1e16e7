use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CodeLength, EvidenceMethod, FitDiagnostics};
use crate::advi::{self, Family, FitConfig, LogDensity};
use crate::error::{Error, Result};
use crate::gaussian::{SpdMatrix, LN_2PI};

/// Latent dimension `k` and the SDs of the confounded model. One noise SD
/// `sigma_obs` is shared by all m+1 joint coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfoundedModelSpec {
    pub k: usize,
    pub sigma_z: f64,
    pub sigma_w: f64,
    pub sigma_obs: f64,
}

impl Default for ConfoundedModelSpec {
    fn default() -> Self {
        ConfoundedModelSpec { k: 1, sigma_z: 1.0, sigma_w: 1.0, sigma_obs: 1.0 }
    }
}

impl ConfoundedModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Precondition("latent dimension k must be at least 1".into()));
        }
        let ok = [self.sigma_z, self.sigma_w, self.sigma_obs].iter().all(|s| *s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("confounded model SDs must be positive: {self:?}")))
        }
    }
}

/// Rows of (x₁, …, x_m, y): the causes with one target appended.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVector {
    values: DMatrix<f64>,
}

impl JointVector {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() < 2 {
            return Err(Error::Dimension("joint vector needs at least one cause and a target".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("joint vector has non-finite entries".into()));
        }
        Ok(JointVector { values })
    }

    pub fn from_parts(x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!("X has {} rows, y has {} entries", x.nrows(), y.len())));
        }
        let (n, m) = x.shape();
        Self::new(DMatrix::from_fn(n, m + 1, |i, j| if j < m { x[(i, j)] } else { y[i] }))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    /// m + 1
    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    fn row_major(&self) -> Vec<f64> {
        self.values.transpose().as_slice().to_vec()
    }
}

/// Shared kernel: Z (n×k) and W (k×p) row-major; V row-major n×p.
#[allow(clippy::too_many_arguments)]
fn log_joint_flat(
    z: &[f64],
    w: &[f64],
    v: &[f64],
    n: usize,
    p: usize,
    k: usize,
    spec: &ConfoundedModelSpec,
    gz: &mut [f64],
    gw: &mut [f64],
) -> f64 {
    let s2z = spec.sigma_z * spec.sigma_z;
    let s2w = spec.sigma_w * spec.sigma_w;
    let s2o = spec.sigma_obs * spec.sigma_obs;
    let mut sq_z = 0.0;
    for (g, zi) in gz.iter_mut().zip(z) {
        sq_z += zi * zi;
        *g = -zi / s2z;
    }
    let mut sq_w = 0.0;
    for (g, wi) in gw.iter_mut().zip(w) {
        sq_w += wi * wi;
        *g = -wi / s2w;
    }
    let mut sq_r = 0.0;
    let mut resid = vec![0.0; p];
    for row in 0..n {
        let zr = &z[row * k..(row + 1) * k];
        let vr = &v[row * p..(row + 1) * p];
        for j in 0..p {
            let mut pred = 0.0;
            for l in 0..k {
                pred += zr[l] * w[l * p + j];
            }
            let r = vr[j] - pred;
            resid[j] = r;
            sq_r += r * r;
        }
        for l in 0..k {
            let mut acc = 0.0;
            let zl = zr[l];
            let wl = &mut gw[l * p..(l + 1) * p];
            for j in 0..p {
                acc += w[l * p + j] * resid[j];
                wl[j] += zl * resid[j] / s2o;
            }
            gz[row * k + l] += acc / s2o;
        }
    }
    let nk = (n * k) as f64;
    let kp = (k * p) as f64;
    let np = (n * p) as f64;
    -0.5 * sq_z / s2z - nk * (0.5 * LN_2PI + spec.sigma_z.ln()) - 0.5 * sq_w / s2w
        - kp * (0.5 * LN_2PI + spec.sigma_w.ln())
        - 0.5 * sq_r / s2o
        - np * (0.5 * LN_2PI + spec.sigma_obs.ln())
}

/// log P(Z) + log P(W) + Σₙ log N(vₙ; W⊤zₙ, σ_obs² I) with gradients in Z and W.
pub fn confounded_log_joint(
    z: &DMatrix<f64>,
    w: &DMatrix<f64>,
    v: &JointVector,
    spec: &ConfoundedModelSpec,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let (n, p) = (v.nrows(), v.ncols());
    let k = z.ncols();
    if z.nrows() != n || w.shape() != (k, p) {
        return Err(Error::Dimension(format!(
            "Z is {}x{}, W is {}x{}, V is {n}x{p}",
            z.nrows(),
            z.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let zf = z.transpose().as_slice().to_vec();
    let wf = w.transpose().as_slice().to_vec();
    let mut gz = vec![0.0; n * k];
    let mut gw = vec![0.0; k * p];
    let value = log_joint_flat(&zf, &wf, &v.row_major(), n, p, k, spec, &mut gz, &mut gw);
    Ok((value, DMatrix::from_row_slice(n, k, &gz), DMatrix::from_row_slice(k, p, &gw)))
}

/// Σₙ log N(vₙ; 0, σ_z² W⊤W + σ_obs² I): Z integrated out for fixed loadings.
pub fn ppca_evidence_fixed_w(v: &JointVector, w: &DMatrix<f64>, spec: &ConfoundedModelSpec) -> Result<f64> {
    let p = v.ncols();
    if w.ncols() != p {
        return Err(Error::Dimension(format!("W has {} columns, V has {p}", w.ncols())));
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Precondition("loadings must be finite".into()));
    }
    let mut cov = w.transpose() * w * spec.sigma_z.powi(2);
    for i in 0..p {
        cov[(i, i)] += spec.sigma_obs.powi(2);
    }
    let cov = SpdMatrix::new(cov)?;
    let log_det = cov.log_det();
    let total = v
        .values()
        .row_iter()
        .map(|row| {
            let r = DVector::from_iterator(p, row.iter().copied());
            -0.5 * (p as f64 * LN_2PI + log_det + cov.inv_quad_form(&r))
        })
        .sum();
    Ok(total)
}

/// Joint posterior target over θ = (Z row-major, W row-major).
pub struct ConfoundedTarget {
    v: Vec<f64>,
    n: usize,
    p: usize,
    spec: ConfoundedModelSpec,
}

impl ConfoundedTarget {
    pub fn new(v: &JointVector, spec: &ConfoundedModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(ConfoundedTarget { v: v.row_major(), n: v.nrows(), p: v.ncols(), spec: *spec })
    }

    /// Splits θ into (Z as n×k, W as k×p).
    pub fn unpack(&self, theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.spec.k;
        let nz = self.n * k;
        (
            DMatrix::from_row_slice(self.n, k, &theta[..nz]),
            DMatrix::from_row_slice(k, self.p, &theta[nz..]),
        )
    }
}

impl LogDensity for ConfoundedTarget {
    fn dim(&self) -> usize {
        self.spec.k * (self.n + self.p)
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.spec.k;
        let nz = self.n * k;
        let (z, w) = theta.split_at(nz);
        let (gz, gw) = grad.split_at_mut(nz);
        log_joint_flat(z, w, &self.v, self.n, self.p, k, &self.spec, gz, gw)
    }
}

/// L_co as −ELBO of a variational fit over (Z, W).
pub fn l_confounded(
    v: &JointVector,
    spec: &ConfoundedModelSpec,
    family: Family,
    fit_config: &FitConfig,
) -> Result<CodeLength> {
    spec.validate()?;
    let (n, p) = (v.nrows(), v.ncols());
    if n < p + 1 {
        return Err(Error::Precondition(format!("confounded model needs n >= m + 2 rows, got n = {n}, m = {}", p - 1)));
    }
    let target = ConfoundedTarget::new(v, spec)?;
    let (q, trace) = advi::fit(&target, family, fit_config)?;
    let elbo = advi::estimate_elbo(&q, &target, fit_config.final_elbo_samples.max(100), fit_config.seed.wrapping_add(1))?;
    Ok(CodeLength {
        nats: -elbo.mean,
        se: elbo.se,
        method: EvidenceMethod::Advi,
        fit: Some(FitDiagnostics::new(family, &trace, elbo.mean)),
    })
}
