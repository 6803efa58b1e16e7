use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CodeLength, EvidenceMethod, FitDiagnostics};
use crate::advi::{self, Family, FitConfig, LogDensity};
use crate::error::{Error, Result};
use crate::gaussian::{normal_logpdf, SpdMatrix, LN_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalModelSpec {
    pub sigma_x: f64,
    pub sigma_w: f64,
    pub sigma_y: f64,
}

impl Default for CausalModelSpec {
    fn default() -> Self {
        CausalModelSpec { sigma_x: 1.0, sigma_w: 1.0, sigma_y: 1.0 }
    }
}

impl CausalModelSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.sigma_x, self.sigma_w, self.sigma_y].iter().all(|s| *s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("causal model SDs must be positive: {self:?}")))
        }
    }
}

fn check_dims(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("X has {} rows, y has {} entries", x.nrows(), y.len())));
    }
    Ok(())
}

/// log P(w) + Σₙ log N(yₙ; w⊤xₙ, σ_y²) and its gradient in w.
pub fn causal_log_joint(w: &[f64], x: &DMatrix<f64>, y: &[f64], spec: &CausalModelSpec) -> Result<(f64, Vec<f64>)> {
    check_dims(x, y)?;
    if w.len() != x.ncols() {
        return Err(Error::Dimension(format!("w has {} entries, X has {} columns", w.len(), x.ncols())));
    }
    let m = w.len();
    let s2w = spec.sigma_w * spec.sigma_w;
    let s2y = spec.sigma_y * spec.sigma_y;
    let mut value: f64 = w.iter().map(|wi| normal_logpdf(*wi, 0.0, spec.sigma_w)).sum();
    let mut grad: Vec<f64> = w.iter().map(|wi| -wi / s2w).collect();
    for (n, yn) in y.iter().enumerate() {
        let pred: f64 = (0..m).map(|j| x[(n, j)] * w[j]).sum();
        let r = yn - pred;
        value += normal_logpdf(*yn, pred, spec.sigma_y);
        for j in 0..m {
            grad[j] += r * x[(n, j)] / s2y;
        }
    }
    Ok((value, grad))
}

/// log N(y; 0, σ_w² X X⊤ + σ_y² I), evaluated in the m-dimensional weight space
/// via the matrix determinant lemma and the Woodbury identity.
pub fn causal_evidence_closed_form(x: &DMatrix<f64>, y: &[f64], spec: &CausalModelSpec) -> Result<f64> {
    check_dims(x, y)?;
    let n = y.len();
    if n == 0 {
        return Err(Error::Precondition("causal evidence needs at least one row".into()));
    }
    let m = x.ncols();
    let s2w = spec.sigma_w * spec.sigma_w;
    let s2y = spec.sigma_y * spec.sigma_y;
    let yv = DVector::from_column_slice(y);
    let xty = x.transpose() * &yv;
    // B = (σ_y²/σ_w²) I + X⊤X
    let mut b = x.transpose() * x;
    for i in 0..m {
        b[(i, i)] += s2y / s2w;
    }
    let b = SpdMatrix::new(b)?;
    let logdet_c = n as f64 * s2y.ln() + b.log_det() - m as f64 * (s2y / s2w).ln();
    let quad = (yv.norm_squared() - b.inv_quad_form(&xty)) / s2y;
    Ok(-0.5 * (n as f64 * LN_2PI + logdet_c + quad))
}

/// −Σ log N(x; 0, σ_x²) over every entry of X.
pub fn code_length_x(x: &DMatrix<f64>, sigma_x: f64) -> f64 {
    -x.iter().map(|v| normal_logpdf(*v, 0.0, sigma_x)).sum::<f64>()
}

/// Posterior target over w backed by the sufficient statistics X⊤X, X⊤y, y⊤y.
pub struct CausalTarget {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: usize,
    spec: CausalModelSpec,
}

impl CausalTarget {
    pub fn new(x: &DMatrix<f64>, y: &[f64], spec: &CausalModelSpec) -> Result<Self> {
        check_dims(x, y)?;
        let yv = DVector::from_column_slice(y);
        Ok(CausalTarget {
            xtx: x.transpose() * x,
            xty: x.transpose() * &yv,
            yty: yv.norm_squared(),
            n: y.len(),
            spec: *spec,
        })
    }
}

impl LogDensity for CausalTarget {
    fn dim(&self) -> usize {
        self.xty.len()
    }

    fn log_density_grad(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.dim();
        let s2w = self.spec.sigma_w * self.spec.sigma_w;
        let s2y = self.spec.sigma_y * self.spec.sigma_y;
        let mut prior = 0.0;
        let mut wxtxw = 0.0;
        let mut wxty = 0.0;
        for i in 0..m {
            prior += normal_logpdf(w[i], 0.0, self.spec.sigma_w);
            let mut xtxw_i = 0.0;
            for j in 0..m {
                xtxw_i += self.xtx[(i, j)] * w[j];
            }
            wxtxw += w[i] * xtxw_i;
            wxty += w[i] * self.xty[i];
            grad[i] = (self.xty[i] - xtxw_i) / s2y - w[i] / s2w;
        }
        let rss = self.yty - 2.0 * wxty + wxtxw;
        let n = self.n as f64;
        prior - 0.5 * n * (LN_2PI + s2y.ln()) - 0.5 * rss / s2y
    }
}

/// L_ca = −log P(X) − log evidence(Y | X). For `Advi` the evidence is the
/// final ELBO estimate, so the result is an upper bound on the exact value.
pub fn l_causal(
    x: &DMatrix<f64>,
    y: &[f64],
    spec: &CausalModelSpec,
    method: EvidenceMethod,
    family: Family,
    fit_config: &FitConfig,
) -> Result<CodeLength> {
    spec.validate()?;
    check_dims(x, y)?;
    if y.is_empty() {
        return Err(Error::Precondition("causal code length needs at least one row".into()));
    }
    let lx = code_length_x(x, spec.sigma_x);
    match method {
        EvidenceMethod::ClosedForm => Ok(CodeLength {
            nats: lx - causal_evidence_closed_form(x, y, spec)?,
            se: 0.0,
            method,
            fit: None,
        }),
        EvidenceMethod::Advi => {
            let target = CausalTarget::new(x, y, spec)?;
            let (q, trace) = advi::fit(&target, family, fit_config)?;
            let elbo = advi::estimate_elbo(
                &q,
                &target,
                fit_config.final_elbo_samples.max(100),
                fit_config.seed.wrapping_add(1),
            )?;
            Ok(CodeLength {
                nats: lx - elbo.mean,
                se: elbo.se,
                method,
                fit: Some(FitDiagnostics::new(family, &trace, elbo.mean)),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::mvn_logpdf;
    use crate::quadrature::log_quadrature_1d;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_instance(n: usize, m: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = crate::seed::rng(seed);
        let x = DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal));
        let y = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (x, y)
    }

    /// Direct n × n marginal covariance route.
    fn dense_evidence(x: &DMatrix<f64>, y: &[f64], spec: &CausalModelSpec) -> f64 {
        let n = y.len();
        let cov = x * x.transpose() * spec.sigma_w.powi(2) + DMatrix::identity(n, n) * spec.sigma_y.powi(2);
        mvn_logpdf(y, &vec![0.0; n], &SpdMatrix::new(cov).unwrap()).unwrap()
    }

    #[test]
    fn zero_weights_zero_residuals() {
        let (x, _) = random_instance(5, 2, 1);
        let spec = CausalModelSpec { sigma_x: 1.0, sigma_w: 0.7, sigma_y: 1.3 };
        let (v, g) = causal_log_joint(&[0.0, 0.0], &x, &[0.0; 5], &spec).unwrap();
        let expected = 2.0 * normal_logpdf(0.0, 0.0, 0.7) + 5.0 * normal_logpdf(0.0, 0.0, 1.3);
        assert!((v - expected).abs() < 1e-12);
        assert!(g.iter().all(|gi| *gi == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = random_instance(20, 3, 2);
        let spec = CausalModelSpec::default();
        let mut rng = crate::seed::rng(3);
        for _ in 0..10 {
            let w: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let (_, g) = causal_log_joint(&w, &x, &y, &spec).unwrap();
            for j in 0..3 {
                let h = 1e-4;
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                let fd = (causal_log_joint(&wp, &x, &y, &spec).unwrap().0 - causal_log_joint(&wm, &x, &y, &spec).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn flat_likelihood_leaves_prior_gradient() {
        let (x, y) = random_instance(10, 2, 4);
        let spec = CausalModelSpec { sigma_x: 1.0, sigma_w: 2.0, sigma_y: 1e8 };
        let w = [0.5, -1.5];
        let (_, g) = causal_log_joint(&w, &x, &y, &spec).unwrap();
        for j in 0..2 {
            assert!((g[j] + w[j] / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sufficient_statistics_target_agrees_with_rowwise() {
        let (x, y) = random_instance(30, 3, 5);
        let spec = CausalModelSpec { sigma_x: 1.0, sigma_w: 0.8, sigma_y: 0.6 };
        let target = CausalTarget::new(&x, &y, &spec).unwrap();
        let w = [0.3, -0.2, 1.1];
        let (v, g) = causal_log_joint(&w, &x, &y, &spec).unwrap();
        let mut g2 = [0.0; 3];
        let v2 = target.log_density_grad(&w, &mut g2);
        assert!((v - v2).abs() < 1e-9);
        for j in 0..3 {
            assert!((g[j] - g2[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_form_reference_values() {
        let spec = CausalModelSpec::default();
        let zero_row = DMatrix::zeros(1, 1);
        assert!((causal_evidence_closed_form(&zero_row, &[0.0], &spec).unwrap() + 0.918_938_5).abs() < 1e-7);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!((causal_evidence_closed_form(&one, &[0.0], &spec).unwrap() + 1.265_512_1).abs() < 1e-7);
        assert!(matches!(
            causal_evidence_closed_form(&DMatrix::zeros(0, 1), &[], &spec),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn closed_form_matches_dense_and_quadrature() {
        for seed in 0..5 {
            let (x, y) = random_instance(2, 1, 100 + seed);
            let spec = CausalModelSpec { sigma_x: 1.0, sigma_w: 1.2, sigma_y: 0.9 };
            let cf = causal_evidence_closed_form(&x, &y, &spec).unwrap();
            assert!((cf - dense_evidence(&x, &y, &spec)).abs() < 1e-10);
            let quad = log_quadrature_1d(
                |w| causal_log_joint(&[w], &x, &y, &spec).unwrap().0,
                -12.0,
                12.0,
                128,
            )
            .unwrap();
            assert!((cf - quad).abs() < 1e-6, "{cf} vs {quad}");
        }
        let (x, y) = random_instance(40, 4, 9);
        let spec = CausalModelSpec::default();
        assert!((causal_evidence_closed_form(&x, &y, &spec).unwrap() - dense_evidence(&x, &y, &spec)).abs() < 1e-8);
    }

    #[test]
    fn code_length_x_values() {
        let z = DMatrix::zeros(2, 2);
        assert!((code_length_x(&z, 1.0) - 3.675_754_1).abs() < 1e-7);
        let (x, _) = random_instance(7, 2, 6);
        let doubled = DMatrix::from_fn(14, 2, |i, j| x[(i % 7, j)]);
        assert!((code_length_x(&doubled, 1.0) - 2.0 * code_length_x(&x, 1.0)).abs() < 1e-10);
    }

    #[test]
    fn code_length_x_of_standardized_data() {
        let (x, _) = random_instance(200, 3, 7);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|j| crate::tabular::standardize_column(x.column(j).as_slice()).unwrap().0)
            .collect();
        let xs = DMatrix::from_fn(200, 3, |i, j| cols[j][i]);
        let expected = 600.0 * (0.5 * LN_2PI + 0.5);
        assert!((code_length_x(&xs, 1.0) - expected).abs() < 0.05 * expected);
    }

    #[test]
    fn l_causal_methods_bound_each_other() {
        let (x, y) = random_instance(50, 3, 8);
        let spec = CausalModelSpec::default();
        let cfg = FitConfig { seed: 3, ..FitConfig::default() };
        let cf = l_causal(&x, &y, &spec, EvidenceMethod::ClosedForm, Family::FullRank, &cfg).unwrap();
        let vi = l_causal(&x, &y, &spec, EvidenceMethod::Advi, Family::FullRank, &cfg).unwrap();
        assert!(cf.nats <= vi.nats + 3.0 * vi.se);
        assert!((cf.nats - vi.nats).abs() < 0.5);
        assert!(vi.fit.is_some());
        let empty = l_causal(&DMatrix::zeros(0, 3), &[], &spec, EvidenceMethod::ClosedForm, Family::FullRank, &cfg);
        assert!(matches!(empty, Err(Error::Precondition(_))));
    }

    proptest! {
        #[test]
        fn closed_form_is_row_permutation_invariant(seed in 0u64..10_000) {
            use rand::seq::SliceRandom;
            let (x, y) = random_instance(12, 3, seed);
            let mut perm: Vec<usize> = (0..12).collect();
            perm.shuffle(&mut crate::seed::rng(seed + 1));
            let xp = DMatrix::from_fn(12, 3, |i, j| x[(perm[i], j)]);
            let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let spec = CausalModelSpec::default();
            let a = causal_evidence_closed_form(&x, &y, &spec).unwrap();
            let b = causal_evidence_closed_form(&xp, &yp, &spec).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
