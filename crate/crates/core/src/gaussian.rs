//! Dense Gaussian densities on Cholesky factors.
//!
//! All log densities are in nats.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// ln(2π)
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

const SYMMETRY_TOL: f64 = 1e-10;
const JITTER_FACTOR: f64 = 1e-8;

/// Log density of a univariate normal.
#[inline]
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (LN_2PI + z * z) - sd.ln()
}

/// A symmetric positive-definite matrix together with its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    values: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jittered: bool,
}

impl SpdMatrix {
    /// Factorizes `values`. If the first attempt fails, `1e-8 * mean(diag)` is
    /// added to the diagonal and the factorization retried once.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Dimension(format!(
                "covariance is {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let d = values.nrows();
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        if let Some(chol) = Cholesky::new(values.clone()) {
            return Ok(SpdMatrix { values, chol, jittered: false });
        }
        let mean_diag = values.diagonal().mean();
        if !(mean_diag > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let mut jittered = values.clone();
        for i in 0..d {
            jittered[(i, i)] += JITTER_FACTOR * mean_diag;
        }
        let chol = Cholesky::new(jittered).ok_or(Error::NotPositiveDefinite)?;
        Ok(SpdMatrix { values, chol, jittered: true })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Lower-triangular Cholesky factor.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// True when the jitter fallback was needed to factorize.
    pub fn was_jittered(&self) -> bool {
        self.jittered
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// r⊤ A⁻¹ r via one triangular solve.
    pub fn inv_quad_form(&self, r: &DVector<f64>) -> f64 {
        let u = self
            .chol
            .l_dirty()
            .solve_lower_triangular(r)
            .expect("Cholesky factor has a positive diagonal");
        u.norm_squared()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

/// log|cov| from the Cholesky diagonal.
pub fn chol_logdet(cov: &SpdMatrix) -> f64 {
    cov.log_det()
}

/// log N(x; mean, cov).
pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &SpdMatrix) -> Result<f64> {
    let d = cov.dim();
    if x.len() != d || mean.len() != d {
        return Err(Error::Dimension(format!(
            "x has {} entries, mean {}, covariance is {d}x{d}",
            x.len(),
            mean.len()
        )));
    }
    let r = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    Ok(-0.5 * (d as f64 * LN_2PI + cov.log_det() + cov.inv_quad_form(&r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::seed::rng(seed);
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn logpdf_reference_values() {
        let one = SpdMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_abs_diff_eq!(mvn_logpdf(&[0.0], &[0.0], &one).unwrap(), -0.918_938_5, epsilon = 1e-7);

        let eye = SpdMatrix::new(DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(
            mvn_logpdf(&[0.0, 0.0], &[0.0, 0.0], &eye).unwrap(),
            -1.837_877_1,
            epsilon = 1e-7
        );

        let four = SpdMatrix::new(DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_abs_diff_eq!(mvn_logpdf(&[2.0], &[0.0], &four).unwrap(), -2.112_085_7, epsilon = 1e-7);
    }

    #[test]
    fn logdet_reference_values() {
        let i3 = SpdMatrix::new(DMatrix::identity(3, 3)).unwrap();
        assert_abs_diff_eq!(chol_logdet(&i3), 0.0, epsilon = 1e-15);
        let d2 = SpdMatrix::new(DMatrix::from_diagonal_element(2, 2, 2.0)).unwrap();
        assert_abs_diff_eq!(chol_logdet(&d2), 1.386_294_4, epsilon = 1e-7);
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        for (seed, d) in [(1, 5), (2, 12), (3, 50)] {
            let a = random_spd(d, seed);
            let eig_logdet: f64 = SymmetricEigen::new(a.clone()).eigenvalues.iter().map(|v| v.ln()).sum();
            let spd = SpdMatrix::new(a).unwrap();
            assert!((chol_logdet(&spd) - eig_logdet).abs() < 1e-8, "d = {d}");
        }
    }

    #[test]
    fn non_spd_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotPositiveDefinite)));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(SpdMatrix::new(asym), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn rank_deficient_gets_jittered_once() {
        // x x⊤ has rank one; the tiny diagonal pushes it just past failure.
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &x * x.transpose();
        let spd = SpdMatrix::new(m).unwrap();
        assert!(spd.was_jittered());
        assert!(spd.log_det().is_finite());
    }

    #[test]
    fn dimension_mismatch() {
        let eye = SpdMatrix::new(DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(mvn_logpdf(&[0.0], &[0.0, 0.0], &eye), Err(Error::Dimension(_))));
    }

    proptest! {
        #[test]
        fn diagonal_cov_is_sum_of_univariate(
            entries in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.1f64..4.0), 1..8)
        ) {
            let d = entries.len();
            let x: Vec<f64> = entries.iter().map(|e| e.0).collect();
            let mu: Vec<f64> = entries.iter().map(|e| e.1).collect();
            let cov = DMatrix::from_diagonal(&DVector::from_iterator(d, entries.iter().map(|e| e.2 * e.2)));
            let spd = SpdMatrix::new(cov).unwrap();
            let joint = mvn_logpdf(&x, &mu, &spd).unwrap();
            let sum: f64 = entries.iter().map(|e| normal_logpdf(e.0, e.1, e.2)).sum();
            prop_assert!((joint - sum).abs() < 1e-10);
        }

        #[test]
        fn logpdf_is_maximized_at_mean(seed in 0u64..500, k in 0usize..4, eps in prop_oneof![-1e-2f64..-1e-4, 1e-4f64..1e-2]) {
            let a = random_spd(4, seed);
            let spd = SpdMatrix::new(a).unwrap();
            let mean = [0.3, -1.0, 2.0, 0.5];
            let mut x = mean;
            x[k] += eps;
            prop_assert!(mvn_logpdf(&x, &mean, &spd).unwrap() < mvn_logpdf(&mean, &mean, &spd).unwrap());
        }
    }
}
