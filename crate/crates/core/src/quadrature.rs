//! Fixed-rule Gauss–Legendre quadrature, used as an integration oracle for
//! low-dimensional marginal likelihoods.

use crate::error::{Error, Result};

pub const MIN_NODES: usize = 32;

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn on_interval(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (mid + half * x, half * w))
    }
}

/// (P_n(x), P_n'(x)) via the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// Axis-aligned integration rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Rect {
    pub fn square(lo: f64, hi: f64) -> Self {
        Rect { x: (lo, hi), y: (lo, hi) }
    }
}

fn check_nodes(nodes_per_axis: usize) -> Result<()> {
    if nodes_per_axis < MIN_NODES {
        return Err(Error::Precondition(format!(
            "quadrature needs at least {MIN_NODES} nodes per axis, got {nodes_per_axis}"
        )));
    }
    Ok(())
}

pub fn quadrature_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, nodes: usize) -> Result<f64> {
    check_nodes(nodes)?;
    let rule = GaussLegendre::new(nodes);
    let mut total = 0.0;
    for (x, w) in rule.on_interval(a, b) {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::Oracle(x, f64::NAN));
        }
        total += w * v;
    }
    Ok(total)
}

/// Tensor-product Gauss–Legendre estimate of ∫∫ f over `bounds`.
pub fn grid_quadrature_2d(
    f: impl Fn(f64, f64) -> f64,
    bounds: Rect,
    nodes_per_axis: usize,
) -> Result<f64> {
    check_nodes(nodes_per_axis)?;
    let rule = GaussLegendre::new(nodes_per_axis);
    let ys: Vec<(f64, f64)> = rule.on_interval(bounds.y.0, bounds.y.1).collect();
    let mut total = 0.0;
    for (x, wx) in rule.on_interval(bounds.x.0, bounds.x.1) {
        for &(y, wy) in &ys {
            let v = f(x, y);
            if !v.is_finite() {
                return Err(Error::Oracle(x, y));
            }
            total += wx * wy * v;
        }
    }
    Ok(total)
}

/// log ∫ exp(log_f) over [a, b], accumulated with log-sum-exp.
pub fn log_quadrature_1d(log_f: impl Fn(f64) -> f64, a: f64, b: f64, nodes: usize) -> Result<f64> {
    check_nodes(nodes)?;
    let rule = GaussLegendre::new(nodes);
    let mut terms = Vec::with_capacity(nodes);
    for (x, w) in rule.on_interval(a, b) {
        let v = log_f(x);
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::Oracle(x, f64::NAN));
        }
        terms.push(v + w.ln());
    }
    Ok(log_sum_exp(&terms))
}

/// log ∫∫ exp(log_f) over `bounds`, accumulated with log-sum-exp.
pub fn log_grid_quadrature_2d(
    log_f: impl Fn(f64, f64) -> f64,
    bounds: Rect,
    nodes_per_axis: usize,
) -> Result<f64> {
    check_nodes(nodes_per_axis)?;
    let rule = GaussLegendre::new(nodes_per_axis);
    let ys: Vec<(f64, f64)> = rule.on_interval(bounds.y.0, bounds.y.1).collect();
    let mut terms = Vec::with_capacity(nodes_per_axis * nodes_per_axis);
    for (x, wx) in rule.on_interval(bounds.x.0, bounds.x.1) {
        for &(y, wy) in &ys {
            let v = log_f(x, y);
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::Oracle(x, y));
            }
            terms.push(v + (wx * wy).ln());
        }
    }
    Ok(log_sum_exp(&terms))
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::normal_logpdf;

    fn std_normal(x: f64) -> f64 {
        normal_logpdf(x, 0.0, 1.0).exp()
    }

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(5);
        let w: f64 = rule.weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
        // degree 9 is exact for 5 nodes: ∫ x^8 over [-1,1] = 2/9
        let x8: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(8)).sum();
        assert!((x8 - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_normalization() {
        let v = grid_quadrature_2d(|x, y| std_normal(x) * std_normal(y), Rect::square(-8.0, 8.0), 64).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn gaussian_second_moment() {
        let v = grid_quadrature_2d(|x, y| x * x * std_normal(x) * std_normal(y), Rect::square(-8.0, 8.0), 64)
            .unwrap();
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn doubling_nodes_is_converged() {
        let f = |x: f64, y: f64| (0.3 * x).cos() * std_normal(x) * std_normal(y - 0.5) * (1.0 + 0.1 * y * y);
        let a = grid_quadrature_2d(f, Rect::square(-8.0, 8.0), 64).unwrap();
        let b = grid_quadrature_2d(f, Rect::square(-8.0, 8.0), 128).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn log_space_matches_linear_space() {
        let bounds = Rect { x: (-6.0, 7.0), y: (-5.0, 5.0) };
        let lin = grid_quadrature_2d(|x, y| std_normal(x - 0.5) * std_normal(y), bounds, 48).unwrap();
        let log = log_grid_quadrature_2d(|x, y| normal_logpdf(x, 0.5, 1.0) + normal_logpdf(y, 0.0, 1.0), bounds, 48)
            .unwrap();
        assert!((lin.ln() - log).abs() < 1e-12);
        let one = log_quadrature_1d(|x| normal_logpdf(x, 0.0, 2.0), -20.0, 20.0, 64).unwrap();
        assert!(one.abs() < 1e-9);
    }

    #[test]
    fn too_few_nodes_and_non_finite_integrands() {
        assert!(matches!(
            grid_quadrature_2d(|_, _| 1.0, Rect::square(0.0, 1.0), 8),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            grid_quadrature_2d(|x, _| 1.0 / x.signum().min(0.0), Rect::square(0.0, 1.0), 32),
            Err(Error::Oracle(..))
        ));
    }
}
