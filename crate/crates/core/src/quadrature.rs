//! Gauss-Hermite quadrature and stable standard-normal helpers.
//!
//! Rules are computed with the Golub-Welsch algorithm (eigenvalues of the
//! symmetric tridiagonal Jacobi matrix of the Hermite recurrence) and cached
//! per node count. Nodes and weights are stored in "probabilist" form so
//! that `E[h(Z)] ~ sum_i weight_i * h(node_i)` for `Z ~ N(0, 1)` with the
//! weights summing to one.

use nalgebra::DMatrix;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// A quadrature rule for expectations against the standard normal density.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// `E[h(Z)]` for `Z ~ N(0,1)`.
    pub fn expect(&self, mut h: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * h(*z))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn compute_rule(n: usize) -> GaussHermite {
    assert!(n >= 1, "quadrature rule needs at least one node");
    // Jacobi matrix for physicists' Hermite: zero diagonal, off-diagonal
    // sqrt(i/2) for i = 1..n.
    let mut jacobi = DMatrix::zeros(n, n);
    for i in 1..n {
        let v = (i as f64 / 2.0).sqrt();
        jacobi[(i - 1, i)] = v;
        jacobi[(i, i - 1)] = v;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let first = eig.eigenvectors[(0, i)];
            // physicists' weight sqrt(pi) * v0^2; normalized below so the
            // probabilist weights sum to one.
            (x, first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite eigenvalues"));
    let total: f64 = pairs.iter().map(|(_, w)| w).sum();
    let sqrt2 = std::f64::consts::SQRT_2;
    GaussHermite {
        nodes: pairs.iter().map(|(x, _)| sqrt2 * x).collect(),
        weights: pairs.iter().map(|(_, w)| w / total).collect(),
    }
}

/// Cached Gauss-Hermite rule with `n` nodes.
pub fn gauss_hermite(n: usize) -> Arc<GaussHermite> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| Arc::new(compute_rule(n)))
        .clone()
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Log of the standard normal density.
pub fn normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Log of the standard normal CDF, stable far into the lower tail.
pub fn normal_ln_cdf(x: f64) -> f64 {
    if x > -36.0 {
        let c = normal_cdf(x);
        if c > 0.0 {
            return c.ln();
        }
    }
    // Asymptotic expansion of Mills' ratio for the deep lower tail:
    // Phi(x) ~ phi(x)/|x| * (1 - 1/x^2 + 3/x^4 - 15/x^6).
    let inv2 = 1.0 / (x * x);
    let series = 1.0 - inv2 * (1.0 - 3.0 * inv2 * (1.0 - 5.0 * inv2));
    normal_ln_pdf(x) - (-x).ln() + series.ln()
}

/// `log(sum(exp(v)))` without overflow; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rule_moments_match_standard_normal() {
        for n in [8, 16, 32, 64] {
            let rule = gauss_hermite(n);
            assert_eq!(rule.len(), n);
            let m0: f64 = rule.weights.iter().sum();
            let m1 = rule.expect(|z| z);
            let m2 = rule.expect(|z| z * z);
            let m4 = rule.expect(|z| z * z * z * z);
            assert_relative_eq!(m0, 1.0, epsilon = 1e-12);
            assert_relative_eq!(m1, 0.0, epsilon = 1e-12);
            assert_relative_eq!(m2, 1.0, epsilon = 1e-10);
            assert_relative_eq!(m4, 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn expectation_of_cdf_has_closed_form() {
        // E[Phi(Z + c)] = Phi(c / sqrt(2))
        let rule = gauss_hermite(64);
        for c in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            let approx_v = rule.expect(|z| normal_cdf(z + c));
            let exact = normal_cdf(c / std::f64::consts::SQRT_2);
            assert_relative_eq!(approx_v, exact, epsilon = 1e-10);
        }
    }

    #[test]
    fn ln_cdf_matches_direct_in_moderate_range() {
        for x in [-8.0, -3.0, -1.0, 0.0, 1.5, 6.0] {
            assert_relative_eq!(
                normal_ln_cdf(x),
                normal_cdf(x).ln(),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn ln_cdf_deep_tail_is_finite_and_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..40 {
            let x = -200.0 + 4.0 * i as f64;
            let v = normal_ln_cdf(x);
            assert!(v.is_finite());
            assert!(v > prev, "ln Phi must increase: {v} after {prev}");
            prev = v;
        }
        // spot check against the asymptotic value at -40
        let x: f64 = -40.0;
        let approx_v = normal_ln_cdf(x);
        let crude = -0.5 * x * x - LN_SQRT_2PI - (40.0f64).ln();
        assert!((approx_v - crude).abs() < 0.01);
    }

    #[test]
    fn log_sum_exp_basics() {
        assert_relative_eq!(
            log_sum_exp(&[0.0, 0.0]),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert_relative_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + std::f64::consts::LN_2);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}
