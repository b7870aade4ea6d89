//! Gauss-Hermite quadrature via Golub-Welsch (eigendecomposition of the
//! Jacobi matrix). Nodes/weights are for the physicists' weight exp(-x^2);
//! [`GaussHermite::expect_normal`] rescales them to Gaussian expectations.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds the n-point rule. Exact for polynomials of degree 2n - 1
    /// against exp(-x^2).
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be positive");
        if n == 1 {
            return Self {
                nodes: vec![0.0],
                weights: vec![PI.sqrt()],
            };
        }
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            let b = (i as f64 / 2.0).sqrt();
            jacobi[(i - 1, i)] = b;
            jacobi[(i, i - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let node = eig.eigenvalues[i];
                let v0 = eig.eigenvectors[(0, i)];
                (node, PI.sqrt() * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Expectation of `f` under a normal with the given mean and sd.
    pub fn expect_normal(&self, mean: f64, sd: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        let norm = 1.0 / PI.sqrt();
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * norm * f(mean + scale * t);
        }
        acc
    }

    /// Log of the expectation of `exp(log_f)` under a normal, computed with
    /// the max-shift trick so sharp integrands do not underflow.
    pub fn log_expect_normal(&self, mean: f64, sd: f64, mut log_f: impl FnMut(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| (w / PI.sqrt()).ln() + log_f(mean + scale * t))
            .collect();
        crate::numeric::special::log_sum_exp(&terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for &n in &[1, 2, 5, 21, 61] {
            let gh = GaussHermite::new(n);
            let total: f64 = gh.weights.iter().sum();
            assert_relative_eq!(total, PI.sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn normal_moments_are_exact() {
        let gh = GaussHermite::new(21);
        assert_relative_eq!(gh.expect_normal(0.0, 1.0, |_| 1.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(gh.expect_normal(0.0, 1.0, |x| x * x), 1.0, epsilon = 1e-11);
        assert_relative_eq!(gh.expect_normal(0.0, 1.0, |x| x.powi(4)), 3.0, epsilon = 1e-10);
        // Shifted and scaled: E[x^2] = mean^2 + sd^2.
        assert_relative_eq!(gh.expect_normal(2.0, 3.0, |x| x * x), 13.0, epsilon = 1e-9);
    }

    #[test]
    fn nodes_are_symmetric() {
        let gh = GaussHermite::new(21);
        for i in 0..21 {
            assert_relative_eq!(gh.nodes[i], -gh.nodes[20 - i], epsilon = 1e-10);
        }
        assert_relative_eq!(gh.nodes[10], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn log_expect_handles_sharp_integrands() {
        // E[exp(-500 (x - 0.2)^2)] under N(0.2, 0.05): analytic via Gaussian
        // convolution: 1 / sqrt(1 + 2 * 500 * 0.05^2) .
        let gh = GaussHermite::new(61);
        let got = gh.log_expect_normal(0.2, 0.05, |x| -500.0 * (x - 0.2) * (x - 0.2));
        let want = -0.5 * (1.0_f64 + 1000.0 * 0.0025).ln();
        assert_relative_eq!(got, want, epsilon = 1e-6);
    }
}
