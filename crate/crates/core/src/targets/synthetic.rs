//! Two-dimensional synthetic targets and the flat (free-particle) density.

use nalgebra::DMatrix;

use super::{log_sum_exp, LogDensity};
use crate::error::{invalid, Result};
use crate::precision::Real;

/// Banana: `y ~ N(0, diag(sigma1^2, 1))`, `x = (y1, y2 + b y1^2 - b sigma1^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Banana {
    pub b: f64,
    pub sigma1_sq: f64,
}

impl Banana {
    pub fn new(b: f64, sigma1_sq: f64) -> Result<Self> {
        if !(sigma1_sq > 0.0) || !b.is_finite() {
            return Err(invalid("banana needs sigma1_sq > 0 and finite b"));
        }
        Ok(Self { b, sigma1_sq })
    }

    fn y2<T: Real>(&self, x: &[T]) -> T {
        x[1].clone() - x[0].square() * self.b + self.b * self.sigma1_sq
    }
}

impl Default for Banana {
    fn default() -> Self {
        Self {
            b: 0.1,
            sigma1_sq: 100.0,
        }
    }
}

impl LogDensity for Banana {
    fn dim(&self) -> usize {
        2
    }

    fn name(&self) -> &str {
        "banana"
    }

    fn log_density<T: Real>(&self, x: &[T]) -> T {
        let y2 = self.y2(x);
        let ln_2pi = (x[0].pi() * 2.0).ln();
        let half_ln_s = x[0].constant(self.sigma1_sq).ln() * 0.5;
        -(x[0].square() / self.sigma1_sq) * 0.5 - y2.square() * 0.5 - ln_2pi - half_ln_s
    }

    fn grad_log_density<T: Real>(&self, x: &[T]) -> Vec<T> {
        let y2 = self.y2(x);
        let g0 = x[0].clone() * (y2.clone() * (2.0 * self.b)) - x[0].clone() / self.sigma1_sq;
        vec![g0, -y2]
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let y2 = self.y2(x);
        let b = self.b;
        let h11 = -1.0 / self.sigma1_sq + 2.0 * b * y2 - 4.0 * b * b * x[0] * x[0];
        let h12 = 2.0 * b * x[0];
        DMatrix::from_row_slice(2, 2, &[h11, h12, h12, -1.0])
    }
}

/// Equal-weight four-component cross-shaped Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Cross {
    /// (mean, std) per component.
    pub components: Vec<([f64; 2], [f64; 2])>,
}

impl Cross {
    pub fn new() -> Self {
        let (n, w) = (0.15, 1.0);
        Self {
            components: vec![
                ([0.0, 2.0], [n, w]),
                ([-2.0, 0.0], [w, n]),
                ([2.0, 0.0], [w, n]),
                ([0.0, -2.0], [n, w]),
            ],
        }
    }

    fn component_terms<T: Real>(&self, x: &[T]) -> Vec<T> {
        let ln_2pi = (x[0].pi() * 2.0).ln();
        self.components
            .iter()
            .map(|(m, s)| {
                let z0 = (x[0].clone() - m[0]) / s[0];
                let z1 = (x[1].clone() - m[1]) / s[1];
                let ln_s = x[0].constant(s[0] * s[1]).ln();
                -(z0.square() + z1.square()) * 0.5 - ln_s - &ln_2pi
            })
            .collect()
    }
}

impl Default for Cross {
    fn default() -> Self {
        Self::new()
    }
}

impl LogDensity for Cross {
    fn dim(&self) -> usize {
        2
    }

    fn name(&self) -> &str {
        "cross"
    }

    fn log_density<T: Real>(&self, x: &[T]) -> T {
        let terms = self.component_terms(x);
        let ln_k = x[0].constant(self.components.len() as f64).ln();
        log_sum_exp(&terms) - ln_k
    }

    fn grad_log_density<T: Real>(&self, x: &[T]) -> Vec<T> {
        let terms = self.component_terms(x);
        let lse = log_sum_exp(&terms);
        let mut g = vec![x[0].zero_like(), x[0].zero_like()];
        for (t, (m, s)) in terms.iter().zip(&self.components) {
            let w = (t.clone() - &lse).exp();
            for i in 0..2 {
                g[i] -= w.clone() * ((x[i].clone() - m[i]) / (s[i] * s[i]));
            }
        }
        g
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let terms = self.component_terms(x);
        let lse = log_sum_exp(&terms);
        let mut h = DMatrix::zeros(2, 2);
        let mut g = [0.0; 2];
        for (t, (m, s)) in terms.iter().zip(&self.components) {
            let w = (t - lse).exp();
            let gk = [-(x[0] - m[0]) / (s[0] * s[0]), -(x[1] - m[1]) / (s[1] * s[1])];
            for i in 0..2 {
                g[i] += w * gk[i];
                for j in 0..2 {
                    h[(i, j)] += w * gk[i] * gk[j];
                }
                h[(i, i)] -= w / (s[i] * s[i]);
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                h[(i, j)] -= g[i] * g[j];
            }
        }
        h
    }
}

/// Constant log-density; leapfrog on it is free-particle motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Flat {
    pub dim: usize,
}

impl LogDensity for Flat {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        "flat"
    }

    fn log_density<T: Real>(&self, x: &[T]) -> T {
        x[0].zero_like()
    }

    fn grad_log_density<T: Real>(&self, x: &[T]) -> Vec<T> {
        x.iter().map(|v| v.zero_like()).collect()
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{fd_hessian, gradient_fd_mismatch};
    use approx::assert_relative_eq;

    #[test]
    fn banana_reference_value() {
        let t = Banana::default();
        assert_relative_eq!(t.log_density(&[0.0, -10.0]), -4.140462, epsilon = 1e-6);
        let g = t.grad_log_density(&[0.0, -10.0]);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn banana_b_zero_is_gaussian() {
        let t = Banana::new(0.0, 100.0).unwrap();
        let g = crate::targets::DiagGaussian::new(vec![0.0, 0.0], vec![10f64.ln(), 0.0]).unwrap();
        for x in [[1.0, 2.0], [-7.0, 0.3], [15.0, -4.0]] {
            assert_relative_eq!(t.log_density(&x), g.log_density(&x), epsilon = 1e-12);
        }
        assert!(Banana::new(0.1, 0.0).is_err());
    }

    #[test]
    fn cross_reference_value_and_symmetry() {
        let t = Cross::new();
        assert_relative_eq!(t.log_density(&[0.0, 2.0]).exp(), 0.265348, epsilon = 1e-6);
        assert_relative_eq!(t.log_density(&[1.0, 1.0]), t.log_density(&[-1.0, -1.0]));
    }

    #[test]
    fn cross_integrates_to_one() {
        let t = Cross::new();
        let n = 1601;
        let h = 16.0 / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [-8.0 + i as f64 * h, -8.0 + j as f64 * h];
                let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                total += wi * wj * t.log_density(&x).exp();
            }
        }
        assert!((total * h * h - 1.0).abs() < 1e-3, "{}", total * h * h);
    }

    #[test]
    fn analytic_hessians_match_differences() {
        let b = Banana::default();
        let c = Cross::new();
        for x in [[0.3, -1.2], [5.0, 2.0], [-0.4, 0.1]] {
            let (ha, hf) = (b.hessian(&x), fd_hessian(&b, &x));
            assert!((ha - hf).abs().max() < 1e-5);
            let (ha, hf) = (c.hessian(&x), fd_hessian(&c, &x));
            assert!((ha - &hf).abs().max() < 1e-4 * (1.0 + hf.abs().max()));
            assert!(gradient_fd_mismatch(&b, &x) < 1e-5);
            assert!(gradient_fd_mismatch(&c, &x) < 1e-5);
        }
    }
}
