//! Target log-densities, the diagonal Gaussian reference, datasets, and the
//! mean-field reference fit.

mod dataset;
mod fit;
mod regression;
mod synthetic;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::precision::Real;
use crate::rng::RngStream;

pub use dataset::{load_regression_dataset, parse_regression_dataset, Dataset, DatasetSpec};
pub use fit::{fit_meanfield_reference, FitConfig};
pub use regression::{LinReg, LogReg};
pub use synthetic::{Banana, Cross, Flat};

/// Unnormalized log-density with gradient, evaluable at either precision.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;
    fn name(&self) -> &str;
    fn log_density<T: Real>(&self, x: &[T]) -> T;
    fn grad_log_density<T: Real>(&self, x: &[T]) -> Vec<T>;

    /// Hessian of the log-density; central differences of the gradient
    /// unless overridden.
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        fd_hessian(self, x)
    }

    /// `H v`, used by the Jacobian tangent propagation.
    fn hessian_vector(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let h = self.hessian(x);
        (0..x.len())
            .map(|i| (0..x.len()).map(|j| h[(i, j)] * v[j]).sum())
            .collect()
    }
}

/// Finite-difference Hessian with step `1e-6 (1 + |x|)`, symmetrized.
pub fn fd_hessian<P: LogDensity + ?Sized>(p: &P, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let h = 1e-6 * (1.0 + norm(x));
    let mut out = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    for j in 0..d {
        xp[j] = x[j] + h;
        let gp = p.grad_log_density(&xp);
        xp[j] = x[j] - h;
        let gm = p.grad_log_density(&xp);
        xp[j] = x[j];
        for i in 0..d {
            out[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    (&out + out.transpose()) * 0.5
}

/// Largest relative mismatch between the analytic gradient and central
/// differences of the log-density, `step = 1e-6 (1 + |x|)`.
pub fn gradient_fd_mismatch<P: LogDensity + ?Sized>(p: &P, x: &[f64]) -> f64 {
    let g = p.grad_log_density(x);
    let h = 1e-6 * (1.0 + norm(x));
    let scale = norm(&g).max(1.0);
    let mut xp = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = p.log_density(&xp);
        xp[i] = x[i] - h;
        let fm = p.log_density(&xp);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / scale);
    }
    worst
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Log-sum-exp of values at a common precision.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let mut m = values[0].clone();
    for v in &values[1..] {
        if *v > m {
            m = v.clone();
        }
    }
    if !m.is_finite() {
        return m;
    }
    let mut s = m.zero_like();
    for v in values {
        s += (v.clone() - &m).exp();
    }
    s.ln() + m
}

/// Mean-field Gaussian `N(mean, diag(exp(2 log_std)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() || mean.is_empty() {
            return Err(invalid(format!(
                "mean has {} entries, log_std has {}",
                mean.len(),
                log_std.len()
            )));
        }
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(invalid("Gaussian parameters must be finite"));
        }
        Ok(Self { mean, log_std })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            log_std: vec![0.0; d],
        }
    }

    /// Isotropic `N(0, sigma^2 I)`.
    pub fn isotropic(d: usize, sigma: f64) -> Self {
        Self {
            mean: vec![0.0; d],
            log_std: vec![sigma.ln(); d],
        }
    }

    /// Product with a standard-normal momentum block of the same dimension.
    pub fn augmented(&self) -> Self {
        let d = self.mean.len();
        let mut mean = self.mean.clone();
        mean.resize(2 * d, 0.0);
        let mut log_std = self.log_std.clone();
        log_std.resize(2 * d, 0.0);
        Self { mean, log_std }
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, l)| m + l.exp() * rng.normal())
            .collect()
    }
}

impl LogDensity for DiagGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn name(&self) -> &str {
        "gaussian"
    }

    fn log_density<T: Real>(&self, x: &[T]) -> T {
        let mut acc = x[0].zero_like();
        for ((xi, m), l) in x.iter().zip(&self.mean).zip(&self.log_std) {
            let z = (xi.clone() - *m) * (-l).exp();
            acc -= z.square() * 0.5;
        }
        let half_ln_2pi = (x[0].pi() * 2.0).ln() * 0.5;
        let mut norm_c = half_ln_2pi * self.mean.len() as f64;
        for l in &self.log_std {
            norm_c += *l;
        }
        acc - norm_c
    }

    fn grad_log_density<T: Real>(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.log_std)
            .map(|((xi, m), l)| -((xi.clone() - *m) * (-2.0 * l).exp()))
            .collect()
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            x.len(),
            self.log_std.iter().map(|l| -(-2.0 * l).exp()),
        ))
    }
}

/// Closed set of built-in targets.
#[derive(Debug, Clone)]
pub enum Target {
    Gaussian(DiagGaussian),
    Banana(Banana),
    Cross(Cross),
    LinReg(LinReg),
    LogReg(LogReg),
    Flat(Flat),
}

macro_rules! dispatch {
    ($self:expr, $t:ident => $body:expr) => {
        match $self {
            Target::Gaussian($t) => $body,
            Target::Banana($t) => $body,
            Target::Cross($t) => $body,
            Target::LinReg($t) => $body,
            Target::LogReg($t) => $body,
            Target::Flat($t) => $body,
        }
    };
}

impl LogDensity for Target {
    fn dim(&self) -> usize {
        dispatch!(self, t => t.dim())
    }
    fn name(&self) -> &str {
        dispatch!(self, t => t.name())
    }
    fn log_density<T: Real>(&self, x: &[T]) -> T {
        dispatch!(self, t => t.log_density(x))
    }
    fn grad_log_density<T: Real>(&self, x: &[T]) -> Vec<T> {
        dispatch!(self, t => t.grad_log_density(x))
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        dispatch!(self, t => t.hessian(x))
    }
}

impl From<DiagGaussian> for Target {
    fn from(t: DiagGaussian) -> Self {
        Target::Gaussian(t)
    }
}
impl From<Banana> for Target {
    fn from(t: Banana) -> Self {
        Target::Banana(t)
    }
}
impl From<Cross> for Target {
    fn from(t: Cross) -> Self {
        Target::Cross(t)
    }
}
impl From<LinReg> for Target {
    fn from(t: LinReg) -> Self {
        Target::LinReg(t)
    }
}
impl From<LogReg> for Target {
    fn from(t: LogReg) -> Self {
        Target::LogReg(t)
    }
}
impl From<Flat> for Target {
    fn from(t: Flat) -> Self {
        Target::Flat(t)
    }
}

/// Default flow settings per target: (leapfrog steps, step size).
pub fn default_leapfrog(name: &str) -> Option<(usize, f64)> {
    match name {
        "banana" => Some((200, 0.02)),
        "cross" => Some((60, 0.005)),
        "linreg" => Some((40, 0.0006)),
        "logreg" => Some((50, 0.002)),
        _ => None,
    }
}

/// Banana with `b = 0.1`, `sigma1^2 = 100`.
pub fn banana_target(b: f64, sigma1_sq: f64) -> Result<Banana> {
    Banana::new(b, sigma1_sq)
}

pub fn cross_target() -> Cross {
    Cross::new()
}

pub fn linreg_target(data: &Dataset) -> Result<LinReg> {
    LinReg::new(data)
}

pub fn logreg_target(data: &Dataset) -> Result<LogReg> {
    LogReg::new(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::HALF_LN_2PI;

    #[test]
    fn gaussian_density_and_gradient() {
        let g = DiagGaussian::new(vec![1.0, -2.0], vec![0.0, 0.5f64.ln()]).unwrap();
        let x = [1.0, -2.0];
        let expected = -2.0 * HALF_LN_2PI - 0.5f64.ln();
        assert!((g.log_density(&x) - expected).abs() < 1e-14);
        assert!(gradient_fd_mismatch(&g, &[0.3, 0.7]) < 1e-7);
        assert!(DiagGaussian::new(vec![0.0], vec![]).is_err());
    }

    #[cfg(feature = "extended")]
    #[test]
    fn gaussian_extended_matches_f64() {
        let g = DiagGaussian::new(vec![0.5, 0.1], vec![0.2, -0.3]).unwrap();
        let x = [0.25, -1.5];
        let ext = crate::precision::promote(&x, crate::PrecisionSpec::extended(256).unwrap()).unwrap();
        let a = g.log_density(&x);
        let b = g.log_density(&ext).to_f64();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let w = [-1e4, 0.0];
        assert!(log_sum_exp(&w).abs() < 1e-12);
    }

    #[test]
    fn augmented_reference_shape() {
        let g = DiagGaussian::new(vec![1.0, 2.0], vec![0.1, 0.2]).unwrap().augmented();
        assert_eq!(g.mean, vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(g.log_std, vec![0.1, 0.2, 0.0, 0.0]);
    }
}
