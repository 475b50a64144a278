//! Mean-field Gaussian reference fit by stochastic gradient ascent on the
//! reparameterized single-sample ELBO.

use super::{DiagGaussian, LogDensity};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Starting point; standard normal when absent.
    pub init: Option<DiagGaussian>,
    /// Fraction of final iterates averaged into the returned parameters.
    pub tail_average: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            step_size: 1e-3,
            init: None,
            tail_average: 0.5,
        }
    }
}

/// Fit `N(mu, diag(exp(2 log_std)))` to `target`.
pub fn fit_meanfield_reference<P: LogDensity + ?Sized>(
    target: &P,
    cfg: &FitConfig,
    rng: &mut RngStream,
) -> Result<DiagGaussian> {
    let d = target.dim();
    let init = cfg.init.clone().unwrap_or_else(|| DiagGaussian::standard(d));
    if init.mean.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "initial reference has dimension {}, target {d}",
            init.mean.len()
        )));
    }
    let (mut mu, mut log_std) = (init.mean, init.log_std);
    let avg_from = cfg.steps - ((cfg.steps as f64 * cfg.tail_average) as usize).min(cfg.steps);
    let mut mu_avg = vec![0.0; d];
    let mut ls_avg = vec![0.0; d];
    let mut count = 0usize;
    for it in 0..cfg.steps {
        let eps = rng.normal_vec(d);
        let x: Vec<f64> = (0..d).map(|i| mu[i] + log_std[i].exp() * eps[i]).collect();
        let g = target.grad_log_density(&x);
        for i in 0..d {
            let sig_eps = log_std[i].exp() * eps[i];
            mu[i] += cfg.step_size * g[i];
            // Entropy term contributes +1 per log-std coordinate.
            log_std[i] += cfg.step_size * (g[i] * sig_eps + 1.0);
        }
        if mu.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: it });
        }
        if it >= avg_from {
            for i in 0..d {
                mu_avg[i] += mu[i];
                ls_avg[i] += log_std[i];
            }
            count += 1;
        }
    }
    if count == 0 {
        return DiagGaussian::new(mu, log_std);
    }
    let c = count as f64;
    DiagGaussian::new(
        mu_avg.iter().map(|v| v / c).collect(),
        ls_avg.iter().map(|v| v / c).collect(),
    )
}
