//! Bayesian linear and hierarchical logistic regression posteriors.

use nalgebra::DMatrix;

use super::{Dataset, LogDensity};
use crate::error::{invalid, Result};
use crate::precision::Real;

fn dot<T: Real>(row: &[f64], beta: &[T]) -> T {
    let mut acc = beta[0].zero_like();
    for (a, b) in row.iter().zip(beta) {
        acc += b.clone() * *a;
    }
    acc
}

/// `beta ~ N(0, I)`, `log sigma^2 ~ N(0, 1)`, `y ~ N(x^T beta, sigma^2)`.
/// Coordinates: coefficients (features then intercept), then `log sigma^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinReg {
    /// Design rows with the intercept column appended.
    pub design: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
    /// Coefficients including the intercept.
    pub num_coefs: usize,
}

impl LinReg {
    pub fn new(data: &Dataset) -> Result<Self> {
        let design = data
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.push(1.0);
                r
            })
            .collect();
        Ok(Self {
            design,
            responses: data.responses.clone(),
            num_coefs: data.num_features() + 1,
        })
    }

    fn coefs(&self) -> usize {
        self.num_coefs
    }
}

impl LogDensity for LinReg {
    fn dim(&self) -> usize {
        self.num_coefs + 1
    }

    fn name(&self) -> &str {
        "linreg"
    }

    fn log_density<T: Real>(&self, x: &[T]) -> T {
        let p = self.coefs();
        let (beta, s) = (&x[..p], &x[p]);
        let mut lp = -(s.square()) * 0.5;
        for b in beta {
            lp -= b.square() * 0.5;
        }
        if self.design.is_empty() {
            return lp;
        }
        let mut sse = s.zero_like();
        for (row, y) in self.design.iter().zip(&self.responses) {
            let r = -dot(row, beta) + *y;
            sse += r.square();
        }
        let n = self.design.len() as f64;
        lp - s.clone() * (0.5 * n) - sse * (-s.clone()).exp() * 0.5
    }

    fn grad_log_density<T: Real>(&self, x: &[T]) -> Vec<T> {
        let p = self.coefs();
        let (beta, s) = (&x[..p], &x[p]);
        let mut g: Vec<T> = beta.iter().map(|b| -b.clone()).collect();
        let mut gs = -s.clone();
        if self.design.is_empty() {
            g.push(gs);
            return g;
        }
        let inv_var = (-s.clone()).exp();
        let mut xtr = vec![s.zero_like(); p];
        let mut sse = s.zero_like();
        for (row, y) in self.design.iter().zip(&self.responses) {
            let r = -dot(row, beta) + *y;
            for (acc, a) in xtr.iter_mut().zip(row) {
                *acc += r.clone() * *a;
            }
            sse += r.square();
        }
        for (gi, t) in g.iter_mut().zip(xtr) {
            *gi += t * &inv_var;
        }
        gs += sse * &inv_var * 0.5 - 0.5 * self.design.len() as f64;
        g.push(gs);
        g
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let p = self.coefs();
        let d = p + 1;
        let (beta, s) = (&x[..p], x[p]);
        let inv_var = (-s).exp();
        let mut h = DMatrix::zeros(d, d);
        let mut sse = 0.0;
        for (row, y) in self.design.iter().zip(&self.responses) {
            let r = y - dot(row, beta);
            sse += r * r;
            for i in 0..p {
                h[(i, p)] -= inv_var * r * row[i];
                for j in 0..p {
                    h[(i, j)] -= inv_var * row[i] * row[j];
                }
            }
        }
        for i in 0..p {
            h[(i, i)] -= 1.0;
            h[(p, i)] = h[(i, p)];
        }
        h[(p, p)] = -1.0 - 0.5 * sse * inv_var;
        h
    }
}

/// `alpha ~ Gamma(shape 1, scale 0.01)`, `beta | alpha ~ N(0, I / alpha)`,
/// Bernoulli-logistic likelihood. Coordinates: coefficients then `log alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogReg {
    pub design: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
    pub num_coefs: usize,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
}

impl LogReg {
    pub fn new(data: &Dataset) -> Result<Self> {
        if data.responses.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(invalid("logistic regression responses must be 0 or 1"));
        }
        Ok(Self {
            design: data.rows.clone(),
            responses: data.responses.clone(),
            num_coefs: data.num_features(),
            gamma_shape: 1.0,
            gamma_scale: 0.01,
        })
    }

    fn coefs(&self) -> usize {
        self.num_coefs
    }
}

fn sigmoid<T: Real>(z: &T) -> T {
    if *z >= 0.0 {
        let e = (-z.clone()).exp();
        e.constant(1.0) / (e + 1.0)
    } else {
        let e = z.exp();
        e.clone() / (e + 1.0)
    }
}

fn softplus<T: Real>(z: &T) -> T {
    let pos = if *z > 0.0 { z.clone() } else { z.zero_like() };
    pos + (-z.abs()).exp().ln_1p()
}

impl LogDensity for LogReg {
    fn dim(&self) -> usize {
        self.coefs() + 1
    }

    fn name(&self) -> &str {
        "logreg"
    }

    fn log_density<T: Real>(&self, x: &[T]) -> T {
        let p = self.coefs();
        let (beta, a) = (&x[..p], &x[p]);
        let alpha = a.exp();
        // Gamma prior on alpha plus the log-Jacobian of alpha = exp(a).
        let mut lp = a.clone() * self.gamma_shape - alpha.clone() / self.gamma_scale;
        let mut sq = a.zero_like();
        for b in beta {
            sq += b.square();
        }
        lp += a.clone() * (0.5 * p as f64) - alpha * sq * 0.5;
        for (row, y) in self.design.iter().zip(&self.responses) {
            let z = dot(row, beta);
            lp += z.clone() * *y - softplus(&z);
        }
        lp
    }

    fn grad_log_density<T: Real>(&self, x: &[T]) -> Vec<T> {
        let p = self.coefs();
        let (beta, a) = (&x[..p], &x[p]);
        let alpha = a.exp();
        let mut g: Vec<T> = beta.iter().map(|b| -(b.clone() * &alpha)).collect();
        let mut sq = a.zero_like();
        for b in beta {
            sq += b.square();
        }
        for (row, y) in self.design.iter().zip(&self.responses) {
            let r = -sigmoid(&dot(row, beta)) + *y;
            for (gi, v) in g.iter_mut().zip(row) {
                *gi += r.clone() * *v;
            }
        }
        let ga = -(alpha.clone() / self.gamma_scale) + self.gamma_shape + 0.5 * p as f64 - alpha * sq * 0.5;
        g.push(ga);
        g
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let p = self.coefs();
        let (beta, a) = (&x[..p], x[p]);
        let alpha = a.exp();
        let mut h = DMatrix::zeros(p + 1, p + 1);
        for (row, _) in self.design.iter().zip(&self.responses) {
            let s = sigmoid(&dot(row, beta));
            let w = s * (1.0 - s);
            for i in 0..p {
                for j in 0..p {
                    h[(i, j)] -= w * row[i] * row[j];
                }
            }
        }
        let sq: f64 = beta.iter().map(|b| b * b).sum();
        for i in 0..p {
            h[(i, i)] -= alpha;
            h[(i, p)] = -alpha * beta[i];
            h[(p, i)] = -alpha * beta[i];
        }
        h[(p, p)] = -alpha / self.gamma_scale - 0.5 * alpha * sq;
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_rng;
    use crate::targets::{fd_hessian, gradient_fd_mismatch, DiagGaussian};

    fn synthetic(n: usize, p: usize, binary: bool, seed: u64) -> Dataset {
        let mut rng = make_rng(seed, 0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(p)).collect();
        let ys = rows
            .iter()
            .map(|r| {
                let z = r.iter().sum::<f64>() + 0.3 * rng.normal();
                if binary {
                    (z > 0.0) as u8 as f64
                } else {
                    z
                }
            })
            .collect();
        let names = (0..p).map(|i| format!("x{i}")).collect();
        Dataset::standardized(names, rows, ys, binary).unwrap()
    }

    #[test]
    fn dimensions_match_dataset_schemas() {
        assert_eq!(LinReg::new(&synthetic(30, 13, false, 1)).unwrap().dim(), 15);
        assert_eq!(LogReg::new(&synthetic(30, 8, true, 2)).unwrap().dim(), 9);
    }

    #[test]
    fn linreg_without_data_is_standard_normal() {
        let t = LinReg::new(&Dataset::empty(13)).unwrap();
        let g = DiagGaussian::standard(15);
        let mut rng = make_rng(3, 0);
        for _ in 0..5 {
            let x = rng.normal_vec(15);
            let diff = t.log_density(&x) - g.log_density(&x);
            // Equal up to the normalizing constant.
            assert!((diff - 15.0 * crate::special::HALF_LN_2PI).abs() < 1e-10);
        }
    }

    #[test]
    fn gradients_and_hessians_match_differences() {
        let lin = LinReg::new(&synthetic(40, 4, false, 4)).unwrap();
        let log = LogReg::new(&synthetic(40, 3, true, 5)).unwrap();
        let mut rng = make_rng(6, 0);
        for _ in 0..20 {
            let x = rng.normal_vec(lin.dim());
            assert!(gradient_fd_mismatch(&lin, &x) < 1e-5);
            let h = lin.hessian(&x);
            assert!((h - fd_hessian(&lin, &x)).abs().max() < 1e-3);
            let x = rng.normal_vec(log.dim());
            assert!(gradient_fd_mismatch(&log, &x) < 1e-5);
            let h = log.hessian(&x);
            assert!((h - fd_hessian(&log, &x)).abs().max() < 1e-3);
        }
    }

    #[test]
    fn logreg_likelihood_saturates() {
        let data = Dataset {
            feature_names: vec!["x".into()],
            rows: vec![vec![1.0]; 5],
            responses: vec![1.0; 5],
            feature_scaling: vec![(0.0, 1.0)],
            response_scaling: None,
        };
        let t = LogReg::new(&data).unwrap();
        let prior_only = LogReg {
            design: vec![],
            responses: vec![],
            ..t.clone()
        };
        let x = [30.0, -20.0];
        let lik = t.log_density(&x) - prior_only.log_density(&x);
        assert!(lik < 0.0 && lik > -1e-11, "{lik}");
        let bad = Dataset {
            responses: vec![2.0; 5],
            ..data
        };
        assert!(LogReg::new(&bad).is_err());
    }
}
