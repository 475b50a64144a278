//! Uncorrected Hamiltonian MixFlow map on the augmented (position, momentum)
//! space: leapfrog simulation followed by a sinusoidal momentum refresh.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::dynamics::FlowMap;
use crate::error::{invalid, Error, Result};
use crate::precision::Real;
use crate::targets::LogDensity;

/// Position and momentum halves of an augmented state.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState<T> {
    pub position: Vec<T>,
    pub momentum: Vec<T>,
}

impl<T: Real> AugmentedState<T> {
    pub fn new(position: Vec<T>, momentum: Vec<T>) -> Result<Self> {
        if position.len() != momentum.len() {
            return Err(Error::ShapeMismatch(format!(
                "position has {} entries, momentum {}",
                position.len(),
                momentum.len()
            )));
        }
        Ok(Self { position, momentum })
    }

    /// Split `[x; rho]`.
    pub fn from_flat(z: &[T]) -> Result<Self> {
        if z.len() % 2 != 0 {
            return Err(Error::ShapeMismatch("augmented state needs even length".into()));
        }
        let d = z.len() / 2;
        Ok(Self {
            position: z[..d].to_vec(),
            momentum: z[d..].to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut z = self.position.clone();
        z.extend(self.momentum.iter().cloned());
        z
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }
}

/// Sinusoidal refresh shift
/// `s_i(x) = frac(offset + amplitude sin(2 pi (w.x + phase i)))`, `i` from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RefreshParams {
    pub weights: Vec<f64>,
    pub phase: f64,
    pub offset: f64,
    pub amplitude: f64,
}

impl RefreshParams {
    /// `w = (1, …, 1)/d`, `phase = 0.3`, `offset = 0.5`, `amplitude = 0.25`.
    pub fn standard(d: usize) -> Self {
        Self {
            weights: vec![1.0 / d as f64; d],
            phase: 0.3,
            offset: 0.5,
            amplitude: 0.25,
        }
    }

    /// No shift at all: the refresh is the identity.
    pub fn identity(d: usize) -> Self {
        Self {
            weights: vec![0.0; d],
            phase: 0.0,
            offset: 0.0,
            amplitude: 0.0,
        }
    }

    fn angle<T: Real>(&self, x: &[T], i: usize) -> T {
        let mut a = x[0].constant(self.phase) * i as f64;
        for (xi, w) in x.iter().zip(&self.weights) {
            if *w != 0.0 {
                a += xi.clone() * *w;
            }
        }
        a * x[0].pi() * 2.0
    }

    /// Shift for coordinate `i` (1-based).
    pub fn shift<T: Real>(&self, x: &[T], i: usize) -> T {
        let s = self.angle(x, i).sin() * self.amplitude + self.offset;
        s.fract_unit()
    }

    /// `∂ s_i / ∂ x` away from wrap points.
    fn shift_gradient(&self, x: &[f64], i: usize) -> Vec<f64> {
        let c = self.amplitude * self.angle(x, i).cos() * 2.0 * PI;
        self.weights.iter().map(|w| c * w).collect()
    }
}

/// Keep `u` inside `[tiny, 1 - tiny]` before a quantile.
fn clamp_unit<T: Real>(u: T) -> T {
    let tiny = u.quantile_clamp();
    let mut hi = -tiny.clone() + 1.0;
    if hi >= 1.0 {
        // 1 - tiny rounds to 1: fall back to the largest value below 1.
        hi = u.constant(1.0 - f64::EPSILON / 2.0);
    }
    if u < tiny {
        log::warn!(
            "refresh quantile argument {:e} clamped to {:e}",
            u.to_f64(),
            tiny.to_f64()
        );
        tiny
    } else if u > hi {
        log::warn!(
            "refresh quantile argument 1 - {:e} clamped",
            (-u.clone() + 1.0).to_f64()
        );
        hi
    } else {
        u
    }
}

/// Leapfrog for `H(x, rho) = -log p(x) + |rho|^2 / 2`, in place.
pub fn leapfrog_in_place<T: Real, P: LogDensity + ?Sized>(
    target: &P,
    x: &mut [T],
    rho: &mut [T],
    steps: usize,
    step_size: f64,
) -> Result<()> {
    let half = 0.5 * step_size;
    let grad = |x: &[T], step: usize| -> Result<Vec<T>> {
        let g = target.grad_log_density(x);
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(Error::NonFinite {
                index: step,
                what: "leapfrog gradient",
            })
        }
    };
    for (r, g) in rho.iter_mut().zip(grad(x, 0)?) {
        *r += g * half;
    }
    for s in 0..steps {
        for (xi, r) in x.iter_mut().zip(rho.iter()) {
            *xi += r.clone() * step_size;
        }
        let w = if s + 1 == steps { half } else { step_size };
        for (r, g) in rho.iter_mut().zip(grad(x, s + 1)?) {
            *r += g * w;
        }
    }
    Ok(())
}

pub fn leapfrog<T: Real, P: LogDensity + ?Sized>(
    target: &P,
    z: &AugmentedState<T>,
    steps: usize,
    step_size: f64,
) -> Result<AugmentedState<T>> {
    let mut out = z.clone();
    leapfrog_in_place(target, &mut out.position, &mut out.momentum, steps, step_size)?;
    Ok(out)
}

/// Refresh the momentum in place; returns `sum_i log phi(rho_i) - log phi(rho'_i)`.
pub fn refresh_in_place<T: Real>(params: &RefreshParams, x: &[T], rho: &mut [T]) -> T {
    let mut log_det = x[0].zero_like();
    for (i, r) in rho.iter_mut().enumerate() {
        let s = params.shift(x, i + 1);
        if s == 0.0 {
            continue;
        }
        let u = (r.normal_cdf() + s).fract_unit();
        let new = clamp_unit(u).normal_quantile();
        log_det += (new.square() - r.square()) * 0.5;
        *r = new;
    }
    log_det
}

/// Undo [`refresh_in_place`]; returns the same log-determinant, i.e. that of
/// the forward refresh evaluated at the recovered momentum.
pub fn inverse_refresh_in_place<T: Real>(params: &RefreshParams, x: &[T], rho: &mut [T]) -> T {
    let mut log_det = x[0].zero_like();
    for (i, r) in rho.iter_mut().enumerate() {
        let s = params.shift(x, i + 1);
        if s == 0.0 {
            continue;
        }
        let u = (r.normal_cdf() - s).fract_unit();
        let old = clamp_unit(u).normal_quantile();
        log_det += (r.square() - old.square()) * 0.5;
        *r = old;
    }
    log_det
}

pub fn momentum_refresh<T: Real>(z: &AugmentedState<T>, params: &RefreshParams) -> AugmentedState<T> {
    let mut out = z.clone();
    refresh_in_place(params, &out.position, &mut out.momentum);
    out
}

pub fn inverse_refresh<T: Real>(z: &AugmentedState<T>, params: &RefreshParams) -> AugmentedState<T> {
    let mut out = z.clone();
    inverse_refresh_in_place(params, &out.position, &mut out.momentum);
    out
}

/// `F = refresh ∘ leapfrog` for a target `P`.
#[derive(Debug, Clone)]
pub struct MixFlowMap<P> {
    pub target: P,
    pub steps: usize,
    pub step_size: f64,
    pub refresh: RefreshParams,
}

impl<P: LogDensity> MixFlowMap<P> {
    pub fn new(target: P, steps: usize, step_size: f64, refresh: RefreshParams) -> Result<Self> {
        if steps == 0 || !(step_size > 0.0) || !step_size.is_finite() {
            return Err(invalid("leapfrog needs steps >= 1 and a positive step size"));
        }
        if refresh.weights.len() != target.dim() {
            return Err(Error::ShapeMismatch(format!(
                "refresh weights have {} entries, target dimension {}",
                refresh.weights.len(),
                target.dim()
            )));
        }
        Ok(Self {
            target,
            steps,
            step_size,
            refresh,
        })
    }

    /// Standard refresh parameters.
    pub fn with_defaults(target: P, steps: usize, step_size: f64) -> Result<Self> {
        let d = target.dim();
        Self::new(target, steps, step_size, RefreshParams::standard(d))
    }

    pub fn position_dim(&self) -> usize {
        self.target.dim()
    }

    fn split<'a, T>(&self, z: &'a [T]) -> Result<(&'a [T], &'a [T])> {
        let d = self.target.dim();
        if z.len() != 2 * d {
            return Err(Error::ShapeMismatch(format!(
                "augmented state has {} entries, expected {}",
                z.len(),
                2 * d
            )));
        }
        Ok(z.split_at(d))
    }

    /// Tangent propagation through leapfrog from `(x, rho)` with initial
    /// tangents `(tx, tr)`; all updated in place.
    fn leapfrog_tangent(
        &self,
        x: &mut [f64],
        rho: &mut [f64],
        tx: &mut DMatrix<f64>,
        tr: &mut DMatrix<f64>,
    ) -> Result<()> {
        let (eta, half) = (self.step_size, 0.5 * self.step_size);
        let grad = |x: &[f64]| -> Result<Vec<f64>> {
            let g = self.target.grad_log_density(x);
            if g.iter().all(|v| v.is_finite()) {
                Ok(g)
            } else {
                Err(Error::NonFinite {
                    index: 0,
                    what: "leapfrog gradient",
                })
            }
        };
        let g = grad(x)?;
        let h = self.target.hessian(x);
        for (r, gi) in rho.iter_mut().zip(&g) {
            *r += half * gi;
        }
        *tr += (&h * &*tx) * half;
        for s in 0..self.steps {
            for (xi, r) in x.iter_mut().zip(rho.iter()) {
                *xi += eta * r;
            }
            *tx += &*tr * eta;
            let w = if s + 1 == self.steps { half } else { eta };
            let g = grad(x)?;
            let h = self.target.hessian(x);
            for (r, gi) in rho.iter_mut().zip(&g) {
                *r += w * gi;
            }
            *tr += (&h * &*tx) * w;
        }
        Ok(())
    }

    /// Jacobian of the leapfrog part and of the full map at `z`, plus the
    /// momentum before and after the refresh.
    fn tangents(&self, z: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>, Vec<f64>)> {
        let (x0, r0) = self.split(z)?;
        let d = x0.len();
        let (mut x, mut rho) = (x0.to_vec(), r0.to_vec());
        let mut tx = DMatrix::zeros(d, 2 * d);
        let mut tr = DMatrix::zeros(d, 2 * d);
        for i in 0..d {
            tx[(i, i)] = 1.0;
            tr[(i, d + i)] = 1.0;
        }
        self.leapfrog_tangent(&mut x, &mut rho, &mut tx, &mut tr)?;
        let mut lf = DMatrix::zeros(2 * d, 2 * d);
        lf.rows_mut(0, d).copy_from(&tx);
        lf.rows_mut(d, d).copy_from(&tr);
        let rho_in = rho.clone();
        refresh_in_place(&self.refresh, &x, &mut rho);
        let mut full = lf.clone();
        for i in 0..d {
            let inv_phi_out = (0.5 * rho[i] * rho[i]).exp() * (2.0 * PI).sqrt();
            let ratio = (0.5 * (rho[i] * rho[i] - rho_in[i] * rho_in[i])).exp();
            let sg = self.refresh.shift_gradient(&x, i + 1);
            for c in 0..2 * d {
                let mut v = ratio * tr[(i, c)];
                for j in 0..d {
                    v += inv_phi_out * sg[j] * tx[(j, c)];
                }
                full[(d + i, c)] = v;
            }
        }
        Ok((lf, full, rho_in, rho))
    }

    /// `∇_z log |det ∇F(z)|` from the leapfrog and full-map tangents.
    pub fn grad_log_jac_det_analytic(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.target.dim();
        let (lf, full, rho_in, rho_out) = self.tangents(z)?;
        Ok((0..2 * d)
            .map(|c| {
                (0..d)
                    .map(|i| full[(d + i, c)] * rho_out[i] - lf[(d + i, c)] * rho_in[i])
                    .sum()
            })
            .collect())
    }
}

impl<P: LogDensity> FlowMap for MixFlowMap<P> {
    fn dim(&self) -> usize {
        2 * self.target.dim()
    }

    fn forward_with_logdet<T: Real>(&self, z: &[T]) -> Result<(Vec<T>, T)> {
        let (x, r) = self.split(z)?;
        let (mut x, mut rho) = (x.to_vec(), r.to_vec());
        leapfrog_in_place(&self.target, &mut x, &mut rho, self.steps, self.step_size)?;
        let log_det = refresh_in_place(&self.refresh, &x, &mut rho);
        x.extend(rho);
        Ok((x, log_det))
    }

    fn inverse_with_logdet<T: Real>(&self, z: &[T]) -> Result<(Vec<T>, T)> {
        let (x, r) = self.split(z)?;
        let (mut x, mut rho) = (x.to_vec(), r.to_vec());
        let log_det = inverse_refresh_in_place(&self.refresh, &x, &mut rho);
        for r in rho.iter_mut() {
            *r = -r.clone();
        }
        leapfrog_in_place(&self.target, &mut x, &mut rho, self.steps, self.step_size)?;
        for r in rho.iter_mut() {
            *r = -r.clone();
        }
        x.extend(rho);
        Ok((x, log_det))
    }

    fn grad_log_jac_det(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.grad_log_jac_det_analytic(z)
    }

    fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let j = self.tangents(z)?.1;
        if j.iter().all(|v| v.is_finite()) {
            Ok(j)
        } else {
            Err(Error::NonFinite {
                index: 0,
                what: "Jacobian entry",
            })
        }
    }

    fn inverse_jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let (x0, r0) = self.split(z)?;
        let d = x0.len();
        let mut x = x0.to_vec();
        let mut rho = r0.to_vec();
        inverse_refresh_in_place(&self.refresh, &x, &mut rho);
        let mut tx = DMatrix::zeros(d, 2 * d);
        let mut tr = DMatrix::zeros(d, 2 * d);
        for i in 0..d {
            tx[(i, i)] = 1.0;
            let inv_phi_mid = (0.5 * rho[i] * rho[i]).exp() * (2.0 * PI).sqrt();
            let ratio = (0.5 * (rho[i] * rho[i] - r0[i] * r0[i])).exp();
            tr[(i, d + i)] = ratio;
            let sg = self.refresh.shift_gradient(&x, i + 1);
            for j in 0..d {
                tr[(i, j)] = -inv_phi_mid * sg[j];
            }
        }
        for r in rho.iter_mut() {
            *r = -*r;
        }
        tr.neg_mut();
        self.leapfrog_tangent(&mut x, &mut rho, &mut tx, &mut tr)?;
        tr.neg_mut();
        let mut j = DMatrix::zeros(2 * d, 2 * d);
        j.rows_mut(0, d).copy_from(&tx);
        j.rows_mut(d, d).copy_from(&tr);
        if j.iter().all(|v| v.is_finite()) {
            Ok(j)
        } else {
            Err(Error::NonFinite {
                index: 0,
                what: "Jacobian entry",
            })
        }
    }
}

pub fn flow_forward<T: Real, P: LogDensity>(map: &MixFlowMap<P>, z: &AugmentedState<T>) -> Result<AugmentedState<T>> {
    AugmentedState::from_flat(&map.forward(&z.to_flat())?)
}

pub fn flow_inverse<T: Real, P: LogDensity>(map: &MixFlowMap<P>, z: &AugmentedState<T>) -> Result<AugmentedState<T>> {
    AugmentedState::from_flat(&map.inverse(&z.to_flat())?)
}

pub fn jacobian_block<P: LogDensity>(map: &MixFlowMap<P>, z: &AugmentedState<f64>) -> Result<DMatrix<f64>> {
    map.jacobian(&z.to_flat())
}

pub fn log_jac_det<T: Real, P: LogDensity>(map: &MixFlowMap<P>, z: &AugmentedState<T>) -> Result<T> {
    map.log_jac_det(&z.to_flat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::distance;
    use crate::rng::make_rng;
    use crate::targets::{Banana, Cross, DiagGaussian, Flat};
    use approx::assert_relative_eq;

    fn std_normal_1d() -> DiagGaussian {
        DiagGaussian::standard(1)
    }

    #[test]
    fn leapfrog_hand_step() {
        let z = AugmentedState::new(vec![1.0], vec![0.0]).unwrap();
        let out = leapfrog(&std_normal_1d(), &z, 1, 0.1).unwrap();
        assert_relative_eq!(out.position[0], 0.995, epsilon = 1e-15);
        assert_relative_eq!(out.momentum[0], -0.09975, epsilon = 1e-15);
    }

    #[test]
    fn free_particle() {
        let z = AugmentedState::new(vec![1.0, 2.0], vec![0.5, -1.0]).unwrap();
        let out = leapfrog(&Flat { dim: 2 }, &z, 7, 0.25).unwrap();
        assert_relative_eq!(out.position[0], 1.0 + 7.0 * 0.25 * 0.5, epsilon = 1e-14);
        assert_relative_eq!(out.position[1], 2.0 - 7.0 * 0.25, epsilon = 1e-14);
        assert_eq!(out.momentum, z.momentum);
        let map = MixFlowMap::new(Flat { dim: 2 }, 7, 0.25, RefreshParams::identity(2)).unwrap();
        let back = flow_inverse(&map, &z).unwrap();
        assert_relative_eq!(back.position[0], 1.0 - 7.0 * 0.25 * 0.5, epsilon = 1e-14);
        let j = map.jacobian(&z.to_flat()).unwrap();
        let mut want = DMatrix::identity(4, 4);
        want[(0, 2)] = 1.75;
        want[(1, 3)] = 1.75;
        assert!((j - want).abs().max() < 1e-15);
    }

    #[test]
    fn one_step_jacobian_closed_form() {
        let eta: f64 = 0.1;
        let map = MixFlowMap::new(std_normal_1d(), 1, eta, RefreshParams::identity(1)).unwrap();
        let j = map.jacobian(&[0.3, -0.7]).unwrap();
        let want = DMatrix::from_row_slice(
            2,
            2,
            &[
                1.0 - eta * eta / 2.0,
                eta,
                -eta + eta.powi(3) / 4.0,
                1.0 - eta * eta / 2.0,
            ],
        );
        assert!((&j - want).abs().max() < 1e-15);
        assert!((j.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leapfrog_eigenvalues_on_unit_circle() {
        for eta in [0.1, 0.5, 1.0, 1.9] {
            let map = MixFlowMap::new(std_normal_1d(), 1, eta, RefreshParams::identity(1)).unwrap();
            let j = map.jacobian(&[0.0, 0.0]).unwrap();
            for ev in j.complex_eigenvalues().iter() {
                assert!((ev.norm() - 1.0).abs() < 1e-10, "eta {eta}: {ev}");
            }
        }
    }

    #[test]
    fn refresh_examples() {
        let z = AugmentedState::new(vec![0.4], vec![1.3]).unwrap();
        assert_eq!(momentum_refresh(&z, &RefreshParams::identity(1)), z);
        // Constant shift 0.25 from offset alone.
        let p = RefreshParams {
            weights: vec![0.0],
            phase: 0.0,
            offset: 0.25,
            amplitude: 0.0,
        };
        let z0 = AugmentedState::new(vec![0.0], vec![0.0]).unwrap();
        let out = momentum_refresh(&z0, &p);
        assert_relative_eq!(out.momentum[0], 0.674_489_750_196_081_7, epsilon = 1e-12);
        let mut rho = vec![0.0];
        let ld = refresh_in_place(&p, &[0.0], &mut rho);
        assert_relative_eq!(ld, 0.227468, epsilon = 1e-6);
        let back = inverse_refresh(&out, &p);
        assert!(back.momentum[0].abs() < 1e-12);
        let zero = MixFlowMap::new(std_normal_1d(), 3, 0.1, RefreshParams::identity(1)).unwrap();
        assert_eq!(zero.log_jac_det(&[0.2, 0.1]).unwrap(), 0.0);
    }

    /// Round-trip check. The refresh's inverse amplifies rounding of the
    /// output momentum by `phi(rho') / phi(rho_in)`, so the tolerance carries
    /// that condition number on top of the plain ulp-scale allowance.
    fn check_map<P: LogDensity + Clone>(map: &MixFlowMap<P>, q0: &DiagGaussian, draws: usize, seed: u64) -> usize {
        let mut rng = make_rng(seed, 0);
        let aug = q0.augmented();
        let d = map.position_dim();
        let mut ill_conditioned = 0;
        for _ in 0..draws {
            let z = aug.sample(&mut rng);
            let (fz, ld) = map.forward_with_logdet(&z).unwrap();
            let (back, ld_b) = map.inverse_with_logdet(&fz).unwrap();
            let mut lf = AugmentedState::from_flat(&z).unwrap();
            leapfrog_in_place(
                &map.target,
                &mut lf.position,
                &mut lf.momentum,
                map.steps,
                map.step_size,
            )
            .unwrap();
            let kappa = (0..d)
                .map(|i| (0.5 * (lf.momentum[i].powi(2) - fz[d + i].powi(2))).exp())
                .fold(1.0, f64::max);
            if kappa > 1e3 {
                ill_conditioned += 1;
            }
            let nz = distance(&z, &vec![0.0; z.len()]);
            let err = distance(&back, &z);
            assert!(
                err <= 1e-12 * (1.0 + nz) + 1e-15 * kappa,
                "{z:?}: {err:e}, kappa {kappa:e}"
            );
            // log J_F(z) recovered from the inverse side.
            assert!((ld - ld_b).abs() < 1e-10 + 1e-15 * kappa);
        }
        ill_conditioned
    }

    #[test]
    fn bijectivity_banana_and_cross() {
        let banana = MixFlowMap::with_defaults(Banana::default(), 200, 0.02).unwrap();
        let q = DiagGaussian::new(vec![0.0, -9.0], vec![0.93, 0.0]).unwrap();
        let ill = check_map(&banana, &q, 1000, 1);
        assert!(ill <= 10);
        let cross = MixFlowMap::with_defaults(Cross::new(), 60, 0.005).unwrap();
        let q = DiagGaussian::new(vec![0.0, 0.0], vec![-1.8, 0.7]).unwrap();
        check_map(&cross, &q, 1000, 2);
    }

    #[test]
    fn jacobian_matches_differences_and_determinant() {
        let map = MixFlowMap::with_defaults(Banana::default(), 20, 0.02).unwrap();
        let mut rng = make_rng(3, 0);
        let q0 = DiagGaussian::new(vec![0.0, -9.0], vec![0.9, 0.0]).unwrap().augmented();
        for _ in 0..10 {
            let z = q0.sample(&mut rng);
            let j = map.jacobian(&z).unwrap();
            for c in 0..4 {
                let h = 1e-6 * (1.0 + z[c].abs());
                let mut zp = z.clone();
                zp[c] += h;
                let fp = map.forward(&zp).unwrap();
                zp[c] -= 2.0 * h;
                let fm = map.forward(&zp).unwrap();
                for r in 0..4 {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    assert!((fd - j[(r, c)]).abs() <= 1e-4 * (1.0 + j[(r, c)].abs()), "({r},{c})");
                }
            }
            let ld = map.log_jac_det(&z).unwrap();
            assert_relative_eq!(j.determinant().abs().ln(), ld, epsilon = 1e-6 * (1.0 + ld.abs()));
            let fz = map.forward(&z).unwrap();
            let jb = map.inverse_jacobian(&fz).unwrap();
            assert!((&jb * &j - DMatrix::<f64>::identity(4, 4)).abs().max() < 1e-8);
            let (_, ld_b) = map.inverse_with_logdet(&fz).unwrap();
            assert!((ld - ld_b).abs() < 1e-10);
        }
    }

    #[test]
    fn grad_log_jac_det_matches_differences() {
        let map = MixFlowMap::with_defaults(Cross::new(), 10, 0.05).unwrap();
        let z = [0.3, 1.1, -0.4, 0.8];
        let g = map.grad_log_jac_det(&z).unwrap();
        for c in 0..4 {
            let h = 1e-6;
            let mut zp = z;
            zp[c] += h;
            let lp = map.log_jac_det(&zp).unwrap();
            zp[c] -= 2.0 * h;
            let lm = map.log_jac_det(&zp).unwrap();
            assert!(((lp - lm) / (2.0 * h) - g[c]).abs() < 1e-5 * (1.0 + g[c].abs()));
        }
    }

    #[test]
    fn default_settings_stay_finite() {
        let banana = MixFlowMap::with_defaults(Banana::default(), 200, 0.02).unwrap();
        let q0 = DiagGaussian::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap().augmented();
        let mut rng = make_rng(4, 0);
        let mut z = q0.sample(&mut rng);
        for _ in 0..100 {
            z = banana.forward(&z).unwrap();
        }
        assert!(z.iter().all(|v| v.is_finite()));
        let cross = MixFlowMap::with_defaults(Cross::new(), 60, 0.005).unwrap();
        let mut z = q0.sample(&mut rng);
        for _ in 0..100 {
            z = cross.forward(&z).unwrap();
        }
        assert!(z.iter().all(|v| v.is_finite()));
        assert!(MixFlowMap::with_defaults(Banana::default(), 0, 0.1).is_err());
    }

    #[cfg(feature = "extended")]
    #[test]
    fn extended_agrees_with_f64_for_one_step() {
        let spec = crate::PrecisionSpec::extended(256).unwrap();
        let map = MixFlowMap::with_defaults(Banana::default(), 200, 0.02).unwrap();
        let z = [1.5, -3.0, 0.2, -0.9];
        let ext = crate::precision::promote(&z, spec).unwrap();
        let (fe, lde) = map.forward_with_logdet(&ext).unwrap();
        let (ff, ldf) = map.forward_with_logdet(&z).unwrap();
        let fe = crate::precision::demote(&fe).unwrap();
        assert!(distance(&fe, &ff) < 1e-12);
        assert!((lde.to_f64() - ldf).abs() < 1e-12);
        let (back, _) = map.inverse_with_logdet(&map.forward(&ext).unwrap()).unwrap();
        assert!(distance(&back, &ext) < 1e-60);
    }
}
