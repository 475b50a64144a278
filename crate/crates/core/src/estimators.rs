//! Flow and MixFlow estimators: sampling, density evaluation, ELBO
//! estimation with a cached joint orbit, test-function averages, and the
//! local-Lipschitz error bounds.

use crate::dynamics::{FlowMap, FlowSystem};
use crate::error::{invalid, Error, Result};
use crate::precision::{PrecisionSpec, Real};
use crate::rng::{make_rng, RngStream};
use crate::targets::{log_sum_exp, norm, DiagGaussian, LogDensity};

/// MixFlow built from one map `F`: the uniform mixture of
/// `q0, F#q0, …, F^N#q0`.
#[derive(Debug, Clone)]
pub struct MixFlowModel<M> {
    pub map: M,
    /// Reference on the full state space of `map`.
    pub reference: DiagGaussian,
    pub len: usize,
}

impl<M: FlowMap> MixFlowModel<M> {
    pub fn new(map: M, reference: DiagGaussian, len: usize) -> Result<Self> {
        if reference.dim() != map.dim() {
            return Err(Error::ShapeMismatch(format!(
                "reference dimension {} but map dimension {}",
                reference.dim(),
                map.dim()
            )));
        }
        Ok(Self { map, reference, len })
    }

    pub fn with_len(&self, len: usize) -> Self
    where
        M: Clone,
    {
        Self { len, ..self.clone() }
    }
}

fn check_finite<T: Real>(v: &T, index: usize, what: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { index, what })
    }
}

fn lift<T: Real>(x: &[f64], spec: PrecisionSpec) -> Vec<T> {
    x.iter().map(|&v| T::with_spec(v, spec)).collect()
}

/// One MixFlow draw: `X ~ q0`, `K ~ Unif{0..N}`, return `F^K X` at the
/// requested precision. Consumes the same randomness at every precision.
pub fn sample_one<M: FlowMap, T: Real>(
    model: &MixFlowModel<M>,
    rng: &mut RngStream,
    spec: PrecisionSpec,
) -> Result<Vec<T>> {
    let x0 = model.reference.sample(rng);
    let k = rng.index(model.len + 1);
    let mut z: Vec<T> = lift(&x0, spec);
    for _ in 0..k {
        z = model.map.forward(&z)?;
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: i,
            what: "sample coordinate",
        });
    }
    Ok(z)
}

pub fn sample_mixflow<M: FlowMap, T: Real>(
    model: &MixFlowModel<M>,
    rng: &mut RngStream,
    count: usize,
    spec: PrecisionSpec,
) -> Result<Vec<Vec<T>>> {
    if count == 0 {
        return Err(invalid("need at least one draw"));
    }
    (0..count).map(|_| sample_one(model, rng, spec)).collect()
}

/// Draws `0..count`, each from its own stream `(seed, i)`, in parallel.
pub fn sample_mixflow_streams<M: FlowMap, T: Real>(
    model: &MixFlowModel<M>,
    seed: u64,
    count: usize,
    spec: PrecisionSpec,
) -> Result<Vec<Vec<T>>> {
    crate::parallel::try_par_map((0..count as u64).collect(), |i| {
        sample_one(model, &mut make_rng(seed, i), spec)
    })
}

/// Change-of-variables density of a composed flow at `x`.
pub fn nf_log_density<S: FlowSystem, T: Real>(sys: &S, q0: &DiagGaussian, x: &[T]) -> Result<T> {
    let n = sys.len();
    let mut y = x.to_vec();
    let mut acc = x[0].zero_like();
    for k in 1..=n {
        let (next, ld) = sys.inverse_with_logdet(n - k + 1, &y)?;
        acc += ld;
        y = next;
    }
    let out = q0.log_density(&y) - acc;
    check_finite(&out, n, "flow log-density")?;
    Ok(out)
}

/// `log q(x)` for the MixFlow mixture, from one backward orbit.
pub fn mixflow_log_density<M: FlowMap, T: Real>(model: &MixFlowModel<M>, x: &[T]) -> Result<T> {
    let n = model.len;
    let mut terms = Vec::with_capacity(n + 1);
    terms.push(model.reference.log_density(x));
    let mut y = x.to_vec();
    let mut cum = x[0].zero_like();
    for _ in 0..n {
        let (next, ld) = model.map.inverse_with_logdet(&y)?;
        cum += ld;
        y = next;
        terms.push(model.reference.log_density(&y) - &cum);
    }
    let out = log_sum_exp(&terms) - x[0].constant((n + 1) as f64).ln();
    check_finite(&out, n, "MixFlow log-density")?;
    Ok(out)
}

/// Single-draw ELBO estimate `log p(F^N x) - log q0(x) + sum_n log J_n`.
pub fn nf_elbo_estimate<S: FlowSystem, P: LogDensity + ?Sized, T: Real>(
    sys: &S,
    q0: &DiagGaussian,
    target: &P,
    x: &[T],
) -> Result<T> {
    let mut y = x.to_vec();
    let mut acc = x[0].zero_like();
    for k in 1..=sys.len() {
        let (next, ld) = sys.forward_with_logdet(k, &y)?;
        acc += ld;
        y = next;
    }
    let out = target.log_density(&y) - q0.log_density(x) + acc;
    check_finite(&out, sys.len(), "ELBO estimate")?;
    Ok(out)
}

/// Augmented target `log p(x) + sum_i log phi(rho_i)` on `[x; rho]`.
pub fn augmented_log_density<P: LogDensity + ?Sized, T: Real>(target: &P, z: &[T]) -> T {
    let d = target.dim();
    let mut lp = target.log_density(&z[..d]);
    for r in &z[d..] {
        lp += r.normal_log_pdf();
    }
    lp
}

/// Joint orbit `x_{-N} … x_N` through an origin with `log J(x_m)` for
/// `m = -N … N-1`.
#[derive(Debug, Clone)]
pub struct OrbitCache<T> {
    pub len: usize,
    /// `states[m + N]` holds `x_m`.
    pub states: Vec<Vec<T>>,
    /// `log_jac[m + N]` holds `log J(x_m)`, `m < N`.
    pub log_jac: Vec<T>,
}

impl<T: Real> OrbitCache<T> {
    pub fn build<M: FlowMap>(map: &M, x: &[T], len: usize) -> Result<Self> {
        let mut back = Vec::with_capacity(len);
        let mut back_lj = Vec::with_capacity(len);
        let mut y = x.to_vec();
        for _ in 0..len {
            let (prev, ld) = map.inverse_with_logdet(&y)?;
            back_lj.push(ld);
            back.push(prev.clone());
            y = prev;
        }
        let mut states: Vec<Vec<T>> = back.into_iter().rev().collect();
        let mut log_jac: Vec<T> = back_lj.into_iter().rev().collect();
        states.push(x.to_vec());
        let mut y = x.to_vec();
        for _ in 0..len {
            let (next, ld) = map.forward_with_logdet(&y)?;
            log_jac.push(ld);
            states.push(next.clone());
            y = next;
        }
        for (i, s) in states.iter().enumerate() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    index: i,
                    what: "cached orbit state",
                });
            }
        }
        Ok(Self { len, states, log_jac })
    }

    pub fn state(&self, m: isize) -> &[T] {
        &self.states[(m + self.len as isize) as usize]
    }

    /// `log q(x_n)` for `0 <= n <= N` from the cached states.
    pub fn log_density_at(&self, reference: &DiagGaussian, n: usize) -> T {
        let big_n = self.len;
        // x_n sits at index n + N; walk back through x_{n-1} … x_{n-N}.
        let mut terms = Vec::with_capacity(big_n + 1);
        let mut cum = self.states[0][0].zero_like();
        for j in 0..=big_n {
            let idx = n + big_n - j;
            if j > 0 {
                cum += &self.log_jac[idx];
            }
            terms.push(reference.log_density(&self.states[idx]) - &cum);
        }
        let lse = log_sum_exp(&terms);
        lse - self.states[0][0].constant((big_n + 1) as f64).ln()
    }
}

/// MixFlow ELBO estimate at one reference draw using the cached joint orbit.
pub fn mixflow_elbo_estimate<M: FlowMap, P: LogDensity + ?Sized, T: Real>(
    model: &MixFlowModel<M>,
    target: &P,
    x: &[T],
) -> Result<T> {
    let cache = OrbitCache::build(&model.map, x, model.len)?;
    let n = model.len;
    let mut total = x[0].zero_like();
    for k in 0..=n {
        let state = cache.state(k as isize);
        total += augmented_log_density(target, state) - cache.log_density_at(&model.reference, k);
    }
    let out = total / (n + 1) as f64;
    check_finite(&out, n, "MixFlow ELBO")?;
    Ok(out)
}

/// The same estimate recomputing every orbit from scratch (test oracle).
pub fn mixflow_elbo_direct<M: FlowMap, P: LogDensity + ?Sized, T: Real>(
    model: &MixFlowModel<M>,
    target: &P,
    x: &[T],
) -> Result<T> {
    let n = model.len;
    let mut total = x[0].zero_like();
    let mut y = x.to_vec();
    for k in 0..=n {
        if k > 0 {
            y = model.map.forward(&y)?;
        }
        total += augmented_log_density(target, &y) - mixflow_log_density(model, &y)?;
    }
    Ok(total / (n + 1) as f64)
}

/// Test functions applied to the position block of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestFunction {
    /// `sum_i |x_i|`
    AbsSum,
    /// `sum_i (sin x_i + 1)`
    SinPlusOne,
    /// `sum_i 1 / (1 + exp(-x_i))`
    SigmoidSum,
    Zero,
}

impl TestFunction {
    pub const ALL: [TestFunction; 3] = [TestFunction::AbsSum, TestFunction::SinPlusOne, TestFunction::SigmoidSum];

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::AbsSum => "abs_sum",
            TestFunction::SinPlusOne => "sin_plus_one",
            TestFunction::SigmoidSum => "sigmoid_sum",
            TestFunction::Zero => "zero",
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::AbsSum => x.iter().map(|v| v.abs()).sum(),
            TestFunction::SinPlusOne => x.iter().map(|v| v.sin() + 1.0).sum(),
            TestFunction::SigmoidSum => x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).sum(),
            TestFunction::Zero => 0.0,
        }
    }
}

/// Mean of `f` over the first `position_dim` coordinates of each draw.
pub fn sample_average(draws: &[Vec<f64>], f: TestFunction, position_dim: usize) -> Result<f64> {
    if draws.is_empty() {
        return Err(invalid("sample average of an empty draw set"));
    }
    Ok(draws.iter().map(|z| f.eval(&z[..position_dim])).sum::<f64>() / draws.len() as f64)
}

/// `|numerical - exact| / max(|exact|, 1e-12)`.
pub fn relative_error(numerical: f64, exact: f64) -> f64 {
    (numerical - exact).abs() / exact.abs().max(1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzConfig {
    pub samples: usize,
    pub ascent_steps: usize,
    pub seed: u64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self {
            samples: 64,
            ascent_steps: 10,
            seed: 0x5eed,
        }
    }
}

/// Lower estimate of `sup_{|y - x| <= eps} |grad log g(y)|`: the center,
/// `cfg.samples` points on the sphere, then projected ascent on `|grad|^2`
/// from the best point with halving step lengths.
pub fn local_lipschitz<G>(grad: G, x: &[f64], eps: f64, cfg: &LipschitzConfig) -> Result<f64>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(eps >= 0.0) {
        return Err(invalid("eps must be nonnegative"));
    }
    let eval = |y: &[f64]| -> Result<f64> {
        let g = grad(y)?;
        let n = norm(&g);
        if n.is_finite() {
            Ok(n)
        } else {
            Err(Error::NonFinite {
                index: 0,
                what: "log-density gradient",
            })
        }
    };
    let mut best_y = x.to_vec();
    let mut best = eval(x)?;
    if eps == 0.0 {
        return Ok(best);
    }
    let d = x.len();
    let ascent_dir = |y: &[f64]| -> Result<Option<Vec<f64>>> {
        // H g by a central difference of the gradient along g.
        let g = grad(y)?;
        let gn = norm(&g);
        if gn == 0.0 {
            return Ok(None);
        }
        let h = 1e-6 * (1.0 + norm(y));
        let plus: Vec<f64> = y.iter().zip(&g).map(|(a, gi)| a + h * gi / gn).collect();
        let minus: Vec<f64> = y.iter().zip(&g).map(|(a, gi)| a - h * gi / gn).collect();
        let (gp, gm) = (grad(&plus)?, grad(&minus)?);
        let dir: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let dn = norm(&dir);
        if !(dn > 0.0) || !dn.is_finite() {
            return Ok(None);
        }
        Ok(Some(dir.into_iter().map(|v| v / dn).collect()))
    };
    let mut candidates = Vec::with_capacity(cfg.samples + 1);
    // First-order maximizer from the center, then random sphere points.
    if let Some(dir) = ascent_dir(x)? {
        candidates.push(x.iter().zip(&dir).map(|(a, b)| a + eps * b).collect::<Vec<f64>>());
    }
    let mut rng = make_rng(cfg.seed, d as u64);
    for _ in 0..cfg.samples {
        let mut u = rng.normal_vec(d);
        let nu = norm(&u);
        u.iter_mut().for_each(|v| *v *= eps / nu);
        candidates.push(x.iter().zip(&u).map(|(a, b)| a + b).collect());
    }
    for y in candidates {
        let v = eval(&y)?;
        if v > best {
            best = v;
            best_y = y;
        }
    }
    let project = |y: &mut Vec<f64>| {
        let off: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        let r = norm(&off);
        if r > eps {
            for (yi, (xi, o)) in y.iter_mut().zip(x.iter().zip(&off)) {
                *yi = xi + o * eps / r;
            }
        }
    };
    let mut step = eps;
    for _ in 0..cfg.ascent_steps {
        let Some(dir) = ascent_dir(&best_y)? else {
            break;
        };
        let mut y: Vec<f64> = best_y.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
        project(&mut y);
        let v = eval(&y)?;
        if v > best {
            best = v;
            best_y = y;
        } else {
            step *= 0.5;
        }
    }
    Ok(best)
}

/// Right-hand side of the finite-N density error bound and its pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub epsilon: f64,
    pub lip_q: f64,
    /// `L_{q0,eps}` at `x_{-n}`, `n = 0..N`.
    pub lip_q0: Vec<f64>,
    /// `L_{J,eps}` at `x_{-n}`, `n = 1..N`.
    pub lip_jac: Vec<f64>,
    pub bound: f64,
    pub observed: Option<f64>,
}

/// Finite-difference gradient of the f64 MixFlow log-density.
pub fn mixflow_log_density_grad<M: FlowMap>(model: &MixFlowModel<M>, x: &[f64]) -> Result<Vec<f64>> {
    let h = 1e-6 * (1.0 + norm(x));
    let mut y = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up: f64 = mixflow_log_density(model, &y)?;
        y[i] = x[i] - h;
        let down: f64 = mixflow_log_density(model, &y)?;
        y[i] = x[i];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// `eps (L_{q,eps}(x) + max_n L_{q0,eps}(x_{-n}) + sum_n L_{J,eps}(x_{-n}))`
/// along the numerical backward orbit from `x`.
pub fn density_error_bound<M: FlowMap>(
    model: &MixFlowModel<M>,
    x: &[f64],
    eps: f64,
    cfg: &LipschitzConfig,
) -> Result<BoundReport> {
    let n = model.len;
    let mut orbit = vec![x.to_vec()];
    for k in 0..n {
        let prev = model.map.inverse(&orbit[k])?;
        orbit.push(prev);
    }
    let q0 = &model.reference;
    let lip_q0 = orbit
        .iter()
        .map(|y| local_lipschitz(|v| Ok(q0.grad_log_density(v)), y, eps, cfg))
        .collect::<Result<Vec<_>>>()?;
    let lip_jac = orbit[1..]
        .iter()
        .map(|y| local_lipschitz(|v| model.map.grad_log_jac_det(v), y, eps, cfg))
        .collect::<Result<Vec<_>>>()?;
    let lip_q = local_lipschitz(|v| mixflow_log_density_grad(model, v), x, eps, cfg)?;
    let max_q0 = lip_q0.iter().cloned().fold(0.0, f64::max);
    let bound = eps * (lip_q + max_q0 + lip_jac.iter().sum::<f64>());
    Ok(BoundReport {
        epsilon: eps,
        lip_q,
        lip_q0,
        lip_jac,
        bound,
        observed: None,
    })
}
