//! Shadowing-window diagnostic for finite-precision orbits.
//!
//! Along a pseudo-orbit `x_0 … x_N` with Jacobians `D_k = ∇F_k(x_{k-1})`
//! the operator `(A u)_k = u_{k+1} - D_{k+1} u_k` has a block-tridiagonal
//! Gram matrix `A Aᵀ` (diagonal `D_k D_kᵀ + I`, sub-diagonal `-D_{k+1}`).
//! The window is `eps = 2 delta / sqrt(lambda_min(A Aᵀ))`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dynamics::{distance, Direction, FlowMap, FlowSystem, OrbitTrace};
use crate::error::{invalid, Error, Result};
use crate::parallel::try_par_map;
use crate::precision::{PrecisionSpec, Real};
use crate::rng::make_rng;
use crate::stats::Summary;

/// Per-step error used when `delta` is not estimated.
pub const DEFAULT_DELTA: f64 = 1e-14;

/// Largest dense problem the oracle will materialize.
pub const DENSE_ORACLE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockDirection {
    Forward,
    Backward,
    /// Forward-map blocks along `x_{-N} … x_{N-1}` through the origin.
    Joint,
}

impl From<Direction> for BlockDirection {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Forward => BlockDirection::Forward,
            Direction::Backward => BlockDirection::Backward,
        }
    }
}

/// `D_1 … D_N` along a pseudo-orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSequence {
    pub blocks: Vec<DMatrix<f64>>,
    pub origin: Vec<f64>,
    pub direction: BlockDirection,
}

impl BlockSequence {
    pub fn new(blocks: Vec<DMatrix<f64>>, origin: Vec<f64>, direction: BlockDirection) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(invalid("block sequence needs at least one block"));
        };
        let m = first.nrows();
        for (k, b) in blocks.iter().enumerate() {
            if b.nrows() != m || b.ncols() != m {
                return Err(Error::ShapeMismatch(format!(
                    "block {} is {}x{}, expected {m}x{m}",
                    k + 1,
                    b.nrows(),
                    b.ncols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    index: k + 1,
                    what: "Jacobian block",
                });
            }
        }
        Ok(Self {
            blocks,
            origin,
            direction,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block_dim(&self) -> usize {
        self.blocks[0].nrows()
    }

    /// Orbit length `N`: the block count, or half of it for joint sequences.
    pub fn orbit_len(&self) -> usize {
        match self.direction {
            BlockDirection::Joint => self.blocks.len() / 2,
            _ => self.blocks.len(),
        }
    }

    /// The blocks of the length-`n` orbit through the same origin: the first
    /// `n` blocks, or for joint sequences the central `2n`.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        let big_n = self.orbit_len();
        if n == 0 || n > big_n {
            return Err(invalid(format!("orbit length {n} outside 1..={big_n}")));
        }
        let range = match self.direction {
            BlockDirection::Joint => big_n - n..big_n + n,
            _ => 0..n,
        };
        Self::new(self.blocks[range].to_vec(), self.origin.clone(), self.direction)
    }
}

/// Jacobians of the layers along a standard-precision trace. Backward traces
/// use the inverse maps `B_k = F_{N-k+1}^{-1}`.
pub fn assemble_blocks<S: FlowSystem>(sys: &S, trace: &OrbitTrace<f64>) -> Result<BlockSequence> {
    if trace.precision.is_extended() {
        return Err(Error::PrecisionMismatch);
    }
    let n = trace.steps();
    let big_n = sys.len();
    let blocks = try_par_map((0..n).collect(), |k| match trace.direction {
        Direction::Forward => sys.jacobian(k + 1, &trace.states[k]),
        Direction::Backward => sys.inverse_jacobian(big_n - k, &trace.states[k]),
    })?;
    BlockSequence::new(blocks, trace.origin().to_vec(), trace.direction.into())
}

/// Forward-map blocks along `x_{-N} … x_{N-1}`, where `x_{-k} = B^k x` and
/// `x_k = F^k x`, for a homogeneous flow.
pub fn assemble_joint_blocks<M: FlowMap>(map: &M, origin: &[f64], n: usize) -> Result<BlockSequence> {
    let mut points = Vec::with_capacity(2 * n);
    let mut y = origin.to_vec();
    for _ in 0..n {
        y = map.inverse(&y)?;
        points.push(y.clone());
    }
    points.reverse();
    let mut y = origin.to_vec();
    for k in 0..n {
        points.push(y.clone());
        if k + 1 < n {
            y = map.forward(&y)?;
        }
    }
    let blocks = try_par_map(points, |p| map.jacobian(&p))?;
    BlockSequence::new(blocks, origin.to_vec(), BlockDirection::Joint)
}

/// Dense `A Aᵀ`, guarded by [`DENSE_ORACLE_LIMIT`].
pub fn dense_gram(blocks: &BlockSequence) -> Result<DMatrix<f64>> {
    let (n, m) = (blocks.len(), blocks.block_dim());
    let size = n * m;
    if size > DENSE_ORACLE_LIMIT {
        return Err(Error::SizeGuard {
            size,
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    let mut g = DMatrix::zeros(size, size);
    for (i, d) in blocks.blocks.iter().enumerate() {
        let diag = d * d.transpose() + DMatrix::identity(m, m);
        g.view_mut((i * m, i * m), (m, m)).copy_from(&diag);
        if i + 1 < n {
            let sub = -&blocks.blocks[i + 1];
            g.view_mut(((i + 1) * m, i * m), (m, m)).copy_from(&sub);
            g.view_mut((i * m, (i + 1) * m), (m, m)).copy_from(&sub.transpose());
        }
    }
    Ok(g)
}

/// Smallest eigenvalue of the dense Gram matrix from a full symmetric
/// eigendecomposition.
pub fn lambda_min_dense_oracle(blocks: &BlockSequence) -> Result<f64> {
    let g = dense_gram(blocks)?;
    Ok(SymmetricEigen::new(g).eigenvalues.min())
}

/// Block `LDLᵀ` of `A Aᵀ - sigma I` with pivots held in eigen form.
struct BlockLdl {
    /// `L_{i+1,i}`.
    lower: Vec<DMatrix<f64>>,
    pivots: Vec<SymmetricEigen<f64, nalgebra::Dyn>>,
}

impl BlockLdl {
    fn factor(diag: &[DMatrix<f64>], sub: &[DMatrix<f64>], sigma: f64) -> Result<Self> {
        let m = diag[0].nrows();
        let shift = DMatrix::<f64>::identity(m, m) * sigma;
        let mut lower = Vec::with_capacity(sub.len());
        let mut pivots: Vec<SymmetricEigen<f64, nalgebra::Dyn>> = Vec::with_capacity(diag.len());
        for i in 0..diag.len() {
            let mut p = &diag[i] - &shift;
            if i > 0 {
                let l: &DMatrix<f64> = &lower[i - 1];
                p -= l * sub[i - 1].transpose();
            }
            let p = (&p + p.transpose()) * 0.5;
            let eig = SymmetricEigen::new(p);
            if eig.eigenvalues.iter().any(|&v| v == 0.0 || !v.is_finite()) {
                return Err(Error::FactorizationBreakdown { shift: sigma });
            }
            if i < sub.len() {
                // L = S P^{-1}
                let pinv = pivot_inverse(&eig);
                lower.push(&sub[i] * pinv);
            }
            pivots.push(eig);
        }
        Ok(Self { lower, pivots })
    }

    /// Number of negative eigenvalues of `A Aᵀ - sigma I` (Sylvester).
    fn negative_count(&self) -> usize {
        self.pivots
            .iter()
            .map(|e| e.eigenvalues.iter().filter(|&&v| v < 0.0).count())
            .sum()
    }

    fn solve(&self, rhs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = rhs.len();
        let mut w: Vec<DVector<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = rhs[i].clone();
            if i > 0 {
                v -= &self.lower[i - 1] * &w[i - 1];
            }
            w.push(v);
        }
        for (v, e) in w.iter_mut().zip(&self.pivots) {
            let t = e.eigenvectors.transpose() * &*v;
            let t = t.component_div(&e.eigenvalues);
            *v = &e.eigenvectors * t;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            let corr = self.lower[i].transpose() * &w[i + 1];
            w[i] -= corr;
        }
        w
    }
}

fn pivot_inverse(e: &SymmetricEigen<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let inv = DMatrix::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v));
    &e.eigenvectors * inv * e.eigenvectors.transpose()
}

struct Gram {
    diag: Vec<DMatrix<f64>>,
    sub: Vec<DMatrix<f64>>,
}

impl Gram {
    fn new(blocks: &BlockSequence) -> Self {
        let m = blocks.block_dim();
        let diag = blocks
            .blocks
            .iter()
            .map(|d| d * d.transpose() + DMatrix::identity(m, m))
            .collect();
        let sub = blocks.blocks[1..].iter().map(|d| -d).collect();
        Self { diag, sub }
    }

    fn apply(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut y = &self.diag[i] * &x[i];
                if i > 0 {
                    y += &self.sub[i - 1] * &x[i - 1];
                }
                if i + 1 < n {
                    y += self.sub[i].transpose() * &x[i + 1];
                }
                y
            })
            .collect()
    }
}

fn dot(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn normalize(v: &mut [DVector<f64>]) -> Result<()> {
    let n = dot(v, v).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::NonFinite {
            index: 0,
            what: "eigensolver iterate",
        });
    }
    v.iter_mut().for_each(|b| *b /= n);
    Ok(())
}

const SOLVER_SEED: u64 = 0x5ad0;
const INVERSE_ITERATIONS: usize = 60;
const RQI_ITERATIONS: usize = 40;
const BISECTION_STEPS: usize = 200;
const RQ_TOLERANCE: f64 = 1e-10;

/// Smallest eigenvalue of `A Aᵀ` without forming it: inverse iteration at
/// `sigma = 0`, Rayleigh-quotient refinement, an inertia check that no
/// eigenvalue lies below the answer, and bisection on inertia when the
/// iteration stalls or lands on a larger eigenvalue.
pub fn lambda_min_blocktridiag(blocks: &BlockSequence) -> Result<f64> {
    let gram = Gram::new(blocks);
    let (n, m) = (blocks.len(), blocks.block_dim());
    let mut rng = make_rng(SOLVER_SEED, (n * m) as u64);
    let mut x: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_vec(rng.normal_vec(m))).collect();
    normalize(&mut x)?;

    let at_zero = BlockLdl::factor(&gram.diag, &gram.sub, 0.0)?;
    let rq = |v: &[DVector<f64>]| dot(v, &gram.apply(v));
    let mut prev = rq(&x);
    let mut converged = false;
    // Inverse iteration until the quotient settles enough for shifting.
    for _ in 0..INVERSE_ITERATIONS {
        x = at_zero.solve(&x);
        normalize(&mut x)?;
        let cur = rq(&x);
        let rel = (cur - prev).abs() / cur.abs();
        prev = cur;
        if rel < RQ_TOLERANCE {
            converged = true;
            break;
        }
        if rel < 1e-4 {
            break;
        }
    }
    let mut rqi = 0;
    while !converged && rqi < RQI_ITERATIONS {
        rqi += 1;
        let f = match BlockLdl::factor(&gram.diag, &gram.sub, prev) {
            Ok(f) => f,
            // The shift hit an eigenvalue exactly.
            Err(Error::FactorizationBreakdown { .. }) => {
                converged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        x = f.solve(&x);
        normalize(&mut x)?;
        let cur = rq(&x);
        let rel = (cur - prev).abs() / cur.abs();
        prev = cur;
        converged = rel < RQ_TOLERANCE;
    }
    if converged && prev > 0.0 {
        let probe = prev * (1.0 - 1e-9);
        match BlockLdl::factor(&gram.diag, &gram.sub, probe) {
            Ok(f) if f.negative_count() == 0 => return Ok(prev),
            Ok(_) => log::debug!("Rayleigh iteration found a non-minimal eigenvalue {prev:e}; bisecting"),
            Err(_) => return Ok(prev),
        }
    } else {
        log::debug!("Rayleigh iteration stalled at {prev:e}; bisecting");
    }
    // Any Rayleigh quotient bounds lambda_min from above.
    let hi = if prev > 0.0 && prev.is_finite() {
        prev
    } else {
        upper_bound(&gram)
    };
    bisect_lambda_min(&gram, hi)
}

/// Gershgorin upper bound on the spectrum.
fn upper_bound(gram: &Gram) -> f64 {
    let n = gram.diag.len();
    (0..n)
        .flat_map(|i| {
            let m = gram.diag[i].nrows();
            (0..m).map(move |r| {
                let mut s: f64 = gram.diag[i].row(r).iter().map(|v| v.abs()).sum();
                if i > 0 {
                    s += gram.sub[i - 1].row(r).iter().map(|v| v.abs()).sum::<f64>();
                }
                if i + 1 < n {
                    s += gram.sub[i].column(r).iter().map(|v| v.abs()).sum::<f64>();
                }
                s
            })
        })
        .fold(0.0, f64::max)
}

fn bisect_lambda_min(gram: &Gram, hi: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, hi * (1.0 + 1e-12));
    for _ in 0..BISECTION_STEPS {
        if hi - lo <= 1e-14 * hi {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        match BlockLdl::factor(&gram.diag, &gram.sub, mid) {
            Ok(f) if f.negative_count() == 0 => lo = mid,
            Ok(_) => hi = mid,
            Err(_) => return Ok(mid),
        }
    }
    Err(Error::NoConvergence {
        iterations: BISECTION_STEPS,
    })
}

/// `2 delta / sqrt(lambda_min)`.
pub fn shadowing_window(lambda_min: f64, delta: f64) -> Result<f64> {
    if !(lambda_min > 0.0) || !(delta > 0.0) {
        return Err(invalid("shadowing window needs positive lambda_min and delta"));
    }
    Ok(2.0 * delta / lambda_min.sqrt())
}

/// Returns `(2 M lambda^2 delta <= 1, 2 M lambda^2 delta)`.
pub fn check_existence(m: f64, lambda: f64, delta: f64) -> (bool, f64) {
    let value = 2.0 * m * lambda * lambda * delta;
    (value <= 1.0, value)
}

/// Window for `x -> C x` in one dimension over `N` steps.
pub fn scaling_map_epsilon(c: f64, n: usize, delta: f64) -> Result<f64> {
    if !(c > 0.0) || n == 0 || !(delta > 0.0) {
        return Err(invalid("scaling window needs C > 0, N >= 1, delta > 0"));
    }
    let cos = (std::f64::consts::PI / (n + 1) as f64).cos();
    Ok(2.0 * delta / ((c - 1.0).powi(2) + 2.0 * c * (1.0 - cos)).sqrt())
}

/// Window `(1 + l) / (1 - l) delta` for a uniformly hyperbolic linear map
/// with contraction rate `l`.
pub fn hyperbolic_epsilon(contraction: f64, delta: f64) -> Result<f64> {
    if !(contraction > 0.0 && contraction < 1.0) {
        return Err(invalid("contraction must lie in (0, 1)"));
    }
    Ok((1.0 + contraction) / (1.0 - contraction) * delta)
}

/// Per-draw gap between one standard-precision step and the same step in
/// precision `T` from the same input.
pub fn single_step_gaps<M: FlowMap, T: Real>(
    map: &M,
    inputs: &[Vec<f64>],
    spec: PrecisionSpec,
    direction: Direction,
) -> Result<Vec<f64>> {
    try_par_map(inputs.to_vec(), |x| {
        let exact_in: Vec<T> = x.iter().map(|&v| T::with_spec(v, spec)).collect();
        let (fast, exact) = match direction {
            Direction::Forward => (map.forward(&x)?, map.forward(&exact_in)?),
            Direction::Backward => (map.inverse(&x)?, map.inverse(&exact_in)?),
        };
        let fast: Vec<T> = fast.iter().map(|&v| T::with_spec(v, spec)).collect();
        Ok(distance(&fast, &exact))
    })
}

/// Summary of [`single_step_gaps`]: an empirical `delta`.
pub fn estimate_delta<M: FlowMap, T: Real>(
    map: &M,
    inputs: &[Vec<f64>],
    spec: PrecisionSpec,
    direction: Direction,
) -> Result<Summary> {
    Summary::of(&single_step_gaps::<M, T>(map, inputs, spec, direction)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureConfig {
    pub probes: usize,
    pub power_iterations: usize,
    pub seed: u64,
}

impl Default for CurvatureConfig {
    fn default() -> Self {
        Self {
            probes: 8,
            power_iterations: 10,
            seed: 0xc0de,
        }
    }
}

/// Lower estimate of `||∇²F(y)||` by alternating maximization over the
/// directional derivative of the Jacobian, `H(u) = d/dt ∇F(y + t u)`.
fn second_derivative_norm<J>(jac: &J, y: &[f64], cfg: &CurvatureConfig, stream: u64) -> Result<f64>
where
    J: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    let d = y.len();
    let h = 1e-5 * (1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt());
    let mut rng = make_rng(cfg.seed ^ 0x9e37_79b9, stream);
    let mut u = DVector::from_vec(rng.normal_vec(d));
    u /= u.norm();
    let mut best: f64 = 0.0;
    for _ in 0..cfg.power_iterations.max(1) {
        let plus: Vec<f64> = y.iter().zip(u.iter()).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = y.iter().zip(u.iter()).map(|(a, b)| a - h * b).collect();
        let hu = (jac(&plus)? - jac(&minus)?) / (2.0 * h);
        if hu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: stream as usize,
                what: "second-difference operator",
            });
        }
        let svd = hu.svd(false, true);
        let (idx, &s) = svd
            .singular_values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty spectrum");
        best = best.max(s);
        if s == 0.0 {
            break;
        }
        let v_t = svd.v_t.expect("requested right vectors");
        u = v_t.row(idx).transpose();
    }
    Ok(best)
}

/// Sampled estimate of `M = max_k sup_{|v| <= radius} ||∇²F_k(x_k + v)||`
/// over the points where the blocks were taken.
pub fn estimate_m<J>(jac: J, points: &[Vec<f64>], radius: f64, cfg: &CurvatureConfig) -> Result<f64>
where
    J: Fn(usize, &[f64]) -> Result<DMatrix<f64>> + Sync,
{
    Ok(estimate_m_per_point(jac, points, radius, cfg)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// The per-point suprema behind [`estimate_m`]; prefix maxima give `M` for
/// every shorter orbit.
pub fn estimate_m_per_point<J>(jac: J, points: &[Vec<f64>], radius: f64, cfg: &CurvatureConfig) -> Result<Vec<f64>>
where
    J: Fn(usize, &[f64]) -> Result<DMatrix<f64>> + Sync,
{
    if !(radius >= 0.0) {
        return Err(invalid("radius must be nonnegative"));
    }
    try_par_map((0..points.len()).collect(), |k| {
        let x = &points[k];
        let f = |y: &[f64]| jac(k, y);
        let mut best = second_derivative_norm(&f, x, cfg, (k as u64) << 16)?;
        if radius > 0.0 {
            let mut rng = make_rng(cfg.seed, k as u64);
            for p in 0..cfg.probes {
                let mut v = rng.normal_vec(x.len());
                let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v.iter_mut().for_each(|a| *a *= radius / nv);
                let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
                best = best.max(second_derivative_norm(&f, &y, cfg, ((k as u64) << 16) + p as u64 + 1)?);
            }
        }
        Ok(best)
    })
}

/// [`estimate_m`] for the layers of a system along a standard-precision trace.
pub fn estimate_m_along<S: FlowSystem>(
    sys: &S,
    trace: &OrbitTrace<f64>,
    radius: f64,
    cfg: &CurvatureConfig,
) -> Result<f64> {
    let big_n = sys.len();
    let points = &trace.states[..trace.steps()];
    match trace.direction {
        Direction::Forward => estimate_m(|k, y| sys.jacobian(k + 1, y), points, radius, cfg),
        Direction::Backward => estimate_m(|k, y| sys.inverse_jacobian(big_n - k, y), points, radius, cfg),
    }
}

/// One row of the diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowingReport {
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub lambda_min: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// NaN when curvature was not estimated.
    pub m_estimate: f64,
    pub existence_value: f64,
    pub existence_ok: bool,
}

pub const REPORT_CSV_HEADER: [&str; 9] = [
    "N",
    "m",
    "delta",
    "lambda_min",
    "lambda",
    "epsilon",
    "M_estimate",
    "existence_value",
    "existence_ok",
];

impl ShadowingReport {
    /// Window from precomputed `lambda_min`; curvature optional.
    pub fn from_lambda_min(n: usize, m: usize, lambda_min: f64, delta: f64, m_estimate: Option<f64>) -> Result<Self> {
        let epsilon = shadowing_window(lambda_min, delta)?;
        let lambda = lambda_min.powf(-0.5);
        let (existence_ok, existence_value) = match m_estimate {
            Some(mm) => check_existence(mm, lambda, delta),
            None => (false, f64::NAN),
        };
        Ok(Self {
            n,
            m,
            delta,
            lambda_min,
            lambda,
            epsilon,
            m_estimate: m_estimate.unwrap_or(f64::NAN),
            existence_value,
            existence_ok,
        })
    }

    pub fn csv_record(&self) -> [String; 9] {
        [
            self.n.to_string(),
            self.m.to_string(),
            format!("{:e}", self.delta),
            format!("{:e}", self.lambda_min),
            format!("{:e}", self.lambda),
            format!("{:e}", self.epsilon),
            format!("{:e}", self.m_estimate),
            format!("{:e}", self.existence_value),
            self.existence_ok.to_string(),
        ]
    }
}

pub fn write_reports_csv<W: Write>(reports: &[ShadowingReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| invalid(format!("csv write failed: {e}"));
    w.write_record(REPORT_CSV_HEADER).map_err(io)?;
    for r in reports {
        w.write_record(r.csv_record()).map_err(io)?;
    }
    w.flush().map_err(|e| invalid(format!("csv flush failed: {e}")))?;
    Ok(())
}

/// Full diagnostic for a standard-precision trace of a system.
pub fn diagnose<S: FlowSystem>(
    sys: &S,
    trace: &OrbitTrace<f64>,
    delta: f64,
    curvature: Option<&CurvatureConfig>,
) -> Result<ShadowingReport> {
    let blocks = assemble_blocks(sys, trace)?;
    let lambda_min = lambda_min_blocktridiag(&blocks)?;
    let m_est = match curvature {
        Some(cfg) => {
            let radius = shadowing_window(lambda_min, delta)?;
            Some(estimate_m_along(sys, trace, radius, cfg)?)
        }
        None => None,
    };
    ShadowingReport::from_lambda_min(blocks.len(), blocks.block_dim(), lambda_min, delta, m_est)
}

/// Windows for every prefix length in `lengths` of one block sequence.
pub fn window_curve(blocks: &BlockSequence, lengths: &[usize], delta: f64) -> Result<Vec<ShadowingReport>> {
    try_par_map(lengths.to_vec(), |n| {
        let lm = lambda_min_blocktridiag(&blocks.prefix(n)?)?;
        ShadowingReport::from_lambda_min(n, blocks.block_dim(), lm, delta, None)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{backward_orbit, forward_orbit, AffineMap, Repeated};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn constant(c: f64, n: usize) -> BlockSequence {
        BlockSequence::new(
            vec![DMatrix::from_element(1, 1, c); n],
            vec![0.0],
            BlockDirection::Forward,
        )
        .unwrap()
    }

    fn random_blocks(seed: u64, m: usize, n: usize) -> BlockSequence {
        let mut rng = make_rng(seed, 0);
        let blocks = (0..n).map(|_| DMatrix::from_vec(m, m, rng.normal_vec(m * m))).collect();
        BlockSequence::new(blocks, vec![0.0; m], BlockDirection::Forward).unwrap()
    }

    #[test]
    fn block_sequence_validation() {
        assert!(BlockSequence::new(vec![], vec![], BlockDirection::Forward).is_err());
        let bad = vec![DMatrix::from_element(1, 1, f64::NAN)];
        assert!(matches!(
            BlockSequence::new(bad, vec![0.0], BlockDirection::Forward),
            Err(Error::NonFinite { index: 1, .. })
        ));
        let mixed = vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3)];
        assert!(BlockSequence::new(mixed, vec![0.0], BlockDirection::Forward).is_err());
    }

    #[test]
    fn assemble_examples() {
        let sys = Repeated::new(AffineMap::identity(2), 4);
        let tr = forward_orbit(&sys, &[1.0, 2.0], 4).unwrap();
        let b = assemble_blocks(&sys, &tr).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.blocks.iter().all(|d| d == &DMatrix::identity(2, 2)));
        let sys = Repeated::new(AffineMap::scaling(1, 3.0), 3);
        let tr = forward_orbit(&sys, &[0.5], 3).unwrap();
        assert!(assemble_blocks(&sys, &tr)
            .unwrap()
            .blocks
            .iter()
            .all(|d| d[(0, 0)] == 3.0));
        let tr = backward_orbit(&sys, &[0.5], 3).unwrap();
        let b = assemble_blocks(&sys, &tr).unwrap();
        assert_eq!(b.direction, BlockDirection::Backward);
        assert!(b.blocks.iter().all(|d| (d[(0, 0)] - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn joint_blocks_of_scaling() {
        let b = assemble_joint_blocks(&AffineMap::scaling(1, 2.0), &[1.0], 3).unwrap();
        assert_eq!(b.len(), 6);
        assert_eq!(b.orbit_len(), 3);
        assert!(b.blocks.iter().all(|d| d[(0, 0)] == 2.0));
    }

    #[test]
    fn joint_prefix_is_centered() {
        let map = AffineMap::new(DMatrix::from_row_slice(2, 2, &[1.1, 0.3, -0.2, 0.9]), vec![0.5, -1.0]).unwrap();
        let x = [0.7, -0.4];
        let long = assemble_joint_blocks(&map, &x, 6).unwrap();
        let short = assemble_joint_blocks(&map, &x, 2).unwrap();
        // Same pseudo-orbit states, so the central blocks agree exactly.
        assert_eq!(long.prefix(2).unwrap(), short);
        assert!(long.prefix(7).is_err());
        let fwd = BlockSequence::new(long.blocks.clone(), x.to_vec(), BlockDirection::Forward).unwrap();
        assert_eq!(fwd.prefix(7).unwrap().len(), 7);
    }

    #[test]
    fn lambda_min_examples() {
        let b = constant(1.0, 2);
        assert_relative_eq!(lambda_min_blocktridiag(&b).unwrap(), 1.0, max_relative = 1e-10);
        assert_relative_eq!(lambda_min_dense_oracle(&b).unwrap(), 1.0, max_relative = 1e-12);
        let b = constant(2.0, 3);
        let want = 5.0 - 4.0 * (std::f64::consts::PI / 4.0).cos();
        assert_relative_eq!(want, 2.1715729, epsilon = 1e-7);
        assert_relative_eq!(lambda_min_blocktridiag(&b).unwrap(), want, max_relative = 1e-10);
        assert_relative_eq!(lambda_min_dense_oracle(&b).unwrap(), want, max_relative = 1e-10);
        assert_eq!(lambda_min_dense_oracle(&constant(1.0, 1)).unwrap(), 2.0);
        let want = 2.0 * (1.0 - (std::f64::consts::PI / 100.0).cos());
        assert_relative_eq!(want, 9.8688e-4, max_relative = 1e-4);
        assert_relative_eq!(
            lambda_min_dense_oracle(&constant(1.0, 99)).unwrap(),
            want,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            lambda_min_blocktridiag(&constant(1.0, 99)).unwrap(),
            want,
            max_relative = 1e-10
        );
    }

    #[test]
    fn dense_oracle_guard() {
        let b = BlockSequence::new(
            vec![DMatrix::identity(4, 4); 501],
            vec![0.0; 4],
            BlockDirection::Forward,
        )
        .unwrap();
        assert!(matches!(
            lambda_min_dense_oracle(&b),
            Err(Error::SizeGuard { size: 2004, .. })
        ));
        assert!(lambda_min_blocktridiag(&b).is_ok());
    }

    #[test]
    fn solver_matches_oracle_on_random_blocks() {
        let mut rng = make_rng(77, 1);
        for case in 0..100 {
            let m = 1 + rng.index(3);
            let n = 1 + rng.index(20);
            let b = random_blocks(1000 + case, m, n);
            let fast = lambda_min_blocktridiag(&b).unwrap();
            let dense = lambda_min_dense_oracle(&b).unwrap();
            assert!(
                (fast - dense).abs() <= 1e-8 * dense,
                "case {case} m={m} n={n}: {fast} vs {dense}"
            );
            assert!(fast > 0.0);
        }
    }

    #[test]
    fn window_examples() {
        assert_relative_eq!(shadowing_window(4.0, 1e-14).unwrap(), 1e-14);
        let lm = lambda_min_blocktridiag(&constant(2.0, 3)).unwrap();
        assert_relative_eq!(shadowing_window(lm, 1e-14).unwrap(), 1.35720e-14, max_relative = 1e-5);
        let lm = lambda_min_blocktridiag(&constant(1.0, 99)).unwrap();
        let eps = shadowing_window(lm, 1e-14).unwrap();
        assert_relative_eq!(eps, 6.366e-13, max_relative = 1e-3);
        assert!(shadowing_window(0.0, 1e-14).is_err());
        assert!(shadowing_window(1.0, -1.0).is_err());
    }

    #[test]
    fn closed_forms() {
        assert_relative_eq!(
            scaling_map_epsilon(2.0, 3, 1e-14).unwrap(),
            1.35720e-14,
            max_relative = 1e-5
        );
        assert_relative_eq!(
            scaling_map_epsilon(1.0, 1, 1.0).unwrap(),
            2f64.sqrt(),
            max_relative = 1e-12
        );
        assert!(scaling_map_epsilon(1e8, 5, 1.0).unwrap() < 1e-7);
        assert_relative_eq!(hyperbolic_epsilon(0.5, 1e-14).unwrap(), 3e-14, max_relative = 1e-12);
        assert_relative_eq!(hyperbolic_epsilon(0.9, 1.0).unwrap(), 19.0, max_relative = 1e-12);
        assert_relative_eq!(hyperbolic_epsilon(1e-12, 1.0).unwrap(), 1.0, max_relative = 1e-11);
        assert!(hyperbolic_epsilon(1.0, 1.0).is_err());
        assert!(hyperbolic_epsilon(0.0, 1.0).is_err());
    }

    #[test]
    fn pipeline_matches_scaling_closed_form() {
        for c in [0.5, 1.0, 2.0] {
            for n in [1, 2, 10, 100] {
                let sys = Repeated::new(AffineMap::scaling(1, c), n);
                let tr = forward_orbit(&sys, &[0.3], n).unwrap();
                let r = diagnose(&sys, &tr, 1e-14, None).unwrap();
                let want = scaling_map_epsilon(c, n, 1e-14).unwrap();
                assert!(
                    (r.epsilon - want).abs() <= 1e-10 * want,
                    "C={c} N={n}: {} vs {want}",
                    r.epsilon
                );
            }
        }
    }

    #[test]
    fn hyperbolic_window_is_length_independent() {
        let sys = Repeated::new(AffineMap::diagonal(&[0.5, 2.0]), 100);
        let tr = forward_orbit(&sys, &[1e-3, 1e-3], 100).unwrap();
        let b = assemble_blocks(&sys, &tr).unwrap();
        let curve = window_curve(&b, &[10, 100], 1e-14).unwrap();
        let ratio = curve[1].epsilon / curve[0].epsilon;
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
        // Coordinates decouple; the contracting one sets the window.
        let want = scaling_map_epsilon(0.5, 100, 1e-14).unwrap();
        assert!((curve[1].epsilon - want).abs() <= 1e-10 * want);
    }

    #[test]
    fn existence_examples() {
        let (ok, v) = check_existence(1.0, 1.0, 1e-14);
        assert!(ok);
        assert_relative_eq!(v, 2e-14);
        let (ok, v) = check_existence(1e13, 100.0, 1e-14);
        assert!(!ok);
        assert_relative_eq!(v, 2e3, max_relative = 1e-12);
        assert!(check_existence(0.0, 1e10, 1.0).0);
    }

    #[test]
    fn mixflow_blocks_match_dense_oracle() {
        use crate::mixflow::MixFlowMap;
        use crate::targets::{Banana, DiagGaussian};
        let map = MixFlowMap::with_defaults(Banana::default(), 200, 0.02).unwrap();
        let q0 = DiagGaussian::new(vec![0.0, -9.0], vec![0.93, 0.0]).unwrap().augmented();
        for s in 0..3 {
            let x = q0.sample(&mut make_rng(2024, s));
            let sys = Repeated::new(map.clone(), 200);
            let fwd = assemble_blocks(&sys, &forward_orbit(&sys, &x, 200).unwrap()).unwrap();
            let joint = assemble_joint_blocks(&map, &x, 100).unwrap();
            for b in [fwd, joint] {
                let fast = lambda_min_blocktridiag(&b).unwrap();
                let dense = lambda_min_dense_oracle(&b).unwrap();
                // Both routes are backward stable: absolute accuracy ~ eps |AAᵀ|.
                let top = SymmetricEigen::new(dense_gram(&b).unwrap()).eigenvalues.max();
                let tol = 1e-8 * dense + 1e-13 * top;
                assert!(
                    (fast - dense).abs() <= tol,
                    "seed {s}: {fast:e} vs {dense:e}, top {top:e}"
                );
            }
        }
    }

    /// `F(x) = a x^2` on the positive half-line.
    struct Quadratic(f64);

    impl FlowMap for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn forward_with_logdet<T: Real>(&self, z: &[T]) -> Result<(Vec<T>, T)> {
            let y = z[0].square() * self.0;
            let ld = (z[0].clone() * (2.0 * self.0)).abs().ln();
            Ok((vec![y], ld))
        }
        fn inverse_with_logdet<T: Real>(&self, z: &[T]) -> Result<(Vec<T>, T)> {
            let x = (z[0].clone() / self.0).sqrt();
            let ld = (x.clone() * (2.0 * self.0)).abs().ln();
            Ok((vec![x], ld))
        }
        fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_element(1, 1, 2.0 * self.0 * z[0]))
        }
    }

    #[test]
    fn curvature_examples() {
        let cfg = CurvatureConfig::default();
        let lin = Repeated::new(AffineMap::scaling(2, 1.5), 5);
        let tr = forward_orbit(&lin, &[0.1, 0.2], 5).unwrap();
        assert_eq!(estimate_m_along(&lin, &tr, 0.1, &cfg).unwrap(), 0.0);
        let half = Quadratic(0.5);
        let m = estimate_m(|_, y| half.jacobian(y), &[vec![1.0]], 0.0, &cfg).unwrap();
        assert_relative_eq!(m, 1.0, max_relative = 1e-6);
        let sq = Quadratic(1.0);
        let m = estimate_m(|_, y| sq.jacobian(y), &[vec![3.0]], 0.1, &cfg).unwrap();
        assert_relative_eq!(m, 2.0, max_relative = 1e-6);
    }

    #[test]
    fn delta_of_f64_against_itself_is_zero() {
        let map = AffineMap::scaling(2, 1.1);
        let inputs = vec![vec![0.3, 0.1]; 5];
        let s = estimate_delta::<_, f64>(&map, &inputs, PrecisionSpec::Standard64, Direction::Forward).unwrap();
        assert_eq!(s.max, 0.0);
    }

    #[test]
    fn report_fields_and_csv() {
        let r = ShadowingReport::from_lambda_min(3, 1, 4.0, 1e-14, Some(1.0)).unwrap();
        assert_eq!(r.epsilon, 2.0 * r.delta * r.lambda_min.powf(-0.5));
        assert!(r.existence_ok);
        let mut buf = Vec::new();
        write_reports_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,m,delta,lambda_min,lambda,epsilon,M_estimate,existence_value,existence_ok\n3,1,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn gram_is_positive_definite(seed in 0u64..10_000, m in 1usize..4, n in 1usize..12) {
            let b = random_blocks(seed, m, n);
            prop_assert!(lambda_min_blocktridiag(&b).unwrap() > 0.0);
        }

        #[test]
        fn prefixes_give_nondecreasing_windows(seed in 0u64..10_000, m in 1usize..4) {
            let b = random_blocks(seed, m, 12);
            let curve = window_curve(&b, &[1, 3, 6, 12], 1e-14).unwrap();
            for w in curve.windows(2) {
                prop_assert!(w[1].epsilon >= w[0].epsilon * (1.0 - 1e-9));
            }
        }
    }
}
