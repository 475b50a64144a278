//! Finite flow systems, forward/backward orbits at either precision, and
//! orbit-level error measurements.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::precision::{demote, PrecisionSpec, Real};

/// One invertible map with a tractable log-Jacobian-determinant.
pub trait FlowMap: Send + Sync {
    fn dim(&self) -> usize;

    /// `(F z, log |det ∇F(z)|)`.
    fn forward_with_logdet<T: Real>(&self, z: &[T]) -> Result<(Vec<T>, T)>;

    /// `(B z, log |det ∇F(B z)|)` with `B = F^{-1}`.
    fn inverse_with_logdet<T: Real>(&self, z: &[T]) -> Result<(Vec<T>, T)>;

    fn forward<T: Real>(&self, z: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_with_logdet(z)?.0)
    }

    fn inverse<T: Real>(&self, z: &[T]) -> Result<Vec<T>> {
        Ok(self.inverse_with_logdet(z)?.0)
    }

    fn log_jac_det<T: Real>(&self, z: &[T]) -> Result<T> {
        Ok(self.forward_with_logdet(z)?.1)
    }

    /// `∇F(z)`.
    fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>>;

    /// `∇_z log |det ∇F(z)|`; central differences unless overridden.
    fn grad_log_jac_det(&self, z: &[f64]) -> Result<Vec<f64>> {
        let h = 1e-6 * (1.0 + z.iter().map(|v| v * v).sum::<f64>().sqrt());
        let mut zp = z.to_vec();
        let mut out = Vec::with_capacity(z.len());
        for i in 0..z.len() {
            zp[i] = z[i] + h;
            let up = self.log_jac_det(&zp)?;
            zp[i] = z[i] - h;
            let down = self.log_jac_det(&zp)?;
            zp[i] = z[i];
            out.push((up - down) / (2.0 * h));
        }
        Ok(out)
    }

    /// `∇B(z)`; by default the inverse of `∇F` at `B z`.
    fn inverse_jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let y = self.inverse(z)?;
        self.jacobian(&y)?
            .try_inverse()
            .ok_or_else(|| invalid("singular Jacobian"))
    }
}

/// A length-`N` sequence of maps `F_1 … F_N`; layers are 1-based.
pub trait FlowSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn forward_with_logdet<T: Real>(&self, layer: usize, x: &[T]) -> Result<(Vec<T>, T)>;
    /// `(F_layer^{-1}(x), log J_layer(F_layer^{-1}(x)))`.
    fn inverse_with_logdet<T: Real>(&self, layer: usize, x: &[T]) -> Result<(Vec<T>, T)>;
    fn jacobian(&self, layer: usize, x: &[f64]) -> Result<DMatrix<f64>>;
    fn inverse_jacobian(&self, layer: usize, x: &[f64]) -> Result<DMatrix<f64>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn forward<T: Real>(&self, layer: usize, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_with_logdet(layer, x)?.0)
    }
    fn inverse<T: Real>(&self, layer: usize, x: &[T]) -> Result<Vec<T>> {
        Ok(self.inverse_with_logdet(layer, x)?.0)
    }
    fn log_jac_det<T: Real>(&self, layer: usize, x: &[T]) -> Result<T> {
        Ok(self.forward_with_logdet(layer, x)?.1)
    }
}

fn check_layer(layer: usize, len: usize) -> Result<usize> {
    if layer == 0 || layer > len {
        return Err(invalid(format!("layer {layer} outside 1..={len}")));
    }
    Ok(layer - 1)
}

/// The same map applied `len` times.
#[derive(Debug, Clone)]
pub struct Repeated<M> {
    pub map: M,
    pub len: usize,
}

impl<M: FlowMap> Repeated<M> {
    pub fn new(map: M, len: usize) -> Self {
        Self { map, len }
    }
}

impl<M: FlowMap> FlowSystem for Repeated<M> {
    fn dim(&self) -> usize {
        self.map.dim()
    }
    fn len(&self) -> usize {
        self.len
    }
    fn forward_with_logdet<T: Real>(&self, layer: usize, x: &[T]) -> Result<(Vec<T>, T)> {
        check_layer(layer, self.len)?;
        self.map.forward_with_logdet(x)
    }
    fn inverse_with_logdet<T: Real>(&self, layer: usize, x: &[T]) -> Result<(Vec<T>, T)> {
        check_layer(layer, self.len)?;
        self.map.inverse_with_logdet(x)
    }
    fn jacobian(&self, layer: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        check_layer(layer, self.len)?;
        self.map.jacobian(x)
    }
    fn inverse_jacobian(&self, layer: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        check_layer(layer, self.len)?;
        self.map.inverse_jacobian(x)
    }
}

/// Distinct maps per layer.
#[derive(Debug, Clone)]
pub struct Layers<M>(pub Vec<M>);

impl<M: FlowMap> FlowSystem for Layers<M> {
    fn dim(&self) -> usize {
        self.0.first().map_or(0, |m| m.dim())
    }
    fn len(&self) -> usize {
        self.0.len()
    }
    fn forward_with_logdet<T: Real>(&self, layer: usize, x: &[T]) -> Result<(Vec<T>, T)> {
        self.0[check_layer(layer, self.0.len())?].forward_with_logdet(x)
    }
    fn inverse_with_logdet<T: Real>(&self, layer: usize, x: &[T]) -> Result<(Vec<T>, T)> {
        self.0[check_layer(layer, self.0.len())?].inverse_with_logdet(x)
    }
    fn jacobian(&self, layer: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        self.0[check_layer(layer, self.0.len())?].jacobian(x)
    }
    fn inverse_jacobian(&self, layer: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        self.0[check_layer(layer, self.0.len())?].inverse_jacobian(x)
    }
}

/// `x ↦ A x + b` with the inverse solved in working precision.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub shift: Vec<f64>,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, shift: Vec<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != shift.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix with shift of length {}",
                matrix.nrows(),
                matrix.ncols(),
                shift.len()
            )));
        }
        if matrix.clone().try_inverse().is_none() {
            return Err(invalid("affine map matrix is singular"));
        }
        Ok(Self { matrix, shift })
    }

    pub fn identity(d: usize) -> Self {
        Self::scaling(d, 1.0)
    }

    /// `x ↦ c x`.
    pub fn scaling(d: usize, c: f64) -> Self {
        Self::diagonal(&vec![c; d])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        Self {
            matrix: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)),
            shift: vec![0.0; d],
        }
    }

    /// `x ↦ x + b`.
    pub fn translation(shift: Vec<f64>) -> Self {
        Self {
            matrix: DMatrix::identity(shift.len(), shift.len()),
            shift,
        }
    }

    fn apply<T: Real>(&self, x: &[T]) -> Vec<T> {
        let d = self.shift.len();
        (0..d)
            .map(|i| {
                let mut acc = x[0].constant(self.shift[i]);
                for j in 0..d {
                    let a = self.matrix[(i, j)];
                    if a != 0.0 {
                        acc += x[j].clone() * a;
                    }
                }
                acc
            })
            .collect()
    }

    /// LU with partial pivoting in precision `T`: returns (solution of
    /// `A y = rhs`, log |det A|).
    fn solve<T: Real>(&self, rhs: Vec<T>) -> (Vec<T>, T) {
        let d = rhs.len();
        let mut a: Vec<Vec<T>> = (0..d)
            .map(|i| (0..d).map(|j| rhs[0].constant(self.matrix[(i, j)])).collect())
            .collect();
        let mut b = rhs;
        let mut log_det = b[0].zero_like();
        for col in 0..d {
            let piv = (col..d)
                .max_by(|&p, &q| {
                    a[p][col]
                        .abs()
                        .partial_cmp(&a[q][col].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(col);
            a.swap(col, piv);
            b.swap(col, piv);
            let p = a[col][col].clone();
            log_det += p.abs().ln();
            for r in col + 1..d {
                let f = a[r][col].clone() / &p;
                for c in col..d {
                    let t = f.clone() * &a[col][c];
                    a[r][c] -= t;
                }
                let t = f * &b[col];
                b[r] -= t;
            }
        }
        for r in (0..d).rev() {
            let mut acc = b[r].clone();
            for c in r + 1..d {
                acc -= a[r][c].clone() * &b[c];
            }
            b[r] = acc / &a[r][r];
        }
        (b, log_det)
    }
}

impl FlowMap for AffineMap {
    fn dim(&self) -> usize {
        self.shift.len()
    }

    fn forward_with_logdet<T: Real>(&self, z: &[T]) -> Result<(Vec<T>, T)> {
        let y = self.apply(z);
        let (_, log_det) = self.solve(z.to_vec());
        Ok((y, log_det))
    }

    fn inverse_with_logdet<T: Real>(&self, z: &[T]) -> Result<(Vec<T>, T)> {
        let rhs = z.iter().zip(&self.shift).map(|(v, s)| v.clone() - *s).collect();
        Ok(self.solve(rhs))
    }

    fn jacobian(&self, _z: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.matrix.clone())
    }

    fn grad_log_jac_det(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; z.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

/// `states[0]` is the origin; `states[k]` is `k` steps along `direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitTrace<T> {
    pub direction: Direction,
    pub states: Vec<Vec<T>>,
    pub precision: PrecisionSpec,
}

impl<T: Real> OrbitTrace<T> {
    pub fn origin(&self) -> &[T] {
        &self.states[0]
    }

    /// Number of steps `N` (one less than the number of states).
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &[T] {
        self.states.last().expect("trace has an origin")
    }

    pub fn demoted(&self) -> Result<OrbitTrace<f64>> {
        Ok(OrbitTrace {
            direction: self.direction,
            states: self.states.iter().map(|s| demote(s)).collect::<Result<_>>()?,
            precision: PrecisionSpec::Standard64,
        })
    }
}

impl OrbitTrace<f64> {
    /// Lossless conversion to precision `T`.
    pub fn lifted<T: Real>(&self, spec: PrecisionSpec) -> OrbitTrace<T> {
        OrbitTrace {
            direction: self.direction,
            states: self
                .states
                .iter()
                .map(|s| s.iter().map(|&v| T::with_spec(v, spec)).collect())
                .collect(),
            precision: spec,
        }
    }
}

fn check_finite<T: Real>(x: &[T], index: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            index,
            what: "orbit state",
        })
    }
}

/// `x, F_1 x, F_2 F_1 x, …` for `n` steps at the precision of `x`.
pub fn forward_orbit<S: FlowSystem, T: Real>(sys: &S, x: &[T], n: usize) -> Result<OrbitTrace<T>> {
    if n > sys.len() {
        return Err(invalid(format!("orbit length {n} exceeds flow length {}", sys.len())));
    }
    if x.len() != sys.dim() {
        return Err(Error::ShapeMismatch(format!(
            "state has {} entries, system dimension is {}",
            x.len(),
            sys.dim()
        )));
    }
    check_finite(x, 0)?;
    let mut states = Vec::with_capacity(n + 1);
    states.push(x.to_vec());
    for k in 1..=n {
        let next = sys.forward(k, &states[k - 1])?;
        check_finite(&next, k)?;
        states.push(next);
    }
    Ok(OrbitTrace {
        direction: Direction::Forward,
        precision: x[0].precision(),
        states,
    })
}

/// `x, B_1 x, B_2 B_1 x, …` with `B_k = F_{N-k+1}^{-1}`.
pub fn backward_orbit<S: FlowSystem, T: Real>(sys: &S, x: &[T], n: usize) -> Result<OrbitTrace<T>> {
    let big_n = sys.len();
    if n > big_n {
        return Err(invalid(format!("orbit length {n} exceeds flow length {big_n}")));
    }
    if x.len() != sys.dim() {
        return Err(Error::ShapeMismatch(format!(
            "state has {} entries, system dimension is {}",
            x.len(),
            sys.dim()
        )));
    }
    check_finite(x, 0)?;
    let mut states = Vec::with_capacity(n + 1);
    states.push(x.to_vec());
    for k in 1..=n {
        let next = sys.inverse(big_n - k + 1, &states[k - 1])?;
        check_finite(&next, k)?;
        states.push(next);
    }
    Ok(OrbitTrace {
        direction: Direction::Backward,
        precision: x[0].precision(),
        states,
    })
}

/// Euclidean distance between two vectors at a common precision.
pub fn distance<T: Real>(a: &[T], b: &[T]) -> f64 {
    let mut acc = a[0].zero_like();
    for (x, y) in a.iter().zip(b) {
        acc += (x.clone() - y).square();
    }
    acc.sqrt().to_f64()
}

/// Per-step errors `e_k = |a_k - b_k|`, `e_0 = 0` for a shared origin.
pub fn orbit_deviation<T: Real>(a: &OrbitTrace<T>, b: &OrbitTrace<T>) -> Result<Vec<f64>> {
    if a.direction != b.direction || a.states.len() != b.states.len() {
        return Err(Error::ShapeMismatch(format!(
            "traces differ: {:?}/{} vs {:?}/{}",
            a.direction,
            a.states.len(),
            b.direction,
            b.states.len()
        )));
    }
    if a.states.iter().zip(&b.states).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::ShapeMismatch("state dimensions differ".into()));
    }
    Ok(a.states.iter().zip(&b.states).map(|(x, y)| distance(x, y)).collect())
}

/// Layer-wise error bound `delta * sum_{n=0}^{N-1} prod_{j=n+2}^{N} Lip_j`.
pub fn layerwise_bound(delta: f64, lipschitz: &[f64]) -> Result<f64> {
    if !(delta > 0.0) || lipschitz.iter().any(|&l| !(l > 0.0)) {
        return Err(invalid("layerwise bound needs positive delta and Lipschitz constants"));
    }
    // Walk n downward from N-1; the product for n covers Lip_{n+2..N}.
    let big_n = lipschitz.len();
    let mut sum = 0.0;
    let mut prod = 1.0;
    for n in (0..big_n).rev() {
        if n + 2 <= big_n {
            prod *= lipschitz[n + 1];
        }
        sum += prod;
    }
    Ok(delta * sum)
}

/// One standard-precision step from each demoted exact state, measured
/// against the next exact state.
pub fn single_step_errors<S: FlowSystem, T: Real>(sys: &S, exact: &OrbitTrace<T>) -> Result<Vec<f64>> {
    if !exact.precision.is_extended() {
        return Err(Error::PrecisionMismatch);
    }
    let big_n = sys.len();
    let mut out = Vec::with_capacity(exact.steps());
    for k in 1..=exact.steps() {
        let prev = demote(&exact.states[k - 1])?;
        let step = match exact.direction {
            Direction::Forward => sys.forward(k, &prev)?,
            Direction::Backward => sys.inverse(big_n - k + 1, &prev)?,
        };
        let target = &exact.states[k];
        let lifted: Vec<T> = step.iter().map(|&v| target[0].constant(v)).collect();
        out.push(distance(&lifted, target));
    }
    Ok(out)
}
