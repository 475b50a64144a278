//! Dual-precision scalar contract.
//!
//! Every map, target, and estimator in the crate is written once against
//! [`Real`] and runs either in IEEE binary64 or in MPFR software floats of a
//! chosen mantissa width. Extended values carry their own precision, so
//! constants are created with [`Real::constant`] from an existing value.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};
use crate::special;

/// Default mantissa width of "exact" orbits.
pub const DEFAULT_EXTENDED_BITS: u32 = 2048;
/// Smallest accepted extended mantissa width.
pub const MIN_EXTENDED_BITS: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecisionSpec {
    Standard64,
    Extended { mantissa_bits: u32 },
}

impl PrecisionSpec {
    pub fn extended(mantissa_bits: u32) -> Result<Self> {
        if mantissa_bits < MIN_EXTENDED_BITS {
            return Err(Error::invalid(format!(
                "extended precision needs at least {MIN_EXTENDED_BITS} mantissa bits, got {mantissa_bits}"
            )));
        }
        Ok(PrecisionSpec::Extended { mantissa_bits })
    }

    pub fn is_extended(&self) -> bool {
        matches!(self, PrecisionSpec::Extended { .. })
    }

    pub fn mantissa_bits(&self) -> u32 {
        match *self {
            PrecisionSpec::Standard64 => 53,
            PrecisionSpec::Extended { mantissa_bits } => mantissa_bits,
        }
    }
}

impl Default for PrecisionSpec {
    fn default() -> Self {
        PrecisionSpec::Extended {
            mantissa_bits: DEFAULT_EXTENDED_BITS,
        }
    }
}

impl fmt::Display for PrecisionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrecisionSpec::Standard64 => write!(f, "f64"),
            PrecisionSpec::Extended { mantissa_bits } => write!(f, "ext{mantissa_bits}"),
        }
    }
}

/// Real scalar usable at either precision.
pub trait Real:
    Clone
    + fmt::Debug
    + Send
    + Sync
    + PartialOrd
    + PartialOrd<f64>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + for<'a> Add<&'a Self, Output = Self>
    + for<'a> Sub<&'a Self, Output = Self>
    + for<'a> Mul<&'a Self, Output = Self>
    + for<'a> Div<&'a Self, Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + for<'a> AddAssign<&'a Self>
    + SubAssign
    + for<'a> SubAssign<&'a Self>
    + AddAssign<f64>
    + MulAssign<f64>
{
    /// `v` at the given precision. Binary64 ignores `spec`.
    fn with_spec(v: f64, spec: PrecisionSpec) -> Self;
    /// `v` at the precision of `self`.
    fn constant(&self, v: f64) -> Self;
    fn zero_like(&self) -> Self {
        self.constant(0.0)
    }
    /// Round to nearest binary64.
    fn to_f64(&self) -> f64;
    fn precision(&self) -> PrecisionSpec;
    fn pi(&self) -> Self;

    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn ln_1p(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn abs(&self) -> Self;
    fn floor(&self) -> Self;
    fn square(&self) -> Self {
        self.clone() * self
    }
    fn is_finite(&self) -> bool;

    /// Standard-normal CDF.
    fn normal_cdf(&self) -> Self;
    /// Inverse standard-normal CDF; infinite at 0 and 1.
    fn normal_quantile(&self) -> Self;
    /// Distance kept from {0, 1} before taking a quantile.
    fn quantile_clamp(&self) -> Self;

    /// Fractional part `x - floor(x)` in `[0, 1)`.
    fn fract_unit(&self) -> Self {
        let f = self.clone() - self.floor();
        if f >= 1.0 {
            f - 1.0
        } else {
            f
        }
    }

    fn normal_log_pdf(&self) -> Self {
        let half_ln_2pi = (self.pi() * 2.0).ln() * 0.5;
        -(self.square() * 0.5) - half_ln_2pi
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn with_spec(v: f64, _spec: PrecisionSpec) -> Self {
        v
    }
    fn constant(&self, v: f64) -> Self {
        v
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn precision(&self) -> PrecisionSpec {
        PrecisionSpec::Standard64
    }
    fn pi(&self) -> Self {
        std::f64::consts::PI
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn ln_1p(&self) -> Self {
        f64::ln_1p(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn floor(&self) -> Self {
        f64::floor(*self)
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn normal_cdf(&self) -> Self {
        special::normal_cdf(*self)
    }
    fn normal_quantile(&self) -> Self {
        special::normal_quantile(*self)
    }
    fn quantile_clamp(&self) -> Self {
        1e-300
    }
    fn normal_log_pdf(&self) -> Self {
        special::normal_log_pdf(*self)
    }
}

#[cfg(feature = "extended")]
mod ext {
    use rug::float::Constant;
    use rug::Float;

    use super::*;

    /// Guard bits used inside the quantile refinement.
    const GUARD_BITS: u32 = 32;

    fn cdf_at(x: &Float, prec: u32) -> Float {
        // Phi(x) = erfc(-x / sqrt 2) / 2
        let sqrt2 = Float::with_val(prec, 2u32).sqrt();
        let arg = Float::with_val(prec, -x) / sqrt2;
        arg.erfc() / 2u32
    }

    /// Sixth-order refinement of the f64 quantile: with `t = (p - Phi(x)) / phi(x)`
    /// the root is `x + t + x t^2/2 + (1+2x^2) t^3/6 + (7x+6x^3) t^4/24
    /// + (7+46x^2+24x^4) t^5/120 + (127x+326x^3+120x^5) t^6/720 + O(t^7)`,
    /// so each pass multiplies the correct bits by seven. `p <= 1/2`.
    fn lower_quantile(p: &Float, prec: u32) -> Float {
        let target = prec + GUARD_BITS;
        let pf = p.to_f64();
        let (mut x, mut acc) = if pf > f64::MIN_POSITIVE {
            (Float::with_val(target, special::normal_quantile(pf)), 45u32)
        } else {
            // Beyond binary64: Mills-ratio asymptotics,
            // x^2 = -2 ln p - ln(2 pi x^2), by fixed-point iteration.
            let lnp = Float::with_val(target, p.ln_ref()).to_f64();
            let mut y = (-2.0 * lnp).sqrt();
            for _ in 0..8 {
                y = (-2.0 * lnp - (2.0 * std::f64::consts::PI * y * y).ln()).sqrt();
            }
            (Float::with_val(target, -y), 4u32)
        };
        for _ in 0..100 {
            let work = (acc.saturating_mul(7) + GUARD_BITS).min(target);
            let xw = Float::with_val(work, &x);
            let x2 = Float::with_val(work, xw.square_ref());
            let g = (Float::with_val(work, Constant::Pi) * 2u32).sqrt() * Float::with_val(work, &x2 / 2u32).exp();
            let t = (Float::with_val(work, p) - cdf_at(&xw, work)) * g;
            let c2 = Float::with_val(work, &xw / 2u32);
            let c3 = (Float::with_val(work, &x2 * 2u32) + 1u32) / 6u32;
            let c4 = (Float::with_val(work, &x2 * 6u32) + 7u32) * &xw / 24u32;
            let c5 = ((Float::with_val(work, &x2 * 24u32) + 46u32) * &x2 + 7u32) / 120u32;
            let c6 = ((Float::with_val(work, &x2 * 120u32) + 326u32) * &x2 + 127u32) * &xw / 720u32;
            // Horner in t: t (1 + t (c2 + t (c3 + t (c4 + t (c5 + t c6))))).
            let mut poly = c6;
            for c in [c5, c4, c3, c2] {
                poly = poly * &t + c;
            }
            let step = (poly * &t + 1u32) * &t;
            let step_bits = if step.is_zero() {
                u32::MAX / 8
            } else {
                let scale = xw.get_exp().unwrap_or(1).max(1);
                (scale - step.get_exp().unwrap_or(i32::MIN / 2)).max(0) as u32
            };
            x = Float::with_val(target, xw + step);
            acc = step_bits.saturating_mul(7).saturating_sub(4).min(work - GUARD_BITS / 2);
            if work == target && acc >= prec + 4 {
                break;
            }
        }
        Float::with_val(prec, x)
    }

    impl Real for Float {
        /// `Standard64` maps to a 53-bit MPFR value.
        fn with_spec(v: f64, spec: PrecisionSpec) -> Self {
            Float::with_val(spec.mantissa_bits(), v)
        }
        fn constant(&self, v: f64) -> Self {
            Float::with_val(self.prec(), v)
        }
        fn to_f64(&self) -> f64 {
            Float::to_f64(self)
        }
        fn precision(&self) -> PrecisionSpec {
            PrecisionSpec::Extended {
                mantissa_bits: self.prec(),
            }
        }
        fn pi(&self) -> Self {
            Float::with_val(self.prec(), Constant::Pi)
        }
        fn exp(&self) -> Self {
            Float::with_val(self.prec(), self.exp_ref())
        }
        fn ln(&self) -> Self {
            Float::with_val(self.prec(), self.ln_ref())
        }
        fn ln_1p(&self) -> Self {
            Float::with_val(self.prec(), self.ln_1p_ref())
        }
        fn sin(&self) -> Self {
            Float::with_val(self.prec(), self.sin_ref())
        }
        fn cos(&self) -> Self {
            Float::with_val(self.prec(), self.cos_ref())
        }
        fn sqrt(&self) -> Self {
            Float::with_val(self.prec(), self.sqrt_ref())
        }
        fn abs(&self) -> Self {
            Float::with_val(self.prec(), self.abs_ref())
        }
        fn floor(&self) -> Self {
            Float::with_val(self.prec(), self.floor_ref())
        }
        fn square(&self) -> Self {
            Float::with_val(self.prec(), self.square_ref())
        }
        fn is_finite(&self) -> bool {
            Float::is_finite(self)
        }
        fn normal_cdf(&self) -> Self {
            cdf_at(self, self.prec())
        }
        fn normal_quantile(&self) -> Self {
            let prec = self.prec();
            if self.is_nan() || *self < 0.0 || *self > 1.0 {
                return Float::with_val(prec, rug::float::Special::Nan);
            }
            if self.is_zero() {
                return Float::with_val(prec, rug::float::Special::NegInfinity);
            }
            if *self == 1.0 {
                return Float::with_val(prec, rug::float::Special::Infinity);
            }
            if *self <= 0.5 {
                lower_quantile(self, prec)
            } else {
                let upper = Float::with_val(prec + GUARD_BITS, 1u32 - self);
                -lower_quantile(&upper, prec)
            }
        }
        fn quantile_clamp(&self) -> Self {
            let bits = self.prec() as i32 - 10;
            Float::with_val(self.prec(), 1u32) >> bits
        }
        fn normal_log_pdf(&self) -> Self {
            let prec = self.prec();
            let ln2pi = (Float::with_val(prec, Constant::Pi) * 2u32).ln();
            -(Float::with_val(prec, self.square_ref()) + ln2pi) / 2u32
        }
    }
}

#[cfg(feature = "extended")]
pub use rug::Float as ExtFloat;

/// Embed 64-bit values into extended precision. Exact, since every binary64
/// value fits in a mantissa of at least 53 bits.
#[cfg(feature = "extended")]
pub fn promote(x: &[f64], spec: PrecisionSpec) -> Result<Vec<ExtFloat>> {
    match spec {
        PrecisionSpec::Standard64 => Err(Error::invalid("promote needs an extended precision spec")),
        PrecisionSpec::Extended { mantissa_bits } => {
            if mantissa_bits < MIN_EXTENDED_BITS {
                return Err(Error::invalid("mantissa too narrow"));
            }
            Ok(x.iter().map(|&v| ExtFloat::with_val(mantissa_bits, v)).collect())
        }
    }
}

/// Round each coordinate to the nearest binary64 (ties to even). Finite
/// values beyond the binary64 range are an error.
pub fn demote<T: Real>(x: &[T]) -> Result<Vec<f64>> {
    x.iter()
        .map(|v| {
            let f = v.to_f64();
            if f.is_infinite() && v.is_finite() {
                Err(Error::Overflow {
                    value: format!("{v:?}"),
                })
            } else {
                Ok(f)
            }
        })
        .collect()
}

/// Convert a 64-bit vector to the precision of `like`.
pub fn lift<T: Real>(like: &T, x: &[f64]) -> Vec<T> {
    x.iter().map(|&v| like.constant(v)).collect()
}
