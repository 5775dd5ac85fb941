//! Standardized smoothing densities: Gaussian, logistic, Gumbel, Cauchy, Laplace
//! and triangular, each with unit scale and zero location.
//!
//! Every distribution exposes its density, the score `d/de (-log density)`, a
//! CDF and its inverse. Samplers push a uniform draw through the inverse CDF so
//! that Monte-Carlo and quasi-Monte-Carlo plans share one transform.
//!
//! Laplace and triangular densities are only absolutely continuous. Their score
//! is undefined on a null set (the kinks, and for the triangular density also
//! everything outside the open support); [`Distribution::score`] reports those
//! points as `None` and the estimators mask them out.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::special;

/// Unit points are kept inside `[UNIT_MARGIN, 1 - UNIT_MARGIN]` so that inverse
/// CDFs with unbounded support stay finite.
pub const UNIT_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distribution {
    Gaussian,
    Logistic,
    Gumbel,
    Cauchy,
    Laplace,
    Triangular,
}

impl Distribution {
    pub const ALL: [Distribution; 6] = [
        Distribution::Gaussian,
        Distribution::Logistic,
        Distribution::Gumbel,
        Distribution::Cauchy,
        Distribution::Laplace,
        Distribution::Triangular,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Distribution::Gaussian => "gaussian",
            Distribution::Logistic => "logistic",
            Distribution::Gumbel => "gumbel",
            Distribution::Cauchy => "cauchy",
            Distribution::Laplace => "laplace",
            Distribution::Triangular => "triangular",
        }
    }

    /// Whether `density(-e) == density(e)`. Only the Gumbel is skewed.
    pub fn is_symmetric(self) -> bool {
        !matches!(self, Distribution::Gumbel)
    }

    /// Closed support interval; infinite bounds for full-support densities.
    pub fn support<T: Scalar>(self) -> (T, T) {
        match self {
            Distribution::Triangular => (-T::one(), T::one()),
            _ => (T::neg_infinity(), T::infinity()),
        }
    }

    pub fn density<T: Scalar>(self, e: T) -> T {
        let one = T::one();
        let two = T::lit(2.0);
        match self {
            Distribution::Gaussian => T::lit(special::FRAC_1_SQRT_2PI) * (-e * e / two).exp(),
            Distribution::Logistic => {
                let z = (-e.abs()).exp();
                z / ((one + z) * (one + z))
            }
            Distribution::Gumbel => (-e - (-e).exp()).exp(),
            Distribution::Cauchy => T::FRAC_1_PI() / (one + e * e),
            Distribution::Laplace => (-e.abs()).exp() / two,
            Distribution::Triangular => (one - e.abs()).max(T::zero()),
        }
    }

    /// Natural log of the density; `-inf` outside the support.
    pub fn log_density<T: Scalar>(self, e: T) -> T {
        let one = T::one();
        match self {
            Distribution::Gaussian => -e * e / T::lit(2.0) - T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()),
            Distribution::Logistic => -e.abs() - T::lit(2.0) * (-e.abs()).exp().ln_1p(),
            Distribution::Gumbel => -e - (-e).exp(),
            Distribution::Cauchy => -T::PI().ln() - (e * e).ln_1p(),
            Distribution::Laplace => -T::LN_2() - e.abs(),
            Distribution::Triangular => {
                if e.abs() < one {
                    (one - e.abs()).ln()
                } else {
                    T::neg_infinity()
                }
            }
        }
    }

    /// True when the score is undefined at `e` (exact floating-point membership).
    pub fn in_undefined_set<T: Scalar>(self, e: T) -> bool {
        match self {
            Distribution::Laplace => e == T::zero(),
            Distribution::Triangular => e == T::zero() || !(e.abs() < T::one()),
            _ => false,
        }
    }

    /// Score `d/de (-log density(e))`, or `None` on the undefined set.
    pub fn score<T: Scalar>(self, e: T) -> Option<T> {
        if self.in_undefined_set(e) {
            return None;
        }
        let one = T::one();
        let odd = |magnitude: T| if e < T::zero() { -magnitude } else { magnitude };
        Some(match self {
            Distribution::Gaussian => e,
            Distribution::Logistic => odd((e.abs() / T::lit(2.0)).tanh()),
            Distribution::Gumbel => one - (-e).exp(),
            Distribution::Cauchy => T::lit(2.0) * e / (one + e * e),
            Distribution::Laplace => odd(one),
            Distribution::Triangular => odd(one / (one - e.abs())),
        })
    }

    pub fn cdf<T: Scalar>(self, e: T) -> T {
        let one = T::one();
        let half = T::lit(0.5);
        match self {
            Distribution::Gaussian => T::lit(special::normal_cdf(e.as_f64())),
            Distribution::Logistic => one / (one + (-e).exp()),
            Distribution::Gumbel => (-(-e).exp()).exp(),
            Distribution::Cauchy => half + e.atan() / T::PI(),
            Distribution::Laplace => {
                if e < T::zero() {
                    half * e.exp()
                } else {
                    one - half * (-e).exp()
                }
            }
            Distribution::Triangular => {
                if e <= -one {
                    T::zero()
                } else if e < T::zero() {
                    half * (one + e) * (one + e)
                } else if e < one {
                    one - half * (one - e) * (one - e)
                } else {
                    one
                }
            }
        }
    }

    /// Quantile function for `u` strictly inside (0, 1).
    pub fn inverse_cdf<T: Scalar>(self, u: T) -> Result<T> {
        if !(u > T::zero() && u < T::one()) {
            return Err(Error::Domain(u.to_f64().unwrap_or(f64::NAN)));
        }
        let one = T::one();
        let two = T::lit(2.0);
        let half = T::lit(0.5);
        Ok(match self {
            Distribution::Gaussian => T::lit(special::normal_quantile(u.as_f64())),
            Distribution::Logistic => u.ln() - (-u).ln_1p(),
            Distribution::Gumbel => {
                // ln(u) directly in the lower tail, where u - 1 would round to -1.
                if u < half {
                    -(-u.ln()).ln()
                } else {
                    -(-(u - one).ln_1p()).ln()
                }
            }
            Distribution::Cauchy => (T::PI() * (u - half)).tan(),
            Distribution::Laplace => {
                if u < half {
                    (two * u).ln()
                } else {
                    -(two * (one - u)).ln()
                }
            }
            Distribution::Triangular => {
                if u < half {
                    -one + (two * u).sqrt()
                } else {
                    one - (two * (one - u)).sqrt()
                }
            }
        })
    }

    /// One i.i.d. draw: inverse CDF of a clamped uniform.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(self, rng: &mut R) -> T {
        let u = clamp_unit(T::lit(rng.random::<f64>()));
        self.inverse_cdf(u).expect("clamped unit point lies in (0, 1)")
    }
}

/// Clamps a unit coordinate into `[m, 1 - m]`, with `m` the larger of
/// [`UNIT_MARGIN`] and the scalar's machine epsilon.
pub fn clamp_unit<T: Scalar>(u: T) -> T {
    let margin = T::lit(UNIT_MARGIN).max(T::epsilon());
    u.max(margin).min(T::one() - margin)
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Distribution::ALL
            .into_iter()
            .find(|d| d.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<_> = Distribution::ALL.iter().map(|d| d.name()).collect();
                format!("unknown distribution '{s}' (valid: {})", names.join(", "))
            })
    }
}
