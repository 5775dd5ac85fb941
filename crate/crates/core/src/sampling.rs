//! Perturbation plans: Monte-Carlo, Cartesian (R)QMC and Latin-hypercube (R)QMC,
//! each optionally antithetic.
//!
//! A plan is an `s x n` block of unit-cube points. [`SamplePlan::transform`]
//! pushes every coordinate through a distribution's inverse CDF.
//!
//! Antithetic plans are laid out as interleaved pairs: row `2i + 1` mirrors row
//! `2i` (`u -> 1 - u`). For Cartesian strategies the `s / 2` base points form the
//! `k^n` grid; Latin plans pick bins in mirrored pairs, so the full antithetic
//! plan still covers each of the `s` bins once per dimension.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::distributions::{clamp_unit, Distribution};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Mc,
    QmcCartesian,
    RqmcCartesian,
    QmcLatin,
    RqmcLatin,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Mc,
        StrategyKind::QmcCartesian,
        StrategyKind::RqmcCartesian,
        StrategyKind::QmcLatin,
        StrategyKind::RqmcLatin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Mc => "mc",
            StrategyKind::QmcCartesian => "qmc-cartesian",
            StrategyKind::RqmcCartesian => "rqmc-cartesian",
            StrategyKind::QmcLatin => "qmc-latin",
            StrategyKind::RqmcLatin => "rqmc-latin",
        }
    }

    pub fn is_cartesian(self) -> bool {
        matches!(self, StrategyKind::QmcCartesian | StrategyKind::RqmcCartesian)
    }

    pub fn is_latin(self) -> bool {
        matches!(self, StrategyKind::QmcLatin | StrategyKind::RqmcLatin)
    }

    /// Cell centers rather than uniform jitter within cells.
    fn centered(self) -> bool {
        matches!(self, StrategyKind::QmcCartesian | StrategyKind::QmcLatin)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        StrategyKind::ALL.into_iter().find(|k| k.name() == key).ok_or_else(|| {
            let names: Vec<_> = StrategyKind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown strategy '{s}' (valid: {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub antithetic: bool,
}

impl Strategy {
    pub fn new(kind: StrategyKind, antithetic: bool) -> Self {
        Self { kind, antithetic }
    }

    pub fn mc() -> Self {
        Self::new(StrategyKind::Mc, false)
    }

    /// Checks the sample-count preconditions for `s` samples in `n` dimensions.
    pub fn validate(&self, s: usize, n: usize) -> Result<()> {
        if s == 0 {
            return Err(Error::NoSamples);
        }
        if n == 0 {
            return Err(Error::NoDimensions);
        }
        if self.antithetic && s % 2 == 1 {
            return Err(Error::AntitheticOddCount(s));
        }
        let base = if self.antithetic { s / 2 } else { s };
        if self.kind.is_cartesian() && integer_root(base, n).is_none() {
            return Err(Error::CartesianSampleCount { samples: s, dim: n });
        }
        Ok(())
    }

    /// Also rejects antithetic pairing for skewed distributions.
    pub fn validate_for(&self, s: usize, n: usize, distribution: Distribution) -> Result<()> {
        if self.antithetic && !distribution.is_symmetric() {
            return Err(Error::AntitheticAsymmetric(distribution.name()));
        }
        self.validate(s, n)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.antithetic {
            write!(f, "{}+antithetic", self.kind)
        } else {
            write!(f, "{}", self.kind)
        }
    }
}

/// Exact integer `n`-th root of `s`, if there is one.
pub fn integer_root(s: usize, n: usize) -> Option<usize> {
    if n == 0 || s == 0 {
        return None;
    }
    if n == 1 {
        return Some(s);
    }
    let guess = (s as f64).powf(1.0 / n as f64).round() as usize;
    (guess.saturating_sub(1)..=guess + 1).find(|&k| k >= 1 && k.checked_pow(n as u32) == Some(s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan<T> {
    unit_points: Array2<T>,
    eps: Option<Array2<T>>,
    distribution: Option<Distribution>,
    strategy: Strategy,
    seed: u64,
}

/// Builds the unit-cube points of a plan.
pub fn make_plan<T: Scalar>(strategy: Strategy, s: usize, n: usize, seed: u64) -> Result<SamplePlan<T>> {
    strategy.validate(s, n)?;
    let mut rng = stream(seed);
    let base_count = if strategy.antithetic { s / 2 } else { s };
    let base: Array2<f64> = match strategy.kind {
        StrategyKind::Mc => Array2::from_shape_fn((base_count, n), |_| rng.random::<f64>()),
        StrategyKind::QmcCartesian | StrategyKind::RqmcCartesian => {
            let k = integer_root(base_count, n).expect("validated");
            cartesian(k, n, strategy.kind.centered(), &mut rng)
        }
        StrategyKind::QmcLatin | StrategyKind::RqmcLatin => {
            latin(s, n, strategy.antithetic, strategy.kind.centered(), &mut rng)
        }
    };

    let mut unit_points = Array2::zeros((s, n));
    if strategy.antithetic {
        for (i, row) in base.outer_iter().enumerate() {
            for (j, &u) in row.iter().enumerate() {
                let u = clamp_unit(T::lit(u));
                unit_points[[2 * i, j]] = u;
                unit_points[[2 * i + 1, j]] = T::one() - u;
            }
        }
    } else {
        unit_points.zip_mut_with(&base, |dst, &u| *dst = clamp_unit(T::lit(u)));
    }
    Ok(SamplePlan { unit_points, eps: None, distribution: None, strategy, seed })
}

fn cartesian(k: usize, n: usize, centered: bool, rng: &mut Stream) -> Array2<f64> {
    let cells = k.pow(n as u32);
    let width = 1.0 / k as f64;
    let mut out = Array2::zeros((cells, n));
    for r in 0..cells {
        let mut index = r;
        for j in 0..n {
            let digit = index % k;
            index /= k;
            let offset = if centered { 0.5 } else { rng.random::<f64>() };
            out[[r, j]] = (digit as f64 + offset) * width;
        }
    }
    out
}

/// Latin hypercube over `s` bins per dimension. With `mirrored` set, returns
/// only `s / 2` rows whose bins are one member of each pair `(b, s - 1 - b)`.
fn latin(s: usize, n: usize, mirrored: bool, centered: bool, rng: &mut Stream) -> Array2<f64> {
    let rows = if mirrored { s / 2 } else { s };
    let width = 1.0 / s as f64;
    let mut out = Array2::zeros((rows, n));
    let mut perm: Vec<usize> = (0..rows).collect();
    for j in 0..n {
        perm.shuffle(rng);
        for (i, &p) in perm.iter().enumerate() {
            let bin = if mirrored && rng.random::<bool>() { s - 1 - p } else { p };
            let offset = if centered { 0.5 } else { rng.random::<f64>() };
            out[[i, j]] = (bin as f64 + offset) * width;
        }
    }
    out
}

impl<T: Scalar> SamplePlan<T> {
    /// Fills the perturbations with `inverse_cdf(d, u)`. For symmetric `d`, the
    /// mirror row of an antithetic pair is set to the exact negation of its base.
    pub fn transform(mut self, d: Distribution) -> Self {
        let mut eps = self
            .unit_points
            .mapv(|u| d.inverse_cdf(u).expect("unit points are clamped into (0, 1)"));
        if self.strategy.antithetic && d.is_symmetric() {
            for i in (0..eps.nrows()).step_by(2) {
                for j in 0..eps.ncols() {
                    eps[[i + 1, j]] = -eps[[i, j]];
                }
            }
        }
        self.eps = Some(eps);
        self.distribution = Some(d);
        self
    }

    /// A plan from explicit perturbations, e.g. to probe specific points.
    pub fn from_perturbations(d: Distribution, eps: Array2<T>) -> Self {
        let unit_points = eps.mapv(|e| clamp_unit(d.cdf(e)));
        Self { unit_points, eps: Some(eps), distribution: Some(d), strategy: Strategy::mc(), seed: 0 }
    }

    pub fn samples(&self) -> usize {
        self.unit_points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.unit_points.ncols()
    }

    pub fn unit_points(&self) -> ArrayView2<'_, T> {
        self.unit_points.view()
    }

    pub fn eps(&self) -> Option<ArrayView2<'_, T>> {
        self.eps.as_ref().map(|e| e.view())
    }

    pub fn eps_row(&self, i: usize) -> Option<ArrayView1<'_, T>> {
        self.eps.as_ref().map(|e| e.row(i))
    }

    pub fn distribution(&self) -> Option<Distribution> {
        self.distribution
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mirror row of `i` for antithetic plans.
    pub fn pair(&self, i: usize) -> Option<usize> {
        self.strategy.antithetic.then_some(i ^ 1)
    }
}
