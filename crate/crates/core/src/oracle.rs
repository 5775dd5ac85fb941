//! Reference gradients for scoring estimators: closed-form convolutions for
//! the step fixtures and a high-budget randomized-QMC estimate with a
//! bootstrap standard error for everything else.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::estimators::{BlackBox, Covariate, Evaluation, SmoothingConfig};
use crate::rng::{derive_seed, stream};
use crate::sampling::{integer_root, Strategy, StrategyKind};
use crate::scale::Scale;

/// Independent seeds averaged by [`bruteforce_oracle`].
pub const ORACLE_SEEDS: usize = 16;
const BOOTSTRAP_RESAMPLES: usize = 400;
const TAIL_MASS: f64 = 1e-12;

/// Fixtures whose smoothed value has a closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fixture {
    /// `1[x_1 >= 0]`.
    Heaviside,
    /// `floor(x / step) * step` on a scalar.
    Staircase { step: f64 },
    /// `sum(x)`.
    Linear,
    Constant(f64),
}

impl Fixture {
    pub fn name(&self) -> &'static str {
        match self {
            Fixture::Heaviside => "heaviside",
            Fixture::Staircase { .. } => "staircase",
            Fixture::Linear => "linear",
            Fixture::Constant(_) => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticOracle {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// `P(x_1 + scale * eps >= 0) = 1 - F(-x_1 / scale)`.
pub fn smoothed_step(d: Distribution, x1: f64, scale: f64) -> f64 {
    1.0 - d.cdf(-x1 / scale)
}

/// Derivative of [`smoothed_step`] in `x_1`.
pub fn smoothed_step_slope(d: Distribution, x1: f64, scale: f64) -> f64 {
    d.density(-x1 / scale) / scale
}

/// Exact smoothed value and gradient of a fixture.
///
/// The staircase is a sum of shifted steps, truncated where the remaining
/// tail mass drops below 1e-12; the Cauchy has no mean, so it is rejected for
/// the staircase and linear fixtures, as is the skewed Gumbel for the linear
/// fixture.
pub fn analytic_oracle(fixture: Fixture, d: Distribution, x: &[f64], gamma: f64) -> Result<AnalyticOracle> {
    if x.is_empty() {
        return Err(Error::NoDimensions);
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidScale(gamma));
    }
    let n = x.len();
    let unsupported = || Error::UnsupportedFixturePair { fixture: fixture.name(), distribution: d.name() };
    match fixture {
        Fixture::Constant(c) => Ok(AnalyticOracle { value: c, gradient: vec![0.0; n] }),
        Fixture::Heaviside => {
            let mut gradient = vec![0.0; n];
            gradient[0] = smoothed_step_slope(d, x[0], gamma);
            Ok(AnalyticOracle { value: smoothed_step(d, x[0], gamma), gradient })
        }
        Fixture::Linear => {
            if !d.is_symmetric() || d == Distribution::Cauchy {
                return Err(unsupported());
            }
            Ok(AnalyticOracle { value: x.iter().sum(), gradient: vec![1.0; n] })
        }
        Fixture::Staircase { step } => {
            if d == Distribution::Cauchy {
                return Err(unsupported());
            }
            if n != 1 {
                return Err(Error::DimensionMismatch { expected: 1, got: n });
            }
            if !(step.is_finite() && step > 0.0) {
                return Err(Error::InvalidConfig(format!("staircase step must be positive, got {step}")));
            }
            let lo = x[0] + gamma * d.inverse_cdf(TAIL_MASS)?;
            let hi = x[0] + gamma * d.inverse_cdf(1.0 - TAIL_MASS)?;
            let (k_lo, k_hi) = ((lo / step).floor() as i64 - 1, (hi / step).ceil() as i64 + 1);
            // E[floor(Y / step)] = sum_k k P(k step <= Y < (k + 1) step), Y = x + gamma eps.
            let cdf_at = |k: i64| d.cdf((k as f64 * step - x[0]) / gamma);
            let mut value = k_lo as f64 * cdf_at(k_lo);
            let mut slope = 0.0;
            for k in k_lo..=k_hi {
                value += k as f64 * (cdf_at(k + 1) - cdf_at(k));
                slope += d.density((k as f64 * step - x[0]) / gamma) / gamma;
            }
            value += (k_hi + 1) as f64 * (1.0 - cdf_at(k_hi + 1));
            Ok(AnalyticOracle { value: value * step, gradient: vec![slope * step] })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceOracle {
    /// Mean of the per-seed Jacobian estimates, `m x n`.
    pub jacobian: Array2<f64>,
    /// Bootstrap standard error of each entry of `jacobian`.
    pub entry_se: Array2<f64>,
    /// Bootstrap standard error of the whole mean, in Frobenius norm.
    pub se: f64,
    pub samples_per_seed: usize,
    pub strategy: Strategy,
}

/// High-budget reference Jacobian.
///
/// The budget is split over [`ORACLE_SEEDS`] independent seeds; each seed runs
/// randomized Cartesian QMC when its share is a perfect `n`-th power and
/// randomized Latin-hypercube sampling otherwise, always with the
/// leave-one-out covariate.
pub fn bruteforce_oracle<F: BlackBox<f64> + ?Sized>(
    f: &F,
    d: Distribution,
    x: &[f64],
    scale: &Scale<f64>,
    budget: usize,
    seed: u64,
) -> Result<BruteForceOracle> {
    let n = f.input_dim();
    let per_seed = budget / ORACLE_SEEDS;
    if per_seed < 2 {
        return Err(Error::InvalidConfig(format!("oracle budget {budget} is below {} samples", 2 * ORACLE_SEEDS)));
    }
    let kind = match integer_root(per_seed, n) {
        Some(k) if k >= 2 => StrategyKind::RqmcCartesian,
        _ => StrategyKind::RqmcLatin,
    };
    let strategy = Strategy::new(kind, false);
    let cfg = SmoothingConfig::new(d, scale.clone(), per_seed).with_strategy(strategy).with_covariate(Covariate::Loo);
    cfg.validate(n)?;

    let runs: Vec<Array2<f64>> = (0..ORACLE_SEEDS as u64)
        .into_par_iter()
        .map(|i| {
            let plan = cfg.plan(n, derive_seed(seed, &[i]))?;
            Ok(Evaluation::new(f, &cfg, &plan, x)?.jacobian())
        })
        .collect::<Result<_>>()?;

    let count = runs.len() as f64;
    let mean = runs.iter().fold(Array2::zeros(runs[0].dim()), |acc, j| acc + j) / count;

    let mut rng = stream(derive_seed(seed, &[u64::MAX]));
    let mut sq_dev = Array2::<f64>::zeros(mean.dim());
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut resample = Array2::<f64>::zeros(mean.dim());
        for _ in 0..runs.len() {
            resample += &runs[rng.random_range(0..runs.len())];
        }
        resample /= count;
        sq_dev += &(resample - &mean).mapv(|v| v * v);
    }
    let entry_se = sq_dev.mapv(|v| (v / (BOOTSTRAP_RESAMPLES - 1) as f64).sqrt());
    let se = entry_se.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(BruteForceOracle { jacobian: mean, entry_se, se, samples_per_seed: per_seed, strategy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{normal_cdf, normal_pdf};
    use crate::testbed::TestFunction;

    #[test]
    fn heaviside_examples() {
        let g = analytic_oracle(Fixture::Heaviside, Distribution::Gaussian, &[0.0], 1.0).unwrap();
        assert!((g.value - 0.5).abs() < 1e-15);
        assert!((g.gradient[0] - 0.398_942_280_401_432_7).abs() < 1e-12);
        let l = analytic_oracle(Fixture::Heaviside, Distribution::Laplace, &[0.0], 1.0).unwrap();
        assert_eq!((l.value, l.gradient[0]), (0.5, 0.5));
        // The Gumbel is skewed: the step sees the upper tail.
        let gum = analytic_oracle(Fixture::Heaviside, Distribution::Gumbel, &[0.0, 3.0], 1.0).unwrap();
        assert!((gum.value - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((gum.gradient[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(gum.gradient[1], 0.0);
    }

    #[test]
    fn constant_and_linear() {
        let c = analytic_oracle(Fixture::Constant(4.0), Distribution::Cauchy, &[1.0, 2.0], 3.0).unwrap();
        assert_eq!(c, AnalyticOracle { value: 4.0, gradient: vec![0.0, 0.0] });
        let l = analytic_oracle(Fixture::Linear, Distribution::Logistic, &[1.0, 2.0], 3.0).unwrap();
        assert_eq!(l, AnalyticOracle { value: 3.0, gradient: vec![1.0, 1.0] });
        for d in [Distribution::Gumbel, Distribution::Cauchy] {
            assert!(matches!(analytic_oracle(Fixture::Linear, d, &[0.0], 1.0), Err(Error::UnsupportedFixturePair { .. })));
        }
    }

    #[test]
    fn staircase_matches_gaussian_series() {
        // Independent form: E[floor(Y)] = sum_{k>=1} P(Y >= k) - sum_{k<=0} P(Y < k).
        let (x, gamma) = (0.3, 0.7);
        let mut value = 0.0;
        let mut slope = 0.0;
        for k in 1..60 {
            value += 1.0 - normal_cdf((k as f64 - x) / gamma);
        }
        for k in -60..=0 {
            value -= normal_cdf((k as f64 - x) / gamma);
        }
        for k in -60..60 {
            slope += normal_pdf((k as f64 - x) / gamma) / gamma;
        }
        let o = analytic_oracle(Fixture::Staircase { step: 1.0 }, Distribution::Gaussian, &[x], gamma).unwrap();
        assert!((o.value - value).abs() < 1e-10, "{} vs {value}", o.value);
        assert!((o.gradient[0] - slope).abs() < 1e-10);
        assert!(analytic_oracle(Fixture::Staircase { step: 1.0 }, Distribution::Cauchy, &[0.0], 1.0).is_err());
    }

    #[test]
    fn staircase_gradient_matches_finite_difference() {
        for d in [Distribution::Logistic, Distribution::Laplace, Distribution::Triangular, Distribution::Gumbel] {
            let at = |x: f64| analytic_oracle(Fixture::Staircase { step: 0.5 }, d, &[x], 0.8).unwrap();
            let h = 1e-5;
            let fd = (at(1.1 + h).value - at(1.1 - h).value) / (2.0 * h);
            assert!((fd - at(1.1).gradient[0]).abs() < 1e-6, "{d}");
        }
    }

    #[test]
    fn bruteforce_agrees_with_closed_form() {
        let f = TestFunction::Heaviside(1);
        let scale = Scale::scalar(1.0).unwrap();
        let o = bruteforce_oracle(&f, Distribution::Gaussian, &[0.0], &scale, 1 << 20, 5).unwrap();
        assert_eq!(o.strategy.kind, StrategyKind::RqmcCartesian);
        let exact = normal_pdf(0.0);
        // On stratified plans the leave-one-out baseline is correlated with the
        // cell a sample falls in, which leaves a bias of order 1/s per seed.
        let bias_bound = 1.0 / o.samples_per_seed as f64;
        let err = (o.jacobian[[0, 0]] - exact).abs();
        assert!(err < 3.0 * o.se + bias_bound, "{} +- {}", o.jacobian[[0, 0]], o.se);
        assert!(err / exact < 1e-4);
    }

    #[test]
    fn two_element_sort_reduces_to_one_comparison() {
        // P_11 = 1[x1 <= x2]; with eps1 - eps2 ~ N(0, 2) its smoothed value is
        // Phi((x2 - x1) / sqrt 2), so d/dx1 = -phi(0.2 / sqrt 2) / sqrt 2.
        let f = TestFunction::Argsort(2);
        let scale = Scale::scalar(1.0).unwrap();
        let o = bruteforce_oracle(&f, Distribution::Gaussian, &[-0.1, 0.1], &scale, 1 << 20, 9).unwrap();
        let slope = normal_pdf(0.2 / 2f64.sqrt()) / 2f64.sqrt();
        assert!((o.jacobian[[0, 0]] + slope).abs() < 3.0 * o.entry_se[[0, 0]].max(2e-4));
        assert!((o.jacobian[[0, 1]] - slope).abs() < 3.0 * o.entry_se[[0, 1]].max(2e-4));
        // Each row of a permutation matrix sums to 1, so its gradient sums to 0.
        for k in 0..2 {
            let row_sum = o.jacobian[[0, k]] + o.jacobian[[1, k]];
            assert!(row_sum.abs() < 1e-9, "{row_sum}");
        }
    }

    #[test]
    fn doubling_budget_shrinks_standard_error() {
        let f = TestFunction::Argsort(3);
        let scale = Scale::scalar(1.0).unwrap();
        let x = [0.3, -0.4, 0.1];
        let small = bruteforce_oracle(&f, Distribution::Logistic, &x, &scale, 1 << 14, 1).unwrap();
        let large = bruteforce_oracle(&f, Distribution::Logistic, &x, &scale, 1 << 16, 1).unwrap();
        // Quadrupling the budget at least halves the error up to bootstrap noise.
        assert!(large.se < 0.75 * small.se, "{} vs {}", large.se, small.se);
    }
}
