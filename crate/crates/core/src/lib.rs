//! Zeroth-order gradient estimation for black-box functions by stochastic smoothing.
//!
//! A black box `f: R^n -> R^m` is relaxed to `f_eps(x) = E[f(x + scale * eps)]`
//! for one of six perturbation densities, and the value, Jacobian and scale
//! gradients of the relaxation are estimated from a single batch of
//! evaluations. Sampling strategies (Monte-Carlo, antithetic, Cartesian and
//! Latin-hypercube QMC/RQMC) and covariates reduce the estimator variance.
//!
//! ```
//! use smoothgrad::{jacobian, testbed, Distribution, Scale, SmoothingConfig, Strategy, StrategyKind, Covariate};
//!
//! let f = testbed::TestFunction::Heaviside(1);
//! let cfg = SmoothingConfig::new(Distribution::Gaussian, Scale::scalar(1.0f64).unwrap(), 4096)
//!     .with_strategy(Strategy::new(StrategyKind::RqmcCartesian, false))
//!     .with_covariate(Covariate::Loo);
//! let plan = cfg.plan(1, 7).unwrap();
//! let g = jacobian(&f, &cfg, &plan, &[0.0]).unwrap();
//! assert!((g[[0, 0]] - 0.398_942).abs() < 0.01);
//! ```

pub mod bench;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod scale;
pub mod special;
mod sum;
pub mod testbed;

pub use distributions::Distribution;
pub use error::{Error, Result};
pub use estimators::{
    compose_objective, dgamma, dl, estimate, from_fn, jacobian, median_gradient, median_weights, output_cov,
    smooth_value, BlackBox, Covariate, EstimateReport, Evaluation, FnBox, MedianEstimate, OutputCovariance,
    ReportOptions, SmoothingConfig,
};
pub use sampling::{make_plan, SamplePlan, Strategy, StrategyKind};
pub use scalar::Scalar;
pub use scale::{LowerTriangular, Scale};

/// Double-precision configuration.
pub type Config = SmoothingConfig<f64>;
/// Double-precision sample plan.
pub type Plan = SamplePlan<f64>;
/// Double-precision estimator report.
pub type Report = EstimateReport<f64>;
/// Single-precision configuration.
pub type Config32 = SmoothingConfig<f32>;
/// Single-precision sample plan.
pub type Plan32 = SamplePlan<f32>;
