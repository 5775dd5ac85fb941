//! Plain gradient descent on a smoothed scalar objective.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::estimators::{BlackBox, Evaluation, SmoothingConfig};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::scale::Scale;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdOptions<T> {
    pub steps: usize,
    pub lr: T,
    /// Multiplies the scale after every step; 1 keeps it fixed.
    pub gamma_decay: T,
    pub seed: u64,
}

impl<T: Scalar> GdOptions<T> {
    pub fn new(steps: usize, lr: T, seed: u64) -> Self {
        Self { steps, lr, gamma_decay: T::one(), seed }
    }

    pub fn with_gamma_decay(mut self, factor: T) -> Self {
        self.gamma_decay = factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > T::zero()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.gamma_decay > T::zero() && self.gamma_decay <= T::one()) {
            return Err(Error::InvalidConfig(format!("gamma decay must lie in (0, 1], got {}", self.gamma_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint<T> {
    pub step: usize,
    pub x: Vec<T>,
    /// Unsmoothed objective at `x`.
    pub fx: T,
    /// Scale in force when the step was taken (`L[0][0]` for a matrix scale).
    pub gamma: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub points: Vec<TrajectoryPoint<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn last(&self) -> &TrajectoryPoint<T> {
        self.points.last().expect("a trajectory holds at least x0")
    }

    /// `step,x0,..,x{n-1},fx,gamma` with one row per point.
    pub fn to_csv(&self) -> String {
        let n = self.points.first().map_or(0, |p| p.x.len());
        let mut out = String::from("step");
        for i in 0..n {
            let _ = write!(out, ",x{i}");
        }
        out.push_str(",fx,gamma\n");
        for p in &self.points {
            let _ = write!(out, "{}", p.step);
            for v in &p.x {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{}", p.fx, p.gamma);
        }
        out
    }
}

fn scale_value<T: Scalar>(scale: &Scale<T>) -> T {
    match scale {
        Scale::Scalar(g) => *g,
        Scale::Matrix(l) => l.matrix()[[0, 0]],
    }
}

/// Gradient descent `x <- x - lr * g` where `g` is the smoothed gradient
/// estimated on a fresh plan every step (seeded from the step index).
/// Returns `steps + 1` points, starting at `x0`.
pub fn minimize<T: Scalar, F: BlackBox<T> + ?Sized>(
    f: &F,
    cfg: &SmoothingConfig<T>,
    x0: &[T],
    options: GdOptions<T>,
) -> Result<Trajectory<T>> {
    options.validate()?;
    let n = f.input_dim();
    if f.output_dim() != 1 {
        return Err(Error::VectorOutputUnsupported(f.output_dim()));
    }
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    cfg.validate(n)?;

    let mut cfg = cfg.clone();
    let mut x = x0.to_vec();
    let objective = |x: &[T]| -> Result<T> {
        let v = f.eval_vec(x)[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteCenter)
        }
    };
    let mut points = Vec::with_capacity(options.steps + 1);
    points.push(TrajectoryPoint { step: 0, x: x.clone(), fx: objective(&x)?, gamma: scale_value(&cfg.scale) });

    for step in 0..options.steps {
        let plan = cfg.plan(n, derive_seed(options.seed, &[step as u64]))?;
        let grad = Evaluation::new(f, &cfg, &plan, &x)?.jacobian();
        for (xi, g) in x.iter_mut().zip(grad.row(0)) {
            *xi -= options.lr * *g;
        }
        if options.gamma_decay != T::one() {
            cfg.scale = cfg.scale.scaled(options.gamma_decay)?;
        }
        points.push(TrajectoryPoint { step: step + 1, x: x.clone(), fx: objective(&x)?, gamma: scale_value(&cfg.scale) });
    }
    Ok(Trajectory { points })
}
