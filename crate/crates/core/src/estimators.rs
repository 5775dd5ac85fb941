//! Score-function estimators of a smoothed black box `f_eps(x) = E[f(x + scale * eps)]`.
//!
//! One [`Evaluation`] evaluates `f` once per perturbation and every estimator
//! (value, Jacobian, scale gradients, output covariance, k-sample median) is a
//! linear functional of that single batch. The free functions at the bottom of
//! the module are one-shot conveniences over it.
//!
//! For a scalar scale `gamma` the Jacobian weight is `score(eps) / gamma`; for a
//! lower-triangular `L` it is `L^{-T} score(eps)`, and the scale gradients use
//! `(-n + score . eps) / gamma` and `L^{-T} (-I + score eps^T)` respectively.
//! Samples whose perturbation hits a point where the score is undefined
//! contribute nothing to the gradient estimates.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, Axis};
use rayon::prelude::*;

use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::sampling::{make_plan, SamplePlan, Strategy};
use crate::scalar::Scalar;
use crate::scale::Scale;
use crate::special::ln_binomial;
use crate::sum::{pairwise, sum_slice};

/// A deterministic function `R^n -> R^m` evaluated pointwise.
pub trait BlackBox<T>: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Writes `f(x)` into `out` (`x.len() == n`, `out.len() == m`).
    fn eval(&self, x: &[T], out: &mut [T]);

    fn eval_vec(&self, x: &[T]) -> Vec<T>
    where
        T: Scalar,
    {
        let mut out = vec![T::zero(); self.output_dim()];
        self.eval(x, &mut out);
        out
    }
}

impl<T, B: BlackBox<T> + ?Sized> BlackBox<T> for &B {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn eval(&self, x: &[T], out: &mut [T]) {
        (**self).eval(x, out)
    }
}

impl<T, B: BlackBox<T> + ?Sized> BlackBox<T> for Box<B> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn eval(&self, x: &[T], out: &mut [T]) {
        (**self).eval(x, out)
    }
}

/// Black box backed by a closure.
#[derive(Clone)]
pub struct FnBox<F> {
    n: usize,
    m: usize,
    f: F,
}

pub fn from_fn<T, F>(n: usize, m: usize, f: F) -> FnBox<F>
where
    F: Fn(&[T], &mut [T]) + Sync,
{
    FnBox { n, m, f }
}

impl<T, F> BlackBox<T> for FnBox<F>
where
    F: Fn(&[T], &mut [T]) + Sync,
{
    fn input_dim(&self) -> usize {
        self.n
    }
    fn output_dim(&self) -> usize {
        self.m
    }
    fn eval(&self, x: &[T], out: &mut [T]) {
        (self.f)(x, out)
    }
}

/// Scalar objective `x -> loss(h(x))`.
pub struct Composed<H, L> {
    inner: H,
    loss: L,
}

/// Smoothing the loss instead of the algorithm: wraps `h` into `loss o h`.
pub fn compose_objective<T, H, L>(h: H, loss: L) -> Composed<H, L>
where
    T: Scalar,
    H: BlackBox<T>,
    L: Fn(&[T]) -> T + Sync,
{
    Composed { inner: h, loss }
}

impl<T, H, L> BlackBox<T> for Composed<H, L>
where
    T: Scalar,
    H: BlackBox<T>,
    L: Fn(&[T]) -> T + Sync,
{
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[T], out: &mut [T]) {
        let inner = self.inner.eval_vec(x);
        out[0] = (self.loss)(&inner);
    }
}

/// Baseline subtracted from `f` before score weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Covariate {
    None,
    /// `f(x)` at the unperturbed point (one extra evaluation).
    FAtX,
    /// Leave-one-out mean of the other `s - 1` outputs.
    Loo,
}

impl Covariate {
    pub const ALL: [Covariate; 3] = [Covariate::None, Covariate::FAtX, Covariate::Loo];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::None => "none",
            Covariate::FAtX => "fx",
            Covariate::Loo => "loo",
        }
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Covariate {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Covariate::None),
            "fx" | "f(x)" => Ok(Covariate::FAtX),
            "loo" => Ok(Covariate::Loo),
            _ => Err(format!("unknown covariate '{s}' (valid: none, fx, loo)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConfig<T> {
    pub distribution: Distribution,
    pub scale: Scale<T>,
    pub samples: usize,
    pub strategy: Strategy,
    pub covariate: Covariate,
}

impl<T: Scalar> SmoothingConfig<T> {
    /// Plain Monte-Carlo without covariate.
    pub fn new(distribution: Distribution, scale: Scale<T>, samples: usize) -> Self {
        Self { distribution, scale, samples, strategy: Strategy::mc(), covariate: Covariate::None }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_covariate(mut self, covariate: Covariate) -> Self {
        self.covariate = covariate;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.scale.validate(n)?;
        self.strategy.validate_for(self.samples, n, self.distribution)?;
        if self.covariate == Covariate::Loo && self.samples < 2 {
            return Err(Error::CovariateNeedsTwoSamples);
        }
        Ok(())
    }

    /// A transformed plan matching this configuration.
    pub fn plan(&self, n: usize, seed: u64) -> Result<SamplePlan<T>> {
        self.validate(n)?;
        Ok(make_plan(self.strategy, self.samples, n, seed)?.transform(self.distribution))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputCovariance<T> {
    /// `m x m` covariance of the perturbed outputs.
    pub g: Array2<T>,
    /// `m x m x n`.
    pub dg_dx: Array3<T>,
    /// `m x m x n x n`.
    pub dg_dl: Array4<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianEstimate<T> {
    pub k: usize,
    pub value: T,
    pub grad: Array1<T>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReportOptions {
    pub with_cov: bool,
    pub median_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport<T> {
    pub value: Array1<T>,
    pub jacobian: Array2<T>,
    /// Present for a scalar scale.
    pub dgamma: Option<Array1<T>>,
    /// Present for a matrix scale: `m x n x n`.
    pub dl: Option<Array3<T>>,
    pub out_cov: Option<OutputCovariance<T>>,
    pub median: Option<MedianEstimate<T>>,
    pub samples_used: usize,
    pub seed: u64,
}

/// One batch of black-box evaluations over a plan.
#[derive(Debug, Clone)]
pub struct Evaluation<'p, T> {
    cfg: SmoothingConfig<T>,
    plan: &'p SamplePlan<T>,
    outputs: Array2<T>,
    center: Option<Array1<T>>,
    scores: Array2<T>,
    x_weights: Array2<T>,
    active: Vec<bool>,
}

impl<'p, T: Scalar> Evaluation<'p, T> {
    pub fn new<F: BlackBox<T> + ?Sized>(f: &F, cfg: &SmoothingConfig<T>, plan: &'p SamplePlan<T>, x: &[T]) -> Result<Self> {
        let n = f.input_dim();
        let m = f.output_dim();
        if m == 0 {
            return Err(Error::InvalidConfig("black box has no outputs".into()));
        }
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        if plan.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: plan.dim() });
        }
        if plan.samples() != cfg.samples {
            return Err(Error::SampleCountMismatch { expected: cfg.samples, got: plan.samples() });
        }
        cfg.scale.validate(n)?;
        if cfg.covariate == Covariate::Loo && cfg.samples < 2 {
            return Err(Error::CovariateNeedsTwoSamples);
        }
        let eps = plan.eps().ok_or(Error::PlanNotTransformed)?;
        if plan.distribution() != Some(cfg.distribution) {
            return Err(Error::InvalidConfig(format!(
                "plan was transformed with {} but the configuration smooths with {}",
                plan.distribution().map_or("nothing", |d| d.name()),
                cfg.distribution
            )));
        }

        let s = plan.samples();
        let x_view = ndarray::ArrayView1::from(x);
        let mut flat = vec![T::zero(); s * m];
        flat.par_chunks_mut(m).enumerate().for_each_init(
            || vec![T::zero(); n],
            |buf, (i, out)| {
                cfg.scale.perturb(x_view, eps.row(i), buf);
                f.eval(buf, out);
            },
        );
        if let Some(bad) = flat.chunks(m).position(|row| row.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteOutput(bad));
        }
        let outputs = Array2::from_shape_vec((s, m), flat).expect("shape matches");

        let center = match cfg.covariate {
            Covariate::FAtX => {
                let c = f.eval_vec(x);
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteCenter);
                }
                Some(Array1::from(c))
            }
            _ => None,
        };

        let d = cfg.distribution;
        let mut scores = Array2::zeros((s, n));
        let mut active = vec![true; s];
        for (i, row) in eps.outer_iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                match d.score(e) {
                    Some(v) => scores[[i, j]] = v,
                    None => active[i] = false,
                }
            }
            if !active[i] {
                scores.row_mut(i).fill(T::zero());
            }
        }
        let x_weights = match &cfg.scale {
            Scale::Scalar(g) => scores.mapv(|v| v / *g),
            // Row-wise L^{-T} score == score^T L^{-1}.
            Scale::Matrix(l) => scores.dot(l.inverse()),
        };

        Ok(Self { cfg: cfg.clone(), plan, outputs, center, scores, x_weights, active })
    }

    pub fn samples(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.scores.ncols()
    }

    pub fn outputs(&self) -> ArrayView2<'_, T> {
        self.outputs.view()
    }

    /// Black-box calls spent, including `f(x)` for the `FAtX` covariate.
    pub fn samples_used(&self) -> usize {
        self.samples() + usize::from(self.center.is_some())
    }

    /// Samples whose perturbation avoided the undefined-score set.
    pub fn active_samples(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Sample mean of the outputs, accumulated as offsets from the first sample.
    pub fn value(&self) -> Array1<T> {
        let (s, m) = self.outputs.dim();
        let first = self.outputs.row(0).to_owned();
        let sums = pairwise(s, m, &|i, acc: &mut [T]| {
            for (a, (&v, &f0)) in acc.iter_mut().zip(self.outputs.row(i).iter().zip(first.iter())) {
                *a += v - f0;
            }
        });
        let count = T::count(s);
        first + &Array1::from(sums).mapv(|v| v / count)
    }

    fn residuals(&self) -> Array2<T> {
        match self.cfg.covariate {
            Covariate::None => self.outputs.clone(),
            Covariate::FAtX => &self.outputs - self.center.as_ref().expect("center evaluated"),
            Covariate::Loo => {
                // f_i - mean_{j != i} f_j == (f_i - mean) * s / (s - 1)
                let s = T::count(self.samples());
                let factor = s / (s - T::one());
                let mean = self.value();
                (&self.outputs - &mean).mapv(|v| v * factor)
            }
        }
    }

    /// Centering constant for the covariance estimators.
    fn cov_center(&self) -> Array1<T> {
        match self.cfg.covariate {
            Covariate::None => Array1::zeros(self.outputs.ncols()),
            Covariate::FAtX => self.center.clone().expect("center evaluated"),
            Covariate::Loo => self.value(),
        }
    }

    /// `m x n` Jacobian estimate.
    pub fn jacobian(&self) -> Array2<T> {
        let (s, m) = self.outputs.dim();
        let n = self.dim();
        let r = self.residuals();
        let sums = pairwise(s, m * n, &|i, acc: &mut [T]| {
            if !self.active[i] {
                return;
            }
            let w = self.x_weights.row(i);
            for (a, &ra) in r.row(i).iter().enumerate() {
                if ra == T::zero() {
                    continue;
                }
                for (b, &wb) in w.iter().enumerate() {
                    acc[a * n + b] += ra * wb;
                }
            }
        });
        let count = T::count(s);
        Array2::from_shape_vec((m, n), sums).expect("shape").mapv(|v| v / count)
    }

    /// Gradient w.r.t. the scalar scale, one entry per output.
    pub fn dgamma(&self) -> Result<Array1<T>> {
        let gamma = match self.cfg.scale {
            Scale::Scalar(g) => g,
            Scale::Matrix(_) => return Err(Error::MatrixScaleNotAllowed),
        };
        let eps = self.plan.eps().expect("checked at construction");
        let (s, m) = self.outputs.dim();
        let n = T::count(self.dim());
        let weights: Vec<T> = (0..s)
            .map(|i| {
                let dot = self.scores.row(i).dot(&eps.row(i));
                (dot - n) / gamma
            })
            .collect();
        let r = self.residuals();
        let sums = pairwise(s, m, &|i, acc: &mut [T]| {
            if self.active[i] {
                for (a, &ra) in acc.iter_mut().zip(r.row(i).iter()) {
                    *a += ra * weights[i];
                }
            }
        });
        let count = T::count(s);
        Ok(Array1::from(sums).mapv(|v| v / count))
    }

    /// Gradient w.r.t. every entry of the scale matrix, `m x n x n`
    /// (a scalar scale is treated as `gamma * I`).
    pub fn dl(&self) -> Result<Array3<T>> {
        let l = self.cfg.scale.to_matrix(self.dim())?;
        let eps = self.plan.eps().expect("checked at construction");
        let (s, m) = self.outputs.dim();
        let n = self.dim();
        let r = self.residuals();
        let block = n * n + 1;
        let sums = pairwise(s, m * block, &|i, acc: &mut [T]| {
            if !self.active[i] {
                return;
            }
            let score = self.scores.row(i);
            let e = eps.row(i);
            for (a, &ra) in r.row(i).iter().enumerate() {
                if ra == T::zero() {
                    continue;
                }
                let dst = &mut acc[a * block..(a + 1) * block];
                for p in 0..n {
                    let rs = ra * score[p];
                    for q in 0..n {
                        dst[p * n + q] += rs * e[q];
                    }
                }
                dst[n * n] += ra;
            }
        });
        let inv_t = l.inverse().t();
        let count = T::count(s);
        let mut out = Array3::zeros((m, n, n));
        for a in 0..m {
            let chunk = &sums[a * block..(a + 1) * block];
            let mut inner = Array2::from_shape_vec((n, n), chunk[..n * n].to_vec()).expect("shape");
            for p in 0..n {
                inner[[p, p]] -= chunk[n * n];
            }
            let g = inv_t.dot(&inner).mapv(|v| v / count);
            out.index_axis_mut(Axis(0), a).assign(&g);
        }
        Ok(out)
    }

    /// Output covariance and its gradients w.r.t. `x` and the scale matrix.
    ///
    /// Outputs are centered by a constant first (0, `f(x)`, or the sample mean
    /// for `None`, `FAtX`, `Loo`); the covariance is shift invariant, so this
    /// only changes the variance of the estimate.
    pub fn output_cov(&self) -> Result<OutputCovariance<T>> {
        let l = self.cfg.scale.to_matrix(self.dim())?;
        let eps = self.plan.eps().expect("checked at construction");
        let (s, m) = self.outputs.dim();
        let n = self.dim();
        let count = T::count(s);
        let r = &self.outputs - &self.cov_center();

        let act = Array1::from_iter(self.active.iter().map(|&a| if a { T::one() } else { T::zero() }));
        let wx = self.scores.dot(l.inverse());
        let mut u = Array2::zeros((s, n * n));
        for i in 0..s {
            if !self.active[i] {
                continue;
            }
            for p in 0..n {
                for q in 0..n {
                    u[[i, p * n + q]] = self.scores[[i, p]] * eps[[i, q]];
                }
            }
        }
        let mut z = Array2::zeros((s, m * m));
        for i in 0..s {
            for a in 0..m {
                for b in 0..m {
                    z[[i, a * m + b]] = r[[i, a]] * r[[i, b]];
                }
            }
        }

        let rbar = r.sum_axis(Axis(0)).mapv(|v| v / count);
        let g = r.t().dot(&r).mapv(|v| v / count) - outer(&rbar, &rbar);

        let grad_x = r.t().dot(&wx).mapv(|v| v / count);
        let moment_x = z.t().dot(&wx).mapv(|v| v / count);

        let inv_t = l.inverse().t().to_owned();
        let minus_identity = |raw: ndarray::ArrayView1<T>, mass: T| {
            let mut mat = raw.to_owned().into_shape_with_order((n, n)).expect("shape");
            for p in 0..n {
                mat[[p, p]] -= mass;
            }
            inv_t.dot(&mat).mapv(|v| v / count)
        };
        let ru = r.t().dot(&u);
        let ract = r.t().dot(&act);
        let grad_l: Vec<Array2<T>> = (0..m).map(|a| minus_identity(ru.row(a), ract[a])).collect();
        let zu = z.t().dot(&u);
        let zact = z.t().dot(&act);

        let mut dg_dx = Array3::zeros((m, m, n));
        let mut dg_dl = Array4::zeros((m, m, n, n));
        for a in 0..m {
            for b in 0..m {
                let ab = a * m + b;
                for k in 0..n {
                    dg_dx[[a, b, k]] = moment_x[[ab, k]] - rbar[a] * grad_x[[b, k]] - rbar[b] * grad_x[[a, k]];
                }
                let moment_l = minus_identity(zu.row(ab), zact[ab]);
                let block = moment_l - &grad_l[b].mapv(|v| v * rbar[a]) - &grad_l[a].mapv(|v| v * rbar[b]);
                dg_dl.index_axis_mut(Axis(0), a).index_axis_mut(Axis(0), b).assign(&block);
            }
        }
        Ok(OutputCovariance { g, dg_dx, dg_dl })
    }

    /// k-sample-median value and gradient for a scalar-output black box.
    pub fn median(&self, k: usize) -> Result<MedianEstimate<T>> {
        let m = self.outputs.ncols();
        if m != 1 {
            return Err(Error::VectorOutputUnsupported(m));
        }
        let gamma = match self.cfg.scale {
            Scale::Scalar(g) => g,
            Scale::Matrix(_) => return Err(Error::MatrixScaleNotAllowed),
        };
        let values: Vec<T> = self.outputs.column(0).to_vec();
        let q = median_weights(&values, k)?;
        let weighted: Vec<T> = values.iter().zip(&q).map(|(&v, &w)| v * w).collect();
        let value = sum_slice(&weighted);
        let n = self.dim();
        let grad = pairwise(values.len(), n, &|i, acc: &mut [T]| {
            if self.active[i] && weighted[i] != T::zero() {
                for (a, &sc) in acc.iter_mut().zip(self.scores.row(i).iter()) {
                    *a += weighted[i] * sc;
                }
            }
        });
        Ok(MedianEstimate { k, value, grad: Array1::from(grad).mapv(|v| v / gamma) })
    }

    pub fn report(&self, options: ReportOptions) -> Result<EstimateReport<T>> {
        let (dgamma, dl) = match self.cfg.scale {
            Scale::Scalar(_) => (Some(self.dgamma()?), None),
            Scale::Matrix(_) => (None, Some(self.dl()?)),
        };
        Ok(EstimateReport {
            value: self.value(),
            jacobian: self.jacobian(),
            dgamma,
            dl,
            out_cov: if options.with_cov { Some(self.output_cov()?) } else { None },
            median: options.median_k.map(|k| self.median(k)).transpose()?,
            samples_used: self.samples_used(),
            seed: self.plan.seed(),
        })
    }
}

fn outer<T: Scalar>(a: &Array1<T>, b: &Array1<T>) -> Array2<T> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Probability that each value is the median of a uniformly drawn `k`-subset.
///
/// With 1-based sorted rank `r` and `h = (k - 1) / 2` the weight is
/// `C(r - 1, h) C(s - r, h) / C(s, k)`. Tied values share their group's mass
/// equally.
pub fn median_weights<T: Scalar>(values: &[T], k: usize) -> Result<Vec<T>> {
    let s = values.len();
    if k % 2 == 0 {
        return Err(Error::EvenKUnsupported(k));
    }
    if k <= 1 || k > s {
        return Err(Error::KExceedsS { k, s });
    }
    let h = (k - 1) / 2;
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));

    let ln_total = ln_binomial(s as u64, k as u64);
    let mut by_rank: Vec<f64> = (1..=s)
        .map(|r| {
            if r - 1 < h || s - r < h {
                0.0
            } else {
                (ln_binomial((r - 1) as u64, h as u64) + ln_binomial((s - r) as u64, h as u64) - ln_total).exp()
            }
        })
        .collect();
    let total: f64 = by_rank.iter().sum();
    by_rank.iter_mut().for_each(|w| *w /= total);

    let mut start = 0;
    while start < s {
        let mut end = start + 1;
        while end < s && values[order[end]] == values[order[start]] {
            end += 1;
        }
        if end - start > 1 {
            let share = by_rank[start..end].iter().sum::<f64>() / (end - start) as f64;
            by_rank[start..end].fill(share);
        }
        start = end;
    }

    let mut q = vec![T::zero(); s];
    for (rank, &idx) in order.iter().enumerate() {
        q[idx] = T::lit(by_rank[rank]);
    }
    Ok(q)
}

/// Sample mean of `f` over the perturbed inputs.
pub fn smooth_value<T: Scalar, F: BlackBox<T> + ?Sized>(f: &F, cfg: &SmoothingConfig<T>, plan: &SamplePlan<T>, x: &[T]) -> Result<Array1<T>> {
    Ok(Evaluation::new(f, cfg, plan, x)?.value())
}

pub fn jacobian<T: Scalar, F: BlackBox<T> + ?Sized>(f: &F, cfg: &SmoothingConfig<T>, plan: &SamplePlan<T>, x: &[T]) -> Result<Array2<T>> {
    Ok(Evaluation::new(f, cfg, plan, x)?.jacobian())
}

pub fn dgamma<T: Scalar, F: BlackBox<T> + ?Sized>(f: &F, cfg: &SmoothingConfig<T>, plan: &SamplePlan<T>, x: &[T]) -> Result<Array1<T>> {
    if let Scale::Matrix(_) = cfg.scale {
        return Err(Error::MatrixScaleNotAllowed);
    }
    Evaluation::new(f, cfg, plan, x)?.dgamma()
}

pub fn dl<T: Scalar, F: BlackBox<T> + ?Sized>(f: &F, cfg: &SmoothingConfig<T>, plan: &SamplePlan<T>, x: &[T]) -> Result<Array3<T>> {
    Evaluation::new(f, cfg, plan, x)?.dl()
}

pub fn output_cov<T: Scalar, F: BlackBox<T> + ?Sized>(
    f: &F,
    cfg: &SmoothingConfig<T>,
    plan: &SamplePlan<T>,
    x: &[T],
) -> Result<OutputCovariance<T>> {
    Evaluation::new(f, cfg, plan, x)?.output_cov()
}

pub fn median_gradient<T: Scalar, F: BlackBox<T> + ?Sized>(
    f: &F,
    cfg: &SmoothingConfig<T>,
    plan: &SamplePlan<T>,
    x: &[T],
    k: usize,
) -> Result<MedianEstimate<T>> {
    if f.output_dim() != 1 {
        return Err(Error::VectorOutputUnsupported(f.output_dim()));
    }
    Evaluation::new(f, cfg, plan, x)?.median(k)
}

/// Full report from one evaluation batch.
pub fn estimate<T: Scalar, F: BlackBox<T> + ?Sized>(
    f: &F,
    cfg: &SmoothingConfig<T>,
    plan: &SamplePlan<T>,
    x: &[T],
    options: ReportOptions,
) -> Result<EstimateReport<T>> {
    Evaluation::new(f, cfg, plan, x)?.report(options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::StrategyKind;
    use crate::scale::LowerTriangular;
    use crate::special::{normal_cdf, normal_pdf};
    use crate::testbed::TestFunction;
    use ndarray::array;
    use proptest::prelude::*;
    use crate::sampling::Strategy;

    fn cfg(d: Distribution, gamma: f64, s: usize, kind: StrategyKind, cov: Covariate) -> SmoothingConfig<f64> {
        SmoothingConfig::new(d, Scale::scalar(gamma).unwrap(), s)
            .with_strategy(Strategy::new(kind, false))
            .with_covariate(cov)
    }

    fn eval<'p>(f: &impl BlackBox<f64>, c: &SmoothingConfig<f64>, plan: &'p SamplePlan<f64>, x: &[f64]) -> Evaluation<'p, f64> {
        Evaluation::new(f, c, plan, x).unwrap()
    }

    #[test]
    fn constant_with_fx_covariate_is_exactly_zero() {
        let f = TestFunction::Constant(3, 7.0);
        for d in Distribution::ALL {
            let c = cfg(d, 0.7, 257, StrategyKind::Mc, Covariate::FAtX);
            let plan = c.plan(3, 11).unwrap();
            let e = eval(&f, &c, &plan, &[0.1, -2.0, 3.0]);
            assert_eq!(e.value(), array![7.0]);
            assert!(e.jacobian().iter().all(|&v| v == 0.0));
            assert!(e.dgamma().unwrap().iter().all(|&v| v == 0.0));
            assert!(e.dl().unwrap().iter().all(|&v| v == 0.0));
            let cov = e.output_cov().unwrap();
            assert!(cov.g.iter().chain(cov.dg_dx.iter()).chain(cov.dg_dl.iter()).all(|&v| v == 0.0));
            assert_eq!(e.samples_used(), 258);
        }
    }

    #[test]
    fn antithetic_constant_is_exactly_zero_without_covariate() {
        let f = TestFunction::Constant(2, -3.25);
        for d in Distribution::ALL.into_iter().filter(|d| d.is_symmetric()) {
            let c = SmoothingConfig::new(d, Scale::scalar(1.3).unwrap(), 512).with_strategy(Strategy::new(StrategyKind::Mc, true));
            let plan = c.plan(2, 5).unwrap();
            let j = eval(&f, &c, &plan, &[0.5, 0.5]).jacobian();
            assert!(j.iter().all(|&v| v == 0.0), "{d}: {j}");
        }
    }

    #[test]
    fn laplace_sample_at_kink_contributes_nothing() {
        let f = TestFunction::Linear(1);
        let c = cfg(Distribution::Laplace, 1.0, 3, StrategyKind::Mc, Covariate::None);
        let with_kink = SamplePlan::from_perturbations(Distribution::Laplace, array![[0.7], [0.0], [-0.2]]);
        let e = eval(&f, &c, &with_kink, &[2.0]);
        assert_eq!(e.active_samples(), 2);
        // Only the two defined scores count, still divided by s = 3.
        let expected = ((2.7 * 1.0) + (1.8 * -1.0)) / 3.0;
        assert!((e.jacobian()[[0, 0]] - expected).abs() < 1e-15);
        assert!(e.jacobian().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn heaviside_value_and_gradient_match_convolution() {
        let f = TestFunction::Heaviside(1);
        let c = cfg(Distribution::Gaussian, 1.0, 1_000_000, StrategyKind::Mc, Covariate::Loo);
        let plan = c.plan(1, 3).unwrap();
        let e = eval(&f, &c, &plan, &[0.0]);
        assert!((e.value()[0] - 0.5).abs() < 0.01);
        assert!((e.jacobian()[[0, 0]] - normal_pdf(0.0)).abs() < 0.005);
    }

    #[test]
    fn linear_gradient_is_one() {
        let f = TestFunction::Linear(1);
        let c = cfg(Distribution::Gaussian, 2.0, 100_000, StrategyKind::Mc, Covariate::None);
        let plan = c.plan(1, 9).unwrap();
        let e = eval(&f, &c, &plan, &[3.0]);
        assert!((e.value()[0] - 3.0).abs() < 0.03);
        let c = cfg(Distribution::Gaussian, 1.0, 1_000_000, StrategyKind::Mc, Covariate::None);
        let plan = c.plan(1, 10).unwrap();
        assert!((eval(&f, &c, &plan, &[0.4]).jacobian()[[0, 0]] - 1.0).abs() < 0.01);
    }

    #[test]
    fn dgamma_matches_derivative_of_smoothed_step() {
        let f = TestFunction::Heaviside(1);
        let c = cfg(Distribution::Gaussian, 1.0, 1_000_000, StrategyKind::Mc, Covariate::Loo);
        let plan = c.plan(1, 21).unwrap();
        let at_one = eval(&f, &c, &plan, &[1.0]).dgamma().unwrap()[0];
        assert!((at_one + normal_pdf(1.0)).abs() < 0.005, "{at_one}");
        let at_zero = eval(&f, &c, &plan, &[0.0]).dgamma().unwrap()[0];
        assert!(at_zero.abs() < 0.005, "{at_zero}");
    }

    #[test]
    fn dgamma_of_identity_vanishes() {
        let f = TestFunction::Linear(2);
        for d in [Distribution::Gaussian, Distribution::Logistic, Distribution::Laplace] {
            let c = cfg(d, 1.5, 200_000, StrategyKind::RqmcLatin, Covariate::Loo);
            let plan = c.plan(2, 4).unwrap();
            let g = eval(&f, &c, &plan, &[1.0, -2.0]).dgamma().unwrap()[0];
            assert!(g.abs() < 0.02, "{d}: {g}");
        }
    }

    #[test]
    fn isotropic_matrix_trace_equals_dgamma() {
        let f = TestFunction::Argsort(3);
        let gamma = 0.8;
        let scalar = cfg(Distribution::Logistic, gamma, 4096, StrategyKind::Mc, Covariate::Loo);
        let plan = scalar.plan(3, 77).unwrap();
        let x = [0.2, -0.1, 0.4];
        let dg = eval(&f, &scalar, &plan, &x).dgamma().unwrap();
        let mut matrix = scalar.clone();
        matrix.scale = Scale::Matrix(LowerTriangular::scaled_identity(3, gamma).unwrap());
        let dl = eval(&f, &matrix, &plan, &x).dl().unwrap();
        for i in 0..9 {
            let trace: f64 = (0..3).map(|k| dl[[i, k, k]]).sum();
            assert!((trace - dg[i]).abs() < 1e-12, "{i}: {trace} vs {}", dg[i]);
        }
    }

    #[test]
    fn dl_matches_smoothed_step_under_anisotropic_scale() {
        let f = TestFunction::Heaviside(2);
        let l = LowerTriangular::diagonal(&[2.0, 1.0]).unwrap();
        let c = SmoothingConfig::new(Distribution::Gaussian, Scale::Matrix(l), 1 << 20)
            .with_strategy(Strategy::new(StrategyKind::RqmcCartesian, false))
            .with_covariate(Covariate::Loo);
        let plan = c.plan(2, 8).unwrap();
        let e = eval(&f, &c, &plan, &[1.0, 0.0]);
        let dl = e.dl().unwrap();
        // f_L(x) = Phi(x1 / L11): d/dL11 = -phi(1/2) / 4, d/dx1 = phi(1/2) / 2.
        assert!((dl[[0, 0, 0]] + normal_pdf(0.5) / 4.0).abs() < 2e-3, "{}", dl[[0, 0, 0]]);
        assert!(dl[[0, 1, 1]].abs() < 2e-3);
        assert!(dl[[0, 1, 0]].abs() < 2e-3);
        let j = e.jacobian();
        assert!((j[[0, 0]] - normal_pdf(0.5) / 2.0).abs() < 2e-3);
        assert!(j[[0, 1]].abs() < 2e-3);
    }

    #[test]
    fn output_covariance_of_smoothed_step() {
        let f = TestFunction::Heaviside(1);
        let c = cfg(Distribution::Gaussian, 1.0, 1 << 18, StrategyKind::RqmcCartesian, Covariate::Loo);
        let plan = c.plan(1, 2).unwrap();
        let at_zero = eval(&f, &c, &plan, &[0.0]).output_cov().unwrap();
        assert!((at_zero.g[[0, 0]] - 0.25).abs() < 0.01);
        assert!(at_zero.dg_dx[[0, 0, 0]].abs() < 0.01);
        let at_one = eval(&f, &c, &plan, &[1.0]).output_cov().unwrap();
        let p = normal_cdf(1.0);
        assert!((at_one.g[[0, 0]] - p * (1.0 - p)).abs() < 0.01);
        let expected = normal_pdf(1.0) * (1.0 - 2.0 * p);
        assert!((at_one.dg_dx[[0, 0, 0]] - expected).abs() < 0.01, "{}", at_one.dg_dx[[0, 0, 0]]);
    }

    #[test]
    fn output_covariance_is_symmetric_and_matches_direct_sums() {
        let f = TestFunction::Ranking(2);
        let c = cfg(Distribution::Gaussian, 1.0, 64, StrategyKind::Mc, Covariate::None);
        let plan = c.plan(2, 3).unwrap();
        let x = [0.1, -0.2];
        let cov = eval(&f, &c, &plan, &x).output_cov().unwrap();
        let outs: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                let e = plan.eps_row(i).unwrap();
                f.eval_vec(&[x[0] + e[0], x[1] + e[1]])
            })
            .collect();
        let mean: Vec<f64> = (0..4).map(|a| outs.iter().map(|o| o[a]).sum::<f64>() / 64.0).collect();
        for a in 0..4 {
            for b in 0..4 {
                let direct = outs.iter().map(|o| o[a] * o[b]).sum::<f64>() / 64.0 - mean[a] * mean[b];
                assert!((cov.g[[a, b]] - direct).abs() < 1e-12);
                for k in 0..2 {
                    assert!((cov.dg_dx[[a, b, k]] - cov.dg_dx[[b, a, k]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn median_weight_examples() {
        let q = median_weights::<f64>(&[1.0, 2.0, 3.0], 3).unwrap();
        assert!((q[1] - 1.0).abs() < 1e-12 && q[0].abs() < 1e-12 && q[2].abs() < 1e-12);
        let q = median_weights::<f64>(&[5.0, 1.0, 4.0, 2.0, 3.0], 3).unwrap();
        let expected = [0.0, 0.0, 0.3, 0.3, 0.4];
        for (a, b) in q.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        // Ties split the mass of their ranks evenly.
        let q = median_weights::<f64>(&[1.0, 2.0, 2.0, 3.0, 4.0], 3).unwrap();
        assert!((q[1] - 0.35).abs() < 1e-12 && (q[2] - 0.35).abs() < 1e-12);
        assert_eq!(median_weights(&[1.0; 4], 2), Err(Error::EvenKUnsupported(2)));
        assert_eq!(median_weights(&[1.0; 4], 5), Err(Error::KExceedsS { k: 5, s: 4 }));
        assert_eq!(median_weights(&[1.0; 4], 1), Err(Error::KExceedsS { k: 1, s: 4 }));
    }

    /// Average over every k-subset of (median output * its score / gamma).
    fn subset_oracle(values: &[f64], scores: &[f64], k: usize, gamma: f64) -> (f64, f64) {
        fn subsets(s: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..s {
                cur.push(i);
                subsets(s, k, i + 1, cur, out);
                cur.pop();
            }
        }
        let mut all = Vec::new();
        subsets(values.len(), k, 0, &mut Vec::new(), &mut all);
        let (mut v, mut g) = (0.0, 0.0);
        for subset in &all {
            let mut sorted = subset.clone();
            sorted.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
            let med = sorted[k / 2];
            v += values[med];
            g += values[med] * scores[med] / gamma;
        }
        (v / all.len() as f64, g / all.len() as f64)
    }

    #[test]
    fn median_gradient_equals_subset_enumeration() {
        let f = TestFunction::Linear(1);
        let c = cfg(Distribution::Gaussian, 1.0, 6, StrategyKind::Mc, Covariate::None);
        for seed in 0..5 {
            let plan = c.plan(1, seed).unwrap();
            let m = median_gradient(&f, &c, &plan, &[0.0], 3).unwrap();
            let eps: Vec<f64> = plan.eps().unwrap().column(0).to_vec();
            let (v, g) = subset_oracle(&eps, &eps, 3, 1.0);
            assert!((m.value - v).abs() < 1e-12);
            assert!((m.grad[0] - g).abs() < 1e-12);
        }
    }

    #[test]
    fn median_of_constant() {
        let f = TestFunction::Constant(1, 2.5);
        let c = cfg(Distribution::Cauchy, 1.0, 101, StrategyKind::Mc, Covariate::None);
        let plan = c.plan(1, 1).unwrap();
        let m = median_gradient(&f, &c, &plan, &[0.0], 5).unwrap();
        assert!((m.value - 2.5).abs() < 1e-12);
        let vector = TestFunction::Identity(2);
        let c2 = cfg(Distribution::Cauchy, 1.0, 101, StrategyKind::Mc, Covariate::None);
        let plan2 = c2.plan(2, 1).unwrap();
        assert_eq!(median_gradient(&vector, &c2, &plan2, &[0.0, 0.0], 5), Err(Error::VectorOutputUnsupported(2)));
    }

    #[test]
    fn repeated_evaluation_is_bit_identical_and_matches_serial_sum() {
        let f = TestFunction::Argsort(4);
        let c = cfg(Distribution::Gaussian, 0.5, 10_000, StrategyKind::Mc, Covariate::Loo);
        let plan = c.plan(4, 123).unwrap();
        let x = [0.3, -0.2, 0.0, 0.1];
        let a = estimate(&f, &c, &plan, &x, ReportOptions { with_cov: true, median_k: None }).unwrap();
        let b = estimate(&f, &c, &plan, &x, ReportOptions { with_cov: true, median_k: None }).unwrap();
        assert_eq!(a, b);

        let e = eval(&f, &c, &plan, &x);
        let mean = e.value();
        let mut serial = Array2::<f64>::zeros((16, 4));
        for i in 0..10_000 {
            let eps = plan.eps_row(i).unwrap();
            let score: Vec<f64> = eps.iter().map(|&v| Distribution::Gaussian.score(v).unwrap() / 0.5).collect();
            for o in 0..16 {
                let r = (e.outputs()[[i, o]] - mean[o]) * 10_000.0 / 9_999.0;
                for k in 0..4 {
                    serial[[o, k]] += r * score[k];
                }
            }
        }
        serial.mapv_inplace(|v| v / 10_000.0);
        let scale = serial.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (p, q) in a.jacobian.iter().zip(serial.iter()) {
            assert!((p - q).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn non_finite_outputs_are_reported_by_index() {
        let f = from_fn(1, 1, |x: &[f64], out: &mut [f64]| out[0] = if x[0] > 1.0 { f64::NAN } else { 0.0 });
        let c = cfg(Distribution::Gaussian, 1.0, 4, StrategyKind::Mc, Covariate::None);
        let plan = SamplePlan::from_perturbations(Distribution::Gaussian, array![[0.0], [-1.0], [2.0], [3.0]]);
        assert_eq!(Evaluation::new(&f, &c, &plan, &[0.0]).unwrap_err(), Error::NonFiniteOutput(2));
        let c = c.with_covariate(Covariate::FAtX);
        assert_eq!(Evaluation::new(&f, &c, &plan, &[5.0]).unwrap_err(), Error::NonFiniteOutput(0));
    }

    #[test]
    fn configuration_errors() {
        let f = TestFunction::Linear(2);
        let c = cfg(Distribution::Gaussian, 1.0, 1, StrategyKind::Mc, Covariate::Loo);
        assert_eq!(c.validate(2), Err(Error::CovariateNeedsTwoSamples));
        let c = cfg(Distribution::Gaussian, 1.0, 8, StrategyKind::Mc, Covariate::None);
        let plan = c.plan(2, 0).unwrap();
        assert_eq!(
            Evaluation::new(&f, &c, &plan, &[0.0]).unwrap_err(),
            Error::DimensionMismatch { expected: 2, got: 1 }
        );
        let raw = make_plan::<f64>(Strategy::mc(), 8, 2, 0).unwrap();
        assert_eq!(Evaluation::new(&f, &c, &raw, &[0.0, 0.0]).unwrap_err(), Error::PlanNotTransformed);
        let other = plan.clone();
        let c16 = cfg(Distribution::Gaussian, 1.0, 16, StrategyKind::Mc, Covariate::None);
        assert!(matches!(Evaluation::new(&f, &c16, &other, &[0.0, 0.0]), Err(Error::SampleCountMismatch { .. })));
        let mut matrix = c.clone();
        matrix.scale = Scale::Matrix(LowerTriangular::diagonal(&[1.0, 2.0]).unwrap());
        assert_eq!(dgamma(&f, &matrix, &plan, &[0.0, 0.0]), Err(Error::MatrixScaleNotAllowed));
        let logistic = cfg(Distribution::Logistic, 1.0, 8, StrategyKind::Mc, Covariate::None);
        assert!(matches!(Evaluation::new(&f, &logistic, &plan, &[0.0, 0.0]), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn composed_objective() {
        let h = TestFunction::Identity(3);
        let f = compose_objective(h, |y: &[f64]| y.iter().sum());
        assert_eq!(BlackBox::<f64>::output_dim(&f), 1);
        assert_eq!(f.eval_vec(&[1.0, 2.0, 3.5]), vec![6.5]);

        // Frobenius distance between permutation matrices of n = 3 is sqrt(2 * moved).
        let target = crate::testbed::argsort_permutation(&[0.0, 1.0, 2.0]);
        let loss = compose_objective(TestFunction::Argsort(3), move |p: &[f64]| {
            p.iter().zip(target.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        });
        let allowed = [0.0, 2.0f64.sqrt() * 2.0f64.sqrt(), 6.0f64.sqrt()];
        for x in [[0.0, 1.0, 2.0], [1.0, 0.0, 2.0], [2.0, 0.0, 1.0], [2.0, 1.0, 0.0]] {
            let v = loss.eval_vec(&x)[0];
            assert!(allowed.iter().any(|a| (a - v).abs() < 1e-12), "{v}");
        }

        // Linear loss: smoothing the loss equals the loss of the smoothed algorithm.
        let c = cfg(Distribution::Gaussian, 1.0, 512, StrategyKind::Mc, Covariate::None);
        let plan = c.plan(3, 6).unwrap();
        let x = [0.2, 0.0, -0.3];
        let weights = [1.0, -2.0, 0.5, 0.0, 3.0, 1.0, -1.0, 0.25, 2.0];
        let inner = jacobian(&TestFunction::Argsort(3), &c, &plan, &x).unwrap();
        let linear = compose_objective(TestFunction::Argsort(3), move |p: &[f64]| p.iter().zip(weights).map(|(a, w)| a * w).sum());
        let outer = jacobian(&linear, &c, &plan, &x).unwrap();
        for k in 0..3 {
            let chained: f64 = (0..9).map(|i| weights[i] * inner[[i, k]]).sum();
            assert!((chained - outer[[0, k]]).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn median_weights_form_a_distribution(values in proptest::collection::vec(-5.0f64..5.0, 3..40), half in 1usize..6) {
            let k = 2 * half + 1;
            prop_assume!(k <= values.len());
            let q = median_weights(&values, k).unwrap();
            prop_assert!(q.iter().all(|&w| w >= 0.0));
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn median_weights_match_enumeration(values in proptest::collection::vec(-5.0f64..5.0, 3..10)) {
            let q = median_weights(&values, 3).unwrap();
            let (v, _) = subset_oracle(&values, &vec![0.0; values.len()], 3, 1.0);
            let weighted: f64 = q.iter().zip(&values).map(|(a, b)| a * b).sum();
            prop_assert!((weighted - v).abs() < 1e-9);
        }
    }
}
