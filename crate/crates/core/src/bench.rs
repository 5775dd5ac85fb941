//! Variance benchmark: mean L2 distance between estimated and reference
//! Jacobians over distributions x strategies x antithetic x covariates.
//!
//! Every trial draws its own base point. Base points and reference Jacobians
//! are shared by all cells of a distribution, so cells are compared on the
//! same inputs, and every random stream is derived from the master seed so
//! the table does not depend on thread scheduling.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::estimators::{BlackBox, Covariate, Evaluation, SmoothingConfig};
use crate::oracle::{bruteforce_oracle, BruteForceOracle};
use crate::rng::{derive_seed, stream};
use crate::sampling::{Strategy, StrategyKind};
use crate::scale::Scale;
use crate::testbed::TestFunction;

pub const CSV_COLUMNS: &str = "function,n,distribution,strategy,antithetic,covariate,samples,trials,mean_l2,stderr,oracle_se,seed";
/// Marker for combinations the sampling preconditions rule out.
pub const INVALID_CELL: &str = "—";

const BASE_STREAM: u64 = 0xBA5E;
const ORACLE_STREAM: u64 = 0x0AC1E;
const CELL_STREAM: u64 = 0xCE11;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub function: TestFunction,
    pub distributions: Vec<Distribution>,
    pub strategies: Vec<StrategyKind>,
    pub covariates: Vec<Covariate>,
    pub antithetic: Vec<bool>,
    pub samples: usize,
    pub trials: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Reference budget is `oracle_factor * samples`, capped at `oracle_cap`.
    pub oracle_factor: usize,
    pub oracle_cap: usize,
}

impl BenchSpec {
    pub fn new(function: TestFunction, distributions: Vec<Distribution>, samples: usize, trials: usize) -> Self {
        Self {
            function,
            distributions,
            strategies: StrategyKind::ALL.to_vec(),
            covariates: Covariate::ALL.to_vec(),
            antithetic: vec![false],
            samples,
            trials,
            gamma: 1.0,
            seed: 0,
            oracle_factor: 64,
            oracle_cap: 1 << 22,
        }
    }

    pub fn oracle_budget(&self) -> usize {
        (self.oracle_factor * self.samples).min(self.oracle_cap)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| Err(Error::InvalidConfig(format!("bench spec lists no {what}")));
        if self.distributions.is_empty() {
            return empty("distributions");
        }
        if self.strategies.is_empty() {
            return empty("strategies");
        }
        if self.covariates.is_empty() {
            return empty("covariates");
        }
        if self.antithetic.is_empty() {
            return empty("antithetic settings");
        }
        if self.samples == 0 {
            return Err(Error::NoSamples);
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("bench spec needs at least one trial".into()));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidScale(self.gamma));
        }
        if self.oracle_budget() < 2 * crate::oracle::ORACLE_SEEDS {
            return Err(Error::InvalidConfig(format!("oracle budget {} is too small", self.oracle_budget())));
        }
        Ok(())
    }

    /// Parses the flat `key = value` format; lists are comma separated and
    /// `#` starts a comment line.
    ///
    /// Keys: `function`, `n`, `distributions`, `strategies`, `covariates`,
    /// `antithetic`, `samples`, `trials`, `gamma`, `seed`, `oracle_factor`,
    /// `oracle_cap`. Only `function` and `distributions` are required.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidConfig(msg);
        let mut function: Option<String> = None;
        let mut size = 3usize;
        let mut distributions: Option<Vec<Distribution>> = None;
        let mut spec = BenchSpec::new(TestFunction::Argsort(3), Vec::new(), 1000, 100);

        fn list<T, E: std::fmt::Display>(value: &str, parse: impl Fn(&str) -> std::result::Result<T, E>) -> Result<Vec<T>> {
            value
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| parse(v).map_err(|e| Error::InvalidConfig(e.to_string())))
                .collect()
        }
        fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::InvalidConfig(format!("bench spec: bad value '{value}' for {key}")))
        }
        fn flag(v: &str) -> std::result::Result<bool, String> {
            match v.to_ascii_lowercase().as_str() {
                "true" | "on" | "yes" | "1" => Ok(true),
                "false" | "off" | "no" | "0" => Ok(false),
                _ => Err(format!("bench spec: bad antithetic flag '{v}'")),
            }
        }

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("bench spec line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "function" => function = Some(value.to_string()),
                "n" | "size" => size = number(key, value)?,
                "distributions" => distributions = Some(list(value, str::parse::<Distribution>)?),
                "strategies" => spec.strategies = list(value, str::parse::<StrategyKind>)?,
                "covariates" => spec.covariates = list(value, str::parse::<Covariate>)?,
                "antithetic" => spec.antithetic = list(value, flag)?,
                "samples" => spec.samples = number(key, value)?,
                "trials" => spec.trials = number(key, value)?,
                "gamma" => spec.gamma = number(key, value)?,
                "seed" => spec.seed = number(key, value)?,
                "oracle_factor" => spec.oracle_factor = number(key, value)?,
                "oracle_cap" => spec.oracle_cap = number(key, value)?,
                other => return Err(bad(format!("bench spec line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        let function = function.ok_or_else(|| bad("bench spec is missing 'function'".into()))?;
        spec.function = TestFunction::from_name(&function, size)?;
        spec.distributions = distributions.ok_or_else(|| bad("bench spec is missing 'distributions'".into()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical spec text; parsing it yields an identical spec.
    pub fn to_spec_string(&self) -> String {
        let join = |items: Vec<String>| items.join(",");
        format!(
            "function={}\nn={}\ndistributions={}\nstrategies={}\ncovariates={}\nantithetic={}\nsamples={}\ntrials={}\ngamma={}\nseed={}\noracle_factor={}\noracle_cap={}\n",
            self.function.name(),
            self.function.size(),
            join(self.distributions.iter().map(|d| d.to_string()).collect()),
            join(self.strategies.iter().map(|s| s.to_string()).collect()),
            join(self.covariates.iter().map(|c| c.to_string()).collect()),
            join(self.antithetic.iter().map(|a| a.to_string()).collect()),
            self.samples,
            self.trials,
            self.gamma,
            self.seed,
            self.oracle_factor,
            self.oracle_cap,
        )
    }
}

/// How base points are drawn for a function.
pub fn base_point_rule(function: &TestFunction) -> &'static str {
    match function {
        TestFunction::ShortestPath(_) => "grid costs i.i.d. uniform on [0.1, 1] per trial",
        _ => "x i.i.d. standard normal per trial",
    }
}

/// Draws the base point of trial `trial`.
pub fn base_point(function: &TestFunction, seed: u64, trial: usize) -> Vec<f64> {
    let mut rng = stream(derive_seed(seed, &[BASE_STREAM, trial as u64]));
    let n = BlackBox::<f64>::input_dim(function);
    match function {
        TestFunction::ShortestPath(_) => (0..n).map(|_| rng.random_range(0.1..1.0)).collect(),
        _ => (0..n).map(|_| Distribution::Gaussian.sample(&mut rng)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    /// Mean over trials of the Frobenius norm of the Jacobian error.
    pub mean_l2: f64,
    /// Standard error of `mean_l2` across trials.
    pub stderr: f64,
    /// Mean bootstrap standard error of the reference Jacobians.
    pub oracle_se: f64,
}

impl CellStats {
    /// Reference noise is more than a tenth of the measured error.
    pub fn flagged(&self) -> bool {
        self.oracle_se > 0.1 * self.mean_l2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub distribution: Distribution,
    pub strategy: Strategy,
    pub covariate: Covariate,
    /// `None` for combinations the sampling preconditions rule out.
    pub stats: Option<CellStats>,
    /// Root of the cell's per-trial streams.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub spec: BenchSpec,
    pub cells: Vec<BenchCell>,
}

impl BenchResult {
    pub fn cell(&self, d: Distribution, kind: StrategyKind, antithetic: bool, covariate: Covariate) -> Option<&BenchCell> {
        self.cells.iter().find(|c| {
            c.distribution == d && c.strategy.kind == kind && c.strategy.antithetic == antithetic && c.covariate == covariate
        })
    }

    pub fn to_csv(&self) -> String {
        let spec = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "# smoothgrad bench v{}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# base points: {}", base_point_rule(&spec.function));
        let _ = writeln!(
            out,
            "# oracle: {} samples over {} seeds, randomized QMC with leave-one-out covariate",
            spec.oracle_budget(),
            crate::oracle::ORACLE_SEEDS
        );
        let _ = writeln!(out, "# error: Frobenius norm of the flattened Jacobian difference; gamma={}", spec.gamma);
        let _ = writeln!(out, "# spec: {}", spec.to_spec_string().trim_end().replace('\n', ";"));
        let flagged: Vec<String> = self
            .cells
            .iter()
            .filter(|c| c.stats.is_some_and(|s| s.flagged()))
            .map(|c| c.label())
            .collect();
        let _ = writeln!(
            out,
            "# flagged (oracle_se > 10% of mean_l2): {}",
            if flagged.is_empty() { "none".to_string() } else { flagged.join(" ") }
        );
        let _ = writeln!(out, "{CSV_COLUMNS}");
        for cell in &self.cells {
            let (mean, se, ose) = match cell.stats {
                Some(s) => (s.mean_l2.to_string(), s.stderr.to_string(), s.oracle_se.to_string()),
                None => (INVALID_CELL.into(), INVALID_CELL.into(), INVALID_CELL.into()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                spec.function.name(),
                spec.function.size(),
                cell.distribution,
                cell.strategy.kind,
                cell.strategy.antithetic,
                cell.covariate,
                spec.samples,
                spec.trials,
                mean,
                se,
                ose,
                cell.seed
            );
        }
        out
    }
}

impl BenchCell {
    pub fn label(&self) -> String {
        format!(
            "{}/{}{}/{}",
            self.distribution,
            self.strategy.kind,
            if self.strategy.antithetic { "+antithetic" } else { "" },
            self.covariate
        )
    }

    pub fn summary(&self) -> String {
        match self.stats {
            Some(s) => format!(
                "{:<40} mean_l2={:.6} stderr={:.6} oracle_se={:.6}{}",
                self.label(),
                s.mean_l2,
                s.stderr,
                s.oracle_se,
                if s.flagged() { " [flagged]" } else { "" }
            ),
            None => format!("{:<40} {INVALID_CELL}", self.label()),
        }
    }
}

struct Reference {
    x: Vec<f64>,
    oracle: BruteForceOracle,
}

/// Runs every cell of the spec.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchResult> {
    spec.validate()?;
    let f = spec.function;
    let n = BlackBox::<f64>::input_dim(&f);
    let scale = Scale::scalar(spec.gamma)?;
    let mut cells = Vec::new();
    let mut cell_index = 0u64;

    for (di, &d) in spec.distributions.iter().enumerate() {
        let references: Vec<Reference> = (0..spec.trials)
            .into_par_iter()
            .map(|t| {
                let x = base_point(&f, spec.seed, t);
                let oracle_seed = derive_seed(spec.seed, &[ORACLE_STREAM, di as u64, t as u64]);
                let oracle = bruteforce_oracle(&f, d, &x, &scale, spec.oracle_budget(), oracle_seed)?;
                Ok(Reference { x, oracle })
            })
            .collect::<Result<_>>()?;
        let oracle_se = references.iter().map(|r| r.oracle.se).sum::<f64>() / spec.trials as f64;

        for &kind in &spec.strategies {
            for &antithetic in &spec.antithetic {
                for &covariate in &spec.covariates {
                    let strategy = Strategy::new(kind, antithetic);
                    let cell_seed = derive_seed(spec.seed, &[CELL_STREAM, cell_index]);
                    cell_index += 1;
                    let cfg = SmoothingConfig::new(d, scale.clone(), spec.samples)
                        .with_strategy(strategy)
                        .with_covariate(covariate);
                    let stats = match cfg.validate(n) {
                        Err(_) => None,
                        Ok(()) => Some(run_cell(&f, &cfg, &references, cell_seed, oracle_se)?),
                    };
                    cells.push(BenchCell { distribution: d, strategy, covariate, stats, seed: cell_seed });
                }
            }
        }
    }
    Ok(BenchResult { spec: spec.clone(), cells })
}

fn run_cell(f: &TestFunction, cfg: &SmoothingConfig<f64>, references: &[Reference], cell_seed: u64, oracle_se: f64) -> Result<CellStats> {
    let n = BlackBox::<f64>::input_dim(f);
    let errors: Vec<f64> = references
        .par_iter()
        .enumerate()
        .map(|(t, r)| {
            let plan = cfg.plan(n, derive_seed(cell_seed, &[t as u64]))?;
            let estimate = Evaluation::new(f, cfg, &plan, &r.x)?.jacobian();
            Ok(frobenius(&(estimate - &r.oracle.jacobian)))
        })
        .collect::<Result<_>>()?;
    let trials = errors.len() as f64;
    let mean_l2 = errors.iter().sum::<f64>() / trials;
    let stderr = if errors.len() > 1 {
        let var = errors.iter().map(|e| (e - mean_l2).powi(2)).sum::<f64>() / (trials - 1.0);
        (var / trials).sqrt()
    } else {
        0.0
    };
    Ok(CellStats { mean_l2, stderr, oracle_se })
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
