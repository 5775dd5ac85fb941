use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, ArrayViewD, Axis, Dimension};
use serde_json::{json, Value};

use smoothgrad::bench::{run_bench, BenchSpec};
use smoothgrad::optim::{minimize, GdOptions};
use smoothgrad::testbed::{GridCostMap, TestFunction};
use smoothgrad::{
    compose_objective, estimate, BlackBox, Config, Covariate, Distribution, Error, LowerTriangular, Report, ReportOptions, Scale,
    Strategy, StrategyKind,
};

#[derive(Parser)]
#[command(name = "smoothgrad", version, about = "Stochastic-smoothing gradient estimates for black-box functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the smoothed value, Jacobian and scale gradients at one point.
    Estimate(EstimateArgs),
    /// Run a variance benchmark described by a key=value spec file.
    Bench(BenchArgs),
    /// Gradient descent on a smoothed scalar objective.
    Optimize(OptimizeArgs),
}

#[derive(Args)]
struct Smoothing {
    /// argsort, rank, shortest-path, heaviside, staircase, linear, identity, constant
    #[arg(long)]
    function: String,
    /// Input size (grid side for shortest-path); inferred from the point when omitted.
    #[arg(long)]
    n: Option<usize>,
    /// Grid of shortest-path costs, one comma-separated row per line.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value = "gaussian")]
    dist: String,
    #[arg(long, conflicts_with = "scale_matrix")]
    gamma: Option<f64>,
    /// Lower-triangular scale matrix as CSV rows.
    #[arg(long)]
    scale_matrix: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    samples: usize,
    #[arg(long, default_value = "mc")]
    strategy: String,
    #[arg(long)]
    antithetic: bool,
    #[arg(long, default_value = "none")]
    covariate: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    smoothing: Smoothing,
    /// Comma-separated point.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "grid")]
    x: Option<String>,
    #[arg(long)]
    median_k: Option<usize>,
    #[arg(long)]
    with_cov: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    out: Format,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    smoothing: Smoothing,
    /// Comma-separated starting point.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "grid")]
    x0: Option<String>,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma_decay: f64,
    /// Reduction of the function's outputs to the scalar objective.
    #[arg(long, value_enum, default_value_t = Loss::Identity)]
    loss: Loss,
    /// Trajectory CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Loss {
    /// The single output itself.
    Identity,
    /// Sum of absolute outputs.
    Abs,
    Sum,
    /// Euclidean norm of the outputs.
    Norm,
}

impl Loss {
    fn name(self) -> &'static str {
        match self {
            Loss::Identity => "identity",
            Loss::Abs => "abs",
            Loss::Sum => "sum",
            Loss::Norm => "norm",
        }
    }

    fn apply(self) -> fn(&[f64]) -> f64 {
        match self {
            Loss::Identity => |y| y[0],
            Loss::Abs => |y| y.iter().map(|v| v.abs()).sum(),
            Loss::Sum => |y| y.iter().sum(),
            Loss::Norm => |y| y.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

enum Failure {
    Usage(String),
    NonFinite(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteOutput(_) | Error::NonFiniteCenter => Failure::NonFinite(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

type Outcome<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn read(path: &Path) -> Outcome<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Outcome<()> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn parse_point(text: &str) -> Outcome<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| usage(format!("cannot parse '{}' as a number", v.trim()))))
        .collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Reads full or ragged lower-triangular rows.
fn parse_scale_matrix(text: &str) -> Outcome<LowerTriangular<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse_point)
        .collect::<Outcome<_>>()?;
    let n = rows.len();
    let mut m = Array2::zeros((n, n));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != i + 1 && row.len() != n {
            return Err(usage(format!("scale matrix row {} has {} entries, expected {} or {n}", i + 1, row.len(), i + 1)));
        }
        for (j, &v) in row.iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    Ok(LowerTriangular::new(m)?)
}

/// Everything needed to rerun the command, in canonical form.
struct Resolved {
    function: TestFunction,
    point: Vec<f64>,
    cfg: Config,
    seed: u64,
    /// Canonical flags shared by `estimate` and `optimize`.
    flags: String,
}

fn resolve(s: &Smoothing, point: Option<&str>, point_flag: &str) -> Outcome<Resolved> {
    let distribution: Distribution = s.dist.parse().map_err(usage)?;
    let kind: StrategyKind = s.strategy.parse().map_err(usage)?;
    let covariate: Covariate = s.covariate.parse().map_err(usage)?;

    let mut flags = String::new();
    let (point, size) = match (&s.grid, point) {
        (Some(path), _) => {
            let grid = GridCostMap::<f64>::from_csv(&read(path)?)?;
            if grid.height() != grid.width() {
                return Err(usage(format!("grid must be square, got {}x{}", grid.height(), grid.width())));
            }
            let _ = write!(flags, " --grid {}", path.display());
            (grid.costs().iter().copied().collect::<Vec<_>>(), grid.height())
        }
        (None, Some(text)) => {
            let p = parse_point(text)?;
            (p, 0)
        }
        (None, None) => return Err(usage(format!("one of {point_flag} or --grid is required"))),
    };
    let size = match (s.n, size) {
        (Some(n), 0) => n,
        (None, 0) => {
            let is_path = TestFunction::from_name(&s.function, 2).map(|f| matches!(f, TestFunction::ShortestPath(_)));
            if is_path.unwrap_or(false) {
                (point.len() as f64).sqrt().round() as usize
            } else {
                point.len()
            }
        }
        (Some(n), side) if n != side => return Err(usage(format!("--n {n} disagrees with the {side}x{side} grid"))),
        (_, side) => side,
    };
    let function = TestFunction::from_name(&s.function, size)?;
    let dim = BlackBox::<f64>::input_dim(&function);
    if point.len() != dim {
        return Err(usage(format!("{} of size {size} takes {dim} inputs, got {}", function.name(), point.len())));
    }
    flags = format!("--function {} --n {size}{flags}", function.name());
    if s.grid.is_none() {
        let _ = write!(flags, " {point_flag} {}", join(&point));
    }

    let scale = match (&s.scale_matrix, s.gamma) {
        (Some(path), _) => {
            let _ = write!(flags, " --dist {distribution} --scale-matrix {}", path.display());
            Scale::Matrix(parse_scale_matrix(&read(path)?)?)
        }
        (None, gamma) => {
            let gamma = gamma.unwrap_or(1.0);
            let _ = write!(flags, " --dist {distribution} --gamma {gamma}");
            Scale::scalar(gamma)?
        }
    };
    let _ = write!(flags, " --samples {} --strategy {kind}", s.samples);
    if s.antithetic {
        flags.push_str(" --antithetic");
    }
    let _ = write!(flags, " --covariate {covariate} --seed {}", s.seed);

    let cfg = Config::new(distribution, scale, s.samples)
        .with_strategy(Strategy::new(kind, s.antithetic))
        .with_covariate(covariate);
    cfg.validate(dim)?;
    Ok(Resolved { function, point, cfg, seed: s.seed, flags })
}

fn config_json(r: &Resolved) -> Value {
    let scale = match &r.cfg.scale {
        Scale::Scalar(g) => json!({ "gamma": g }),
        Scale::Matrix(l) => json!({ "matrix": nested(l.matrix().view().into_dyn()) }),
    };
    json!({
        "function": r.function.name(),
        "size": r.function.size(),
        "x": r.point,
        "distribution": r.cfg.distribution.name(),
        "scale": scale,
        "samples": r.cfg.samples,
        "strategy": r.cfg.strategy.kind.name(),
        "antithetic": r.cfg.strategy.antithetic,
        "covariate": r.cfg.covariate.name(),
        "seed": r.seed,
    })
}

fn nested(a: ArrayViewD<f64>) -> Value {
    if a.ndim() == 0 {
        json!(a.first().copied().unwrap_or(f64::NAN))
    } else {
        Value::Array(a.axis_iter(Axis(0)).map(nested).collect())
    }
}

fn report_json(command: &str, r: &Resolved, report: &Report) -> Value {
    let mut out = json!({
        "command": command,
        "config": config_json(r),
        "samples_used": report.samples_used,
        "value": report.value.to_vec(),
        "jacobian": nested(report.jacobian.view().into_dyn()),
    });
    let obj = out.as_object_mut().expect("object literal");
    if let Some(dg) = &report.dgamma {
        obj.insert("dgamma".into(), json!(dg.to_vec()));
    }
    if let Some(dl) = &report.dl {
        obj.insert("dl".into(), nested(dl.view().into_dyn()));
    }
    if let Some(c) = &report.out_cov {
        obj.insert(
            "output_cov".into(),
            json!({
                "g": nested(c.g.view().into_dyn()),
                "dg_dx": nested(c.dg_dx.view().into_dyn()),
                "dg_dl": nested(c.dg_dl.view().into_dyn()),
            }),
        );
    }
    if let Some(m) = &report.median {
        obj.insert("median".into(), json!({ "k": m.k, "value": m.value, "grad": m.grad.to_vec() }));
    }
    out
}

fn csv_rows(out: &mut String, name: &str, a: ArrayViewD<f64>) {
    for (idx, v) in a.indexed_iter() {
        let index = idx.slice().iter().map(ToString::to_string).collect::<Vec<_>>().join(":");
        let _ = writeln!(out, "{name},{index},{v}");
    }
}

fn report_csv(command: &str, r: &Resolved, report: &Report) -> String {
    let mut out = format!("# command: {command}\n# config: {}\n", config_json(r));
    let _ = writeln!(out, "# samples_used: {}", report.samples_used);
    out.push_str("quantity,index,value\n");
    csv_rows(&mut out, "value", report.value.view().into_dyn());
    csv_rows(&mut out, "jacobian", report.jacobian.view().into_dyn());
    if let Some(dg) = &report.dgamma {
        csv_rows(&mut out, "dgamma", dg.view().into_dyn());
    }
    if let Some(dl) = &report.dl {
        csv_rows(&mut out, "dl", dl.view().into_dyn());
    }
    if let Some(c) = &report.out_cov {
        csv_rows(&mut out, "cov", c.g.view().into_dyn());
        csv_rows(&mut out, "cov_dx", c.dg_dx.view().into_dyn());
        csv_rows(&mut out, "cov_dl", c.dg_dl.view().into_dyn());
    }
    if let Some(m) = &report.median {
        let _ = writeln!(out, "median_k,,{}", m.k);
        let _ = writeln!(out, "median_value,,{}", m.value);
        csv_rows(&mut out, "median_grad", m.grad.view().into_dyn());
    }
    out
}

fn run_estimate(args: &EstimateArgs) -> Outcome<()> {
    let r = resolve(&args.smoothing, args.x.as_deref(), "--x")?;
    let mut command = format!("smoothgrad estimate {}", r.flags);
    if let Some(k) = args.median_k {
        let _ = write!(command, " --median-k {k}");
    }
    if args.with_cov {
        command.push_str(" --with-cov");
    }
    let format = match args.out {
        Format::Json => "json",
        Format::Csv => "csv",
    };
    let _ = write!(command, " --out {format}");

    let n = r.point.len();
    let plan = r.cfg.plan(n, r.seed)?;
    let options = ReportOptions { with_cov: args.with_cov, median_k: args.median_k };
    let report = estimate(&r.function, &r.cfg, &plan, &r.point, options)?;
    match args.out {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report_json(&command, &r, &report)).expect("serializable")),
        Format::Csv => print!("{}", report_csv(&command, &r, &report)),
    }
    Ok(())
}

fn run_bench_command(args: &BenchArgs) -> Outcome<()> {
    let spec = BenchSpec::parse(&read(&args.spec)?)?;
    let result = run_bench(&spec)?;
    let command = format!("smoothgrad bench --spec {} --out {}", args.spec.display(), args.out.display());
    write(&args.out, &format!("# command: {command}\n{}", result.to_csv()))?;
    for cell in &result.cells {
        println!("{}", cell.summary());
    }
    Ok(())
}

fn run_optimize(args: &OptimizeArgs) -> Outcome<()> {
    let r = resolve(&args.smoothing, args.x0.as_deref(), "--x0")?;
    let m = BlackBox::<f64>::output_dim(&r.function);
    if args.loss == Loss::Identity && m != 1 {
        return Err(usage(format!("{} has {m} outputs; choose --loss abs, sum or norm", r.function.name())));
    }
    let mut command = format!(
        "smoothgrad optimize {} --steps {} --lr {} --gamma-decay {} --loss {}",
        r.flags,
        args.steps,
        args.lr,
        args.gamma_decay,
        args.loss.name()
    );
    if let Some(path) = &args.out {
        let _ = write!(command, " --out {}", path.display());
    }
    let options = GdOptions::new(args.steps, args.lr, r.seed).with_gamma_decay(args.gamma_decay);
    let objective = compose_objective(r.function.clone(), args.loss.apply());
    let trajectory = minimize(&objective, &r.cfg, &r.point, options)?;
    let text = format!("# command: {command}\n# config: {}\n{}", config_json(&r), trajectory.to_csv());
    match &args.out {
        Some(path) => {
            write(path, &text)?;
            let last = trajectory.last();
            println!("step {}: x = [{}], f = {}", last.step, join(&last.x), last.fx);
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Estimate(a) => run_estimate(a),
        Command::Bench(a) => run_bench_command(a),
        Command::Optimize(a) => run_optimize(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::NonFinite(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
