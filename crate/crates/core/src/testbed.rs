//! Piecewise-constant black boxes: sorting, ranking, grid shortest paths and
//! analytic step fixtures. Their derivatives vanish almost everywhere, which
//! is exactly where stochastic smoothing is needed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::estimators::BlackBox;
use crate::scalar::Scalar;

/// Perturbed cell costs below this value are raised to it before routing.
pub const COST_FLOOR: f64 = 1e-6;

fn sort_order<T: Scalar>(x: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    // Stable sort keeps the original index order among ties.
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(Ordering::Equal));
    order
}

/// Permutation matrix `P` with `P x` sorted ascending.
pub fn argsort_permutation<T: Scalar>(x: &[T]) -> Array2<T> {
    let n = x.len();
    let mut p = Array2::zeros((n, n));
    for (row, idx) in sort_order(x).into_iter().enumerate() {
        p[[row, idx]] = T::one();
    }
    p
}

/// Ranking permutation, the transpose of [`argsort_permutation`].
pub fn ranking_matrix<T: Scalar>(x: &[T]) -> Array2<T> {
    argsort_permutation(x).reversed_axes()
}

/// 1 if the first coordinate is non-negative, else 0.
pub fn heaviside<T: Scalar>(x: &[T]) -> T {
    if x[0] >= T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

pub fn staircase<T: Scalar>(x: T, step: T) -> T {
    (x / step).floor() * step
}

/// Positive per-cell costs on a rectangular grid, routed from the top-left
/// corner to the bottom-right corner.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCostMap<T> {
    costs: Array2<T>,
}

impl<T: Scalar> GridCostMap<T> {
    /// `costs` is `height x width`.
    pub fn new(costs: Array2<T>) -> Result<Self> {
        let (h, w) = costs.dim();
        if h < 2 || w < 2 {
            return Err(Error::InvalidConfig(format!("grid must be at least 2x2, got {h}x{w}")));
        }
        if let Some(bad) = costs.iter().find(|c| !(c.is_finite() && **c > T::zero())) {
            return Err(Error::InvalidConfig(format!("grid costs must be finite and positive, got {bad}")));
        }
        Ok(Self { costs })
    }

    /// One grid row per line, comma-separated positive reals.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<T>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    cell.trim()
                        .parse::<f64>()
                        .map(T::lit)
                        .map_err(|_| Error::InvalidConfig(format!("grid line {}: cannot parse '{}'", lineno + 1, cell.trim())))
                })
                .collect::<Result<Vec<T>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::InvalidConfig(format!(
                        "grid line {}: expected {} columns, got {}",
                        lineno + 1,
                        first.len(),
                        row.len()
                    )));
                }
            }
            rows.push(row);
        }
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        let flat: Vec<T> = rows.into_iter().flatten().collect();
        Self::new(Array2::from_shape_vec((h, w), flat).expect("rectangular rows"))
    }

    pub fn height(&self) -> usize {
        self.costs.nrows()
    }

    pub fn width(&self) -> usize {
        self.costs.ncols()
    }

    pub fn costs(&self) -> &Array2<T> {
        &self.costs
    }

    pub fn source(&self) -> (usize, usize) {
        (0, 0)
    }

    pub fn target(&self) -> (usize, usize) {
        (self.height() - 1, self.width() - 1)
    }

    /// The 8-neighborhood of a cell.
    pub fn neighbors(&self, (r, c): (usize, usize)) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (h, w) = (self.height() as isize, self.width() as isize);
        (-1isize..=1)
            .flat_map(|dr| (-1isize..=1).map(move |dc| (dr, dc)))
            .filter(|&d| d != (0, 0))
            .filter_map(move |(dr, dc)| {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                (nr >= 0 && nr < h && nc >= 0 && nc < w).then_some((nr as usize, nc as usize))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPath<T> {
    /// Cells from source to target.
    pub cells: Vec<(usize, usize)>,
    /// Sum of the costs of every cell on the path, endpoints included.
    pub cost: T,
}

impl<T: Scalar> ShortestPath<T> {
    pub fn mask(&self, height: usize, width: usize) -> Array2<T> {
        let mut mask = Array2::zeros((height, width));
        for &cell in &self.cells {
            mask[cell] = T::one();
        }
        mask
    }
}

struct Frontier<T> {
    dist: T,
    cell: usize,
}

impl<T: PartialOrd> PartialEq for Frontier<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: PartialOrd> Eq for Frontier<T> {}

impl<T: PartialOrd> PartialOrd for Frontier<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: PartialOrd> Ord for Frontier<T> {
    // Min-heap on distance, then on cell index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

/// Dijkstra over the 8-neighborhood. Among equally short routes into a cell
/// the predecessor with the smaller (row, column) wins.
pub fn shortest_path<T: Scalar>(grid: &GridCostMap<T>) -> ShortestPath<T> {
    let w = grid.width();
    let total = grid.height() * w;
    let flat = |(r, c): (usize, usize)| r * w + c;
    let cell = |i: usize| (i / w, i % w);

    let mut dist = vec![T::infinity(); total];
    let mut pred = vec![usize::MAX; total];
    let mut done = vec![false; total];
    let source = flat(grid.source());
    let target = flat(grid.target());
    dist[source] = grid.costs[grid.source()];
    let mut heap = BinaryHeap::new();
    heap.push(Frontier { dist: dist[source], cell: source });

    while let Some(Frontier { dist: d, cell: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if u == target {
            break;
        }
        for v in grid.neighbors(cell(u)) {
            let vi = flat(v);
            if done[vi] {
                continue;
            }
            let candidate = d + grid.costs[v];
            if candidate < dist[vi] {
                dist[vi] = candidate;
                pred[vi] = u;
                heap.push(Frontier { dist: candidate, cell: vi });
            } else if candidate == dist[vi] && u < pred[vi] {
                pred[vi] = u;
            }
        }
    }

    let mut cells = vec![cell(target)];
    let mut at = target;
    while at != source {
        at = pred[at];
        cells.push(cell(at));
    }
    cells.reverse();
    ShortestPath { cells, cost: dist[target] }
}

/// Binary `height x width` mask of the shortest path.
pub fn shortest_path_mask<T: Scalar>(grid: &GridCostMap<T>) -> Array2<T> {
    shortest_path(grid).mask(grid.height(), grid.width())
}

/// The named black boxes exposed to the benchmark and the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `R^n -> {0,1}^{n x n}`, row-major permutation matrix.
    Argsort(usize),
    Ranking(usize),
    /// Costs of a `size x size` grid, row-major, to the path mask. Costs are
    /// floored at [`COST_FLOOR`] so perturbations never make them negative.
    ShortestPath(usize),
    /// Step in the first of `n` coordinates.
    Heaviside(usize),
    /// `floor(x / step) * step` on a scalar.
    Staircase(f64),
    /// Sum of the inputs.
    Linear(usize),
    /// `R^n -> R^n`.
    Identity(usize),
    Constant(usize, f64),
}

impl TestFunction {
    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Argsort(_) => "argsort",
            TestFunction::Ranking(_) => "rank",
            TestFunction::ShortestPath(_) => "shortest-path",
            TestFunction::Heaviside(_) => "heaviside",
            TestFunction::Staircase(_) => "staircase",
            TestFunction::Linear(_) => "linear",
            TestFunction::Identity(_) => "identity",
            TestFunction::Constant(..) => "constant",
        }
    }

    /// Builds a function from its name and size parameter (`n`, grid side, or
    /// input dimension). The staircase uses a unit step.
    pub fn from_name(name: &str, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::NoDimensions);
        }
        Ok(match name.trim().to_ascii_lowercase().as_str() {
            "argsort" | "sort" => TestFunction::Argsort(size),
            "rank" | "ranking" => TestFunction::Ranking(size),
            "shortest-path" | "shortest_path" | "path" => {
                if size < 2 {
                    return Err(Error::InvalidConfig("shortest-path grid side must be at least 2".into()));
                }
                TestFunction::ShortestPath(size)
            }
            "heaviside" => TestFunction::Heaviside(size),
            "staircase" => {
                if size != 1 {
                    return Err(Error::InvalidConfig("staircase takes a scalar input (n = 1)".into()));
                }
                TestFunction::Staircase(1.0)
            }
            "linear" => TestFunction::Linear(size),
            "identity" => TestFunction::Identity(size),
            "constant" => TestFunction::Constant(size, 1.0),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown function '{other}' (valid: argsort, rank, shortest-path, heaviside, staircase, linear, identity, constant)"
                )))
            }
        })
    }

    /// The size parameter passed to [`TestFunction::from_name`].
    pub fn size(&self) -> usize {
        match *self {
            TestFunction::Argsort(n)
            | TestFunction::Ranking(n)
            | TestFunction::ShortestPath(n)
            | TestFunction::Heaviside(n)
            | TestFunction::Linear(n)
            | TestFunction::Identity(n)
            | TestFunction::Constant(n, _) => n,
            TestFunction::Staircase(_) => 1,
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    /// Accepts `name` or `name:size`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((name, size)) => {
                let size = size
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad size in function '{s}'")))?;
                Self::from_name(name, size)
            }
            None => Self::from_name(s, 1),
        }
    }
}

impl<T: Scalar> BlackBox<T> for TestFunction {
    fn input_dim(&self) -> usize {
        match *self {
            TestFunction::ShortestPath(side) => side * side,
            other => other.size(),
        }
    }

    fn output_dim(&self) -> usize {
        match *self {
            TestFunction::Argsort(n) | TestFunction::Ranking(n) => n * n,
            TestFunction::ShortestPath(side) => side * side,
            TestFunction::Identity(n) => n,
            _ => 1,
        }
    }

    fn eval(&self, x: &[T], out: &mut [T]) {
        match *self {
            TestFunction::Argsort(_) => {
                out.fill(T::zero());
                let n = x.len();
                for (row, idx) in sort_order(x).into_iter().enumerate() {
                    out[row * n + idx] = T::one();
                }
            }
            TestFunction::Ranking(_) => {
                out.fill(T::zero());
                let n = x.len();
                for (row, idx) in sort_order(x).into_iter().enumerate() {
                    out[idx * n + row] = T::one();
                }
            }
            TestFunction::ShortestPath(side) => {
                let floor = T::lit(COST_FLOOR);
                let costs = Array2::from_shape_fn((side, side), |(r, c)| {
                    let v = x[r * side + c];
                    if v > floor {
                        v
                    } else {
                        floor
                    }
                });
                let grid = GridCostMap { costs };
                out.fill(T::zero());
                for (r, c) in shortest_path(&grid).cells {
                    out[r * side + c] = T::one();
                }
            }
            TestFunction::Heaviside(_) => out[0] = heaviside(x),
            TestFunction::Staircase(step) => out[0] = staircase(x[0], T::lit(step)),
            TestFunction::Linear(_) => out[0] = x.iter().copied().sum(),
            TestFunction::Identity(_) => out.copy_from_slice(x),
            TestFunction::Constant(_, c) => out[0] = T::lit(c),
        }
    }
}
