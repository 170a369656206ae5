//! Dense rectangular linear assignment.
//!
//! Small problems are enumerated exactly; larger ones use the O(n^2 m)
//! shortest-augmenting-path Hungarian method. Among optimal matchings the
//! lexicographically smallest row-sorted pair sequence is returned, so results
//! do not depend on the solver path.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignmentError {
    #[error("cost matrix is empty ({rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("cost matrix has {got} values, expected {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, got: usize },
    #[error("non-finite cost at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

/// Row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    direction: Direction,
}

impl CostMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        direction: Direction,
    ) -> Result<Self, AssignmentError> {
        if values.len() != rows * cols {
            return Err(AssignmentError::ShapeMismatch {
                rows,
                cols,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AssignmentError::NonFinite {
                row: i / cols.max(1),
                col: i % cols.max(1),
            });
        }
        Ok(Self {
            rows,
            cols,
            values,
            direction,
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        direction: Direction,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, AssignmentError> {
        let values = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        Self::new(rows, cols, values, direction)
    }

    pub fn minimize(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        Self::from_rows(rows, Direction::Minimize)
    }

    pub fn maximize(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        Self::from_rows(rows, Direction::Maximize)
    }

    fn from_rows(rows: &[Vec<f64>], direction: Direction) -> Result<Self, AssignmentError> {
        let cols = rows.first().map_or(0, Vec::len);
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, values, direction)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// Injective set of `(row, col)` pairs, sorted by row.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
}

impl Matching {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    pub fn row_of(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == col).map(|p| p.0)
    }

    pub fn total(&self, costs: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| costs.get(r, c)).sum()
    }
}

/// Matchings with at most this many candidate assignments are enumerated.
const ENUMERATION_LIMIT: u64 = 5040;

/// Optimal assignment of `min(rows, cols)` pairs.
pub fn solve_lap(costs: &CostMatrix) -> Result<Matching, AssignmentError> {
    if costs.rows == 0 || costs.cols == 0 {
        return Err(AssignmentError::EmptyMatrix {
            rows: costs.rows,
            cols: costs.cols,
        });
    }
    let sign = match costs.direction {
        Direction::Minimize => 1.0,
        Direction::Maximize => -1.0,
    };
    let work = Dense {
        rows: costs.rows,
        cols: costs.cols,
        values: costs.values.iter().map(|v| sign * v).collect(),
    };
    let pairs = if injection_count(work.rows, work.cols) <= ENUMERATION_LIMIT {
        enumerate(&work)
    } else {
        lexicographic_optimum(&work)
    };
    Ok(Matching { pairs })
}

struct Dense {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Dense {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

fn injection_count(rows: usize, cols: usize) -> u64 {
    let (k, n) = (rows.min(cols) as u64, rows.max(cols) as u64);
    let mut count = 1u64;
    for i in 0..k {
        count = count.saturating_mul(n - i);
        if count > ENUMERATION_LIMIT {
            break;
        }
    }
    count
}

impl Dense {
    /// Slack for treating two totals as tied: rounding noise of a sum of
    /// `min(rows, cols)` entries at the matrix's magnitude.
    fn tolerance(&self) -> f64 {
        let max_abs = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        1e-12 * (1.0 + self.rows.min(self.cols) as f64 * max_abs)
    }
}

/// Depth-first enumeration in lexicographic order of the row-sorted pair sequence.
fn enumerate(m: &Dense) -> Vec<(usize, usize)> {
    struct Search<'a> {
        m: &'a Dense,
        target: usize,
        tol: f64,
        used: Vec<bool>,
        current: Vec<(usize, usize)>,
        best: Option<(f64, Vec<(usize, usize)>)>,
    }

    impl Search<'_> {
        fn visit(&mut self, row: usize, cost: f64) {
            let remaining_rows = self.m.rows - row;
            let needed = self.target - self.current.len();
            if needed == 0 {
                let better = match &self.best {
                    None => true,
                    Some((b, _)) => cost < *b - self.tol,
                };
                if better {
                    self.best = Some((cost, self.current.clone()));
                }
                return;
            }
            if remaining_rows < needed {
                return;
            }
            for c in 0..self.m.cols {
                if self.used[c] {
                    continue;
                }
                self.used[c] = true;
                self.current.push((row, c));
                self.visit(row + 1, cost + self.m.at(row, c));
                self.current.pop();
                self.used[c] = false;
            }
            if remaining_rows > needed {
                self.visit(row + 1, cost);
            }
        }
    }

    let mut search = Search {
        m,
        target: m.rows.min(m.cols),
        tol: m.tolerance(),
        used: vec![false; m.cols],
        current: Vec::with_capacity(m.rows.min(m.cols)),
        best: None,
    };
    search.visit(0, 0.0);
    search.best.map(|(_, p)| p).unwrap_or_default()
}

/// Optimal value of the assignment restricted to `rows` x `cols`.
fn restricted_optimum(m: &Dense, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let (assign, _) = if rows.len() <= cols.len() {
        hungarian(rows.len(), cols.len(), |i, j| m.at(rows[i], cols[j]))
    } else {
        hungarian(cols.len(), rows.len(), |i, j| m.at(rows[j], cols[i]))
    };
    if rows.len() <= cols.len() {
        assign
            .iter()
            .enumerate()
            .map(|(i, &j)| m.at(rows[i], cols[j]))
            .sum()
    } else {
        assign
            .iter()
            .enumerate()
            .map(|(i, &j)| m.at(rows[j], cols[i]))
            .sum()
    }
}

/// Fixes rows one at a time to the smallest column that keeps the total optimal.
fn lexicographic_optimum(m: &Dense) -> Vec<(usize, usize)> {
    let all_rows: Vec<usize> = (0..m.rows).collect();
    let all_cols: Vec<usize> = (0..m.cols).collect();
    let optimum = restricted_optimum(m, &all_rows, &all_cols);
    let tol = m.tolerance();

    let target = m.rows.min(m.cols);
    let mut free_cols = all_cols;
    let mut fixed_cost = 0.0;
    let mut pairs = Vec::new();
    for row in 0..m.rows {
        if free_cols.is_empty() {
            break;
        }
        let later_rows: Vec<usize> = (row + 1..m.rows).collect();
        // the rest must still be able to complete a full-size matching
        if later_rows.len().min(free_cols.len() - 1) != target - pairs.len() - 1 {
            continue;
        }
        let mut chosen = None;
        for (slot, &c) in free_cols.iter().enumerate() {
            let rest: Vec<usize> = free_cols
                .iter()
                .enumerate()
                .filter(|&(s, _)| s != slot)
                .map(|(_, &cc)| cc)
                .collect();
            let total = fixed_cost + m.at(row, c) + restricted_optimum(m, &later_rows, &rest);
            if total <= optimum + tol {
                chosen = Some(slot);
                break;
            }
        }
        if let Some(slot) = chosen {
            let c = free_cols.remove(slot);
            fixed_cost += m.at(row, c);
            pairs.push((row, c));
        }
    }
    pairs
}

/// Shortest augmenting path Hungarian method for `n <= m`; returns the column of each row.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, f64) {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for j in 1..=m {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
    (assign, total)
}
