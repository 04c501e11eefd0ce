//! Sampled càdlàg paths.
//!
//! A [`SampledPath`] stores values on the finest grid of a partition sequence
//! together with an explicit jump list. Between grid points the path takes the
//! value of the left grid point. At grid points without a recorded jump the
//! left limit equals the value; at jump times the left limit is
//! `x(t) - Δx(t)`.

mod generate;
mod io;
mod state;

pub use generate::{generate, generate_stream, GeneratorSpec, JumpSpec, SmoothFunction};
pub use io::{read_csv, write_csv, JumpDetection, DEFAULT_JUMP_GAP};
pub use state::{
    d_infinity, HorizontalExtension, PathState, Side, StoppedPath, VerticalPerturbation,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::partitions::PartitionSequence;

/// A jump `Δx(t) = x(t) - x(t-)` at grid index `index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub index: usize,
    pub time: f64,
    pub size: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPath {
    dim: usize,
    grid: Vec<f64>,
    /// Row-major `grid.len() x dim`.
    values: Vec<f64>,
    /// Sorted by index.
    jumps: Vec<Jump>,
}

impl SampledPath {
    /// Builds a path from per-time d-vectors and `(time, Δx)` jumps.
    ///
    /// Jump times must be grid times strictly after 0.
    pub fn new(grid: Vec<f64>, values: Vec<Vec<f64>>, jumps: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        if grid.len() < 2 {
            return invalid("a path needs at least two grid times");
        }
        if grid[0] != 0.0 || grid.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("grid must start at 0 and be strictly increasing");
        }
        if values.len() != grid.len() {
            return invalid(format!(
                "{} values for {} grid times",
                values.len(),
                grid.len()
            ));
        }
        let dim = values[0].len();
        if dim == 0 || values.iter().any(|v| v.len() != dim) {
            return invalid("all values must share a positive dimension");
        }
        let flat = values.into_iter().flatten().collect();
        let mut path = Self {
            dim,
            grid,
            values: flat,
            jumps: Vec::new(),
        };
        for (t, size) in jumps {
            path.add_jump_record(t, size)?;
        }
        Ok(path)
    }

    /// Scalar path from a value list.
    pub fn scalar(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, values.into_iter().map(|v| vec![v]).collect(), Vec::new())
    }

    /// Samples `f` on the finest grid of `seq`, no jumps.
    pub fn from_fn(seq: &PartitionSequence, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let grid = seq.finest().to_vec();
        let values = grid.iter().map(|&t| f(t)).collect();
        Self::new(grid, values, Vec::new())
    }

    fn add_jump_record(&mut self, t: f64, size: Vec<f64>) -> Result<()> {
        if size.len() != self.dim {
            return invalid("jump dimension differs from path dimension");
        }
        let index = self.index_of(t).ok_or_else(|| {
            Error::Precondition(format!(
                "jump time {t} is not a grid time; refine the partition with it first"
            ))
        })?;
        if index == 0 {
            return invalid("a jump at t = 0 is not defined");
        }
        if size.iter().all(|&s| s == 0.0) {
            return Ok(());
        }
        match self.jumps.binary_search_by_key(&index, |j| j.index) {
            Ok(pos) => {
                for (a, b) in self.jumps[pos].size.iter_mut().zip(&size) {
                    *a += b;
                }
            }
            Err(pos) => self.jumps.insert(pos, Jump { index, time: t, size }),
        }
        Ok(())
    }

    /// Adds a jump of size `size` at grid time `t`, shifting all later values.
    pub fn with_jump(mut self, t: f64, size: &[f64]) -> Result<Self> {
        let index = self.index_of(t).ok_or_else(|| {
            Error::Precondition(format!(
                "jump time {t} is not a grid time; refine the partition with it first"
            ))
        })?;
        for j in index..self.len() {
            for c in 0..self.dim {
                self.values[j * self.dim + c] += size[c];
            }
        }
        self.add_jump_record(t, size.to_vec())?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn jump_times(&self) -> Vec<f64> {
        self.jumps.iter().map(|j| j.time).collect()
    }

    #[inline]
    pub fn value(&self, j: usize, c: usize) -> f64 {
        self.values[j * self.dim + c]
    }

    pub fn value_vec(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn jump_at(&self, j: usize) -> Option<&[f64]> {
        self.jumps
            .binary_search_by_key(&j, |jump| jump.index)
            .ok()
            .map(|pos| self.jumps[pos].size.as_slice())
    }

    /// `x(t_j-)`.
    #[inline]
    pub fn left_limit(&self, j: usize, c: usize) -> f64 {
        match self.jump_at(j) {
            Some(size) => self.value(j, c) - size[c],
            None => self.value(j, c),
        }
    }

    /// Exact grid position of `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.grid.binary_search_by(|s| s.total_cmp(&t)).ok()
    }

    /// Index of the last grid time `<= u` (clamped to the grid).
    pub fn floor_index(&self, u: f64) -> usize {
        self.grid.partition_point(|&s| s <= u).saturating_sub(1)
    }

    /// Càdlàg evaluation `x(u)` at an arbitrary time.
    pub fn eval(&self, u: f64, c: usize) -> f64 {
        self.value(self.floor_index(u), c)
    }

    /// `x(u-)`: the stored left limit at grid times, else the càdlàg value.
    pub fn eval_left(&self, u: f64, c: usize) -> f64 {
        match self.index_of(u) {
            Some(j) => self.left_limit(j, c),
            None => self.eval(u, c),
        }
    }

    /// Scalar path of coordinate `c`.
    pub fn coordinate(&self, c: usize) -> Self {
        self.map(|x| vec![x[c]])
    }

    /// `y = f ∘ x`, with jumps `f(x(t)) - f(x(t-))`.
    pub fn map(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let values: Vec<Vec<f64>> = (0..self.len()).map(|j| f(self.value_vec(j))).collect();
        let dim = values[0].len();
        let jumps = self
            .jumps
            .iter()
            .map(|jump| {
                let left: Vec<f64> = (0..self.dim).map(|c| self.left_limit(jump.index, c)).collect();
                let after = &values[jump.index];
                let before = f(&left);
                (
                    jump.time,
                    (0..dim).map(|k| after[k] - before[k]).collect::<Vec<f64>>(),
                )
            })
            .collect();
        Self::new(self.grid.clone(), values, jumps).expect("mapped path keeps the grid")
    }

    /// Sampled path stopped at `t`.
    pub fn stop(&self, t: f64, side: Side) -> Result<StoppedPath<'_>> {
        StoppedPath::new(self, t, side)
    }

    /// Piecewise-constant approximation along level `n`:
    /// `x^n = Σ x(t^n_{i+1}-) 1_[t^n_i, t^n_{i+1}) + x(T) 1_{T}` realised on this grid.
    pub fn stepwise_approximation(&self, seq: &PartitionSequence, n: usize) -> Result<Self> {
        let idx = seq.indices_in(n, &self.grid)?;
        self.stepwise_on_indices(&idx)
    }

    /// Same as [`stepwise_approximation`](Self::stepwise_approximation) for level
    /// times given as grid indices.
    pub fn stepwise_on_indices(&self, idx: &[usize]) -> Result<Self> {
        for jump in &self.jumps {
            if idx.binary_search(&jump.index).is_err() {
                return Err(Error::Precondition(format!(
                    "jump at {} is not covered by the partition level",
                    jump.time
                )));
            }
        }
        let d = self.dim;
        let last = self.len() - 1;
        let mut values = vec![0.0; self.values.len()];
        for w in idx.windows(2) {
            let (a, b) = (w[0], w[1]);
            for j in a..b {
                for c in 0..d {
                    values[j * d + c] = self.left_limit(b, c);
                }
            }
        }
        for c in 0..d {
            values[last * d + c] = self.value(last, c);
        }
        let mut jumps = Vec::new();
        for &i in &idx[1..] {
            let size: Vec<f64> = (0..d)
                .map(|c| values[i * d + c] - values[(i - 1) * d + c])
                .collect();
            if size.iter().any(|&s| s != 0.0) {
                jumps.push(Jump {
                    index: i,
                    time: self.grid[i],
                    size,
                });
            }
        }
        Ok(Self {
            dim: d,
            grid: self.grid.clone(),
            values,
            jumps,
        })
    }

    /// Largest absolute coordinate value, at least 1.
    pub fn scale(&self) -> f64 {
        self.values.iter().fold(1.0_f64, |m, v| m.max(v.abs()))
    }

    /// Checks that every jump time lies on every level of `seq`.
    pub fn check_jumps_covered(&self, seq: &PartitionSequence) -> Result<()> {
        let times = self.jump_times();
        for n in 0..seq.num_levels() {
            let missing = seq.uncovered(n, &times)?;
            if !missing.is_empty() {
                return Err(Error::Precondition(format!(
                    "jump times {missing:?} missing from level {n}"
                )));
            }
        }
        Ok(())
    }
}
