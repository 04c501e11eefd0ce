//! Nested sequences of time partitions of `[0, T]`.
//!
//! Grid membership is decided by exact floating-point equality. Dyadic grids
//! are built as `i * T / 2^n`, which keeps every level-n time bit-identical to
//! the corresponding level-(n+1) time, so nestedness is a structural fact and
//! never an epsilon comparison.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A finite prefix `π^0, …, π^L` of a partition sequence of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSequence {
    horizon: f64,
    levels: Vec<Vec<f64>>,
    dense: bool,
    nested: bool,
}

/// Structured-text descriptor of a partition sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PartitionSpec {
    Dyadic {
        #[serde(rename = "T")]
        horizon: f64,
        max_level: usize,
        #[serde(default)]
        extra_times: Vec<f64>,
    },
    Explicit {
        #[serde(rename = "T")]
        horizon: f64,
        levels: Vec<Vec<f64>>,
        #[serde(default)]
        dense: bool,
        #[serde(default)]
        extra_times: Vec<f64>,
    },
}

impl PartitionSpec {
    pub fn build(&self) -> Result<PartitionSequence> {
        let (seq, extra) = match self {
            PartitionSpec::Dyadic {
                horizon,
                max_level,
                extra_times,
            } => (PartitionSequence::dyadic(*horizon, *max_level)?, extra_times),
            PartitionSpec::Explicit {
                horizon,
                levels,
                dense,
                extra_times,
            } => (
                PartitionSequence::explicit(*horizon, levels.clone(), *dense)?,
                extra_times,
            ),
        };
        if extra.is_empty() {
            Ok(seq)
        } else {
            seq.refine_with(extra)
        }
    }
}

fn validate_level(horizon: f64, level: &[f64], n: usize) -> Result<()> {
    if level.len() < 2 {
        return invalid(format!("level {n} needs at least the two endpoints"));
    }
    if level[0] != 0.0 || *level.last().unwrap() != horizon {
        return invalid(format!("level {n} must start at 0 and end at T={horizon}"));
    }
    if level.windows(2).any(|w| !(w[0] < w[1])) {
        return invalid(format!("level {n} is not strictly increasing"));
    }
    Ok(())
}

/// Every element of `coarse` appears in `fine` (both sorted).
fn is_subset(coarse: &[f64], fine: &[f64]) -> bool {
    let mut j = 0;
    for &t in coarse {
        while j < fine.len() && fine[j] < t {
            j += 1;
        }
        if j == fine.len() || fine[j] != t {
            return false;
        }
    }
    true
}

fn mesh_of(level: &[f64]) -> f64 {
    level.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

impl PartitionSequence {
    /// Dyadic levels `i * T / 2^n`, `n = 0..=max_level`.
    pub fn dyadic(horizon: f64, max_level: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return invalid(format!("horizon must be positive, got {horizon}"));
        }
        if max_level < 1 {
            return invalid("max_level must be at least 1");
        }
        if max_level > 30 {
            return invalid(format!("max_level {max_level} exceeds the supported 30"));
        }
        let levels = (0..=max_level)
            .map(|n| {
                let cells = 1u64 << n;
                let scale = cells as f64;
                (0..=cells)
                    .map(|i| {
                        if i == cells {
                            horizon
                        } else {
                            (i as f64) * horizon / scale
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            horizon,
            levels,
            dense: true,
            nested: true,
        })
    }

    /// Arbitrary levels. Nestedness is detected; density is declared and
    /// validated only as a monotone decrease of the mesh.
    pub fn explicit(horizon: f64, levels: Vec<Vec<f64>>, dense: bool) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return invalid(format!("horizon must be positive, got {horizon}"));
        }
        if levels.is_empty() {
            return invalid("at least one level is required");
        }
        for (n, level) in levels.iter().enumerate() {
            validate_level(horizon, level, n)?;
        }
        if dense {
            let meshes: Vec<f64> = levels.iter().map(|l| mesh_of(l)).collect();
            let monotone = meshes.windows(2).all(|w| w[1] <= w[0]);
            if !monotone || (levels.len() > 1 && !(meshes[meshes.len() - 1] < meshes[0])) {
                return invalid("declared dense but mesh is not decreasing");
            }
        }
        let nested = levels.windows(2).all(|w| is_subset(&w[0], &w[1]));
        Ok(Self {
            horizon,
            levels,
            dense,
            nested,
        })
    }

    /// Adds `extra_times` to every level (typically the jump times of a path).
    pub fn refine_with(&self, extra_times: &[f64]) -> Result<Self> {
        for &t in extra_times {
            if !(0.0..=self.horizon).contains(&t) {
                return invalid(format!("extra time {t} outside [0, {}]", self.horizon));
            }
        }
        if extra_times.is_empty() {
            return Ok(self.clone());
        }
        let mut extra = extra_times.to_vec();
        extra.sort_by(f64::total_cmp);
        extra.dedup();
        let levels = self
            .levels
            .iter()
            .map(|level| {
                let mut merged = Vec::with_capacity(level.len() + extra.len());
                let (mut i, mut j) = (0, 0);
                while i < level.len() || j < extra.len() {
                    let next = match (level.get(i), extra.get(j)) {
                        (Some(&a), Some(&b)) if a < b => {
                            i += 1;
                            a
                        }
                        (Some(&a), Some(&b)) if b < a => {
                            j += 1;
                            b
                        }
                        (Some(&a), Some(_)) => {
                            i += 1;
                            j += 1;
                            a
                        }
                        (Some(&a), None) => {
                            i += 1;
                            a
                        }
                        (None, Some(&b)) => {
                            j += 1;
                            b
                        }
                        (None, None) => unreachable!(),
                    };
                    merged.push(next);
                }
                merged
            })
            .collect();
        Ok(Self {
            horizon: self.horizon,
            levels,
            dense: self.dense,
            nested: self.nested,
        })
    }

    /// Keeps levels `0..=max_level`.
    pub fn truncate(&self, max_level: usize) -> Result<Self> {
        if max_level >= self.levels.len() {
            return Err(Error::OutOfRange(format!(
                "level {max_level} beyond top level {}",
                self.top_level()
            )));
        }
        Ok(Self {
            horizon: self.horizon,
            levels: self.levels[..=max_level].to_vec(),
            dense: self.dense,
            nested: self.nested,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_dense(&self) -> bool {
        self.dense
    }

    pub fn is_nested(&self) -> bool {
        self.nested
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn level(&self, n: usize) -> Result<&[f64]> {
        self.levels
            .get(n)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::OutOfRange(format!("no level {n}")))
    }

    pub fn finest(&self) -> &[f64] {
        self.levels.last().unwrap()
    }

    /// `|π^n| = max_i (t^n_i - t^n_{i-1})`.
    pub fn mesh(&self, n: usize) -> Result<f64> {
        Ok(mesh_of(self.level(n)?))
    }

    /// `k(t, n) = max{i : t^n_i < t}`, so that `t^n_k < t <= t^n_{k+1}`.
    pub fn last_index_before(&self, n: usize, t: f64) -> Result<usize> {
        let level = self.level(n)?;
        if !(t > 0.0 && t <= self.horizon) {
            return Err(Error::OutOfRange(format!(
                "t = {t} outside (0, {}]",
                self.horizon
            )));
        }
        Ok(level.partition_point(|&s| s < t) - 1)
    }

    /// Times from `times` that are missing from level `n`.
    pub fn uncovered(&self, n: usize, times: &[f64]) -> Result<Vec<f64>> {
        let level = self.level(n)?;
        Ok(times
            .iter()
            .copied()
            .filter(|t| level.binary_search_by(|s| s.total_cmp(t)).is_err())
            .collect())
    }

    /// Positions of level-`n` times inside a finer sorted `grid`.
    pub fn indices_in(&self, n: usize, grid: &[f64]) -> Result<Vec<usize>> {
        self.level(n)?
            .iter()
            .map(|t| {
                grid.binary_search_by(|s| s.total_cmp(t)).map_err(|_| {
                    Error::Precondition(format!("partition time {t} (level {n}) not on the path grid"))
                })
            })
            .collect()
    }

    pub fn to_spec(&self) -> PartitionSpec {
        PartitionSpec::Explicit {
            horizon: self.horizon,
            levels: self.levels.clone(),
            dense: self.dense,
            extra_times: Vec::new(),
        }
    }
}
