//! Deterministic test-path factory.
//!
//! Random kinds draw one bit per grid cell from PCG32 (`Lcg64Xsh32`: 64-bit
//! state, 2^63 selectable streams). The bit is the top bit of `next_u32`, so
//! the output depends only on the documented PCG32 sequence and is identical
//! across platforms.

use rand_core::Rng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::partitions::PartitionSequence;

use super::SampledPath;

/// Deterministic smooth functions of time for `smooth` paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "function", rename_all = "snake_case")]
pub enum SmoothFunction {
    /// `intercept + slope * t`
    Linear { slope: f64, intercept: f64 },
    /// `offset + coefficient * t^exponent`
    Power {
        coefficient: f64,
        exponent: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + amplitude * sin(frequency * t + phase)`
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `x0 * exp(rate * t)`
    Exponential { x0: f64, rate: f64 },
}

impl SmoothFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            SmoothFunction::Linear { slope, intercept } => intercept + slope * t,
            SmoothFunction::Power {
                coefficient,
                exponent,
                offset,
            } => offset + coefficient * t.powf(exponent),
            SmoothFunction::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => offset + amplitude * (frequency * t + phase).sin(),
            SmoothFunction::Exponential { x0, rate } => x0 * (rate * t).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    pub time: f64,
    pub size: Vec<f64>,
}

/// Path generator descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Smooth {
        #[serde(flatten)]
        function: SmoothFunction,
    },
    /// Increments `±σ √Δt` with equal probability.
    ScaledRandomWalk {
        sigma: f64,
        #[serde(default)]
        x0: f64,
    },
    /// Multiplicative steps `x ← x (1 ± σ √Δt)`.
    GeometricWalk { sigma: f64, x0: f64 },
    WithJumps {
        base: Box<GeneratorSpec>,
        jumps: Vec<JumpSpec>,
    },
    /// Coordinates generated independently, coordinate `c` on sub-stream `c`.
    Product { coordinates: Vec<GeneratorSpec> },
}

/// Generates a path on the finest grid of `seq`, stream 0.
pub fn generate(kind: &GeneratorSpec, seed: u64, seq: &PartitionSequence) -> Result<SampledPath> {
    generate_stream(kind, seed, 0, seq)
}

/// Generates the `stream`-th path of a batch. Distinct streams are independent.
pub fn generate_stream(
    kind: &GeneratorSpec,
    seed: u64,
    stream: u64,
    seq: &PartitionSequence,
) -> Result<SampledPath> {
    let grid = seq.finest().to_vec();
    let columns = columns(kind, seed, stream << 8, &grid)?;
    let values = (0..grid.len())
        .map(|j| columns.iter().map(|col| col[j]).collect())
        .collect();
    let mut path = SampledPath::new(grid, values, Vec::new())?;
    for (t, size) in jumps_of(kind, columns.len())? {
        path = path.with_jump(t, &size)?;
    }
    Ok(path)
}

fn columns(kind: &GeneratorSpec, seed: u64, stream: u64, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    match kind {
        GeneratorSpec::Smooth { function } => Ok(vec![grid.iter().map(|&t| function.eval(t)).collect()]),
        GeneratorSpec::ScaledRandomWalk { sigma, x0 } => {
            if !(*sigma > 0.0) {
                return invalid(format!("sigma must be positive, got {sigma}"));
            }
            let mut rng = Pcg32::new(seed, stream);
            let mut x = *x0;
            let mut col = Vec::with_capacity(grid.len());
            col.push(x);
            for w in grid.windows(2) {
                let step = sigma * (w[1] - w[0]).sqrt();
                x += if rng.next_u32() >> 31 == 1 { step } else { -step };
                col.push(x);
            }
            Ok(vec![col])
        }
        GeneratorSpec::GeometricWalk { sigma, x0 } => {
            if !(*sigma > 0.0) {
                return invalid(format!("sigma must be positive, got {sigma}"));
            }
            if !(*x0 > 0.0) {
                return invalid(format!("x0 must be positive for a geometric walk, got {x0}"));
            }
            let max_dt = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            if sigma * max_dt.sqrt() >= 1.0 {
                return invalid("sigma * sqrt(mesh) must be below 1 to keep the walk positive");
            }
            let mut rng = Pcg32::new(seed, stream);
            let mut x = *x0;
            let mut col = Vec::with_capacity(grid.len());
            col.push(x);
            for w in grid.windows(2) {
                let step = sigma * (w[1] - w[0]).sqrt();
                x *= if rng.next_u32() >> 31 == 1 { 1.0 + step } else { 1.0 - step };
                col.push(x);
            }
            Ok(vec![col])
        }
        GeneratorSpec::WithJumps { base, .. } => columns(base, seed, stream, grid),
        GeneratorSpec::Product { coordinates } => {
            if coordinates.is_empty() {
                return invalid("product generator needs at least one coordinate");
            }
            let mut out = Vec::new();
            for (c, spec) in coordinates.iter().enumerate() {
                if matches!(spec, GeneratorSpec::Product { .. }) {
                    return invalid("nested product generators are not supported");
                }
                out.extend(columns(spec, seed, stream + c as u64, grid)?);
            }
            Ok(out)
        }
    }
}

fn jumps_of(kind: &GeneratorSpec, dim: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    match kind {
        GeneratorSpec::WithJumps { base, jumps } => {
            let mut out = jumps_of(base, dim)?;
            for j in jumps {
                if j.size.len() != dim {
                    return invalid(format!(
                        "jump at {} has dimension {}, path has {dim}",
                        j.time,
                        j.size.len()
                    ));
                }
                out.push((j.time, j.size.clone()));
            }
            Ok(out)
        }
        GeneratorSpec::Product { coordinates } => {
            let mut out = Vec::new();
            for (c, spec) in coordinates.iter().enumerate() {
                for (t, size) in jumps_of(spec, 1)? {
                    let mut full = vec![0.0; dim];
                    full[c] = size[0];
                    out.push((t, full));
                }
            }
            Ok(out)
        }
        _ => Ok(Vec::new()),
    }
}
