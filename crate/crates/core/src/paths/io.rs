//! Path CSV format: header `t,x1,…,xd[,jump1,…,jumpd]`, one row per grid time.

use std::fmt::Write as _;
use std::io::Read;

use crate::error::{Error, Result};

use super::SampledPath;

/// Relative gap above which an increment is classified as a jump, as a
/// multiple of the path scale.
pub const DEFAULT_JUMP_GAP: f64 = 10.0 * f64::EPSILON;

/// How to recover jumps when the file has no jump columns.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum JumpDetection {
    /// Jump columns, when absent, default to zero.
    #[default]
    Off,
    /// Increments larger than `gap * scale` are recorded as jumps.
    RelativeGap(f64),
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Reads a path from CSV text.
pub fn read_csv(input: impl Read, detection: JumpDetection) -> Result<SampledPath> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .clone();
    if headers.get(0) != Some("t") {
        return Err(parse_err("first column must be `t`"));
    }
    let x_cols = headers.iter().filter(|h| h.starts_with('x')).count();
    let jump_cols = headers.iter().filter(|h| h.starts_with("jump")).count();
    if x_cols == 0 || (jump_cols != 0 && jump_cols != x_cols) || 1 + x_cols + jump_cols != headers.len() {
        return Err(parse_err(format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    for c in 0..x_cols {
        if headers.get(1 + c) != Some(format!("x{}", c + 1).as_str()) {
            return Err(parse_err(format!("column {} should be x{}", c + 1, c + 1)));
        }
    }
    let mut grid = Vec::new();
    let mut values = Vec::new();
    let mut jumps = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let nums: Vec<f64> = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| parse_err(format!("row {}: bad number `{s}`", row + 1))))
            .collect::<Result<_>>()?;
        if nums.len() != headers.len() {
            return Err(parse_err(format!("row {} has {} fields", row + 1, nums.len())));
        }
        grid.push(nums[0]);
        values.push(nums[1..=x_cols].to_vec());
        if jump_cols > 0 {
            let size = nums[1 + x_cols..].to_vec();
            if size.iter().any(|&s| s != 0.0) {
                jumps.push((nums[0], size));
            }
        }
    }
    if jump_cols == 0 {
        if let JumpDetection::RelativeGap(gap) = detection {
            let scale = values
                .iter()
                .flatten()
                .fold(1.0_f64, |m: f64, v: &f64| m.max(v.abs()));
            for j in 1..values.len() {
                let size: Vec<f64> = (0..x_cols).map(|c| values[j][c] - values[j - 1][c]).collect();
                if size.iter().any(|s| s.abs() > gap * scale) {
                    jumps.push((grid[j], size));
                }
            }
        }
    }
    SampledPath::new(grid, values, jumps)
}

/// Writes a path as CSV; floats use the shortest round-trip representation.
pub fn write_csv(path: &SampledPath) -> String {
    let d = path.dim();
    let with_jumps = !path.jumps().is_empty();
    let mut out = String::from("t");
    for c in 1..=d {
        write!(out, ",x{c}").unwrap();
    }
    if with_jumps {
        for c in 1..=d {
            write!(out, ",jump{c}").unwrap();
        }
    }
    out.push('\n');
    for (j, t) in path.grid().iter().enumerate() {
        write!(out, "{t}").unwrap();
        for c in 0..d {
            write!(out, ",{}", path.value(j, c)).unwrap();
        }
        if with_jumps {
            let jump = path.jump_at(j);
            for c in 0..d {
                write!(out, ",{}", jump.map(|s| s[c]).unwrap_or(0.0)).unwrap();
            }
        }
        out.push('\n');
    }
    out
}
