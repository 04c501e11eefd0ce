//! Quadratic variation along a partition sequence.
//!
//! Every level uses the truncated sums
//! `A^n(t) = Σ_i (x(t^n_{i+1} ∧ t) - x(t^n_i ∧ t))²`, defined for all `t`.

use rand_core::Rng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::convergence::{cauchy_gap, ConvergenceConfig};
use crate::error::{invalid, Error, Result};
use crate::partitions::PartitionSequence;
use crate::paths::SampledPath;

/// Scalar projection `w · x` of a path.
pub(crate) struct Projection<'a> {
    path: &'a SampledPath,
    weights: Vec<f64>,
}

impl<'a> Projection<'a> {
    pub(crate) fn coordinate(path: &'a SampledPath, c: usize) -> Self {
        let mut weights = vec![0.0; path.dim()];
        weights[c] = 1.0;
        Self { path, weights }
    }

    fn pair(path: &'a SampledPath, i: usize, j: usize) -> Self {
        let mut weights = vec![0.0; path.dim()];
        weights[i] += 1.0;
        weights[j] += 1.0;
        Self { path, weights }
    }

    fn dot(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(c, w)| w * f(c))
            .sum()
    }

    pub(crate) fn at(&self, t: f64) -> f64 {
        let j = self.path.floor_index(t);
        self.dot(|c| self.path.value(j, c))
    }

    pub(crate) fn at_index(&self, j: usize) -> f64 {
        self.dot(|c| self.path.value(j, c))
    }

    pub(crate) fn left_at(&self, t: f64) -> f64 {
        self.dot(|c| self.path.eval_left(t, c))
    }
}

/// `A^n` for one level: prefix sums of squared increments.
pub(crate) struct LevelCurve {
    times: Vec<f64>,
    values: Vec<f64>,
    prefix: Vec<f64>,
}

impl LevelCurve {
    pub(crate) fn new(x: &Projection<'_>, level: &[f64]) -> Self {
        let values: Vec<f64> = level.iter().map(|&t| x.at(t)).collect();
        let mut prefix = Vec::with_capacity(values.len());
        prefix.push(0.0);
        for w in values.windows(2) {
            let d = w[1] - w[0];
            prefix.push(prefix.last().unwrap() + d * d);
        }
        Self {
            times: level.to_vec(),
            values,
            prefix,
        }
    }

    fn floor(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    /// `A^n(t)` given `x(t)`.
    pub(crate) fn eval(&self, t: f64, x_t: f64) -> f64 {
        let k = self.floor(t);
        let d = x_t - self.values[k];
        self.prefix[k] + d * d
    }
}

/// Level-6 dyadic times of `[0, T]` together with the jump times, sorted.
pub fn default_probe_times(horizon: f64, jump_times: &[f64]) -> Vec<f64> {
    let mut probes: Vec<f64> = (0..=64).map(|i| i as f64 * horizon / 64.0).collect();
    probes.extend_from_slice(jump_times);
    probes.sort_by(f64::total_cmp);
    probes.dedup();
    probes
}

/// Quadratic variation of a path along a partition sequence.
///
/// Matrix-valued entries are stored row-major `d x d`; for scalar paths every
/// entry is a one-element vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QVReport {
    pub dim: usize,
    pub levels: Vec<usize>,
    pub probe_times: Vec<f64>,
    /// `per_level[k][p]`: `A^{levels[k]}` at `probe_times[p]`.
    pub per_level: Vec<Vec<Vec<f64>>>,
    /// Sampling grid of the path.
    pub times: Vec<f64>,
    /// Top-level `A` on `times`.
    pub limit: Vec<Vec<f64>>,
    pub continuous_part: Vec<Vec<f64>>,
    pub jump_part: Vec<Vec<f64>>,
    pub gaps: Vec<f64>,
    pub convergence_metric: f64,
    pub converged: bool,
    /// Partition levels were augmented with the jump times.
    pub refined: bool,
    /// Largest decrease of a diagonal entry, or Cauchy–Schwarz excess of an
    /// off-diagonal entry, across consecutive grid increments of `limit`.
    pub monotonicity_violation: f64,
}

impl QVReport {
    /// Entry `(i, j)` of the top-level estimate at every grid time.
    pub fn limit_entry(&self, i: usize, j: usize) -> Vec<f64> {
        self.limit.iter().map(|m| m[i * self.dim + j]).collect()
    }

    pub fn continuous_entry(&self, i: usize, j: usize) -> Vec<f64> {
        self.continuous_part.iter().map(|m| m[i * self.dim + j]).collect()
    }

    /// Top-level estimate at grid time `t` (floor).
    pub fn limit_at(&self, t: f64) -> &[f64] {
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        &self.limit[k]
    }

    pub fn final_value(&self) -> &[f64] {
        self.limit.last().unwrap()
    }
}

/// Options shared by [`qv_along`] and [`qv_matrix`].
#[derive(Debug, Clone, Default)]
pub struct QvOptions {
    pub probe_times: Option<Vec<f64>>,
    pub convergence: ConvergenceConfig,
    /// Reject uncovered jump times instead of refining the levels.
    pub strict_jumps: bool,
}

fn prepare(path: &SampledPath, seq: &PartitionSequence, opts: &QvOptions) -> Result<(PartitionSequence, bool)> {
    if seq.num_levels() < 2 {
        return invalid("quadratic variation needs at least two partition levels");
    }
    if (seq.horizon() - path.horizon()).abs() > 0.0 {
        return invalid(format!(
            "partition horizon {} differs from path horizon {}",
            seq.horizon(),
            path.horizon()
        ));
    }
    match path.check_jumps_covered(seq) {
        Ok(()) => Ok((seq.clone(), false)),
        Err(e) if opts.strict_jumps => Err(e),
        Err(_) => Ok((seq.refine_with(&path.jump_times())?, true)),
    }
}

/// One scalar projection: per-level values at probes and the top curve on the grid.
struct ScalarQv {
    per_level: Vec<Vec<f64>>,
    limit: Vec<f64>,
}

fn scalar_qv(x: &Projection<'_>, path: &SampledPath, seq: &PartitionSequence, probes: &[f64]) -> ScalarQv {
    let curves: Vec<LevelCurve> = seq.levels().iter().map(|l| LevelCurve::new(x, l)).collect();
    let per_level = curves
        .iter()
        .map(|c| probes.iter().map(|&t| c.eval(t, x.at(t))).collect())
        .collect();
    let top = curves.last().unwrap();
    let limit = path
        .grid()
        .iter()
        .enumerate()
        .map(|(j, &t)| top.eval(t, x.at_index(j)))
        .collect();
    ScalarQv { per_level, limit }
}

fn assemble(
    path: &SampledPath,
    seq: PartitionSequence,
    refined: bool,
    probes: Vec<f64>,
    parts: Vec<Vec<ScalarQv>>,
    cfg: &ConvergenceConfig,
) -> QVReport {
    // parts[i][j] is the projection e_i + e_j (i <= j) or e_i (i == j)
    let d = path.dim();
    let n_levels = seq.num_levels();
    let entry = |i: usize, j: usize, f: &dyn Fn(&ScalarQv) -> f64| -> f64 {
        if i == j {
            f(&parts[i][i])
        } else {
            let (a, b) = (i.min(j), i.max(j));
            0.5 * (f(&parts[a][b]) - f(&parts[a][a]) - f(&parts[b][b]))
        }
    };
    let matrix = |f: &dyn Fn(&ScalarQv) -> f64| -> Vec<f64> {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let v = entry(i, j, f);
                m[i * d + j] = v;
                m[j * d + i] = v;
            }
        }
        m
    };
    let per_level: Vec<Vec<Vec<f64>>> = (0..n_levels)
        .map(|k| (0..probes.len()).map(|p| matrix(&|s| s.per_level[k][p])).collect())
        .collect();
    let grid = path.grid().to_vec();
    let limit: Vec<Vec<f64>> = (0..grid.len()).map(|g| matrix(&|s| s.limit[g])).collect();

    let mut jump_part = Vec::with_capacity(grid.len());
    let mut acc = vec![0.0; d * d];
    let mut next = 0;
    for j in 0..grid.len() {
        while next < path.jumps().len() && path.jumps()[next].index == j {
            let size = &path.jumps()[next].size;
            for a in 0..d {
                for b in 0..d {
                    acc[a * d + b] += size[a] * size[b];
                }
            }
            next += 1;
        }
        jump_part.push(acc.clone());
    }
    let continuous_part = limit
        .iter()
        .zip(&jump_part)
        .map(|(l, jp)| l.iter().zip(jp).map(|(a, b)| a - b).collect())
        .collect();

    let rows: Vec<Vec<f64>> = per_level.iter().map(|lvl| lvl.concat()).collect();
    let summary = cauchy_gap(&rows, cfg);
    let monotonicity_violation = monotonicity_violation(&limit, d);
    QVReport {
        dim: d,
        levels: (0..n_levels).collect(),
        probe_times: probes,
        per_level,
        times: grid,
        limit,
        continuous_part,
        jump_part,
        gaps: summary.gaps,
        convergence_metric: summary.metric,
        converged: summary.converged,
        refined,
        monotonicity_violation,
    }
}

fn monotonicity_violation(limit: &[Vec<f64>], d: usize) -> f64 {
    let mut worst = 0.0_f64;
    for w in limit.windows(2) {
        let inc: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
        for i in 0..d {
            worst = worst.max(-inc[i * d + i]);
            for j in i + 1..d {
                let bound = (inc[i * d + i].max(0.0) * inc[j * d + j].max(0.0)).sqrt();
                worst = worst.max(inc[i * d + j].abs() - bound);
            }
        }
    }
    worst
}

fn probes_for(path: &SampledPath, opts: &QvOptions) -> Result<Vec<f64>> {
    let probes = match &opts.probe_times {
        Some(p) => {
            let mut p = p.clone();
            p.sort_by(f64::total_cmp);
            p.dedup();
            p
        }
        None => default_probe_times(path.horizon(), &path.jump_times()),
    };
    if let Some(&t) = probes.iter().find(|&&t| !(0.0..=path.horizon()).contains(&t)) {
        return Err(Error::OutOfRange(format!("probe time {t} outside [0, T]")));
    }
    if probes.is_empty() {
        return invalid("no probe times");
    }
    Ok(probes)
}

/// `[x]` of a scalar path along `seq`, with the continuous/jump decomposition.
pub fn qv_along(path: &SampledPath, seq: &PartitionSequence, opts: &QvOptions) -> Result<QVReport> {
    if path.dim() != 1 {
        return invalid(format!("qv_along takes a scalar path, got dimension {}; use qv_matrix", path.dim()));
    }
    let (seq, refined) = prepare(path, seq, opts)?;
    let probes = probes_for(path, opts)?;
    let part = scalar_qv(&Projection::coordinate(path, 0), path, &seq, &probes);
    Ok(assemble(path, seq, refined, probes, vec![vec![part]], &opts.convergence))
}

/// `[x]` of a `d`-dimensional path, off-diagonals by polarization.
pub fn qv_matrix(path: &SampledPath, seq: &PartitionSequence, opts: &QvOptions) -> Result<QVReport> {
    let d = path.dim();
    if d < 2 {
        return invalid("qv_matrix needs a path of dimension at least 2");
    }
    let (seq, refined) = prepare(path, seq, opts)?;
    let probes = probes_for(path, opts)?;
    let parts: Vec<Vec<ScalarQv>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let x = if j < i {
                        // unused lower triangle
                        return ScalarQv { per_level: Vec::new(), limit: Vec::new() };
                    } else if i == j {
                        Projection::coordinate(path, i)
                    } else {
                        Projection::pair(path, i, j)
                    };
                    scalar_qv(&x, path, &seq, &probes)
                })
                .collect()
        })
        .collect();
    Ok(assemble(path, seq, refined, probes, parts, &opts.convergence))
}

/// `[x]` for any dimension: [`qv_along`] for scalar paths, [`qv_matrix`] otherwise.
pub fn quadratic_variation(path: &SampledPath, seq: &PartitionSequence, opts: &QvOptions) -> Result<QVReport> {
    if path.dim() == 1 {
        qv_along(path, seq, opts)
    } else {
        qv_matrix(path, seq, opts)
    }
}

/// Atoms `(t^n_i, (x(t^n_{i+1}) - x(t^n_i))²)` of the discrete measure `ξ_n`.
pub fn follmer_weights(path: &SampledPath, level: &[f64], c: usize) -> Vec<(f64, f64)> {
    let x = Projection::coordinate(path, c);
    level
        .windows(2)
        .map(|w| {
            let d = x.at(w[1]) - x.at(w[0]);
            (w[0], d * d)
        })
        .collect()
}

/// `s_p(f; κ) = Σ |f(t_i) - f(t_{i-1})|^p` for the partition `κ`.
pub fn p_sum(path: &SampledPath, kappa: &[f64], p: f64) -> Result<f64> {
    if path.dim() != 1 {
        return invalid("p-variation is defined for scalar paths");
    }
    Ok(p_sum_values(&kappa.iter().map(|&t| path.eval(t, 0)).collect::<Vec<_>>(), p))
}

fn p_sum_values(values: &[f64], p: f64) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs().powf(p)).sum()
}

/// Largest grid for [`PVariationMode::ExactDp`].
pub const EXACT_DP_MAX_POINTS: usize = (1 << 12) + 1;

#[derive(Debug, Clone, Copy)]
pub enum PVariationMode<'a> {
    /// Sup over all subsets of the sampling grid.
    ExactDp,
    /// Max over levels of `s_p(f; π^n)`, a lower bound.
    AlongLevels(&'a PartitionSequence),
}

/// `v_p(f)` of a scalar sampled path.
pub fn p_variation(path: &SampledPath, p: f64, mode: PVariationMode<'_>) -> Result<f64> {
    if !(p >= 1.0) {
        return invalid(format!("p-variation needs p >= 1, got {p}"));
    }
    if path.dim() != 1 {
        return invalid("p-variation is defined for scalar paths");
    }
    match mode {
        PVariationMode::ExactDp => {
            if path.len() > EXACT_DP_MAX_POINTS {
                return invalid(format!(
                    "exact p-variation is limited to {EXACT_DP_MAX_POINTS} grid points, got {}",
                    path.len()
                ));
            }
            let values: Vec<f64> = (0..path.len()).map(|j| path.value(j, 0)).collect();
            Ok(p_variation_dp(&values, p))
        }
        PVariationMode::AlongLevels(seq) => seq
            .levels()
            .iter()
            .map(|l| p_sum(path, l, p))
            .try_fold(0.0_f64, |m, v| Ok(m.max(v?))),
    }
}

/// `max` over subsequences `0 = i_0 < ... < i_k = n-1` of `Σ |x_{i_{l+1}} - x_{i_l}|^p`.
pub fn p_variation_dp(values: &[f64], p: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut best = vec![f64::NEG_INFINITY; n];
    best[0] = 0.0;
    for j in 1..n {
        let mut b = f64::NEG_INFINITY;
        for i in 0..j {
            b = b.max(best[i] + (values[j] - values[i]).abs().powf(p));
        }
        best[j] = b;
    }
    best[n - 1]
}

/// Result of [`variation_index_estimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationIndexEstimate {
    /// Smallest grid `p` whose level-wise `s_p` stopped growing, if any.
    pub estimate: Option<f64>,
    /// `(p, growth)` with growth the mean `log2` increase of `s_p` per level
    /// over the last levels.
    pub growth: Vec<(f64, f64)>,
    /// Finite resolution: the estimate only reflects the levels available.
    pub finite_resolution_estimate: bool,
}

/// Growth rate (log2 per level) below which `s_p` is read as bounded.
pub const DIVERGENCE_THRESHOLD: f64 = 0.1;

/// Estimate of the variation index from the growth of `s_p(f; π^n)` in `n`.
pub fn variation_index_estimate(
    path: &SampledPath,
    seq: &PartitionSequence,
    p_grid: &[f64],
) -> Result<VariationIndexEstimate> {
    if p_grid.is_empty() {
        return invalid("empty p grid");
    }
    if p_grid.windows(2).any(|w| w[1] <= w[0]) || p_grid[0] < 1.0 {
        return invalid("p grid must be increasing with p >= 1");
    }
    if seq.num_levels() < 2 {
        return invalid("variation index estimate needs at least two levels");
    }
    let window = (seq.num_levels() - 1).min(4);
    let top = seq.top_level();
    let mut growth = Vec::with_capacity(p_grid.len());
    let mut estimate = None;
    for &p in p_grid {
        let hi = p_sum(path, seq.level(top)?, p)?;
        let lo = p_sum(path, seq.level(top - window)?, p)?;
        let g = if hi == 0.0 && lo == 0.0 {
            0.0
        } else if lo == 0.0 {
            f64::INFINITY
        } else {
            (hi / lo).log2() / window as f64
        };
        if estimate.is_none() && g <= DIVERGENCE_THRESHOLD {
            estimate = Some(p);
        }
        growth.push((p, g));
    }
    Ok(VariationIndexEstimate {
        estimate,
        growth,
        finite_resolution_estimate: true,
    })
}

/// `s_2(f; λ_n ⋒ [s, t])` with `λ_n ⋒ [s, t] = (λ_n ∩ [s, t]) ∪ {s, t}`.
pub fn interval_qv(path: &SampledPath, level: &[f64], s: f64, t: f64, c: usize) -> f64 {
    let x = Projection::coordinate(path, c);
    interval_sum(&x, level, s, t, x.at(t))
}

fn interval_sum(x: &Projection<'_>, level: &[f64], s: f64, t: f64, x_t: f64) -> f64 {
    let lo = level.partition_point(|&u| u <= s);
    let hi = level.partition_point(|&u| u < t).max(lo);
    let mut prev = x.at(s);
    let mut acc = 0.0;
    for &u in &level[lo..hi] {
        let v = x.at(u);
        acc += (v - prev) * (v - prev);
        prev = v;
    }
    acc + (x_t - prev) * (x_t - prev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalQv {
    pub start: f64,
    pub end: f64,
    pub per_level: Vec<f64>,
    pub estimate: f64,
    pub gap: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpCheck {
    pub time: f64,
    /// `(Δ⁻x)²`.
    pub expected: f64,
    /// Top-level `H(τ) - H(τ-)`.
    pub left_jump: f64,
    /// Top-level `H(τ+) - H(τ)`, expected zero for càdlàg paths.
    pub right_jump: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditivityCheck {
    pub start: f64,
    pub middle: f64,
    pub end: f64,
    /// `|H(a, c) - H(a, b) - H(b, c)|` at the top level.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NorvaisaReport {
    pub intervals: Vec<IntervalQv>,
    pub jumps: Vec<JumpCheck>,
    pub additivity: Vec<AdditivityCheck>,
}

/// Interval form of quadratic variation on each `[s, t]`, with the jump
/// conditions at the path's jumps and additivity across adjacent intervals.
pub fn norvaisa_qv_check(
    path: &SampledPath,
    seq: &PartitionSequence,
    intervals: &[(f64, f64)],
    cfg: &ConvergenceConfig,
) -> Result<NorvaisaReport> {
    if !seq.is_nested() {
        return invalid("the interval form requires a nested partition sequence");
    }
    if path.dim() != 1 {
        return invalid("the interval form is computed for scalar paths");
    }
    if seq.num_levels() < 2 {
        return invalid("needs at least two partition levels");
    }
    let horizon = path.horizon();
    let x = Projection::coordinate(path, 0);
    let mut out = Vec::with_capacity(intervals.len());
    for &(s, t) in intervals {
        if !(0.0 <= s && s <= t && t <= horizon) {
            return Err(Error::OutOfRange(format!("interval [{s}, {t}] not inside [0, {horizon}]")));
        }
        let per_level: Vec<f64> = seq
            .levels()
            .iter()
            .map(|l| interval_sum(&x, l, s, t, x.at(t)))
            .collect();
        let rows: Vec<Vec<f64>> = per_level.iter().map(|&v| vec![v]).collect();
        let summary = cauchy_gap(&rows, cfg);
        out.push(IntervalQv {
            start: s,
            end: t,
            estimate: *per_level.last().unwrap(),
            per_level,
            gap: summary.metric,
            converged: summary.converged,
        });
    }

    let finest = seq.finest();
    let jumps = path
        .jumps()
        .iter()
        .map(|jump| {
            let tau = jump.time;
            let h_at = interval_sum(&x, finest, 0.0, tau, x.at(tau));
            let h_before = interval_sum(&x, finest, 0.0, tau, x.left_at(tau));
            let next = finest.partition_point(|&u| u <= tau);
            let right_jump = match finest.get(next) {
                Some(&u) => {
                    let h_after = interval_sum(&x, finest, 0.0, u, x.left_at(u));
                    let cell = x.left_at(u) - x.at(tau);
                    h_after - h_at - cell * cell
                }
                None => 0.0,
            };
            let size = jump.size[0];
            let left_jump = h_at - h_before;
            JumpCheck {
                time: tau,
                expected: size * size,
                left_jump,
                right_jump,
                error: (left_jump - size * size).abs().max(right_jump.abs()),
            }
        })
        .collect();

    let mut additivity = Vec::new();
    for a in &out {
        for b in &out {
            if a.end == b.start && a.start < a.end && b.start < b.end {
                let whole = interval_sum(&x, finest, a.start, b.end, x.at(b.end));
                additivity.push(AdditivityCheck {
                    start: a.start,
                    middle: a.end,
                    end: b.end,
                    error: (whole - a.estimate - b.estimate).abs(),
                });
            }
        }
    }
    Ok(NorvaisaReport {
        intervals: out,
        jumps,
        additivity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VovkOptions {
    pub convergence: ConvergenceConfig,
    pub random_times: usize,
    pub seed: u64,
    /// Times added to the random ones for the boundary-term identity.
    pub extra_times: Vec<f64>,
}

impl Default for VovkOptions {
    fn default() -> Self {
        Self {
            convergence: ConvergenceConfig::default(),
            random_times: 32,
            seed: 0,
            extra_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VovkReport {
    /// `sup_t |A^n(t) - A^top(t)|` over the sampling grid, per level `n`.
    pub sup_gaps: Vec<f64>,
    pub uniform: bool,
    pub nested: bool,
    /// Times at which the boundary-term identity was evaluated.
    pub identity_times: Vec<f64>,
    /// Max over levels and times of the identity residual.
    pub identity_residual: f64,
}

/// Uniform-in-time convergence of `A^n` and the identity
/// `A^n(t) - Σ_{t_i <= t} (x(t_{i+1}) - x(t_i))² =
///  (x(t) - x(t_k))² - (x(t_{k+1}) - x(t_k))²`, `k = max{i <= m-1 : t_i <= t}`.
pub fn vovk_uniform_check(path: &SampledPath, seq: &PartitionSequence, opts: &VovkOptions) -> Result<VovkReport> {
    if seq.num_levels() < 2 {
        return invalid("needs at least two partition levels");
    }
    let horizon = path.horizon();
    let mut rng = Pcg32::new(opts.seed, 0x0a02_bdbf_7bb3_c0a7);
    let mut times: Vec<f64> = (0..opts.random_times)
        .map(|_| horizon * (rng.next_u32() as f64 / 4294967296.0))
        .collect();
    times.extend(opts.extra_times.iter().copied().filter(|t| (0.0..=horizon).contains(t)));

    let mut sup_gaps = vec![0.0_f64; seq.num_levels()];
    let mut residual = 0.0_f64;
    for c in 0..path.dim() {
        let x = Projection::coordinate(path, c);
        let curves: Vec<LevelCurve> = seq.levels().iter().map(|l| LevelCurve::new(&x, l)).collect();
        let top = curves.last().unwrap();
        for (j, &t) in path.grid().iter().enumerate() {
            let xt = x.at_index(j);
            let a_top = top.eval(t, xt);
            for (n, curve) in curves.iter().enumerate() {
                sup_gaps[n] = sup_gaps[n].max((curve.eval(t, xt) - a_top).abs());
            }
        }
        for (curve, level) in curves.iter().zip(seq.levels()) {
            let m = level.len() - 1;
            let vals: Vec<f64> = level.iter().map(|&u| x.at(u)).collect();
            for &t in &times {
                let xt = x.at(t);
                let untruncated: f64 = (0..m)
                    .filter(|&i| level[i] <= t)
                    .map(|i| (vals[i + 1] - vals[i]).powi(2))
                    .sum();
                let k = (0..m).filter(|&i| level[i] <= t).max().unwrap_or(0);
                let rhs = (xt - vals[k]).powi(2) - (vals[k + 1] - vals[k]).powi(2);
                residual = residual.max((curve.eval(t, xt) - untruncated - rhs).abs());
            }
        }
    }
    sup_gaps.pop();
    let rows: Vec<Vec<f64>> = sup_gaps.iter().map(|&g| vec![g]).chain([vec![0.0]]).collect();
    let summary = cauchy_gap(&rows, &opts.convergence);
    let tail = &sup_gaps[sup_gaps.len().saturating_sub(opts.convergence.monotone_window)..];
    let uniform = summary.metric < opts.convergence.tol.max(0.0) * 1.0_f64.max(scale(path))
        && tail.windows(2).all(|w| w[1] <= w[0]);
    Ok(VovkReport {
        sup_gaps,
        uniform,
        nested: seq.is_nested(),
        identity_times: times,
        identity_residual: residual,
    })
}

fn scale(path: &SampledPath) -> f64 {
    path.scale() * path.scale()
}

/// Long-format CSV `level,probe_time,entry columns`.
pub fn qv_csv(report: &QVReport) -> String {
    let d = report.dim;
    let mut out = String::from("level,probe_time");
    if d == 1 {
        out.push_str(",A");
    } else {
        for i in 0..d {
            for j in 0..d {
                out.push_str(&format!(",A_{}_{}", i + 1, j + 1));
            }
        }
    }
    out.push('\n');
    for (k, level) in report.levels.iter().enumerate() {
        for (p, t) in report.probe_times.iter().enumerate() {
            out.push_str(&format!("{level},{t}"));
            for v in &report.per_level[k][p] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{generate, GeneratorSpec};

    fn walk(seed: u64, level: usize) -> (SampledPath, PartitionSequence) {
        let seq = PartitionSequence::dyadic(1.0, level).unwrap();
        let p = generate(&GeneratorSpec::ScaledRandomWalk { sigma: 1.0, x0: 0.0 }, seed, &seq).unwrap();
        (p, seq)
    }

    #[test]
    fn linear_path_has_vanishing_qv() {
        let seq = PartitionSequence::dyadic(1.0, 12).unwrap();
        let p = SampledPath::from_fn(&seq, |t| vec![t]).unwrap();
        let r = qv_along(&p, &seq, &QvOptions::default()).unwrap();
        assert!(r.final_value()[0] <= 2f64.powi(-12) * (1.0 + 1e-12));
        assert!(r.converged);
        assert!(r.monotonicity_violation <= 0.0);
    }

    #[test]
    fn indicator_jump_decomposition() {
        let seq = PartitionSequence::dyadic(1.0, 8).unwrap();
        let p = SampledPath::from_fn(&seq, |_| vec![0.0]).unwrap().with_jump(0.5, &[1.0]).unwrap();
        let r = qv_along(&p, &seq, &QvOptions::default()).unwrap();
        assert_eq!(r.final_value()[0], 1.0);
        assert_eq!(r.jump_part.last().unwrap()[0], 1.0);
        assert_eq!(r.continuous_part.last().unwrap()[0], 0.0);
        assert!(r.refined);
    }

    #[test]
    fn walk_top_level_is_exact() {
        let (p, seq) = walk(7, 14);
        let r = qv_along(&p, &seq, &QvOptions::default()).unwrap();
        let top = r.final_value()[0];
        assert!((top - 1.0).abs() < 1e-12, "{top}");
        let last = r.probe_times.len() - 1;
        assert!((r.per_level[8][last][0] - 1.0).abs() < 0.15);
    }

    #[test]
    fn single_level_is_rejected() {
        let seq = PartitionSequence::explicit(1.0, vec![vec![0.0, 0.5, 1.0]], true).unwrap();
        let p = SampledPath::from_fn(&seq, |t| vec![t]).unwrap();
        assert!(matches!(qv_along(&p, &seq, &QvOptions::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn polarization_of_duplicated_and_negated_coordinates() {
        let (p, seq) = walk(3, 8);
        let dup = p.map(|x| vec![x[0], x[0]]);
        let neg = p.map(|x| vec![x[0], -x[0]]);
        let q = qv_along(&p, &seq, &QvOptions::default()).unwrap();
        let rd = qv_matrix(&dup, &seq, &QvOptions::default()).unwrap();
        let rn = qv_matrix(&neg, &seq, &QvOptions::default()).unwrap();
        let qv = q.final_value()[0];
        for v in rd.final_value() {
            assert!((v - qv).abs() < 1e-12);
        }
        assert!((rn.final_value()[1] + qv).abs() < 1e-12);
        assert_eq!(rn.final_value()[1], rn.final_value()[2]);
        assert!(qv_matrix(&p, &seq, &QvOptions::default()).is_err());
    }

    #[test]
    fn p_variation_basics() {
        let seq = PartitionSequence::dyadic(2.0, 6).unwrap();
        let mono = SampledPath::from_fn(&seq, |t| vec![t * t]).unwrap();
        let v = p_variation(&mono, 1.0, PVariationMode::ExactDp).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        let two = SampledPath::scalar(vec![0.0, 2.0], vec![0.0, 3.0]).unwrap();
        assert_eq!(p_variation(&two, 2.5, PVariationMode::ExactDp).unwrap(), 3f64.powf(2.5));
        assert!(p_variation(&two, 0.5, PVariationMode::ExactDp).is_err());
    }

    #[test]
    fn variation_index_examples() {
        let grid = [1.0, 1.5, 2.0, 2.5, 3.0];
        let seq = PartitionSequence::dyadic(1.0, 12).unwrap();
        let smooth = SampledPath::from_fn(&seq, |t| vec![(3.0 * t).sin()]).unwrap();
        assert_eq!(variation_index_estimate(&smooth, &seq, &grid).unwrap().estimate, Some(1.0));
        let (w, seq) = walk(11, 12);
        assert_eq!(variation_index_estimate(&w, &seq, &grid).unwrap().estimate, Some(2.0));
        let step = SampledPath::from_fn(&seq, |_| vec![0.0]).unwrap().with_jump(0.25, &[2.0]).unwrap();
        assert_eq!(variation_index_estimate(&step, &seq, &grid).unwrap().estimate, Some(1.0));
        assert!(variation_index_estimate(&step, &seq, &[]).is_err());
    }

    #[test]
    fn norvaisa_matches_definition_and_jumps() {
        let (p, seq) = walk(5, 10);
        let p = p.with_jump(0.375, &[0.5]).unwrap();
        let r = norvaisa_qv_check(&p, &seq, &[(0.0, 1.0), (0.0, 0.375), (0.375, 1.0), (0.5, 0.5)], &Default::default())
            .unwrap();
        let q = qv_along(&p, &seq, &QvOptions::default()).unwrap();
        assert!((r.intervals[0].estimate - q.final_value()[0]).abs() < 1e-12);
        assert_eq!(r.intervals[3].estimate, 0.0);
        assert!(r.additivity.iter().all(|a| a.error < 1e-12));
        assert_eq!(r.jumps.len(), 1);

        let step = SampledPath::from_fn(&seq, |_| vec![1.0]).unwrap().with_jump(0.5, &[-2.0]).unwrap();
        let r = norvaisa_qv_check(&step, &seq, &[(0.0, 1.0)], &Default::default()).unwrap();
        assert_eq!(r.jumps[0].left_jump, 4.0);
        assert_eq!(r.jumps[0].error, 0.0);
        let flat = SampledPath::from_fn(&seq, |_| vec![0.0]).unwrap();
        let explicit = PartitionSequence::explicit(1.0, vec![vec![0.0, 1.0], vec![0.0, 0.75, 1.0], vec![0.0, 0.5, 1.0]], false);
        let explicit = explicit.unwrap();
        assert!(!explicit.is_nested());
        assert!(norvaisa_qv_check(&flat, &explicit, &[(0.0, 1.0)], &Default::default()).is_err());
    }

    #[test]
    fn vovk_identity_and_uniformity() {
        let seq = PartitionSequence::dyadic(1.0, 12).unwrap();
        let smooth = SampledPath::from_fn(&seq, |t| vec![t * t]).unwrap();
        let r = vovk_uniform_check(&smooth, &seq, &VovkOptions::default()).unwrap();
        assert!(r.uniform);
        assert!(r.identity_residual < 1e-14);
        let constant = SampledPath::from_fn(&seq, |_| vec![2.0]).unwrap();
        let r = vovk_uniform_check(&constant, &seq, &VovkOptions::default()).unwrap();
        assert!(r.sup_gaps.iter().all(|&g| g == 0.0));
        let jump = constant.with_jump(0.25, &[1.0]).unwrap();
        let opts = VovkOptions {
            random_times: 0,
            extra_times: seq.finest().to_vec(),
            ..VovkOptions::default()
        };
        let r = vovk_uniform_check(&jump, &seq, &opts).unwrap();
        assert_eq!(r.identity_residual, 0.0);
    }

    #[test]
    fn csv_layout() {
        let (p, seq) = walk(1, 4);
        let opts = QvOptions {
            probe_times: Some(vec![0.0, 1.0]),
            ..QvOptions::default()
        };
        let csv = qv_csv(&qv_along(&p, &seq, &opts).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "level,probe_time,A");
        assert_eq!(lines.len(), 1 + 5 * 2);
        assert_eq!(lines[10], "4,1,1");
    }
}
