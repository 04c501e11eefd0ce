//! Föllmer integrals as limits of Riemann sums along a partition sequence, the
//! pathwise Itô formulas checked by residual, and the Left Cauchy integral.

use serde::{Deserialize, Serialize};

use crate::convergence::{cauchy_gap, ConvergenceConfig};
use crate::error::{invalid, Error, Result};
use crate::functionals::{gradient, hessian, horizontal, trace_product, Cylinder, FdConfig, Functional};
use crate::partitions::PartitionSequence;
use crate::paths::{SampledPath, Side, StoppedPath, VerticalPerturbation};
use crate::quadvar::{default_probe_times, qv_along, quadratic_variation, QVReport, QvOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrandKind {
    FunctionalGradient,
    CylinderGradient,
    GenericLeftEvaluated,
}

/// Riemann sums `S^n` at probe times for every level, with the Cauchy-gap verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralReport {
    pub kind: IntegrandKind,
    pub levels: Vec<usize>,
    pub probe_times: Vec<f64>,
    /// `per_level[k][p]`: `S^{levels[k]}(probe_times[p])`.
    pub per_level: Vec<Vec<f64>>,
    pub limit_estimate: Vec<f64>,
    pub gaps: Vec<f64>,
    pub convergence_metric: f64,
    pub converged: bool,
}

impl IntegralReport {
    /// Top-level value at the last probe time.
    pub fn final_value(&self) -> f64 {
        *self.limit_estimate.last().unwrap()
    }

    /// Long-format CSV `level,probe_time,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,probe_time,value\n");
        for (k, level) in self.levels.iter().enumerate() {
            for (p, t) in self.probe_times.iter().enumerate() {
                out.push_str(&format!("{level},{t},{}\n", self.per_level[k][p]));
            }
        }
        out
    }
}

/// Integrand values at the points of one level together with the running sums.
///
/// `S(t) = cumulative[k] + integrand[k] · (x(t) - x(t_k))` for `t_k <= t < t_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSum {
    pub times: Vec<f64>,
    /// `integrand[i]` multiplies `x(t_{i+1}) - x(t_i)`; the entry at `T` is unused.
    pub integrand: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub cumulative: Vec<f64>,
}

impl LevelSum {
    fn new(path: &SampledPath, times: &[f64], integrand: Vec<Vec<f64>>) -> Self {
        let d = path.dim();
        let values: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| (0..d).map(|c| path.eval(t, c)).collect())
            .collect();
        let mut cumulative = Vec::with_capacity(times.len());
        cumulative.push(0.0);
        for i in 0..times.len() - 1 {
            let inc = dot_diff(&integrand[i], &values[i + 1], &values[i]);
            cumulative.push(cumulative[i] + inc);
        }
        Self {
            times: times.to_vec(),
            integrand,
            values,
            cumulative,
        }
    }

    /// Truncated sum `Σ_{t_i <= t} φ_i · (x(t_{i+1} ∧ t) - x(t_i ∧ t))`.
    pub fn at(&self, t: f64, x_t: &[f64]) -> f64 {
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        if k == self.times.len() - 1 {
            return self.cumulative[k];
        }
        self.cumulative[k] + dot_diff(&self.integrand[k], x_t, &self.values[k])
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }
}

fn dot_diff(phi: &[f64], a: &[f64], b: &[f64]) -> f64 {
    phi.iter().zip(a.iter().zip(b)).map(|(p, (x, y))| p * (x - y)).sum()
}

fn value_vec(path: &SampledPath, t: f64) -> Vec<f64> {
    (0..path.dim()).map(|c| path.eval(t, c)).collect()
}

/// `∇_ω F(t^n_i, x^{n, Δx(t^n_i)}_{t^n_i-})` at every point of level `n`.
pub fn functional_gradients(
    f: &dyn Functional,
    path: &SampledPath,
    seq: &PartitionSequence,
    n: usize,
    fd: &FdConfig,
) -> Result<Vec<Vec<f64>>> {
    let idx = seq.indices_in(n, path.grid())?;
    let stepwise = path.stepwise_on_indices(&idx)?;
    let d = path.dim();
    idx.iter()
        .map(|&j| {
            let stopped = StoppedPath::at_index(&stepwise, j, Side::Left);
            let shift = path.jump_at(j).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; d]);
            let state = VerticalPerturbation::new(&stopped, shift)?;
            gradient(f, &state, fd)
        })
        .collect()
}

/// Level-`n` sums of the functional Föllmer integral.
pub fn functional_level_sum(
    f: &dyn Functional,
    path: &SampledPath,
    seq: &PartitionSequence,
    n: usize,
    fd: &FdConfig,
) -> Result<LevelSum> {
    let grads = functional_gradients(f, path, seq, n, fd)?;
    Ok(LevelSum::new(path, seq.level(n)?, grads))
}

fn check_inputs(f_dim: usize, path: &SampledPath, seq: &PartitionSequence) -> Result<()> {
    if f_dim != path.dim() {
        return invalid(format!("functional dimension {f_dim} differs from path dimension {}", path.dim()));
    }
    if seq.horizon() != path.horizon() {
        return invalid("partition and path horizons differ");
    }
    if seq.num_levels() < 2 {
        return invalid("needs at least two partition levels");
    }
    Ok(())
}

fn probes_or_default(path: &SampledPath, probes: Option<&[f64]>) -> Result<Vec<f64>> {
    let probes = match probes {
        Some(p) => p.to_vec(),
        None => default_probe_times(path.horizon(), &path.jump_times()),
    };
    if let Some(t) = probes.iter().find(|&&t| !(0.0..=path.horizon()).contains(&t)) {
        return Err(Error::OutOfRange(format!("probe time {t} outside [0, T]")));
    }
    Ok(probes)
}

fn report(
    kind: IntegrandKind,
    path: &SampledPath,
    sums: Vec<LevelSum>,
    probes: Vec<f64>,
    cfg: &ConvergenceConfig,
) -> IntegralReport {
    let x_at: Vec<Vec<f64>> = probes.iter().map(|&t| value_vec(path, t)).collect();
    let per_level: Vec<Vec<f64>> = sums
        .iter()
        .map(|s| probes.iter().zip(&x_at).map(|(&t, x)| s.at(t, x)).collect())
        .collect();
    let summary = cauchy_gap(&per_level, cfg);
    IntegralReport {
        kind,
        levels: (0..sums.len()).collect(),
        limit_estimate: per_level.last().unwrap().clone(),
        probe_times: probes,
        per_level,
        gaps: summary.gaps,
        convergence_metric: summary.metric,
        converged: summary.converged,
    }
}

/// Sequence with every jump time of `path` on every level.
pub fn covering_sequence(path: &SampledPath, seq: &PartitionSequence) -> Result<PartitionSequence> {
    if path.check_jumps_covered(seq).is_ok() {
        Ok(seq.clone())
    } else {
        seq.refine_with(&path.jump_times())
    }
}

/// `∫ ∇_ω F(t, x_{t-}) · d^Π x` along every level of `seq`.
pub fn follmer_integral_functional(
    f: &dyn Functional,
    path: &SampledPath,
    seq: &PartitionSequence,
    probes: Option<&[f64]>,
    fd: &FdConfig,
    cfg: &ConvergenceConfig,
) -> Result<IntegralReport> {
    check_inputs(f.dim(), path, seq)?;
    path.check_jumps_covered(seq)?;
    let probes = probes_or_default(path, probes)?;
    let sums = (0..seq.num_levels())
        .map(|n| functional_level_sum(f, path, seq, n, fd))
        .collect::<Result<Vec<_>>>()?;
    Ok(report(IntegrandKind::FunctionalGradient, path, sums, probes, cfg))
}

/// Level-`n` sums `Σ f'(x(t_i)) · (x(t_{i+1}) - x(t_i))`.
pub fn cylinder_level_sum(
    f_prime: &dyn Fn(&[f64]) -> Vec<f64>,
    path: &SampledPath,
    level: &[f64],
) -> LevelSum {
    let integrand = level.iter().map(|&t| f_prime(&value_vec(path, t))).collect();
    LevelSum::new(path, level, integrand)
}

/// `∫ f'(x(s-)) dx(s)` along every level of `seq`.
pub fn follmer_integral_cylinder(
    f_prime: &dyn Fn(&[f64]) -> Vec<f64>,
    path: &SampledPath,
    seq: &PartitionSequence,
    probes: Option<&[f64]>,
    cfg: &ConvergenceConfig,
) -> Result<IntegralReport> {
    check_inputs(path.dim(), path, seq)?;
    let probes = probes_or_default(path, probes)?;
    let sums = seq
        .levels()
        .iter()
        .map(|l| cylinder_level_sum(f_prime, path, l))
        .collect();
    Ok(report(IntegrandKind::CylinderGradient, path, sums, probes, cfg))
}

/// Generic left-evaluated sums `Σ φ(t_i, x(t_i)) · (x(t_{i+1}) - x(t_i))`.
pub fn left_riemann_integral(
    phi: &dyn Fn(f64, &[f64]) -> Vec<f64>,
    path: &SampledPath,
    seq: &PartitionSequence,
    probes: Option<&[f64]>,
    cfg: &ConvergenceConfig,
) -> Result<IntegralReport> {
    check_inputs(path.dim(), path, seq)?;
    let probes = probes_or_default(path, probes)?;
    let sums = seq
        .levels()
        .iter()
        .map(|l| {
            let integrand = l.iter().map(|&t| phi(t, &value_vec(path, t))).collect();
            LevelSum::new(path, l, integrand)
        })
        .collect();
    Ok(report(IntegrandKind::GenericLeftEvaluated, path, sums, probes, cfg))
}

/// Terms of a change-of-variable formula evaluated on one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoReport {
    /// `F(T, x_T) - F(0, x_0)`.
    pub lhs: f64,
    pub integral: f64,
    pub time_integral: f64,
    pub second_order: f64,
    pub jump_sum: f64,
    pub residual: f64,
    pub integral_converged: bool,
    pub integral_metric: f64,
    pub qv_converged: bool,
    pub qv_metric: f64,
    /// Set when a limit entering the formula is not declared converged.
    pub caveat: Option<String>,
}

fn caveat(integral: bool, qv: bool) -> Option<String> {
    match (integral, qv) {
        (true, true) => None,
        (false, true) => Some("Föllmer sums not converged".into()),
        (true, false) => Some("quadratic variation not converged".into()),
        (false, false) => Some("Föllmer sums and quadratic variation not converged".into()),
    }
}

/// Increments of `[x]^c` between consecutive sampling times, row-major `d x d`.
fn continuous_increments(qv: &QVReport) -> Vec<Vec<f64>> {
    qv.continuous_part
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
        .collect()
}

fn qv_for(path: &SampledPath, seq: &PartitionSequence, cfg: &ConvergenceConfig) -> Result<QVReport> {
    let opts = QvOptions {
        probe_times: None,
        convergence: *cfg,
        strict_jumps: true,
    };
    quadratic_variation(path, seq, &opts)
}

/// Residual of the functional change of variable formula on `[0, T]`.
///
/// The time integral and the second-order term are left-point sums on the
/// sampling grid of `path`; the second-order term integrates against the
/// increments of the computed `[x]^c`.
pub fn ito_residual_functional(
    f: &dyn Functional,
    path: &SampledPath,
    seq: &PartitionSequence,
    fd: &FdConfig,
    cfg: &ConvergenceConfig,
) -> Result<ItoReport> {
    check_inputs(f.dim(), path, seq)?;
    let seq = covering_sequence(path, seq)?;
    let d = path.dim();
    let horizon = path.horizon();
    let integral = follmer_integral_functional(f, path, &seq, Some(&[horizon]), fd, cfg)?;
    let qv = qv_for(path, &seq, cfg)?;
    let dqc = continuous_increments(&qv);
    let grid = path.grid();

    let mut time_integral = 0.0;
    let mut second_order = 0.0;
    for j in 0..grid.len() - 1 {
        let state = StoppedPath::at_index(path, j, Side::Left);
        time_integral += horizontal(f, &state, fd)? * (grid[j + 1] - grid[j]);
        if dqc[j].iter().any(|&v| v != 0.0) {
            second_order += 0.5 * trace_product(&hessian(f, &state, fd)?, &dqc[j], d);
        }
    }

    let mut jump_sum = 0.0;
    for jump in path.jumps() {
        let right = StoppedPath::at_index(path, jump.index, Side::Right);
        let left = StoppedPath::at_index(path, jump.index, Side::Left);
        let g = gradient(f, &left, fd)?;
        jump_sum += f.eval(&right) - f.eval(&left) - g.iter().zip(&jump.size).map(|(a, b)| a * b).sum::<f64>();
    }

    let end = StoppedPath::at_index(path, grid.len() - 1, Side::Right);
    let start = StoppedPath::at_index(path, 0, Side::Right);
    let lhs = f.eval(&end) - f.eval(&start);
    let rhs = integral.final_value() + time_integral + second_order + jump_sum;
    Ok(ItoReport {
        lhs,
        integral: integral.final_value(),
        time_integral,
        second_order,
        jump_sum,
        residual: (lhs - rhs).abs(),
        integral_converged: integral.converged,
        integral_metric: integral.convergence_metric,
        qv_converged: qv.converged,
        qv_metric: qv.convergence_metric,
        caveat: caveat(integral.converged, qv.converged),
    })
}

/// A `C²` function `f: R^d -> R` with its derivatives.
pub trait C2Map: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Row-major `d x d`.
    fn hessian(&self, x: &[f64]) -> Vec<f64>;
}

impl C2Map for Cylinder {
    fn dim(&self) -> usize {
        Functional::dim(self)
    }

    fn value(&self, x: &[f64]) -> f64 {
        Cylinder::value(self, x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        Cylinder::gradient(self, x)
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        Cylinder::hessian(self, x)
    }
}

/// [`C2Map`] from closures.
pub struct FnMap<F, G, H> {
    pub dim: usize,
    pub f: F,
    pub grad: G,
    pub hess: H,
}

impl<F, G, H> C2Map for FnMap<F, G, H>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
    H: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        (self.hess)(x)
    }
}

/// Residual of the pathwise Itô formula for `f(x(t))` on `[0, T]`.
pub fn ito_residual_cylinder(
    f: &dyn C2Map,
    path: &SampledPath,
    seq: &PartitionSequence,
    cfg: &ConvergenceConfig,
) -> Result<ItoReport> {
    check_inputs(f.dim(), path, seq)?;
    let seq = covering_sequence(path, seq)?;
    let d = path.dim();
    let horizon = path.horizon();
    let integral = follmer_integral_cylinder(&|x| f.gradient(x), path, &seq, Some(&[horizon]), cfg)?;
    let qv = qv_for(path, &seq, cfg)?;
    let dqc = continuous_increments(&qv);

    let mut second_order = 0.0;
    for (j, inc) in dqc.iter().enumerate() {
        if inc.iter().any(|&v| v != 0.0) {
            second_order += 0.5 * trace_product(&f.hessian(path.value_vec(j)), inc, d);
        }
    }
    let mut jump_sum = 0.0;
    for jump in path.jumps() {
        let after = path.value_vec(jump.index);
        let before: Vec<f64> = (0..d).map(|c| path.left_limit(jump.index, c)).collect();
        let g = f.gradient(&before);
        jump_sum += f.value(after) - f.value(&before) - g.iter().zip(&jump.size).map(|(a, b)| a * b).sum::<f64>();
    }
    let lhs = f.value(path.value_vec(path.len() - 1)) - f.value(path.value_vec(0));
    let rhs = integral.final_value() + second_order + jump_sum;
    Ok(ItoReport {
        lhs,
        integral: integral.final_value(),
        time_integral: 0.0,
        second_order,
        jump_sum,
        residual: (lhs - rhs).abs(),
        integral_converged: integral.converged,
        integral_metric: integral.convergence_metric,
        qv_converged: qv.converged,
        qv_metric: qv.convergence_metric,
        caveat: caveat(integral.converged, qv.converged),
    })
}

/// `S_LC(φ, g; λ_n ⋒ [u, v]) = Σ φ(g(t_i)) (g(t_{i+1}) - g(t_i))`.
pub fn left_cauchy_sum(phi: &dyn Fn(f64) -> f64, g: &SampledPath, level: &[f64], u: f64, v: f64) -> f64 {
    let lo = level.partition_point(|&s| s <= u);
    let hi = level.partition_point(|&s| s < v).max(lo);
    let mut prev = g.eval(u, 0);
    let mut acc = 0.0;
    for &s in level[lo..hi].iter().chain(std::iter::once(&v)) {
        let next = g.eval(s, 0);
        acc += phi(prev) * (next - prev);
        prev = next;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalIntegral {
    pub start: f64,
    pub end: f64,
    pub per_level: Vec<f64>,
    pub estimate: f64,
    pub gap: f64,
    pub converged: bool,
}

/// `(LC) ∫_u^v φ∘g d_λ g` on each interval, along every level.
pub fn left_cauchy_integral(
    phi: &dyn Fn(f64) -> f64,
    g: &SampledPath,
    seq: &PartitionSequence,
    intervals: &[(f64, f64)],
    cfg: &ConvergenceConfig,
) -> Result<Vec<IntervalIntegral>> {
    if !seq.is_nested() {
        return invalid("the Left Cauchy integral requires a nested partition sequence");
    }
    if g.dim() != 1 {
        return invalid("the Left Cauchy integral is computed for scalar paths");
    }
    check_inputs(1, g, seq)?;
    intervals
        .iter()
        .map(|&(u, v)| {
            if !(0.0 <= u && u <= v && v <= g.horizon()) {
                return Err(Error::OutOfRange(format!("interval [{u}, {v}] not inside [0, T]")));
            }
            let per_level: Vec<f64> = seq.levels().iter().map(|l| left_cauchy_sum(phi, g, l, u, v)).collect();
            let rows: Vec<Vec<f64>> = per_level.iter().map(|&x| vec![x]).collect();
            let summary = cauchy_gap(&rows, cfg);
            Ok(IntervalIntegral {
                start: u,
                end: v,
                estimate: *per_level.last().unwrap(),
                per_level,
                gap: summary.metric,
                converged: summary.converged,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRuleReport {
    pub lhs: f64,
    pub integral: f64,
    pub second_order: f64,
    pub left_jumps: f64,
    pub right_jumps: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Residual of the Left Cauchy chain rule for `Φ` with `Φ' = φ` on `[u, v]`.
///
/// Left jumps are summed over `(u, v]`; right jumps vanish for càdlàg paths.
pub fn chain_rule_lc_residual(
    big_phi: &dyn Fn(f64) -> f64,
    phi: &dyn Fn(f64) -> f64,
    phi_prime: &dyn Fn(f64) -> f64,
    g: &SampledPath,
    seq: &PartitionSequence,
    interval: (f64, f64),
    cfg: &ConvergenceConfig,
) -> Result<ChainRuleReport> {
    let (u, v) = interval;
    let seq = covering_sequence(g, seq)?;
    let lc = left_cauchy_integral(phi, g, &seq, &[interval], cfg)?.remove(0);
    let qv = qv_along(
        g,
        &seq,
        &QvOptions {
            strict_jumps: true,
            convergence: *cfg,
            ..QvOptions::default()
        },
    )?;
    let grid = g.grid();
    let mut second_order = 0.0;
    for j in 0..grid.len() - 1 {
        if grid[j] >= u && grid[j + 1] <= v {
            let inc = qv.continuous_part[j + 1][0] - qv.continuous_part[j][0];
            second_order += 0.5 * phi_prime(g.value(j, 0)) * inc;
        }
    }
    let left_jumps: f64 = g
        .jumps()
        .iter()
        .filter(|j| j.time > u && j.time <= v)
        .map(|j| {
            let after = g.value(j.index, 0);
            let before = g.left_limit(j.index, 0);
            big_phi(after) - big_phi(before) - phi(before) * j.size[0]
        })
        .sum();
    let lhs = big_phi(g.eval(v, 0)) - big_phi(g.eval(u, 0));
    let rhs = lc.estimate + second_order + left_jumps;
    Ok(ChainRuleReport {
        lhs,
        integral: lc.estimate,
        second_order,
        left_jumps,
        right_jumps: 0.0,
        residual: (lhs - rhs).abs(),
        converged: lc.converged && qv.converged,
    })
}
