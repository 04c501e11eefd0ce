//! Self-financing strategies along a partition sequence: simple strategies,
//! their limits built from vertical derivatives, delta hedging with the
//! explicit hedging error, and the plausibility diagnostics.

use serde::{Deserialize, Serialize};

use crate::convergence::{cauchy_gap, ConvergenceConfig};
use crate::error::{invalid, Error, Result};
use crate::functionals::{fpde_residual, hessian, trace_product, DensitySpec, FdConfig, Functional};
use crate::integration::{covering_sequence, functional_gradients};
use crate::partitions::PartitionSequence;
use crate::paths::{SampledPath, Side, StoppedPath};
use crate::quadvar::{quadratic_variation, LevelCurve, Projection, QvOptions};

type HoldingsFn<'a> = dyn Fn(usize, &StoppedPath<'_>) -> Vec<f64> + 'a;
type CapitalFn<'a> = dyn Fn(&[f64]) -> f64 + 'a;

/// A simple strategy `φ = Σ λ_i 1_(t_i, t_{i+1}]` trading at the points of one level.
///
/// `λ_i` receives the path stopped at `t_i`, so it cannot read later values.
pub struct SimpleStrategy<'a> {
    times: Vec<f64>,
    holdings: Box<HoldingsFn<'a>>,
    initial_capital: Box<CapitalFn<'a>>,
}

impl<'a> SimpleStrategy<'a> {
    /// Trading at the points of level `n` of `seq`.
    pub fn new(
        seq: &PartitionSequence,
        n: usize,
        holdings: impl Fn(usize, &StoppedPath<'_>) -> Vec<f64> + 'a,
        initial_capital: impl Fn(&[f64]) -> f64 + 'a,
    ) -> Result<Self> {
        Self::with_times(seq.level(n)?.to_vec(), holdings, initial_capital)
    }

    pub fn with_times(
        times: Vec<f64>,
        holdings: impl Fn(usize, &StoppedPath<'_>) -> Vec<f64> + 'a,
        initial_capital: impl Fn(&[f64]) -> f64 + 'a,
    ) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("trading times must start at 0 and increase");
        }
        Ok(Self {
            times,
            holdings: Box::new(holdings),
            initial_capital: Box::new(initial_capital),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Realizes `λ_i` and `V_0` on a path.
    pub fn positions(&self, path: &SampledPath) -> Result<Positions> {
        if *self.times.last().unwrap() != path.horizon() {
            return invalid("trading times must end at the path horizon");
        }
        let m = self.times.len() - 1;
        let mut holdings = Vec::with_capacity(m);
        for (i, &t) in self.times[..m].iter().enumerate() {
            let stopped = path.stop(t, Side::Right)?;
            let lambda = (self.holdings)(i, &stopped);
            if lambda.len() != path.dim() {
                return invalid(format!("holding {i} has dimension {}, path has {}", lambda.len(), path.dim()));
            }
            holdings.push(lambda);
        }
        let v0 = (self.initial_capital)(path.value_vec(0));
        Positions::new(path, self.times.clone(), holdings, v0)
    }
}

/// Holdings `λ_i` of a simple strategy realized on one path, with running gain
/// and bond holdings at the trading times.
#[derive(Debug, Clone, PartialEq)]
pub struct Positions {
    times: Vec<f64>,
    holdings: Vec<Vec<f64>>,
    initial_capital: f64,
    prices: Vec<Vec<f64>>,
    cumulative: Vec<f64>,
    bond: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot_diff(a: &[f64], x: &[f64], y: &[f64]) -> f64 {
    a.iter().zip(x.iter().zip(y)).map(|(p, (u, v))| p * (u - v)).sum()
}

impl Positions {
    /// `holdings[i]` is `λ_i`, held on `(times[i], times[i+1]]`.
    pub fn new(path: &SampledPath, times: Vec<f64>, holdings: Vec<Vec<f64>>, initial_capital: f64) -> Result<Self> {
        if holdings.len() + 1 != times.len() {
            return invalid("need one holding per trading interval");
        }
        let d = path.dim();
        let prices: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| (0..d).map(|c| path.eval(t, c)).collect())
            .collect();
        let m = holdings.len();
        let mut cumulative = Vec::with_capacity(m + 1);
        cumulative.push(0.0);
        for i in 0..m {
            cumulative.push(cumulative[i] + dot_diff(&holdings[i], &prices[i + 1], &prices[i]));
        }
        // bond[i]: ψ on (t_i, t_{i+1}]
        let mut bond = Vec::with_capacity(m);
        bond.push(initial_capital - dot(&holdings[0], &prices[0]));
        for i in 1..m {
            let rebalance: Vec<f64> = holdings[i].iter().zip(&holdings[i - 1]).map(|(a, b)| a - b).collect();
            bond.push(bond[i - 1] - dot(&prices[i], &rebalance));
        }
        Ok(Self {
            times,
            holdings,
            initial_capital,
            prices,
            cumulative,
            bond,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn holdings(&self) -> &[Vec<f64>] {
        &self.holdings
    }

    pub fn initial_capital(&self) -> f64 {
        self.initial_capital
    }

    /// `k(t) = max{i : t_i < t}`, clamped to the last interval.
    fn interval(&self, t: f64) -> usize {
        self.times
            .partition_point(|&s| s < t)
            .saturating_sub(1)
            .min(self.holdings.len() - 1)
    }

    /// `G(t) = Σ_{i <= k} λ_{i-1}·(ω(t_i) - ω(t_{i-1})) + λ_k·(ω(t) - ω(t_k))` given `ω(t)`.
    pub fn gain_with(&self, t: f64, x_t: &[f64]) -> f64 {
        let k = self.interval(t);
        self.cumulative[k] + dot_diff(&self.holdings[k], x_t, &self.prices[k])
    }

    /// `φ(t)`, with `φ(0) = φ(0+) = λ_0`.
    pub fn stock(&self, t: f64) -> &[f64] {
        &self.holdings[self.interval(t)]
    }

    /// `ψ(t) = V_0 - φ(0+)·ω(0) - Σ_{i=1}^{k} ω(t_i)·(λ_i - λ_{i-1})`.
    pub fn bond(&self, t: f64) -> f64 {
        self.bond[self.interval(t)]
    }

    /// Ledger on the given times. Jump records use the path's explicit jumps.
    pub fn ledger(&self, path: &SampledPath, times: &[f64]) -> StrategyLedger {
        let d = path.dim();
        let prices: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| (0..d).map(|c| path.eval(t, c)).collect())
            .collect();
        let gain: Vec<f64> = times.iter().zip(&prices).map(|(&t, x)| self.gain_with(t, x)).collect();
        let phi: Vec<Vec<f64>> = times.iter().map(|&t| self.stock(t).to_vec()).collect();
        let psi: Vec<f64> = times.iter().map(|&t| self.bond(t)).collect();
        let value = gain.iter().map(|g| self.initial_capital + g).collect();
        let jumps = path
            .jumps()
            .iter()
            .map(|jump| {
                let before: Vec<f64> = (0..d).map(|c| path.left_limit(jump.index, c)).collect();
                let after = path.value_vec(jump.index);
                JumpRecord {
                    time: jump.time,
                    value_before: self.initial_capital + self.gain_with(jump.time, &before),
                    value_after: self.initial_capital + self.gain_with(jump.time, after),
                    stock: self.stock(jump.time).to_vec(),
                    price_jump: jump.size.clone(),
                }
            })
            .collect();
        let rebalances = (1..self.holdings.len())
            .map(|i| RebalanceRecord {
                time: self.times[i],
                bond_before: self.bond[i - 1],
                bond_after: self.bond[i],
                stock_before: self.holdings[i - 1].clone(),
                stock_after: self.holdings[i].clone(),
                price: self.prices[i].clone(),
            })
            .collect();
        StrategyLedger {
            times: times.to_vec(),
            prices,
            initial_capital: self.initial_capital,
            gain,
            bond: psi,
            value,
            stock: phi,
            jumps,
            rebalances,
            level_gains: Vec::new(),
        }
    }
}

/// `G(t)` of a simple strategy on a path; `0` at `t = 0`.
pub fn simple_gain(strategy: &SimpleStrategy<'_>, path: &SampledPath, t: f64) -> Result<f64> {
    check_time(path, t)?;
    let pos = strategy.positions(path)?;
    let x: Vec<f64> = (0..path.dim()).map(|c| path.eval(t, c)).collect();
    Ok(pos.gain_with(t, &x))
}

/// `ψ(t)` of a simple self-financing strategy on a path.
pub fn simple_bond_holdings(strategy: &SimpleStrategy<'_>, path: &SampledPath, t: f64) -> Result<f64> {
    check_time(path, t)?;
    Ok(strategy.positions(path)?.bond(t))
}

fn check_time(path: &SampledPath, t: f64) -> Result<()> {
    if !(0.0..=path.horizon()).contains(&t) {
        return Err(Error::OutOfRange(format!("time {t} outside [0, {}]", path.horizon())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub time: f64,
    pub value_before: f64,
    pub value_after: f64,
    pub stock: Vec<f64>,
    pub price_jump: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceRecord {
    pub time: f64,
    pub bond_before: f64,
    pub bond_after: f64,
    pub stock_before: Vec<f64>,
    pub stock_after: Vec<f64>,
    pub price: Vec<f64>,
}

/// Gain, bond holdings, value and stock position of a strategy on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyLedger {
    pub times: Vec<f64>,
    pub prices: Vec<Vec<f64>>,
    pub initial_capital: f64,
    pub gain: Vec<f64>,
    pub bond: Vec<f64>,
    pub value: Vec<f64>,
    pub stock: Vec<Vec<f64>>,
    pub jumps: Vec<JumpRecord>,
    pub rebalances: Vec<RebalanceRecord>,
    /// Gains of the approximating simple strategies, one row per level, on `times`.
    pub level_gains: Vec<Vec<f64>>,
}

impl StrategyLedger {
    /// CSV `t,V,G,psi,phi_1..,omega_1..`.
    pub fn to_csv(&self) -> String {
        let d = self.prices.first().map_or(0, Vec::len);
        let mut out = String::from("t,V,G,psi");
        for c in 1..=d {
            out.push_str(&format!(",phi_{c}"));
        }
        for c in 1..=d {
            out.push_str(&format!(",omega_{c}"));
        }
        out.push('\n');
        for j in 0..self.times.len() {
            out.push_str(&format!("{},{},{},{}", self.times[j], self.value[j], self.gain[j], self.bond[j]));
            for v in self.stock[j].iter().chain(&self.prices[j]) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    fn scale(&self) -> f64 {
        let mut s = 1.0_f64.max(self.initial_capital.abs());
        for j in 0..self.times.len() {
            s = s.max(self.value[j].abs()).max(self.bond[j].abs());
            s = s.max(dot(&self.stock[j], &self.prices[j]).abs());
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathClass {
    /// Continuous price paths; explicit jumps are rejected.
    Continuous,
    Cadlag,
}

/// Limit strategy `φ = ∇_ω F(t, ω_{t-})` and its ledger at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitStrategy {
    pub ledger: StrategyLedger,
    pub gaps: Vec<f64>,
    pub convergence_metric: f64,
    pub gain_converged: bool,
    pub qv_converged: bool,
    pub caveat: Option<String>,
}

/// Gains of the approximating strategies `φ^n = Σ ∇_ω F(t^n_i, ω^{n,Δω(t^n_i)}_{t^n_i-}) 1_(t^n_i, t^n_{i+1}]`.
///
/// The ledger is that of the top-level strategy with `V_0 = F(0, ω_0)` unless
/// `initial_capital` is given; `times` defaults to the sampling grid.
#[allow(clippy::too_many_arguments)]
pub fn gain_from_vertical_form(
    f: &dyn Functional,
    path: &SampledPath,
    seq: &PartitionSequence,
    times: Option<&[f64]>,
    class: PathClass,
    initial_capital: Option<f64>,
    fd: &FdConfig,
    cfg: &ConvergenceConfig,
) -> Result<LimitStrategy> {
    if f.dim() != path.dim() {
        return invalid("functional and path dimensions differ");
    }
    if class == PathClass::Continuous && !path.jumps().is_empty() {
        return Err(Error::Precondition("continuous mode needs a path without jumps".into()));
    }
    if seq.num_levels() < 2 {
        return invalid("needs at least two partition levels");
    }
    let seq = &covering_sequence(path, seq)?;
    let times = times.map_or_else(|| path.grid().to_vec(), <[f64]>::to_vec);
    let v0 = match initial_capital {
        Some(v) => v,
        None => f.eval(&StoppedPath::at_index(path, 0, Side::Right)),
    };
    let d = path.dim();
    let prices: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| (0..d).map(|c| path.eval(t, c)).collect())
        .collect();
    let mut level_gains = Vec::with_capacity(seq.num_levels());
    let mut top = None;
    for n in 0..seq.num_levels() {
        let grads = functional_gradients(f, path, seq, n, fd)?;
        let level = seq.level(n)?.to_vec();
        let m = level.len() - 1;
        let pos = Positions::new(path, level, grads[..m].to_vec(), v0)?;
        level_gains.push(times.iter().zip(&prices).map(|(&t, x)| pos.gain_with(t, x)).collect::<Vec<f64>>());
        top = Some(pos);
    }
    let mut ledger = top.unwrap().ledger(path, &times);
    let summary = cauchy_gap(&level_gains, cfg);
    ledger.level_gains = level_gains;
    let qv = quadratic_variation(path, seq, &QvOptions { convergence: *cfg, ..QvOptions::default() })?;
    let caveat = (!qv.converged).then(|| "quadratic variation not converged".to_string());
    Ok(LimitStrategy {
        ledger,
        gaps: summary.gaps,
        convergence_metric: summary.metric,
        gain_converged: summary.converged,
        qv_converged: qv.converged,
        caveat,
    })
}

/// Pass/fail report of the self-financing identities on a ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfFinancingReport {
    pub tolerance: f64,
    /// `max |V - V_0 - G|`.
    pub value_identity: f64,
    /// `max |V - φ·ω - ψ|`.
    pub portfolio_identity: f64,
    /// `max |ΔV - φ·Δω|` over jump times.
    pub jump_condition: f64,
    /// `max |ψ(t_i+) - ψ(t_i) + ω(t_i)·(φ(t_i+) - φ(t_i))|` over trading times.
    pub rebalance_identity: f64,
    /// Cauchy-gap verdict on the approximating gains when level data is present.
    pub gain_converged: Option<bool>,
    pub passed: bool,
}

/// Checks `V = V_0 + G`, `V = φ·ω + ψ`, `ΔV = φ·Δω` and the rebalance identity
/// to `rel_tol` times the ledger scale.
pub fn self_financing_check(ledger: &StrategyLedger, rel_tol: f64, cfg: &ConvergenceConfig) -> SelfFinancingReport {
    let tolerance = rel_tol * ledger.scale();
    let mut value_identity = 0.0_f64;
    let mut portfolio_identity = 0.0_f64;
    for j in 0..ledger.times.len() {
        value_identity = value_identity.max((ledger.value[j] - ledger.initial_capital - ledger.gain[j]).abs());
        let held = dot(&ledger.stock[j], &ledger.prices[j]) + ledger.bond[j];
        portfolio_identity = portfolio_identity.max((ledger.value[j] - held).abs());
    }
    let jump_condition = ledger
        .jumps
        .iter()
        .map(|r| (r.value_after - r.value_before - dot(&r.stock, &r.price_jump)).abs())
        .fold(0.0, f64::max);
    let rebalance_identity = ledger
        .rebalances
        .iter()
        .map(|r| {
            let change: Vec<f64> = r.stock_after.iter().zip(&r.stock_before).map(|(a, b)| a - b).collect();
            (r.bond_after - r.bond_before + dot(&r.price, &change)).abs()
        })
        .fold(0.0, f64::max);
    let gain_converged = (ledger.level_gains.len() >= 2).then(|| cauchy_gap(&ledger.level_gains, cfg).converged);
    let passed = value_identity <= tolerance
        && portfolio_identity <= tolerance
        && jump_condition <= tolerance
        && rebalance_identity <= tolerance;
    SelfFinancingReport {
        tolerance,
        value_identity,
        portfolio_identity,
        jump_condition,
        rebalance_identity,
        gain_converged,
        passed,
    }
}

/// Quadratic-variation density of the realized path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RealizedDensity {
    Given { density: DensitySpec },
    /// Per-cell ratio of `[x]^c` increments to time steps, averaged over a
    /// centred window of `window` cells.
    Estimate { window: usize },
}

impl Default for RealizedDensity {
    fn default() -> Self {
        RealizedDensity::Estimate { window: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeOptions {
    /// Level of the trading partition; defaults to the top level.
    pub level: Option<usize>,
    /// Number of stopped paths sampled for the pricing-equation check.
    pub fpde_samples: usize,
    /// Absolute tolerance of the pricing-equation check, relative to the functional scale.
    pub fpde_tol: f64,
    pub fd: FdConfig,
    pub convergence: ConvergenceConfig,
}

impl Default for HedgeOptions {
    fn default() -> Self {
        Self {
            level: None,
            fpde_samples: 64,
            fpde_tol: 1e-6,
            fd: FdConfig::default(),
            convergence: ConvergenceConfig::default(),
        }
    }
}

/// Outcome of delta hedging along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeReport {
    pub level: usize,
    pub initial_value: f64,
    pub gain: f64,
    pub payoff: f64,
    /// `V(T) - H`.
    pub realized_pnl: f64,
    /// `½ ∫ tr((A - Ã) ∇²_ω F) dt`.
    pub predicted_error: f64,
    pub residual: f64,
    /// `residual / |predicted|`. With no predicted error it is `0` when the
    /// residual is below `RELATIVE_FLOOR` times the price scale, else infinite.
    pub relative_residual: f64,
    pub fpde_max_residual: f64,
    pub fpde_ok: bool,
    pub times: Vec<f64>,
    /// `V(t) = F(0, ω_0) + G(t)`.
    pub value: Vec<f64>,
    /// `F(t, ω_t)`.
    pub functional: Vec<f64>,
    pub max_tracking_error: f64,
    pub caveats: Vec<String>,
}

impl HedgeReport {
    /// CSV `t,V,F`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,V,F\n");
        for j in 0..self.times.len() {
            out.push_str(&format!("{},{},{}\n", self.times[j], self.value[j], self.functional[j]));
        }
        out
    }
}

fn realized_density(
    spec: &RealizedDensity,
    path: &SampledPath,
    seq: &PartitionSequence,
    cfg: &ConvergenceConfig,
) -> Result<Vec<Vec<f64>>> {
    let grid = path.grid();
    let d = path.dim();
    match spec {
        RealizedDensity::Given { density: a } => {
            a.validate(d)?;
            Ok((0..grid.len() - 1).map(|j| a.matrix(grid[j], path.value_vec(j))).collect())
        }
        RealizedDensity::Estimate { window } => {
            let window = (*window).max(1);
            let qv = quadratic_variation(path, seq, &QvOptions { convergence: *cfg, ..QvOptions::default() })?;
            let raw: Vec<Vec<f64>> = (0..grid.len() - 1)
                .map(|j| {
                    let dt = grid[j + 1] - grid[j];
                    qv.continuous_part[j + 1]
                        .iter()
                        .zip(&qv.continuous_part[j])
                        .map(|(a, b)| (a - b) / dt)
                        .collect()
                })
                .collect();
            let n = raw.len();
            let half = window / 2;
            Ok((0..n)
                .map(|j| {
                    let lo = j.saturating_sub(half);
                    let hi = (lo + window).min(n);
                    let lo = hi.saturating_sub(window);
                    let mut acc = vec![0.0; d * d];
                    for row in &raw[lo..hi] {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    acc.iter().map(|a| a / (hi - lo) as f64).collect()
                })
                .collect())
        }
    }
}

/// Residuals below this fraction of the price scale count as zero when no error is predicted.
pub const RELATIVE_FLOOR: f64 = 1e-12;

/// Delta hedge of `F` along `path` with trading at one level of `seq`.
///
/// `payoff` defaults to `F(T, ω_T)`. The pricing equation
/// `DF + ½ tr(A ∇²_ω F) = 0` is checked on sampled stopped paths and reported.
pub fn hedge(
    f: &dyn Functional,
    payoff: Option<&dyn Fn(&SampledPath) -> f64>,
    model: &DensitySpec,
    realized: &RealizedDensity,
    path: &SampledPath,
    seq: &PartitionSequence,
    opts: &HedgeOptions,
) -> Result<HedgeReport> {
    if f.dim() != path.dim() {
        return invalid("functional and path dimensions differ");
    }
    model.validate(path.dim())?;
    let seq = &covering_sequence(path, seq)?;
    let level = opts.level.unwrap_or(seq.top_level());
    let grid = path.grid();
    let n = grid.len();
    let d = path.dim();
    let mut caveats = Vec::new();
    if !path.jumps().is_empty() {
        caveats.push("the hedging-error formula assumes a continuous path".to_string());
    }

    let fscale = |v: f64| v.abs().max(1.0);
    let step = ((n - 1) / opts.fpde_samples.max(1)).max(1);
    let mut fpde_max = 0.0_f64;
    for j in (0..n - 1).step_by(step) {
        let state = StoppedPath::at_index(path, j, Side::Right);
        let r = fpde_residual(f, model, &state, &opts.fd)?;
        fpde_max = fpde_max.max(r.abs() / fscale(f.eval(&state)));
    }
    let fpde_ok = fpde_max <= opts.fpde_tol;
    if !fpde_ok {
        caveats.push(format!("pricing equation residual {fpde_max:e} above {:e}", opts.fpde_tol));
    }

    let grads = functional_gradients(f, path, seq, level, &opts.fd)?;
    let times = seq.level(level)?.to_vec();
    let m = times.len() - 1;
    let initial = f.eval(&StoppedPath::at_index(path, 0, Side::Right));
    let pos = Positions::new(path, times, grads[..m].to_vec(), initial)?;

    let mut value = Vec::with_capacity(n);
    let mut functional = Vec::with_capacity(n);
    let mut tracking = 0.0_f64;
    for j in 0..n {
        let v = initial + pos.gain_with(grid[j], path.value_vec(j));
        let fv = f.eval(&StoppedPath::at_index(path, j, Side::Right));
        tracking = tracking.max((v - fv).abs());
        value.push(v);
        functional.push(fv);
    }
    let gain = value[n - 1] - initial;
    let payoff = match payoff {
        Some(h) => h(path),
        None => functional[n - 1],
    };
    let realized_pnl = initial + gain - payoff;

    let a_tilde = realized_density(realized, path, seq, &opts.convergence)?;
    let mut predicted = 0.0;
    for j in 0..n - 1 {
        let state = StoppedPath::at_index(path, j, Side::Right);
        let a = model.matrix(grid[j], path.value_vec(j));
        let diff: Vec<f64> = a.iter().zip(&a_tilde[j]).map(|(x, y)| x - y).collect();
        if diff.iter().any(|&v| v != 0.0) {
            predicted += 0.5 * trace_product(&diff, &hessian(f, &state, &opts.fd)?, d) * (grid[j + 1] - grid[j]);
        }
    }
    let residual = (realized_pnl - predicted).abs();
    let scale = initial.abs().max(payoff.abs()).max(1.0);
    let relative_residual = if predicted != 0.0 {
        residual / predicted.abs()
    } else if residual <= RELATIVE_FLOOR * scale {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(HedgeReport {
        level,
        initial_value: initial,
        gain,
        payoff,
        realized_pnl,
        predicted_error: predicted,
        residual,
        relative_residual,
        fpde_max_residual: fpde_max,
        fpde_ok,
        times: grid.to_vec(),
        value,
        functional,
        max_tracking_error: tracking,
        caveats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlausibilityVerdict {
    SeriesBounded,
    Diverging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityLevel {
    pub level: usize,
    /// `max_t |(A^n - A^{n-1}) + 2 Σ_{j<k} Δ_j Δ_k|`, cross terms within coarse cells.
    pub cross_identity_residual: f64,
    /// `max_t |A^n - (ω(t)² - ω(0)² + G(t; φ^n))|` with `φ^n = -2 Σ ω(t_i) 1_(t_i, t_{i+1}]`.
    pub strategy_identity_residual: f64,
    /// `max_t (A^n - A^{n-1})^-`.
    pub k: f64,
    /// `max_t (Σ_{j≠k} Δ_j Δ_k)^-` over ordered pairs, which is `max_t (A^n - A^{n-1})^+`.
    pub cross_term_as_displayed: f64,
    pub partial_sum_k: f64,
    pub partial_sum_displayed: f64,
    /// `max_t (V^{n-1}(t) - V^n(t))^+` with `V^n_0 = Σ_{m<=n} k_m`.
    pub monotonicity_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityReport {
    pub levels: Vec<PlausibilityLevel>,
    pub verdict: PlausibilityVerdict,
    /// `Σ k` over the last window of levels divided by the previous window.
    pub tail_ratio: f64,
}

/// Ratio below which the tail of `Σ k_n` is read as summable.
pub const TAIL_RATIO_THRESHOLD: f64 = 0.5;

/// Diagnostics for the plausibility argument on a scalar path. `probes`
/// defaults to the sampling grid, where the sup over `t` is attained.
pub fn plausibility_diagnostic(
    path: &SampledPath,
    seq: &PartitionSequence,
    probes: Option<&[f64]>,
    cfg: &ConvergenceConfig,
) -> Result<PlausibilityReport> {
    if path.dim() != 1 {
        return Err(Error::Unsupported("plausibility diagnostics are implemented for scalar paths".into()));
    }
    if !seq.is_nested() {
        return invalid("plausibility diagnostics need a nested partition sequence");
    }
    if seq.num_levels() < 3 {
        return invalid("plausibility diagnostics need at least three partition levels");
    }
    let probes = probes.map_or_else(|| path.grid().to_vec(), <[f64]>::to_vec);
    let x = Projection::coordinate(path, 0);
    let x_at: Vec<f64> = probes.iter().map(|&t| x.at(t)).collect();
    let x0 = path.value(0, 0);
    let curves: Vec<LevelCurve> = seq.levels().iter().map(|l| LevelCurve::new(&x, l)).collect();
    let a: Vec<Vec<f64>> = curves
        .iter()
        .map(|c| probes.iter().zip(&x_at).map(|(&t, &v)| c.eval(t, v)).collect())
        .collect();
    let scale = path.scale() * path.scale();

    let mut levels = Vec::new();
    let mut sum_k = 0.0;
    let mut sum_displayed = 0.0;
    let mut prev_value: Option<Vec<f64>> = None;
    let mut k_values = Vec::new();
    for n in 0..seq.num_levels() {
        let level = seq.level(n)?;
        let times = level.to_vec();
        let m = times.len() - 1;
        let holdings: Vec<Vec<f64>> = times[..m].iter().map(|&t| vec![-2.0 * x.at(t)]).collect();
        let pos = Positions::new(path, times, holdings, 0.0)?;
        let strategy_identity_residual = probes
            .iter()
            .zip(&x_at)
            .enumerate()
            .map(|(p, (&t, &v))| (a[n][p] - (v * v - x0 * x0 + pos.gain_with(t, &[v]))).abs())
            .fold(0.0, f64::max);
        if n == 0 {
            let value: Vec<f64> = probes.iter().zip(&x_at).map(|(&t, &v)| pos.gain_with(t, &[v])).collect();
            prev_value = Some(value);
            levels.push(PlausibilityLevel {
                level: 0,
                cross_identity_residual: 0.0,
                strategy_identity_residual,
                k: 0.0,
                cross_term_as_displayed: 0.0,
                partial_sum_k: 0.0,
                partial_sum_displayed: 0.0,
                monotonicity_violation: 0.0,
            });
            continue;
        }
        let coarse = seq.level(n - 1)?;
        let cross = CrossSums::new(&x, coarse, level);
        let mut identity = 0.0_f64;
        let mut k = 0.0_f64;
        let mut displayed = 0.0_f64;
        for (p, (&t, &v)) in probes.iter().zip(&x_at).enumerate() {
            let c = cross.at(t, v);
            let diff = a[n][p] - a[n - 1][p];
            identity = identity.max((diff + 2.0 * c).abs());
            k = k.max((-diff).max(0.0));
            displayed = displayed.max((-(2.0 * c)).max(0.0));
        }
        sum_k += k;
        sum_displayed += displayed;
        k_values.push(k);
        let value: Vec<f64> = probes
            .iter()
            .zip(&x_at)
            .map(|(&t, &v)| sum_k + pos.gain_with(t, &[v]))
            .collect();
        let prev = prev_value.replace(value.clone()).unwrap();
        let monotonicity_violation = prev
            .iter()
            .zip(&value)
            .map(|(a, b)| (a - b).max(0.0))
            .fold(0.0, f64::max);
        levels.push(PlausibilityLevel {
            level: n,
            cross_identity_residual: identity,
            strategy_identity_residual,
            k,
            cross_term_as_displayed: displayed,
            partial_sum_k: sum_k,
            partial_sum_displayed: sum_displayed,
            monotonicity_violation,
        });
    }
    let w = (k_values.len() / 2).min(4);
    let last: f64 = k_values[k_values.len() - w..].iter().sum();
    let before: f64 = k_values[k_values.len() - 2 * w..k_values.len() - w].iter().sum();
    let tail_ratio = if before > 0.0 { last / before } else if last > 0.0 { f64::INFINITY } else { 0.0 };
    let bounded = last <= cfg.tol * scale.max(1.0) * 1e-3 || tail_ratio <= TAIL_RATIO_THRESHOLD;
    Ok(PlausibilityReport {
        levels,
        verdict: if bounded {
            PlausibilityVerdict::SeriesBounded
        } else {
            PlausibilityVerdict::Diverging
        },
        tail_ratio,
    })
}

/// `Σ_i Σ_{j<k} Δ_j(t) Δ_k(t)` over fine cells `j, k` inside each coarse cell `i`.
struct CrossSums {
    coarse: Vec<f64>,
    fine: Vec<f64>,
    fine_values: Vec<f64>,
    /// Cross sum of complete coarse cells before coarse index `i`.
    prefix: Vec<f64>,
}

impl CrossSums {
    fn new(x: &Projection<'_>, coarse: &[f64], fine: &[f64]) -> Self {
        let fine_values: Vec<f64> = fine.iter().map(|&t| x.at(t)).collect();
        let mut prefix = Vec::with_capacity(coarse.len());
        prefix.push(0.0);
        for w in coarse.windows(2) {
            let lo = fine.partition_point(|&s| s < w[0]);
            let hi = fine.partition_point(|&s| s < w[1]);
            let mut running = 0.0;
            let mut acc = 0.0;
            for j in lo..hi {
                let inc = fine_values[j + 1] - fine_values[j];
                acc += inc * running;
                running += inc;
            }
            prefix.push(prefix.last().unwrap() + acc);
        }
        Self {
            coarse: coarse.to_vec(),
            fine: fine.to_vec(),
            fine_values,
            prefix,
        }
    }

    fn at(&self, t: f64, x_t: f64) -> f64 {
        let i = self.coarse.partition_point(|&s| s <= t).saturating_sub(1);
        if i == self.coarse.len() - 1 {
            return self.prefix[i];
        }
        let lo = self.fine.partition_point(|&s| s < self.coarse[i]);
        let hi = self.fine.partition_point(|&s| s < self.coarse[i + 1]);
        let mut running = 0.0;
        let mut acc = 0.0;
        for j in lo..hi {
            if self.fine[j] > t {
                break;
            }
            let end = if self.fine[j + 1] <= t { self.fine_values[j + 1] } else { x_t };
            let inc = end - self.fine_values[j];
            acc += inc * running;
            running += inc;
        }
        self.prefix[i] + acc
    }
}

/// Dyadic path on `[0, T]` whose level approximations `A^n(T)` alternate between
/// `1` and `1/2`, so that `Σ k_n` grows linearly with the number of levels.
pub fn adversarial_path(horizon: f64, max_level: usize) -> Result<SampledPath> {
    if max_level == 0 || max_level > 24 {
        return invalid("max_level must be in 1..=24");
    }
    let mut incs = vec![1.0_f64];
    let mut a = 1.0_f64;
    for n in 1..=max_level {
        let s = if n % 2 == 1 {
            0.0
        } else {
            (1.5 * a / (1u64 << n) as f64).sqrt()
        };
        incs = incs
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| {
                let e = if i % 2 == 0 { s } else { -s };
                [c / 2.0 + e, c / 2.0 - e]
            })
            .collect();
        a = incs.iter().map(|v| v * v).sum();
    }
    let m = incs.len();
    let grid: Vec<f64> = (0..=m).map(|i| i as f64 * horizon / m as f64).collect();
    let mut values = Vec::with_capacity(m + 1);
    values.push(0.0);
    for inc in incs {
        values.push(values.last().unwrap() + inc);
    }
    SampledPath::scalar(grid, values)
}
