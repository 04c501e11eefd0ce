//! Non-anticipative functionals `F(t, ω_t)` and their pathwise derivatives.
//!
//! A functional reads its argument through [`PathState`], which only exposes
//! the path frozen at its stop time, so non-anticipativity holds by
//! construction for everything implemented on top of this trait.

mod builtins;

pub use builtins::{
    AsianForward, BlackScholes, ClosureFunctional, Cylinder, CylinderFunction, FunctionalSpec,
    Identity, OptionKind, RunningIntegral,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::paths::{HorizontalExtension, PathState, VerticalPerturbation};

/// Declared regularity of a functional. These are analytic hypotheses; they are
/// recorded, spot-checked, never proven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Regularity {
    pub left_continuous: bool,
    pub right_continuous: bool,
    pub jointly_continuous: bool,
    pub boundedness_preserving: bool,
}

impl Regularity {
    pub const SMOOTH: Regularity = Regularity {
        left_continuous: true,
        right_continuous: true,
        jointly_continuous: true,
        boundedness_preserving: true,
    };
}

/// A non-anticipative functional on `D([0, T], R^d)`.
///
/// Derivative methods return `None` when no closed form is available;
/// [`gradient`], [`hessian`] and [`horizontal`] then fall back to finite
/// differences. Implementations must be pure.
pub trait Functional: Send + Sync {
    fn dim(&self) -> usize;
    fn name(&self) -> String;
    fn eval(&self, state: &dyn PathState) -> f64;

    fn vertical_gradient(&self, _state: &dyn PathState) -> Option<Vec<f64>> {
        None
    }

    /// Row-major `d x d`.
    fn vertical_hessian(&self, _state: &dyn PathState) -> Option<Vec<f64>> {
        None
    }

    fn horizontal_derivative(&self, _state: &dyn PathState) -> Option<f64> {
        None
    }

    fn regularity(&self) -> Regularity {
        Regularity::default()
    }
}

/// Finite-difference settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    /// Vertical bump is `vertical_rel * (1 + |ω(t)|)`.
    pub vertical_rel: f64,
    /// Horizontal step is `min(horizontal_max, (T - t) / 2)`.
    pub horizontal_max: f64,
    pub enabled: bool,
    pub richardson: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            vertical_rel: 1e-4,
            horizontal_max: 1e-4,
            enabled: true,
            richardson: false,
        }
    }
}

impl FdConfig {
    pub fn vertical_bump(&self, state: &dyn PathState) -> f64 {
        let size = state.current().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.vertical_rel * (1.0 + size)
    }

    pub fn horizontal_step(&self, state: &dyn PathState) -> f64 {
        self.horizontal_max.min((state.horizon() - state.time()) / 2.0)
    }
}

fn unit(d: usize, i: usize, h: f64) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = h;
    e
}

fn eval_shifted(f: &dyn Functional, state: &dyn PathState, shift: Vec<f64>) -> f64 {
    let p = VerticalPerturbation::new(state, shift).expect("shift has the path dimension");
    f.eval(&p)
}

/// Central differences `[F(ω_t^{+h e_i}) - F(ω_t^{-h e_i})] / 2h`.
pub fn vertical_derivative_fd(f: &dyn Functional, state: &dyn PathState, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return invalid(format!("bump must be positive, got {h}"));
    }
    let d = state.dim();
    Ok((0..d)
        .map(|i| (eval_shifted(f, state, unit(d, i, h)) - eval_shifted(f, state, unit(d, i, -h))) / (2.0 * h))
        .collect())
}

/// Second vertical derivative by central differences, symmetric by construction.
pub fn vertical_hessian_fd(f: &dyn Functional, state: &dyn PathState, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return invalid(format!("bump must be positive, got {h}"));
    }
    let d = state.dim();
    let centre = f.eval(state);
    let mut out = vec![0.0; d * d];
    for a in 0..d {
        let plus = eval_shifted(f, state, unit(d, a, h));
        let minus = eval_shifted(f, state, unit(d, a, -h));
        out[a * d + a] = (plus - 2.0 * centre + minus) / (h * h);
        for b in a + 1..d {
            let shift = |sa: f64, sb: f64| {
                let mut v = vec![0.0; d];
                v[a] = sa * h;
                v[b] = sb * h;
                v
            };
            let value = (eval_shifted(f, state, shift(1.0, 1.0)) - eval_shifted(f, state, shift(1.0, -1.0))
                - eval_shifted(f, state, shift(-1.0, 1.0))
                + eval_shifted(f, state, shift(-1.0, -1.0)))
                / (4.0 * h * h);
            out[a * d + b] = value;
            out[b * d + a] = value;
        }
    }
    Ok(out)
}

fn forward_difference(f: &dyn Functional, state: &dyn PathState, h: f64) -> Result<f64> {
    let ext = HorizontalExtension::new(state, state.time() + h)?;
    Ok((f.eval(&ext) - f.eval(state)) / h)
}

/// One-sided `[F(t + h, ω_t) - F(t, ω_t)] / h`.
pub fn horizontal_derivative_fd(f: &dyn Functional, state: &dyn PathState, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return invalid(format!("step must be positive, got {h}"));
    }
    let t = state.time();
    if t >= state.horizon() {
        return Err(Error::OutOfRange("no horizontal extension past the horizon".into()));
    }
    if t + h > state.horizon() {
        return Err(Error::OutOfRange(format!("t + h = {} exceeds T", t + h)));
    }
    forward_difference(f, state, h)
}

/// Horizontal difference with the default step, optionally Richardson-extrapolated.
pub fn horizontal_derivative_default(f: &dyn Functional, state: &dyn PathState, fd: &FdConfig) -> Result<f64> {
    let h = fd.horizontal_step(state);
    let d1 = horizontal_derivative_fd(f, state, h)?;
    if fd.richardson {
        let d2 = horizontal_derivative_fd(f, state, h / 2.0)?;
        Ok(2.0 * d2 - d1)
    } else {
        Ok(d1)
    }
}

/// `∇_ω F`, analytic when available, else finite differences.
pub fn gradient(f: &dyn Functional, state: &dyn PathState, fd: &FdConfig) -> Result<Vec<f64>> {
    if let Some(g) = f.vertical_gradient(state) {
        return Ok(g);
    }
    if !fd.enabled {
        return Err(Error::Capability(format!("{} has no vertical gradient", f.name())));
    }
    vertical_derivative_fd(f, state, fd.vertical_bump(state))
}

/// `∇²_ω F`, analytic when available, else finite differences.
pub fn hessian(f: &dyn Functional, state: &dyn PathState, fd: &FdConfig) -> Result<Vec<f64>> {
    if let Some(h) = f.vertical_hessian(state) {
        return Ok(h);
    }
    if !fd.enabled {
        return Err(Error::Capability(format!("{} has no second vertical derivative", f.name())));
    }
    vertical_hessian_fd(f, state, fd.vertical_bump(state).sqrt() * 1e-2)
}

/// `DF`, analytic when available, else a forward difference.
pub fn horizontal(f: &dyn Functional, state: &dyn PathState, fd: &FdConfig) -> Result<f64> {
    if let Some(v) = f.horizontal_derivative(state) {
        return Ok(v);
    }
    if !fd.enabled {
        return Err(Error::Capability(format!("{} has no horizontal derivative", f.name())));
    }
    horizontal_derivative_default(f, state, fd)
}

/// Quadratic-variation density `A(t, ω(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DensitySpec {
    /// Constant `d x d` matrix, row-major.
    Constant { matrix: Vec<f64> },
    /// `A = diag(σ² x_i²)`.
    LocalVolatility { sigma: f64 },
}

impl DensitySpec {
    pub fn matrix(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        match self {
            DensitySpec::Constant { matrix } => matrix.clone(),
            DensitySpec::LocalVolatility { sigma } => {
                let d = x.len();
                let mut m = vec![0.0; d * d];
                for i in 0..d {
                    m[i * d + i] = sigma * sigma * x[i] * x[i];
                }
                m
            }
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            DensitySpec::Constant { matrix } if matrix.len() != dim * dim => {
                invalid(format!("density matrix needs {} entries", dim * dim))
            }
            DensitySpec::LocalVolatility { sigma } if !(*sigma >= 0.0) => {
                invalid(format!("sigma must be non-negative, got {sigma}"))
            }
            _ => Ok(()),
        }
    }
}

/// `tr(A B)` for row-major square matrices.
pub fn trace_product(a: &[f64], b: &[f64], d: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        for k in 0..d {
            acc += a[i * d + k] * b[k * d + i];
        }
    }
    acc
}

/// `DF + ½ tr(A ∇²_ω F)` at a stopped path with `t < T`.
pub fn fpde_residual(
    f: &dyn Functional,
    density: &DensitySpec,
    state: &dyn PathState,
    fd: &FdConfig,
) -> Result<f64> {
    if state.time() >= state.horizon() {
        return Err(Error::OutOfRange("the pricing equation holds for t < T".into()));
    }
    let d = state.dim();
    density.validate(d)?;
    let hess = hessian(f, state, fd)?;
    let df = horizontal(f, state, fd)?;
    let a = density.matrix(state.time(), &state.current());
    Ok(df + 0.5 * trace_product(&a, &hess, d))
}

/// Largest `|F(s') - F(s)|` over states at `d_∞`-distance `radius` reached by a
/// vertical bump in each coordinate direction or a horizontal extension.
pub fn continuity_spot_check(f: &dyn Functional, state: &dyn PathState, radius: f64) -> Result<f64> {
    let base = f.eval(state);
    let d = state.dim();
    let mut worst = 0.0_f64;
    for i in 0..d {
        for sign in [1.0, -1.0] {
            worst = worst.max((eval_shifted(f, state, unit(d, i, sign * radius)) - base).abs());
        }
    }
    let t = (state.time() + radius).min(state.horizon());
    let ext = HorizontalExtension::new(state, t)?;
    Ok(worst.max((f.eval(&ext) - base).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partitions::PartitionSequence;
    use crate::paths::{generate, GeneratorSpec, SampledPath, Side};

    fn grid_seq() -> PartitionSequence {
        PartitionSequence::dyadic(1.0, 8).unwrap()
    }

    #[test]
    fn square_central_difference_is_exact() {
        let seq = grid_seq();
        let p = SampledPath::from_fn(&seq, |_| vec![3.0]).unwrap();
        let s = p.stop(0.5, Side::Right).unwrap();
        let f = Cylinder::new(1, CylinderFunction::Power { exponent: 2.0 });
        let g = vertical_derivative_fd(&f, &s, 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn running_integral_has_no_vertical_sensitivity() {
        let seq = grid_seq();
        let p = generate(&GeneratorSpec::ScaledRandomWalk { sigma: 1.0, x0: 0.0 }, 1, &seq).unwrap();
        let f = RunningIntegral::new(0);
        for &t in &[0.0, 0.3, 0.5, 1.0] {
            let s = p.stop(t, Side::Right).unwrap();
            assert_eq!(vertical_derivative_fd(&f, &s, 1e-3).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn horizontal_fd_examples() {
        let seq = grid_seq();
        let p = generate(&GeneratorSpec::ScaledRandomWalk { sigma: 1.0, x0: 1.0 }, 2, &seq).unwrap();
        let s = p.stop(0.5, Side::Right).unwrap();
        let x = s.current()[0];
        let id = Identity::new(1, 0);
        assert_eq!(horizontal_derivative_fd(&id, &s, 1e-3).unwrap(), 0.0);
        let tw = ClosureFunctional::new("t*x", 1, |st: &dyn PathState| st.time() * st.current()[0]);
        assert!((horizontal_derivative_fd(&tw, &s, 1e-3).unwrap() - x).abs() < 1e-12);
        let asian = AsianForward::new(0, 1.0);
        assert!(horizontal_derivative_fd(&asian, &s, 1e-3).unwrap().abs() < 1e-12);
        let end = p.stop(1.0, Side::Right).unwrap();
        assert!(matches!(
            horizontal_derivative_fd(&id, &end, 1e-3),
            Err(Error::OutOfRange(_))
        ));
        assert!(horizontal_derivative_fd(&id, &s, 0.6).is_err());
    }

    #[test]
    fn capability_errors_without_fd() {
        let seq = grid_seq();
        let p = SampledPath::from_fn(&seq, |t| vec![t]).unwrap();
        let s = p.stop(0.5, Side::Right).unwrap();
        let f = ClosureFunctional::new("x^3", 1, |st: &dyn PathState| st.current()[0].powi(3));
        let fd = FdConfig {
            enabled: false,
            ..FdConfig::default()
        };
        let a = DensitySpec::LocalVolatility { sigma: 0.2 };
        assert!(matches!(fpde_residual(&f, &a, &s, &fd), Err(Error::Capability(_))));
        assert!(matches!(gradient(&f, &s, &fd), Err(Error::Capability(_))));
        let h = hessian(&f, &s, &FdConfig::default()).unwrap();
        assert!((h[0] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn fd_hessian_is_symmetric() {
        let seq = grid_seq();
        let p = SampledPath::from_fn(&seq, |t| vec![t, 1.0 - t]).unwrap();
        let s = p.stop(0.25, Side::Right).unwrap();
        let f = ClosureFunctional::new("xy^2", 2, |st: &dyn PathState| {
            let x = st.current();
            x[0] * x[1] * x[1]
        });
        let h = hessian(&f, &s, &FdConfig::default()).unwrap();
        assert_eq!(h[1], h[2]);
        assert!((h[1] - 2.0 * 0.75).abs() < 1e-5);
        assert!((h[3] - 2.0 * 0.25).abs() < 1e-5);
    }

    #[test]
    fn density_validation() {
        assert!(DensitySpec::Constant { matrix: vec![1.0, 0.0] }.validate(2).is_err());
        assert!(DensitySpec::LocalVolatility { sigma: -1.0 }.validate(1).is_err());
        let m = DensitySpec::LocalVolatility { sigma: 0.5 }.matrix(0.0, &[2.0, 4.0]);
        assert_eq!(m, vec![1.0, 0.0, 0.0, 4.0]);
    }
}
