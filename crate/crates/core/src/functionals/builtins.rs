use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{invalid, Result};
use crate::paths::PathState;

use super::{Functional, Regularity};

type EvalFn = dyn Fn(&dyn PathState) -> f64 + Send + Sync;
type VecFn = dyn Fn(&dyn PathState) -> Vec<f64> + Send + Sync;

/// A functional from closures. Derivatives left unset fall back to finite differences.
pub struct ClosureFunctional {
    name: String,
    dim: usize,
    eval: Box<EvalFn>,
    gradient: Option<Box<VecFn>>,
    hessian: Option<Box<VecFn>>,
    horizontal: Option<Box<EvalFn>>,
    regularity: Regularity,
}

impl ClosureFunctional {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        eval: impl Fn(&dyn PathState) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            eval: Box::new(eval),
            gradient: None,
            hessian: None,
            horizontal: None,
            regularity: Regularity::default(),
        }
    }

    pub fn with_gradient(mut self, g: impl Fn(&dyn PathState) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Box::new(g));
        self
    }

    pub fn with_hessian(mut self, h: impl Fn(&dyn PathState) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.hessian = Some(Box::new(h));
        self
    }

    pub fn with_horizontal(mut self, h: impl Fn(&dyn PathState) -> f64 + Send + Sync + 'static) -> Self {
        self.horizontal = Some(Box::new(h));
        self
    }

    pub fn with_regularity(mut self, r: Regularity) -> Self {
        self.regularity = r;
        self
    }
}

impl Functional for ClosureFunctional {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        self.name.clone()
    }

    fn eval(&self, state: &dyn PathState) -> f64 {
        (self.eval)(state)
    }

    fn vertical_gradient(&self, state: &dyn PathState) -> Option<Vec<f64>> {
        self.gradient.as_ref().map(|g| g(state))
    }

    fn vertical_hessian(&self, state: &dyn PathState) -> Option<Vec<f64>> {
        self.hessian.as_ref().map(|h| h(state))
    }

    fn horizontal_derivative(&self, state: &dyn PathState) -> Option<f64> {
        self.horizontal.as_ref().map(|h| h(state))
    }

    fn regularity(&self) -> Regularity {
        self.regularity
    }
}

/// `F(t, ω) = ω_c(t)`.
#[derive(Debug, Clone, Copy)]
pub struct Identity {
    dim: usize,
    coordinate: usize,
}

impl Identity {
    pub fn new(dim: usize, coordinate: usize) -> Self {
        assert!(coordinate < dim, "coordinate out of range");
        Self { dim, coordinate }
    }
}

impl Functional for Identity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        format!("identity[{}]", self.coordinate)
    }

    fn eval(&self, state: &dyn PathState) -> f64 {
        state.frozen(self.coordinate)
    }

    fn vertical_gradient(&self, _state: &dyn PathState) -> Option<Vec<f64>> {
        let mut g = vec![0.0; self.dim];
        g[self.coordinate] = 1.0;
        Some(g)
    }

    fn vertical_hessian(&self, _state: &dyn PathState) -> Option<Vec<f64>> {
        Some(vec![0.0; self.dim * self.dim])
    }

    fn horizontal_derivative(&self, _state: &dyn PathState) -> Option<f64> {
        Some(0.0)
    }

    fn regularity(&self) -> Regularity {
        Regularity::SMOOTH
    }
}

/// Smooth functions `f` for cylinder functionals `F(t, ω) = f(ω(t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "function", rename_all = "snake_case")]
pub enum CylinderFunction {
    /// `x_c^p`.
    Power { exponent: f64 },
    /// `exp(a x_c)`.
    Exp { rate: f64 },
    /// `sin(k x_c)`.
    Sine { frequency: f64 },
    /// `x_0 x_1`.
    Product,
    /// `|x|²`.
    SquaredNorm,
}

/// `F(t, ω) = f(ω(t))`.
#[derive(Debug, Clone, Copy)]
pub struct Cylinder {
    dim: usize,
    coordinate: usize,
    function: CylinderFunction,
}

impl Cylinder {
    pub fn new(dim: usize, function: CylinderFunction) -> Self {
        Self::on_coordinate(dim, 0, function)
    }

    pub fn on_coordinate(dim: usize, coordinate: usize, function: CylinderFunction) -> Self {
        assert!(coordinate < dim, "coordinate out of range");
        if function == CylinderFunction::Product {
            assert!(dim >= 2, "product needs two coordinates");
        }
        Self { dim, coordinate, function }
    }

    pub fn function(&self) -> CylinderFunction {
        self.function
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let v = x[self.coordinate];
        match self.function {
            CylinderFunction::Power { exponent } => pow(v, exponent),
            CylinderFunction::Exp { rate } => (rate * v).exp(),
            CylinderFunction::Sine { frequency } => (frequency * v).sin(),
            CylinderFunction::Product => x[0] * x[1],
            CylinderFunction::SquaredNorm => x.iter().map(|a| a * a).sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        let c = self.coordinate;
        let v = x[c];
        match self.function {
            CylinderFunction::Power { exponent } => g[c] = exponent * pow(v, exponent - 1.0),
            CylinderFunction::Exp { rate } => g[c] = rate * (rate * v).exp(),
            CylinderFunction::Sine { frequency } => g[c] = frequency * (frequency * v).cos(),
            CylinderFunction::Product => {
                g[0] = x[1];
                g[1] = x[0];
            }
            CylinderFunction::SquaredNorm => {
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi = 2.0 * xi;
                }
            }
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut h = vec![0.0; d * d];
        let c = self.coordinate;
        let v = x[c];
        match self.function {
            CylinderFunction::Power { exponent } => {
                h[c * d + c] = exponent * (exponent - 1.0) * pow(v, exponent - 2.0)
            }
            CylinderFunction::Exp { rate } => h[c * d + c] = rate * rate * (rate * v).exp(),
            CylinderFunction::Sine { frequency } => {
                h[c * d + c] = -frequency * frequency * (frequency * v).sin()
            }
            CylinderFunction::Product => {
                h[1] = 1.0;
                h[d] = 1.0;
            }
            CylinderFunction::SquaredNorm => {
                for i in 0..d {
                    h[i * d + i] = 2.0;
                }
            }
        }
        h
    }
}

fn pow(v: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if p.fract() == 0.0 && p.abs() < 64.0 {
        v.powi(p as i32)
    } else {
        v.powf(p)
    }
}

impl Functional for Cylinder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        format!("cylinder[{:?}]", self.function)
    }

    fn eval(&self, state: &dyn PathState) -> f64 {
        self.value(&state.current())
    }

    fn vertical_gradient(&self, state: &dyn PathState) -> Option<Vec<f64>> {
        Some(self.gradient(&state.current()))
    }

    fn vertical_hessian(&self, state: &dyn PathState) -> Option<Vec<f64>> {
        Some(self.hessian(&state.current()))
    }

    fn horizontal_derivative(&self, _state: &dyn PathState) -> Option<f64> {
        Some(0.0)
    }

    fn regularity(&self) -> Regularity {
        Regularity::SMOOTH
    }
}

/// `F(t, ω) = ∫_0^t ω_c(s) ds`.
#[derive(Debug, Clone, Copy)]
pub struct RunningIntegral {
    coordinate: usize,
}

impl RunningIntegral {
    pub fn new(coordinate: usize) -> Self {
        Self { coordinate }
    }
}

impl Functional for RunningIntegral {
    fn dim(&self) -> usize {
        self.coordinate + 1
    }

    fn name(&self) -> String {
        format!("running_integral[{}]", self.coordinate)
    }

    fn eval(&self, state: &dyn PathState) -> f64 {
        state.running_integral(self.coordinate)
    }

    fn vertical_gradient(&self, state: &dyn PathState) -> Option<Vec<f64>> {
        Some(vec![0.0; state.dim()])
    }

    fn vertical_hessian(&self, state: &dyn PathState) -> Option<Vec<f64>> {
        Some(vec![0.0; state.dim() * state.dim()])
    }

    fn horizontal_derivative(&self, state: &dyn PathState) -> Option<f64> {
        Some(state.frozen(self.coordinate))
    }

    fn regularity(&self) -> Regularity {
        Regularity::SMOOTH
    }
}

/// `F(t, ω) = ∫_0^t ω_c(s) ds + ω_c(t)(T - t)`, the forward value of `∫_0^T ω_c`.
#[derive(Debug, Clone, Copy)]
pub struct AsianForward {
    coordinate: usize,
    horizon: f64,
}

impl AsianForward {
    pub fn new(coordinate: usize, horizon: f64) -> Self {
        Self { coordinate, horizon }
    }
}

impl Functional for AsianForward {
    fn dim(&self) -> usize {
        self.coordinate + 1
    }

    fn name(&self) -> String {
        format!("asian_forward[{}]", self.coordinate)
    }

    fn eval(&self, state: &dyn PathState) -> f64 {
        state.running_integral(self.coordinate) + state.frozen(self.coordinate) * (self.horizon - state.time())
    }

    fn vertical_gradient(&self, state: &dyn PathState) -> Option<Vec<f64>> {
        let mut g = vec![0.0; state.dim()];
        g[self.coordinate] = self.horizon - state.time();
        Some(g)
    }

    fn vertical_hessian(&self, state: &dyn PathState) -> Option<Vec<f64>> {
        Some(vec![0.0; state.dim() * state.dim()])
    }

    fn horizontal_derivative(&self, _state: &dyn PathState) -> Option<f64> {
        Some(0.0)
    }

    fn regularity(&self) -> Regularity {
        Regularity::SMOOTH
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    Call,
    Put,
}

/// Black–Scholes price with zero rate, `F(t, ω) = BS(ω(t), T - t)`.
#[derive(Debug, Clone, Copy)]
pub struct BlackScholes {
    sigma: f64,
    strike: f64,
    horizon: f64,
    kind: OptionKind,
}

struct Greeks {
    price: f64,
    delta: f64,
    gamma: f64,
    theta: f64,
}

impl BlackScholes {
    pub fn new(sigma: f64, strike: f64, horizon: f64, kind: OptionKind) -> Result<Self> {
        if !(sigma > 0.0) {
            return invalid(format!("sigma must be positive, got {sigma}"));
        }
        if !(strike > 0.0) {
            return invalid(format!("strike must be positive, got {strike}"));
        }
        if !(horizon > 0.0) {
            return invalid(format!("horizon must be positive, got {horizon}"));
        }
        Ok(Self { sigma, strike, horizon, kind })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn payoff(&self, s: f64) -> f64 {
        match self.kind {
            OptionKind::Call => (s - self.strike).max(0.0),
            OptionKind::Put => (self.strike - s).max(0.0),
        }
    }

    pub fn price(&self, t: f64, s: f64) -> f64 {
        self.greeks(t, s).price
    }

    pub fn delta(&self, t: f64, s: f64) -> f64 {
        self.greeks(t, s).delta
    }

    pub fn gamma(&self, t: f64, s: f64) -> f64 {
        self.greeks(t, s).gamma
    }

    fn greeks(&self, t: f64, s: f64) -> Greeks {
        let tau = self.horizon - t;
        let k = self.strike;
        if tau <= 0.0 || s <= 0.0 {
            let itm = match self.kind {
                OptionKind::Call => s > k,
                OptionKind::Put => s < k,
            };
            let delta = match (self.kind, itm) {
                (_, false) => 0.0,
                (OptionKind::Call, true) => 1.0,
                (OptionKind::Put, true) => -1.0,
            };
            return Greeks {
                price: self.payoff(s),
                delta: if s <= 0.0 { 0.0 } else { delta },
                gamma: 0.0,
                theta: 0.0,
            };
        }
        let n = Normal::standard();
        let sd = self.sigma * tau.sqrt();
        let d1 = ((s / k).ln() + 0.5 * sd * sd) / sd;
        let d2 = d1 - sd;
        let pdf = n.pdf(d1);
        let (price, delta) = match self.kind {
            OptionKind::Call => (s * n.cdf(d1) - k * n.cdf(d2), n.cdf(d1)),
            OptionKind::Put => (k * n.cdf(-d2) - s * n.cdf(-d1), n.cdf(d1) - 1.0),
        };
        Greeks {
            price,
            delta,
            gamma: pdf / (s * sd),
            theta: -s * pdf * self.sigma / (2.0 * tau.sqrt()),
        }
    }
}

impl Functional for BlackScholes {
    fn dim(&self) -> usize {
        1
    }

    fn name(&self) -> String {
        format!("black_scholes[{:?}, sigma={}, K={}]", self.kind, self.sigma, self.strike)
    }

    fn eval(&self, state: &dyn PathState) -> f64 {
        self.greeks(state.time(), state.frozen(0)).price
    }

    fn vertical_gradient(&self, state: &dyn PathState) -> Option<Vec<f64>> {
        Some(vec![self.greeks(state.time(), state.frozen(0)).delta])
    }

    fn vertical_hessian(&self, state: &dyn PathState) -> Option<Vec<f64>> {
        Some(vec![self.greeks(state.time(), state.frozen(0)).gamma])
    }

    fn horizontal_derivative(&self, state: &dyn PathState) -> Option<f64> {
        Some(self.greeks(state.time(), state.frozen(0)).theta)
    }

    fn regularity(&self) -> Regularity {
        Regularity::SMOOTH
    }
}

/// Structured descriptor for the built-in functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum FunctionalSpec {
    Identity {
        #[serde(default)]
        coordinate: usize,
    },
    Cylinder {
        #[serde(default)]
        coordinate: usize,
        #[serde(flatten)]
        function: CylinderFunction,
    },
    RunningIntegral {
        #[serde(default)]
        coordinate: usize,
    },
    AsianForward {
        #[serde(default)]
        coordinate: usize,
    },
    BlackScholes {
        sigma: f64,
        strike: f64,
        #[serde(default = "default_kind")]
        kind: OptionKind,
    },
}

fn default_kind() -> OptionKind {
    OptionKind::Call
}

impl FunctionalSpec {
    /// Instantiates the functional for paths of dimension `dim` on `[0, horizon]`.
    pub fn build(&self, horizon: f64, dim: usize) -> Result<Box<dyn Functional>> {
        let check = |c: usize| {
            if c < dim {
                Ok(())
            } else {
                invalid(format!("coordinate {c} out of range for dimension {dim}"))
            }
        };
        Ok(match *self {
            FunctionalSpec::Identity { coordinate } => {
                check(coordinate)?;
                Box::new(Identity::new(dim, coordinate))
            }
            FunctionalSpec::Cylinder { coordinate, function } => {
                check(coordinate)?;
                if function == CylinderFunction::Product && dim < 2 {
                    return invalid("product needs a path of dimension at least 2");
                }
                Box::new(Cylinder::on_coordinate(dim, coordinate, function))
            }
            FunctionalSpec::RunningIntegral { coordinate } => {
                check(coordinate)?;
                Box::new(RunningIntegral::new(coordinate))
            }
            FunctionalSpec::AsianForward { coordinate } => {
                check(coordinate)?;
                Box::new(AsianForward::new(coordinate, horizon))
            }
            FunctionalSpec::BlackScholes { sigma, strike, kind } => {
                if dim != 1 {
                    return invalid("black_scholes needs a scalar path");
                }
                Box::new(BlackScholes::new(sigma, strike, horizon, kind)?)
            }
        })
    }
}
