//! Stopped paths `(t, x_t)` and the operations functionals act on.

use crate::error::{invalid, Error, Result};

use super::SampledPath;

/// Which version of the stopped path: `x_t` or `x_{t-}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Right,
    Left,
}

/// A point `(t, ω)` of the space of stopped paths, read through the sampling grid.
///
/// The path is frozen from [`stop_time`](Self::stop_time) on; `time()` may exceed
/// the stop time for horizontal extensions `(t + h, ω_t)`.
pub trait PathState {
    fn dim(&self) -> usize;
    fn grid(&self) -> &[f64];
    fn time(&self) -> f64;
    fn stop_time(&self) -> f64;
    /// Value for `u >= stop_time()`.
    fn frozen(&self, c: usize) -> f64;
    /// Path value at `grid()[j]`.
    fn value_at_index(&self, j: usize, c: usize) -> f64;
    /// Left limit at `grid()[j]`.
    fn left_limit_at_index(&self, j: usize, c: usize) -> f64;

    fn horizon(&self) -> f64 {
        *self.grid().last().unwrap()
    }

    /// `ω(t)` at the current time.
    fn current(&self) -> Vec<f64> {
        (0..self.dim()).map(|c| self.frozen(c)).collect()
    }

    /// Càdlàg evaluation at any `u`.
    fn value_at(&self, u: f64, c: usize) -> f64 {
        if u >= self.stop_time() {
            return self.frozen(c);
        }
        let j = self.grid().partition_point(|&s| s <= u).saturating_sub(1);
        self.value_at_index(j, c)
    }

    /// `∫_0^t ω_c(s) ds` of the stopped path, integrating the stepwise
    /// approximation on the sampling grid: a cell `[t_j, t_{j+1})` carries the
    /// left limit at `t_{j+1}`, which is read only when `t_{j+1} <= stop`.
    fn running_integral(&self, c: usize) -> f64 {
        let g = self.grid();
        let t = self.time();
        let s = self.stop_time();
        let mut acc = 0.0;
        for j in 0..g.len() - 1 {
            let (a, b) = (g[j], g[j + 1]);
            if a >= t {
                break;
            }
            let hi = b.min(t);
            if a < s && s < b {
                acc += self.value_at_index(j, c) * (s.min(hi) - a);
                if hi > s {
                    acc += self.frozen(c) * (hi - s);
                }
            } else {
                acc += self.left_limit_at_index(j + 1, c) * (hi - a);
            }
        }
        acc
    }
}

/// `(t, x_t)` or `(t, x_{t-})` for a sampled path.
#[derive(Debug, Clone, Copy)]
pub struct StoppedPath<'a> {
    base: &'a SampledPath,
    stop: f64,
    time: f64,
    side: Side,
    floor: usize,
    on_grid: bool,
}

impl<'a> StoppedPath<'a> {
    pub fn new(base: &'a SampledPath, t: f64, side: Side) -> Result<Self> {
        if !(0.0..=base.horizon()).contains(&t) {
            return Err(Error::OutOfRange(format!(
                "stop time {t} outside [0, {}]",
                base.horizon()
            )));
        }
        let floor = base.floor_index(t);
        Ok(Self {
            base,
            stop: t,
            time: t,
            side,
            floor,
            on_grid: base.grid()[floor] == t,
        })
    }

    /// Stopped at grid index `j` (no search).
    pub fn at_index(base: &'a SampledPath, j: usize, side: Side) -> Self {
        let t = base.grid()[j];
        Self {
            base,
            stop: t,
            time: t,
            side,
            floor: j,
            on_grid: true,
        }
    }

    /// `(t', x_t)` for `t' >= t`: the frozen path seen at a later time.
    pub fn extended_to(&self, t: f64) -> Result<Self> {
        if t < self.stop || t > self.base.horizon() {
            return Err(Error::OutOfRange(format!(
                "cannot extend stop time {} to {t}",
                self.stop
            )));
        }
        Ok(Self { time: t, ..*self })
    }

    pub fn base(&self) -> &'a SampledPath {
        self.base
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn perturb(&self, shift: Vec<f64>) -> Result<VerticalPerturbation<'_, Self>> {
        VerticalPerturbation::new(self, shift)
    }
}

impl PathState for StoppedPath<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn grid(&self) -> &[f64] {
        self.base.grid()
    }

    fn time(&self) -> f64 {
        self.time
    }

    fn stop_time(&self) -> f64 {
        self.stop
    }

    fn frozen(&self, c: usize) -> f64 {
        if self.on_grid && self.side == Side::Left {
            self.base.left_limit(self.floor, c)
        } else {
            self.base.value(self.floor, c)
        }
    }

    fn value_at_index(&self, j: usize, c: usize) -> f64 {
        if self.base.grid()[j] < self.stop {
            self.base.value(j, c)
        } else {
            self.frozen(c)
        }
    }

    fn left_limit_at_index(&self, j: usize, c: usize) -> f64 {
        let t = self.base.grid()[j];
        if t < self.stop || (t == self.stop && j > 0) {
            self.base.left_limit(j, c)
        } else {
            self.frozen(c)
        }
    }
}

/// `x_t^δ = x_t + δ 1_[t, T]`.
#[derive(Debug, Clone)]
pub struct VerticalPerturbation<'a, P: PathState + ?Sized> {
    base: &'a P,
    shift: Vec<f64>,
}

impl<'a, P: PathState + ?Sized> VerticalPerturbation<'a, P> {
    pub fn new(base: &'a P, shift: Vec<f64>) -> Result<Self> {
        if shift.len() != base.dim() {
            return invalid(format!(
                "shift of dimension {} for a path of dimension {}",
                shift.len(),
                base.dim()
            ));
        }
        Ok(Self { base, shift })
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }
}

impl<P: PathState + ?Sized> PathState for VerticalPerturbation<'_, P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn grid(&self) -> &[f64] {
        self.base.grid()
    }

    fn time(&self) -> f64 {
        self.base.time()
    }

    fn stop_time(&self) -> f64 {
        self.base.stop_time()
    }

    fn frozen(&self, c: usize) -> f64 {
        self.base.frozen(c) + self.shift[c]
    }

    fn value_at_index(&self, j: usize, c: usize) -> f64 {
        if self.grid()[j] >= self.stop_time() {
            self.frozen(c)
        } else {
            self.base.value_at_index(j, c)
        }
    }

    fn left_limit_at_index(&self, j: usize, c: usize) -> f64 {
        if self.grid()[j] > self.stop_time() {
            self.frozen(c)
        } else {
            self.base.left_limit_at_index(j, c)
        }
    }
}

/// `(t + h, ω_t)` for any path state.
pub struct HorizontalExtension<'a, P: PathState + ?Sized> {
    base: &'a P,
    time: f64,
}

impl<'a, P: PathState + ?Sized> HorizontalExtension<'a, P> {
    pub fn new(base: &'a P, time: f64) -> Result<Self> {
        if time < base.time() || time > base.horizon() {
            return Err(Error::OutOfRange(format!(
                "cannot extend time {} to {time}",
                base.time()
            )));
        }
        Ok(Self { base, time })
    }
}

impl<P: PathState + ?Sized> PathState for HorizontalExtension<'_, P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn grid(&self) -> &[f64] {
        self.base.grid()
    }

    fn time(&self) -> f64 {
        self.time
    }

    fn stop_time(&self) -> f64 {
        self.base.stop_time()
    }

    fn frozen(&self, c: usize) -> f64 {
        self.base.frozen(c)
    }

    fn value_at_index(&self, j: usize, c: usize) -> f64 {
        self.base.value_at_index(j, c)
    }

    fn left_limit_at_index(&self, j: usize, c: usize) -> f64 {
        self.base.left_limit_at_index(j, c)
    }
}

/// `d_∞((t, a), (t', b)) = sup_u |a(u ∧ t) - b(u ∧ t')| + |t - t'|`,
/// the sup taken over both sampling grids and both stop times.
pub fn d_infinity(a: &dyn PathState, b: &dyn PathState) -> Result<f64> {
    if a.dim() != b.dim() {
        return invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim()));
    }
    let mut points: Vec<f64> = a
        .grid()
        .iter()
        .chain(b.grid())
        .copied()
        .chain([a.stop_time(), b.stop_time()])
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let sup = points
        .iter()
        .map(|&u| {
            (0..a.dim())
                .map(|c| (a.value_at(u, c) - b.value_at(u, c)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    Ok(sup + (a.time() - b.time()).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partitions::PartitionSequence;

    fn seq() -> PartitionSequence {
        PartitionSequence::dyadic(1.0, 3).unwrap()
    }

    fn step() -> SampledPath {
        SampledPath::from_fn(&seq(), |_| vec![0.0])
            .unwrap()
            .with_jump(0.5, &[1.0])
            .unwrap()
    }

    #[test]
    fn stop_constant_path_is_identity() {
        let p = SampledPath::from_fn(&seq(), |_| vec![3.0]).unwrap();
        for &t in p.grid() {
            let s = p.stop(t, Side::Right).unwrap();
            for &u in p.grid() {
                assert_eq!(s.value_at(u, 0), 3.0);
            }
        }
    }

    #[test]
    fn stop_at_jump_left_and_right() {
        let p = step();
        let left = p.stop(0.5, Side::Left).unwrap();
        let right = p.stop(0.5, Side::Right).unwrap();
        for &u in p.grid() {
            assert_eq!(left.value_at(u, 0), 0.0);
            assert_eq!(right.value_at(u, 0), if u >= 0.5 { 1.0 } else { 0.0 });
        }
        assert!(p.stop(1.5, Side::Right).is_err());
        assert!(p.stop(-0.1, Side::Left).is_err());
    }

    #[test]
    fn vertical_perturbation_shifts_future_only() {
        let p = SampledPath::from_fn(&seq(), |t| vec![t]).unwrap();
        let s = p.stop(0.5, Side::Right).unwrap();
        let v = s.perturb(vec![2.0]).unwrap();
        assert_eq!(v.value_at(0.25, 0), 0.25);
        assert_eq!(v.value_at(0.5, 0), 2.5);
        assert_eq!(v.value_at(0.9, 0), 2.5);
        let zero = s.perturb(vec![0.0]).unwrap();
        for &u in p.grid() {
            assert_eq!(zero.value_at(u, 0), s.value_at(u, 0));
        }
        assert!(s.perturb(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn running_integral_of_linear_path() {
        let p = SampledPath::from_fn(&seq(), |t| vec![t]).unwrap();
        // right endpoints of eight cells of width 1/8: sum (i/8) / 8, i = 1..8
        let s = p.stop(1.0, Side::Right).unwrap();
        let expected: f64 = (1..=8).map(|i| i as f64 / 64.0).sum();
        assert_eq!(s.running_integral(0), expected);
        // extension freezes the path
        let s = p.stop(0.5, Side::Right).unwrap();
        let base = s.running_integral(0);
        let e = s.extended_to(0.7).unwrap();
        assert!((e.running_integral(0) - base - 0.5 * 0.2).abs() < 1e-15);
    }

    #[test]
    fn running_integral_uses_left_limit_at_jump() {
        let p = step();
        let right = p.stop(0.5, Side::Right).unwrap();
        let left = p.stop(0.5, Side::Left).unwrap();
        assert_eq!(right.running_integral(0), 0.0);
        assert_eq!(left.running_integral(0), 0.0);
        assert_eq!(p.stop(1.0, Side::Right).unwrap().running_integral(0), 0.5);
    }

    #[test]
    fn d_infinity_examples() {
        let p = SampledPath::from_fn(&seq(), |t| vec![t]).unwrap();
        let a = p.stop(0.5, Side::Right).unwrap();
        assert_eq!(d_infinity(&a, &a).unwrap(), 0.0);
        let b = p.stop(0.75, Side::Right).unwrap();
        assert!((d_infinity(&a, &b).unwrap() - 0.5).abs() < 1e-15);

        let zero = SampledPath::from_fn(&seq(), |_| vec![0.0]).unwrap();
        let c = SampledPath::from_fn(&seq(), |_| vec![-2.5]).unwrap();
        let z0 = zero.stop(0.0, Side::Right).unwrap();
        let c0 = c.stop(0.0, Side::Right).unwrap();
        assert_eq!(d_infinity(&z0, &c0).unwrap(), 2.5);

        let two = SampledPath::from_fn(&seq(), |t| vec![t, t]).unwrap();
        assert!(d_infinity(&a, &two.stop(0.5, Side::Right).unwrap()).is_err());
    }
}
