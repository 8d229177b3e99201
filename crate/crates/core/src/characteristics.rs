//! Travel-time maps, characteristic flows and entry/exit times.
//!
//! For a speed `lambda` of fixed sign, the travel time `phi(x) = int_0^x 1/|lambda|`
//! straightens the characteristics: along `s -> chi(s; t, x)` the value
//! `phi(chi)` moves with unit slope. Flows are therefore table lookups and
//! their inverses, never ODE solves. Outside `[0, 1]` the speeds are extended
//! by their end values, which makes every flow total.

use crate::coeffs::{CoefficientSpec, CumulativeTable};
use crate::error::{Error, Result};

/// Default resolution of travel-time tables.
pub const DEFAULT_TABLE_CELLS: usize = 1 << 16;

/// Which of the two characteristic families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    /// `lambda_1 < 0`, controlled at `x = 1`.
    One,
    /// `lambda_2 > 0`, entering at `x = 0`.
    Two,
}

impl Component {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            1 => Ok(Component::One),
            2 => Ok(Component::Two),
            _ => Err(Error::domain(format!("component index {i} not in {{1, 2}}"))),
        }
    }
}

/// Monotone travel-time map of one speed, extended linearly outside `[0, 1]`.
#[derive(Debug, Clone)]
pub struct TravelTime {
    table: CumulativeTable,
    /// `|lambda(0)|` and `|lambda(1)|`, slopes of the extension.
    end_speeds: (f64, f64),
}

impl TravelTime {
    /// `speed` must be strictly positive on `[0, 1]` (pass `|lambda|`).
    pub fn new(speed: impl Fn(f64) -> f64, cells: usize) -> Self {
        let end_speeds = (speed(0.0), speed(1.0));
        TravelTime {
            table: CumulativeTable::new(|x| 1.0 / speed(x), cells),
            end_speeds,
        }
    }

    pub fn resolution(&self) -> usize {
        self.table.resolution()
    }

    /// `phi(1)`.
    pub fn total(&self) -> f64 {
        self.table.total()
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            x / self.end_speeds.0
        } else if x >= 1.0 {
            self.table.total() + (x - 1.0) / self.end_speeds.1
        } else {
            self.table.at(x)
        }
    }

    /// Exact inverse of [`eval`](Self::eval): bisection over the table cells,
    /// then the linear piece inside the bracketing cell.
    #[inline]
    pub fn inverse(&self, v: f64) -> f64 {
        let total = self.table.total();
        if v <= 0.0 {
            return v * self.end_speeds.0;
        }
        if v >= total {
            return 1.0 + (v - total) * self.end_speeds.1;
        }
        let cum = self.table.values();
        let n = cum.len() - 1;
        let hi = cum.partition_point(|&c| c <= v).clamp(1, n);
        let lo = hi - 1;
        let span = cum[hi] - cum[lo];
        let w = if span > 0.0 { (v - cum[lo]) / span } else { 0.0 };
        (lo as f64 + w) / n as f64
    }
}

/// The speed pair `lambda_1 < 0 < lambda_2` with precomputed travel times.
#[derive(Debug, Clone)]
pub struct SpeedPair {
    lambda1: CoefficientSpec,
    lambda2: CoefficientSpec,
    eps_bound: f64,
    phi1: TravelTime,
    phi2: TravelTime,
}

impl SpeedPair {
    pub fn new(lambda1: CoefficientSpec, lambda2: CoefficientSpec) -> Result<Self> {
        Self::with_resolution(lambda1, lambda2, DEFAULT_TABLE_CELLS)
    }

    pub fn constant(l1: f64, l2: f64) -> Result<Self> {
        Self::new(CoefficientSpec::constant(l1), CoefficientSpec::constant(l2))
    }

    pub fn with_resolution(lambda1: CoefficientSpec, lambda2: CoefficientSpec, cells: usize) -> Result<Self> {
        lambda1.validate()?;
        lambda2.validate()?;
        let cells = cells.max(16);
        // sign check on table nodes and cell midpoints (the Simpson samples)
        let mut eps_bound = f64::INFINITY;
        for k in 0..=2 * cells {
            let x = k as f64 / (2 * cells) as f64;
            let (l1, l2) = (lambda1.at(x), lambda2.at(x));
            if !(l1 < 0.0) || !l1.is_finite() {
                return Err(Error::InvalidSpeeds(format!("lambda_1({x}) = {l1} is not negative")));
            }
            if !(l2 > 0.0) || !l2.is_finite() {
                return Err(Error::InvalidSpeeds(format!("lambda_2({x}) = {l2} is not positive")));
            }
            eps_bound = eps_bound.min(-l1).min(l2);
        }
        let phi1 = TravelTime::new(|x| -lambda1.at(x), cells);
        let phi2 = TravelTime::new(|x| lambda2.at(x), cells);
        Ok(SpeedPair {
            lambda1,
            lambda2,
            eps_bound,
            phi1,
            phi2,
        })
    }

    pub fn lambda1(&self) -> &CoefficientSpec {
        &self.lambda1
    }

    pub fn lambda2(&self) -> &CoefficientSpec {
        &self.lambda2
    }

    /// `lambda_i(x)` with the constant extension outside `[0, 1]`.
    #[inline]
    pub fn speed(&self, c: Component, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match c {
            Component::One => self.lambda1.at(x),
            Component::Two => self.lambda2.at(x),
        }
    }

    /// Uniform bound: `lambda_1 <= -eps` and `lambda_2 >= eps`.
    pub fn eps_bound(&self) -> f64 {
        self.eps_bound
    }

    pub fn table_resolution(&self) -> usize {
        self.phi1.resolution()
    }

    pub fn is_constant(&self) -> bool {
        self.lambda1.is_constant() && self.lambda2.is_constant()
    }

    pub fn travel(&self, c: Component) -> &TravelTime {
        match c {
            Component::One => &self.phi1,
            Component::Two => &self.phi2,
        }
    }

    /// `max |lambda|` over the nodes of a grid with `n` cells.
    pub fn max_speed(&self, n: usize) -> f64 {
        (0..=n)
            .map(|j| {
                let x = j as f64 / n as f64;
                (-self.lambda1.at(x)).max(self.lambda2.at(x))
            })
            .fold(0.0, f64::max)
    }

    /// `phi_i(x)` for `x` in `[0, 1]`.
    pub fn phi(&self, c: Component, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("phi argument {x} outside [0, 1]")));
        }
        Ok(self.travel(c).eval(x))
    }

    /// The unique `x` in `[0, 1]` with `phi_i(x) = v`.
    pub fn phi_inv(&self, c: Component, v: f64) -> Result<f64> {
        let t = self.travel(c);
        // rounding slack for arguments computed as sums of travel times
        let slack = 1e-12 * (1.0 + t.total());
        if !(-slack..=t.total() + slack).contains(&v) {
            return Err(Error::domain(format!("phi_inv argument {v} outside [0, {}]", t.total())));
        }
        Ok(t.inverse(v.clamp(0.0, t.total())))
    }

    pub fn t1(&self) -> f64 {
        self.phi1.total()
    }

    pub fn t2(&self) -> f64 {
        self.phi2.total()
    }

    pub fn t_opt(&self) -> f64 {
        self.t1().max(self.t2())
    }

    pub fn t_unif(&self) -> f64 {
        self.t1() + self.t2()
    }

    /// `psi = phi_1 + phi_2` (extended).
    #[inline]
    pub fn psi(&self, x: f64) -> f64 {
        self.phi1.eval(x) + self.phi2.eval(x)
    }

    /// Solves `psi(x) = v` by bisection on `[0, 1]`; `v` is clamped to the range of `psi`.
    pub fn psi_inv(&self, v: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        if v <= 0.0 {
            return 0.0;
        }
        if v >= self.psi(1.0) {
            return 1.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.psi(mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Position at time `s` of the characteristic of family `c` through `(t, x)`.
    #[inline]
    pub fn flow(&self, c: Component, s: f64, t: f64, x: f64) -> f64 {
        match c {
            Component::One => self.phi1.inverse(self.phi1.eval(x) - (s - t)),
            Component::Two => self.phi2.inverse(self.phi2.eval(x) + (s - t)),
        }
    }

    /// Entry and exit times in `[0, 1]` of the characteristic through `(t, x)`.
    pub fn entry_exit(&self, c: Component, t: f64, x: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("entry/exit position {x} outside [0, 1]")));
        }
        Ok(self.entry_exit_unchecked(c, t, x))
    }

    #[inline]
    pub(crate) fn entry_exit_unchecked(&self, c: Component, t: f64, x: f64) -> (f64, f64) {
        match c {
            Component::One => {
                let p = self.phi1.eval(x);
                (t + p - self.phi1.total(), t + p)
            }
            Component::Two => {
                let p = self.phi2.eval(x);
                (t - p, t + self.phi2.total() - p)
            }
        }
    }

    #[inline]
    pub fn s_in(&self, c: Component, t: f64, x: f64) -> f64 {
        self.entry_exit_unchecked(c, t, x).0
    }
}
