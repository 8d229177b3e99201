//! Coefficient functions on `[0, 1]`, composite quadrature and the
//! vanishing-prefix functional.
//!
//! The vanishing prefix of `f` on `(0, eps)` is the length of the largest
//! interval `(0, l)` on which `f` vanishes. Numerically it is read off grid
//! nodes against an absolute tolerance, so every estimate carries the
//! tolerance it was computed with and whether tolerance hid nonzero values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance (times `max |f|`) used for prefixes of model coefficients.
pub const DEFAULT_PREFIX_RTOL: f64 = 1e-12;

/// A scalar function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CoefficientSpec {
    Constant {
        value: f64,
    },
    /// `sum_k coeffs[k] * x^k`.
    Polynomial {
        coeffs: Vec<f64>,
    },
    /// `lo` for `x <= ell`, `hi` for `x > ell`.
    Step {
        ell: f64,
        lo: f64,
        hi: f64,
    },
    /// `exp(-1 / (x - shift))` for `x > shift`, zero otherwise.
    #[serde(rename = "expbump")]
    ExpBump {
        #[serde(default)]
        shift: f64,
    },
    /// Piecewise-linear interpolation of `(xs, ys)`; `xs` strictly increasing and covering `[0, 1]`.
    Sampled {
        xs: Vec<f64>,
        ys: Vec<f64>,
    },
}

impl CoefficientSpec {
    pub fn constant(value: f64) -> Self {
        CoefficientSpec::Constant { value }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        CoefficientSpec::Polynomial { coeffs }
    }

    pub fn step(ell: f64, lo: f64, hi: f64) -> Self {
        CoefficientSpec::Step { ell, lo, hi }
    }

    pub fn expbump() -> Self {
        CoefficientSpec::ExpBump { shift: 0.0 }
    }

    pub fn sampled(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let spec = CoefficientSpec::Sampled { xs, ys };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidCoefficient(format!("{what} is not finite")))
            }
        };
        match self {
            CoefficientSpec::Constant { value } => finite(*value, "constant value"),
            CoefficientSpec::Polynomial { coeffs } => coeffs.iter().try_for_each(|c| finite(*c, "polynomial coefficient")),
            CoefficientSpec::Step { ell, lo, hi } => {
                finite(*ell, "step location")?;
                finite(*lo, "step low value")?;
                finite(*hi, "step high value")
            }
            CoefficientSpec::ExpBump { shift } => finite(*shift, "bump shift"),
            CoefficientSpec::Sampled { xs, ys } => {
                if xs.len() != ys.len() || xs.len() < 2 {
                    return Err(Error::InvalidCoefficient(
                        "sampled family needs matching xs/ys with at least two points".into(),
                    ));
                }
                if xs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidCoefficient(
                        "sampled abscissae must be strictly increasing".into(),
                    ));
                }
                if xs[0] > 0.0 || xs[xs.len() - 1] < 1.0 {
                    return Err(Error::InvalidCoefficient("sampled abscissae must cover [0, 1]".into()));
                }
                ys.iter().try_for_each(|y| finite(*y, "sample value"))
            }
        }
    }

    /// Value at `x`, which must lie in `[0, 1]`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("x = {x} outside [0, 1]")));
        }
        Ok(self.at(x))
    }

    /// Unchecked evaluation. Analytic families are evaluated by their formula
    /// everywhere; the sampled family is held constant outside its abscissae.
    #[inline]
    pub fn at(&self, x: f64) -> f64 {
        match self {
            CoefficientSpec::Constant { value } => *value,
            CoefficientSpec::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
            CoefficientSpec::Step { ell, lo, hi } => {
                if x <= *ell {
                    *lo
                } else {
                    *hi
                }
            }
            CoefficientSpec::ExpBump { shift } => {
                if x > *shift {
                    (-1.0 / (x - shift)).exp()
                } else {
                    0.0
                }
            }
            CoefficientSpec::Sampled { xs, ys } => interp_sorted(xs, ys, x),
        }
    }

    /// Known discontinuity locations inside `(0, 1)`.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            CoefficientSpec::Step { ell, lo, hi } if lo != hi && *ell > 0.0 && *ell < 1.0 => {
                vec![*ell]
            }
            _ => Vec::new(),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            CoefficientSpec::Constant { .. } => true,
            CoefficientSpec::Polynomial { coeffs } => coeffs.iter().skip(1).all(|c| *c == 0.0),
            CoefficientSpec::Step { ell, lo, hi } => lo == hi || *ell >= 1.0 || *ell < 0.0,
            _ => false,
        }
    }

    /// `max |f|` over the nodes of `grid`.
    pub fn max_abs(&self, grid: &Grid) -> f64 {
        (0..=grid.n()).map(|j| self.at(grid.node(j)).abs()).fold(0.0, f64::max)
    }
}

/// Linear interpolation on strictly increasing abscissae, constant outside.
pub(crate) fn interp_sorted(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let hi = xs.partition_point(|&v| v <= x).min(last);
    let lo = hi - 1;
    let dx = xs[hi] - xs[lo];
    if dx <= 0.0 {
        return ys[lo];
    }
    let w = (x - xs[lo]) / dx;
    ys[lo] + w * (ys[hi] - ys[lo])
}

/// Uniform grid of `n` cells on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("grid needs at least one cell"));
        }
        Ok(Grid { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// `j / n`, computed by division so that decimal breakpoints such as
    /// `0.1 = 40 / 400` land exactly on nodes.
    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        j as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|j| self.node(j)).collect()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..=self.n).map(|j| f(self.node(j))).collect()
    }

    /// Trapezoid weights for `int_0^1`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.h();
        let mut w = vec![h; self.n + 1];
        w[0] = 0.5 * h;
        w[self.n] = 0.5 * h;
        w
    }
}

/// A function sampled on the nodes of a [`Grid`], linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFn {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() + 1 {
            return Err(Error::GridMismatch {
                expected: grid.n(),
                got: values.len().saturating_sub(1),
            });
        }
        Ok(GridFn { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        GridFn {
            values: grid.sample(f),
            grid,
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        GridFn {
            values: vec![0.0; grid.n() + 1],
            grid,
        }
    }

    /// Linear interpolation, held constant outside `[0, 1]`.
    #[inline]
    pub fn at(&self, x: f64) -> f64 {
        let n = self.grid.n();
        if x <= 0.0 {
            return self.values[0];
        }
        if x >= 1.0 {
            return self.values[n];
        }
        let p = x * n as f64;
        let j = (p.floor() as usize).min(n - 1);
        let w = p - j as f64;
        let (a, b) = (self.values[j], self.values[j + 1]);
        // exact zeros stay exact zeros
        if w == 0.0 {
            a
        } else {
            a + w * (b - a)
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.trapezoid_weights();
        self.values.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
    }
}

/// Composite trapezoid approximation of `int_a^b f` with `n` subintervals.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(Error::domain(format!("bad integration interval [{a}, {b}]")));
    }
    if n == 0 {
        return Err(Error::domain("need at least one subinterval"));
    }
    if a == b {
        return Ok(0.0);
    }
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|k| f(a + k as f64 * h)).sum();
    Ok(h * (0.5 * (f(a) + f(b)) + inner))
}

/// Cumulative integral `F(x) = int_0^x f` tabulated on a fine uniform grid
/// (Simpson per cell), linearly interpolated in between.
#[derive(Debug, Clone)]
pub struct CumulativeTable {
    n: usize,
    cum: Vec<f64>,
}

impl CumulativeTable {
    pub fn new(f: impl Fn(f64) -> f64, n: usize) -> Self {
        let n = n.max(1);
        let h = 1.0 / n as f64;
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        let mut left = f(0.0);
        for j in 0..n {
            let x0 = j as f64 / n as f64;
            let x1 = (j + 1) as f64 / n as f64;
            let right = f(x1);
            acc += h / 6.0 * (left + 4.0 * f(0.5 * (x0 + x1)) + right);
            cum.push(acc);
            left = right;
        }
        CumulativeTable { n, cum }
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> f64 {
        self.cum[self.n]
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.cum
    }

    /// `F(x)` for `x` in `[0, 1]` (clamped).
    #[inline]
    pub fn at(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return self.cum[self.n];
        }
        let p = x * self.n as f64;
        let j = (p.floor() as usize).min(self.n - 1);
        let w = p - j as f64;
        self.cum[j] + w * (self.cum[j + 1] - self.cum[j])
    }
}

/// Largest `l` in `[0, eps]` such that `|f| <= tol` at every grid node in `(0, l)`.
///
/// The result is the last vanishing node before the first node where
/// `|f| > tol`, so it under-estimates the true prefix by less than one cell.
pub fn vanishing_prefix(f: impl Fn(f64) -> f64, eps: f64, tol: f64, grid: &Grid) -> Result<f64> {
    check_prefix_args(eps, tol)?;
    Ok(scan_prefix(|j| f(grid.node(j)), grid, eps, tol).0)
}

/// [`vanishing_prefix`] on values already sampled at the nodes of `grid`.
pub fn vanishing_prefix_samples(values: &[f64], grid: &Grid, eps: f64, tol: f64) -> Result<f64> {
    check_prefix_args(eps, tol)?;
    if values.len() != grid.n() + 1 {
        return Err(Error::GridMismatch {
            expected: grid.n(),
            got: values.len().saturating_sub(1),
        });
    }
    Ok(scan_prefix(|j| values[j], grid, eps, tol).0)
}

fn check_prefix_args(eps: f64, tol: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::domain(format!("prefix window eps = {eps} not in (0, 1]")));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!("prefix tolerance {tol} must be positive")));
    }
    Ok(())
}

/// Returns `(prefix, first offending node or eps, tolerance_limited)`.
fn scan_prefix(value: impl Fn(usize) -> f64, grid: &Grid, eps: f64, tol: f64) -> (f64, f64, bool) {
    let mut limited = false;
    for j in 1..=grid.n() {
        let x = grid.node(j);
        if x >= eps {
            return (eps, eps, limited);
        }
        let v = value(j).abs();
        if v > tol {
            return (grid.node(j - 1), x, limited);
        }
        if v != 0.0 {
            limited = true;
        }
    }
    (eps, eps, limited)
}

/// A vanishing-prefix estimate together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrefixEstimate {
    /// The prefix estimate.
    pub value: f64,
    /// The true prefix (at this tolerance) lies in `[value, upper]`.
    pub upper: f64,
    /// Absolute tolerance used.
    pub tol: f64,
    /// Nonzero values below `tol` were treated as zero inside the prefix.
    pub tolerance_limited: bool,
    /// Distance from the returned value to the last vanishing node.
    pub snap: f64,
}

impl PrefixEstimate {
    /// Prefix of a coefficient family on `(0, eps)`, with tolerance
    /// `rtol * max |c|`. Known breakpoints inside the bracketing cell are
    /// used as the exact answer.
    pub fn of_spec(spec: &CoefficientSpec, eps: f64, rtol: f64, grid: &Grid) -> Result<Self> {
        let scale = spec.max_abs(grid);
        let tol = if scale > 0.0 { rtol * scale } else { f64::MIN_POSITIVE };
        check_prefix_args(eps, tol)?;
        let (node_value, upper, limited) = scan_prefix(|j| spec.at(grid.node(j)), grid, eps, tol);
        let mut value = node_value;
        if node_value < upper {
            if let Some(b) = spec
                .breakpoints()
                .into_iter()
                .filter(|b| *b >= node_value && *b < upper && *b < eps)
                .reduce(f64::min)
            {
                value = b;
            }
        }
        Ok(PrefixEstimate {
            value,
            upper,
            tol,
            tolerance_limited: limited,
            snap: value - node_value,
        })
    }

    /// Prefix of sampled values on `(0, eps)` with an absolute tolerance.
    pub fn of_samples(values: &[f64], grid: &Grid, eps: f64, tol: f64) -> Result<Self> {
        check_prefix_args(eps, tol)?;
        if values.len() != grid.n() + 1 {
            return Err(Error::GridMismatch {
                expected: grid.n(),
                got: values.len().saturating_sub(1),
            });
        }
        let (value, upper, limited) = scan_prefix(|j| values[j], grid, eps, tol);
        Ok(PrefixEstimate {
            value,
            upper,
            tol,
            tolerance_limited: limited,
            snap: 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn eval_families() {
        assert_eq!(CoefficientSpec::constant(3.0).eval(0.7).unwrap(), 3.0);
        let step = CoefficientSpec::step(0.3, 0.0, 1.0);
        assert_eq!(step.eval(0.2).unwrap(), 0.0);
        assert_eq!(step.eval(0.4).unwrap(), 1.0);
        assert_eq!(step.eval(0.3).unwrap(), 0.0);
        assert_abs_diff_eq!(CoefficientSpec::expbump().eval(1.0).unwrap(), 0.367879441171, epsilon = 1e-12);
        assert_eq!(CoefficientSpec::expbump().eval(0.0).unwrap(), 0.0);
        let p = CoefficientSpec::polynomial(vec![1.0, -2.0, 3.0]);
        assert_abs_diff_eq!(p.eval(0.5).unwrap(), 1.0 - 1.0 + 0.75);
        let s = CoefficientSpec::sampled(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.eval(0.25).unwrap(), 0.5);
    }

    #[test]
    fn eval_outside_domain_is_error() {
        let c = CoefficientSpec::constant(1.0);
        assert!(matches!(c.eval(-0.1), Err(Error::Domain(_))));
        assert!(matches!(c.eval(1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn sampled_validation() {
        assert!(CoefficientSpec::sampled(vec![0.0, 0.0, 1.0], vec![1.0; 3]).is_err());
        assert!(CoefficientSpec::sampled(vec![0.1, 1.0], vec![1.0; 2]).is_err());
        assert!(CoefficientSpec::sampled(vec![0.0, 0.9], vec![1.0; 2]).is_err());
        assert!(CoefficientSpec::sampled(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn json_tagged_records() {
        let s: CoefficientSpec = serde_json::from_str(r#"{"family":"step","ell":0.25,"lo":0.0,"hi":1.0}"#).unwrap();
        assert_eq!(s, CoefficientSpec::step(0.25, 0.0, 1.0));
        let b: CoefficientSpec = serde_json::from_str(r#"{"family":"expbump"}"#).unwrap();
        assert_eq!(b, CoefficientSpec::expbump());
        let c: CoefficientSpec = serde_json::from_str(r#"{"family":"constant","value":2}"#).unwrap();
        assert_eq!(c, CoefficientSpec::constant(2.0));
    }

    #[test]
    fn trapezoid_examples() {
        assert_abs_diff_eq!(integrate(|_| 1.0, 0.0, 1.0, 7).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(integrate(|x| x, 0.0, 1.0, 3).unwrap(), 0.5, epsilon = 1e-15);
        let ln2 = integrate(|x| 1.0 / (1.0 + x), 0.0, 1.0, 200).unwrap();
        assert!((ln2 - std::f64::consts::LN_2).abs() < 1e-4);
        assert!(integrate(|x| x, 0.6, 0.2, 10).is_err());
    }

    #[test]
    fn trapezoid_additive_on_nested_grids() {
        let f = |x: f64| (3.0 * x).sin() + x * x;
        let whole = integrate(f, 0.0, 1.0, 100).unwrap();
        let parts = integrate(f, 0.0, 0.3, 30).unwrap() + integrate(f, 0.3, 1.0, 70).unwrap();
        assert_abs_diff_eq!(whole, parts, epsilon = 1e-13);
    }

    #[test]
    fn cumulative_table_is_exact_for_quadratics() {
        let t = CumulativeTable::new(|x| x * x, 64);
        assert_abs_diff_eq!(t.total(), 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(t.at(0.5), 1.0 / 24.0, epsilon = 1e-14);
    }

    #[test]
    fn prefix_examples() {
        let g = Grid::new(1000).unwrap();
        let step = CoefficientSpec::step(0.3, 0.0, 1.0);
        let p = vanishing_prefix(|x| step.at(x), 0.5, 1e-12, &g).unwrap();
        assert!((p - 0.3).abs() <= g.h());
        assert_eq!(vanishing_prefix(|_| 0.0, 0.5, 1e-12, &g).unwrap(), 0.5);
        assert_eq!(vanishing_prefix(|_| 1.0, 0.5, 1e-12, &g).unwrap(), 0.0);

        // tolerance artifact: exp(-1/x) <= tol for x <= 1/ln(1/tol)
        let bump = CoefficientSpec::expbump();
        let tol = 1e-12;
        let p = vanishing_prefix(|x| bump.at(x), 0.5, tol, &g).unwrap();
        let cutoff = 1.0 / (1.0 / tol).ln();
        assert!(p <= cutoff && p > cutoff - g.h(), "{p} vs {cutoff}");
    }

    #[test]
    fn prefix_estimate_snaps_to_breakpoint() {
        let g = Grid::new(64).unwrap();
        let step = CoefficientSpec::step(0.2, 0.0, 1.0);
        let est = PrefixEstimate::of_spec(&step, 0.5, DEFAULT_PREFIX_RTOL, &g).unwrap();
        assert_eq!(est.value, 0.2);
        assert!(est.snap > 0.0 && est.snap <= g.h());
        assert!(!est.tolerance_limited);

        let bump = PrefixEstimate::of_spec(&CoefficientSpec::expbump(), 0.5, 1e-12, &g).unwrap();
        assert!(bump.tolerance_limited);
    }

    #[test]
    fn prefix_argument_errors() {
        let g = Grid::new(10).unwrap();
        assert!(vanishing_prefix(|_| 0.0, 0.0, 1e-3, &g).is_err());
        assert!(vanishing_prefix(|_| 0.0, 1.5, 1e-3, &g).is_err());
        assert!(vanishing_prefix(|_| 0.0, 0.5, 0.0, &g).is_err());
    }

    proptest! {
        #[test]
        fn prefix_monotone_in_tol(ell in 0.0f64..1.0, t1 in 1e-9f64..1.0, t2 in 1e-9f64..1.0, slope in 0.1f64..10.0) {
            let g = Grid::new(200).unwrap();
            let f = |x: f64| if x <= ell { 0.0 } else { slope * (x - ell) };
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = vanishing_prefix(f, 1.0, lo, &g).unwrap();
            let b = vanishing_prefix(f, 1.0, hi, &g).unwrap();
            prop_assert!(a <= b);
        }

        #[test]
        fn prefix_scale_invariant(ell in 0.0f64..1.0, s in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0], eps in 0.05f64..1.0) {
            let g = Grid::new(300).unwrap();
            let f = |x: f64| if x <= ell { 0.0 } else { 1.0 + x };
            let tol = 1e-9;
            let a = vanishing_prefix(f, eps, tol, &g).unwrap();
            let b = vanishing_prefix(|x| s * f(x), eps, tol * s.abs(), &g).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
