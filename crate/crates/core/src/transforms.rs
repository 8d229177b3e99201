//! The diagonal-removing exponential gauge and the second-kind Volterra
//! transformation `y -> y - int_0^x K(x, xi) y(xi) dxi` with its inverse.

use crate::characteristics::SpeedPair;
use crate::coeffs::{CoefficientSpec, CumulativeTable, Grid, GridFn};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::KernelSet;

/// Lower-triangular storage of a function on `{(x_i, xi_j) : j <= i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TriMatrix {
    /// Zero matrix for a grid with `n` cells (`n + 1` nodes per side).
    pub fn zeros(n: usize) -> Self {
        TriMatrix {
            n,
            data: vec![0.0; (n + 1) * (n + 2) / 2],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..=n {
            for j in 0..=i {
                m.data[Self::idx(i, j)] = f(i, j);
            }
        }
        m
    }

    #[inline]
    fn idx(i: usize, j: usize) -> usize {
        i * (i + 1) / 2 + j
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i && i <= self.n);
        self.data[Self::idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i <= self.n);
        self.data[Self::idx(i, j)] = v;
    }

    /// Row `i` (entries `j = 0..=i`).
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[Self::idx(i, 0)..=Self::idx(i, i)]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A pair of fields sampled on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
}

impl FieldPair {
    pub fn zeros(grid: Grid) -> Self {
        FieldPair {
            y1: vec![0.0; grid.n() + 1],
            y2: vec![0.0; grid.n() + 1],
        }
    }

    pub fn from_fns(grid: Grid, f1: impl Fn(f64) -> f64, f2: impl Fn(f64) -> f64) -> Self {
        FieldPair {
            y1: grid.sample(f1),
            y2: grid.sample(f2),
        }
    }

    /// Number of cells of the underlying grid.
    pub fn cells(&self) -> usize {
        self.y1.len().saturating_sub(1)
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.y1.len() != n + 1 || self.y2.len() != n + 1 {
            return Err(Error::GridMismatch {
                expected: n,
                got: self.cells(),
            });
        }
        Ok(())
    }

    /// `(int_0^1 y1^2 + y2^2)^(1/2)` by the trapezoid rule.
    pub fn l2_norm(&self) -> f64 {
        let n = self.cells();
        let h = 1.0 / n as f64;
        let sq = |k: usize| self.y1[k] * self.y1[k] + self.y2[k] * self.y2[k];
        let inner: f64 = (1..n).map(sq).sum();
        (h * (inner + 0.5 * (sq(0) + sq(n)))).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.y1.iter().chain(&self.y2).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.y1.iter().chain(&self.y2).all(|v| v.is_finite())
    }
}

/// The exponential gauge `y~_i = e_i y_i` that removes the diagonal couplings.
#[derive(Debug, Clone)]
pub struct DiagGauge {
    b: CoefficientSpec,
    c: CoefficientSpec,
    /// `int_0^x a / lambda_1`
    log_e1: CumulativeTable,
    /// `int_0^x d / lambda_2`
    log_e2: CumulativeTable,
}

impl DiagGauge {
    #[inline]
    pub fn e1(&self, x: f64) -> f64 {
        (-self.log_e1.at(x)).exp()
    }

    #[inline]
    pub fn e2(&self, x: f64) -> f64 {
        (-self.log_e2.at(x)).exp()
    }

    /// `b~ = b e_1 / e_2`.
    #[inline]
    pub fn b_tilde(&self, x: f64) -> f64 {
        let b = self.b.at(x);
        if b == 0.0 {
            return 0.0;
        }
        b * (self.log_e2.at(x) - self.log_e1.at(x)).exp()
    }

    /// `c~ = c e_2 / e_1`; vanishes exactly where `c` does.
    #[inline]
    pub fn c_tilde(&self, x: f64) -> f64 {
        let c = self.c.at(x);
        if c == 0.0 {
            return 0.0;
        }
        c * (self.log_e1.at(x) - self.log_e2.at(x)).exp()
    }

    pub fn b(&self) -> &CoefficientSpec {
        &self.b
    }

    pub fn c(&self) -> &CoefficientSpec {
        &self.c
    }

    /// `(e_1, e_2)` on the nodes of `grid`.
    pub fn sample_weights(&self, grid: Grid) -> (GridFn, GridFn) {
        (GridFn::from_fn(grid, |x| self.e1(x)), GridFn::from_fn(grid, |x| self.e2(x)))
    }

    /// `(b~, c~)` on the nodes of `grid`.
    pub fn sample_couplings(&self, grid: Grid) -> (GridFn, GridFn) {
        (
            GridFn::from_fn(grid, |x| self.b_tilde(x)),
            GridFn::from_fn(grid, |x| self.c_tilde(x)),
        )
    }

    /// `(e_1 y_1, e_2 y_2)`.
    pub fn forward(&self, y: &FieldPair) -> FieldPair {
        let n = y.cells();
        let grid = Grid::new(n.max(1)).expect("non-empty grid");
        FieldPair {
            y1: y.y1.iter().enumerate().map(|(k, v)| v * self.e1(grid.node(k))).collect(),
            y2: y.y2.iter().enumerate().map(|(k, v)| v * self.e2(grid.node(k))).collect(),
        }
    }

    pub fn backward(&self, y: &FieldPair) -> FieldPair {
        let n = y.cells();
        let grid = Grid::new(n.max(1)).expect("non-empty grid");
        FieldPair {
            y1: y.y1.iter().enumerate().map(|(k, v)| v / self.e1(grid.node(k))).collect(),
            y2: y.y2.iter().enumerate().map(|(k, v)| v / self.e2(grid.node(k))).collect(),
        }
    }
}

/// Builds the gauge `e_1 = exp(-int a/lambda_1)`, `e_2 = exp(-int d/lambda_2)`.
pub fn diag_removal(
    a: &CoefficientSpec,
    b: &CoefficientSpec,
    c: &CoefficientSpec,
    d: &CoefficientSpec,
    speeds: &SpeedPair,
) -> Result<DiagGauge> {
    for spec in [a, b, c, d] {
        spec.validate()?;
    }
    let cells = speeds.table_resolution();
    let l1 = speeds.lambda1().clone();
    let l2 = speeds.lambda2().clone();
    Ok(DiagGauge {
        b: b.clone(),
        c: c.clone(),
        log_e1: CumulativeTable::new(|x| a.at(x) / l1.at(x), cells),
        log_e2: CumulativeTable::new(|x| d.at(x) / l2.at(x), cells),
    })
}

/// Trapezoid sum `h * sum_j w_j (k1(i, j) y1_j + k2(i, j) y2_j)` over `j = 0..=upto`.
#[inline]
fn row_integral(k1: &[f64], k2: &[f64], y: &FieldPair, upto: usize, h: f64) -> f64 {
    if upto == 0 {
        return 0.0;
    }
    let term = |j: usize| k1[j] * y.y1[j] + k2[j] * y.y2[j];
    let inner: f64 = (1..upto).map(term).sum();
    h * (inner + 0.5 * (term(0) + term(upto)))
}

/// `y^ = y - int_0^x K y`, trapezoid rule on the kernel grid.
pub fn volterra_apply(k: &KernelSet, y: &FieldPair, exec: Exec) -> Result<FieldPair> {
    let n = k.grid().n();
    y.check(n)?;
    let h = k.grid().h();
    let rows = exec.map(n + 1, |i| {
        let z1 = y.y1[i] - row_integral(k.k11.row(i), k.k12.row(i), y, i, h);
        let z2 = y.y2[i] - row_integral(k.k21.row(i), k.k22.row(i), y, i, h);
        (z1, z2)
    });
    let (y1, y2) = rows.into_iter().unzip();
    Ok(FieldPair { y1, y2 })
}

/// Inverse of [`volterra_apply`] at the discrete level: forward substitution
/// in `x`, with a 2x2 solve for the diagonal trapezoid weights of each row.
pub fn volterra_invert(k: &KernelSet, yhat: &FieldPair) -> Result<FieldPair> {
    let n = k.grid().n();
    yhat.check(n)?;
    let h = k.grid().h();
    let mut y = FieldPair::zeros(k.grid());
    y.y1[0] = yhat.y1[0];
    y.y2[0] = yhat.y2[0];
    for i in 1..=n {
        let (r11, r12, r21, r22) = (k.k11.row(i), k.k12.row(i), k.k21.row(i), k.k22.row(i));
        let known = |a: &[f64], b: &[f64]| {
            let term = |j: usize| a[j] * y.y1[j] + b[j] * y.y2[j];
            h * (0.5 * term(0) + (1..i).map(term).sum::<f64>())
        };
        let rhs1 = yhat.y1[i] + known(r11, r12);
        let rhs2 = yhat.y2[i] + known(r21, r22);
        let w = 0.5 * h;
        let (m11, m12) = (1.0 - w * r11[i], -w * r12[i]);
        let (m21, m22) = (-w * r21[i], 1.0 - w * r22[i]);
        let det = m11 * m22 - m12 * m21;
        if det.abs() < 1e-300 {
            return Err(Error::domain(format!("singular Volterra row {i}")));
        }
        y.y1[i] = (rhs1 * m22 - m12 * rhs2) / det;
        y.y2[i] = (m11 * rhs2 - m21 * rhs1) / det;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{PrefixEstimate, DEFAULT_PREFIX_RTOL};
    use approx::assert_abs_diff_eq;

    fn unit_speeds() -> SpeedPair {
        SpeedPair::with_resolution(CoefficientSpec::constant(-1.0), CoefficientSpec::constant(1.0), 4096).unwrap()
    }

    #[test]
    fn trivial_gauge() {
        let s = unit_speeds();
        let z = CoefficientSpec::zero();
        let b = CoefficientSpec::polynomial(vec![0.3, 1.0]);
        let c = CoefficientSpec::step(0.4, 0.0, 2.0);
        let g = diag_removal(&z, &b, &c, &z, &s).unwrap();
        for x in [0.0, 0.2, 0.5, 0.9, 1.0] {
            assert_eq!(g.e1(x), 1.0);
            assert_eq!(g.e2(x), 1.0);
            assert_abs_diff_eq!(g.b_tilde(x), b.at(x), epsilon = 1e-15);
            assert_abs_diff_eq!(g.c_tilde(x), c.at(x), epsilon = 1e-15);
        }
    }

    #[test]
    fn exponential_weight() {
        let s = unit_speeds();
        let one = CoefficientSpec::constant(1.0);
        let z = CoefficientSpec::zero();
        let g = diag_removal(&one, &z, &z, &z, &s).unwrap();
        for x in [0.0, 0.3, 1.0] {
            assert_abs_diff_eq!(g.e1(x), x.exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn gauge_preserves_prefix_and_positivity() {
        let s = unit_speeds();
        let a = CoefficientSpec::polynomial(vec![2.0, -1.0]);
        let d = CoefficientSpec::constant(-3.0);
        let b = CoefficientSpec::constant(1.0);
        let grid = Grid::new(400).unwrap();
        for c in [
            CoefficientSpec::step(0.25, 0.0, 1.0),
            CoefficientSpec::step(0.1, 0.0, -4.0),
            CoefficientSpec::constant(1.0),
            CoefficientSpec::zero(),
        ] {
            let g = diag_removal(&a, &b, &c, &d, &s).unwrap();
            let ct = GridFn::from_fn(grid, |x| g.c_tilde(x));
            let orig = PrefixEstimate::of_spec(&c, 0.5, DEFAULT_PREFIX_RTOL, &grid).unwrap();
            let tol = DEFAULT_PREFIX_RTOL * ct.max_abs().max(f64::MIN_POSITIVE);
            let tilde = PrefixEstimate::of_samples(&ct.values, &grid, 0.5, tol.max(f64::MIN_POSITIVE)).unwrap();
            assert!((orig.value - tilde.value).abs() <= grid.h(), "{c:?}");
            let (e1, e2) = g.sample_weights(grid);
            assert!(e1.values.iter().chain(&e2.values).all(|v| *v > 0.0));
        }
        let g = diag_removal(&a, &b, &CoefficientSpec::step(0.25, 0.0, 1.0), &d, &s).unwrap();
        assert_eq!(
            crate::coeffs::vanishing_prefix(|x| g.c_tilde(x), 0.5, 1e-12, &grid).unwrap(),
            0.25
        );
    }

    fn kernel_from(n: usize, f: [&dyn Fn(f64, f64) -> f64; 4]) -> KernelSet {
        let grid = Grid::new(n).unwrap();
        let m = |g: &dyn Fn(f64, f64) -> f64| TriMatrix::from_fn(n, |i, j| g(grid.node(i), grid.node(j)));
        KernelSet::from_parts(grid, m(f[0]), m(f[1]), m(f[2]), m(f[3]))
    }

    #[test]
    fn zero_kernel_is_identity() {
        let z = |_: f64, _: f64| 0.0;
        let k = kernel_from(20, [&z, &z, &z, &z]);
        let y = FieldPair::from_fns(k.grid(), |x| x.sin(), |x| 1.0 - x * x);
        assert_eq!(volterra_apply(&k, &y, Exec::Sequential).unwrap(), y);
        assert_eq!(volterra_invert(&k, &y).unwrap(), y);
    }

    #[test]
    fn worked_apply_and_invert() {
        let z = |_: f64, _: f64| 0.0;
        let one = |_: f64, _: f64| 1.0;
        let k = kernel_from(50, [&one, &z, &z, &z]);
        let y = FieldPair::from_fns(k.grid(), |_| 1.0, |_| 0.0);
        let yh = volterra_apply(&k, &y, Exec::Parallel).unwrap();
        for (i, x) in k.grid().nodes().into_iter().enumerate() {
            assert_abs_diff_eq!(yh.y1[i], 1.0 - x, epsilon = 1e-13);
            assert_eq!(yh.y2[i], 0.0);
        }
        let back = volterra_invert(&k, &FieldPair::from_fns(k.grid(), |x| 1.0 - x, |_| 0.0)).unwrap();
        for v in &back.y1 {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn roundtrip_and_origin() {
        let f11 = |x: f64, xi: f64| (x - 2.0 * xi).cos();
        let f12 = |x: f64, xi: f64| x * xi - 0.5;
        let f21 = |x: f64, xi: f64| (3.0 * x + xi).sin();
        let f22 = |x: f64, _: f64| 2.0 * x;
        let k = kernel_from(200, [&f11, &f12, &f21, &f22]);
        let y = FieldPair::from_fns(k.grid(), |x| (4.0 * x).sin() + 0.3, |x| x.exp());
        let yh = volterra_apply(&k, &y, Exec::Sequential).unwrap();
        assert_eq!(yh.y1[0], y.y1[0]);
        assert_eq!(yh.y2[0], y.y2[0]);
        let back = volterra_invert(&k, &yh).unwrap();
        let err = back
            .y1
            .iter()
            .zip(&y.y1)
            .chain(back.y2.iter().zip(&y.y2))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-10, "{err}");
        let again = volterra_apply(&k, &volterra_invert(&k, &y).unwrap(), Exec::Parallel).unwrap();
        let err = again.y1.iter().zip(&y.y1).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn grid_mismatch_is_error() {
        let z = |_: f64, _: f64| 0.0;
        let k = kernel_from(10, [&z, &z, &z, &z]);
        let y = FieldPair::zeros(Grid::new(11).unwrap());
        assert!(matches!(
            volterra_apply(&k, &y, Exec::Sequential),
            Err(Error::GridMismatch { .. })
        ));
        assert!(volterra_invert(&k, &y).is_err());
    }
}
