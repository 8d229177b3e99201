//! Backstepping kernels on the triangle `{0 < xi < x < 1}`.
//!
//! Writing `m = lambda(xi) k` for the kernel weighted by its `xi`-speed
//! removes the speed derivatives, and every kernel becomes a transport
//! along its own characteristic family, with the partner kernel as source:
//!
//! | kernel | partner | coupling | invariant along characteristics | data |
//! |--------|---------|----------|----------------------------------|------|
//! | `k21`  | `k22`   | `c~`     | `phi_2(x) + phi_1(xi)`           | diagonal |
//! | `k22`  | `k21`   | `b~`     | `phi_2(x) - phi_2(xi)`           | `xi = 0` (`k0`) |
//! | `k12`  | `k11`   | `b~`     | `phi_1(x) + phi_2(xi)`           | diagonal |
//! | `k11`  | `k12`   | `c~`     | `phi_1(x) - phi_1(xi)`           | `xi = 0` (zero) |
//!
//! with `dm/dxi = -coupling(xi) * partner`. Each family is represented by a
//! set of characteristics (those through diagonal or boundary grid nodes and
//! those through `(1, xi_j)`), sampled where they cross the grid rows
//! `xi = xi_j`. Successive approximation alternates between the two members
//! of a pair; the partner is linearly interpolated along each row. A kernel
//! is never interpolated into itself, so the diagonal data of `k21` reaches
//! `xi = 0` without numerical diffusion and `g` keeps exact zeros.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::characteristics::{SpeedPair, TravelTime};
use crate::coeffs::{CoefficientSpec, Grid, GridFn, PrefixEstimate, DEFAULT_PREFIX_RTOL};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::output::fmt12;
use crate::transforms::{DiagGauge, TriMatrix};

#[derive(Debug, Clone, Copy)]
pub struct KernelOptions {
    /// Stop when the sup-norm update of a sweep is at most this.
    pub tol: f64,
    pub max_iter: usize,
    pub exec: Exec,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            tol: 1e-10,
            max_iter: 200,
            exec: Exec::default(),
        }
    }
}

/// The four kernels on the lower-triangular grid `(x_i, xi_j)`, `j <= i`.
#[derive(Debug, Clone)]
pub struct KernelSet {
    grid: Grid,
    pub k11: TriMatrix,
    pub k12: TriMatrix,
    pub k21: TriMatrix,
    pub k22: TriMatrix,
    /// Boundary data `k22(x, 0)`.
    pub k0: CoefficientSpec,
    /// Sup-norm update of the last sweep.
    pub residual: f64,
    pub iterations: usize,
    /// Sup-norm update of every sweep.
    pub history: Vec<f64>,
}

impl KernelSet {
    pub fn from_parts(grid: Grid, k11: TriMatrix, k12: TriMatrix, k21: TriMatrix, k22: TriMatrix) -> Self {
        KernelSet {
            grid,
            k11,
            k12,
            k21,
            k22,
            k0: CoefficientSpec::zero(),
            residual: 0.0,
            iterations: 0,
            history: Vec::new(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Writes `x, xi, k11, k12, k21, k22` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "x,xi,k11,k12,k21,k22")?;
        let n = self.grid.n();
        for i in 0..=n {
            for j in 0..=i {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    fmt12(self.grid.node(i)),
                    fmt12(self.grid.node(j)),
                    fmt12(self.k11.get(i, j)),
                    fmt12(self.k12.get(i, j)),
                    fmt12(self.k21.get(i, j)),
                    fmt12(self.k22.get(i, j)),
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Gains of the feedback `u(t) = int_0^1 f1 y1 + f2 y2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    pub f1: GridFn,
    pub f2: GridFn,
}

impl FeedbackLaw {
    pub fn zero(grid: Grid) -> Self {
        FeedbackLaw {
            f1: GridFn::zeros(grid),
            f2: GridFn::zeros(grid),
        }
    }

    pub fn grid(&self) -> Grid {
        self.f1.grid
    }
}

/// One sampled characteristic.
#[derive(Debug, Clone)]
struct Label {
    /// `s` of the diagonal point `(s, s)`, or `x0` of the boundary point `(x0, 0)`.
    origin: f64,
    first_row: usize,
    /// `x` at rows `first_row..first_row + pos.len()`.
    pos: Vec<f64>,
}

impl Label {
    fn last_row(&self) -> usize {
        self.first_row + self.pos.len() - 1
    }
}

/// Static geometry of one characteristic family.
struct Geometry {
    labels: Vec<Label>,
    /// For each row: `(label, offset into label)` sorted by position.
    rows: Vec<Vec<(u32, u32)>>,
}

/// Where a sample of one family sits inside the partner's row: lower index
/// into the partner row list and the linear weight of the upper neighbour.
#[derive(Debug, Clone, Copy)]
struct Bracket {
    lo: u32,
    w: f64,
}

#[derive(Clone, Copy)]
struct TravelPair<'a> {
    /// travel time in `x`
    x: &'a TravelTime,
    /// travel time in `xi`
    xi: &'a TravelTime,
}

fn build_diagonal_family(grid: Grid, t: TravelPair<'_>) -> Geometry {
    let n = grid.n();
    let x_total = t.x.total();
    // labels are values of C = Phi_x(x) + Phi_xi(xi)
    let node_c: Vec<f64> = (0..=n).map(|q| t.x.eval(grid.node(q)) + t.xi.eval(grid.node(q))).collect();
    let exit_c: Vec<f64> = (0..=n).map(|m| x_total + t.xi.eval(grid.node(m))).collect();

    // (C, diagonal node, exit row)
    let mut raw: Vec<(f64, Option<usize>, Option<usize>)> = Vec::with_capacity(2 * n + 2);
    raw.extend(node_c.iter().enumerate().map(|(q, &c)| (c, Some(q), None)));
    raw.extend(exit_c.iter().enumerate().map(|(m, &c)| (c, None, Some(m))));
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let merged = merge_labels(raw);

    let psi = |x: f64| t.x.eval(x) + t.xi.eval(x);
    let labels: Vec<Label> = merged
        .into_iter()
        .map(|(c, node, exit)| {
            let last_row = node.unwrap_or_else(|| node_c.partition_point(|&v| v <= c).saturating_sub(1));
            let first_row = exit.unwrap_or_else(|| exit_c.partition_point(|&v| v < c)).min(last_row);
            let origin = match node {
                Some(q) => grid.node(q),
                None => bisect_increasing(psi, c),
            };
            let pos = (first_row..=last_row)
                .map(|r| {
                    let xi = grid.node(r);
                    if node == Some(r) {
                        xi
                    } else if exit == Some(r) {
                        1.0
                    } else {
                        t.x.inverse(c - t.xi.eval(xi)).clamp(xi, 1.0)
                    }
                })
                .collect();
            Label { origin, first_row, pos }
        })
        .collect();
    Geometry {
        rows: row_lists(&labels, n),
        labels,
    }
}

fn build_boundary_family(grid: Grid, phi: &TravelTime) -> Geometry {
    let n = grid.n();
    let total = phi.total();
    // labels are values of D = Phi(x) - Phi(xi)
    let node_d: Vec<f64> = (0..=n).map(|p| phi.eval(grid.node(p))).collect();
    let exit_d: Vec<f64> = (0..=n).map(|m| total - phi.eval(grid.node(m))).collect();

    let mut raw: Vec<(f64, Option<usize>, Option<usize>)> = Vec::with_capacity(2 * n + 2);
    raw.extend(node_d.iter().enumerate().map(|(p, &d)| (d, Some(p), None)));
    raw.extend(exit_d.iter().enumerate().map(|(m, &d)| (d.max(0.0), None, Some(m))));
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let merged = merge_labels(raw);

    let labels: Vec<Label> = merged
        .into_iter()
        .map(|(d, node, exit)| {
            // exit_d is decreasing in the row index
            let last_row = exit.unwrap_or_else(|| exit_d.partition_point(|&v| v >= d).saturating_sub(1));
            let diagonal = node == Some(0);
            let origin = match node {
                Some(p) => grid.node(p),
                None => phi.inverse(d),
            };
            let pos = (0..=last_row)
                .map(|r| {
                    let xi = grid.node(r);
                    if diagonal {
                        xi
                    } else if r == 0 && node.is_some() {
                        origin
                    } else if exit == Some(r) {
                        1.0
                    } else {
                        phi.inverse(d + phi.eval(xi)).clamp(xi, 1.0)
                    }
                })
                .collect();
            Label {
                origin,
                first_row: 0,
                pos,
            }
        })
        .collect();
    Geometry {
        rows: row_lists(&labels, n),
        labels,
    }
}

/// Merges labels whose invariants agree to rounding, keeping both the
/// diagonal-node and the exit-row information.
fn merge_labels(raw: Vec<(f64, Option<usize>, Option<usize>)>) -> Vec<(f64, Option<usize>, Option<usize>)> {
    let mut out: Vec<(f64, Option<usize>, Option<usize>)> = Vec::with_capacity(raw.len());
    for (c, node, exit) in raw {
        if let Some(last) = out.last_mut() {
            let close = (c - last.0).abs() <= 1e-13 * (1.0 + c.abs());
            let compatible = (last.1.is_none() || node.is_none()) && (last.2.is_none() || exit.is_none());
            if close && compatible {
                if node.is_some() {
                    last.0 = c;
                    last.1 = node;
                }
                if exit.is_some() {
                    last.2 = exit;
                }
                continue;
            }
        }
        out.push((c, node, exit));
    }
    out
}

fn row_lists(labels: &[Label], n: usize) -> Vec<Vec<(u32, u32)>> {
    let mut rows: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n + 1];
    for (q, label) in labels.iter().enumerate() {
        for (k, _) in label.pos.iter().enumerate() {
            rows[label.first_row + k].push((q as u32, k as u32));
        }
    }
    for (r, row) in rows.iter_mut().enumerate() {
        // labels are sorted by invariant, so positions are already sorted up
        // to clamping ties; a stable sort keeps that order
        row.sort_by(|a, b| {
            let pa = labels[a.0 as usize].pos[a.1 as usize];
            let pb = labels[b.0 as usize].pos[b.1 as usize];
            pa.total_cmp(&pb)
        });
        debug_assert!(!row.is_empty(), "row {r} has no characteristic");
    }
    rows
}

/// Root of an increasing function on `[0, 1]`.
fn bisect_increasing(f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    if f(lo) >= target {
        return lo;
    }
    if f(hi) <= target {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn row_positions(geom: &Geometry) -> Vec<Vec<f64>> {
    geom.rows
        .iter()
        .map(|row| row.iter().map(|&(q, k)| geom.labels[q as usize].pos[k as usize]).collect())
        .collect()
}

#[inline]
fn bracket(sorted: &[f64], x: f64) -> Bracket {
    let last = sorted.len() - 1;
    if last == 0 || x <= sorted[0] {
        return Bracket { lo: 0, w: 0.0 };
    }
    if x >= sorted[last] {
        return Bracket {
            lo: (last - 1) as u32,
            w: 1.0,
        };
    }
    let hi = sorted.partition_point(|&v| v <= x).clamp(1, last);
    let lo = hi - 1;
    let dx = sorted[hi] - sorted[lo];
    let w = if dx > 0.0 {
        ((x - sorted[lo]) / dx).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Bracket { lo: lo as u32, w }
}

#[inline]
fn lerp(row: &[f64], b: Bracket) -> f64 {
    let lo = b.lo as usize;
    let a = row[lo];
    if b.w == 0.0 || row.len() == 1 {
        return a;
    }
    let c = row[lo + 1];
    if b.w == 1.0 {
        return c;
    }
    a + b.w * (c - a)
}

/// Per-label brackets of `geom` samples inside the rows of `partner`.
fn partner_brackets(geom: &Geometry, partner_rows: &[Vec<f64>], exec: Exec) -> Vec<Vec<Bracket>> {
    exec.map(geom.labels.len(), |q| {
        let label = &geom.labels[q];
        label
            .pos
            .iter()
            .enumerate()
            .map(|(k, &x)| bracket(&partner_rows[label.first_row + k], x))
            .collect()
    })
}

/// One member of a kernel pair, with its precomputed sampling data.
struct Member {
    geom: Geometry,
    /// Kernel values per label and crossed row.
    vals: Vec<Vec<f64>>,
    /// Row-major copy of `vals` (same order as `geom.rows`).
    row_vals: Vec<Vec<f64>>,
    brackets: Vec<Vec<Bracket>>,
    /// `lambda(xi_r)` converting `m` and `k`.
    weight: Vec<f64>,
    /// coupling coefficient at `xi_r`
    coupling: Vec<f64>,
}

impl Member {
    fn refresh_rows(&mut self) {
        for (r, row) in self.geom.rows.iter().enumerate() {
            let out = &mut self.row_vals[r];
            for (slot, &(q, k)) in out.iter_mut().zip(row) {
                *slot = self.vals[q as usize][k as usize];
            }
        }
    }
}

/// Pointwise data for one pair.
struct PairData<'a> {
    grid: Grid,
    /// kernel value on the diagonal for the diagonal member
    diag_value: &'a (dyn Fn(f64) -> f64 + Sync),
    /// `lambda` of the diagonal member's `xi` speed
    diag_weight: &'a (dyn Fn(f64) -> f64 + Sync),
    /// coupling coefficient of the diagonal member
    diag_coupling: &'a (dyn Fn(f64) -> f64 + Sync),
    /// kernel value on `xi = 0` for the boundary member
    boundary_value: &'a (dyn Fn(f64) -> f64 + Sync),
}

struct Pair {
    diag: Member,
    bdry: Member,
}

impl Pair {
    fn new(
        grid: Grid,
        diag_geom: Geometry,
        bdry_geom: Geometry,
        weights: (Vec<f64>, Vec<f64>),
        couplings: (Vec<f64>, Vec<f64>),
        exec: Exec,
    ) -> Self {
        let diag_rows = row_positions(&diag_geom);
        let bdry_rows = row_positions(&bdry_geom);
        let diag_br = partner_brackets(&diag_geom, &bdry_rows, exec);
        let bdry_br = partner_brackets(&bdry_geom, &diag_rows, exec);
        let zeros = |g: &Geometry| -> Vec<Vec<f64>> { g.labels.iter().map(|l| vec![0.0; l.pos.len()]).collect() };
        let zero_rows = |g: &Geometry| -> Vec<Vec<f64>> { g.rows.iter().map(|r| vec![0.0; r.len()]).collect() };
        debug_assert_eq!(weights.0.len(), grid.n() + 1);
        Pair {
            diag: Member {
                vals: zeros(&diag_geom),
                row_vals: zero_rows(&diag_geom),
                geom: diag_geom,
                brackets: diag_br,
                weight: weights.0,
                coupling: couplings.0,
            },
            bdry: Member {
                vals: zeros(&bdry_geom),
                row_vals: zero_rows(&bdry_geom),
                geom: bdry_geom,
                brackets: bdry_br,
                weight: weights.1,
                coupling: couplings.1,
            },
        }
    }

    /// One successive-approximation sweep; returns the sup-norm update.
    fn sweep(&mut self, data: &PairData<'_>, exec: Exec) -> f64 {
        let h = data.grid.h();
        let n = data.grid.n();

        // diagonal member, partner = boundary member
        let new_diag = {
            let d = &self.diag;
            let partner = &self.bdry.row_vals;
            exec.map(d.geom.labels.len(), |q| {
                let label = &d.geom.labels[q];
                let br = &d.brackets[q];
                let first = label.first_row;
                let last = label.last_row();
                let s = label.origin;
                let mut out = vec![0.0; label.pos.len()];
                // source term at (s, s): partner on its diagonal characteristic
                // (first entry of every row), interpolated between rows
                let p = (s * n as f64).clamp(0.0, n as f64);
                let r0 = (p.floor() as usize).min(n);
                let r1 = (r0 + 1).min(n);
                let wr = p - r0 as f64;
                let partner_diag = partner[r0][0] + wr * (partner[r1][0] - partner[r0][0]);
                let src_s = (data.diag_coupling)(s) * partner_diag;
                let mut m = (data.diag_weight)(s) * (data.diag_value)(s);
                let src = |r: usize| d.coupling[r] * lerp(&partner[r], br[r - first]);
                let mut f_next = src(last);
                let len = s - data.grid.node(last);
                if len > 0.0 {
                    m += 0.5 * len * (src_s + f_next);
                }
                out[last - first] = m / d.weight[last];
                for r in (first..last).rev() {
                    let f = src(r);
                    m += 0.5 * h * (f + f_next);
                    out[r - first] = m / d.weight[r];
                    f_next = f;
                }
                out
            })
        };
        let mut delta = max_change(&self.diag.vals, &new_diag);
        self.diag.vals = new_diag;
        self.diag.refresh_rows();

        // boundary member, partner = diagonal member
        let new_bdry = {
            let b = &self.bdry;
            let partner = &self.diag.row_vals;
            exec.map(b.geom.labels.len(), |q| {
                let label = &b.geom.labels[q];
                let br = &b.brackets[q];
                let mut out = vec![0.0; label.pos.len()];
                let k_start = (data.boundary_value)(label.origin);
                let mut m = b.weight[0] * k_start;
                out[0] = k_start;
                let src = |r: usize| b.coupling[r] * lerp(&partner[r], br[r]);
                let mut f_prev = src(0);
                for r in 1..label.pos.len() {
                    let f = src(r);
                    m -= 0.5 * h * (f_prev + f);
                    out[r] = m / b.weight[r];
                    f_prev = f;
                }
                out
            })
        };
        delta = delta.max(max_change(&self.bdry.vals, &new_bdry));
        self.bdry.vals = new_bdry;
        self.bdry.refresh_rows();
        delta
    }

    /// Resamples a member onto the Cartesian triangle grid.
    fn cartesian(member: &Member, grid: Grid) -> TriMatrix {
        let n = grid.n();
        let rows = row_positions(&member.geom);
        let mut out = TriMatrix::zeros(n);
        for (r, pos) in rows.iter().enumerate() {
            let vals = &member.row_vals[r];
            for i in r..=n {
                out.set(i, r, lerp(vals, bracket(pos, grid.node(i))));
            }
        }
        out
    }
}

fn max_change(old: &[Vec<f64>], new: &[Vec<f64>]) -> f64 {
    old.iter()
        .zip(new)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Solves the two decoupled kernel systems by successive approximation along
/// characteristics. `k0` is the free boundary data `k22(x, 0)`.
pub fn solve_kernels(
    gauge: &DiagGauge,
    speeds: &SpeedPair,
    k0: &CoefficientSpec,
    grid: Grid,
    opts: &KernelOptions,
) -> Result<KernelSet> {
    k0.validate()?;
    let n = grid.n();
    if speeds.table_resolution() < 4 * n {
        return Err(Error::Precondition(format!(
            "travel-time tables ({} cells) must be at least 4x the kernel grid ({n} cells)",
            speeds.table_resolution()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::domain("kernel tolerance must be positive"));
    }
    let exec = opts.exec;
    let phi1 = speeds.travel(crate::characteristics::Component::One);
    let phi2 = speeds.travel(crate::characteristics::Component::Two);
    let l1 = |x: f64| speeds.lambda1().at(x);
    let l2 = |x: f64| speeds.lambda2().at(x);
    let at_rows = |f: &dyn Fn(f64) -> f64| -> Vec<f64> { grid.sample(f) };
    let bt = |x: f64| gauge.b_tilde(x);
    let ct = |x: f64| gauge.c_tilde(x);

    // (k21, k22)
    let mut second = Pair::new(
        grid,
        build_diagonal_family(grid, TravelPair { x: phi2, xi: phi1 }),
        build_boundary_family(grid, phi2),
        (at_rows(&l1), at_rows(&l2)),
        (at_rows(&ct), at_rows(&bt)),
        exec,
    );
    let k21_diag = |s: f64| ct(s) / (l2(s) - l1(s));
    let k0_fn = |x: f64| k0.at(x);
    let second_data = PairData {
        grid,
        diag_value: &k21_diag,
        diag_weight: &l1,
        diag_coupling: &ct,
        boundary_value: &k0_fn,
    };

    // (k12, k11)
    let mut first = Pair::new(
        grid,
        build_diagonal_family(grid, TravelPair { x: phi1, xi: phi2 }),
        build_boundary_family(grid, phi1),
        (at_rows(&l2), at_rows(&l1)),
        (at_rows(&bt), at_rows(&ct)),
        exec,
    );
    let k12_diag = |s: f64| bt(s) / (l1(s) - l2(s));
    let zero = |_: f64| 0.0;
    let first_data = PairData {
        grid,
        diag_value: &k12_diag,
        diag_weight: &l2,
        diag_coupling: &bt,
        boundary_value: &zero,
    };

    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let d1 = first.sweep(&first_data, exec);
        let d2 = second.sweep(&second_data, exec);
        residual = d1.max(d2);
        history.push(residual);
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            break;
        }
    }
    if !(residual <= opts.tol) {
        return Err(Error::NonConvergence {
            iterations: history.len(),
            residual,
        });
    }

    Ok(KernelSet {
        grid,
        k11: Pair::cartesian(&first.bdry, grid),
        k12: Pair::cartesian(&first.diag, grid),
        k21: Pair::cartesian(&second.diag, grid),
        k22: Pair::cartesian(&second.bdry, grid),
        k0: k0.clone(),
        residual,
        iterations: history.len(),
        history,
    })
}

/// `g(x) = -k21(x, 0) lambda_1(0)`, read from the `xi = 0` row.
pub fn trace_g(k: &KernelSet, speeds: &SpeedPair) -> GridFn {
    let lam = speeds.lambda1().at(0.0);
    let values = (0..=k.grid.n()).map(|i| -k.k21.get(i, 0) * lam).collect();
    GridFn { grid: k.grid, values }
}

/// `f1 = k11(1, .) e1 / e1(1)`, `f2 = k12(1, .) e2 / e1(1)`.
pub fn feedback_gains(k: &KernelSet, gauge: &DiagGauge) -> FeedbackLaw {
    let grid = k.grid;
    let n = grid.n();
    let e1_end = gauge.e1(1.0);
    let f1 = (0..=n).map(|j| k.k11.get(n, j) * gauge.e1(grid.node(j)) / e1_end).collect();
    let f2 = (0..=n).map(|j| k.k12.get(n, j) * gauge.e2(grid.node(j)) / e1_end).collect();
    FeedbackLaw {
        f1: GridFn { grid, values: f1 },
        f2: GridFn { grid, values: f2 },
    }
}

/// The diagonal point `s` whose `k21`-characteristic reaches `(x, 0)`:
/// `phi_1(s) + phi_2(s) = phi_2(x)`.
pub fn sin_map(speeds: &SpeedPair, x: f64) -> Result<f64> {
    let target = speeds.phi(crate::characteristics::Component::Two, x)?;
    Ok(speeds.psi_inv(target))
}

/// Predicted vanishing prefix of `g`: `phi_2^{-1}(psi(X(c)))` with `X(c)`
/// the prefix of `c` on `(0, x_bar)`.
pub fn predicted_g_prefix(speeds: &SpeedPair, c: &CoefficientSpec, grid: &Grid) -> Result<f64> {
    let xbar = sin_map(speeds, 1.0)?;
    let xc = PrefixEstimate::of_spec(c, xbar, DEFAULT_PREFIX_RTOL, grid)?;
    if xc.value >= xbar {
        return Ok(1.0);
    }
    let phi2 = speeds.travel(crate::characteristics::Component::Two);
    Ok(phi2.inverse(speeds.psi(xc.value)).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::diag_removal;
    use approx::assert_abs_diff_eq;

    fn unit() -> SpeedPair {
        SpeedPair::with_resolution(CoefficientSpec::constant(-1.0), CoefficientSpec::constant(1.0), 1 << 14).unwrap()
    }

    fn varying() -> SpeedPair {
        SpeedPair::with_resolution(
            CoefficientSpec::polynomial(vec![-1.0, -0.5]),
            CoefficientSpec::polynomial(vec![1.0, 1.0]),
            1 << 14,
        )
        .unwrap()
    }

    fn solve(speeds: &SpeedPair, b: CoefficientSpec, c: CoefficientSpec, n: usize) -> (KernelSet, DiagGauge) {
        let z = CoefficientSpec::zero();
        let gauge = diag_removal(&z, &b, &c, &z, speeds).unwrap();
        let k = solve_kernels(&gauge, speeds, &z, Grid::new(n).unwrap(), &KernelOptions::default()).unwrap();
        (k, gauge)
    }

    #[test]
    fn zero_data_gives_zero_kernels() {
        let s = unit();
        let (k, gauge) = solve(&s, CoefficientSpec::zero(), CoefficientSpec::zero(), 40);
        for m in [&k.k11, &k.k12, &k.k21, &k.k22] {
            assert_eq!(m.max_abs(), 0.0);
        }
        let f = feedback_gains(&k, &gauge);
        assert_eq!(f, FeedbackLaw::zero(k.grid()));
        assert_eq!(trace_g(&k, &s).max_abs(), 0.0);
    }

    #[test]
    fn diagonal_and_boundary_conditions() {
        let s = varying();
        let b = CoefficientSpec::polynomial(vec![0.5, 1.0]);
        let c = CoefficientSpec::step(0.3, 0.0, 1.5);
        let a = CoefficientSpec::constant(0.4);
        let d = CoefficientSpec::constant(-0.2);
        let gauge = diag_removal(&a, &b, &c, &d, &s).unwrap();
        let k0 = CoefficientSpec::polynomial(vec![0.1, 0.2]);
        let grid = Grid::new(60).unwrap();
        let k = solve_kernels(&gauge, &s, &k0, grid, &KernelOptions::default()).unwrap();
        assert!(k.residual <= 1e-10);
        for i in 0..=60 {
            let x = grid.node(i);
            let (l1, l2) = (s.lambda1().at(x), s.lambda2().at(x));
            assert_abs_diff_eq!(k.k12.get(i, i), gauge.b_tilde(x) / (l1 - l2), epsilon = 1e-8);
            assert_abs_diff_eq!(k.k21.get(i, i), gauge.c_tilde(x) / (l2 - l1), epsilon = 1e-8);
            assert_abs_diff_eq!(k.k11.get(i, 0), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(k.k22.get(i, 0), k0.at(x), epsilon = 1e-8);
        }
    }

    #[test]
    fn constant_coupling_diagonal_value() {
        let s = unit();
        let c0 = 0.8;
        let (k, _) = solve(&s, CoefficientSpec::zero(), CoefficientSpec::constant(c0), 50);
        assert_abs_diff_eq!(k.k21.get(25, 25), c0 / 2.0, epsilon = 1e-12);
        let g = trace_g(&k, &s);
        assert_abs_diff_eq!(g.values[0], c0 / 2.0, epsilon = 1e-12);
        // b~ = 0: k22 = 0 and k21 is pure transport of the diagonal value
        assert!(g.values.iter().all(|v| (v - c0 / 2.0).abs() < 1e-12));
    }

    #[test]
    fn residual_history_decreases() {
        let s = unit();
        let (k, _) = solve(&s, CoefficientSpec::constant(1.0), CoefficientSpec::constant(1.0), 64);
        assert!(k.history.len() >= 3);
        for w in k.history.windows(2) {
            assert!(w[1] <= w[0], "{:?}", k.history);
        }
    }

    #[test]
    fn g_is_linear_in_c_when_b_vanishes() {
        let s = varying();
        let c = CoefficientSpec::polynomial(vec![0.3, -1.0, 2.0]);
        let c2 = CoefficientSpec::polynomial(vec![0.6, -2.0, 4.0]);
        let (k1, _) = solve(&s, CoefficientSpec::zero(), c, 80);
        let (k2, _) = solve(&s, CoefficientSpec::zero(), c2, 80);
        let (g1, g2) = (trace_g(&k1, &s), trace_g(&k2, &s));
        for (a, b) in g1.values.iter().zip(&g2.values) {
            assert_abs_diff_eq!(2.0 * a, *b, epsilon = 1e-12);
        }
    }

    /// Column-by-column marching for unit speeds and `b~ = c~ = 1`, where
    /// both characteristic families run through grid nodes.
    fn marching_reference(n: usize) -> (Vec<f64>, Vec<f64>) {
        let h = 1.0 / n as f64;
        let mut k21_prev = vec![0.5];
        let mut k22_prev = vec![0.0];
        // store only the column x = 1 and the row xi = 0
        let mut row0 = vec![0.5];
        for i in 1..=n {
            let mut k21 = vec![0.0; i + 1];
            let mut k22 = vec![0.0; i + 1];
            // diagonal first: the half step below it needs k22 on the diagonal
            k21[i] = 0.5;
            k22[i] = k22_prev[i - 1] - 0.5 * h * (k21_prev[i - 1] + 0.5);
            for j in (0..i).rev() {
                let beta = if j > 0 {
                    k22_prev[j - 1] - 0.5 * h * k21_prev[j - 1]
                } else {
                    0.0
                };
                // characteristic back to (x_{j+1}, x_j+1) or, for j = i - 1, to
                // the diagonal point half a cell away
                let (alpha, w) = if j + 1 < i {
                    (k21_prev[j + 1] - 0.5 * h * k22_prev[j + 1], 0.5 * h)
                } else {
                    let kd = 0.5 * (k22_prev[i - 1] + k22[i]);
                    (0.5 - 0.25 * h * kd, 0.25 * h)
                };
                let (a, b) = if j == 0 {
                    (alpha, 0.0)
                } else {
                    let det = 1.0 - w * 0.5 * h;
                    ((alpha - w * beta) / det, (beta - 0.5 * h * alpha) / det)
                };
                k21[j] = a;
                k22[j] = b;
            }
            row0.push(k21[0]);
            k21_prev = k21;
            k22_prev = k22;
        }
        (row0, k22_prev)
    }

    #[test]
    fn matches_fine_marching_reference() {
        let fine = 4096;
        let (row0, col1) = marching_reference(fine);
        let s = unit();
        let mut errors = Vec::new();
        for n in [32, 64, 128] {
            let (k, _) = solve(&s, CoefficientSpec::constant(1.0), CoefficientSpec::constant(1.0), n);
            let stride = fine / n;
            let mut err: f64 = 0.0;
            for i in 0..=n {
                err = err.max((k.k21.get(i, 0) - row0[i * stride]).abs());
                err = err.max((k.k22.get(n, i) - col1[i * stride]).abs());
            }
            errors.push(err);
        }
        assert!(errors[2] < 1e-4, "{errors:?}");
        assert!(errors[0] / errors[1] > 1.8 && errors[1] / errors[2] > 1.8, "{errors:?}");
    }

    #[test]
    fn sin_map_examples() {
        let s = unit();
        for x in [0.0, 0.2, 0.5, 1.0] {
            assert_abs_diff_eq!(sin_map(&s, x).unwrap(), x / 2.0, epsilon = 1e-12);
        }
        // s + ln(1 + s) = ln 2, solved by an independent bisection
        let v = SpeedPair::with_resolution(
            CoefficientSpec::constant(-1.0),
            CoefficientSpec::polynomial(vec![1.0, 1.0]),
            1 << 14,
        )
        .unwrap();
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..100 {
            let m = 0.5 * (lo + hi);
            if m + (1.0 + m).ln() < std::f64::consts::LN_2 {
                lo = m
            } else {
                hi = m
            }
        }
        assert_abs_diff_eq!(lo, 0.3748, epsilon = 1e-4);
        assert_abs_diff_eq!(sin_map(&v, 1.0).unwrap(), lo, epsilon = 1e-8);
        for x in [0.1, 0.5, 0.9] {
            let r = sin_map(&v, x).unwrap();
            assert!(r > 0.0 && r < x);
        }
    }

    #[test]
    fn predicted_prefix_examples() {
        let s = unit();
        let grid = Grid::new(400).unwrap();
        assert_eq!(predicted_g_prefix(&s, &CoefficientSpec::zero(), &grid).unwrap(), 1.0);
        assert_abs_diff_eq!(
            predicted_g_prefix(&s, &CoefficientSpec::step(0.25, 0.0, 1.0), &grid).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_eq!(predicted_g_prefix(&s, &CoefficientSpec::constant(1.0), &grid).unwrap(), 0.0);
    }

    #[test]
    fn measured_g_prefix_matches_prediction() {
        let s = varying();
        for ell in [0.1, 0.2, 0.35] {
            let c = CoefficientSpec::step(ell, 0.0, 1.0);
            let (k, _) = solve(&s, CoefficientSpec::constant(1.0), c.clone(), 200);
            let g = trace_g(&k, &s);
            let tol = (10.0 * k.residual).max(1e-8);
            let measured = crate::coeffs::vanishing_prefix_samples(&g.values, &g.grid, 1.0, tol).unwrap();
            let predicted = predicted_g_prefix(&s, &c, &g.grid).unwrap();
            assert!(
                (measured - predicted).abs() <= 2.0 * g.grid.h(),
                "ell {ell}: {measured} vs {predicted}"
            );
        }
    }

    #[test]
    fn backends_agree_bitwise() {
        let s = varying();
        let z = CoefficientSpec::zero();
        let gauge = diag_removal(
            &z,
            &CoefficientSpec::constant(1.0),
            &CoefficientSpec::step(0.2, 0.0, 1.0),
            &z,
            &s,
        )
        .unwrap();
        let grid = Grid::new(48).unwrap();
        let seq = KernelOptions {
            exec: Exec::Sequential,
            ..Default::default()
        };
        let par = KernelOptions {
            exec: Exec::Parallel,
            ..Default::default()
        };
        let a = solve_kernels(&gauge, &s, &z, grid, &seq).unwrap();
        let b = solve_kernels(&gauge, &s, &z, grid, &par).unwrap();
        assert_eq!(a.k21, b.k21);
        assert_eq!(a.k12, b.k12);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn non_convergence_reported() {
        let s = unit();
        let z = CoefficientSpec::zero();
        let gauge = diag_removal(&z, &CoefficientSpec::constant(1.0), &CoefficientSpec::constant(1.0), &z, &s).unwrap();
        let opts = KernelOptions {
            tol: 1e-14,
            max_iter: 2,
            exec: Exec::Sequential,
        };
        let err = solve_kernels(&gauge, &s, &z, Grid::new(20).unwrap(), &opts).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 2, .. }));
    }

    #[test]
    fn table_resolution_precondition() {
        let s = SpeedPair::with_resolution(CoefficientSpec::constant(-1.0), CoefficientSpec::constant(1.0), 64).unwrap();
        let z = CoefficientSpec::zero();
        let gauge = diag_removal(&z, &z, &z, &z, &s).unwrap();
        assert!(solve_kernels(&gauge, &s, &z, Grid::new(100).unwrap(), &KernelOptions::default()).is_err());
    }
}
