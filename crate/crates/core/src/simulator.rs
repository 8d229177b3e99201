//! Upwind simulation of the physical system and the explicit solution of the
//! canonical system
//!
//! ```text
//! y1_t + lambda1 y1_x = 0,              y1(t, 1) = u(t)
//! y2_t + lambda2 y2_x = g(x) y1(t, 0),  y2(t, 0) = q y1(t, 0)
//! ```

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::characteristics::{Component, SpeedPair};
use crate::coeffs::{CoefficientSpec, Grid, GridFn};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{FeedbackLaw, KernelSet};
use crate::output::write_rows_csv;
use crate::transforms::{diag_removal, volterra_apply, DiagGauge, FieldPair};

pub const SCHEME_ID: &str = "upwind1-euler";

/// Physical system: speeds, couplings and the reflection `y2(t, 0) = q y1(t, 0)`.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub speeds: SpeedPair,
    pub a: CoefficientSpec,
    pub b: CoefficientSpec,
    pub c: CoefficientSpec,
    pub d: CoefficientSpec,
    pub q: f64,
}

impl SystemSpec {
    pub fn new(
        speeds: SpeedPair,
        a: CoefficientSpec,
        b: CoefficientSpec,
        c: CoefficientSpec,
        d: CoefficientSpec,
    ) -> Result<Self> {
        let s = SystemSpec {
            speeds,
            a,
            b,
            c,
            d,
            q: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_reflection(mut self, q: f64) -> Result<Self> {
        if !q.is_finite() {
            return Err(Error::domain("reflection coefficient must be finite"));
        }
        self.q = q;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for spec in [&self.a, &self.b, &self.c, &self.d] {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn gauge(&self) -> Result<DiagGauge> {
        diag_removal(&self.a, &self.b, &self.c, &self.d, &self.speeds)
    }
}

/// An open-loop control signal `u(t)`.
#[derive(Clone)]
pub enum Signal {
    Zero,
    /// Linear interpolation of `(t, u)` samples, held constant outside.
    Samples {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Zero => write!(f, "Zero"),
            Signal::Samples { times, .. } => write!(f, "Samples({} points)", times.len()),
            Signal::Function(_) => write!(f, "Function"),
        }
    }
}

impl Signal {
    pub fn samples(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::domain("signal needs matching, nonempty time and value samples"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("signal sample times must be strictly increasing"));
        }
        Ok(Signal::Samples { times, values })
    }

    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Signal::Function(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            Signal::Zero => 0.0,
            Signal::Samples { times, values } => crate::coeffs::interp_sorted(times, values, t),
            Signal::Function(f) => f(t),
        }
    }
}

/// Boundary input at `x = 1`.
#[derive(Debug, Clone)]
pub enum Control {
    Open(Signal),
    /// `u(t) = int_0^1 f1 y1 + f2 y2`.
    Feedback(FeedbackLaw),
    /// `u(t) = k y2(t, 1)`.
    Reflection(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub cfl: f64,
    /// Number of snapshot intervals over `[0, T]`.
    pub snapshots: usize,
    pub exec: Exec,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            cfl: 0.9,
            snapshots: 100,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeMeta {
    pub cfl: f64,
    pub dt: f64,
    pub steps: usize,
    pub scheme: &'static str,
}

/// One row of the per-step time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub t: f64,
    pub u: f64,
    pub l2: f64,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub snapshots: Vec<FieldPair>,
    pub series: Vec<SeriesPoint>,
    pub meta: SchemeMeta,
}

impl SimResult {
    pub fn final_state(&self) -> &FieldPair {
        self.snapshots
            .last()
            .expect("a simulation records at least the initial snapshot")
    }

    pub fn control_trace(&self) -> Vec<(f64, f64)> {
        self.series.iter().map(|p| (p.t, p.u)).collect()
    }

    /// Writes `snapshot_XXXX.csv` (x, y1, y2) per snapshot and `series.csv`
    /// (t, u, l2_norm, linf_norm) into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, snap) in self.snapshots.iter().enumerate() {
            let rows = (0..=self.grid.n()).map(|j| vec![self.grid.node(j), snap.y1[j], snap.y2[j]]);
            write_rows_csv(&dir.join(format!("snapshot_{k:04}.csv")), &["x", "y1", "y2"], rows)?;
        }
        let rows = self.series.iter().map(|p| vec![p.t, p.u, p.l2, p.linf]);
        write_rows_csv(&dir.join("series.csv"), &["t", "u", "l2_norm", "linf_norm"], rows)?;
        let times = self.times.iter().enumerate().map(|(k, t)| vec![k as f64, *t]);
        write_rows_csv(&dir.join("snapshot_times.csv"), &["index", "t"], times)
    }
}

/// Trapezoid weights times the gains.
fn gain_weights(law: &FeedbackLaw, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if law.grid().n() != n {
        return Err(Error::GridMismatch {
            expected: n,
            got: law.grid().n(),
        });
    }
    let w = law.grid().trapezoid_weights();
    let w1 = law.f1.values.iter().zip(&w).map(|(f, w)| f * w).collect();
    let w2 = law.f2.values.iter().zip(&w).map(|(f, w)| f * w).collect();
    Ok((w1, w2))
}

/// First-order upwind, explicit Euler, explicit sources.
pub fn simulate(
    system: &SystemSpec,
    control: &Control,
    y0: &FieldPair,
    t_end: f64,
    grid: Grid,
    opts: &SimOptions,
) -> Result<SimResult> {
    let n = grid.n();
    y0.check(n)?;
    if !(opts.cfl > 0.0 && opts.cfl <= 1.0) {
        return Err(Error::Cfl { cfl: opts.cfl });
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {t_end}")));
    }
    let h = grid.h();
    let l1 = grid.sample(|x| system.speeds.lambda1().at(x));
    let l2 = grid.sample(|x| system.speeds.lambda2().at(x));
    let lmax = l1.iter().chain(&l2).fold(0.0_f64, |m, v| m.max(v.abs()));
    let steps = ((t_end * lmax / (opts.cfl * h)) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let courant = dt * lmax / h;
    if courant > 1.0 + 1e-12 {
        return Err(Error::Cfl { cfl: courant });
    }
    let (a, b) = (grid.sample(|x| system.a.at(x)), grid.sample(|x| system.b.at(x)));
    let (c, d) = (grid.sample(|x| system.c.at(x)), grid.sample(|x| system.d.at(x)));
    let r1: Vec<f64> = l1.iter().map(|l| -l * dt / h).collect();
    let r2: Vec<f64> = l2.iter().map(|l| l * dt / h).collect();
    let gains = match control {
        Control::Feedback(law) => Some(gain_weights(law, n)?),
        _ => None,
    };
    let q = system.q;
    let exec = opts.exec;
    let chunk = 256;

    let mut y = y0.clone();
    let mut next = FieldPair::zeros(grid);
    let u0 = match control {
        Control::Open(s) => s.at(0.0),
        Control::Feedback(_) => {
            let (w1, w2) = gains.as_ref().expect("feedback gains");
            dot(w1, &y.y1) + dot(w2, &y.y2)
        }
        Control::Reflection(k) => k * y.y2[n],
    };
    let snap_every = opts.snapshots.max(1);
    let mut times = vec![0.0];
    let mut snapshots = vec![y.clone()];
    let mut series = Vec::with_capacity(steps + 1);
    series.push(SeriesPoint {
        t: 0.0,
        u: u0,
        l2: y.l2_norm(),
        linf: y.linf_norm(),
    });

    for step in 1..=steps {
        let t = step as f64 * dt;
        {
            let cur = &y;
            exec.fill_chunked(&mut next.y1[..n], chunk, |j| {
                let v = cur.y1[j];
                v + r1[j] * (cur.y1[j + 1] - v) + dt * (a[j] * v + b[j] * cur.y2[j])
            });
            exec.fill_chunked(&mut next.y2[1..], chunk, |k| {
                let j = k + 1;
                let v = cur.y2[j];
                v - r2[j] * (v - cur.y2[j - 1]) + dt * (c[j] * cur.y1[j] + d[j] * v)
            });
        }
        next.y2[0] = q * next.y1[0];
        let u = match control {
            Control::Open(s) => s.at(t),
            Control::Feedback(_) => {
                // implicit in the boundary node: u = rest + w1_n u
                let (w1, w2) = gains.as_ref().expect("feedback gains");
                let rest = dot(&w1[..n], &next.y1[..n]) + dot(w2, &next.y2);
                let denom = 1.0 - w1[n];
                if denom == 0.0 {
                    return Err(Error::domain("feedback gain makes the boundary closure singular"));
                }
                rest / denom
            }
            Control::Reflection(k) => k * next.y2[n],
        };
        next.y1[n] = u;
        if n == 0 || !u.is_finite() || !next.is_finite() {
            return Err(Error::Divergence { step, t });
        }
        std::mem::swap(&mut y, &mut next);
        series.push(SeriesPoint {
            t,
            u,
            l2: y.l2_norm(),
            linf: y.linf_norm(),
        });
        if step == steps || (step * snap_every) / steps > ((step - 1) * snap_every) / steps {
            times.push(t);
            snapshots.push(y.clone());
        }
    }
    Ok(SimResult {
        grid,
        times,
        snapshots,
        series,
        meta: SchemeMeta {
            cfl: courant,
            dt,
            steps,
            scheme: SCHEME_ID,
        },
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares slope of `ln ||y(t)||_2` over the snapshots in `window`.
pub fn growth_rate(result: &SimResult, window: (f64, f64)) -> Result<f64> {
    let (t0, t1) = window;
    let slack = 1e-9 * (1.0 + t1.abs());
    let pts: Vec<(f64, f64)> = result
        .times
        .iter()
        .zip(&result.snapshots)
        .filter(|(t, _)| **t >= t0 - slack && **t <= t1 + slack)
        .map(|(t, s)| (*t, s.l2_norm()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::UndefinedRate(format!(
            "{} snapshots in [{t0}, {t1}], need at least 5",
            pts.len()
        )));
    }
    if let Some((t, _)) = pts.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::UndefinedRate(format!("norm vanishes or is not finite at t = {t}")));
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let lm = pts.iter().map(|p| p.1.ln()).sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in &pts {
        sxy += (t - tm) * (v.ln() - lm);
        sxx += (t - tm) * (t - tm);
    }
    Ok(sxy / sxx)
}

/// `y^1(s, 0)` of the canonical system: the control entered at time `s - T1`
/// or initial data transported to the left end.
#[inline]
pub fn canonical_outflow(speeds: &SpeedPair, yhat0_1: &GridFn, uhat: &Signal, s: f64) -> f64 {
    let t1 = speeds.t1();
    if s > t1 {
        uhat.at(s - t1)
    } else {
        yhat0_1.at(speeds.travel(Component::One).inverse(s))
    }
}

/// Evaluates the canonical system at `(t, x)` by the characteristic formulas.
/// Quadratures use the trapezoid rule with step at most `h / max|lambda|`,
/// split where `y^1(s, 0)` switches from initial data to control.
pub fn canonical_solution(
    speeds: &SpeedPair,
    g: &GridFn,
    q: f64,
    yhat0: &FieldPair,
    uhat: &Signal,
    t: f64,
    x: f64,
) -> (f64, f64) {
    let grid = g.grid;
    let y10 = GridFn {
        grid: Grid::new(yhat0.cells().max(1)).expect("nonempty grid"),
        values: yhat0.y1.clone(),
    };
    let y20 = GridFn {
        grid: y10.grid,
        values: yhat0.y2.clone(),
    };
    let phi1 = speeds.travel(Component::One);
    let phi2 = speeds.travel(Component::Two);

    let s_in1 = t + phi1.eval(x) - phi1.total();
    let y1 = if s_in1 > 0.0 {
        uhat.at(s_in1)
    } else {
        y10.at(phi1.inverse(phi1.eval(x) + t))
    };

    let px = phi2.eval(x);
    let s_in2 = t - px;
    let (start, lo) = if s_in2 <= 0.0 {
        (y20.at(phi2.inverse(px - t)), 0.0)
    } else {
        (q * canonical_outflow(speeds, &y10, uhat, s_in2), s_in2)
    };
    let step = grid.h().min(y10.grid.h()) / speeds.max_speed(grid.n().max(y10.grid.n()));
    let integrand = |s: f64| g.at(phi2.inverse(px + s - t)) * canonical_outflow(speeds, &y10, uhat, s);
    let t1 = speeds.t1();
    let mut integral = 0.0;
    let mut panel = |a: f64, b: f64| {
        if b > a {
            let m = ((b - a) / step).ceil().max(1.0) as usize;
            let hs = (b - a) / m as f64;
            let inner: f64 = (1..m).map(|k| integrand(a + k as f64 * hs)).sum();
            // one-sided limit of the control side at s = T1
            let fa = if a == t1 && lo < t1 {
                uhat.at(0.0) * g.at(phi2.inverse(px + a - t))
            } else {
                integrand(a)
            };
            integral += hs * (inner + 0.5 * (fa + integrand(b)));
        }
    };
    if lo < t1 && t > t1 {
        panel(lo, t1);
        panel(t1, t);
    } else {
        panel(lo, t);
    }
    (y1, start + integral)
}

/// The physical state mapped to canonical coordinates: gauge, then Volterra.
pub fn to_canonical(gauge: &DiagGauge, kernels: &KernelSet, y: &FieldPair, exec: Exec) -> Result<FieldPair> {
    volterra_apply(kernels, &gauge.forward(y), exec)
}
