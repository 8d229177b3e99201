//! Scenario configs and the verifications built on top of the library:
//! settling of the synthesized feedback at the minimal time, sharpness of
//! that time via least squares on the canonical system, and the unstable
//! reflection example.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::characteristics::{Component, SpeedPair};
use crate::coeffs::{CoefficientSpec, Grid, GridFn};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{feedback_gains, solve_kernels, trace_g, FeedbackLaw, KernelOptions, KernelSet};
use crate::mintime::{times_report, TimesReport};
use crate::output::Report;
use crate::simulator::{growth_rate, simulate, Control, Signal, SimOptions, SimResult, SystemSpec};
use crate::transforms::FieldPair;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_RANDOM_NODES: usize = 16;

fn zero_spec() -> CoefficientSpec {
    CoefficientSpec::zero()
}
fn default_id() -> String {
    "scenario".to_string()
}
fn default_cfl() -> f64 {
    0.9
}
fn default_snapshots() -> usize {
    100
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_nodes() -> usize {
    DEFAULT_RANDOM_NODES
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        let o = KernelOptions::default();
        KernelConfig {
            tol: o.tol,
            max_iter: o.max_iter,
        }
    }
}

/// Initial state of the physical system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialData {
    /// Piecewise linear through `nodes` equispaced values, uniform in `[-1, 1]`.
    Random {
        #[serde(default = "default_seed")]
        seed: u64,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
    Functions {
        y1: CoefficientSpec,
        y2: CoefficientSpec,
    },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Random {
            seed: DEFAULT_SEED,
            nodes: DEFAULT_RANDOM_NODES,
        }
    }
}

impl InitialData {
    pub fn sample(&self, grid: Grid) -> Result<FieldPair> {
        match self {
            InitialData::Random { seed, nodes } => random_initial(*seed, *nodes, grid),
            InitialData::Functions { y1, y2 } => {
                y1.validate()?;
                y2.validate()?;
                Ok(FieldPair::from_fns(grid, |x| y1.at(x), |x| y2.at(x)))
            }
        }
    }
}

/// Boundary input used by the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControlConfig {
    /// The synthesized backstepping feedback.
    #[default]
    Feedback,
    Zero,
    /// Linear interpolation of `(t, u)` samples.
    Samples {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    /// `u(t) = k y2(t, 1)`.
    Reflection {
        k: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SettlingConfig {
    /// Pass threshold on `||y(T)|| / ||y0||` at the configured grid.
    pub threshold: f64,
    /// Accepted range of the ratio between consecutive refinement levels.
    pub halving_min: f64,
    pub halving_max: f64,
}

impl Default for SettlingConfig {
    fn default() -> Self {
        SettlingConfig {
            threshold: 0.05,
            halving_min: 1.5,
            halving_max: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharpnessConfig {
    /// Times `T <= Tmin - margin_fraction * Tunif` must keep a residual floor.
    pub margin_fraction: f64,
    /// Minimal relative residual below the minimal time.
    pub floor: f64,
    /// Largest allowed relative decrease of that residual from the coarsest
    /// to the finest refinement level.
    pub max_floor_decrease: f64,
    /// Relative residual counted as "settled" for `T >= Tmin`.
    pub drop: f64,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        SharpnessConfig {
            margin_fraction: 0.1,
            floor: 1e-3,
            max_floor_decrease: 0.3,
            drop: 1e-6,
        }
    }
}

/// A scenario file. Every numeric field mirrors a library parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default = "default_id")]
    pub id: String,
    pub lambda1: CoefficientSpec,
    pub lambda2: CoefficientSpec,
    #[serde(default = "zero_spec")]
    pub a: CoefficientSpec,
    #[serde(default = "zero_spec")]
    pub b: CoefficientSpec,
    #[serde(default = "zero_spec")]
    pub c: CoefficientSpec,
    #[serde(default = "zero_spec")]
    pub d: CoefficientSpec,
    /// Reflection `y2(t, 0) = q y1(t, 0)`.
    #[serde(default)]
    pub q: f64,
    /// Number of grid cells.
    pub n: usize,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default)]
    pub kernel: KernelConfig,
    /// Boundary data `k22(x, 0)` of the kernels.
    #[serde(default = "zero_spec")]
    pub k0: CoefficientSpec,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub control: ControlConfig,
    /// Horizon `T`.
    pub horizon: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub settling: SettlingConfig,
    #[serde(default)]
    pub sharpness: SharpnessConfig,
}

impl ScenarioConfig {
    /// Constant-speed scenario with the given couplings and defaults elsewhere.
    pub fn new(lambda1: CoefficientSpec, lambda2: CoefficientSpec, n: usize, horizon: f64) -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            id: default_id(),
            lambda1,
            lambda2,
            a: zero_spec(),
            b: zero_spec(),
            c: zero_spec(),
            d: zero_spec(),
            q: 0.0,
            n,
            cfl: default_cfl(),
            kernel: KernelConfig::default(),
            k0: zero_spec(),
            initial: InitialData::default(),
            control: ControlConfig::default(),
            horizon,
            snapshots: default_snapshots(),
            output_dir: None,
            settling: SettlingConfig::default(),
            sharpness: SharpnessConfig::default(),
        }
    }

    /// `lambda = (-1, 1)`, `a = 0.5`, `b = 1`, `c` a unit step at 0.25,
    /// `d = -0.3`, random initial data with seed 42, `T = 1.5`.
    pub fn headline(n: usize) -> Self {
        let mut cfg = ScenarioConfig::new(CoefficientSpec::constant(-1.0), CoefficientSpec::constant(1.0), n, 1.5);
        cfg.id = "headline".into();
        cfg.a = CoefficientSpec::constant(0.5);
        cfg.b = CoefficientSpec::constant(1.0);
        cfg.c = CoefficientSpec::step(0.25, 0.0, 1.0);
        cfg.d = CoefficientSpec::constant(-0.3);
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl must lie in (0, 1], got {}", self.cfl));
        }
        if !(self.kernel.tol > 0.0) || self.kernel.max_iter == 0 {
            return bad("kernel tol and max_iter must be positive".into());
        }
        if !self.q.is_finite() {
            return bad("q must be finite".into());
        }
        if let InitialData::Random { nodes, .. } = self.initial {
            if nodes < 2 {
                return bad("random initial data needs at least 2 nodes".into());
            }
        }
        for spec in [&self.lambda1, &self.lambda2, &self.a, &self.b, &self.c, &self.d, &self.k0] {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn system(&self) -> Result<SystemSpec> {
        let speeds = SpeedPair::new(self.lambda1.clone(), self.lambda2.clone())?;
        SystemSpec::new(speeds, self.a.clone(), self.b.clone(), self.c.clone(), self.d.clone())?.with_reflection(self.q)
    }

    pub fn kernel_options(&self, exec: Exec) -> KernelOptions {
        KernelOptions {
            tol: self.kernel.tol,
            max_iter: self.kernel.max_iter,
            exec,
        }
    }

    pub fn sim_options(&self, exec: Exec) -> SimOptions {
        SimOptions {
            cfl: self.cfl,
            snapshots: self.snapshots,
            exec,
        }
    }

    /// Output directory of this run: `<output_dir>/<id>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("minctl-out"))
            .join(&self.id)
    }
}

/// Piecewise-linear data through `nodes` equispaced values per component,
/// uniform in `[-1, 1]`, from a ChaCha stream seeded with `seed`.
pub fn random_initial(seed: u64, nodes: usize, grid: Grid) -> Result<FieldPair> {
    if nodes < 2 {
        return Err(Error::domain("random initial data needs at least 2 nodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..nodes).map(|k| k as f64 / (nodes - 1) as f64).collect();
    let v1: Vec<f64> = (0..nodes).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let v2: Vec<f64> = (0..nodes).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    Ok(FieldPair::from_fns(
        grid,
        |x| crate::coeffs::interp_sorted(&xs, &v1, x),
        |x| crate::coeffs::interp_sorted(&xs, &v2, x),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementRow {
    pub n: usize,
    pub h: f64,
    pub residual: f64,
}

/// Outcome of a verification. `pass` is a function of the recorded numbers
/// and thresholds only.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub scenario: String,
    pub check: String,
    pub tmin: Option<f64>,
    pub horizon: f64,
    pub refinement: Vec<RefinementRow>,
    pub thresholds: Vec<(String, f64)>,
    /// Further measured quantities.
    pub details: Report,
    pub verdict: String,
    pub pass: bool,
    pub runtime_s: f64,
}

impl VerificationReport {
    pub fn to_report(&self) -> Report {
        let mut r = Report::new();
        r.text("scenario", self.scenario.clone()).text("check", self.check.clone());
        if let Some(t) = self.tmin {
            r.num("Tmin", t);
        }
        r.num("T", self.horizon);
        for row in &self.refinement {
            r.num(format!("n{}_h", row.n), row.h)
                .num(format!("n{}_residual", row.n), row.residual);
        }
        for (k, v) in &self.thresholds {
            r.num(format!("threshold_{k}"), *v);
        }
        for (k, v) in self.details.entries() {
            r.value(k.clone(), v.clone());
        }
        r.text("verdict", self.verdict.clone())
            .flag("pass", self.pass)
            .num("runtime_s", self.runtime_s);
        r
    }

    /// The report without wall-clock fields, for reproducibility checks.
    pub fn deterministic_part(&self) -> Report {
        self.to_report().without("runtime_s")
    }
}

/// Kernels, gains and `g` of one scenario on one grid.
pub struct Synthesis {
    pub kernels: KernelSet,
    pub gains: FeedbackLaw,
    pub g: GridFn,
}

pub fn synthesize(system: &SystemSpec, k0: &CoefficientSpec, grid: Grid, opts: &KernelOptions) -> Result<Synthesis> {
    let gauge = system.gauge()?;
    let kernels = solve_kernels(&gauge, &system.speeds, k0, grid, opts)?;
    let gains = feedback_gains(&kernels, &gauge);
    let g = trace_g(&kernels, &system.speeds);
    Ok(Synthesis { kernels, gains, g })
}

/// Closed-loop run of the configured scenario on `n` cells.
pub fn closed_loop(cfg: &ScenarioConfig, system: &SystemSpec, n: usize, exec: Exec) -> Result<(SimResult, FieldPair)> {
    let grid = Grid::new(n)?;
    let syn = synthesize(system, &cfg.k0, grid, &cfg.kernel_options(exec))?;
    let y0 = cfg.initial.sample(grid)?;
    let sim = simulate(
        system,
        &Control::Feedback(syn.gains),
        &y0,
        cfg.horizon,
        grid,
        &cfg.sim_options(exec),
    )?;
    Ok((sim, y0))
}

fn refinement_levels(n: usize) -> Vec<usize> {
    vec![(n / 2).max(2), n, 2 * n]
}

/// Runs the closed loop at `n/2`, `n`, `2n` and records
/// `||y(T)|| / ||y0||`. Passes when the ratio at `n` is below the threshold
/// and every refinement divides it by a factor in the configured range.
pub fn verify_settling(cfg: &ScenarioConfig) -> Result<VerificationReport> {
    verify_settling_with(cfg, Exec::default())
}

pub fn verify_settling_with(cfg: &ScenarioConfig, exec: Exec) -> Result<VerificationReport> {
    let start = Instant::now();
    cfg.validate()?;
    let system = cfg.system()?;
    let times = times_report(&system)?;
    if cfg.horizon < times.tmin - 1e-9 {
        return Err(Error::Precondition(format!(
            "horizon {} is below the minimal control time {}",
            cfg.horizon, times.tmin
        )));
    }
    let mut refinement = Vec::new();
    for n in refinement_levels(cfg.n) {
        let (sim, y0) = closed_loop(cfg, &system, n, exec)?;
        let norm0 = y0.l2_norm();
        if norm0 == 0.0 {
            return Err(Error::Config("initial data vanishes".into()));
        }
        refinement.push(RefinementRow {
            n,
            h: 1.0 / n as f64,
            residual: sim.final_state().l2_norm() / norm0,
        });
    }
    let s = cfg.settling;
    let at_n = refinement[1].residual;
    let factors: Vec<f64> = refinement.windows(2).map(|w| w[0].residual / w[1].residual).collect();
    let below = at_n <= s.threshold;
    let halving = factors.iter().all(|f| (s.halving_min..=s.halving_max).contains(f));
    let mut details = Report::new();
    for (k, f) in factors.iter().enumerate() {
        details.num(format!("refinement_factor_{}", k + 1), *f);
    }
    details.flag("below_threshold", below).flag("halving", halving);
    Ok(VerificationReport {
        scenario: cfg.id.clone(),
        check: "settling".into(),
        tmin: Some(times.tmin),
        horizon: cfg.horizon,
        refinement,
        thresholds: vec![
            ("residual".into(), s.threshold),
            ("halving_min".into(), s.halving_min),
            ("halving_max".into(), s.halving_max),
        ],
        details,
        verdict: if below && halving {
            "settled".into()
        } else {
            "not settled".into()
        },
        pass: below && halving,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Minimal residual of the canonical least-squares problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeastSquares {
    /// `min ||y^(T)|| / ||y^0||` over the hat-function controls.
    pub residual: f64,
    pub controls: usize,
    pub rank: usize,
    pub sigma_max: f64,
    /// Smallest singular value kept in the minimum-norm solution.
    pub sigma_min: f64,
}

/// The final state of the canonical system as an affine map of the hat
/// coefficients: `y^(T) = r0 + A c` on the spatial nodes (rows `y1` then `y2`).
pub struct ControlMap {
    pub r0: DVector<f64>,
    pub a: DMatrix<f64>,
    /// Square roots of the trapezoid weights of every row.
    pub sqrt_w: DVector<f64>,
    /// Control hat step.
    pub dt: f64,
    /// Weighted L2 norm of `y^0`, the residual scale.
    pub norm0: f64,
}

/// Assembles the control-to-final-state map of the canonical system
/// `y1_t + lambda1 y1_x = 0`, `y2_t + lambda2 y2_x = g y1(t, 0)`,
/// `y2(t, 0) = q y1(t, 0)` from `y^0` with controls spanned by hats of step
/// `h` on `[0, T]`.
pub fn canonical_control_map(
    speeds: &SpeedPair,
    g: &GridFn,
    q: f64,
    yhat0: &FieldPair,
    t: f64,
    exec: Exec,
) -> Result<ControlMap> {
    let grid = g.grid;
    let n = grid.n();
    yhat0.check(n)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {t}")));
    }
    let h = grid.h();
    let m = ((t / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let dt = t / m as f64;
    let hats = |s: f64| -> [(usize, f64); 2] {
        // the two hats that are nonzero at s in [0, T]
        let p = (s / dt).clamp(0.0, m as f64);
        let k = (p.floor() as usize).min(m - 1);
        let w = p - k as f64;
        [(k, 1.0 - w), (k + 1, w)]
    };
    let phi1 = speeds.travel(Component::One);
    let phi2 = speeds.travel(Component::Two);
    let t1 = speeds.t1();
    let y10 = GridFn {
        grid,
        values: yhat0.y1.clone(),
    };
    let y20 = GridFn {
        grid,
        values: yhat0.y2.clone(),
    };
    let outflow0 = |s: f64| y10.at(phi1.inverse(s));
    let step = h / speeds.max_speed(n);

    // row i: (constant part, sparse control coefficients)
    type Row = (f64, Vec<(usize, f64)>);
    let y1_rows: Vec<Row> = exec.map(n + 1, |i| {
        let x = grid.node(i);
        let s_in = t + phi1.eval(x) - t1;
        // the corner s_in = 0 is fed by the first hat
        if s_in >= -1e-12 * t {
            (0.0, hats(s_in.max(0.0)).to_vec())
        } else {
            (y10.at(phi1.inverse(phi1.eval(x) + t)), Vec::new())
        }
    });
    let y2_rows: Vec<Row> = exec.map(n + 1, |i| {
        let x = grid.node(i);
        let px = phi2.eval(x);
        let s_in = t - px;
        let mut r0 = 0.0;
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        let lo = if s_in <= 0.0 {
            r0 += y20.at(phi2.inverse(px - t));
            0.0
        } else {
            if s_in <= t1 {
                r0 += q * outflow0(s_in);
            } else if q != 0.0 {
                coeffs.extend(hats(s_in - t1).iter().map(|&(k, w)| (k, q * w)));
            }
            s_in
        };
        let gx = |s: f64| g.at(phi2.inverse(px + s - t));
        // initial-data part of y1(s, 0)
        let (a, b) = (lo, t.min(t1));
        if b > a {
            let panels = ((b - a) / step).ceil().max(1.0) as usize;
            let hs = (b - a) / panels as f64;
            for p in 0..=panels {
                let s = a + p as f64 * hs;
                let w = if p == 0 || p == panels { 0.5 * hs } else { hs };
                r0 += w * gx(s) * outflow0(s);
            }
        }
        // control part
        let (a, b) = (lo.max(t1), t);
        if b > a {
            let panels = ((b - a) / step).ceil().max(1.0) as usize;
            let hs = (b - a) / panels as f64;
            for p in 0..=panels {
                let s = a + p as f64 * hs;
                let w = if p == 0 || p == panels { 0.5 * hs } else { hs };
                let gw = w * gx(s);
                if gw != 0.0 {
                    coeffs.extend(hats(s - t1).iter().map(|&(k, v)| (k, gw * v)));
                }
            }
        }
        (r0, coeffs)
    });

    let weights = grid.trapezoid_weights();
    let rows = 2 * (n + 1);
    let mut a = DMatrix::<f64>::zeros(rows, m + 1);
    let mut r0 = DVector::<f64>::zeros(rows);
    let mut sqrt_w = DVector::<f64>::zeros(rows);
    for (block, set) in [&y1_rows, &y2_rows].into_iter().enumerate() {
        for (i, (c0, coeffs)) in set.iter().enumerate() {
            let r = block * (n + 1) + i;
            r0[r] = *c0;
            sqrt_w[r] = weights[i].sqrt();
            for &(k, v) in coeffs {
                a[(r, k)] += v;
            }
        }
    }
    let norm0 = yhat0.l2_norm();
    Ok(ControlMap {
        r0,
        a,
        sqrt_w,
        dt,
        norm0,
    })
}

impl ControlMap {
    /// Weighted minimum-norm least squares `min_c ||W^(1/2) (r0 + A c)||`.
    pub fn solve(&self) -> Result<(DVector<f64>, LeastSquares)> {
        let wa = DMatrix::from_fn(self.a.nrows(), self.a.ncols(), |r, k| self.sqrt_w[r] * self.a[(r, k)]);
        let rhs = -self.r0.component_mul(&self.sqrt_w);
        // columns that no row sees are dropped before the decomposition
        let active: Vec<usize> = (0..wa.ncols()).filter(|&k| wa.column(k).iter().any(|v| *v != 0.0)).collect();
        let scale = |res: f64| if self.norm0 > 0.0 { res / self.norm0 } else { res };
        let mut coeffs = DVector::<f64>::zeros(self.a.ncols());
        if active.is_empty() {
            let ls = LeastSquares {
                residual: scale(rhs.norm()),
                controls: self.a.ncols(),
                rank: 0,
                sigma_max: 0.0,
                sigma_min: 0.0,
            };
            return Ok((coeffs, ls));
        }
        let reduced = wa.select_columns(&active);
        let dim = reduced.nrows().max(reduced.ncols()) as f64;
        let svd = reduced.clone().svd(true, true);
        let sigma_max = svd.singular_values.max();
        let eps = sigma_max * 1e-12 * dim;
        let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
        let sigma_min = svd
            .singular_values
            .iter()
            .copied()
            .filter(|s| *s > eps)
            .fold(f64::INFINITY, f64::min);
        let sol = svd
            .solve(&rhs, eps)
            .map_err(|e| Error::domain(format!("least squares failed: {e}")))?;
        for (j, &k) in active.iter().enumerate() {
            coeffs[k] = sol[j];
        }
        let res = (&reduced * &sol - &rhs).norm();
        let residual = scale(res);
        Ok((
            coeffs,
            LeastSquares {
                residual,
                controls: self.a.ncols(),
                rank,
                sigma_max,
                sigma_min,
            },
        ))
    }

    /// The control signal of a coefficient vector.
    pub fn signal(&self, coeffs: &DVector<f64>) -> Signal {
        let times = (0..coeffs.len()).map(|k| k as f64 * self.dt).collect();
        Signal::Samples {
            times,
            values: coeffs.iter().copied().collect(),
        }
    }
}

/// The canonical sharpness problem: `y^1_0 = 1`, `y^2_0 = 0`.
pub fn sharpness_residual(speeds: &SpeedPair, g: &GridFn, q: f64, t: f64, exec: Exec) -> Result<LeastSquares> {
    let grid = g.grid;
    let y0 = FieldPair::from_fns(grid, |_| 1.0, |_| 0.0);
    Ok(canonical_control_map(speeds, g, q, &y0, t, exec)?.solve()?.1)
}

/// Least-squares residual of the canonical system at `n/2`, `n`, `2n`.
/// Below `Tmin - margin` it must stay above the floor and may not drop by
/// more than the allowed fraction; at or above `Tmin` it must fall below
/// the drop threshold at `n`. Times in between are inconclusive.
pub fn verify_sharpness(cfg: &ScenarioConfig, t: f64) -> Result<VerificationReport> {
    verify_sharpness_with(cfg, t, Exec::default())
}

pub fn verify_sharpness_with(cfg: &ScenarioConfig, t: f64, exec: Exec) -> Result<VerificationReport> {
    let start = Instant::now();
    cfg.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Config(format!("T must be positive, got {t}")));
    }
    let system = cfg.system()?;
    let times = times_report(&system)?;
    let sh = cfg.sharpness;
    let margin = sh.margin_fraction * times.tunif;
    let mut refinement = Vec::new();
    let mut details = Report::new();
    for n in refinement_levels(cfg.n) {
        let grid = Grid::new(n)?;
        let syn = synthesize(&system, &cfg.k0, grid, &cfg.kernel_options(exec))?;
        let ls = sharpness_residual(&system.speeds, &syn.g, system.q, t, exec)?;
        refinement.push(RefinementRow {
            n,
            h: grid.h(),
            residual: ls.residual,
        });
        details
            .int(format!("n{n}_rank"), ls.rank)
            .int(format!("n{n}_controls"), ls.controls)
            .num(format!("n{n}_condition"), ls.sigma_max / ls.sigma_min);
    }
    let at_n = refinement[1].residual;
    let (first, last) = (refinement[0].residual, refinement[2].residual);
    let decrease = if first > 0.0 { 1.0 - last / first } else { 0.0 };
    details.num("margin", margin).num("floor_decrease", decrease);
    let (verdict, pass) = if t <= times.tmin - margin {
        let ok = at_n >= sh.floor && decrease <= sh.max_floor_decrease;
        (
            if ok {
                "not controllable (residual floor)"
            } else {
                "no residual floor"
            },
            ok,
        )
    } else if t >= times.tmin {
        let ok = at_n <= sh.drop && last <= first;
        (
            if ok {
                "controllable (residual drops)"
            } else {
                "residual does not drop"
            },
            ok,
        )
    } else {
        ("inconclusive (within margin of Tmin)", false)
    };
    Ok(VerificationReport {
        scenario: cfg.id.clone(),
        check: "sharpness".into(),
        tmin: Some(times.tmin),
        horizon: t,
        refinement,
        thresholds: vec![
            ("floor".into(), sh.floor),
            ("max_floor_decrease".into(), sh.max_floor_decrease),
            ("drop".into(), sh.drop),
            ("margin_fraction".into(), sh.margin_fraction),
        ],
        details,
        verdict: verdict.into(),
        pass,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Reflection example: `lambda = (-1, 1)`, `a = d = 0`, `b = c = pi`,
/// `y1(t, 1) = k y2(t, 1)`, `y2(t, 0) = 0`, which has the growing mode
/// `e^(sigma t) (y1_0, y2_0)`.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub k: f64,
    /// `None` on the degenerate branch `k = 1 + 1/pi`.
    pub theta: Option<f64>,
    pub sigma: f64,
    pub y0: FieldPair,
    pub report: VerificationReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleOptions {
    pub n: usize,
    pub horizon: f64,
    pub window: (f64, f64),
    /// Allowed relative deviation of the measured rate from `sigma`.
    pub rel_tol: f64,
    pub exec: Exec,
}

impl Default for CounterexampleOptions {
    fn default() -> Self {
        CounterexampleOptions {
            n: 800,
            horizon: 2.5,
            window: (0.5, 2.5),
            rel_tol: 0.05,
            exec: Exec::default(),
        }
    }
}

pub fn counterexample_system() -> Result<SystemSpec> {
    SystemSpec::new(
        SpeedPair::constant(-1.0, 1.0)?,
        CoefficientSpec::zero(),
        CoefficientSpec::constant(PI),
        CoefficientSpec::constant(PI),
        CoefficientSpec::zero(),
    )
}

/// Growth exponent and mode profile `y2_0` (with derivative) for reflection `k`.
pub struct Mode {
    pub theta: Option<f64>,
    pub sigma: f64,
    pub y2: Box<dyn Fn(f64) -> f64>,
    pub dy2: Box<dyn Fn(f64) -> f64>,
}

pub fn reflection_mode(k: f64) -> Result<Mode> {
    if !k.is_finite() {
        return Err(Error::domain(format!("reflection gain must be finite, got {k}")));
    }
    let critical = 1.0 + 1.0 / PI;
    if (k - critical).abs() <= 1e-12 {
        return Ok(Mode {
            theta: None,
            sigma: PI,
            y2: Box::new(|x| PI * x),
            dy2: Box::new(|_| PI),
        });
    }
    if k < critical {
        // sqrt(1 - th^2) + th cot(th pi) decreases from 1 + 1/pi to -inf on (0, 1)
        let f = |th: f64| (1.0 - th * th).sqrt() + th / (th * PI).tan() - k;
        let (lo, hi) = (1e-9, 1.0 - 1e-12);
        let th = bisect(f, lo, hi).ok_or_else(|| Error::Bracketing {
            branch: "sqrt(1-th^2)+th*cot(th*pi)".into(),
            lo,
            hi,
        })?;
        let a = th * PI;
        Ok(Mode {
            theta: Some(th),
            sigma: PI * (1.0 - th * th).sqrt(),
            y2: Box::new(move |x| (a * x).sin()),
            dy2: Box::new(move |x| a * (a * x).cos()),
        })
    } else {
        let f = |th: f64| (1.0 + th * th).sqrt() + th / (th * PI).tanh() - k;
        let lo = 1e-9;
        let mut hi = 1.0;
        while f(hi) < 0.0 && hi < 1e6 {
            hi *= 2.0;
        }
        let th = bisect(f, lo, hi).ok_or_else(|| Error::Bracketing {
            branch: "sqrt(1+th^2)+th*coth(th*pi)".into(),
            lo,
            hi,
        })?;
        let a = th * PI;
        Ok(Mode {
            theta: Some(th),
            sigma: PI * (1.0 + th * th).sqrt(),
            y2: Box::new(move |x| 2.0 * (a * x).sinh()),
            dy2: Box::new(move |x| 2.0 * a * (a * x).cosh()),
        })
    }
}

/// Root of `f` on `[lo, hi]` given a sign change.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo.is_finite() && fhi.is_finite()) || flo.signum() == fhi.signum() {
        return None;
    }
    let rising = flo < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Builds the growing mode for reflection gain `k`, simulates it and
/// compares the measured growth rate with `sigma`.
pub fn counterexample(k: f64) -> Result<Counterexample> {
    counterexample_with(k, &CounterexampleOptions::default())
}

pub fn counterexample_with(k: f64, opts: &CounterexampleOptions) -> Result<Counterexample> {
    let start = Instant::now();
    let mode = reflection_mode(k)?;
    let grid = Grid::new(opts.n)?;
    let (sigma, y2, dy2) = (mode.sigma, &mode.y2, &mode.dy2);
    let y0 = FieldPair::from_fns(grid, |x| (sigma * y2(x) + dy2(x)) / PI, |x| y2(x));
    let system = counterexample_system()?;
    let sim_opts = SimOptions {
        cfl: 0.9,
        snapshots: 200,
        exec: opts.exec,
    };
    let sim = simulate(&system, &Control::Reflection(k), &y0, opts.horizon, grid, &sim_opts)?;
    let rate = growth_rate(&sim, opts.window)?;
    let rel = (rate - sigma).abs() / sigma.abs();
    let pass = rel <= opts.rel_tol;
    let mut details = Report::new();
    details.num("k", k);
    if let Some(th) = mode.theta {
        details.num("theta", th);
    } else {
        details.text("theta", "degenerate");
    }
    details
        .num("sigma", sigma)
        .num("measured_rate", rate)
        .num("relative_error", rel)
        .num("window_start", opts.window.0)
        .num("window_end", opts.window.1)
        .int("n", opts.n);
    let report = VerificationReport {
        scenario: format!("reflection k={}", crate::output::fmt12(k)),
        check: "counterexample".into(),
        tmin: None,
        horizon: opts.horizon,
        refinement: Vec::new(),
        thresholds: vec![("relative_error".into(), opts.rel_tol)],
        details,
        verdict: if pass {
            "growth rate matches".into()
        } else {
            "growth rate mismatch".into()
        },
        pass,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    Ok(Counterexample {
        k,
        theta: mode.theta,
        sigma,
        y0,
        report,
    })
}

/// Times report of a config, for the CLI.
pub fn scenario_times(cfg: &ScenarioConfig) -> Result<TimesReport> {
    times_report(&cfg.system()?)
}
