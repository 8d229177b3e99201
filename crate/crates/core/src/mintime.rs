//! Crossing times, the minimal null-control time and the convolution
//! support check that underlies it.

use serde::Serialize;

use crate::characteristics::{Component, SpeedPair};
use crate::coeffs::{
    vanishing_prefix_samples, CoefficientSpec, CumulativeTable, Grid, GridFn, PrefixEstimate, DEFAULT_PREFIX_RTOL,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::output::Report;
use crate::simulator::SystemSpec;

/// Grid used to locate the vanishing prefix of `c`.
pub const REPORT_GRID: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimesReport {
    pub t1: f64,
    pub t2: f64,
    pub topt: f64,
    pub tunif: f64,
    pub xbar: f64,
    /// Vanishing prefix of `c` on `(0, xbar)`.
    pub xc: f64,
    /// Upper end of the bracket containing the true prefix.
    pub xc_upper: f64,
    /// Values of `c` below the tolerance were treated as zero.
    pub tolerance_limited: bool,
    pub tmin: f64,
    pub constant_speed_note: Option<String>,
}

impl TimesReport {
    pub fn to_report(&self) -> Report {
        let mut r = Report::new();
        r.num("T1", self.t1)
            .num("T2", self.t2)
            .num("Topt", self.topt)
            .num("Tunif", self.tunif)
            .num("xbar", self.xbar)
            .num("Xc", self.xc)
            .num("Xc_upper", self.xc_upper)
            .flag("tolerance_limited", self.tolerance_limited)
            .num("Tmin", self.tmin);
        if let Some(note) = &self.constant_speed_note {
            r.text("constant_speed_note", note.clone());
        }
        r
    }
}

/// `Tmin = max(Topt, int_{Xc}^1 (1/(-lambda1) + 1/lambda2))` where `Xc` is
/// the vanishing prefix of `c` on `(0, xbar)` and `psi(xbar) = phi_2(1)`.
pub fn times_report(system: &SystemSpec) -> Result<TimesReport> {
    times_report_for(&system.speeds, &system.c)
}

pub fn times_report_for(speeds: &SpeedPair, c: &CoefficientSpec) -> Result<TimesReport> {
    c.validate()?;
    let (t1, t2) = (speeds.t1(), speeds.t2());
    let (topt, tunif) = (t1.max(t2), t1 + t2);
    let xbar = speeds.psi_inv(t2);
    let grid = Grid::new(REPORT_GRID)?;
    let est = PrefixEstimate::of_spec(c, xbar, DEFAULT_PREFIX_RTOL, &grid)?;
    let xc = est.value.min(xbar);
    let tmin = topt.max(tunif - speeds.psi(xc)).min(tunif);
    let constant_speed_note = speeds.is_constant().then(|| {
        format!(
            "constant speeds: null controllable in time T >= Topt iff c = 0 in (0, 1 - T/Tunif); 1 - Tmin/Tunif = {}",
            crate::output::fmt12(1.0 - tmin / tunif)
        )
    });
    Ok(TimesReport {
        t1,
        t2,
        topt,
        tunif,
        xbar,
        xc,
        xc_upper: est.upper.min(xbar),
        tolerance_limited: est.tolerance_limited,
        tmin,
        constant_speed_note,
    })
}

/// Prefix tolerance for a `g` produced by the kernel solver.
pub fn kernel_g_tolerance(residual: f64) -> f64 {
    (10.0 * residual).max(1e-8)
}

/// `max(T1 + int_{X1(g)}^1 1/lambda2, T2)` for the canonical system.
pub fn canonical_min_time(speeds: &SpeedPair, g: &GridFn, tol: f64) -> Result<f64> {
    let x1 = vanishing_prefix_samples(&g.values, &g.grid, 1.0, tol)?;
    let phi2 = speeds.travel(Component::Two);
    Ok((speeds.t1() + phi2.total() - phi2.eval(x1)).max(speeds.t2()))
}

/// Minimal time of the `n x n` canonical system with one negative speed
/// `lambda_1 < 0 < lambda_2 < ... < lambda_n`, couplings `g_{i-1}` and
/// reflections `q_{i-1}` (`i = 2..n`):
/// `max(T1 + max_i T(lambda_i, g_{i-1}, q_{i-1}), T2)` where
/// `T = int_{X1(g)}^1 1/lambda_i` when `q = 0` and `T_i` otherwise.
pub fn nxn_canonical_min_time(speeds: &[CoefficientSpec], g: &[GridFn], q: &[f64], tol: f64) -> Result<f64> {
    let n = speeds.len();
    if n < 2 {
        return Err(Error::SpeedOrdering(format!("need at least two speeds, got {n}")));
    }
    if g.len() != n - 1 || q.len() != n - 1 {
        return Err(Error::domain(format!(
            "need {} couplings and reflections, got {} and {}",
            n - 1,
            g.len(),
            q.len()
        )));
    }
    for s in speeds {
        s.validate()?;
    }
    check_ordering(speeds)?;
    let cells = crate::characteristics::DEFAULT_TABLE_CELLS;
    let tables: Vec<CumulativeTable> = speeds
        .iter()
        .map(|s| CumulativeTable::new(|x| 1.0 / s.at(x).abs(), cells))
        .collect();
    let mut worst: f64 = 0.0;
    for i in 1..n {
        let contribution = if q[i - 1] != 0.0 {
            tables[i].total()
        } else {
            let gi = &g[i - 1];
            let x1 = vanishing_prefix_samples(&gi.values, &gi.grid, 1.0, tol)?;
            tables[i].total() - tables[i].at(x1)
        };
        worst = worst.max(contribution);
    }
    Ok((tables[0].total() + worst).max(tables[1].total()))
}

fn check_ordering(speeds: &[CoefficientSpec]) -> Result<()> {
    let samples = 4096;
    for k in 0..=2 * samples {
        let x = k as f64 / (2 * samples) as f64;
        let v: Vec<f64> = speeds.iter().map(|s| s.at(x)).collect();
        if !(v[0] < 0.0) || !(v[1] > 0.0) {
            return Err(Error::SpeedOrdering(format!("need lambda_1 < 0 < lambda_2 at x = {x}")));
        }
        if let Some(i) = (1..v.len() - 1).find(|&i| !(v[i] < v[i + 1])) {
            return Err(Error::SpeedOrdering(format!(
                "lambda_{} >= lambda_{} at x = {x}",
                i + 1,
                i + 2
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Vanishes,
    Nonvanishing,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Vanishes => "vanishes",
            Verdict::Nonvanishing => "nonvanishing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TitchmarshCheck {
    pub convolution_max: f64,
    pub prefix_a: f64,
    pub prefix_b: f64,
    pub prefix_sum: f64,
    pub verdict: Verdict,
    /// The verdict agrees with `prefix_sum >= tau`, allowing one grid cell.
    pub consistent: bool,
    pub h: f64,
}

impl TitchmarshCheck {
    pub fn to_report(&self) -> Report {
        let mut r = Report::new();
        r.num("convolution_max", self.convolution_max)
            .num("prefix_a", self.prefix_a)
            .num("prefix_b", self.prefix_b)
            .num("prefix_sum", self.prefix_sum)
            .text("verdict", self.verdict.as_str())
            .flag("consistent", self.consistent)
            .num("h", self.h);
        r
    }
}

/// Samples `alpha`, `beta` at `tau k / m`, `k = 0..=m`; the trapezoid
/// convolution `(alpha * beta)(tau_j)` is evaluated at every node.
pub fn titchmarsh_check(alpha: &[f64], beta: &[f64], tau: f64, tol: f64) -> Result<TitchmarshCheck> {
    titchmarsh_check_with(alpha, beta, tau, tol, Exec::default())
}

pub fn titchmarsh_check_with(alpha: &[f64], beta: &[f64], tau: f64, tol: f64, exec: Exec) -> Result<TitchmarshCheck> {
    if alpha.len() != beta.len() || alpha.len() < 2 {
        return Err(Error::domain(
            "alpha and beta need the same sampling with at least two points",
        ));
    }
    if !(tau > 0.0 && tau.is_finite()) || !(tol >= 0.0) {
        return Err(Error::domain(format!("need tau > 0 and tol >= 0, got {tau}, {tol}")));
    }
    let m = alpha.len() - 1;
    let h = tau / m as f64;
    let conv = exec.map(m + 1, |j| {
        if j == 0 {
            return 0.0;
        }
        let term = |k: usize| alpha[j - k] * beta[k];
        h * ((1..j).map(term).sum::<f64>() + 0.5 * (term(0) + term(j)))
    });
    let convolution_max = conv.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let prefix = |v: &[f64]| match v.iter().position(|x| x.abs() > tol) {
        Some(0) => 0.0,
        Some(k) => (k - 1) as f64 * h,
        None => tau,
    };
    let (prefix_a, prefix_b) = (prefix(alpha), prefix(beta));
    let prefix_sum = prefix_a + prefix_b;
    let verdict = if convolution_max <= tol {
        Verdict::Vanishes
    } else {
        Verdict::Nonvanishing
    };
    let expected = prefix_sum >= tau;
    let consistent = (prefix_sum - tau).abs() <= h * (1.0 + 1e-9) || expected == (verdict == Verdict::Vanishes);
    Ok(TitchmarshCheck {
        convolution_max,
        prefix_a,
        prefix_b,
        prefix_sum,
        verdict,
        consistent,
        h,
    })
}

/// Samples `t -> f(t)` at `tau k / m`.
pub fn sample_on(tau: f64, m: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..=m).map(|k| f(tau * k as f64 / m as f64)).collect()
}
