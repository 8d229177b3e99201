//! Minimal null-control time and backstepping stabilization of 2x2 linear
//! hyperbolic balance laws
//!
//! ```text
//! y1_t + lambda1(x) y1_x = a(x) y1 + b(x) y2,    y1(t, 1) = u(t)
//! y2_t + lambda2(x) y2_x = c(x) y1 + d(x) y2,    y2(t, 0) = 0
//! ```
//!
//! with `lambda1 < 0 < lambda2` on `[0, 1]`.
//!
//! * [`mintime`]: crossing times, the minimal control time and the
//!   convolution-support check behind it.
//! * [`kernels`] and [`transforms`]: the gauge and Volterra transforms to
//!   the canonical form, and the feedback gains that settle the system in
//!   the minimal time.
//! * [`simulator`]: upwind simulation of the physical system and the
//!   explicit solution of the canonical one.
//! * [`harness`]: settling and sharpness verifications, the unstable
//!   reflection example, scenario configs; [`cli`] wraps them.

pub mod characteristics;
pub mod cli;
pub mod coeffs;
pub mod error;
pub mod exec;
pub mod harness;
pub mod kernels;
pub mod mintime;
pub mod output;
pub mod simulator;
pub mod transforms;

pub use characteristics::{Component, SpeedPair, TravelTime};
pub use coeffs::{CoefficientSpec, Grid, GridFn, PrefixEstimate};
pub use error::{Error, Result};
pub use exec::Exec;
pub use kernels::{feedback_gains, solve_kernels, trace_g, FeedbackLaw, KernelOptions, KernelSet};
pub use mintime::{canonical_min_time, nxn_canonical_min_time, times_report, titchmarsh_check, TimesReport};
pub use simulator::{canonical_solution, growth_rate, simulate, Control, SimOptions, SimResult, SystemSpec};
pub use transforms::{diag_removal, volterra_apply, volterra_invert, DiagGauge, FieldPair, TriMatrix};
