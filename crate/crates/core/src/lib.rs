//! Recovery of a causal-effect variable from an observed linear mixture.
//!
//! Given samples of a stimulus `S`, a mixture `F = A·C` of causal variables and
//! a filter `v` extracting a designated cause `C1 = vᵀF`, the solvers here search
//! for a unit filter `w ⟂ v` whose output `wᵀF` depends on `C1` while being
//! conditionally independent of `S` given `C1`.
//!
//! Two dependence criteria are available:
//!
//! * [`Mode::Linear`]: partial correlations,
//! * [`Mode::Nonlinear`]: HSIC for the marginal term and a kernel ridge regression
//!   residual test for the conditional term, optimised jointly with the
//!   regression width and ridge on `sphere × ℝ × ℝ`.
//!
//! The [`bandpower`] module lifts both onto trial time series by moving the
//! log-bandpower computation inside the objective, and [`synthetic`] generates
//! ground-truth benchmarks.
//!
//! Data-parallel loops (restarts, per-trial spectra, permutation nulls, seed
//! sweeps) run on rayon when the `parallel` feature is enabled and fall back to
//! plain iteration otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod bandpower;
pub mod error;
pub mod independence;
pub mod manifold;
pub mod merlin;
pub mod par;
pub mod regression;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
pub use merlin::{solve, Dataset, Mode, SolveConfig, SolveReport, SolveStatus};
