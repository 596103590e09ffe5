//! Objectives and the end-to-end solver.
//!
//! Both objectives score a candidate output `Y_w` by
//! `dep(C1, Y_w) − dep(S, Y_w | C1)` and are maximised over unit `w ⟂ v`,
//! parametrised as `w = V·b` with `V` an orthonormal basis of `v⊥` and `b` on the
//! `(d−1)`-sphere.
//!
//! * linear: `|ρ(C1, Y | S)| − |ρ(S, Y | C1)|`
//! * non-linear: `HSIC(C1, Y) − HSIC((S, C1), R)`, where `R` are three-fold
//!   cross-fitted kernel ridge residuals of `Y` on `C1` with width `|σ|` and
//!   ridge `|θ|`, optimised jointly with `b`.
//!
//! Kernel bandwidths of the `Y` and `R` kernels follow the median heuristic at
//! every evaluation and are held fixed when differentiating.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::independence::{
    center_gram, gram_from_sq_distances, hsic_centered, hsic_gradient_1d, median_bandwidth,
    median_kernel_matrix, squared_distances_1d, stack_columns,
};
use crate::manifold::{
    orthocomplement_basis, steepest_descent, DescentConfig, DescentStatus, ProductPoint,
    ProductVector, SpherePoint,
};
use crate::par;
use crate::regression::FoldPlan;
use crate::stats::{self, pearson, Standardization};

/// Floor applied to partial-correlation denominators inside the objective.
pub const DENOMINATOR_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Linear,
    Nonlinear,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Linear => f.write_str("linear"),
            Mode::Nonlinear => f.write_str("nonlinear"),
        }
    }
}

/// Stimulus samples, mixture samples (rows) and the filter `v` with `C1 = vᵀF`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    stimulus: Vec<f64>,
    mixture: DMatrix<f64>,
    v: DVector<f64>,
}

impl Dataset {
    pub fn new(stimulus: Vec<f64>, mixture: DMatrix<f64>, v: DVector<f64>) -> Result<Self> {
        let (m, d) = mixture.shape();
        if stimulus.len() != m {
            return Err(invalid_input(format!(
                "stimulus has {} samples but the mixture has {m} rows",
                stimulus.len()
            )));
        }
        if v.len() != d {
            return Err(invalid_input(format!(
                "v has length {} but the mixture has {d} columns",
                v.len()
            )));
        }
        if m < 6 {
            return Err(invalid_input(format!("need at least 6 samples, got {m}")));
        }
        if d < 3 {
            return Err(invalid_input(format!("need at least 3 channels, got {d}")));
        }
        if stimulus.iter().chain(mixture.iter()).chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(invalid_input("dataset contains non-finite values"));
        }
        if !(v.norm() > 0.0) {
            return Err(invalid_input("v must be non-zero"));
        }
        if !(stats::variance(&stimulus) > 0.0) {
            return Err(invalid_input("stimulus has zero variance"));
        }
        Ok(Self {
            stimulus,
            mixture,
            v,
        })
    }

    pub fn stimulus(&self) -> &[f64] {
        &self.stimulus
    }

    pub fn mixture(&self) -> &DMatrix<f64> {
        &self.mixture
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn samples(&self) -> usize {
        self.mixture.nrows()
    }

    pub fn channels(&self) -> usize {
        self.mixture.ncols()
    }

    /// `C1 = F·v` in input units.
    pub fn c1(&self) -> Vec<f64> {
        (&self.mixture * &self.v).as_slice().to_vec()
    }

    /// `Y_w = F·w` in input units.
    pub fn output(&self, w: &DVector<f64>) -> Vec<f64> {
        (&self.mixture * w).as_slice().to_vec()
    }
}

/// The per-sample scalar `Y_w` produced by a filter `w`, with its Jacobian.
pub trait FeatureMap: Sync {
    /// Length of `w`.
    fn dim(&self) -> usize;
    /// Number of samples of `Y_w`.
    fn samples(&self) -> usize;
    /// `Y_w`, and the `samples × dim` Jacobian `∂Y/∂w` when requested.
    fn evaluate(&self, w: &DVector<f64>, jacobian: bool) -> Result<Features>;
}

#[derive(Debug, Clone)]
pub struct Features {
    pub values: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
}

/// `Y_w = X·w` for a fixed sample matrix `X`.
#[derive(Debug, Clone)]
pub struct LinearFeatures {
    samples: DMatrix<f64>,
}

impl LinearFeatures {
    pub fn new(samples: DMatrix<f64>) -> Self {
        Self { samples }
    }
}

impl FeatureMap for LinearFeatures {
    fn dim(&self) -> usize {
        self.samples.ncols()
    }

    fn samples(&self) -> usize {
        self.samples.nrows()
    }

    fn evaluate(&self, w: &DVector<f64>, jacobian: bool) -> Result<Features> {
        Ok(Features {
            values: (&self.samples * w).as_slice().to_vec(),
            jacobian: jacobian.then(|| self.samples.clone()),
        })
    }
}

/// The solver's view of a problem: standardised stimulus and `C1`, the
/// feature map producing `Y_w`, and the basis of `v⊥`.
pub struct Problem<'a> {
    features: &'a dyn FeatureMap,
    stimulus: Vec<f64>,
    c1: Vec<f64>,
    v: DVector<f64>,
    basis: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    /// `v` is expressed in the coordinates of `w` used by `features`.
    pub fn new(
        features: &'a dyn FeatureMap,
        stimulus: &[f64],
        c1: &[f64],
        v: &DVector<f64>,
    ) -> Result<Self> {
        let m = features.samples();
        if stimulus.len() != m || c1.len() != m {
            return Err(invalid_input(format!(
                "feature map has {m} samples, stimulus {} and C1 {}",
                stimulus.len(),
                c1.len()
            )));
        }
        if v.len() != features.dim() {
            return Err(invalid_input(format!(
                "v has length {} but filters have length {}",
                v.len(),
                features.dim()
            )));
        }
        if features.dim() < 3 {
            return Err(invalid_input("need at least 3 channels"));
        }
        if m < 6 {
            return Err(invalid_input(format!("need at least 6 samples, got {m}")));
        }
        let v = v / v.norm();
        let basis = orthocomplement_basis(&v)?;
        Ok(Self {
            features,
            stimulus: stats::standardize(stimulus)?,
            c1: stats::standardize(c1)?,
            v,
            basis,
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn stimulus(&self) -> &[f64] {
        &self.stimulus
    }

    pub fn c1(&self) -> &[f64] {
        &self.c1
    }

    pub fn filter(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.basis * b
    }

    fn output(&self, b: &DVector<f64>, jacobian: bool) -> Result<Features> {
        let w = self.filter(b);
        let f = self.features.evaluate(&w, jacobian)?;
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("Y_w is not finite".into()));
        }
        Ok(f)
    }

    /// `Vᵀ·Jᵀ·g`.
    fn pull_to_sphere(&self, jacobian: &DMatrix<f64>, g: &[f64]) -> DVector<f64> {
        let gw = jacobian.transpose() * DVector::from_column_slice(g);
        self.basis.transpose() * gw
    }
}

/// One objective evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    /// `dep(C1, Y_w)`.
    pub dep: f64,
    /// `dep(S, Y_w | C1)` proxy.
    pub conddep: f64,
    /// Gradient of `value` with respect to `(b, σ, θ)`, if requested.
    pub gradient: Option<ProductVector>,
    /// A partial-correlation denominator hit its floor.
    pub degenerate: bool,
    /// Bandwidths of the `Y_w` and residual kernels (non-linear only).
    pub bandwidths: Option<Bandwidths>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidths {
    pub output: f64,
    pub residual: f64,
}

/// How the `Y_w` and residual kernel bandwidths are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthPolicy {
    /// Median heuristic at every evaluation.
    Median,
    /// Fixed values, e.g. to finite-difference a frozen objective.
    Fixed(Bandwidths),
}

fn correlation_gradient(u_hat: &[f64], y_c: &[f64], y_norm: f64, r: f64) -> Vec<f64> {
    u_hat
        .iter()
        .zip(y_c)
        .map(|(u, y)| (u - r * y / y_norm) / y_norm)
        .collect()
}

fn unit_centered(x: &[f64]) -> Result<Vec<f64>> {
    let c = stats::centered(x);
    let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(Error::DegenerateConditioning("zero-variance sample".into()));
    }
    Ok(c.into_iter().map(|v| v / n).collect())
}

/// Partial-correlation objective `|ρ(C1, Y | S)| − |ρ(S, Y | C1)|`.
pub struct LinearObjective<'p, 'a> {
    problem: &'p Problem<'a>,
    s_hat: Vec<f64>,
    c1_hat: Vec<f64>,
    r_c1_s: f64,
}

impl<'p, 'a> LinearObjective<'p, 'a> {
    pub fn new(problem: &'p Problem<'a>) -> Result<Self> {
        Ok(Self {
            problem,
            s_hat: unit_centered(&problem.stimulus)?,
            c1_hat: unit_centered(&problem.c1)?,
            r_c1_s: pearson(&problem.c1, &problem.stimulus)?,
        })
    }

    pub fn evaluate(&self, b: &DVector<f64>, gradient: bool) -> Result<Evaluation> {
        let out = self.problem.output(b, gradient)?;
        let y_c = stats::centered(&out.values);
        let y_norm = y_c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(y_norm > 0.0) {
            return Err(Error::DegenerateConditioning("Y_w has zero variance".into()));
        }
        let dot = |u: &[f64]| u.iter().zip(&y_c).map(|(a, b)| a * b).sum::<f64>() / y_norm;
        let a = dot(&self.c1_hat).clamp(-1.0, 1.0);
        let s = dot(&self.s_hat).clamp(-1.0, 1.0);
        let c = self.r_c1_s;
        let k = (1.0 - c * c).max(0.0).sqrt();

        let raw1 = k * (1.0 - s * s).max(0.0).sqrt();
        let raw2 = k * (1.0 - a * a).max(0.0).sqrt();
        let floored1 = raw1 < DENOMINATOR_FLOOR;
        let floored2 = raw2 < DENOMINATOR_FLOOR;
        let d1 = raw1.max(DENOMINATOR_FLOOR);
        let d2 = raw2.max(DENOMINATOR_FLOOR);
        let t1 = (a - c * s) / d1;
        let t2 = (s - c * a) / d2;
        let dep = t1.abs();
        let conddep = t2.abs();

        let grad = if let Some(jac) = out.jacobian.as_ref() {
            let dt1_da = 1.0 / d1;
            let dt1_ds = -c / d1 + if floored1 { 0.0 } else { t1 * s / (1.0 - s * s) };
            let dt2_ds = 1.0 / d2;
            let dt2_da = -c / d2 + if floored2 { 0.0 } else { t2 * a / (1.0 - a * a) };
            let (sg1, sg2) = (t1.signum(), t2.signum());
            let dv_da = sg1 * dt1_da - sg2 * dt2_da;
            let dv_ds = sg1 * dt1_ds - sg2 * dt2_ds;
            let ga = correlation_gradient(&self.c1_hat, &y_c, y_norm, a);
            let gs = correlation_gradient(&self.s_hat, &y_c, y_norm, s);
            let gy: Vec<f64> = ga
                .iter()
                .zip(&gs)
                .map(|(x, y)| dv_da * x + dv_ds * y)
                .collect();
            Some(ProductVector {
                sphere: self.problem.pull_to_sphere(jac, &gy),
                scalars: Vec::new(),
            })
        } else {
            None
        };

        Ok(Evaluation {
            value: dep - conddep,
            dep,
            conddep,
            gradient: grad,
            degenerate: floored1 || floored2,
            bandwidths: None,
        })
    }
}

/// HSIC objective `HSIC(C1, Y) − HSIC((S, C1), R_{σ,θ})` on `sphere × ℝ × ℝ`.
pub struct NonlinearObjective<'p, 'a> {
    problem: &'p Problem<'a>,
    c1_centered: DMatrix<f64>,
    joint_centered: DMatrix<f64>,
    plan: FoldPlan,
}

impl<'p, 'a> NonlinearObjective<'p, 'a> {
    pub fn new(problem: &'p Problem<'a>) -> Result<Self> {
        let c1 = crate::independence::column(&problem.c1);
        let joint = stack_columns(&[&problem.stimulus, &problem.c1])?;
        Ok(Self {
            problem,
            c1_centered: median_kernel_matrix(&c1)?.centered(),
            joint_centered: median_kernel_matrix(&joint)?.centered(),
            plan: FoldPlan::new(problem.c1.len())?,
        })
    }

    /// `p.scalars` must hold `(σ, θ)`.
    pub fn evaluate(
        &self,
        p: &ProductPoint,
        policy: BandwidthPolicy,
        gradient: bool,
    ) -> Result<Evaluation> {
        let [sigma, theta] = p.scalars[..] else {
            return Err(invalid_input("non-linear objective expects (σ, θ) scalars"));
        };
        self.evaluate_at(p.sphere.coordinates(), sigma, theta, policy, gradient)
    }

    /// As [`Self::evaluate`] for an arbitrary (not necessarily unit) `b`; the
    /// gradient is the Euclidean one in `(b, σ, θ)`.
    pub fn evaluate_at(
        &self,
        b: &DVector<f64>,
        sigma: f64,
        theta: f64,
        policy: BandwidthPolicy,
        gradient: bool,
    ) -> Result<Evaluation> {
        let out = self.problem.output(b, gradient)?;
        let y = &out.values;

        let d2_y = squared_distances_1d(y);
        let fit = self.plan.fit(&self.problem.c1, y, sigma, theta)?;
        let r = fit.residuals();
        let d2_r = squared_distances_1d(r);
        let bw = match policy {
            BandwidthPolicy::Median => Bandwidths {
                output: median_bandwidth(&d2_y),
                residual: median_bandwidth(&d2_r),
            },
            BandwidthPolicy::Fixed(bw) => bw,
        };
        let l_y = gram_from_sq_distances(&d2_y, bw.output);
        let l_r = gram_from_sq_distances(&d2_r, bw.residual);
        let dep = hsic_centered(&self.c1_centered, &center_gram(&l_y));
        let conddep = hsic_centered(&self.joint_centered, &center_gram(&l_r));

        let grad = if let Some(jac) = out.jacobian.as_ref() {
            let g_dep = hsic_gradient_1d(&self.c1_centered, &l_y, y, bw.output);
            let g_res = hsic_gradient_1d(&self.joint_centered, &l_r, r, bw.residual);
            let pb = fit.pullback(&g_res)?;
            let gy: Vec<f64> = g_dep.iter().zip(&pb.targets).map(|(a, b)| a - b).collect();
            Some(ProductVector {
                sphere: self.problem.pull_to_sphere(jac, &gy),
                scalars: vec![-pb.sigma, -pb.theta],
            })
        } else {
            None
        };

        Ok(Evaluation {
            value: dep - conddep,
            dep,
            conddep,
            gradient: grad,
            degenerate: false,
            bandwidths: Some(bw),
        })
    }
}

/// Objective dispatch shared by the solver.
pub enum Objective<'p, 'a> {
    Linear(LinearObjective<'p, 'a>),
    Nonlinear(NonlinearObjective<'p, 'a>),
}

impl<'p, 'a> Objective<'p, 'a> {
    pub fn new(problem: &'p Problem<'a>, mode: Mode) -> Result<Self> {
        Ok(match mode {
            Mode::Linear => Objective::Linear(LinearObjective::new(problem)?),
            Mode::Nonlinear => Objective::Nonlinear(NonlinearObjective::new(problem)?),
        })
    }

    pub fn evaluate(&self, p: &ProductPoint, gradient: bool) -> Result<Evaluation> {
        match self {
            Objective::Linear(o) => o.evaluate(p.sphere.coordinates(), gradient),
            Objective::Nonlinear(o) => o.evaluate(p, BandwidthPolicy::Median, gradient),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub descent: DescentConfig,
    pub restarts: usize,
    pub seed: u64,
    pub initial_sigma: f64,
    pub initial_theta: f64,
    /// Run restarts on the rayon pool (needs the `parallel` feature).
    pub parallel: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            descent: DescentConfig::default(),
            restarts: 5,
            seed: 0,
            initial_sigma: 1.0,
            initial_theta: 0.1,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    StepUnderflow,
}

/// Result of one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    /// Final objective value, or `None` when the restart failed.
    pub objective_value: Option<f64>,
    pub iterations: usize,
    pub status: String,
}

/// Solver output for a problem posed in the solver's coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub mode: Mode,
    /// Unit filter in solver coordinates, orthogonal to `v`.
    pub w: Vec<f64>,
    /// Unit constraint vector in the same coordinates (`v / scale`, renormalised).
    pub v: Vec<f64>,
    pub objective_value: f64,
    pub dep_term: f64,
    pub conddep_term: f64,
    pub sigma: Option<f64>,
    pub theta: Option<f64>,
    /// Maximised objective after every accepted step of the winning restart.
    pub objective_trace: Vec<f64>,
    pub restarts_tried: usize,
    pub restarts: Vec<RestartSummary>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub degenerate: bool,
}

/// Random start points: normalised Gaussian vectors on the `(dim−1)`-sphere.
pub fn random_starts(dim: usize, count: usize, seed: u64) -> Vec<SpherePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v = DVector::from_fn(dim, |_, _| rng.sample(StandardNormal));
            if let Ok(p) = SpherePoint::normalize(v) {
                break p;
            }
        })
        .collect()
}

/// Flips `w` so that its largest-magnitude entry is positive.
pub fn canonicalize_sign(w: &mut DVector<f64>) {
    let k = w.iamax();
    if w[k] < 0.0 {
        w.neg_mut();
    }
}

/// Maximises the chosen objective from `cfg.restarts` random starts and returns
/// the best restart.
pub fn solve_problem(problem: &Problem<'_>, mode: Mode, cfg: &SolveConfig) -> Result<Solution> {
    cfg.descent.validate()?;
    if cfg.restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be positive".into()));
    }
    let objective = Objective::new(problem, mode)?;
    let starts = random_starts(problem.basis.ncols(), cfg.restarts, cfg.seed);
    let scalars = match mode {
        Mode::Linear => Vec::new(),
        Mode::Nonlinear => vec![cfg.initial_sigma, cfg.initial_theta],
    };

    let outcomes = par::map_indices(starts.len(), cfg.parallel, |i| {
        let start = ProductPoint::new(starts[i].clone(), scalars.clone());
        steepest_descent(
            |p| {
                let e = objective.evaluate(p, true)?;
                let g = e.gradient.expect("gradient requested");
                Ok((
                    -e.value,
                    ProductVector {
                        sphere: -g.sphere,
                        scalars: g.scalars.iter().map(|v| -v).collect(),
                    },
                ))
            },
            start,
            &cfg.descent,
        )
    });

    let mut summaries = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    let mut best: Option<usize> = None;
    for (i, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Ok(o) if !matches!(o.status, DescentStatus::Aborted(_)) => {
                summaries.push(RestartSummary {
                    objective_value: Some(-o.value),
                    iterations: o.iterations,
                    status: format!("{:?}", o.status),
                });
                let better = match best {
                    None => true,
                    Some(j) => {
                        let bj = outcomes[j].as_ref().map(|o| o.value).unwrap_or(f64::INFINITY);
                        o.value < bj
                    }
                };
                if better {
                    best = Some(i);
                }
            }
            Ok(o) => {
                let DescentStatus::Aborted(msg) = &o.status else {
                    unreachable!()
                };
                failures.push(format!("restart {i}: {msg}"));
                summaries.push(RestartSummary {
                    objective_value: None,
                    iterations: o.iterations,
                    status: format!("aborted: {msg}"),
                });
            }
            Err(e) => {
                failures.push(format!("restart {i}: {e}"));
                summaries.push(RestartSummary {
                    objective_value: None,
                    iterations: 0,
                    status: format!("failed: {e}"),
                });
            }
        }
    }
    let Some(best) = best else {
        return Err(Error::SolveFailure(failures));
    };
    let outcome = outcomes[best].as_ref().expect("best restart succeeded");
    let final_eval = objective.evaluate(&outcome.point, false)?;
    let mut w = problem.filter(outcome.point.sphere.coordinates());
    w /= w.norm();
    canonicalize_sign(&mut w);

    let status = match outcome.status {
        DescentStatus::Converged => SolveStatus::Converged,
        DescentStatus::MaxIterations => SolveStatus::MaxIterations,
        DescentStatus::StepUnderflow => SolveStatus::StepUnderflow,
        DescentStatus::Aborted(_) => unreachable!(),
    };
    let (sigma, theta) = match mode {
        Mode::Linear => (None, None),
        Mode::Nonlinear => (Some(outcome.point.scalars[0]), Some(outcome.point.scalars[1])),
    };
    Ok(Solution {
        mode,
        w: w.as_slice().to_vec(),
        v: problem.v.as_slice().to_vec(),
        objective_value: final_eval.value,
        dep_term: final_eval.dep,
        conddep_term: final_eval.conddep,
        sigma,
        theta,
        objective_trace: outcome.trace.iter().map(|v| -v).collect(),
        restarts_tried: cfg.restarts,
        restarts: summaries,
        status,
        iterations: outcome.iterations,
        gradient_norm: outcome.gradient_norm,
        degenerate: final_eval.degenerate,
    })
}

/// Solver output plus the column standardisation that maps it back to input
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    #[serde(flatten)]
    pub solution: Solution,
    /// Per-channel standardisation applied before solving.
    pub standardization: Vec<Standardization>,
    /// `w` expressed on the unstandardised channels, unit norm:
    /// `input_filter ∝ w / scale`.
    pub input_filter: Vec<f64>,
}

impl SolveReport {
    pub fn w(&self) -> &[f64] {
        &self.solution.w
    }

    pub fn status(&self) -> SolveStatus {
        self.solution.status
    }

    pub fn objective_value(&self) -> f64 {
        self.solution.objective_value
    }
}

/// `v` as seen on standardised channels: an input filter `u = w / scale` is
/// orthogonal to `v` exactly when `w` is orthogonal to `v / scale`.
pub fn constraint_in_view(v: &DVector<f64>, standardization: &[Standardization]) -> DVector<f64> {
    DVector::from_iterator(
        v.len(),
        v.iter().zip(standardization).map(|(v, s)| v / s.scale),
    )
}

/// Maps a filter on standardised channels to one on input channels.
pub fn to_input_coordinates(w: &[f64], standardization: &[Standardization]) -> Vec<f64> {
    let raw: Vec<f64> = w
        .iter()
        .zip(standardization)
        .map(|(w, s)| w / s.scale)
        .collect();
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.into_iter().map(|v| v / n).collect()
}

/// Column-standardised copy of the mixture and the per-column transforms.
pub fn standardize_mixture(data: &Dataset) -> Result<(DMatrix<f64>, Vec<Standardization>)> {
    let (m, d) = data.mixture.shape();
    let mut out = DMatrix::zeros(m, d);
    let mut transforms = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = data.mixture.column(j).iter().copied().collect();
        let t = Standardization::fit(&col).map_err(|_| {
            invalid_input(format!("mixture column {} has zero variance", j + 1))
        })?;
        for (i, v) in t.apply(&col).into_iter().enumerate() {
            out[(i, j)] = v;
        }
        transforms.push(t);
    }
    Ok((out, transforms))
}

/// Recovers a filter maximising the chosen objective. The reported
/// `input_filter` is orthogonal to `v`; `solution.w` lives on standardised
/// channels and is orthogonal to `solution.v`.
pub fn solve(data: &Dataset, mode: Mode, cfg: &SolveConfig) -> Result<SolveReport> {
    let (x, transforms) = standardize_mixture(data)?;
    let c1 = data.c1();
    let features = LinearFeatures::new(x);
    let v = constraint_in_view(data.v(), &transforms);
    let problem = Problem::new(&features, data.stimulus(), &c1, &v)?;
    let solution = solve_problem(&problem, mode, cfg)?;
    let input_filter = to_input_coordinates(&solution.w, &transforms);
    Ok(SolveReport {
        solution,
        standardization: transforms,
        input_filter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub alpha: f64,
    pub permutations: usize,
    pub seed: u64,
    pub sigma_grid: Vec<f64>,
    pub theta_grid: Vec<f64>,
    pub parallel: bool,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            permutations: 200,
            seed: 0,
            sigma_grid: vec![0.1, 0.316_227_766, 1.0, 3.162_277_66, 10.0],
            theta_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            parallel: true,
        }
    }
}

/// The two statistics behind the causal inference rule and their verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    /// `HSIC(C1, Y_w)`.
    pub dependence: f64,
    pub dependence_p_value: f64,
    /// `HSIC((S, C1), R)` at the selected regression parameters.
    pub conditional: f64,
    pub conditional_p_value: f64,
    pub sigma: f64,
    pub theta: f64,
    pub marginal_dependence_detected: bool,
    pub conditional_independence_not_rejected: bool,
    /// Both flags hold: `S` affects `Y_w` indirectly via `C1`.
    pub rule_holds: bool,
    /// `|corr(Y_w, C1)|`, diagnostic only.
    pub abs_corr_with_c1: f64,
    pub alpha: f64,
}

fn permutation(rng: &mut ChaCha8Rng, m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// `Σ_ij Kc_ij · L_{π(i)π(j)} / m²`.
fn permuted_hsic(kc: &DMatrix<f64>, l: &DMatrix<f64>, perm: &[usize]) -> f64 {
    let m = perm.len();
    let mut acc = 0.0;
    for j in 0..m {
        let pj = perm[j];
        for i in 0..m {
            acc += kc[(i, j)] * l[(perm[i], pj)];
        }
    }
    acc / (m * m) as f64
}

fn permutation_null(
    kc: &DMatrix<f64>,
    l: &DMatrix<f64>,
    permutations: usize,
    seed: u64,
    parallel: bool,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Vec<usize>> = (0..permutations)
        .map(|_| permutation(&mut rng, kc.nrows()))
        .collect();
    par::map_indices(perms.len(), parallel, |i| permuted_hsic(kc, l, &perms[i]))
}

/// Rule statistics for given samples of `S`, `C1` and `Y_w`.
pub fn evaluate_rule_samples(
    stimulus: &[f64],
    c1: &[f64],
    y: &[f64],
    cfg: &RuleConfig,
) -> Result<RuleReport> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "significance level must lie in (0, 1), got {}",
            cfg.alpha
        )));
    }
    if cfg.sigma_grid.is_empty() || cfg.theta_grid.is_empty() {
        return Err(Error::InvalidParameter("regression grid is empty".into()));
    }
    let s = stats::standardize(stimulus)?;
    let c1 = stats::standardize(c1)?;
    let y = stats::standardize(y)
        .map_err(|_| Error::DegenerateConditioning("Y_w has zero variance".into()))?;
    if s.len() != y.len() || c1.len() != y.len() {
        return Err(invalid_input("stimulus, C1 and Y_w differ in length"));
    }

    let c1_kc = median_kernel_matrix(&crate::independence::column(&c1))?.centered();
    let y_l = median_kernel_matrix(&crate::independence::column(&y))?.into_inner();
    let dependence = hsic_centered(&c1_kc, &center_gram(&y_l));
    let dep_null = permutation_null(&c1_kc, &y_l, cfg.permutations, cfg.seed, cfg.parallel);
    let dependence_p_value = stats::permutation_p_value(dependence, &dep_null);

    let joint_kc = median_kernel_matrix(&stack_columns(&[&s, &c1])?)?.centered();
    let plan = FoldPlan::new(y.len())?;
    let mut best: Option<(f64, f64, f64, DMatrix<f64>)> = None;
    for &sigma in &cfg.sigma_grid {
        for &theta in &cfg.theta_grid {
            let fit = plan.fit(&c1, &y, sigma, theta)?;
            let l = median_kernel_matrix(&crate::independence::column(fit.residuals()))?.into_inner();
            let stat = hsic_centered(&joint_kc, &center_gram(&l));
            if best.as_ref().is_none_or(|b| stat < b.0) {
                best = Some((stat, sigma, theta, l));
            }
        }
    }
    let (conditional, sigma, theta, r_l) = best.expect("grid is non-empty");
    let cond_null = permutation_null(
        &joint_kc,
        &r_l,
        cfg.permutations,
        cfg.seed.wrapping_add(1),
        cfg.parallel,
    );
    let conditional_p_value = stats::permutation_p_value(conditional, &cond_null);

    let marginal = dependence_p_value < cfg.alpha;
    let not_rejected = conditional_p_value >= cfg.alpha;
    Ok(RuleReport {
        dependence,
        dependence_p_value,
        conditional,
        conditional_p_value,
        sigma,
        theta,
        marginal_dependence_detected: marginal,
        conditional_independence_not_rejected: not_rejected,
        rule_holds: marginal && not_rejected,
        abs_corr_with_c1: pearson(&y, &c1)?.abs(),
        alpha: cfg.alpha,
    })
}

/// Rule statistics for the output of filter `w` (input coordinates) on `data`.
pub fn evaluate_rule(data: &Dataset, w: &DVector<f64>, cfg: &RuleConfig) -> Result<RuleReport> {
    if w.len() != data.channels() {
        return Err(invalid_input(format!(
            "filter has length {} but data has {} channels",
            w.len(),
            data.channels()
        )));
    }
    if !(w.norm() > 0.0) {
        return Err(invalid_input("filter must be non-zero"));
    }
    let y = data.output(&(w / w.norm()));
    evaluate_rule_samples(data.stimulus(), &data.c1(), &y, cfg)
}
