//! Geometry of the unit sphere and of `sphere × ℝᵏ`, steepest descent with
//! Armijo backtracking, and a finite-difference gradient checker.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};

/// Tolerance on `‖x‖ = 1` for sphere points.
pub const SPHERE_TOLERANCE: f64 = 1e-10;

/// A point on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint(DVector<f64>);

impl SpherePoint {
    /// Accepts coordinates that already have unit norm.
    pub fn new(coordinates: DVector<f64>) -> Result<Self> {
        let n = coordinates.norm();
        if !n.is_finite() || (n - 1.0).abs() > SPHERE_TOLERANCE {
            return Err(invalid_input(format!("sphere point has norm {n}")));
        }
        Ok(Self(coordinates))
    }

    /// Normalises `coordinates` onto the sphere.
    pub fn normalize(coordinates: DVector<f64>) -> Result<Self> {
        let n = coordinates.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(invalid_input("cannot normalise a zero or non-finite vector"));
        }
        Ok(Self(coordinates / n))
    }

    pub fn coordinates(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// A point of `sphere × ℝᵏ`. The merlin solvers use `k = 0` or `k = 2` (σ, θ).
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPoint {
    pub sphere: SpherePoint,
    pub scalars: Vec<f64>,
}

impl ProductPoint {
    pub fn new(sphere: SpherePoint, scalars: Vec<f64>) -> Self {
        Self { sphere, scalars }
    }

    pub fn sphere_only(sphere: SpherePoint) -> Self {
        Self {
            sphere,
            scalars: Vec::new(),
        }
    }
}

/// A (Euclidean or tangent) vector at a [`ProductPoint`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProductVector {
    pub sphere: DVector<f64>,
    pub scalars: Vec<f64>,
}

impl ProductVector {
    pub fn norm_squared(&self) -> f64 {
        self.sphere.norm_squared() + self.scalars.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    fn is_finite(&self) -> bool {
        self.sphere.iter().chain(&self.scalars).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub initial_step: f64,
    pub backtrack_factor: f64,
    pub armijo_constant: f64,
    pub min_step: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            initial_step: 1.0,
            backtrack_factor: 0.5,
            armijo_constant: 1e-4,
            min_step: 1e-12,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gradient_tolerance", self.gradient_tolerance),
            ("initial_step", self.initial_step),
            ("backtrack_factor", self.backtrack_factor),
            ("armijo_constant", self.armijo_constant),
            ("min_step", self.min_step),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be positive".into()));
        }
        if self.backtrack_factor >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "backtrack_factor must be below 1, got {}",
                self.backtrack_factor
            )));
        }
        Ok(())
    }
}

/// `d × (d−1)` matrix with orthonormal columns spanning `v⊥`.
///
/// Built from the Householder reflector that maps `v/‖v‖` onto a signed basis
/// vector `±e_k` (`k` = largest entry of `v`); the remaining columns of the
/// reflector form the basis.
pub fn orthocomplement_basis(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = v.len();
    if d < 2 {
        return Err(invalid_input(format!(
            "orthogonal complement needs dimension ≥ 2, got {d}"
        )));
    }
    let norm = v.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(invalid_input("cannot complement a zero or non-finite vector"));
    }
    let u = v / norm;
    let k = u.iamax();
    let mut h = u.clone();
    h[k] += if u[k] >= 0.0 { 1.0 } else { -1.0 };
    let scale = 2.0 / h.norm_squared();
    let reflector = DMatrix::identity(d, d) - (&h * h.transpose()) * scale;
    Ok(reflector.remove_column(k))
}

/// `g − (xᵀg)·x`.
pub fn project_tangent(x: &SpherePoint, g: &DVector<f64>) -> DVector<f64> {
    let x = x.coordinates();
    g - x * x.dot(g)
}

/// `(x + ξ)/‖x + ξ‖`.
pub fn retract(x: &SpherePoint, xi: &DVector<f64>) -> Result<SpherePoint> {
    let y = x.coordinates() + xi;
    let n = y.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::RetractionSingularity);
    }
    Ok(SpherePoint(y / n))
}

/// Projects a Euclidean gradient onto the tangent space of the product manifold.
pub fn riemannian_gradient(x: &ProductPoint, euclidean: &ProductVector) -> ProductVector {
    ProductVector {
        sphere: project_tangent(&x.sphere, &euclidean.sphere),
        scalars: euclidean.scalars.clone(),
    }
}

fn step(x: &ProductPoint, direction: &ProductVector, alpha: f64) -> Result<ProductPoint> {
    let sphere = retract(&x.sphere, &(&direction.sphere * alpha))?;
    let scalars = x
        .scalars
        .iter()
        .zip(&direction.scalars)
        .map(|(s, d)| s + alpha * d)
        .collect();
    Ok(ProductPoint { sphere, scalars })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentStatus {
    Converged,
    MaxIterations,
    StepUnderflow,
    /// The objective failed or became non-finite after the start.
    Aborted(String),
}

#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub point: ProductPoint,
    pub value: f64,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub status: DescentStatus,
}

/// Minimises `objective` (returning value and Euclidean gradient) from `start`.
///
/// Each iteration moves along the negative Riemannian gradient. The first trial
/// step has length `initial_step`; later ones reuse the previous decrease,
/// `α = 2·(f_prev − f)/‖grad‖²`, doubled. Trial steps are halved (by
/// `backtrack_factor`) until `f(new) ≤ f − c·α·‖grad‖²`.
pub fn steepest_descent<F>(
    mut objective: F,
    start: ProductPoint,
    cfg: &DescentConfig,
) -> Result<DescentOutcome>
where
    F: FnMut(&ProductPoint) -> Result<(f64, ProductVector)>,
{
    cfg.validate()?;
    let (mut value, mut euclid) = objective(&start)?;
    if !value.is_finite() || !euclid.is_finite() {
        return Err(invalid_input("objective is not finite at the start point"));
    }
    let mut x = start;
    let mut trace = vec![value];
    let mut previous_value: Option<f64> = None;
    let mut grad = riemannian_gradient(&x, &euclid);
    let mut grad_norm = grad.norm();
    let mut iterations = 0;

    let status = loop {
        if grad_norm <= cfg.gradient_tolerance {
            break DescentStatus::Converged;
        }
        if iterations >= cfg.max_iterations {
            break DescentStatus::MaxIterations;
        }
        let direction = ProductVector {
            sphere: -&grad.sphere,
            scalars: grad.scalars.iter().map(|g| -g).collect(),
        };
        let slope = grad_norm * grad_norm;
        let mut alpha = match previous_value {
            Some(prev) if prev > value => 2.0 * 2.0 * (prev - value) / slope,
            _ => cfg.initial_step / grad_norm,
        };
        let accepted = loop {
            if alpha * grad_norm < cfg.min_step {
                break None;
            }
            let candidate = match step(&x, &direction, alpha) {
                Ok(p) => p,
                Err(_) => {
                    alpha *= cfg.backtrack_factor;
                    continue;
                }
            };
            match objective(&candidate) {
                Ok((v, g)) if v.is_finite() && g.is_finite() => {
                    if v <= value - cfg.armijo_constant * alpha * slope {
                        break Some((candidate, v, g));
                    }
                }
                Ok(_) => {}
                Err(e) => {
                    return Ok(DescentOutcome {
                        point: x,
                        value,
                        trace,
                        iterations,
                        gradient_norm: grad_norm,
                        status: DescentStatus::Aborted(e.to_string()),
                    })
                }
            }
            alpha *= cfg.backtrack_factor;
        };
        let Some((candidate, v, g)) = accepted else {
            break DescentStatus::StepUnderflow;
        };
        previous_value = Some(value);
        x = candidate;
        value = v;
        euclid = g;
        trace.push(value);
        grad = riemannian_gradient(&x, &euclid);
        grad_norm = grad.norm();
        iterations += 1;
    };

    Ok(DescentOutcome {
        point: x,
        value,
        trace,
        iterations,
        gradient_norm: grad_norm,
        status,
    })
}

/// Finite-difference gradient checks for analytic Euclidean gradients.
pub mod gradcheck {
    /// Default central-difference step.
    pub const STEP: f64 = 1e-6;

    /// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
    pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + h;
                let up = f(&probe);
                probe[i] = x[i] - h;
                let down = f(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
    pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let scale = a
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(b.iter().map(|y| y * y).sum::<f64>().sqrt());
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    /// Relative error between `analytic` and the central-difference gradient of
    /// `f` at `x`.
    pub fn check<F>(f: F, analytic: &[f64], x: &[f64], h: f64) -> f64
    where
        F: FnMut(&[f64]) -> f64,
    {
        relative_error(analytic, &central_difference(f, x, h))
    }
}
