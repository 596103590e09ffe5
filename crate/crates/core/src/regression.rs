//! Kernel ridge regression on a scalar input and the three-fold cross-fitted
//! residuals behind the regression-based conditional independence criterion.
//!
//! The regression kernel is `k(x, x') = exp(−(x − x')² / σ²)`; the dual weights
//! solve `(K + θ·I)·α = y`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{invalid_input, Error, Result};

/// Smallest kernel width used by the solvers.
pub const MIN_WIDTH: f64 = 1e-6;
/// Smallest ridge used when the ridge comes from an unconstrained optimiser.
pub const MIN_RIDGE: f64 = 1e-10;
/// Diagonal jitter added once when the regularised system is not positive definite.
pub const JITTER: f64 = 1e-10;
/// Number of cross-fitting partitions.
pub const FOLDS: usize = 3;
/// Smallest sample for which every fold has a usable complement.
pub const MIN_CROSS_SAMPLES: usize = 6;

/// `max(|σ|, MIN_WIDTH)`.
pub fn effective_width(sigma: f64) -> f64 {
    sigma.abs().max(MIN_WIDTH)
}

/// `max(|θ|, MIN_RIDGE)`.
pub fn effective_ridge(theta: f64) -> f64 {
    theta.abs().max(MIN_RIDGE)
}

/// Derivative of [`effective_width`]/[`effective_ridge`] style maps: `sign(x)`
/// above the floor, zero where the floor is active.
fn floored_abs_derivative(x: f64, floor: f64) -> f64 {
    if x.abs() > floor {
        x.signum()
    } else {
        0.0
    }
}

fn kernel_between(a: &[f64], b: &[f64], width: f64) -> DMatrix<f64> {
    let inv = 1.0 / (width * width);
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let d = a[i] - b[j];
        (-d * d * inv).exp()
    })
}

fn factor(mut system: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, bool)> {
    if let Some(chol) = Cholesky::new(system.clone()) {
        return Ok((chol, false));
    }
    for i in 0..system.nrows() {
        system[(i, i)] += JITTER;
    }
    Cholesky::new(system)
        .map(|c| (c, true))
        .ok_or_else(|| Error::NumericalFailure("kernel ridge system is singular".into()))
}

/// A fitted kernel ridge regression in dual form.
#[derive(Debug, Clone, PartialEq)]
pub struct KrrModel {
    training_inputs: Vec<f64>,
    dual_weights: Vec<f64>,
    kernel_width: f64,
    ridge: f64,
    jittered: bool,
}

impl KrrModel {
    pub fn training_inputs(&self) -> &[f64] {
        &self.training_inputs
    }

    pub fn dual_weights(&self) -> &[f64] {
        &self.dual_weights
    }

    /// `|σ|` after the width floor.
    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
    }

    /// Kernel bandwidth `δ_r = σ²`.
    pub fn bandwidth(&self) -> f64 {
        self.kernel_width * self.kernel_width
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Whether diagonal jitter was needed to factor the system.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    /// `Σ_i α_i·exp(−(x − x_i)² / σ²)` for each query point.
    pub fn predict(&self, x_new: &[f64]) -> Result<Vec<f64>> {
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(invalid_input("prediction inputs must be finite"));
        }
        let inv = 1.0 / self.bandwidth();
        Ok(x_new
            .iter()
            .map(|&x| {
                self.training_inputs
                    .iter()
                    .zip(&self.dual_weights)
                    .map(|(&xi, &a)| a * (-(x - xi) * (x - xi) * inv).exp())
                    .sum()
            })
            .collect())
    }
}

/// Fits `α = (K + |θ|·I)⁻¹·y` with kernel width `max(|σ|, 1e-6)`.
pub fn krr_fit(x: &[f64], y: &[f64], sigma: f64, theta: f64) -> Result<KrrModel> {
    if x.is_empty() {
        return Err(invalid_input("kernel ridge regression needs a training point"));
    }
    if x.len() != y.len() {
        return Err(invalid_input(format!(
            "training inputs and targets differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) || !sigma.is_finite() || !theta.is_finite() {
        return Err(invalid_input("kernel ridge regression inputs must be finite"));
    }
    let width = effective_width(sigma);
    let ridge = theta.abs();
    let mut system = kernel_between(x, x, width);
    for i in 0..x.len() {
        system[(i, i)] += ridge;
    }
    let (chol, jittered) = factor(system)?;
    let alpha = chol.solve(&DVector::from_column_slice(y));
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "kernel ridge solve produced non-finite weights".into(),
        ));
    }
    Ok(KrrModel {
        training_inputs: x.to_vec(),
        dual_weights: alpha.as_slice().to_vec(),
        kernel_width: width,
        ridge,
        jittered,
    })
}

/// `model.predict(x_new)`, as a free function.
pub fn krr_predict(model: &KrrModel, x_new: &[f64]) -> Result<Vec<f64>> {
    model.predict(x_new)
}

/// Residuals aligned with the input sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector(pub Vec<f64>);

impl ResidualVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// The interleaved three-way split: index `j` belongs to fold `j mod 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    folds: Vec<Fold>,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Fold {
    train: Vec<usize>,
    test: Vec<usize>,
}

impl FoldPlan {
    pub fn new(m: usize) -> Result<Self> {
        if m < MIN_CROSS_SAMPLES {
            return Err(invalid_input(format!(
                "cross-fitted residuals need at least {MIN_CROSS_SAMPLES} samples, got {m}"
            )));
        }
        let folds = (0..FOLDS)
            .map(|p| Fold {
                test: (0..m).filter(|j| j % FOLDS == p).collect(),
                train: (0..m).filter(|j| j % FOLDS != p).collect(),
            })
            .collect();
        Ok(Self { folds, len: m })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Fold membership of sample `j`.
    pub fn fold_of(&self, j: usize) -> usize {
        j % FOLDS
    }

    /// Fits the three fold models and returns residuals together with what is
    /// needed to differentiate them.
    pub fn fit(&self, c1: &[f64], y: &[f64], sigma: f64, theta: f64) -> Result<CrossFit> {
        if c1.len() != self.len || y.len() != self.len {
            return Err(invalid_input(format!(
                "fold plan is for {} samples, got inputs of length {} and {}",
                self.len,
                c1.len(),
                y.len()
            )));
        }
        let width = effective_width(sigma);
        let ridge = effective_ridge(theta);
        let mut residuals = y.to_vec();
        let mut fits = Vec::with_capacity(FOLDS);
        let mut jittered = false;
        for fold in &self.folds {
            let x_tr: Vec<f64> = fold.train.iter().map(|&j| c1[j]).collect();
            let y_tr: Vec<f64> = fold.train.iter().map(|&j| y[j]).collect();
            let x_te: Vec<f64> = fold.test.iter().map(|&j| c1[j]).collect();
            let k_tr = kernel_between(&x_tr, &x_tr, width);
            let mut system = k_tr.clone();
            for i in 0..system.nrows() {
                system[(i, i)] += ridge;
            }
            let (chol, jit) = factor(system)?;
            jittered |= jit;
            let alpha = chol.solve(&DVector::from_vec(y_tr));
            let k_te = kernel_between(&x_te, &x_tr, width);
            let pred = &k_te * &alpha;
            for (t, &j) in fold.test.iter().enumerate() {
                residuals[j] = y[j] - pred[t];
            }
            fits.push(FoldFit {
                x_tr,
                x_te,
                k_tr,
                k_te,
                chol,
                alpha,
            });
        }
        if residuals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(
                "cross-fitted residuals are not finite".into(),
            ));
        }
        Ok(CrossFit {
            plan: self.clone(),
            fits,
            residuals,
            sigma,
            theta,
            width,
            jittered,
        })
    }
}

struct FoldFit {
    x_tr: Vec<f64>,
    x_te: Vec<f64>,
    k_tr: DMatrix<f64>,
    k_te: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// Cross-fitted residuals `R_j = y_j − r_{−p(j)}(c1_j)`.
pub struct CrossFit {
    plan: FoldPlan,
    fits: Vec<FoldFit>,
    residuals: Vec<f64>,
    sigma: f64,
    theta: f64,
    width: f64,
    jittered: bool,
}

/// Pullback of a residual cotangent onto the regression inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPullback {
    /// `∂L/∂y` for every sample.
    pub targets: Vec<f64>,
    /// `∂L/∂σ` (raw, before the absolute value and floor).
    pub sigma: f64,
    /// `∂L/∂θ` (raw, before the absolute value and floor).
    pub theta: f64,
}

impl CrossFit {
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn into_residuals(self) -> ResidualVector {
        ResidualVector(self.residuals)
    }

    pub fn jittered(&self) -> bool {
        self.jittered
    }

    /// Given `g = ∂L/∂R`, returns `∂L/∂y`, `∂L/∂σ` and `∂L/∂θ`.
    ///
    /// Per fold, with `A = K_tr + λI`, `α = A⁻¹y_tr` and `β = A⁻¹K_teᵀ(−g_te)`:
    /// `∂L/∂y_tr = β`, `∂L/∂λ = −βᵀα`,
    /// `∂L/∂s = (−g_te)ᵀ(∂K_te/∂s)α − βᵀ(∂K_tr/∂s)α`.
    pub fn pullback(&self, g: &[f64]) -> Result<ResidualPullback> {
        if g.len() != self.residuals.len() {
            return Err(invalid_input("cotangent length differs from residual length"));
        }
        let mut targets = g.to_vec();
        let mut d_width = 0.0;
        let mut d_ridge = 0.0;
        let s = self.width;
        let ds_scale = 2.0 / (s * s * s);
        for (fold, fit) in self.plan.folds.iter().zip(&self.fits) {
            let neg_g = DVector::from_iterator(fold.test.len(), fold.test.iter().map(|&j| -g[j]));
            let beta = fit.chol.solve(&(fit.k_te.transpose() * &neg_g));
            for (i, &j) in fold.train.iter().enumerate() {
                targets[j] += beta[i];
            }
            d_ridge -= beta.dot(&fit.alpha);

            // (−g_te)ᵀ (∂K_te/∂s) α
            let mut acc = 0.0;
            for t in 0..fit.x_te.len() {
                let mut row = 0.0;
                for i in 0..fit.x_tr.len() {
                    let d = fit.x_te[t] - fit.x_tr[i];
                    row += fit.k_te[(t, i)] * d * d * fit.alpha[i];
                }
                acc += neg_g[t] * row;
            }
            // βᵀ (∂K_tr/∂s) α
            let mut acc_tr = 0.0;
            for a in 0..fit.x_tr.len() {
                let mut row = 0.0;
                for b in 0..fit.x_tr.len() {
                    let d = fit.x_tr[a] - fit.x_tr[b];
                    row += fit.k_tr[(a, b)] * d * d * fit.alpha[b];
                }
                acc_tr += beta[a] * row;
            }
            d_width += ds_scale * (acc - acc_tr);
        }
        Ok(ResidualPullback {
            targets,
            sigma: d_width * floored_abs_derivative(self.sigma, MIN_WIDTH),
            theta: d_ridge * floored_abs_derivative(self.theta, MIN_RIDGE),
        })
    }
}

/// Residuals of `y` regressed on `c1`, each fold predicted by the model fit on
/// the other two folds.
pub fn cross_residuals(c1: &[f64], y: &[f64], sigma: f64, theta: f64) -> Result<ResidualVector> {
    if c1.len() != y.len() {
        return Err(invalid_input(format!(
            "regression input and target differ in length: {} vs {}",
            c1.len(),
            y.len()
        )));
    }
    Ok(FoldPlan::new(c1.len())?
        .fit(c1, y, sigma, theta)?
        .into_residuals())
}
