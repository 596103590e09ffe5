//! Marginal and conditional dependence estimators.
//!
//! Sample blocks are `m × p` matrices with one observation per row. Joint
//! variables such as `(S, C1)` are column-stacked and share one kernel with a
//! single median-heuristic bandwidth.

use nalgebra::DMatrix;

use crate::error::{invalid_input, Error, Result};
use crate::stats::{self, pearson};

/// Minimum sample count for any dependence estimate.
pub const MIN_SAMPLES: usize = 4;

/// Gaussian Gram matrix `K_ij = exp(−‖x_i − x_j‖² / δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
    bandwidth: f64,
}

impl KernelMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// `H·K·H` with `H = I − 11ᵀ/m`.
    pub fn centered(&self) -> DMatrix<f64> {
        center_gram(&self.values)
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }
}

/// Builds an `m × 1` block from a slice.
pub fn column(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(values.len(), 1, values)
}

/// Column-stacks equally long samples into an `m × p` block.
pub fn stack_columns(columns: &[&[f64]]) -> Result<DMatrix<f64>> {
    let m = columns.first().map(|c| c.len()).unwrap_or(0);
    if columns.iter().any(|c| c.len() != m) {
        return Err(invalid_input("stacked columns must have equal length"));
    }
    Ok(DMatrix::from_fn(m, columns.len(), |i, j| columns[j][i]))
}

/// Squared Euclidean distances between all rows.
pub fn squared_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    let mut d2 = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let mut acc = 0.0;
            for c in 0..x.ncols() {
                let diff = x[(i, c)] - x[(j, c)];
                acc += diff * diff;
            }
            d2[(i, j)] = acc;
            d2[(j, i)] = acc;
        }
    }
    d2
}

/// Squared distances of a scalar sample.
pub(crate) fn squared_distances_1d(x: &[f64]) -> DMatrix<f64> {
    let m = x.len();
    let mut d2 = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let diff = x[i] - x[j];
            d2[(i, j)] = diff * diff;
            d2[(j, i)] = diff * diff;
        }
    }
    d2
}

/// Median-heuristic bandwidth from a precomputed squared-distance matrix.
pub(crate) fn median_bandwidth(d2: &DMatrix<f64>) -> f64 {
    let m = d2.nrows();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for j in 0..m {
        for i in 0..j {
            dists.push(d2[(i, j)].sqrt());
        }
    }
    match stats::median(&mut dists) {
        Some(med) if med > 0.0 => med * med,
        _ => 1.0,
    }
}

/// Bandwidth `δ = (median pairwise distance)²`, or `1` when all points coincide.
pub fn median_heuristic(x: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() < 2 {
        return Err(invalid_input(format!(
            "median heuristic needs at least two points, got {}",
            x.nrows()
        )));
    }
    Ok(median_bandwidth(&squared_distances(x)))
}

pub(crate) fn gram_from_sq_distances(d2: &DMatrix<f64>, bandwidth: f64) -> DMatrix<f64> {
    let mut k = d2.map(|v| (-v / bandwidth).exp());
    for i in 0..k.nrows() {
        k[(i, i)] = 1.0;
    }
    k
}

pub fn gaussian_kernel_matrix(x: &DMatrix<f64>, bandwidth: f64) -> Result<KernelMatrix> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "kernel bandwidth must be positive and finite, got {bandwidth}"
        )));
    }
    Ok(KernelMatrix {
        values: gram_from_sq_distances(&squared_distances(x), bandwidth),
        bandwidth,
    })
}

/// Gaussian kernel of `x` with its own median-heuristic bandwidth.
pub fn median_kernel_matrix(x: &DMatrix<f64>) -> Result<KernelMatrix> {
    if x.nrows() < 2 {
        return Err(invalid_input("kernel needs at least two points"));
    }
    let d2 = squared_distances(x);
    let bandwidth = median_bandwidth(&d2);
    Ok(KernelMatrix {
        values: gram_from_sq_distances(&d2, bandwidth),
        bandwidth,
    })
}

pub(crate) fn center_gram(k: &DMatrix<f64>) -> DMatrix<f64> {
    let m = k.nrows();
    let mf = m as f64;
    let row_means: Vec<f64> = (0..m).map(|i| k.row(i).sum() / mf).collect();
    let col_means: Vec<f64> = (0..m).map(|j| k.column(j).sum() / mf).collect();
    let grand = row_means.iter().sum::<f64>() / mf;
    DMatrix::from_fn(m, m, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// `Σ_ij Kc_ij·Lc_ij / m²` for two centred Gram matrices.
///
/// Equal to `trace(K·H·L·H) / m²`; the elementwise form is exactly symmetric
/// in its two arguments.
pub(crate) fn hsic_centered(kc: &DMatrix<f64>, lc: &DMatrix<f64>) -> f64 {
    let m = kc.nrows() as f64;
    kc.iter().zip(lc.iter()).map(|(a, b)| a * b).sum::<f64>() / (m * m)
}

/// Gradient of `hsic_centered(kc, center(L(y)))` with respect to the scalar
/// samples `y`, holding the bandwidth `δ` of `L` fixed.
///
/// `l` is the uncentred Gram matrix of `y`.
pub(crate) fn hsic_gradient_1d(
    kc: &DMatrix<f64>,
    l: &DMatrix<f64>,
    y: &[f64],
    bandwidth: f64,
) -> Vec<f64> {
    let m = y.len();
    let scale = -4.0 / ((m * m) as f64 * bandwidth);
    (0..m)
        .map(|k| {
            let mut acc = 0.0;
            for j in 0..m {
                acc += kc[(k, j)] * l[(k, j)] * (y[k] - y[j]);
            }
            scale * acc
        })
        .collect()
}

/// Biased empirical HSIC `trace(K·H·L·H) / m²` with median-heuristic
/// Gaussian kernels on both sides.
pub fn hsic(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(invalid_input(format!(
            "HSIC sample counts differ: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() < MIN_SAMPLES {
        return Err(invalid_input(format!(
            "HSIC needs at least {MIN_SAMPLES} samples, got {}",
            x.nrows()
        )));
    }
    let kc = median_kernel_matrix(x)?.centered();
    let lc = median_kernel_matrix(y)?.centered();
    Ok(hsic_centered(&kc, &lc))
}

/// HSIC of two scalar samples.
pub fn hsic_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    hsic(&column(x), &column(y))
}

/// Partial correlation of `x` and `y` given `z` from the three Pearson
/// correlations.
pub fn partial_correlation(x: &[f64], y: &[f64], z: &[f64]) -> Result<f64> {
    let r_xy = pearson(x, y)?;
    let r_xz = pearson(x, z)?;
    let r_yz = pearson(y, z)?;
    partial_from_correlations(r_xy, r_xz, r_yz)
}

const CONDITIONING_LIMIT: f64 = 1.0 - 1e-10;

pub(crate) fn partial_from_correlations(r_xy: f64, r_xz: f64, r_yz: f64) -> Result<f64> {
    if r_xz.abs() >= CONDITIONING_LIMIT || r_yz.abs() >= CONDITIONING_LIMIT {
        return Err(Error::DegenerateConditioning(format!(
            "conditioning variable is collinear with an input (r_xz = {r_xz}, r_yz = {r_yz})"
        )));
    }
    let denom = ((1.0 - r_xz * r_xz) * (1.0 - r_yz * r_yz)).sqrt();
    Ok(((r_xy - r_xz * r_yz) / denom).clamp(-1.0, 1.0))
}
