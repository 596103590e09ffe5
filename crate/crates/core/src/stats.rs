//! Small sample statistics shared by the estimators.

use crate::error::{invalid_input, Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance (divides by `m`).
pub fn variance(x: &[f64]) -> f64 {
    let mu = mean(x);
    x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64
}

pub fn centered(x: &[f64]) -> Vec<f64> {
    let mu = mean(x);
    x.iter().map(|v| v - mu).collect()
}

/// Location and scale used to map raw values to zero mean, unit variance.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn fit(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(invalid_input("cannot standardize an empty sample"));
        }
        let scale = variance(x).sqrt();
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::DegenerateConditioning(
                "sample has zero or non-finite variance".into(),
            ));
        }
        Ok(Self {
            mean: mean(x),
            scale,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| (v - self.mean) / self.scale).collect()
    }
}

pub fn standardize(x: &[f64]) -> Result<Vec<f64>> {
    Ok(Standardization::fit(x)?.apply(x))
}

/// Pearson sample correlation.
///
/// Symmetric bit-for-bit: `pearson(x, y) == pearson(y, x)`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid_input(format!(
            "sample counts differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(invalid_input("correlation needs at least two samples"));
    }
    let xc = centered(x);
    let yc = centered(y);
    let sxy: f64 = xc.iter().zip(&yc).map(|(a, b)| a * b).sum();
    let sxx: f64 = xc.iter().map(|a| a * a).sum();
    let syy: f64 = yc.iter().map(|b| b * b).sum();
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::DegenerateConditioning(
            "zero-variance input to correlation".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Median of a slice; mean of the two middle elements for even lengths.
pub fn median(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        Some(0.5 * (lower + upper))
    }
}

/// Empirical p-value `(1 + #{null ≥ stat}) / (1 + |null|)`.
pub fn permutation_p_value(stat: f64, null: &[f64]) -> f64 {
    let exceed = null.iter().filter(|&&v| v >= stat).count();
    (1 + exceed) as f64 / (1 + null.len()) as f64
}

/// Linear-interpolated quantile of a sample, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
