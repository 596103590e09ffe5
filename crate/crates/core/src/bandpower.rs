//! Hanning-windowed average log-bandpower, and MERLiN on trial time series.
//!
//! `logbp(x)` windows `x` with `h_t = 0.5·(1 − cos(2πt/(n−1)))`, takes the DFT
//! and averages `ln |X_k|²` over the one-sided bins `k = 0..=n/2` whose
//! frequency `k·rate/n` lies in the closed band. For trial data the channels
//! are combined first, `Y_w = logbp(wᵀF̃)`, because spatial filtering and
//! log-bandpower do not commute.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::merlin::{
    constraint_in_view, solve_problem, to_input_coordinates, FeatureMap, Features, Mode, Problem, SolveConfig,
    SolveReport,
};
use crate::par;
use crate::stats::Standardization;

/// Power floor applied before the logarithm.
pub const POWER_FLOOR: f64 = 1e-300;
/// Minimum time-series length.
pub const MIN_LENGTH: usize = 8;

/// Closed frequency interval `[lo, hi]` in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// Checks `0 < lo < hi ≤ rate/2`.
    pub fn validate(&self, sampling_rate: f64) -> Result<()> {
        if !(sampling_rate > 0.0) || !sampling_rate.is_finite() {
            return Err(Error::InvalidBand(format!(
                "sampling rate must be positive, got {sampling_rate}"
            )));
        }
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi <= sampling_rate / 2.0) {
            return Err(Error::InvalidBand(format!(
                "need 0 < lo < hi ≤ {} Hz, got [{}, {}]",
                sampling_rate / 2.0,
                self.lo,
                self.hi
            )));
        }
        Ok(())
    }
}

/// Symmetric Hanning window with zero endpoints.
pub fn hanning(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let mut h = vec![0.0; n];
    let denom = (n - 1) as f64;
    for t in 0..n.div_ceil(2) {
        let v = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * t as f64 / denom).cos());
        h[t] = v;
        h[n - 1 - t] = v;
    }
    h
}

/// One-sided bins whose frequency lies in the closed band.
pub fn band_bins(n: usize, sampling_rate: f64, band: Band) -> Vec<usize> {
    // Edge frequencies that are exact bins can round by an ulp either way.
    let slack = 1e-9 * sampling_rate / n as f64;
    (0..=n / 2)
        .filter(|&k| {
            let f = k as f64 * sampling_rate / n as f64;
            f >= band.lo - slack && f <= band.hi + slack
        })
        .collect()
}

/// Precomputed window, band bins and FFT plans for a fixed length.
#[derive(Clone)]
pub struct LogBandpower {
    n: usize,
    window: Vec<f64>,
    bins: Vec<usize>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogBandpower {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogBandpower")
            .field("n", &self.n)
            .field("bins", &self.bins)
            .finish()
    }
}

impl LogBandpower {
    pub fn new(n: usize, sampling_rate: f64, band: Band) -> Result<Self> {
        if n < MIN_LENGTH {
            return Err(invalid_input(format!(
                "time series need at least {MIN_LENGTH} samples, got {n}"
            )));
        }
        band.validate(sampling_rate)?;
        let bins = band_bins(n, sampling_rate, band);
        if bins.is_empty() {
            return Err(Error::InvalidBand(format!(
                "no frequency bin of a length-{n} series at {sampling_rate} Hz lies in [{}, {}]",
                band.lo, band.hi
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            window: hanning(n),
            bins,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    fn spectrum(&self, x: &[f64]) -> Result<Vec<Complex<f64>>> {
        if x.len() != self.n {
            return Err(invalid_input(format!(
                "expected a series of length {}, got {}",
                self.n,
                x.len()
            )));
        }
        let mut buf: Vec<Complex<f64>> = x
            .iter()
            .zip(&self.window)
            .map(|(v, h)| Complex::new(v * h, 0.0))
            .collect();
        self.forward.process(&mut buf);
        Ok(buf)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let spec = self.spectrum(x)?;
        let sum: f64 = self
            .bins
            .iter()
            .map(|&k| spec[k].norm_sqr().max(POWER_FLOOR).ln())
            .sum();
        Ok(sum / self.bins.len() as f64)
    }

    /// Value and gradient with respect to the unwindowed series.
    ///
    /// `∂/∂x_t = (2/K)·h_t·Re Σ_k (X_k / P_k)·e^{+2πikt/n}` over the `K` band
    /// bins, with floored bins contributing nothing.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let spec = self.spectrum(x)?;
        let kf = self.bins.len() as f64;
        let mut sum = 0.0;
        let mut back = vec![Complex::new(0.0, 0.0); self.n];
        for &k in &self.bins {
            let p = spec[k].norm_sqr();
            if p > POWER_FLOOR {
                sum += p.ln();
                back[k] = spec[k] / p;
            } else {
                sum += POWER_FLOOR.ln();
            }
        }
        self.inverse.process(&mut back);
        let grad = back
            .iter()
            .zip(&self.window)
            .map(|(z, h)| 2.0 / kf * h * z.re)
            .collect();
        Ok((sum / kf, grad))
    }
}

/// Average log-bandpower of a single series.
pub fn logbp(x: &[f64], sampling_rate: f64, band: Band) -> Result<f64> {
    LogBandpower::new(x.len(), sampling_rate, band)?.value(x)
}

/// Channels × trials × time samples with stimulus, `v`, rate and band.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeseriesDataset {
    tensor: Vec<f64>,
    channels: usize,
    trials: usize,
    length: usize,
    sampling_rate: f64,
    band: Band,
    stimulus: Vec<f64>,
    v: DVector<f64>,
}

impl TimeseriesDataset {
    /// `tensor` is row-major in (channel, trial, time).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tensor: Vec<f64>,
        channels: usize,
        trials: usize,
        length: usize,
        sampling_rate: f64,
        band: Band,
        stimulus: Vec<f64>,
        v: DVector<f64>,
    ) -> Result<Self> {
        if tensor.len() != channels * trials * length {
            return Err(invalid_input(format!(
                "tensor holds {} values, expected {channels}·{trials}·{length}",
                tensor.len()
            )));
        }
        if length < MIN_LENGTH {
            return Err(invalid_input(format!(
                "time series need at least {MIN_LENGTH} samples, got {length}"
            )));
        }
        band.validate(sampling_rate)?;
        if tensor.iter().any(|x| !x.is_finite()) {
            return Err(invalid_input("tensor contains non-finite values"));
        }
        if stimulus.len() != trials {
            return Err(invalid_input(format!(
                "stimulus has {} entries but there are {trials} trials",
                stimulus.len()
            )));
        }
        if v.len() != channels {
            return Err(invalid_input(format!(
                "v has length {} but there are {channels} channels",
                v.len()
            )));
        }
        Ok(Self {
            tensor,
            channels,
            trials,
            length,
            sampling_rate,
            band,
            stimulus,
            v,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    pub fn band(&self) -> Band {
        self.band
    }

    pub fn stimulus(&self) -> &[f64] {
        &self.stimulus
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn tensor(&self) -> &[f64] {
        &self.tensor
    }

    /// Time series of channel `i` in trial `j`.
    pub fn series(&self, channel: usize, trial: usize) -> &[f64] {
        let start = (channel * self.trials + trial) * self.length;
        &self.tensor[start..start + self.length]
    }

    /// Copy with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            tensor: self.tensor.iter().map(|x| x * factor).collect(),
            ..self.clone()
        }
    }

    pub fn log_bandpower(&self) -> Result<LogBandpower> {
        LogBandpower::new(self.length, self.sampling_rate, self.band)
    }

    fn combine(&self, w: &DVector<f64>, trial: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.length];
        for (i, &wi) in w.iter().enumerate() {
            for (acc, x) in y.iter_mut().zip(self.series(i, trial)) {
                *acc += wi * x;
            }
        }
        y
    }
}

/// `logbp(wᵀF̃_j)` for every trial `j`.
pub fn filtered_logbp(ts: &TimeseriesDataset, w: &DVector<f64>) -> Result<Vec<f64>> {
    filtered_logbp_with(ts, w, true)
}

pub fn filtered_logbp_with(
    ts: &TimeseriesDataset,
    w: &DVector<f64>,
    parallel: bool,
) -> Result<Vec<f64>> {
    if w.len() != ts.channels {
        return Err(invalid_input(format!(
            "filter has length {} but there are {} channels",
            w.len(),
            ts.channels
        )));
    }
    if !(w.norm() > 0.0) {
        return Err(invalid_input("filter must be non-zero"));
    }
    let lbp = ts.log_bandpower()?;
    par::map_indices(ts.trials, parallel, |j| lbp.value(&ts.combine(w, j)))
        .into_iter()
        .collect()
}

/// `Y_w = standardise(logbp(wᵀF̃))` over channel-standardised trial data.
pub struct TimeseriesFeatures {
    data: TimeseriesDataset,
    lbp: LogBandpower,
    parallel: bool,
}

impl TimeseriesFeatures {
    pub fn new(data: TimeseriesDataset, parallel: bool) -> Result<Self> {
        let lbp = data.log_bandpower()?;
        Ok(Self {
            data,
            lbp,
            parallel,
        })
    }

    /// Unstandardised `logbp(wᵀF̃_j)` and the `trials × channels` Jacobian.
    pub fn raw(&self, w: &DVector<f64>, jacobian: bool) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
        let d = self.data.channels;
        let rows = par::map_indices(self.data.trials, self.parallel, |j| -> Result<(f64, Vec<f64>)> {
            let y = self.data.combine(w, j);
            if !jacobian {
                return Ok((self.lbp.value(&y)?, Vec::new()));
            }
            let (v, g) = self.lbp.value_and_gradient(&y)?;
            let row = (0..d)
                .map(|i| {
                    self.data
                        .series(i, j)
                        .iter()
                        .zip(&g)
                        .map(|(x, g)| x * g)
                        .sum::<f64>()
                })
                .collect();
            Ok((v, row))
        });
        let mut values = Vec::with_capacity(rows.len());
        let mut jac = jacobian.then(|| DMatrix::zeros(self.data.trials, d));
        for (j, r) in rows.into_iter().enumerate() {
            let (v, row) = r?;
            values.push(v);
            if let Some(jm) = jac.as_mut() {
                for (i, x) in row.into_iter().enumerate() {
                    jm[(j, i)] = x;
                }
            }
        }
        Ok((values, jac))
    }
}

impl FeatureMap for TimeseriesFeatures {
    fn dim(&self) -> usize {
        self.data.channels
    }

    fn samples(&self) -> usize {
        self.data.trials
    }

    fn evaluate(&self, w: &DVector<f64>, jacobian: bool) -> Result<Features> {
        let (raw, jac) = self.raw(w, jacobian)?;
        let t = Standardization::fit(&raw)
            .map_err(|_| Error::DegenerateConditioning("log-bandpower has zero variance".into()))?;
        let z = t.apply(&raw);
        // ∂z_j/∂y_k = (δ_jk − 1/m − z_j·z_k/m) / s
        let jacobian = jac.map(|jm| {
            let m = z.len() as f64;
            let col_means: Vec<f64> = (0..jm.ncols()).map(|c| jm.column(c).sum() / m).collect();
            let zj: Vec<f64> = (0..jm.ncols())
                .map(|c| jm.column(c).iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / m)
                .collect();
            DMatrix::from_fn(jm.nrows(), jm.ncols(), |r, c| {
                (jm[(r, c)] - col_means[c] - z[r] * zj[c]) / t.scale
            })
        });
        Ok(Features {
            values: z,
            jacobian,
        })
    }
}

/// Per-channel standardisation over all trials and time points.
pub fn standardize_channels(ts: &TimeseriesDataset) -> Result<(TimeseriesDataset, Vec<Standardization>)> {
    let chunk = ts.trials * ts.length;
    let mut tensor = Vec::with_capacity(ts.tensor.len());
    let mut transforms = Vec::with_capacity(ts.channels);
    for i in 0..ts.channels {
        let block = &ts.tensor[i * chunk..(i + 1) * chunk];
        let t = Standardization::fit(block)
            .map_err(|_| invalid_input(format!("channel {} is constant", i + 1)))?;
        tensor.extend(t.apply(block));
        transforms.push(t);
    }
    Ok((
        TimeseriesDataset {
            tensor,
            ..ts.clone()
        },
        transforms,
    ))
}

/// Runs the solver with `Y_w = logbp(wᵀF̃)` and `C1 = logbp(vᵀF̃)`.
pub fn solve_timeseries(ts: &TimeseriesDataset, mode: Mode, cfg: &SolveConfig) -> Result<SolveReport> {
    let c1 = filtered_logbp_with(ts, &ts.v, cfg.parallel)?;
    let (standardized, transforms) = standardize_channels(ts)?;
    let features = TimeseriesFeatures::new(standardized, cfg.parallel)?;
    let v = constraint_in_view(&ts.v, &transforms);
    let problem = Problem::new(&features, &ts.stimulus, &c1, &v)?;
    let solution = solve_problem(&problem, mode, cfg)?;
    let input_filter = to_input_coordinates(&solution.w, &transforms);
    Ok(SolveReport {
        solution,
        standardization: transforms,
        input_filter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Windowing and DFT written out directly.
    fn naive_logbp(x: &[f64], rate: f64, band: Band) -> f64 {
        let n = x.len();
        let mut acc = 0.0;
        let mut count = 0;
        for k in 0..=n / 2 {
            let f = k as f64 * rate / n as f64;
            if f < band.lo || f > band.hi {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &xt) in x.iter().enumerate() {
                let h = 0.5 * (1.0 - (2.0 * PI * t as f64 / (n - 1) as f64).cos());
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                re += h * xt * ang.cos();
                im += h * xt * ang.sin();
            }
            acc += (re * re + im * im).ln();
            count += 1;
        }
        acc / count as f64
    }

    #[test]
    fn window_shape() {
        let h = hanning(9);
        assert_eq!(h[0], 0.0);
        assert_eq!(h[8], 0.0);
        assert!((h[4] - 1.0).abs() < 1e-15);
        for n in [8, 9, 16, 33] {
            let h = hanning(n);
            for t in 0..n {
                assert_eq!(h[t], h[n - 1 - t]);
            }
        }
    }

    #[test]
    fn band_edges_are_inclusive() {
        // rate 64, n 64 → bins at integer Hz
        assert_eq!(band_bins(64, 64.0, Band::new(4.0, 8.0)), vec![4, 5, 6, 7, 8]);
        assert_eq!(band_bins(64, 64.0, Band::new(4.5, 7.5)), vec![5, 6, 7]);
        assert_eq!(band_bins(100, 250.0, Band::new(5.0, 12.5)), vec![2, 3, 4, 5]);
    }

    #[test]
    fn empty_band_is_an_error() {
        let x = vec![1.0; 16];
        assert!(matches!(
            logbp(&x, 16.0, Band::new(1.2, 1.8)),
            Err(Error::InvalidBand(_))
        ));
        assert!(matches!(
            logbp(&x, 16.0, Band::new(3.0, 9.0)),
            Err(Error::InvalidBand(_))
        ));
    }

    #[test]
    fn scaling_adds_two_log_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = normals(&mut rng, 64);
        let band = Band::new(5.0, 20.0);
        let base = logbp(&x, 64.0, band).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| 7.0 * v).collect();
        let got = logbp(&scaled, 64.0, band).unwrap();
        assert!((got - base - 2.0 * 7f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn in_band_tone_beats_out_of_band_tone() {
        let (n, rate) = (128, 128.0);
        let band = Band::new(10.0, 14.0);
        let tone = |f: f64| -> Vec<f64> {
            (0..n).map(|t| (2.0 * PI * f * t as f64 / rate).sin()).collect()
        };
        let inside = logbp(&tone(12.0), rate, band).unwrap();
        let outside = logbp(&tone(40.0), rate, band).unwrap();
        assert!(inside > outside);
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = normals(&mut rng, 16);
        let band = Band::new(2.0, 6.0);
        let got = logbp(&x, 16.0, band).unwrap();
        assert!((got - naive_logbp(&x, 16.0, band)).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_is_floored() {
        let v = logbp(&[0.0; 16], 16.0, Band::new(2.0, 6.0)).unwrap();
        assert_eq!(v, POWER_FLOOR.ln());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = normals(&mut rng, 32);
        let lbp = LogBandpower::new(32, 32.0, Band::new(3.0, 9.0)).unwrap();
        let (_, g) = lbp.value_and_gradient(&x).unwrap();
        let err = gradcheck::check(|x| lbp.value(x).unwrap(), &g, &x, gradcheck::STEP);
        assert!(err < 1e-6, "{err}");
    }

    fn random_ts(rng: &mut ChaCha8Rng, d: usize, m: usize, n: usize) -> TimeseriesDataset {
        let tensor = normals(rng, d * m * n);
        let stimulus = (0..m).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let v = DVector::from_fn(d, |i, _| 1.0 + i as f64);
        TimeseriesDataset::new(tensor, d, m, n, 16.0, Band::new(2.0, 6.0), stimulus, v).unwrap()
    }

    #[test]
    fn one_hot_filter_selects_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ts = random_ts(&mut rng, 3, 5, 16);
        let mut w = DVector::zeros(3);
        w[1] = 1.0;
        let got = filtered_logbp(&ts, &w).unwrap();
        for j in 0..5 {
            let want = logbp(ts.series(1, j), 16.0, ts.band()).unwrap();
            assert_eq!(got[j], want);
        }
    }

    #[test]
    fn filter_scaling_shifts_by_two_log_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ts = random_ts(&mut rng, 3, 4, 16);
        let w = DVector::from_vec(vec![0.3, -1.0, 0.4]);
        let a = filtered_logbp(&ts, &w).unwrap();
        let b = filtered_logbp(&ts, &(&w * 2.0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x - 2.0 * 2f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn filtered_matches_naive_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ts = random_ts(&mut rng, 2, 3, 16);
        let w = DVector::from_vec(vec![0.6, -0.8]);
        let got = filtered_logbp(&ts, &w).unwrap();
        for j in 0..3 {
            let y: Vec<f64> = (0..16)
                .map(|t| 0.6 * ts.series(0, j)[t] - 0.8 * ts.series(1, j)[t])
                .collect();
            assert!((got[j] - naive_logbp(&y, 16.0, ts.band())).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_validation() {
        let band = Band::new(2.0, 6.0);
        let v = DVector::from_element(2, 1.0);
        assert!(TimeseriesDataset::new(vec![0.0; 31], 2, 2, 8, 16.0, band, vec![1.0, -1.0], v.clone()).is_err());
        assert!(TimeseriesDataset::new(vec![0.0; 32], 2, 2, 8, 16.0, Band::new(2.0, 9.0), vec![1.0, -1.0], v.clone()).is_err());
        assert!(TimeseriesDataset::new(vec![0.0; 28], 2, 2, 7, 16.0, band, vec![1.0, -1.0], v.clone()).is_err());
        let mut bad = vec![0.0; 32];
        bad[3] = f64::NAN;
        assert!(TimeseriesDataset::new(bad, 2, 2, 8, 16.0, band, vec![1.0, -1.0], v.clone()).is_err());
        assert!(TimeseriesDataset::new(vec![0.0; 32], 2, 2, 8, 16.0, band, vec![1.0, -1.0], v).is_ok());
    }

    #[test]
    fn feature_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ts = random_ts(&mut rng, 3, 6, 32);
        let features = TimeseriesFeatures::new(ts, false).unwrap();
        let w = DVector::from_vec(vec![0.5, -0.2, 0.9]);
        let f = features.evaluate(&w, true).unwrap();
        let jac = f.jacobian.unwrap();
        let probe: Vec<f64> = normals(&mut rng, 6);
        let analytic: Vec<f64> = (jac.transpose() * DVector::from_vec(probe.clone())).as_slice().to_vec();
        let err = gradcheck::check(
            |x| {
                let v = features.evaluate(&DVector::from_column_slice(x), false).unwrap().values;
                v.iter().zip(&probe).map(|(a, b)| a * b).sum()
            },
            &analytic,
            w.as_slice(),
            gradcheck::STEP,
        );
        assert!(err < 1e-6, "{err}");
    }
}
