use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use merlin_core::bandpower::{filtered_logbp, solve_timeseries, Band, TimeseriesDataset};
use merlin_core::independence::partial_correlation;
use merlin_core::manifold::DescentConfig;
use merlin_core::synthetic::{
    oscillatory_recovery_score, recovery_score, sample_oscillatory, sample_sem, GroundTruth,
    MixingKind, OscillatorySpec, OscillatoryTruth, RecoveryScore, SemSpec,
};
use merlin_core::{solve, Dataset, Mode, SolveConfig};
use nalgebra::{DMatrix, DVector};

use crate::cli::{EvalArgs, MixingArg, Preset, RunArgs, RunMode, SynthArgs, TopoArgs};
use crate::error::{CliError, CliResult};
use crate::io::{read_column, read_matrix, sha256_file, write_column, write_matrix, TensorFile};
use crate::manifest::{
    matrix_rows, rows_matrix, to_json, FileEntry, Manifest, Thresholds, TimeseriesInfo,
    MANIFEST_FORMAT,
};
use crate::report::{RunConfig, RunReport, REPORT_FORMAT};

pub const STIMULUS_FILE: &str = "stimulus.csv";
pub const MIXTURE_FILE: &str = "mixture.csv";
pub const TENSOR_FILE: &str = "tensor.mrln";
pub const V_FILE: &str = "v.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn entry(dir: &Path, name: &str) -> CliResult<FileEntry> {
    Ok(FileEntry {
        path: name.to_string(),
        sha256: sha256_file(&dir.join(name))?,
    })
}

fn mixing_kind(arg: MixingArg) -> MixingKind {
    match arg {
        MixingArg::Orthogonal => MixingKind::Orthogonal,
        MixingArg::Gaussian => MixingKind::Gaussian,
        MixingArg::Identity => MixingKind::Identity,
    }
}

/// Writes a benchmark into `args.out` and returns the manifest path.
pub fn synth(args: &SynthArgs) -> CliResult<PathBuf> {
    let dir = &args.out;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let kind = mixing_kind(args.mixing);
    let ts = args.preset.is_timeseries();
    let d = args.d.unwrap_or(if ts { 4 } else { 10 });
    let m = args.m.unwrap_or(if ts { 200 } else { 300 });
    let sem = match args.preset {
        Preset::Fig1 | Preset::Oscillatory => SemSpec::linear(d, kind, args.seed)?,
        Preset::Fig1Square | Preset::OscillatorySquare => SemSpec::square(d, kind, args.seed)?,
        Preset::OscillatoryNull => SemSpec::independent(d, kind, args.seed)?,
    };

    let mut files = BTreeMap::new();
    let (truth, timeseries) = if ts {
        let spec = OscillatorySpec {
            sem,
            length: args.n,
            sampling_rate: args.rate,
            band: Band::new(args.band_lo, args.band_hi),
            noise_std: args.noise,
        };
        let (data, truth) = sample_oscillatory(&spec, m)?;
        TensorFile {
            channels: data.channels(),
            trials: data.trials(),
            length: data.length(),
            values: data.tensor().to_vec(),
        }
        .write(&dir.join(TENSOR_FILE))?;
        write_column(&dir.join(STIMULUS_FILE), "s", data.stimulus())?;
        write_column(&dir.join(V_FILE), "v", data.v().as_slice())?;
        write_matrix(&dir.join(TRUTH_FILE), "c", &truth.source_logbp)?;
        files.insert("tensor".to_string(), entry(dir, TENSOR_FILE)?);
        let info = TimeseriesInfo {
            length: spec.length,
            sampling_rate: spec.sampling_rate,
            band: spec.band,
            noise_std: spec.noise_std,
        };
        (truth.sem, Some(info))
    } else {
        let (data, truth) = sample_sem(&sem, m)?;
        write_column(&dir.join(STIMULUS_FILE), "s", data.stimulus())?;
        write_matrix(&dir.join(MIXTURE_FILE), "f", data.mixture())?;
        write_column(&dir.join(V_FILE), "v", data.v().as_slice())?;
        write_matrix(&dir.join(TRUTH_FILE), "c", &truth.sources)?;
        files.insert("mixture".to_string(), entry(dir, MIXTURE_FILE)?);
        (truth, None)
    };
    files.insert("stimulus".to_string(), entry(dir, STIMULUS_FILE)?);
    files.insert("v".to_string(), entry(dir, V_FILE)?);
    files.insert("truth".to_string(), entry(dir, TRUTH_FILE)?);

    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        preset: args.preset,
        seed: args.seed,
        channels: d,
        samples: m,
        mixing_kind: kind,
        timeseries,
        recommended_mode: match args.preset {
            Preset::Fig1 => RunMode::Linear,
            Preset::Fig1Square => RunMode::Nonlinear,
            _ => RunMode::NonlinearBp,
        },
        thresholds: Thresholds::for_preset(args.preset),
        files,
        mixing: matrix_rows(&truth.mixing),
        unmixing: matrix_rows(&truth.unmixing),
        cause_index: truth.cause_index,
        target_index: truth.target_index,
        v_scale: truth.v_scale,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, to_json(&manifest)).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Explicit path, else `DIR/name` when a data directory was given.
fn resolve(explicit: &Option<PathBuf>, data: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit
        .clone()
        .or_else(|| data.as_ref().map(|d| d.join(name)))
}

fn require(path: Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    path.ok_or_else(|| CliError::input(format!("missing --{flag}")))
}

/// Band and rate from flags, falling back to a data directory's manifest.
fn band_settings(
    rate: Option<f64>,
    lo: Option<f64>,
    hi: Option<f64>,
    data: &Option<PathBuf>,
) -> CliResult<(f64, Band)> {
    let info = match data {
        Some(dir) if dir.join(MANIFEST_FILE).exists() => {
            Manifest::read(&dir.join(MANIFEST_FILE))?.timeseries
        }
        _ => None,
    };
    let rate = rate
        .or(info.as_ref().map(|i| i.sampling_rate))
        .ok_or_else(|| CliError::input("missing --rate (required for band-power data)"))?;
    let lo = lo
        .or(info.as_ref().map(|i| i.band.lo))
        .ok_or_else(|| CliError::input("missing --band-lo (required for band-power data)"))?;
    let hi = hi
        .or(info.as_ref().map(|i| i.band.hi))
        .ok_or_else(|| CliError::input("missing --band-hi (required for band-power data)"))?;
    let band = Band::new(lo, hi);
    band.validate(rate)?;
    Ok((rate, band))
}

fn input_entry(path: &Path) -> CliResult<FileEntry> {
    Ok(FileEntry {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

fn check_len(what: &str, found: usize, expected: usize, of: &str) -> CliResult<()> {
    if found != expected {
        return Err(CliError::input(format!(
            "dimension mismatch: {what} has length {found}, expected {expected} ({of})"
        )));
    }
    Ok(())
}

fn load_static(stimulus: &Path, mixture: &Path, v: &Path) -> CliResult<Dataset> {
    let s = read_column(stimulus, "s")?;
    let f = read_matrix(mixture, "f")?;
    let v = read_column(v, "v")?;
    check_len("v", v.len(), f.ncols(), "mixture columns")?;
    check_len("stimulus", s.len(), f.nrows(), "mixture rows")?;
    Ok(Dataset::new(s, f, DVector::from_vec(v))?)
}

fn load_timeseries(
    stimulus: &Path,
    tensor: &Path,
    v: &Path,
    rate: f64,
    band: Band,
) -> CliResult<TimeseriesDataset> {
    let s = read_column(stimulus, "s")?;
    let t = TensorFile::read(tensor)?;
    let v = read_column(v, "v")?;
    check_len("v", v.len(), t.channels, "tensor channels")?;
    check_len("stimulus", s.len(), t.trials, "tensor trials")?;
    Ok(TimeseriesDataset::new(
        t.values,
        t.channels,
        t.trials,
        t.length,
        rate,
        band,
        s,
        DVector::from_vec(v),
    )?)
}

/// Runs the solver and returns the report.
pub fn run(args: &RunArgs) -> CliResult<RunReport> {
    let stimulus = require(resolve(&args.stimulus, &args.data, STIMULUS_FILE), "stimulus")?;
    let v_path = require(resolve(&args.v, &args.data, V_FILE), "v")?;
    let descent = DescentConfig {
        max_iterations: args.max_iterations,
        gradient_tolerance: args.gradient_tolerance,
        initial_step: args.initial_step,
        backtrack_factor: args.backtrack_factor,
        armijo_constant: args.armijo,
        min_step: args.min_step,
    };
    descent.validate()?;
    let cfg = SolveConfig {
        descent,
        restarts: args.restarts,
        seed: args.seed,
        parallel: !args.sequential,
        ..SolveConfig::default()
    };
    let mut inputs = BTreeMap::new();
    inputs.insert("stimulus".to_string(), input_entry(&stimulus)?);
    inputs.insert("v".to_string(), input_entry(&v_path)?);

    let (result, rate, band) = match args.mode {
        RunMode::Linear | RunMode::Nonlinear => {
            let mixture = require(resolve(&args.mixture, &args.data, MIXTURE_FILE), "mixture")?;
            let data = load_static(&stimulus, &mixture, &v_path)?;
            inputs.insert("mixture".to_string(), input_entry(&mixture)?);
            let mode = if args.mode == RunMode::Linear {
                Mode::Linear
            } else {
                Mode::Nonlinear
            };
            (solve(&data, mode, &cfg)?, None, None)
        }
        RunMode::NonlinearBp => {
            let tensor = require(resolve(&args.tensor, &args.data, TENSOR_FILE), "tensor")?;
            let (rate, band) = band_settings(args.rate, args.band_lo, args.band_hi, &args.data)?;
            let ts = load_timeseries(&stimulus, &tensor, &v_path, rate, band)?;
            inputs.insert("tensor".to_string(), input_entry(&tensor)?);
            (solve_timeseries(&ts, Mode::Nonlinear, &cfg)?, Some(rate), Some(band))
        }
    };
    Ok(RunReport {
        format: REPORT_FORMAT.to_string(),
        config: RunConfig {
            mode: args.mode,
            sampling_rate: rate,
            band,
            descent,
            restarts: args.restarts,
            seed: args.seed,
        },
        inputs,
        result,
    })
}

/// Outcome of `eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub score: RecoveryScore,
    /// `|ρ(C1, Y_w | S)|`, static benchmarks only.
    pub linear_dep: Option<f64>,
    pub thresholds: Thresholds,
    pub pass: bool,
}

impl Evaluation {
    pub fn render(&self) -> String {
        let mut out = format!(
            "recovery_score: {:.6}\nceiling: {:.6}\n",
            self.score.score, self.score.ceiling
        );
        if self.score.degenerate {
            out.push_str("degenerate: recovered signal is constant\n");
        }
        if let Some(dep) = self.linear_dep {
            out.push_str(&format!("linear_dep: {dep:.6}\n"));
        }
        match self.thresholds.recovery_score {
            Some(t) => out.push_str(&format!("threshold: recovery_score >= {t}\n")),
            None => out.push_str("threshold: none (null benchmark)\n"),
        }
        if let Some(t) = self.thresholds.linear_dep_max {
            out.push_str(&format!("threshold: linear_dep <= {t}\n"));
        }
        out.push_str(if self.pass { "result: pass\n" } else { "result: fail\n" });
        out
    }
}

/// Scores a report's `input_filter` against a manifest's ground truth.
pub fn eval(args: &EvalArgs) -> CliResult<Evaluation> {
    let report = RunReport::read(&args.report)?;
    let manifest = Manifest::read(&args.manifest)?;
    let dir = args.manifest.parent().unwrap_or(Path::new("."));

    for (role, input) in &report.inputs {
        let expected = manifest.file(role)?;
        if input.sha256 != expected.sha256 {
            return Err(CliError::input(format!(
                "checksum mismatch for {role}: report has {}, manifest has {}",
                input.sha256, expected.sha256
            )));
        }
    }
    let path_of = |role: &str| -> CliResult<PathBuf> {
        let e = manifest.file(role)?;
        let p = dir.join(&e.path);
        let actual = sha256_file(&p)?;
        if actual != e.sha256 {
            return Err(CliError::input(format!(
                "checksum mismatch for {}: file has {actual}, manifest has {}",
                p.display(),
                e.sha256
            )));
        }
        Ok(p)
    };

    let truth_values = read_matrix(&path_of("truth")?, "c")?;
    let stimulus_path = path_of("stimulus")?;
    let v_path = path_of("v")?;
    let truth = GroundTruth {
        sources: truth_values.clone(),
        stimulus: read_column(&stimulus_path, "s")?,
        cause_index: manifest.cause_index,
        target_index: manifest.target_index,
        mixing: rows_matrix(&manifest.mixing)?,
        unmixing: rows_matrix(&manifest.unmixing)?,
        v_scale: manifest.v_scale,
    };
    let w = &report.result.input_filter;
    let (score, linear_dep) = match &manifest.timeseries {
        Some(info) => {
            let ts = load_timeseries(
                &stimulus_path,
                &path_of("tensor")?,
                &v_path,
                info.sampling_rate,
                info.band,
            )?;
            check_len("report filter", w.len(), ts.channels(), "tensor channels")?;
            let truth = OscillatoryTruth {
                sem: truth,
                source_logbp: truth_values,
            };
            (oscillatory_recovery_score(w, &ts, &truth)?, None)
        }
        None => {
            let data = load_static(&stimulus_path, &path_of("mixture")?, &v_path)?;
            check_len("report filter", w.len(), data.channels(), "mixture columns")?;
            let score = recovery_score(w, &data, &truth)?;
            let y = data.output(&DVector::from_column_slice(w));
            let dep = partial_correlation(&data.c1(), &y, data.stimulus())?.abs();
            (score, Some(dep))
        }
    };
    let t = manifest.thresholds;
    let pass = t.recovery_score.is_none_or(|min| score.score >= min)
        && match (t.linear_dep_max, linear_dep) {
            (Some(max), Some(dep)) => dep <= max,
            _ => true,
        };
    Ok(Evaluation {
        score,
        linear_dep,
        thresholds: t,
        pass,
    })
}

/// Reads `w` from a run report or a one-column CSV.
pub fn read_filter(path: &Path) -> CliResult<Vec<f64>> {
    if path.extension().is_some_and(|e| e == "json") {
        Ok(RunReport::read(path)?.result.input_filter)
    } else {
        read_column(path, "w")
    }
}

/// Sample covariance of the columns of `x`.
pub fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    let means = x.row_mean();
    let centered = DMatrix::from_fn(m, x.ncols(), |r, c| x[(r, c)] - means[c]);
    centered.transpose() * &centered / (m as f64 - 1.0)
}

/// `a = Σw` scaled so that its largest absolute entry is 1.
pub fn pattern(cov: &DMatrix<f64>, w: &[f64]) -> CliResult<Vec<f64>> {
    let a = cov * DVector::from_column_slice(w);
    let max = a.amax();
    if !(max.is_finite() && max > 0.0) {
        return Err(CliError::Numerical("pattern Σw vanishes".into()));
    }
    Ok(a.iter().map(|v| v / max).collect())
}

/// Activation pattern of a filter over a static mixture or trial tensor.
pub fn topo(args: &TopoArgs) -> CliResult<Vec<f64>> {
    let w = read_filter(&args.w)?;
    let mixture = resolve(&args.mixture, &args.data, MIXTURE_FILE).filter(|p| p.exists());
    let cov = if let Some(path) = args.mixture.clone().or(mixture) {
        let x = read_matrix(&path, "f")?;
        check_len("w", w.len(), x.ncols(), "mixture columns")?;
        if x.nrows() < 2 {
            return Err(CliError::input("need at least 2 samples for a covariance"));
        }
        covariance(&x)
    } else {
        let path = require(resolve(&args.tensor, &args.data, TENSOR_FILE), "mixture or --tensor")?;
        let (rate, band) = band_settings(args.rate, args.band_lo, args.band_hi, &args.data)?;
        let t = TensorFile::read(&path)?;
        check_len("w", w.len(), t.channels, "tensor channels")?;
        if t.trials < 2 {
            return Err(CliError::input("need at least 2 trials for a covariance"));
        }
        let ts = TimeseriesDataset::new(
            t.values,
            t.channels,
            t.trials,
            t.length,
            rate,
            band,
            vec![0.0; t.trials],
            DVector::from_element(t.channels, 1.0),
        )?;
        let mut lbp = DMatrix::zeros(ts.trials(), ts.channels());
        for i in 0..ts.channels() {
            let mut e = DVector::zeros(ts.channels());
            e[i] = 1.0;
            for (j, v) in filtered_logbp(&ts, &e)?.into_iter().enumerate() {
                lbp[(j, i)] = v;
            }
        }
        covariance(&lbp)
    };
    pattern(&cov, &w)
}
