//! Ground-truth manifest written by `synth` and read by `eval`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use merlin_core::bandpower::Band;
use merlin_core::synthetic::MixingKind;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cli::{Preset, RunMode};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FORMAT: &str = "merlin-benchmark/1";

/// A file and the SHA-256 of its contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// Pass criteria applied by `eval`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Minimum recovery score; absent for null benchmarks.
    pub recovery_score: Option<f64>,
    /// Maximum `|ρ(C1, Y_w | S)|` at the recovered filter.
    pub linear_dep_max: Option<f64>,
}

impl Thresholds {
    /// Values calibrated by pilot runs of each preset.
    pub fn for_preset(preset: Preset) -> Self {
        let (score, dep) = match preset {
            Preset::Fig1 => (Some(0.9), None),
            Preset::Fig1Square => (Some(0.8), Some(0.2)),
            Preset::Oscillatory | Preset::OscillatorySquare => (Some(0.8), None),
            Preset::OscillatoryNull => (None, None),
        };
        Self {
            recovery_score: score,
            linear_dep_max: dep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesInfo {
    pub length: usize,
    pub sampling_rate: f64,
    pub band: Band,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub preset: Preset,
    pub seed: u64,
    pub channels: usize,
    pub samples: usize,
    pub mixing_kind: MixingKind,
    pub timeseries: Option<TimeseriesInfo>,
    pub recommended_mode: RunMode,
    pub thresholds: Thresholds,
    /// Files by role: `stimulus`, `v`, `mixture` or `tensor`, and `truth`.
    pub files: BTreeMap<String, FileEntry>,
    /// Rows of `A`; observations are `F = A·C`.
    pub mixing: Vec<Vec<f64>>,
    pub unmixing: Vec<Vec<f64>>,
    pub cause_index: usize,
    pub target_index: usize,
    /// `vᵀF = v_scale·C1`.
    pub v_scale: f64,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

pub fn rows_matrix(rows: &[Vec<f64>]) -> CliResult<DMatrix<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(CliError::input("ragged matrix in manifest"));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        d,
        rows.iter().flatten().copied(),
    ))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

impl Manifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let m: Self = read_json(path)?;
        if m.format != MANIFEST_FORMAT {
            return Err(CliError::input(format!(
                "{}: unsupported manifest format {:?}",
                path.display(),
                m.format
            )));
        }
        Ok(m)
    }

    pub fn file(&self, role: &str) -> CliResult<&FileEntry> {
        self.files
            .get(role)
            .ok_or_else(|| CliError::input(format!("manifest lists no {role} file")))
    }
}
