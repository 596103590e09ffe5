//! The document written by `run`.

use std::collections::BTreeMap;
use std::path::Path;

use merlin_core::bandpower::Band;
use merlin_core::manifold::DescentConfig;
use merlin_core::SolveReport;
use serde::{Deserialize, Serialize};

use crate::cli::RunMode;
use crate::error::{CliError, CliResult};
use crate::manifest::{read_json, FileEntry};

pub const REPORT_FORMAT: &str = "merlin-report/1";

/// Settings that determine a run's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: RunMode,
    pub sampling_rate: Option<f64>,
    pub band: Option<Band>,
    pub descent: DescentConfig,
    pub restarts: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub config: RunConfig,
    /// Input files by role, with checksums.
    pub inputs: BTreeMap<String, FileEntry>,
    #[serde(flatten)]
    pub result: SolveReport,
}

impl RunReport {
    pub fn read(path: &Path) -> CliResult<Self> {
        let r: Self = read_json(path)?;
        if r.format != REPORT_FORMAT {
            return Err(CliError::input(format!(
                "{}: unsupported report format {:?}",
                path.display(),
                r.format
            )));
        }
        Ok(r)
    }
}
