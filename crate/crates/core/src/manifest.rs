//! Per-run manifest: which config produced which metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coevolution::Mode;
use crate::config::CurriculumConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written as a single JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub code_version: String,
    pub mode: Mode,
    pub seed: u64,
    pub per_epoch_metric_digests: Vec<String>,
}

impl RunManifest {
    pub fn new(config: &CurriculumConfig, mode: Mode, rows: &[MetricsRow]) -> Self {
        RunManifest {
            config_digest: config.digest(),
            code_version: CODE_VERSION.to_owned(),
            mode,
            seed: config.seed,
            per_epoch_metric_digests: rows.iter().map(MetricsRow::digest).collect(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("manifest serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, format!("{}\n", self.to_line())).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(text.trim()).map_err(|e| Error::Format {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}
