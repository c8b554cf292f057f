//! Analysis settings. The JSON form doubles as the provenance block of a
//! report, so a report can be replayed from its own output.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RowMode;
use crate::spectral::{window_by_name, BandPartition, PadPolicy};
use crate::wavelet::{make_filter_bank, BoundaryMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyBase {
    #[default]
    Nats,
    Bits,
}

impl EntropyBase {
    /// Converts an entropy measured in nats.
    pub fn convert(self, nats: f64) -> f64 {
        match self {
            EntropyBase::Nats => nats,
            EntropyBase::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

impl fmt::Display for EntropyBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntropyBase::Nats => "nats",
            EntropyBase::Bits => "bits",
        })
    }
}

impl FromStr for EntropyBase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nats" => Ok(EntropyBase::Nats),
            "bits" => Ok(EntropyBase::Bits),
            other => Err(format!("unknown entropy base '{other}' (expected nats or bits)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdConvention {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub bands: BandPartition,
    pub wavelet: String,
    pub boundary_mode: BoundaryMode,
    /// Decomposition depth; `None` means the deepest admissible level.
    pub levels: Option<usize>,
    pub window_sizes: Vec<usize>,
    pub alphas: Vec<f64>,
    pub row_mode: RowMode,
    pub dc_exclusion: bool,
    pub entropy_base: EntropyBase,
    pub seed: u64,
    pub window: String,
    pub pad: PadPolicy,
    /// Diagonal half-width for the locality ratio.
    pub locality_bandwidth: usize,
    /// Normalize coefficient energies before the per-scale entropy.
    pub wavelet_entropy_normalized: bool,
    pub std: StdConvention,
    /// Significant digits for floats in emitted JSON.
    pub sig_digits: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            bands: BandPartition::default(),
            wavelet: "db2".into(),
            boundary_mode: BoundaryMode::Periodic,
            levels: None,
            window_sizes: vec![16, 32, 64],
            alphas: vec![0.5, 0.25],
            row_mode: RowMode::RowsMean,
            dc_exclusion: true,
            entropy_base: EntropyBase::Nats,
            seed: 0,
            window: "hann".into(),
            pad: PadPolicy::NextPow2,
            locality_bandwidth: 2,
            wavelet_entropy_normalized: true,
            std: StdConvention::Population,
            sig_digits: 6,
        }
    }
}

impl AnalysisConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.check()?;
        Ok(config)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.bands.check().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        make_filter_bank(&self.wavelet).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        window_by_name(&self.window).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return invalid(format!("alpha {a} outside (0, 1]"));
        }
        if let Some(w) = self.window_sizes.iter().find(|w| **w < 4) {
            return invalid(format!("window size {w} below 4"));
        }
        if self.levels == Some(0) {
            return invalid("levels must be at least 1".into());
        }
        if !(1..=17).contains(&self.sig_digits) {
            return invalid(format!("sig_digits {} outside 1..=17", self.sig_digits));
        }
        Ok(())
    }
}
