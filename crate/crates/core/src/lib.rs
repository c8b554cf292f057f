//! Spectral, wavelet and entropy analysis of transformer attention maps.
//!
//! The crate ingests attention-weight dumps (NPY tensor + JSON manifest),
//! slices each head into a 1-D positional pattern and measures it in the
//! frequency domain, across wavelet scales, under subsampling and through
//! the position/spectrum entropy trade-off. A synthetic generator produces
//! dumps with known structure so every metric can be checked without a
//! model.

pub mod config;
pub mod ingest;
pub mod pipeline;
pub mod registry;
pub mod report;
pub mod scaleinv;
pub mod spectral;
pub mod synth;
pub mod uncertainty;
pub mod wavelet;

pub use config::{AnalysisConfig, EntropyBase};
pub use ingest::{extract_series, load_dump, AttentionDump, Manifest, RowMode, Series};
pub use report::{HeadMetrics, RunReport};

/// Floor applied to every denominator (and inside logarithms) so that
/// degenerate inputs produce finite, flagged results.
pub const DIVISION_FLOOR: f64 = 1e-10;
