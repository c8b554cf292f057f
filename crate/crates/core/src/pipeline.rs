//! End-to-end analysis of one or more dumps into a [`RunReport`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{AnalysisConfig, ConfigError};
use crate::ingest::{extract_series, AttentionDump, IngestError, Series, SeriesError};
use crate::report::{
    locality_ratio, CorrelationSummary, Flag, HeadCorrelation, HeadMetrics, LayerCorrelation, LayerFrameBounds,
    ReportError, RunReport,
};
use crate::scaleinv::{scale_sensitivity, window_entropy, ScaleError};
use crate::spectral::{band_power, frequency_selectivity, psd, window_by_name, SpectralError, Window};
use crate::uncertainty::{
    aggregate_correlation, pearson, pos_spec_correlation, positional_entropy, spectral_entropy, CorrelationScope,
    EntropyPair, HeadId, UncertaintyError,
};
use crate::wavelet::{
    dwt, frame_bounds, idwt, make_filter_bank, random_unit_probes, scale_entropy, FilterBank, WaveletError,
};
use crate::DIVISION_FLOOR;

/// Probe vectors drawn per layer for the empirical frame bounds.
pub const FRAME_PROBES: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("EmptyInput: no dumps to analyse")]
    EmptyInput,
    #[error("ShapeMismatch: dump {index} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: [usize; 3],
        found: [usize; 3],
    },
}

impl PipelineError {
    /// Input was readable but failed validation.
    pub fn is_validation(&self) -> bool {
        match self {
            PipelineError::Ingest(e) => e.is_validation(),
            _ => true,
        }
    }
}

/// Resolved strategies for one configuration.
pub struct Analyzer<'a> {
    config: &'a AnalysisConfig,
    window: std::sync::Arc<dyn Window>,
    bank: FilterBank,
}

impl<'a> Analyzer<'a> {
    pub fn new(config: &'a AnalysisConfig) -> Result<Self, PipelineError> {
        config.check()?;
        Ok(Self {
            config,
            window: window_by_name(&config.window)?,
            bank: make_filter_bank(&config.wavelet)?,
        })
    }

    /// Every metric for one head's series. `matrix` is the full n×n head
    /// matrix, used for the locality ratio.
    pub fn measure(
        &self,
        head_id: HeadId,
        sample_id: &str,
        series: &Series,
        matrix: &[f64],
    ) -> Result<HeadMetrics, PipelineError> {
        let c = self.config;
        let base = c.entropy_base;
        let values = series.values();
        let n = values.len();
        let mut flags = std::collections::BTreeSet::new();

        let spectrum = psd(values, self.window.as_ref(), c.pad, c.dc_exclusion)?;
        let (mut se, mut sel, mut shares, mut dominant) = (None, None, None, None);
        match spectral_entropy(&spectrum) {
            Ok(h) => {
                let bins = spectrum.analysis_power().len() as f64;
                if !(-1e-12..=bins.ln() + 1e-12).contains(&h) {
                    flags.insert(Flag::EntropyOutOfBounds);
                }
                se = Some(base.convert(h));
                let s = frequency_selectivity(&spectrum)?;
                if s.saturated {
                    flags.insert(Flag::SaturatedSelectivity);
                }
                sel = Some(s.value);
                shares = Some(band_power(&spectrum, &c.bands)?);
                dominant = Some(spectrum.freq_norm()[spectrum.dominant_bin()]);
            }
            Err(_) => {
                flags.insert(Flag::ZeroSpectrum);
            }
        }

        let decomp = dwt(values, &self.bank, c.levels, c.boundary_mode)?;
        let restored = idwt(&decomp, &self.bank)?;
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = values
            .iter()
            .zip(&restored)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let reconstruction = if norm < DIVISION_FLOOR {
            flags.insert(Flag::DegenerateReconstruction);
            None
        } else {
            Some(diff / norm)
        };
        let profile = scale_entropy(&decomp, c.wavelet_entropy_normalized);
        if profile.degenerate.iter().any(|d| *d) {
            flags.insert(Flag::DegenerateScaleEntropy);
        }

        let mut scale_sens = BTreeMap::new();
        for &alpha in &c.alphas {
            match scale_sensitivity(series, alpha, &self.bank, c.boundary_mode) {
                Ok(s) if s.zero_norm => {
                    flags.insert(Flag::ZeroNormScale);
                }
                Ok(s) => {
                    scale_sens.insert(format!("{alpha}"), s.sensitivity);
                }
                Err(ScaleError::TooShortAfterScaling { .. })
                | Err(ScaleError::Wavelet(WaveletError::TooShort { .. })) => {
                    flags.insert(Flag::TooShortAfterScaling);
                }
                Err(e) => return Err(e.into()),
            }
        }

        let fitting: Vec<usize> = c.window_sizes.iter().copied().filter(|w| *w <= n).collect();
        if fitting.len() < c.window_sizes.len() {
            flags.insert(Flag::WindowTooLarge);
        }
        let windows = window_entropy(values, &fitting)?;
        let window_entropy = windows
            .window_sizes
            .iter()
            .zip(&windows.mean_entropy)
            .map(|(w, e)| (w.to_string(), *e))
            .collect();

        let bandwidth = c.locality_bandwidth.min(n - 1);
        Ok(HeadMetrics {
            head_id,
            sample_id: sample_id.to_string(),
            spectral_entropy: se,
            frequency_selectivity: sel,
            band_shares: shares,
            dominant_freq: dominant,
            scale_sens,
            positional_entropy: base.convert(positional_entropy(values)?),
            wavelet_entropy_per_scale: profile.entropy_per_scale.iter().map(|h| base.convert(*h)).collect(),
            reconstruction_error: reconstruction,
            locality_ratio: locality_ratio(matrix, n, bandwidth)?,
            window_entropy,
            flags,
        })
    }

    /// Positional/spectral entropy of one sample; `None` when the spectrum
    /// is empty after DC exclusion.
    pub fn entropy_pair(
        &self,
        head_id: HeadId,
        sample_id: String,
        values: &[f64],
    ) -> Result<Option<EntropyPair>, PipelineError> {
        let spectrum = psd(values, self.window.as_ref(), self.config.pad, self.config.dc_exclusion)?;
        let Ok(spectral) = spectral_entropy(&spectrum) else {
            return Ok(None);
        };
        let Ok(positional) = positional_entropy(values) else {
            return Ok(None);
        };
        Ok(Some(EntropyPair {
            positional,
            spectral,
            head_id,
            sample_id,
        }))
    }
}

/// Per-head, per-layer and model-level correlation from grouped pairs.
pub fn correlate(pairs_by_head: &BTreeMap<HeadId, Vec<EntropyPair>>, sample_axis: &str) -> CorrelationSummary {
    let mut per_head = Vec::new();
    for (id, pairs) in pairs_by_head {
        if let Ok(result) = pos_spec_correlation(pairs) {
            per_head.push(HeadCorrelation { head_id: *id, result });
        }
    }
    let mut per_layer = Vec::new();
    let layers: std::collections::BTreeSet<usize> = per_head.iter().map(|h| h.head_id.layer).collect();
    for layer in layers {
        let results: Vec<_> = per_head
            .iter()
            .filter(|h| h.head_id.layer == layer && !h.result.degenerate)
            .map(|h| h.result)
            .collect();
        if let Ok(result) = aggregate_correlation(&results, CorrelationScope::Layer) {
            per_layer.push(LayerCorrelation { layer, result });
        }
    }
    let layer_results: Vec<_> = per_layer
        .iter()
        .filter(|l| !l.result.degenerate)
        .map(|l| l.result)
        .collect();
    let rho_model = aggregate_correlation(&layer_results, CorrelationScope::Model)
        .ok()
        .filter(|r| !r.degenerate)
        .map(|r| r.rho);

    let all: Vec<&EntropyPair> = pairs_by_head.values().flatten().collect();
    let rho_pooled = if all.len() >= 2 {
        let xs: Vec<f64> = all.iter().map(|p| p.positional).collect();
        let ys: Vec<f64> = all.iter().map(|p| p.spectral).collect();
        pearson(&xs, &ys)
    } else {
        None
    };
    CorrelationSummary {
        sample_axis: sample_axis.to_string(),
        per_head,
        per_layer,
        rho_model,
        rho_pooled,
    }
}

/// Analyses a batch of dumps with identical shape. With two or more dumps
/// each dump is one correlation sample; with a single dump each query row
/// is one.
pub fn analyze(dumps: &[AttentionDump], config: &AnalysisConfig) -> Result<RunReport, PipelineError> {
    let first = dumps.first().ok_or(PipelineError::EmptyInput)?;
    let shape = [first.num_layers(), first.num_heads(), first.seq_len()];
    for (index, d) in dumps.iter().enumerate() {
        let found = [d.num_layers(), d.num_heads(), d.seq_len()];
        if found != shape {
            return Err(PipelineError::ShapeMismatch {
                index,
                expected: shape,
                found,
            });
        }
    }
    let analyzer = Analyzer::new(config)?;
    let [layers, heads, n] = shape;

    let jobs: Vec<(usize, usize, usize)> = (0..dumps.len())
        .flat_map(|s| (0..layers).flat_map(move |l| (0..heads).map(move |h| (s, l, h))))
        .collect();
    let measured: Vec<(HeadMetrics, Series)> = jobs
        .par_iter()
        .map(|&(s, layer, head)| {
            let dump = &dumps[s];
            let series = extract_series(dump, layer, head, config.row_mode)?;
            let matrix = dump.head_matrix(layer, head)?;
            let metrics = analyzer.measure(HeadId { layer, head }, &dump.manifest().sequence_id, &series, matrix)?;
            Ok((metrics, series))
        })
        .collect::<Result<_, PipelineError>>()?;

    let mut pairs_by_head: BTreeMap<HeadId, Vec<EntropyPair>> = BTreeMap::new();
    let sample_axis = if dumps.len() >= 2 {
        for ((metrics, series), &(s, ..)) in measured.iter().zip(&jobs) {
            let id = format!("{s}:{}", dumps[s].manifest().sequence_id);
            if let Some(pair) = analyzer.entropy_pair(metrics.head_id, id, series.values())? {
                pairs_by_head.entry(metrics.head_id).or_default().push(pair);
            }
        }
        "sequences"
    } else {
        let row_pairs: Vec<(HeadId, Vec<EntropyPair>)> = jobs
            .par_iter()
            .map(|&(_, layer, head)| {
                let id = HeadId { layer, head };
                let matrix = first.head_matrix(layer, head)?;
                let mut pairs = Vec::new();
                for (q, row) in matrix.chunks_exact(n).enumerate() {
                    let row = Series::normalized(row.to_vec())?;
                    if let Some(p) = analyzer.entropy_pair(id, format!("row {q}"), row.values())? {
                        pairs.push(p);
                    }
                }
                Ok((id, pairs))
            })
            .collect::<Result<_, PipelineError>>()?;
        pairs_by_head.extend(row_pairs);
        "query-rows"
    };
    let correlation = correlate(&pairs_by_head, sample_axis);

    // jobs are sample-major, so the first `layers * heads` entries are the first dump
    let mut bounds = Vec::new();
    for layer in 0..layers {
        let atoms: Vec<&[f64]> = measured[layer * heads..(layer + 1) * heads]
            .iter()
            .map(|(_, s)| s.values())
            .collect();
        let probes = random_unit_probes(n, FRAME_PROBES, config.seed ^ layer as u64);
        let fb = frame_bounds(&atoms, &probes)?;
        bounds.push(LayerFrameBounds {
            layer,
            lower: fb.lower,
            upper: fb.upper,
            atoms: atoms.len(),
            probes: FRAME_PROBES,
        });
    }

    let renormalized = dumps.iter().map(|d| d.renormalized_rows()).sum();
    let sample_ids = dumps.iter().map(|d| d.manifest().sequence_id.clone()).collect();
    let heads = measured.into_iter().map(|(m, _)| m).collect();
    Ok(RunReport::build(
        first.manifest().clone(),
        sample_ids,
        config.clone(),
        heads,
        correlation,
        bounds,
        renormalized,
    )?)
}
