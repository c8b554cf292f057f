//! Per-head metrics, their aggregates, multi-run comparison tables and the
//! JSON / CSV / markdown emitters.
//!
//! JSON is the canonical form: keys are sorted and every float is rounded
//! to a fixed number of significant digits, so emit → parse → emit is
//! byte-stable.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::{AnalysisConfig, StdConvention};
use crate::ingest::Manifest;
use crate::registry::Registry;
use crate::spectral::BandShares;
use crate::uncertainty::{CorrelationResult, HeadId};
use crate::DIVISION_FLOOR;

/// Bumped whenever a field of [`RunReport`] is renamed or removed.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("AllFlagged: every head is flagged for '{metric}'")]
    AllFlagged { metric: String },
    #[error("EmptyInput: {0}")]
    EmptyInput(String),
    #[error("BadBandwidth: bandwidth {bandwidth} for a {n}×{n} matrix")]
    BadBandwidth { bandwidth: usize, n: usize },
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
    #[error("cannot parse report: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("IoError: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Degenerate conditions met while measuring a head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    /// No power outside the excluded DC bin; spectral metrics undefined.
    ZeroSpectrum,
    /// All analysis power in one bin; selectivity clamped.
    SaturatedSelectivity,
    /// Spectral entropy outside `[0, ln bins]`.
    EntropyOutOfBounds,
    /// The subsampled series was too short for some α.
    TooShortAfterScaling,
    /// Zero coefficient norm in a scale comparison.
    ZeroNormScale,
    DegenerateReconstruction,
    /// A wavelet scale carried no energy.
    DegenerateScaleEntropy,
    /// A configured window exceeded the series length and was skipped.
    WindowTooLarge,
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("flag serializes");
        f.write_str(v.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub head_id: HeadId,
    #[serde(default)]
    pub sample_id: String,
    #[serde(default)]
    pub spectral_entropy: Option<f64>,
    #[serde(default)]
    pub frequency_selectivity: Option<f64>,
    #[serde(default)]
    pub band_shares: Option<BandShares>,
    /// Dominant frequency as a fraction of Nyquist.
    #[serde(default)]
    pub dominant_freq: Option<f64>,
    /// Keyed by the α value as written in the config.
    #[serde(default)]
    pub scale_sens: BTreeMap<String, f64>,
    pub positional_entropy: f64,
    #[serde(default)]
    pub wavelet_entropy_per_scale: Vec<f64>,
    #[serde(default)]
    pub reconstruction_error: Option<f64>,
    pub locality_ratio: f64,
    /// Mean sliding-window entropy keyed by window size.
    #[serde(default)]
    pub window_entropy: BTreeMap<String, f64>,
    #[serde(default)]
    pub flags: BTreeSet<Flag>,
}

impl HeadMetrics {
    /// Value of a per-head metric, or `None` when the head is excluded
    /// from that metric's aggregate.
    pub fn metric(&self, key: &str) -> Option<f64> {
        let spectral_ok = !self.flags.contains(&Flag::ZeroSpectrum);
        match key {
            "spectral_entropy" => self.spectral_entropy.filter(|_| spectral_ok),
            "frequency_selectivity" => self
                .frequency_selectivity
                .filter(|_| spectral_ok && !self.flags.contains(&Flag::SaturatedSelectivity)),
            "low_freq_power" => self.band_shares.filter(|_| spectral_ok).map(|b| b.low),
            "mid_freq_power" => self.band_shares.filter(|_| spectral_ok).map(|b| b.mid),
            "high_freq_power" => self.band_shares.filter(|_| spectral_ok).map(|b| b.high),
            "dominant_freq" => self.dominant_freq.filter(|_| spectral_ok),
            "positional_entropy" => Some(self.positional_entropy),
            "reconstruction_error" => self.reconstruction_error,
            "locality_ratio" => Some(self.locality_ratio),
            "wavelet_entropy_mean" => {
                let e = &self.wavelet_entropy_per_scale;
                (!e.is_empty()).then(|| e.iter().sum::<f64>() / e.len() as f64)
            }
            other => {
                if let Some(alpha) = other.strip_prefix("scale_sens_") {
                    self.scale_sens.get(alpha).copied()
                } else if let Some(w) = other.strip_prefix("window_entropy_") {
                    self.window_entropy.get(w).copied()
                } else {
                    None
                }
            }
        }
    }

    /// Metric keys this head carries, in a stable order.
    pub fn metric_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = BASE_METRICS.iter().map(|k| k.to_string()).collect();
        keys.extend(self.scale_sens.keys().map(|a| format!("scale_sens_{a}")));
        keys.extend(self.window_entropy.keys().map(|w| format!("window_entropy_{w}")));
        keys
    }
}

const BASE_METRICS: [&str; 10] = [
    "spectral_entropy",
    "frequency_selectivity",
    "low_freq_power",
    "mid_freq_power",
    "high_freq_power",
    "dominant_freq",
    "positional_entropy",
    "wavelet_entropy_mean",
    "reconstruction_error",
    "locality_ratio",
];

/// Summary statistics of one metric over the unflagged heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    /// Heads left out because they were flagged for this metric.
    #[serde(default)]
    pub excluded: usize,
}

impl MetricStats {
    /// A fixture-friendly constructor: every statistic equals `mean`.
    pub fn constant(mean: f64, count: usize) -> Self {
        Self {
            mean,
            std: 0.0,
            q1: mean,
            median: mean,
            q3: mean,
            iqr: 0.0,
            min: mean,
            max: mean,
            count,
            excluded: 0,
        }
    }
}

/// Linear-interpolation quantile of sorted data, rank `p·(k−1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, σ and quartiles of `values`. `excluded` is carried through
/// untouched. Summation runs in input order.
pub fn summarize(values: &[f64], excluded: usize, convention: StdConvention) -> Option<MetricStats> {
    if values.is_empty() {
        return None;
    }
    let k = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    // a constant sample has exactly zero spread; don't let rounding invent some
    let mean = if min == max {
        min
    } else {
        values.iter().sum::<f64>() / k
    };
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let std = match convention {
        StdConvention::Population => (ss / k).sqrt(),
        StdConvention::Sample if values.len() > 1 => (ss / (k - 1.0)).sqrt(),
        StdConvention::Sample => 0.0,
    };
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Some(MetricStats {
        mean,
        std,
        q1,
        median: quantile_sorted(&sorted, 0.5),
        q3,
        iqr: (q3 - q1).max(0.0),
        min,
        max,
        count: values.len(),
        excluded,
    })
}

/// Aggregates of every metric over a group of heads.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateBlock {
    #[serde(default)]
    pub metrics: BTreeMap<String, MetricStats>,
    /// Metrics for which every head was flagged, with the head count.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub all_flagged: BTreeMap<String, usize>,
}

impl AggregateBlock {
    pub fn mean(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).map(|s| s.mean)
    }
}

/// Aggregates one metric, failing when every head is flagged.
pub fn aggregate_metric(
    heads: &[&HeadMetrics],
    key: &str,
    convention: StdConvention,
) -> Result<MetricStats, ReportError> {
    let values: Vec<f64> = heads.iter().filter_map(|h| h.metric(key)).collect();
    summarize(&values, heads.len() - values.len(), convention).ok_or_else(|| ReportError::AllFlagged {
        metric: key.to_string(),
    })
}

/// Aggregates every metric any of `heads` carries.
pub fn aggregate(heads: &[&HeadMetrics], convention: StdConvention) -> AggregateBlock {
    let keys: BTreeSet<String> = heads.iter().flat_map(|h| h.metric_keys()).collect();
    let mut block = AggregateBlock::default();
    for key in keys {
        match aggregate_metric(heads, &key, convention) {
            Ok(stats) => {
                block.metrics.insert(key, stats);
            }
            Err(_) => {
                block.all_flagged.insert(key, heads.len());
            }
        }
    }
    block
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAggregate {
    pub layer: usize,
    #[serde(flatten)]
    pub block: AggregateBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadCorrelation {
    pub head_id: HeadId,
    #[serde(flatten)]
    pub result: CorrelationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCorrelation {
    pub layer: usize,
    #[serde(flatten)]
    pub result: CorrelationResult,
}

/// Position/spectrum entropy correlation at every scope.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    /// `sequences` when several dumps were analysed together, otherwise
    /// `query-rows` (each query row of the single dump is one sample).
    #[serde(default)]
    pub sample_axis: String,
    #[serde(default)]
    pub per_head: Vec<HeadCorrelation>,
    #[serde(default)]
    pub per_layer: Vec<LayerCorrelation>,
    /// Mean of layer values.
    #[serde(default)]
    pub rho_model: Option<f64>,
    /// One correlation over all samples of all heads pooled together.
    #[serde(default)]
    pub rho_pooled: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerFrameBounds {
    pub layer: usize,
    pub lower: f64,
    pub upper: f64,
    pub atoms: usize,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub manifest: Manifest,
    /// Sequence ids of every analysed dump, in input order.
    #[serde(default)]
    pub sample_ids: Vec<String>,
    pub provenance: AnalysisConfig,
    #[serde(default)]
    pub heads: Vec<HeadMetrics>,
    #[serde(default)]
    pub layers: Vec<LayerAggregate>,
    /// Statistics over all heads pooled across layers.
    pub model: AggregateBlock,
    /// Unweighted mean of the per-layer means.
    #[serde(default)]
    pub model_layer_mean: BTreeMap<String, f64>,
    #[serde(default)]
    pub correlation: CorrelationSummary,
    #[serde(default)]
    pub frame_bounds: Vec<LayerFrameBounds>,
    #[serde(default)]
    pub renormalized_rows: usize,
}

impl RunReport {
    /// Assembles the aggregates from per-head metrics.
    pub fn build(
        manifest: Manifest,
        sample_ids: Vec<String>,
        provenance: AnalysisConfig,
        heads: Vec<HeadMetrics>,
        correlation: CorrelationSummary,
        frame_bounds: Vec<LayerFrameBounds>,
        renormalized_rows: usize,
    ) -> Result<Self, ReportError> {
        if heads.is_empty() {
            return Err(ReportError::EmptyInput("no head metrics".into()));
        }
        let convention = provenance.std;
        let layer_ids: BTreeSet<usize> = heads.iter().map(|h| h.head_id.layer).collect();
        let layers: Vec<LayerAggregate> = layer_ids
            .iter()
            .map(|&layer| {
                let group: Vec<&HeadMetrics> = heads.iter().filter(|h| h.head_id.layer == layer).collect();
                LayerAggregate {
                    layer,
                    block: aggregate(&group, convention),
                }
            })
            .collect();
        let all: Vec<&HeadMetrics> = heads.iter().collect();
        let model = aggregate(&all, convention);
        let mut model_layer_mean = BTreeMap::new();
        for key in model.metrics.keys() {
            let means: Vec<f64> = layers.iter().filter_map(|l| l.block.mean(key)).collect();
            model_layer_mean.insert(key.clone(), means.iter().sum::<f64>() / means.len() as f64);
        }
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            manifest,
            sample_ids,
            provenance,
            heads,
            layers,
            model,
            model_layer_mean,
            correlation,
            frame_bounds,
            renormalized_rows,
        })
    }

    /// Model-level ρ (mean of layers).
    pub fn rho_model(&self) -> Option<f64> {
        self.correlation.rho_model
    }

    pub fn flag_count(&self) -> usize {
        self.heads.iter().map(|h| h.flags.len()).sum()
    }

    pub fn to_json(&self) -> String {
        canonical_json(self, self.provenance.sig_digits)
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ReportError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// One CSV row per head.
    pub fn to_csv(&self) -> Result<String, ReportError> {
        let digits = self.provenance.sig_digits;
        let mut keys: BTreeSet<String> = BTreeSet::new();
        for h in &self.heads {
            keys.extend(h.metric_keys());
        }
        // keep the base metrics first, dynamic ones after
        let mut ordered: Vec<String> = BASE_METRICS.iter().map(|k| k.to_string()).collect();
        ordered.extend(keys.into_iter().filter(|k| !BASE_METRICS.contains(&k.as_str())));

        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["sample_id".to_string(), "layer".into(), "head".into()];
        header.extend(ordered.iter().cloned());
        header.push("wavelet_entropy_per_scale".into());
        header.push("flags".into());
        w.write_record(&header)?;
        for h in &self.heads {
            let mut record = vec![
                h.sample_id.clone(),
                h.head_id.layer.to_string(),
                h.head_id.head.to_string(),
            ];
            for key in &ordered {
                record.push(raw_metric(h, key).map(|v| format_sig(v, digits)).unwrap_or_default());
            }
            record.push(
                h.wavelet_entropy_per_scale
                    .iter()
                    .map(|v| format_sig(*v, digits))
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            record.push(h.flags.iter().map(Flag::to_string).collect::<Vec<_>>().join(";"));
            w.write_record(&record)?;
        }
        csv_string(w)
    }

    /// Model aggregates as a markdown table.
    pub fn to_markdown(&self) -> String {
        let digits = self.provenance.sig_digits;
        let mut rows = Vec::new();
        for (key, s) in &self.model.metrics {
            rows.push(vec![
                key.clone(),
                format_sig(s.mean, digits),
                format_sig(s.std, digits),
                format_sig(s.q1, digits),
                format_sig(s.q3, digits),
                format_sig(s.iqr, digits),
                s.count.to_string(),
                s.excluded.to_string(),
            ]);
        }
        for (key, n) in &self.model.all_flagged {
            let mut row = vec![key.clone()];
            row.extend(std::iter::repeat_n("n/a".to_string(), 5));
            row.extend(["0".to_string(), n.to_string()]);
            rows.push(row);
        }
        rows.sort();
        let header = ["metric", "mean", "std", "q1", "q3", "iqr", "count", "excluded"].map(String::from);
        let mut out = format!("# {} ({})\n\n", self.manifest.model_name, self.manifest.source);
        out.push_str(&markdown_table(&header, &rows));
        let rho = self
            .correlation
            .rho_model
            .map(|r| format_sig(r, digits))
            .unwrap_or_else(|| "n/a".into());
        out.push_str(&format!("\nrho_model (mean of layers): {rho}\n"));
        out
    }
}

/// Per-head value as stored, without exclusion rules (used for raw dumps).
fn raw_metric(h: &HeadMetrics, key: &str) -> Option<f64> {
    match key {
        "spectral_entropy" => h.spectral_entropy,
        "frequency_selectivity" => h.frequency_selectivity,
        "low_freq_power" => h.band_shares.map(|b| b.low),
        "mid_freq_power" => h.band_shares.map(|b| b.mid),
        "high_freq_power" => h.band_shares.map(|b| b.high),
        "dominant_freq" => h.dominant_freq,
        _ => h.metric(key),
    }
}

/// Mean head locality: per row, the mass within `|i − j| ≤ bandwidth`
/// divided by the row mass.
pub fn locality_ratio(matrix: &[f64], n: usize, bandwidth: usize) -> Result<f64, ReportError> {
    if n == 0 || bandwidth >= n || matrix.len() != n * n {
        return Err(ReportError::BadBandwidth { bandwidth, n });
    }
    let mut sum = 0.0;
    for (i, row) in matrix.chunks_exact(n).enumerate() {
        let lo = i.saturating_sub(bandwidth);
        let hi = (i + bandwidth).min(n - 1);
        let band: f64 = row[lo..=hi].iter().sum();
        let total: f64 = row.iter().sum();
        sum += band / total.max(DIVISION_FLOOR);
    }
    Ok((sum / n as f64).clamp(0.0, 1.0))
}

/// One plot-ready row of mean band shares; `None` when every head in the
/// layer was flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerBandRow {
    pub layer: usize,
    pub low: Option<f64>,
    pub mid: Option<f64>,
    pub high: Option<f64>,
}

pub fn layer_frequency_profile(run: &RunReport) -> Vec<LayerBandRow> {
    let layers: BTreeSet<usize> = run.heads.iter().map(|h| h.head_id.layer).collect();
    layers
        .into_iter()
        .map(|layer| {
            let shares: Vec<BandShares> = run
                .heads
                .iter()
                .filter(|h| h.head_id.layer == layer && !h.flags.contains(&Flag::ZeroSpectrum))
                .filter_map(|h| h.band_shares)
                .collect();
            let mean = |f: fn(&BandShares) -> f64| {
                (!shares.is_empty()).then(|| shares.iter().map(f).sum::<f64>() / shares.len() as f64)
            };
            LayerBandRow {
                layer,
                low: mean(|b| b.low),
                mid: mean(|b| b.mid),
                high: mean(|b| b.high),
            }
        })
        .collect()
}

pub fn profile_csv(rows: &[LayerBandRow], digits: usize) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "low", "mid", "high"])?;
    let cell = |v: Option<f64>| v.map(|v| format_sig(v, digits)).unwrap_or_else(|| "null".into());
    for r in rows {
        w.write_record([r.layer.to_string(), cell(r.low), cell(r.mid), cell(r.high)])?;
    }
    csv_string(w)
}

/// A column of a comparison table: where the number comes from and how it
/// is printed.
pub trait MetricColumn: Send + Sync {
    fn header(&self) -> String;
    fn extract(&self, run: &RunReport) -> Option<f64>;
    fn format(&self, value: f64) -> String;
}

#[derive(Debug, Clone, Copy)]
enum Style {
    Fixed(usize),
    Percent(usize),
    Scientific(usize),
}

impl Style {
    fn apply(self, v: f64) -> String {
        match self {
            Style::Fixed(d) => format!("{v:.d$}"),
            Style::Percent(d) => format!("{:.d$}", v * 100.0),
            Style::Scientific(d) => format_scientific(v, d),
        }
    }
}

/// Model-mean of a per-head metric.
struct MeanColumn {
    key: String,
    header: String,
    style: Style,
}

impl MetricColumn for MeanColumn {
    fn header(&self) -> String {
        self.header.clone()
    }

    fn extract(&self, run: &RunReport) -> Option<f64> {
        run.model.mean(&self.key)
    }

    fn format(&self, value: f64) -> String {
        self.style.apply(value)
    }
}

struct RhoColumn {
    pooled: bool,
}

impl MetricColumn for RhoColumn {
    fn header(&self) -> String {
        if self.pooled {
            "Pos-Spec Corr. (pooled)"
        } else {
            "Pos-Spec Corr."
        }
        .into()
    }

    fn extract(&self, run: &RunReport) -> Option<f64> {
        if self.pooled {
            run.correlation.rho_pooled
        } else {
            run.correlation.rho_model
        }
    }

    fn format(&self, value: f64) -> String {
        format!("{value:.3}")
    }
}

fn mean_column(key: &str, header: &str, style: Style) -> Arc<dyn MetricColumn> {
    Arc::new(MeanColumn {
        key: key.into(),
        header: header.into(),
        style,
    })
}

/// Named comparison columns. `scale_sens_<α>` and `window_entropy_<w>` are
/// resolved on demand by [`metric_column`].
pub fn metric_columns() -> &'static Registry<dyn MetricColumn> {
    static REGISTRY: OnceLock<Registry<dyn MetricColumn>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn MetricColumn> = Registry::new("metric");
        let fixed = [
            ("spectral_entropy", "Spectral Entropy", Style::Fixed(3)),
            ("frequency_selectivity", "Frequency Selectivity", Style::Fixed(3)),
            ("low_freq_power_pct", "Low Freq. Power (%)", Style::Percent(1)),
            ("mid_freq_power_pct", "Mid Freq. Power (%)", Style::Percent(1)),
            ("high_freq_power_pct", "High Freq. Power (%)", Style::Percent(1)),
            ("positional_entropy", "Positional Entropy", Style::Fixed(3)),
            ("wavelet_entropy_mean", "Wavelet Entropy", Style::Fixed(3)),
            ("reconstruction_error", "Reconstr. Error", Style::Scientific(2)),
            ("locality_ratio", "Locality Ratio", Style::Fixed(3)),
            ("dominant_freq", "Dominant Freq.", Style::Fixed(3)),
        ];
        for (key, header, style) in fixed {
            let source = key.strip_suffix("_pct").unwrap_or(key);
            reg.register(key, mean_column(source, header, style));
        }
        reg.register("rho", Arc::new(RhoColumn { pooled: false }));
        reg.register("rho_pooled", Arc::new(RhoColumn { pooled: true }));
        reg
    })
}

pub fn metric_column(key: &str) -> Result<Arc<dyn MetricColumn>, ReportError> {
    if let Some(col) = metric_columns().get(key) {
        return Ok(col);
    }
    if let Some(alpha) = key.strip_prefix("scale_sens_") {
        if alpha.parse::<f64>().is_ok() {
            return Ok(mean_column(key, &format!("Scale Sens. ({alpha}x)"), Style::Fixed(3)));
        }
    }
    if let Some(w) = key.strip_prefix("window_entropy_") {
        if w.parse::<usize>().is_ok() {
            return Ok(mean_column(key, &format!("Window Entropy ({w})"), Style::Fixed(3)));
        }
    }
    Err(ReportError::UnknownMetric(key.to_string()))
}

/// Columns that reproduce the checkpoint-evolution layout.
pub const CHECKPOINT_KEYS: [&str; 5] = [
    "spectral_entropy",
    "frequency_selectivity",
    "low_freq_power_pct",
    "scale_sens_0.5",
    "scale_sens_0.25",
];

/// Columns that reproduce the model-family layout.
pub const FAMILY_KEYS: [&str; 4] = ["scale_sens_0.5", "scale_sens_0.25", "rho", "reconstruction_error"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub label_header: String,
    pub keys: Vec<String>,
    pub headers: Vec<String>,
    pub labels: Vec<String>,
    /// Raw values, `None` where a run lacks the metric.
    pub values: Vec<Vec<Option<f64>>>,
    /// Formatted cells, one row per run.
    pub cells: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Orders digit runs numerically so `step 512` sorts before `step 1000`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut a, mut b) = (a, b);
    loop {
        match (a.chars().next(), b.chars().next()) {
            (None, None) => return Ordering::Equal,
            (None, _) => return Ordering::Less,
            (_, None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let ea = a.find(|c: char| !c.is_ascii_digit()).unwrap_or(a.len());
                let eb = b.find(|c: char| !c.is_ascii_digit()).unwrap_or(b.len());
                let (da, db) = (a[..ea].trim_start_matches('0'), b[..eb].trim_start_matches('0'));
                let ord = da.len().cmp(&db.len()).then_with(|| da.cmp(db));
                if ord != Ordering::Equal {
                    return ord;
                }
                a = &a[ea..];
                b = &b[eb..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(&y);
                }
                a = &a[x.len_utf8()..];
                b = &b[y.len_utf8()..];
            }
        }
    }
}

fn run_label(run: &RunReport) -> String {
    if run.manifest.source.is_empty() {
        run.manifest.model_name.clone()
    } else {
        run.manifest.source.clone()
    }
}

/// One row per run (natural order of manifest source), one column per key.
/// Mismatched provenance produces warnings rather than an error.
pub fn compare_runs(reports: &[RunReport], keys: &[&str]) -> Result<ComparisonTable, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::EmptyInput("no reports to compare".into()));
    }
    if keys.is_empty() {
        return Err(ReportError::EmptyInput("no metrics requested".into()));
    }
    let columns = keys.iter().map(|k| metric_column(k)).collect::<Result<Vec<_>, _>>()?;

    let mut order: Vec<&RunReport> = reports.iter().collect();
    order.sort_by(|a, b| natural_cmp(&run_label(a), &run_label(b)));

    let mut warnings = Vec::new();
    let reference = &order[0].provenance;
    for run in &order[1..] {
        if &run.provenance != reference {
            warnings.push(format!(
                "provenance of '{}' differs from '{}'; values may not be comparable",
                run_label(run),
                run_label(order[0])
            ));
        }
    }

    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut cells = Vec::new();
    for run in &order {
        labels.push(run_label(run));
        let row: Vec<Option<f64>> = columns.iter().map(|c| c.extract(run)).collect();
        cells.push(
            row.iter()
                .zip(&columns)
                .map(|(v, c)| v.map(|v| c.format(v)).unwrap_or_else(|| "n/a".into()))
                .collect(),
        );
        values.push(row);
    }
    Ok(ComparisonTable {
        label_header: "Run".into(),
        keys: keys.iter().map(|k| k.to_string()).collect(),
        headers: columns.iter().map(|c| c.header()).collect(),
        labels,
        values,
        cells,
        warnings,
    })
}

impl ComparisonTable {
    pub fn with_label_header(mut self, header: &str) -> Self {
        self.label_header = header.to_string();
        self
    }

    fn header_row(&self) -> Vec<String> {
        std::iter::once(self.label_header.clone())
            .chain(self.headers.iter().cloned())
            .collect()
    }

    fn body_rows(&self) -> Vec<Vec<String>> {
        self.labels
            .iter()
            .zip(&self.cells)
            .map(|(l, c)| std::iter::once(l.clone()).chain(c.iter().cloned()).collect())
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        markdown_table(&self.header_row(), &self.body_rows())
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header_row())?;
        for row in self.body_rows() {
            w.write_record(row)?;
        }
        csv_string(w)
    }

    pub fn to_json(&self, digits: usize) -> String {
        canonical_json(self, digits)
    }
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    let mut out = line(header);
    out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `1.26e-07` style: fixed mantissa digits, signed two-digit exponent.
pub fn format_scientific(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$e}");
    match s.split_once('e') {
        Some((mantissa, exp)) => {
            let e: i32 = exp.parse().unwrap_or(0);
            let sign = if e < 0 { '-' } else { '+' };
            format!("{mantissa}e{sign}{:02}", e.abs())
        }
        None => s,
    }
}

/// Rounds to `digits` significant digits.
pub fn round_sig(v: f64, digits: usize) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", digits.saturating_sub(1), v).parse().unwrap_or(v)
}

/// Shortest decimal text of `v` rounded to `digits` significant digits.
pub fn format_sig(v: f64, digits: usize) -> String {
    let r = round_sig(v, digits);
    if !r.is_finite() {
        "null".into()
    } else if r != 0.0 && !(1e-4..1e9).contains(&r.abs()) {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

fn round_value(v: &mut Value, digits: usize) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            *v = serde_json::Number::from_f64(round_sig(x, digits)).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(|i| round_value(i, digits)),
        Value::Object(map) => map.values_mut().for_each(|i| round_value(i, digits)),
        _ => {}
    }
}

/// Pretty JSON with sorted keys and floats rounded to `digits`.
pub fn canonical_json<T: Serialize>(value: &T, digits: usize) -> String {
    let mut v = serde_json::to_value(value).expect("report types serialize");
    round_value(&mut v, digits);
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
    Markdown,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "md" | "markdown" => Ok(OutputFormat::Markdown),
            other => Err(format!("unknown format '{other}' (expected json, csv or md)")),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
            OutputFormat::Markdown => "md",
        })
    }
}

/// Anything the emitters can render.
pub enum Emittable<'a> {
    Report(&'a RunReport),
    Comparison(&'a ComparisonTable, usize),
    Profile(&'a [LayerBandRow], usize),
}

pub fn render(item: &Emittable<'_>, format: OutputFormat) -> Result<String, ReportError> {
    Ok(match (item, format) {
        (Emittable::Report(r), OutputFormat::Json) => r.to_json(),
        (Emittable::Report(r), OutputFormat::Csv) => r.to_csv()?,
        (Emittable::Report(r), OutputFormat::Markdown) => r.to_markdown(),
        (Emittable::Comparison(t, d), OutputFormat::Json) => t.to_json(*d),
        (Emittable::Comparison(t, _), OutputFormat::Csv) => t.to_csv()?,
        (Emittable::Comparison(t, _), OutputFormat::Markdown) => t.to_markdown(),
        (Emittable::Profile(p, d), OutputFormat::Json) => canonical_json(p, *d),
        (Emittable::Profile(p, d), OutputFormat::Csv) => profile_csv(p, *d)?,
        (Emittable::Profile(p, d), OutputFormat::Markdown) => {
            let cell = |v: Option<f64>| v.map(|v| format_sig(v, *d)).unwrap_or_else(|| "null".into());
            let rows: Vec<Vec<String>> = p
                .iter()
                .map(|r| vec![r.layer.to_string(), cell(r.low), cell(r.mid), cell(r.high)])
                .collect();
            markdown_table(&["layer", "low", "mid", "high"].map(String::from), &rows)
        }
    })
}

/// Renders and writes in one go; `None` writes to standard output.
pub fn emit(item: &Emittable<'_>, format: OutputFormat, path: Option<&Path>) -> Result<(), ReportError> {
    let text = render(item, format)?;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| ReportError::Io {
            path: p.display().to_string(),
            source,
        }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| ReportError::Io {
                path: "<stdout>".into(),
                source,
            }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Dtype, RowMode};
    use proptest::prelude::*;

    pub(crate) fn manifest(source: &str) -> Manifest {
        Manifest {
            model_name: "fixture".into(),
            num_layers: 1,
            num_heads: 1,
            seq_len: 16,
            dtype: Dtype::F64,
            row_mode: RowMode::RowsMean,
            source: source.into(),
            sequence_id: "s0".into(),
        }
    }

    fn head(layer: usize, head: usize, value: f64) -> HeadMetrics {
        HeadMetrics {
            head_id: HeadId { layer, head },
            sample_id: "s0".into(),
            spectral_entropy: Some(value),
            frequency_selectivity: Some(value / 10.0),
            band_shares: Some(BandShares {
                low: 0.7,
                mid: 0.2,
                high: 0.1,
            }),
            dominant_freq: Some(0.1),
            scale_sens: BTreeMap::from([("0.5".to_string(), 0.1)]),
            positional_entropy: 2.0,
            wavelet_entropy_per_scale: vec![0.5, 1.0],
            reconstruction_error: Some(1e-15),
            locality_ratio: 0.5,
            window_entropy: BTreeMap::new(),
            flags: BTreeSet::new(),
        }
    }

    #[test]
    fn quartile_example() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0], 0, StdConvention::Population).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - 1.118_033_988_749_895).abs() < 1e-12);
        assert_eq!((s.q1, s.q3, s.iqr), (1.75, 3.25, 1.5));
        let sample = summarize(&[1.0, 2.0, 3.0, 4.0], 0, StdConvention::Sample).unwrap();
        assert!((sample.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_samples() {
        let one = summarize(&[3.3], 0, StdConvention::Population).unwrap();
        assert_eq!((one.std, one.iqr), (0.0, 0.0));
        let flat = summarize(&[0.7; 9], 0, StdConvention::Population).unwrap();
        assert_eq!((flat.std, flat.iqr), (0.0, 0.0));
        assert!(summarize(&[], 0, StdConvention::Population).is_none());
    }

    #[test]
    fn flagged_heads_are_counted_not_used() {
        let mut flagged = head(0, 1, 100.0);
        flagged.flags.insert(Flag::ZeroSpectrum);
        let heads = [head(0, 0, 1.0), flagged.clone(), head(0, 2, 3.0)];
        let refs: Vec<&HeadMetrics> = heads.iter().collect();
        let s = aggregate_metric(&refs, "spectral_entropy", StdConvention::Population).unwrap();
        assert_eq!((s.mean, s.count, s.excluded), (2.0, 2, 1));
        let p = aggregate_metric(&refs, "positional_entropy", StdConvention::Population).unwrap();
        assert_eq!((p.count, p.excluded), (3, 0));
        assert!(matches!(
            aggregate_metric(&[&flagged], "spectral_entropy", StdConvention::Population),
            Err(ReportError::AllFlagged { .. })
        ));
    }

    #[test]
    fn locality_examples() {
        let n = 16;
        let mut identity = vec![0.0; n * n];
        (0..n).for_each(|i| identity[i * n + i] = 1.0);
        assert_eq!(locality_ratio(&identity, n, 0).unwrap(), 1.0);
        let uniform = vec![1.0 / n as f64; n * n];
        assert!((locality_ratio(&uniform, n, 0).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        assert!(locality_ratio(&uniform, n, 16).is_err());
    }

    #[test]
    fn banded_locality_matches_direct_count() {
        let n = 12;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            let cols: Vec<usize> = (0..n).filter(|j| i.abs_diff(*j) <= 2).collect();
            for j in &cols {
                m[i * n + j] = 1.0 / cols.len() as f64;
            }
        }
        assert!((locality_ratio(&m, n, 2).unwrap() - 1.0).abs() < 1e-12);
        // direct oracle for w = 0: mean of 1/|band| per row
        let oracle: f64 = (0..n)
            .map(|i| 1.0 / (0..n).filter(|j| i.abs_diff(*j) <= 2).count() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((locality_ratio(&m, n, 0).unwrap() - oracle).abs() < 1e-12);
    }

    fn fixture_run(source: &str, se: f64, sel: f64, low: f64, s5: f64, s25: f64) -> RunReport {
        let mut model = AggregateBlock::default();
        let entries = [
            ("spectral_entropy", se),
            ("frequency_selectivity", sel),
            ("low_freq_power", low),
            ("scale_sens_0.5", s5),
            ("scale_sens_0.25", s25),
        ];
        for (k, v) in entries {
            model.metrics.insert(k.into(), MetricStats::constant(v, 1));
        }
        RunReport {
            schema_version: SCHEMA_VERSION,
            manifest: manifest(source),
            sample_ids: vec![],
            provenance: AnalysisConfig::default(),
            heads: vec![],
            layers: vec![],
            model,
            model_layer_mean: BTreeMap::new(),
            correlation: CorrelationSummary::default(),
            frame_bounds: vec![],
            renormalized_rows: 0,
        }
    }

    #[test]
    fn checkpoint_row_layout() {
        let runs = vec![
            fixture_run("5000", 3.4, 0.3, 0.5, 0.742, 0.75),
            fixture_run("1000", 3.522, 0.230, 0.434, 0.617, 0.633),
        ];
        let table = compare_runs(&runs, &CHECKPOINT_KEYS).unwrap();
        assert_eq!(table.labels, vec!["1000", "5000"]);
        let md = table.to_markdown();
        assert!(md.contains("| 1000 | 3.522 | 0.230 | 43.4 | 0.617 | 0.633 |"), "{md}");
        assert!(table.warnings.is_empty());
    }

    #[test]
    fn identical_reports_give_identical_rows() {
        let runs = vec![
            fixture_run("a", 1.0, 2.0, 0.3, 0.1, 0.2),
            fixture_run("a", 1.0, 2.0, 0.3, 0.1, 0.2),
        ];
        let t = compare_runs(&runs, &CHECKPOINT_KEYS).unwrap();
        assert_eq!(t.cells[0], t.cells[1]);
    }

    #[test]
    fn mismatched_provenance_warns() {
        let mut b = fixture_run("b", 1.0, 2.0, 0.3, 0.1, 0.2);
        b.provenance.wavelet = "db4".into();
        let t = compare_runs(&[fixture_run("a", 1.0, 2.0, 0.3, 0.1, 0.2), b], &["spectral_entropy"]).unwrap();
        assert_eq!(t.warnings.len(), 1);
        assert!(compare_runs(&[], &["spectral_entropy"]).is_err());
        assert!(matches!(
            compare_runs(&[fixture_run("a", 1.0, 2.0, 0.3, 0.1, 0.2)], &["bogus"]),
            Err(ReportError::UnknownMetric(_))
        ));
    }

    #[test]
    fn scientific_format() {
        assert_eq!(format_scientific(1.26e-7, 2), "1.26e-07");
        assert_eq!(format_scientific(3.0e12, 1), "3.0e+12");
        assert_eq!(format_scientific(0.0, 2), "0.00e+00");
    }

    #[test]
    fn significant_digit_text() {
        assert_eq!(format_sig(0.123_456_789, 6), "0.123457");
        assert_eq!(format_sig(9.741_03e-16, 6), "9.74103e-16");
        assert_eq!(format_sig(2.0, 6), "2");
        assert_eq!(format_sig(0.0, 6), "0");
        assert_eq!(format_sig(f64::NAN, 6), "null");
    }

    #[test]
    fn natural_ordering() {
        let mut v = vec!["step 10000", "step 512", "step 0", "step 1000", "step 128"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, ["step 0", "step 128", "step 512", "step 1000", "step 10000"]);
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let heads = vec![head(0, 0, 1.234_567_89), head(1, 0, 2.0)];
        let run = RunReport::build(
            manifest("x"),
            vec!["s0".into()],
            AnalysisConfig::default(),
            heads,
            CorrelationSummary::default(),
            vec![],
            0,
        )
        .unwrap();
        let a = run.to_json();
        let b = RunReport::from_json(&a).unwrap().to_json();
        assert_eq!(a, b);
        assert!(a.contains("1.23457"));
    }

    #[test]
    fn layer_profile_constant_field_and_nulls() {
        let mut flagged = head(1, 0, 1.0);
        flagged.flags.insert(Flag::ZeroSpectrum);
        let run = RunReport::build(
            manifest("x"),
            vec![],
            AnalysisConfig::default(),
            vec![head(0, 0, 1.0), head(0, 1, 2.0), flagged],
            CorrelationSummary::default(),
            vec![],
            0,
        )
        .unwrap();
        let rows = layer_frequency_profile(&run);
        assert_eq!(rows.len(), 2);
        assert!((rows[0].low.unwrap() - 0.7).abs() < 1e-15);
        assert!((rows[0].mid.unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(rows[1].low, None);
        assert!(profile_csv(&rows, 6).unwrap().contains("1,null,null,null"));
    }

    #[test]
    fn csv_has_header_and_one_row_per_head() {
        let run = RunReport::build(
            manifest("x"),
            vec![],
            AnalysisConfig::default(),
            vec![head(0, 0, 1.0), head(0, 1, 2.0)],
            CorrelationSummary::default(),
            vec![],
            0,
        )
        .unwrap();
        let text = run.to_csv().unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("sample_id,layer,head,spectral_entropy"));
    }

    proptest! {
        #[test]
        fn aggregation_ignores_head_order(values in prop::collection::vec(0.0f64..10.0, 1..30), seed in any::<u64>()) {
            let heads: Vec<HeadMetrics> = values.iter().enumerate().map(|(i, v)| head(0, i, *v)).collect();
            let mut shuffled = heads.clone();
            // deterministic Fisher-Yates from the seed
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            let a = aggregate_metric(&heads.iter().collect::<Vec<_>>(), "spectral_entropy", StdConvention::Population).unwrap();
            let b = aggregate_metric(&shuffled.iter().collect::<Vec<_>>(), "spectral_entropy", StdConvention::Population).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-12);
            prop_assert!((a.std - b.std).abs() < 1e-12);
            prop_assert_eq!((a.q1, a.q3, a.min, a.max), (b.q1, b.q3, b.min, b.max));
        }

        #[test]
        fn iqr_is_never_negative(values in prop::collection::vec(-1e6f64..1e6, 1..50)) {
            let s = summarize(&values, 0, StdConvention::Population).unwrap();
            prop_assert!(s.iqr >= 0.0);
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
        }

        #[test]
        fn rounding_is_idempotent(v in -1e12f64..1e12, digits in 1usize..12) {
            let once = round_sig(v, digits);
            prop_assert_eq!(round_sig(once, digits), once);
        }
    }
}
