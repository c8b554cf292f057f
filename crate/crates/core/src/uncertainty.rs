//! Positional and spectral entropies and their correlation across samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::PowerSpectrum;
use crate::DIVISION_FLOOR;

/// Tolerance on the unit-mass check for positional entropy.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UncertaintyError {
    #[error("NotNormalized: series sums to {sum}")]
    NotNormalized { sum: f64 },
    #[error("ZeroSpectrum: total power {total:e}")]
    ZeroSpectrum { total: f64 },
    #[error("InsufficientSamples: {count} samples, need at least 2")]
    InsufficientSamples { count: usize },
    #[error("EmptyInput: no correlation results to aggregate")]
    EmptyInput,
    #[error("scope mismatch: cannot build a {target:?} aggregate from {found:?} results")]
    ScopeMismatch {
        target: CorrelationScope,
        found: CorrelationScope,
    },
}

/// `−Σ p log p` in nats, with the log argument floored at 1e-10.
pub fn shannon_entropy(probabilities: &[f64]) -> f64 {
    -probabilities
        .iter()
        .map(|p| p * p.max(DIVISION_FLOOR).ln())
        .sum::<f64>()
}

/// Entropy of an attention distribution over positions.
pub fn positional_entropy(values: &[f64]) -> Result<f64, UncertaintyError> {
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE || values.iter().any(|v| *v < 0.0) {
        return Err(UncertaintyError::NotNormalized { sum });
    }
    Ok(shannon_entropy(values).max(0.0))
}

/// Entropy of the normalized power spectrum over the analysis bins.
pub fn spectral_entropy(spectrum: &PowerSpectrum) -> Result<f64, UncertaintyError> {
    let power = spectrum.analysis_power();
    let total: f64 = power.iter().sum();
    if total < DIVISION_FLOOR {
        return Err(UncertaintyError::ZeroSpectrum { total });
    }
    let normalized: Vec<f64> = power.iter().map(|p| p / total).collect();
    Ok(shannon_entropy(&normalized).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyPair {
    pub positional: f64,
    pub spectral: f64,
    pub head_id: HeadId,
    pub sample_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationScope {
    Head,
    Layer,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub n_samples: usize,
    pub scope: CorrelationScope,
    /// A variable had (near) zero variance; `rho` is reported as 0.
    pub degenerate: bool,
}

/// Two-pass Pearson correlation. Returns `None` when either standard
/// deviation falls below the division floor.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx / k).sqrt() < DIVISION_FLOOR || (syy / k).sqrt() < DIVISION_FLOOR {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Correlation of positional and spectral entropy across the samples of a
/// single head.
pub fn pos_spec_correlation(pairs: &[EntropyPair]) -> Result<CorrelationResult, UncertaintyError> {
    if pairs.len() < 2 {
        return Err(UncertaintyError::InsufficientSamples { count: pairs.len() });
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.positional).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.spectral).collect();
    let rho = pearson(&xs, &ys);
    Ok(CorrelationResult {
        rho: rho.unwrap_or(0.0),
        n_samples: pairs.len(),
        scope: CorrelationScope::Head,
        degenerate: rho.is_none(),
    })
}

/// Unweighted mean of head (for `Layer`) or layer (for `Model`) results,
/// skipping degenerate ones.
pub fn aggregate_correlation(
    results: &[CorrelationResult],
    scope: CorrelationScope,
) -> Result<CorrelationResult, UncertaintyError> {
    if results.is_empty() {
        return Err(UncertaintyError::EmptyInput);
    }
    let expected = match scope {
        CorrelationScope::Layer => CorrelationScope::Head,
        CorrelationScope::Model => CorrelationScope::Layer,
        CorrelationScope::Head => {
            return Err(UncertaintyError::ScopeMismatch {
                target: scope,
                found: results[0].scope,
            })
        }
    };
    if let Some(bad) = results.iter().find(|r| r.scope != expected) {
        return Err(UncertaintyError::ScopeMismatch {
            target: scope,
            found: bad.scope,
        });
    }
    let included: Vec<f64> = results.iter().filter(|r| !r.degenerate).map(|r| r.rho).collect();
    let degenerate = included.is_empty();
    let rho = if degenerate {
        0.0
    } else {
        included.iter().sum::<f64>() / included.len() as f64
    };
    Ok(CorrelationResult {
        rho,
        n_samples: included.len(),
        scope,
        degenerate,
    })
}
