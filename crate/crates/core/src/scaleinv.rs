//! Scale sensitivity under uniform-stride subsampling and multi-resolution
//! sliding-window entropy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Series, SeriesError, MIN_SERIES_LEN};
use crate::uncertainty::shannon_entropy;
use crate::wavelet::{dwt, max_level, BoundaryMode, FilterBank, WaveletDecomposition, WaveletError};
use crate::DIVISION_FLOOR;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScaleError {
    #[error("alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("TooShortAfterScaling: {len} positions survive (need {MIN_SERIES_LEN} and one wavelet level)")]
    TooShortAfterScaling { len: usize },
    #[error("WindowTooLarge: window {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("window size must be at least 2, got {0}")]
    InvalidWindow(usize),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Number of positions kept at scale `alpha`, `⌊αn⌋`.
pub fn scaled_len(n: usize, alpha: f64) -> usize {
    // the nudge keeps e.g. 0.29 * 100 from flooring to 28
    (alpha * n as f64 + 1e-9).floor() as usize
}

/// Positions `round(i(n−1)/(k−1))` for `i < k`, computed in integers.
pub fn stride_indices(n: usize, k: usize) -> Vec<usize> {
    if k <= 1 {
        return vec![0; k.min(n)];
    }
    let mut out: Vec<usize> = (0..k).map(|i| (2 * i * (n - 1) + (k - 1)) / (2 * (k - 1))).collect();
    out.dedup();
    out
}

/// Uniform-stride subsample to `⌊αn⌋` positions, renormalized. `alpha = 1`
/// returns the series unchanged.
pub fn subsample(series: &Series, alpha: f64) -> Result<Series, ScaleError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(ScaleError::InvalidAlpha(alpha));
    }
    let n = series.len();
    let k = scaled_len(n, alpha);
    if k < MIN_SERIES_LEN {
        return Err(ScaleError::TooShortAfterScaling { len: k });
    }
    if k == n {
        return Ok(series.clone());
    }
    let values = series.values();
    let picked: Vec<f64> = stride_indices(n, k).into_iter().map(|i| values[i]).collect();
    Ok(Series::normalized(picked)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSensitivity {
    pub alpha: f64,
    /// `1 − cos` of the aligned coefficient vectors, in [0, 2].
    pub sensitivity: f64,
    /// One of the coefficient vectors had (near) zero norm.
    pub zero_norm: bool,
}

/// Linear interpolation of `src` onto `len` evenly spaced points with both
/// endpoints aligned.
pub fn resample_linear(src: &[f64], len: usize) -> Vec<f64> {
    let m = src.len();
    if m == len {
        return src.to_vec();
    }
    if m == 1 || len == 1 {
        return vec![src[0]; len];
    }
    (0..len)
        .map(|i| {
            let pos = i as f64 * (m - 1) as f64 / (len - 1) as f64;
            let lo = (pos.floor() as usize).min(m - 2);
            let frac = pos - lo as f64;
            src[lo] * (1.0 - frac) + src[lo + 1] * frac
        })
        .collect()
}

/// Cosine distance between two decompositions with the same level count.
/// Each scale of the shorter decomposition is resampled onto the longer
/// one's coefficient count before the scales are concatenated.
pub fn coefficient_distance(a: &WaveletDecomposition, b: &WaveletDecomposition) -> (f64, bool) {
    assert_eq!(a.levels, b.levels, "decompositions must share a level count");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (sa, sb) in a.scales().into_iter().zip(b.scales()) {
        let len = sa.len().max(sb.len());
        xs.extend(resample_linear(sa, len));
        ys.extend(resample_linear(sb, len));
    }
    let dot: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let xx: f64 = xs.iter().map(|x| x * x).sum();
    let yy: f64 = ys.iter().map(|y| y * y).sum();
    let zero_norm = xx.sqrt() < DIVISION_FLOOR || yy.sqrt() < DIVISION_FLOOR;
    let cosine = (dot / (xx * yy).sqrt().max(DIVISION_FLOOR)).clamp(-1.0, 1.0);
    ((1.0 - cosine).clamp(0.0, 2.0), zero_norm)
}

/// Compares two series at the deepest level the shorter one supports.
pub fn compare_series(
    x: &[f64],
    y: &[f64],
    bank: &FilterBank,
    boundary: BoundaryMode,
) -> Result<(f64, bool), ScaleError> {
    let shorter = x.len().min(y.len());
    let levels = max_level(shorter, bank.filter_len());
    if levels == 0 || shorter < bank.filter_len() {
        return Err(ScaleError::TooShortAfterScaling { len: shorter });
    }
    let dx = dwt(x, bank, Some(levels), boundary)?;
    let dy = dwt(y, bank, Some(levels), boundary)?;
    Ok(coefficient_distance(&dx, &dy))
}

/// `1 − cos(W(x), W(x_α))` for the α-subsampled variant of `series`.
pub fn scale_sensitivity(
    series: &Series,
    alpha: f64,
    bank: &FilterBank,
    boundary: BoundaryMode,
) -> Result<ScaleSensitivity, ScaleError> {
    let scaled = subsample(series, alpha)?;
    let (sensitivity, zero_norm) = compare_series(series.values(), scaled.values(), bank, boundary)?;
    Ok(ScaleSensitivity {
        alpha,
        sensitivity,
        zero_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntropyProfile {
    pub window_sizes: Vec<usize>,
    /// Mean normalized entropy per window size, in [0, 1].
    pub mean_entropy: Vec<f64>,
    /// Windows skipped per size because they carried no mass.
    pub empty_windows: Vec<usize>,
}

/// Mean normalized entropy of half-overlapping windows at each size.
pub fn window_entropy(values: &[f64], window_sizes: &[usize]) -> Result<WindowEntropyProfile, ScaleError> {
    let n = values.len();
    let mut mean_entropy = Vec::with_capacity(window_sizes.len());
    let mut empty_windows = Vec::with_capacity(window_sizes.len());
    for &w in window_sizes {
        if w < 2 {
            return Err(ScaleError::InvalidWindow(w));
        }
        if w > n {
            return Err(ScaleError::WindowTooLarge { window: w, len: n });
        }
        let stride = w / 2;
        let (mut sum, mut counted, mut empty) = (0.0, 0usize, 0usize);
        let mut start = 0;
        while start + w <= n {
            let window = &values[start..start + w];
            let mass: f64 = window.iter().sum();
            if mass < DIVISION_FLOOR {
                empty += 1;
            } else {
                let p: Vec<f64> = window.iter().map(|v| v / mass).collect();
                sum += (shannon_entropy(&p) / (w as f64).ln()).clamp(0.0, 1.0);
                counted += 1;
            }
            start += stride;
        }
        mean_entropy.push(if counted == 0 { 0.0 } else { sum / counted as f64 });
        empty_windows.push(empty);
    }
    Ok(WindowEntropyProfile {
        window_sizes: window_sizes.to_vec(),
        mean_entropy,
        empty_windows,
    })
}
