//! Power spectra of attention series: windowed, zero-padded DFT, band shares
//! and frequency selectivity.
//!
//! Frequencies are expressed as fractions of the Nyquist frequency, so bin
//! `i` of a transform of length `N` sits at `2i / N`.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::Registry;
use crate::DIVISION_FLOOR;

pub const MIN_SPECTRUM_LEN: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("TooShort: series of length {len} (minimum {MIN_SPECTRUM_LEN})")]
    TooShort { len: usize },
    #[error("ZeroSpectrum: total power {total:e} below {DIVISION_FLOOR:e}")]
    ZeroSpectrum { total: f64 },
    #[error("invalid band partition: {0}")]
    InvalidBands(String),
    #[error("unknown window '{0}'")]
    UnknownWindow(String),
}

/// A tapering window applied before the transform.
pub trait Window: Send + Sync {
    fn name(&self) -> &'static str;

    /// Weight of sample `i` in a window of length `n`.
    fn weight(&self, i: usize, n: usize) -> f64;
}

/// Symmetric Hann window, zero at both ends.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hann;

impl Window for Hann {
    fn name(&self) -> &'static str {
        "hann"
    }

    fn weight(&self, i: usize, n: usize) -> f64 {
        if n <= 1 {
            return 1.0;
        }
        0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Rect;

impl Window for Rect {
    fn name(&self) -> &'static str {
        "rect"
    }

    fn weight(&self, _i: usize, _n: usize) -> f64 {
        1.0
    }
}

/// All built-in windows, keyed by name.
pub fn windows() -> &'static Registry<dyn Window> {
    static REGISTRY: OnceLock<Registry<dyn Window>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn Window> = Registry::new("window");
        reg.register("hann", Arc::new(Hann));
        reg.register("rect", Arc::new(Rect));
        reg
    })
}

pub fn window_by_name(name: &str) -> Result<Arc<dyn Window>, SpectralError> {
    windows()
        .get(name)
        .ok_or_else(|| SpectralError::UnknownWindow(name.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadPolicy {
    /// Zero-pad to the next power of two at or above the series length.
    #[default]
    NextPow2,
    /// Transform at the series length.
    None,
}

impl PadPolicy {
    pub fn padded_len(self, n: usize) -> usize {
        match self {
            PadPolicy::NextPow2 => n.next_power_of_two(),
            PadPolicy::None => n,
        }
    }
}

impl fmt::Display for PadPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PadPolicy::NextPow2 => "next-pow2",
            PadPolicy::None => "none",
        })
    }
}

impl FromStr for PadPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "next-pow2" => Ok(PadPolicy::NextPow2),
            "none" => Ok(PadPolicy::None),
            other => Err(format!("unknown pad policy '{other}'")),
        }
    }
}

/// One-sided power spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    power: Vec<f64>,
    freq_norm: Vec<f64>,
    window: String,
    padded_len: usize,
    dc_excluded: bool,
}

impl PowerSpectrum {
    /// Builds a spectrum from precomputed one-sided power values, for a
    /// transform of length `padded_len`.
    pub fn from_power(power: Vec<f64>, padded_len: usize, window: &str, dc_excluded: bool) -> Self {
        assert_eq!(power.len(), padded_len / 2 + 1, "one-sided bin count");
        let freq_norm = (0..power.len()).map(|i| 2.0 * i as f64 / padded_len as f64).collect();
        Self {
            power,
            freq_norm,
            window: window.to_string(),
            padded_len,
            dc_excluded,
        }
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn freq_norm(&self) -> &[f64] {
        &self.freq_norm
    }

    pub fn window(&self) -> &str {
        &self.window
    }

    pub fn padded_len(&self) -> usize {
        self.padded_len
    }

    pub fn dc_excluded(&self) -> bool {
        self.dc_excluded
    }

    /// First bin that participates in band shares, selectivity and entropy.
    pub fn first_bin(&self) -> usize {
        usize::from(self.dc_excluded)
    }

    /// Power of the bins used for analysis (DC dropped when excluded).
    pub fn analysis_power(&self) -> &[f64] {
        &self.power[self.first_bin()..]
    }

    pub fn total_power(&self) -> f64 {
        self.analysis_power().iter().sum()
    }

    /// Index (into the full bin array) of the strongest analysis bin. Ties
    /// resolve to the lowest frequency.
    pub fn dominant_bin(&self) -> usize {
        let first = self.first_bin();
        let mut best = first;
        for (i, &p) in self.power.iter().enumerate().skip(first) {
            if p > self.power[best] {
                best = i;
            }
        }
        best
    }

    fn checked_total(&self) -> Result<f64, SpectralError> {
        let total = self.total_power();
        if total < DIVISION_FLOOR {
            Err(SpectralError::ZeroSpectrum { total })
        } else {
            Ok(total)
        }
    }
}

/// Computes the one-sided PSD of `values`.
///
/// With `remove_mean` the series mean is subtracted before windowing and the
/// resulting spectrum excludes the DC bin from downstream metrics.
pub fn psd(
    values: &[f64],
    window: &dyn Window,
    pad: PadPolicy,
    remove_mean: bool,
) -> Result<PowerSpectrum, SpectralError> {
    let n = values.len();
    if n < MIN_SPECTRUM_LEN {
        return Err(SpectralError::TooShort { len: n });
    }
    let padded_len = pad.padded_len(n);
    let mean = if remove_mean {
        values.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };

    let mut buffer: Vec<Complex64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| Complex64::new((v - mean) * window.weight(i, n), 0.0))
        .collect();
    buffer.resize(padded_len, Complex64::new(0.0, 0.0));

    let fft = FftPlanner::new().plan_fft_forward(padded_len);
    fft.process(&mut buffer);

    let power = buffer[..=padded_len / 2].iter().map(|c| c.norm_sqr()).collect();
    Ok(PowerSpectrum::from_power(power, padded_len, window.name(), remove_mean))
}

/// Band edges as fractions of the Nyquist frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandPartition {
    pub low_hi: f64,
    pub mid_hi: f64,
}

impl Default for BandPartition {
    fn default() -> Self {
        Self {
            low_hi: 0.25,
            mid_hi: 0.75,
        }
    }
}

impl BandPartition {
    pub fn new(low_hi: f64, mid_hi: f64) -> Result<Self, SpectralError> {
        let bands = Self { low_hi, mid_hi };
        bands.check()?;
        Ok(bands)
    }

    pub fn check(&self) -> Result<(), SpectralError> {
        if 0.0 < self.low_hi && self.low_hi < self.mid_hi && self.mid_hi < 1.0 {
            Ok(())
        } else {
            Err(SpectralError::InvalidBands(format!(
                "need 0 < {} < {} < 1",
                self.low_hi, self.mid_hi
            )))
        }
    }

    /// 0 = low, 1 = mid, 2 = high. Edges belong to the upper band.
    pub fn band_of(&self, freq_norm: f64) -> usize {
        if freq_norm < self.low_hi {
            0
        } else if freq_norm < self.mid_hi {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandShares {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl BandShares {
    pub fn as_array(&self) -> [f64; 3] {
        [self.low, self.mid, self.high]
    }
}

/// Fraction of analysis power falling in each band.
pub fn band_power(spectrum: &PowerSpectrum, bands: &BandPartition) -> Result<BandShares, SpectralError> {
    bands.check()?;
    let total = spectrum.checked_total()?;
    let mut sums = [0.0; 3];
    let first = spectrum.first_bin();
    for (p, f) in spectrum.power[first..].iter().zip(&spectrum.freq_norm[first..]) {
        sums[bands.band_of(*f)] += p;
    }
    Ok(BandShares {
        low: sums[0] / total,
        mid: sums[1] / total,
        high: sums[2] / total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selectivity {
    pub value: f64,
    /// The off-peak power fell below the division floor and was clamped.
    pub saturated: bool,
}

/// Peak-bin power over the power in all other analysis bins.
pub fn frequency_selectivity(spectrum: &PowerSpectrum) -> Result<Selectivity, SpectralError> {
    let total = spectrum.checked_total()?;
    let peak = spectrum.power[spectrum.dominant_bin()];
    let rest = total - peak;
    Ok(Selectivity {
        value: peak / rest.max(DIVISION_FLOOR),
        saturated: rest < DIVISION_FLOOR,
    })
}
