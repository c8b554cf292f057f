//! Multi-level orthonormal discrete wavelet transform.
//!
//! Each level correlates the signal with the analysis filters and keeps
//! every second output:
//!
//! ```text
//! approx[o] = Σ_j lowpass[j]  · x[ext(2o + 1 − j)]
//! detail[o] = Σ_j highpass[j] · x[ext(2o + 1 − j)]
//! ```
//!
//! where `ext` maps out-of-range indices according to the boundary mode.
//! Synthesis is the transpose of analysis, which is exact for orthonormal
//! filter banks under both supported boundary modes.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::Registry;
use crate::DIVISION_FLOOR;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveletError {
    #[error("UnknownWavelet: '{0}'")]
    UnknownWavelet(String),
    #[error("TooShort: length {len} admits no decomposition level with a {filter_len}-tap filter")]
    TooShort { len: usize, filter_len: usize },
    #[error("TooManyLevels: requested {requested}, at most {max} for this length")]
    TooManyLevels { requested: usize, max: usize },
    #[error("decomposition needs at least one level")]
    ZeroLevels,
    #[error("IncompatibleBank: decomposition made with '{expected}', got '{found}'")]
    IncompatibleBank { expected: String, found: String },
    #[error("malformed decomposition: {0}")]
    Malformed(String),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("frame bound estimation needs at least one atom and one probe")]
    EmptyInput,
}

/// Orthonormal two-channel analysis filter pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub name: String,
    pub lowpass: Vec<f64>,
    pub highpass: Vec<f64>,
    pub vanishing_moments: usize,
}

impl FilterBank {
    /// Builds the pair from the analysis lowpass; the highpass is its
    /// quadrature mirror `g[j] = (−1)^(j+1) h[L−1−j]`.
    pub fn from_lowpass(name: &str, lowpass: Vec<f64>, vanishing_moments: usize) -> Self {
        let len = lowpass.len();
        let highpass = (0..len)
            .map(|j| {
                let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
                sign * lowpass[len - 1 - j]
            })
            .collect();
        Self {
            name: name.to_string(),
            lowpass,
            highpass,
            vanishing_moments,
        }
    }

    pub fn filter_len(&self) -> usize {
        self.lowpass.len()
    }
}

/// A named wavelet family that can produce its filter bank.
pub trait WaveletFamily: Send + Sync {
    fn name(&self) -> &str;
    fn filter_bank(&self) -> FilterBank;
}

/// Daubechies wavelet with `order` vanishing moments.
#[derive(Debug, Clone, Copy)]
pub struct Daubechies {
    order: usize,
}

// Minimum-phase spectral factor, computed at 60-digit precision.
#[allow(clippy::excessive_precision)]
const DB4_RECONSTRUCTION_LOWPASS: [f64; 8] = [
    0.230_377_813_308_896_500_86,
    0.714_846_570_552_915_647_09,
    0.630_880_767_929_858_907_88,
    -0.027_983_769_416_859_854_211,
    -0.187_034_811_719_093_084_08,
    0.030_841_381_835_560_763_627,
    0.032_883_011_666_885_199_735,
    -0.010_597_401_785_069_032_105,
];

impl Daubechies {
    pub fn new(order: usize) -> Option<Self> {
        matches!(order, 1 | 2 | 4).then_some(Self { order })
    }

    /// Scaling filter in the usual (synthesis) orientation.
    fn scaling_filter(&self) -> Vec<f64> {
        match self.order {
            1 => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            2 => {
                let s3 = 3f64.sqrt();
                let d = 4.0 * std::f64::consts::SQRT_2;
                vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
            }
            4 => DB4_RECONSTRUCTION_LOWPASS.to_vec(),
            _ => unreachable!("constructor restricts orders"),
        }
    }
}

impl WaveletFamily for Daubechies {
    fn name(&self) -> &str {
        match self.order {
            1 => "db1",
            2 => "db2",
            _ => "db4",
        }
    }

    fn filter_bank(&self) -> FilterBank {
        let mut lowpass = self.scaling_filter();
        lowpass.reverse();
        FilterBank::from_lowpass(self.name(), lowpass, self.order)
    }
}

pub fn wavelets() -> &'static Registry<dyn WaveletFamily> {
    static REGISTRY: OnceLock<Registry<dyn WaveletFamily>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn WaveletFamily> = Registry::new("wavelet");
        for order in [1, 2, 4] {
            let family = Daubechies::new(order).expect("supported order");
            reg.register(family.name().to_string(), Arc::new(family));
        }
        reg
    })
}

pub fn make_filter_bank(name: &str) -> Result<FilterBank, WaveletError> {
    wavelets()
        .get(name)
        .map(|w| w.filter_bank())
        .ok_or_else(|| WaveletError::UnknownWavelet(name.to_string()))
}

/// How the signal is continued past its ends at each level.
pub trait BoundaryExtension: Send + Sync {
    fn name(&self) -> &'static str;

    /// Length of the buffer the synthesis step accumulates into.
    fn working_len(&self, n: usize) -> usize;

    fn coeff_len(&self, n: usize, filter_len: usize) -> usize;

    /// Source sample read for (possibly out-of-range) position `idx`.
    fn source_index(&self, idx: isize, n: usize) -> usize;

    /// Buffer slot receiving a synthesis contribution, if any.
    fn synthesis_index(&self, idx: isize, n: usize) -> Option<usize>;
}

/// Circular extension. Odd lengths are first padded by repeating the last
/// sample, so every level is an orthogonal transform of an even-length
/// signal.
#[derive(Debug, Clone, Copy, Default)]
pub struct Periodic;

impl BoundaryExtension for Periodic {
    fn name(&self) -> &'static str {
        "periodic"
    }

    fn working_len(&self, n: usize) -> usize {
        n + n % 2
    }

    fn coeff_len(&self, n: usize, _filter_len: usize) -> usize {
        self.working_len(n) / 2
    }

    fn source_index(&self, idx: isize, n: usize) -> usize {
        let m = idx.rem_euclid(self.working_len(n) as isize) as usize;
        m.min(n - 1)
    }

    fn synthesis_index(&self, idx: isize, n: usize) -> Option<usize> {
        Some(idx.rem_euclid(self.working_len(n) as isize) as usize)
    }
}

/// Half-sample symmetric reflection (`x[-1] = x[0]`), as in the common
/// library default. Produces `⌊(n + L − 1)/2⌋` coefficients per channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct Symmetric;

impl BoundaryExtension for Symmetric {
    fn name(&self) -> &'static str {
        "symmetric"
    }

    fn working_len(&self, n: usize) -> usize {
        n
    }

    fn coeff_len(&self, n: usize, filter_len: usize) -> usize {
        (n + filter_len - 1) / 2
    }

    fn source_index(&self, idx: isize, n: usize) -> usize {
        let period = 2 * n as isize;
        let m = idx.rem_euclid(period) as usize;
        if m < n {
            m
        } else {
            2 * n - 1 - m
        }
    }

    fn synthesis_index(&self, idx: isize, n: usize) -> Option<usize> {
        (0..n as isize).contains(&idx).then_some(idx as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    #[default]
    Periodic,
    Symmetric,
}

impl BoundaryMode {
    pub fn extension(self) -> &'static dyn BoundaryExtension {
        match self {
            BoundaryMode::Periodic => &Periodic,
            BoundaryMode::Symmetric => &Symmetric,
        }
    }
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension().name())
    }
}

impl FromStr for BoundaryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "periodic" => Ok(BoundaryMode::Periodic),
            "symmetric" => Ok(BoundaryMode::Symmetric),
            other => Err(format!(
                "unknown boundary mode '{other}' (expected periodic or symmetric)"
            )),
        }
    }
}

/// Deepest level for a length-`n` signal: ⌊log2(n / (L − 1))⌋.
pub fn max_level(n: usize, filter_len: usize) -> usize {
    let base = filter_len.saturating_sub(1).max(1);
    let mut level = 0;
    while base << (level + 1) <= n {
        level += 1;
    }
    level
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletDecomposition<T = f64> {
    /// Coarsest approximation.
    pub approx: Vec<T>,
    /// Detail coefficients, finest level first.
    pub details: Vec<Vec<T>>,
    pub levels: usize,
    pub boundary_mode: BoundaryMode,
    pub source_len: usize,
    pub bank_name: String,
    /// Signal length entering each level, finest first.
    pub level_input_lens: Vec<usize>,
}

impl<T: Copy> WaveletDecomposition<T> {
    /// Every coefficient, approximation first then details coarsest to
    /// finest.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = self.approx.clone();
        for d in self.details.iter().rev() {
            out.extend_from_slice(d);
        }
        out
    }

    /// Coefficient arrays in entropy-profile order: details level 1..J,
    /// then the approximation.
    pub fn scales(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.details.iter().map(Vec::as_slice).collect();
        out.push(&self.approx);
        out
    }
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("filter tap representable")
}

fn analysis_step<T: Float>(x: &[T], lo: &[T], hi: &[T], ext: &dyn BoundaryExtension) -> (Vec<T>, Vec<T>) {
    let n = x.len();
    let len = ext.coeff_len(n, lo.len());
    let mut approx = Vec::with_capacity(len);
    let mut detail = Vec::with_capacity(len);
    for o in 0..len {
        let centre = 2 * o as isize + 1;
        let (mut a, mut d) = (T::zero(), T::zero());
        for (j, (l, h)) in lo.iter().zip(hi).enumerate() {
            let v = x[ext.source_index(centre - j as isize, n)];
            a = a + *l * v;
            d = d + *h * v;
        }
        approx.push(a);
        detail.push(d);
    }
    (approx, detail)
}

fn synthesis_step<T: Float>(
    approx: &[T],
    detail: &[T],
    lo: &[T],
    hi: &[T],
    n: usize,
    ext: &dyn BoundaryExtension,
) -> Vec<T> {
    let mut out = vec![T::zero(); ext.working_len(n)];
    for (o, (a, d)) in approx.iter().zip(detail).enumerate() {
        let centre = 2 * o as isize + 1;
        for (j, (l, h)) in lo.iter().zip(hi).enumerate() {
            if let Some(t) = ext.synthesis_index(centre - j as isize, n) {
                out[t] = out[t] + *l * *a + *h * *d;
            }
        }
    }
    out.truncate(n);
    out
}

/// Pyramid decomposition. `levels = None` uses [`max_level`].
pub fn dwt<T: Float>(
    values: &[T],
    bank: &FilterBank,
    levels: Option<usize>,
    boundary: BoundaryMode,
) -> Result<WaveletDecomposition<T>, WaveletError> {
    let n = values.len();
    let filter_len = bank.filter_len();
    let max = max_level(n, filter_len);
    if n < filter_len || max == 0 {
        return Err(WaveletError::TooShort { len: n, filter_len });
    }
    let levels = match levels {
        None => max,
        Some(0) => return Err(WaveletError::ZeroLevels),
        Some(j) if j > max => return Err(WaveletError::TooManyLevels { requested: j, max }),
        Some(j) => j,
    };

    let lo: Vec<T> = bank.lowpass.iter().map(|&v| cast(v)).collect();
    let hi: Vec<T> = bank.highpass.iter().map(|&v| cast(v)).collect();
    let ext = boundary.extension();

    let mut current = values.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut level_input_lens = Vec::with_capacity(levels);
    for _ in 0..levels {
        level_input_lens.push(current.len());
        let (approx, detail) = analysis_step(&current, &lo, &hi, ext);
        details.push(detail);
        current = approx;
    }

    Ok(WaveletDecomposition {
        approx: current,
        details,
        levels,
        boundary_mode: boundary,
        source_len: n,
        bank_name: bank.name.clone(),
        level_input_lens,
    })
}

/// Inverse of [`dwt`].
pub fn idwt<T: Float>(decomp: &WaveletDecomposition<T>, bank: &FilterBank) -> Result<Vec<T>, WaveletError> {
    if decomp.bank_name != bank.name {
        return Err(WaveletError::IncompatibleBank {
            expected: decomp.bank_name.clone(),
            found: bank.name.clone(),
        });
    }
    if decomp.details.len() != decomp.levels || decomp.level_input_lens.len() != decomp.levels {
        return Err(WaveletError::Malformed(format!(
            "{} levels but {} detail arrays",
            decomp.levels,
            decomp.details.len()
        )));
    }
    let ext = decomp.boundary_mode.extension();
    let lo: Vec<T> = bank.lowpass.iter().map(|&v| cast(v)).collect();
    let hi: Vec<T> = bank.highpass.iter().map(|&v| cast(v)).collect();

    let mut current = decomp.approx.clone();
    for level in (0..decomp.levels).rev() {
        let n = decomp.level_input_lens[level];
        let detail = &decomp.details[level];
        let expected = ext.coeff_len(n, bank.filter_len());
        if detail.len() != expected || current.len() != expected {
            return Err(WaveletError::Malformed(format!(
                "level {} expects {expected} coefficients, found {} approx / {} detail",
                level + 1,
                current.len(),
                detail.len()
            )));
        }
        current = synthesis_step(&current, detail, &lo, &hi, n, ext);
    }
    Ok(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionError {
    pub value: f64,
    /// The input had (near) zero norm.
    pub degenerate: bool,
}

/// Relative Frobenius error of a forward/inverse round trip.
pub fn reconstruction_error<T: Float>(
    values: &[T],
    bank: &FilterBank,
    levels: Option<usize>,
    boundary: BoundaryMode,
) -> Result<ReconstructionError, WaveletError> {
    let decomp = dwt(values, bank, levels, boundary)?;
    let restored = idwt(&decomp, bank)?;
    let to_f64 = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let norm = values.iter().map(|v| to_f64(*v).powi(2)).sum::<f64>().sqrt();
    let diff = values
        .iter()
        .zip(&restored)
        .map(|(a, b)| to_f64(*a - *b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(ReconstructionError {
        value: diff / norm.max(DIVISION_FLOOR),
        degenerate: norm < DIVISION_FLOOR,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEntropyProfile {
    /// Detail levels 1..J, then the approximation. Nats.
    pub entropy_per_scale: Vec<f64>,
    pub normalized: bool,
    /// Scales that were empty or carried no energy.
    pub degenerate: Vec<bool>,
}

/// Entropy of coefficient energies at every scale.
///
/// With `normalize` the energies are turned into a distribution first;
/// otherwise the raw energies are used as printed in the usual
/// `−Σ |W|² log |W|²` form.
pub fn scale_entropy(decomp: &WaveletDecomposition<f64>, normalize: bool) -> ScaleEntropyProfile {
    let mut entropy_per_scale = Vec::with_capacity(decomp.levels + 1);
    let mut degenerate = Vec::with_capacity(decomp.levels + 1);
    for coeffs in decomp.scales() {
        let energies: Vec<f64> = coeffs.iter().map(|c| c * c).collect();
        let total: f64 = energies.iter().sum();
        let h = if coeffs.is_empty() {
            0.0
        } else if normalize {
            let total = total.max(DIVISION_FLOOR);
            -energies
                .iter()
                .map(|e| {
                    let p = e / total;
                    p * p.max(DIVISION_FLOOR).ln()
                })
                .sum::<f64>()
        } else {
            -energies.iter().map(|e| e * e.max(DIVISION_FLOOR).ln()).sum::<f64>()
        };
        entropy_per_scale.push(h);
        degenerate.push(coeffs.is_empty() || total < DIVISION_FLOOR);
    }
    ScaleEntropyProfile {
        entropy_per_scale,
        normalized: normalize,
        degenerate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Empirical frame bounds: the extreme values of `Σ_h ⟨f, φ_h⟩² / ‖f‖²`
/// over the probe vectors. The result always lies inside the true bounds
/// (the extreme eigenvalues of the frame operator).
pub fn frame_bounds<A: AsRef<[f64]>, P: AsRef<[f64]>>(atoms: &[A], probes: &[P]) -> Result<FrameBounds, WaveletError> {
    let Some(first) = atoms.first() else {
        return Err(WaveletError::EmptyInput);
    };
    if probes.is_empty() {
        return Err(WaveletError::EmptyInput);
    }
    let n = first.as_ref().len();
    if let Some(i) = atoms.iter().position(|a| a.as_ref().len() != n) {
        return Err(WaveletError::DimensionMismatch(format!(
            "atom {i} has length {}, expected {n}",
            atoms[i].as_ref().len()
        )));
    }
    if let Some(i) = probes.iter().position(|p| p.as_ref().len() != n) {
        return Err(WaveletError::DimensionMismatch(format!(
            "probe {i} has length {}, expected {n}",
            probes[i].as_ref().len()
        )));
    }

    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    for probe in probes {
        let f = probe.as_ref();
        let norm_sq: f64 = f.iter().map(|v| v * v).sum();
        let captured: f64 = atoms
            .iter()
            .map(|atom| {
                let dot: f64 = atom.as_ref().iter().zip(f).map(|(a, b)| a * b).sum();
                dot * dot
            })
            .sum();
        let ratio = captured / norm_sq.max(DIVISION_FLOOR);
        lower = lower.min(ratio);
        upper = upper.max(ratio);
    }
    Ok(FrameBounds { lower, upper })
}

/// `count` unit vectors in ℝⁿ with Gaussian-direction distribution, drawn
/// from ChaCha8 seeded with `seed`.
pub fn random_unit_probes(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            // Box-Muller keeps the draw sequence independent of rand_distr versions
            let mut v: Vec<f64> = (0..n)
                .map(|_| {
                    let u1: f64 = 1.0 - rng.gen::<f64>();
                    let u2: f64 = rng.gen::<f64>();
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(DIVISION_FLOOR);
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Dense matrix of one periodic analysis level, built from index
    /// arithmetic alone. Rows: approx then detail.
    fn periodic_level_matrix(n: usize, taps: &[f64]) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; n]; n / 2];
        for (o, row) in m.iter_mut().enumerate() {
            for (j, t) in taps.iter().enumerate() {
                let col = (2 * o as isize + 1 - j as isize).rem_euclid(n as isize) as usize;
                row[col] += t;
            }
        }
        m
    }

    fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        m.iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    #[test]
    fn filter_bank_invariants() {
        for name in ["db1", "db2", "db4"] {
            let bank = make_filter_bank(name).unwrap();
            let lo_sum: f64 = bank.lowpass.iter().sum();
            let hi_sum: f64 = bank.highpass.iter().sum();
            let energy: f64 = bank.lowpass.iter().chain(&bank.highpass).map(|v| v * v).sum();
            assert!((lo_sum - std::f64::consts::SQRT_2).abs() < 1e-12, "{name}");
            assert!(hi_sum.abs() < 1e-12, "{name}");
            assert!((energy - 2.0).abs() < 1e-12, "{name}");
            // orthogonal to even shifts
            let l = bank.filter_len();
            for shift in (2..l).step_by(2) {
                let dot: f64 = (0..l - shift).map(|i| bank.lowpass[i] * bank.lowpass[i + shift]).sum();
                assert!(dot.abs() < 1e-12, "{name} shift {shift}");
            }
            for p in 0..bank.vanishing_moments {
                let moment: f64 = bank
                    .highpass
                    .iter()
                    .enumerate()
                    .map(|(j, g)| g * (j as f64).powi(p as i32))
                    .sum();
                assert!(moment.abs() < 1e-10, "{name} moment {p}: {moment}");
            }
        }
    }

    #[test]
    fn named_banks() {
        let haar = make_filter_bank("db1").unwrap();
        assert_eq!(haar.lowpass, vec![std::f64::consts::FRAC_1_SQRT_2; 2]);
        assert_eq!(make_filter_bank("db2").unwrap().filter_len(), 4);
        assert_eq!(make_filter_bank("db4").unwrap().filter_len(), 8);
        assert_eq!(
            make_filter_bank("sym7"),
            Err(WaveletError::UnknownWavelet("sym7".into()))
        );
        assert_eq!(wavelets().names(), vec!["db1", "db2", "db4"]);
    }

    #[test]
    fn level_rule() {
        assert_eq!(max_level(16, 4), 2);
        assert_eq!(max_level(64, 4), 4);
        assert_eq!(max_level(8, 4), 1);
        assert_eq!(max_level(5, 4), 0);
        assert_eq!(max_level(16, 2), 4);
        assert_eq!(max_level(512, 8), 6);
    }

    #[test]
    fn haar_pairwise_constant() {
        let bank = make_filter_bank("db1").unwrap();
        let (a, b) = (0.3, 0.7);
        let d = dwt(&[a, a, b, b], &bank, Some(1), BoundaryMode::Periodic).unwrap();
        assert!(d.details[0].iter().all(|v| v.abs() < 1e-15));
        assert!((d.approx[0] - a * std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((d.approx[1] - b * std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn db2_kills_a_ramp_away_from_the_wrap() {
        let bank = make_filter_bank("db2").unwrap();
        let ramp: Vec<f64> = (0..16).map(|t| t as f64).collect();
        let d = dwt(&ramp, &bank, None, BoundaryMode::Periodic).unwrap();
        assert_eq!(d.levels, 2);
        // level 1: only o = 0 reads wrapped samples
        assert!(d.details[0][0].abs() > 1e-3);
        assert!(d.details[0][1..].iter().all(|v| v.abs() < 1e-10), "{:?}", d.details[0]);
        // level 2: o < 2 touch the wrapped level-1 approximation
        assert!(d.details[1][2..].iter().all(|v| v.abs() < 1e-10), "{:?}", d.details[1]);
    }

    #[test]
    fn pyramid_matches_dense_convolution() {
        let bank = make_filter_bank("db2").unwrap();
        let x = random_vec(64, 21);
        let d = dwt(&x, &bank, Some(3), BoundaryMode::Periodic).unwrap();
        let mut current = x;
        for level in 0..3 {
            let n = current.len();
            let detail = mat_vec(&periodic_level_matrix(n, &bank.highpass), &current);
            let approx = mat_vec(&periodic_level_matrix(n, &bank.lowpass), &current);
            for (a, b) in detail.iter().zip(&d.details[level]) {
                assert!((a - b).abs() < 1e-10);
            }
            current = approx;
        }
        for (a, b) in current.iter().zip(&d.approx) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for name in ["db1", "db2", "db4"] {
            let bank = make_filter_bank(name).unwrap();
            for mode in [BoundaryMode::Periodic, BoundaryMode::Symmetric] {
                for n in [8, 9, 16, 31, 64, 100, 257] {
                    let x = random_vec(n, n as u64);
                    let Ok(d) = dwt(&x, &bank, None, mode) else { continue };
                    let y = idwt(&d, &bank).unwrap();
                    assert_eq!(y.len(), n);
                    let err = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                    assert!(err / norm < 1e-10, "{name} {mode} n={n}: {}", err / norm);
                }
            }
        }
    }

    #[test]
    fn zero_coefficients_reconstruct_zero() {
        let bank = make_filter_bank("db2").unwrap();
        let mut d = dwt(&random_vec(32, 4), &bank, None, BoundaryMode::Periodic).unwrap();
        d.approx.iter_mut().for_each(|v| *v = 0.0);
        d.details.iter_mut().flatten().for_each(|v| *v = 0.0);
        assert!(idwt(&d, &bank).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dropping_details_projects_onto_the_coarse_space() {
        let bank = make_filter_bank("db2").unwrap();
        let n = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noisy: Vec<f64> = (0..n)
            .map(|t| t as f64 / n as f64 + 0.05 * rng.gen_range(-1.0..1.0))
            .collect();
        let mut d = dwt(&noisy, &bank, Some(2), BoundaryMode::Periodic).unwrap();
        d.details.iter_mut().flatten().for_each(|v| *v = 0.0);
        let smooth = idwt(&d, &bank).unwrap();

        // oracle: P = Aᵀ A with A the dense two-level approximation operator
        let a1 = periodic_level_matrix(n, &bank.lowpass);
        let a2 = periodic_level_matrix(n / 2, &bank.lowpass);
        let a: Vec<Vec<f64>> = a2
            .iter()
            .map(|row| {
                (0..n)
                    .map(|c| row.iter().zip(&a1).map(|(r, m)| r * m[c]).sum())
                    .collect()
            })
            .collect();
        let coeffs = mat_vec(&a, &noisy);
        for t in 0..n {
            let p: f64 = a.iter().zip(&coeffs).map(|(row, c)| row[t] * c).sum();
            assert!((p - smooth[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn incompatible_bank() {
        let d = dwt(
            &random_vec(16, 1),
            &make_filter_bank("db2").unwrap(),
            None,
            BoundaryMode::Periodic,
        )
        .unwrap();
        assert!(matches!(
            idwt(&d, &make_filter_bank("db1").unwrap()),
            Err(WaveletError::IncompatibleBank { .. })
        ));
    }

    #[test]
    fn level_errors() {
        let bank = make_filter_bank("db2").unwrap();
        assert!(matches!(
            dwt(&[1.0; 3], &bank, None, BoundaryMode::Periodic),
            Err(WaveletError::TooShort { .. })
        ));
        assert!(matches!(
            dwt(&[1.0; 5], &bank, None, BoundaryMode::Periodic),
            Err(WaveletError::TooShort { .. })
        ));
        assert_eq!(
            dwt(&[1.0; 16], &bank, Some(3), BoundaryMode::Periodic),
            Err(WaveletError::TooManyLevels { requested: 3, max: 2 })
        );
        assert_eq!(
            dwt(&[1.0; 16], &bank, Some(0), BoundaryMode::Periodic),
            Err(WaveletError::ZeroLevels)
        );
    }

    #[test]
    fn zero_series_error_is_degenerate() {
        let bank = make_filter_bank("db2").unwrap();
        let e = reconstruction_error(&[0.0; 16], &bank, None, BoundaryMode::Periodic).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.degenerate);
    }

    #[test]
    fn batch_reconstruction_error_is_tiny() {
        let bank = make_filter_bank("db2").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        let worst = (0..500)
            .map(|_| {
                let n = rng.gen_range(8..300);
                let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                reconstruction_error(&x, &bank, None, BoundaryMode::Periodic)
                    .unwrap()
                    .value
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn scale_entropy_extremes() {
        let decomp = WaveletDecomposition {
            approx: vec![0.5; 4],
            details: vec![vec![0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![]],
            levels: 2,
            boundary_mode: BoundaryMode::Periodic,
            source_len: 16,
            bank_name: "db2".into(),
            level_input_lens: vec![16, 8],
        };
        let p = scale_entropy(&decomp, true);
        assert_eq!(p.entropy_per_scale[0], 0.0);
        assert_eq!(p.entropy_per_scale[1], 0.0);
        assert!(p.degenerate[1]);
        assert!((p.entropy_per_scale[2] - 4f64.ln()).abs() < 1e-12);
        assert_eq!(p.degenerate, vec![false, true, false]);
    }

    #[test]
    fn scale_entropy_matches_direct_sum() {
        let bank = make_filter_bank("db2").unwrap();
        let d = dwt(&random_vec(64, 12), &bank, None, BoundaryMode::Periodic).unwrap();
        for normalize in [true, false] {
            let profile = scale_entropy(&d, normalize);
            for (s, coeffs) in d.scales().iter().enumerate() {
                let e: Vec<f64> = coeffs.iter().map(|c| c * c).collect();
                let total: f64 = e.iter().sum();
                let mut h = 0.0;
                for v in &e {
                    let w = if normalize { v / total } else { *v };
                    if w > 0.0 {
                        h -= w * w.ln();
                    }
                }
                assert!((profile.entropy_per_scale[s] - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frame_bounds_of_orthonormal_bases() {
        let n = 6;
        let basis: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        let probes = random_unit_probes(n, 50, 3);
        let b = frame_bounds(&basis, &probes).unwrap();
        assert!((b.lower - 1.0).abs() < 1e-12 && (b.upper - 1.0).abs() < 1e-12);

        let twice: Vec<Vec<f64>> = basis.iter().chain(&basis).cloned().collect();
        let b = frame_bounds(&twice, &probes).unwrap();
        assert!((b.lower - 2.0).abs() < 1e-12 && (b.upper - 2.0).abs() < 1e-12);
    }

    #[test]
    fn frame_bounds_sit_inside_the_gram_spectrum() {
        use nalgebra::DMatrix;
        let (n, atoms_count) = (16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let atoms: Vec<Vec<f64>> = (0..atoms_count)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let probes = random_unit_probes(n, 256, 7);
        let est = frame_bounds(&atoms, &probes).unwrap();

        let phi = DMatrix::from_fn(atoms_count, n, |i, j| atoms[i][j]);
        let eig = (phi.transpose() * &phi).symmetric_eigen();
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        assert!(lo - 1e-9 <= est.lower && est.lower <= est.upper && est.upper <= hi + 1e-9);
    }

    #[test]
    fn frame_bounds_errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert_eq!(frame_bounds(&empty, &[vec![1.0]]), Err(WaveletError::EmptyInput));
        assert!(matches!(
            frame_bounds(&[vec![1.0, 0.0]], &[vec![1.0]]),
            Err(WaveletError::DimensionMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn periodic_transform_preserves_energy(k in 1usize..12, levels in 1usize..4, seed in any::<u64>()) {
            let bank = make_filter_bank("db2").unwrap();
            let n = (k + 2) << levels;
            let x = random_vec(n, seed);
            let d = dwt(&x, &bank, Some(levels.min(max_level(n, 4))), BoundaryMode::Periodic).unwrap();
            let coeff_energy: f64 = d.flatten().iter().map(|c| c * c).sum();
            let energy: f64 = x.iter().map(|v| v * v).sum();
            prop_assert!((coeff_energy - energy).abs() < 1e-9 * energy.max(1.0));
        }

        #[test]
        fn transform_is_linear(n in 8usize..120, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>(), symmetric in any::<bool>()) {
            let bank = make_filter_bank("db2").unwrap();
            let mode = if symmetric { BoundaryMode::Symmetric } else { BoundaryMode::Periodic };
            let x = random_vec(n, seed);
            let y = random_vec(n, seed.wrapping_add(1));
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let dx = dwt(&x, &bank, None, mode).unwrap().flatten();
            let dy = dwt(&y, &bank, None, mode).unwrap().flatten();
            let dc = dwt(&combo, &bank, None, mode).unwrap().flatten();
            for ((cx, cy), cc) in dx.iter().zip(&dy).zip(&dc) {
                prop_assert!((a * cx + b * cy - cc).abs() < 1e-10);
            }
        }

        #[test]
        fn perfect_reconstruction_everywhere(n in 8usize..300, seed in any::<u64>(), which in 0usize..3, symmetric in any::<bool>(), level_pick in 0usize..8) {
            let bank = make_filter_bank(["db1", "db2", "db4"][which]).unwrap();
            let mode = if symmetric { BoundaryMode::Symmetric } else { BoundaryMode::Periodic };
            let max = max_level(n, bank.filter_len());
            prop_assume!(max >= 1 && n >= bank.filter_len());
            let levels = 1 + level_pick % max;
            let x = random_vec(n, seed);
            let e = reconstruction_error(&x, &bank, Some(levels), mode).unwrap();
            prop_assert!(e.value < 1e-10, "error {}", e.value);
        }

        #[test]
        fn affine_details_vanish_in_the_interior(n in 16usize..128, slope in -2.0f64..2.0, offset in -5.0f64..5.0) {
            let bank = make_filter_bank("db2").unwrap();
            let x: Vec<f64> = (0..n).map(|t| offset + slope * t as f64).collect();
            let d = dwt(&x, &bank, Some(1), BoundaryMode::Periodic).unwrap();
            // o = 0 wraps at the start; the last coefficient may read the odd-length pad
            let end = if n % 2 == 1 { d.details[0].len() - 1 } else { d.details[0].len() };
            for v in &d.details[0][1..end] {
                prop_assert!(v.abs() < 1e-10 * (1.0 + slope.abs() * n as f64 + offset.abs()));
            }
        }
    }
}
