//! Loading attention dumps (NPY tensor + JSON manifest) and slicing them
//! into per-head 1-D series.

pub mod npy;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use npy::{read_npy, read_npy_from, write_npy, write_npy_to, Dtype, NpyTensor, Tensor4};

/// Rows whose sum deviates from 1 by more than this are rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Rows deviating by more than this (but within [`ROW_SUM_TOLERANCE`]) are
/// renormalized on load and counted.
pub const RENORMALIZE_THRESHOLD: f64 = 1e-9;

/// Shortest series that still admits one db2 decomposition level.
pub const MIN_SERIES_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("BadMagic: not an NPY file")]
    BadMagic,
    #[error("unsupported NPY version {0}.{1} (only 1.0 is read)")]
    UnsupportedVersion(u8, u8),
    #[error("UnsupportedDtype: '{0}' (expected '<f4' or '<f8')")]
    UnsupportedDtype(String),
    #[error("UnsupportedOrder: Fortran-ordered arrays are not supported")]
    UnsupportedOrder,
    #[error("ShapeMismatch: expected 4 dimensions, found {ndim}")]
    ShapeMismatch { ndim: usize },
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),
    #[error("payload holds {actual} elements/bytes, expected {expected}")]
    PayloadSize { expected: usize, actual: usize },
    #[error("manifest parse error: {0}")]
    ManifestParse(#[from] serde_json::Error),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("ManifestMismatch: {0}")]
    ManifestMismatch(String),
    #[error("NonFiniteWeight at layer {layer}, head {head}, row {row}, col {col}")]
    NonFiniteWeight {
        layer: usize,
        head: usize,
        row: usize,
        col: usize,
    },
    #[error("NegativeWeight {value} at layer {layer}, head {head}, row {row}, col {col}")]
    NegativeWeight {
        layer: usize,
        head: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("RowSum {sum} at layer {layer}, head {head}, row {row} (tolerance {ROW_SUM_TOLERANCE:e})")]
    RowSum {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },
    #[error("IndexOutOfRange: {0}")]
    IndexOutOfRange(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for errors describing bad tensor content rather than unreadable
    /// or unparsable files.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            IngestError::ManifestMismatch(_)
                | IngestError::InvalidManifest(_)
                | IngestError::NonFiniteWeight { .. }
                | IngestError::NegativeWeight { .. }
                | IngestError::RowSum { .. }
                | IngestError::IndexOutOfRange(_)
                | IngestError::Series(_)
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("TooShort: series of length {len} (minimum {MIN_SERIES_LEN})")]
    TooShort { len: usize },
    #[error("series value at {index} is not finite")]
    NonFinite { index: usize },
    #[error("series value {value} at {index} is negative")]
    Negative { index: usize, value: f64 },
    #[error("series has zero total mass")]
    ZeroMass,
}

/// Which 1-D slice of a head's attention matrix is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowMode {
    /// Mean over all query rows, renormalized.
    #[default]
    RowsMean,
    /// The final query row.
    LastRow,
    /// A fixed query row.
    RowIndex(usize),
}

impl fmt::Display for RowMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowMode::RowsMean => f.write_str("rows-mean"),
            RowMode::LastRow => f.write_str("last-row"),
            RowMode::RowIndex(k) => write!(f, "row-index({k})"),
        }
    }
}

impl FromStr for RowMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rows-mean" => Ok(RowMode::RowsMean),
            "last-row" => Ok(RowMode::LastRow),
            _ => {
                let inner = s
                    .strip_prefix("row-index(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| s.strip_prefix("row-index:"))
                    .ok_or_else(|| format!("unknown row mode '{s}' (expected rows-mean, last-row or row-index(k))"))?;
                inner
                    .trim()
                    .parse()
                    .map(RowMode::RowIndex)
                    .map_err(|_| format!("bad row index in '{s}'"))
            }
        }
    }
}

impl Serialize for RowMode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RowMode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Provenance record shipped next to every tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model_name: String,
    pub num_layers: usize,
    pub num_heads: usize,
    pub seq_len: usize,
    pub dtype: Dtype,
    pub row_mode: RowMode,
    pub source: String,
    pub sequence_id: String,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let manifest: Manifest = serde_json::from_str(text)?;
        manifest.check()?;
        Ok(manifest)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IngestError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| IngestError::io(path, e))
    }

    /// Field-level invariants that do not need the tensor.
    pub fn check(&self) -> Result<(), IngestError> {
        for (name, value) in [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("seq_len", self.seq_len),
        ] {
            if value == 0 {
                return Err(IngestError::InvalidManifest(format!("{name} must be positive")));
            }
        }
        if let RowMode::RowIndex(k) = self.row_mode {
            if k >= self.seq_len {
                return Err(IngestError::InvalidManifest(format!(
                    "row-index({k}) out of range for seq_len {}",
                    self.seq_len
                )));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.num_layers, self.num_heads, self.seq_len, self.seq_len]
    }
}

/// One problem found while validating a dump.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ManifestMismatch(String),
    NonFinite {
        layer: usize,
        head: usize,
        row: usize,
        col: usize,
    },
    Negative {
        layer: usize,
        head: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    RowSum {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },
}

impl Violation {
    fn into_error(self) -> IngestError {
        match self {
            Violation::ManifestMismatch(m) => IngestError::ManifestMismatch(m),
            Violation::NonFinite { layer, head, row, col } => IngestError::NonFiniteWeight { layer, head, row, col },
            Violation::Negative {
                layer,
                head,
                row,
                col,
                value,
            } => IngestError::NegativeWeight {
                layer,
                head,
                row,
                col,
                value,
            },
            Violation::RowSum { layer, head, row, sum } => IngestError::RowSum { layer, head, row, sum },
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.clone().into_error())
    }
}

/// Outcome of [`validate`]: every violation plus the rows that would be
/// renormalized on load.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub renormalize: Vec<(usize, usize, usize)>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a tensor against its manifest without stopping at the first
/// problem. Each row reports at most one element-level violation.
pub fn validate(manifest: &Manifest, tensor: &Tensor4, dtype: Dtype) -> ValidationReport {
    let mut report = ValidationReport::default();
    if tensor.shape() != manifest.shape() {
        report.violations.push(Violation::ManifestMismatch(format!(
            "manifest describes {:?} but tensor has shape {:?}",
            manifest.shape(),
            tensor.shape()
        )));
        return report;
    }
    if dtype != manifest.dtype {
        report.violations.push(Violation::ManifestMismatch(format!(
            "manifest dtype {:?} but tensor stored as {:?}",
            manifest.dtype, dtype
        )));
    }

    let [layers, heads, queries, _] = tensor.shape();
    for layer in 0..layers {
        for head in 0..heads {
            for row in 0..queries {
                let values = tensor.row(layer, head, row);
                if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                    report.violations.push(Violation::NonFinite { layer, head, row, col });
                    continue;
                }
                if let Some(col) = values.iter().position(|v| *v < 0.0) {
                    report.violations.push(Violation::Negative {
                        layer,
                        head,
                        row,
                        col,
                        value: values[col],
                    });
                    continue;
                }
                let sum: f64 = values.iter().sum();
                let deviation = (sum - 1.0).abs();
                if deviation > ROW_SUM_TOLERANCE {
                    report.violations.push(Violation::RowSum { layer, head, row, sum });
                } else if deviation > RENORMALIZE_THRESHOLD {
                    report.renormalize.push((layer, head, row));
                }
            }
        }
    }
    report
}

/// A validated, immutable attention dump.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    manifest: Manifest,
    weights: Tensor4,
    renormalized_rows: usize,
}

impl AttentionDump {
    /// Validates `weights` against `manifest`, renormalizing rows that are
    /// slightly off. Fails on the first violation.
    pub fn new(manifest: Manifest, mut weights: Tensor4, dtype: Dtype) -> Result<Self, IngestError> {
        manifest.check()?;
        let report = validate(&manifest, &weights, dtype);
        if let Some(v) = report.violations.into_iter().next() {
            return Err(v.into_error());
        }
        for &(layer, head, row) in &report.renormalize {
            let values = weights.row_mut(layer, head, row);
            let sum: f64 = values.iter().sum();
            values.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Self {
            manifest,
            weights,
            renormalized_rows: report.renormalize.len(),
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn weights(&self) -> &Tensor4 {
        &self.weights
    }

    pub fn renormalized_rows(&self) -> usize {
        self.renormalized_rows
    }

    pub fn num_layers(&self) -> usize {
        self.manifest.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.manifest.num_heads
    }

    pub fn seq_len(&self) -> usize {
        self.manifest.seq_len
    }

    /// Row-major `seq_len × seq_len` attention matrix of one head.
    pub fn head_matrix(&self, layer: usize, head: usize) -> Result<&[f64], IngestError> {
        self.check_head(layer, head)?;
        Ok(self.weights.head_matrix(layer, head))
    }

    fn check_head(&self, layer: usize, head: usize) -> Result<(), IngestError> {
        if layer >= self.num_layers() || head >= self.num_heads() {
            return Err(IngestError::IndexOutOfRange(format!(
                "head ({layer}, {head}) outside {}x{}",
                self.num_layers(),
                self.num_heads()
            )));
        }
        Ok(())
    }

    /// Writes the tensor and manifest pair.
    pub fn write(&self, tensor_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<(), IngestError> {
        write_npy(tensor_path, &self.weights, self.manifest.dtype)?;
        self.manifest.write(manifest_path)
    }
}

/// Reads and validates a dump from its tensor and manifest files.
pub fn load_dump(tensor_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<AttentionDump, IngestError> {
    let manifest = Manifest::read(manifest_path)?;
    let NpyTensor { tensor, dtype } = read_npy(tensor_path)?;
    AttentionDump::new(manifest, tensor, dtype)
}

/// A nonnegative 1-D attention pattern over token positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    values: Vec<f64>,
    normalized: bool,
}

impl Series {
    /// Wraps raw values. The series is flagged normalized when it already
    /// sums to 1 within 1e-6.
    pub fn new(values: Vec<f64>) -> Result<Self, SeriesError> {
        Self::check(&values)?;
        let sum: f64 = values.iter().sum();
        Ok(Self {
            normalized: (sum - 1.0).abs() <= 1e-6,
            values,
        })
    }

    /// Rescales `values` to unit mass.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, SeriesError> {
        Self::check(&values)?;
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(SeriesError::ZeroMass);
        }
        values.iter_mut().for_each(|v| *v /= sum);
        Ok(Self {
            values,
            normalized: true,
        })
    }

    fn check(values: &[f64]) -> Result<(), SeriesError> {
        if values.len() < MIN_SERIES_LEN {
            return Err(SeriesError::TooShort { len: values.len() });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(SeriesError::NonFinite { index });
            }
            if value < 0.0 {
                return Err(SeriesError::Negative { index, value });
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

impl AsRef<[f64]> for Series {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Pulls the 1-D pattern of one head out of a dump.
pub fn extract_series(
    dump: &AttentionDump,
    layer: usize,
    head: usize,
    row_mode: RowMode,
) -> Result<Series, IngestError> {
    let n = dump.seq_len();
    let matrix = dump.head_matrix(layer, head)?;
    let values = match row_mode {
        RowMode::RowsMean => {
            let mut acc = vec![0.0; n];
            for row in matrix.chunks_exact(n) {
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            acc.iter_mut().for_each(|a| *a /= n as f64);
            acc
        }
        RowMode::LastRow => matrix[(n - 1) * n..].to_vec(),
        RowMode::RowIndex(k) => {
            if k >= n {
                return Err(IngestError::IndexOutOfRange(format!(
                    "row {k} outside sequence length {n}"
                )));
            }
            matrix[k * n..(k + 1) * n].to_vec()
        }
    };
    Ok(Series::normalized(values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn manifest(layers: usize, heads: usize, n: usize) -> Manifest {
        Manifest {
            model_name: "fixture".into(),
            num_layers: layers,
            num_heads: heads,
            seq_len: n,
            dtype: Dtype::F64,
            row_mode: RowMode::RowsMean,
            source: "test".into(),
            sequence_id: "seq-0".into(),
        }
    }

    fn uniform_tensor(layers: usize, heads: usize, n: usize) -> Tensor4 {
        Tensor4::new([layers, heads, n, n], vec![1.0 / n as f64; layers * heads * n * n]).unwrap()
    }

    fn identity_tensor(n: usize) -> Tensor4 {
        let mut t = Tensor4::zeros([1, 1, n, n]);
        for i in 0..n {
            t.row_mut(0, 0, i)[i] = 1.0;
        }
        t
    }

    fn random_softmax_tensor(n: usize, seed: u64) -> Tensor4 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor4::zeros([1, 1, n, n]);
        for i in 0..n {
            let row = t.row_mut(0, 0, i);
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            row.iter_mut().zip(&exps).for_each(|(r, e)| *r = e / z);
        }
        t
    }

    #[test]
    fn valid_dump_needs_no_renormalization() {
        let dump = AttentionDump::new(manifest(2, 4, 16), uniform_tensor(2, 4, 16), Dtype::F64).unwrap();
        assert_eq!(dump.renormalized_rows(), 0);
        assert_eq!(dump.weights().shape(), [2, 4, 16, 16]);
    }

    #[test]
    fn seq_len_mismatch_is_rejected() {
        let err = AttentionDump::new(manifest(2, 4, 32), uniform_tensor(2, 4, 16), Dtype::F64).unwrap_err();
        assert!(matches!(err, IngestError::ManifestMismatch(_)), "{err}");
    }

    #[test]
    fn nan_names_its_location() {
        let mut t = uniform_tensor(2, 4, 16);
        t.row_mut(1, 2, 3)[5] = f64::NAN;
        let err = AttentionDump::new(manifest(2, 4, 16), t, Dtype::F64).unwrap_err();
        match err {
            IngestError::NonFiniteWeight { layer, head, row, col } => {
                assert_eq!((layer, head, row, col), (1, 2, 3, 5));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn negative_weight_is_rejected() {
        let mut t = uniform_tensor(1, 1, 8);
        t.row_mut(0, 0, 0)[0] = -0.01;
        let err = AttentionDump::new(manifest(1, 1, 8), t, Dtype::F64).unwrap_err();
        assert!(matches!(err, IngestError::NegativeWeight { .. }));
    }

    #[test]
    fn small_row_drift_is_renormalized_large_is_an_error() {
        let mut t = uniform_tensor(1, 1, 8);
        t.row_mut(0, 0, 2)[0] += 5e-5;
        let dump = AttentionDump::new(manifest(1, 1, 8), t.clone(), Dtype::F64).unwrap();
        assert_eq!(dump.renormalized_rows(), 1);
        let sum: f64 = dump.weights().row(0, 0, 2).iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);

        t.row_mut(0, 0, 2)[0] += 0.01;
        let report = validate(&manifest(1, 1, 8), &t, Dtype::F64);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(report.violations[0], Violation::RowSum { row: 2, .. }));
    }

    #[test]
    fn validation_lists_every_bad_row() {
        let mut t = uniform_tensor(1, 2, 8);
        t.row_mut(0, 0, 1)[0] += 0.01;
        t.row_mut(0, 1, 6)[3] = f64::INFINITY;
        let report = validate(&manifest(1, 2, 8), &t, Dtype::F64);
        assert_eq!(report.violations.len(), 2);
    }

    #[test]
    fn manifest_rejects_unknown_keys_and_bad_row_index() {
        let mut json = serde_json::to_value(manifest(1, 1, 8)).unwrap();
        json["extra"] = 1.into();
        assert!(Manifest::from_json(&json.to_string()).is_err());

        let mut m = manifest(1, 1, 8);
        m.row_mode = RowMode::RowIndex(8);
        let text = serde_json::to_string(&m).unwrap();
        assert!(matches!(
            Manifest::from_json(&text),
            Err(IngestError::InvalidManifest(_))
        ));
    }

    #[test]
    fn row_mode_text_forms() {
        for mode in [RowMode::RowsMean, RowMode::LastRow, RowMode::RowIndex(5)] {
            assert_eq!(mode.to_string().parse::<RowMode>().unwrap(), mode);
        }
        assert_eq!("row-index:3".parse::<RowMode>().unwrap(), RowMode::RowIndex(3));
        assert!("middle".parse::<RowMode>().is_err());
    }

    #[test]
    fn uniform_rows_mean_is_uniform() {
        let dump = AttentionDump::new(manifest(1, 1, 16), uniform_tensor(1, 1, 16), Dtype::F64).unwrap();
        let s = extract_series(&dump, 0, 0, RowMode::RowsMean).unwrap();
        assert!(s.is_normalized());
        for v in s.values() {
            assert!((v - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_last_row_is_one_hot() {
        let dump = AttentionDump::new(manifest(1, 1, 16), identity_tensor(16), Dtype::F64).unwrap();
        let s = extract_series(&dump, 0, 0, RowMode::LastRow).unwrap();
        let expected: Vec<f64> = (0..16).map(|i| if i == 15 { 1.0 } else { 0.0 }).collect();
        assert_eq!(s.values(), expected.as_slice());
        let s = extract_series(&dump, 0, 0, RowMode::RowIndex(3)).unwrap();
        assert_eq!(s.values()[3], 1.0);
    }

    #[test]
    fn rows_mean_matches_column_means() {
        let n = 24;
        let t = random_softmax_tensor(n, 11);
        let dump = AttentionDump::new(manifest(1, 1, n), t.clone(), Dtype::F64).unwrap();
        let s = extract_series(&dump, 0, 0, RowMode::RowsMean).unwrap();

        // direct double loop over the matrix
        let mut col = vec![0.0; n];
        for (j, c) in col.iter_mut().enumerate() {
            for i in 0..n {
                *c += t.data()[i * n + j];
            }
        }
        let total: f64 = col.iter().sum();
        for (got, c) in s.values().iter().zip(&col) {
            assert!((got - c / total).abs() < 1e-14);
        }
    }

    #[test]
    fn out_of_range_indices() {
        let dump = AttentionDump::new(manifest(1, 2, 8), uniform_tensor(1, 2, 8), Dtype::F64).unwrap();
        assert!(matches!(
            extract_series(&dump, 1, 0, RowMode::RowsMean),
            Err(IngestError::IndexOutOfRange(_))
        ));
        assert!(matches!(
            extract_series(&dump, 0, 2, RowMode::RowsMean),
            Err(IngestError::IndexOutOfRange(_))
        ));
        assert!(matches!(
            extract_series(&dump, 0, 0, RowMode::RowIndex(9)),
            Err(IngestError::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn every_row_mode_sums_to_one() {
        let n = 20;
        let dump = AttentionDump::new(manifest(1, 1, n), random_softmax_tensor(n, 3), Dtype::F64).unwrap();
        for mode in [RowMode::RowsMean, RowMode::LastRow, RowMode::RowIndex(7)] {
            let s = extract_series(&dump, 0, 0, mode).unwrap();
            let sum: f64 = s.values().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "{mode}");
        }
    }

    #[test]
    fn series_rejects_short_and_negative() {
        assert_eq!(Series::new(vec![0.1; 7]), Err(SeriesError::TooShort { len: 7 }));
        let mut v = vec![0.125; 8];
        v[2] = -0.1;
        assert!(matches!(Series::new(v), Err(SeriesError::Negative { index: 2, .. })));
        assert_eq!(Series::normalized(vec![0.0; 8]), Err(SeriesError::ZeroMass));
    }

    #[test]
    fn loading_twice_is_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let dump = AttentionDump::new(manifest(1, 1, 12), random_softmax_tensor(12, 5), Dtype::F64).unwrap();
        let (t, m) = (dir.path().join("a.npy"), dir.path().join("a.json"));
        dump.write(&t, &m).unwrap();
        let a = load_dump(&t, &m).unwrap();
        let b = load_dump(&t, &m).unwrap();
        let bits = |d: &AttentionDump| d.weights().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(bits(&a), bits(&dump));
    }
}
