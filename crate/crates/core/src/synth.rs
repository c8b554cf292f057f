//! Synthetic attention dumps with known structure.
//!
//! Generators are registered by name (`rope`, `sine`, `local`, `global`,
//! `uniform`, `onehot`) and produce one row-stochastic `n × n` matrix per
//! head. Randomness comes from ChaCha8 seeded per head with
//! `splitmix64(seed ^ (layer << 32 | head))`, so heads can be generated in
//! any order and the result stays bitwise reproducible.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AttentionDump, Dtype, IngestError, Manifest, RowMode, Series, SeriesError, Tensor4};
use crate::registry::Registry;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),
    #[error("OddHeadDim: head_dim {0} must be even")]
    OddHeadDim(usize),
    #[error("unknown generator '{0}'")]
    UnknownKind(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// `[[cos mθ, −sin mθ], [sin mθ, cos mθ]]`.
pub fn rope_rotation(position: usize, theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = (position as f64 * theta).sin_cos();
    [[c, -s], [s, c]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub theta_base: f64,
    pub seq_len: usize,
    pub seed: u64,
    /// Explicit per-pair angles; overrides the geometric schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
}

impl RopeConfig {
    pub fn new(head_dim: usize, seq_len: usize) -> Self {
        Self {
            head_dim,
            theta_base: 10_000.0,
            seq_len,
            seed: 0,
            angles: None,
        }
    }

    /// A single rotating pair at angle `theta`.
    pub fn single(theta: f64, seq_len: usize) -> Self {
        Self {
            angles: Some(vec![theta]),
            ..Self::new(2, seq_len)
        }
    }

    /// `θ_k = base^(−2k/d)` for each dimension pair, unless overridden.
    pub fn angles(&self) -> Vec<f64> {
        match &self.angles {
            Some(a) => a.clone(),
            None => (0..self.head_dim / 2)
                .map(|k| self.theta_base.powf(-2.0 * k as f64 / self.head_dim as f64))
                .collect(),
        }
    }

    fn check(&self) -> Result<(), SynthError> {
        if self.head_dim == 0 || self.head_dim % 2 == 1 {
            return Err(SynthError::OddHeadDim(self.head_dim));
        }
        if let Some(a) = &self.angles {
            if a.len() != self.head_dim / 2 {
                return Err(SynthError::InvalidSpec(format!(
                    "{} angles for head_dim {}",
                    a.len(),
                    self.head_dim
                )));
            }
        }
        if self.theta_base.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(SynthError::InvalidSpec("theta_base must be positive".into()));
        }
        Ok(())
    }
}

/// Applies the position-`m` block rotation to `v`.
pub fn rotate(v: &[f64], position: usize, angles: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (k, theta) in angles.iter().enumerate() {
        let r = rope_rotation(position, *theta);
        let (a, b) = (v[2 * k], v[2 * k + 1]);
        out[2 * k] = r[0][0] * a + r[0][1] * b;
        out[2 * k + 1] = r[1][0] * a + r[1][1] * b;
    }
    out
}

/// Pre-softmax scores `⟨R_m q, R_j k⟩ / √d`, row-major.
pub fn rope_logits(config: &RopeConfig, query: &[f64], key: &[f64]) -> Result<Vec<f64>, SynthError> {
    config.check()?;
    if query.len() != config.head_dim || key.len() != config.head_dim {
        return Err(SynthError::InvalidSpec(format!(
            "query/key length {}/{} for head_dim {}",
            query.len(),
            key.len(),
            config.head_dim
        )));
    }
    let n = config.seq_len;
    let angles = config.angles();
    let scale = (config.head_dim as f64).sqrt();
    let keys: Vec<Vec<f64>> = (0..n).map(|j| rotate(key, j, &angles)).collect();
    let mut logits = Vec::with_capacity(n * n);
    for m in 0..n {
        let q = rotate(query, m, &angles);
        for k in &keys {
            logits.push(q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / scale);
        }
    }
    Ok(logits)
}

/// Row-wise softmax of `logits` (n × n) with max subtraction. With `causal`
/// the entries above the diagonal are masked out.
pub fn softmax_rows(logits: &[f64], n: usize, causal: bool) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for (i, (row, dst)) in logits.chunks_exact(n).zip(out.chunks_exact_mut(n)).enumerate() {
        let visible = if causal { i + 1 } else { n };
        let max = row[..visible].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (d, l) in dst[..visible].iter_mut().zip(row) {
            *d = (l - max).exp();
            z += *d;
        }
        dst[..visible].iter_mut().for_each(|d| *d /= z);
    }
    out
}

/// RoPE attention for fixed query/key vectors repeated at every position.
pub fn rope_attention(config: &RopeConfig, query: &[f64], key: &[f64], causal: bool) -> Result<Vec<f64>, SynthError> {
    let logits = rope_logits(config, query, key)?;
    Ok(softmax_rows(&logits, config.seq_len, causal))
}

/// Optional parameters shared by every generator; each generator reads the
/// ones it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_base: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

/// Produces one head's attention matrix.
pub trait PatternGenerator: Send + Sync {
    /// Short text recorded in the manifest `source` field.
    fn describe(&self) -> String;

    fn head_matrix(&self, n: usize, causal: bool, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SynthError>;
}

/// Builds a configured generator from [`KindParams`].
pub trait GeneratorFactory: Send + Sync {
    fn create(&self, params: &KindParams) -> Result<Box<dyn PatternGenerator>, SynthError>;
}

impl<F> GeneratorFactory for F
where
    F: Fn(&KindParams) -> Result<Box<dyn PatternGenerator>, SynthError> + Send + Sync,
{
    fn create(&self, params: &KindParams) -> Result<Box<dyn PatternGenerator>, SynthError> {
        self(params)
    }
}

fn rows_from<F: Fn(usize, usize) -> f64>(n: usize, causal: bool, weight: F) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for (i, row) in out.chunks_exact_mut(n).enumerate() {
        let visible = if causal { i + 1 } else { n };
        for (j, v) in row[..visible].iter_mut().enumerate() {
            *v = weight(i, j);
        }
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

struct RopeGenerator {
    head_dim: usize,
    theta_base: f64,
    theta: Option<f64>,
}

impl PatternGenerator for RopeGenerator {
    fn describe(&self) -> String {
        match self.theta {
            Some(t) => format!("rope(head_dim={}, theta={t})", self.head_dim),
            None => format!("rope(head_dim={}, theta_base={})", self.head_dim, self.theta_base),
        }
    }

    fn head_matrix(&self, n: usize, causal: bool, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SynthError> {
        let mut config = RopeConfig::new(self.head_dim, n);
        config.theta_base = self.theta_base;
        config.angles = self.theta.map(|t| vec![t; self.head_dim / 2]);
        let query: Vec<f64> = (0..self.head_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let key: Vec<f64> = (0..self.head_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        rope_attention(&config, &query, &key, causal)
    }
}

struct SineGenerator {
    freq: f64,
}

impl PatternGenerator for SineGenerator {
    fn describe(&self) -> String {
        format!("sine(freq={})", self.freq)
    }

    // frequency is in units of Nyquist: cos(π f j)
    fn head_matrix(&self, n: usize, causal: bool, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SynthError> {
        let f = self.freq;
        Ok(rows_from(n, causal, |_, j| {
            1.0 + (std::f64::consts::PI * f * j as f64).cos()
        }))
    }
}

struct LocalGenerator {
    bandwidth: usize,
}

impl PatternGenerator for LocalGenerator {
    fn describe(&self) -> String {
        format!("local(bandwidth={})", self.bandwidth)
    }

    fn head_matrix(&self, n: usize, causal: bool, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SynthError> {
        let b = self.bandwidth;
        Ok(rows_from(n, causal, |i, j| f64::from(u8::from(i.abs_diff(j) <= b))))
    }
}

struct UniformGenerator {
    label: &'static str,
}

impl PatternGenerator for UniformGenerator {
    fn describe(&self) -> String {
        self.label.to_string()
    }

    fn head_matrix(&self, n: usize, causal: bool, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SynthError> {
        Ok(rows_from(n, causal, |_, _| 1.0))
    }
}

struct OneHotGenerator;

impl PatternGenerator for OneHotGenerator {
    fn describe(&self) -> String {
        "onehot".into()
    }

    fn head_matrix(&self, n: usize, causal: bool, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SynthError> {
        Ok(rows_from(n, causal, |i, j| f64::from(u8::from(i == j))))
    }
}

fn rope_factory(p: &KindParams) -> Result<Box<dyn PatternGenerator>, SynthError> {
    let head_dim = p.head_dim.unwrap_or(if p.theta.is_some() { 2 } else { 64 });
    if head_dim == 0 || head_dim % 2 == 1 {
        return Err(SynthError::OddHeadDim(head_dim));
    }
    let theta_base = p.theta_base.unwrap_or(10_000.0);
    if theta_base.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(SynthError::InvalidSpec("theta_base must be positive".into()));
    }
    if let Some(t) = p.theta {
        if !(t.is_finite() && t > 0.0) {
            return Err(SynthError::InvalidSpec(format!("theta {t} must be positive")));
        }
    }
    Ok(Box::new(RopeGenerator {
        head_dim,
        theta_base,
        theta: p.theta,
    }))
}

fn sine_factory(p: &KindParams) -> Result<Box<dyn PatternGenerator>, SynthError> {
    let freq = p
        .freq
        .ok_or_else(|| SynthError::InvalidSpec("sine needs a frequency".into()))?;
    if !(freq > 0.0 && freq <= 1.0) {
        return Err(SynthError::InvalidSpec(format!("sine frequency {freq} outside (0, 1]")));
    }
    Ok(Box::new(SineGenerator { freq }))
}

fn local_factory(p: &KindParams) -> Result<Box<dyn PatternGenerator>, SynthError> {
    let bandwidth = p
        .bandwidth
        .ok_or_else(|| SynthError::InvalidSpec("local needs a bandwidth".into()))?;
    if bandwidth < 1 {
        return Err(SynthError::InvalidSpec("bandwidth must be at least 1".into()));
    }
    Ok(Box::new(LocalGenerator { bandwidth }))
}

type FactoryFn = fn(&KindParams) -> Result<Box<dyn PatternGenerator>, SynthError>;

/// All built-in generators, keyed by kind name.
pub fn generators() -> &'static Registry<dyn GeneratorFactory> {
    static REGISTRY: OnceLock<Registry<dyn GeneratorFactory>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn GeneratorFactory> = Registry::new("generator");
        let entries: [(&str, FactoryFn); 6] = [
            ("rope", rope_factory),
            ("sine", sine_factory),
            ("local", local_factory),
            ("global", |_| Ok(Box::new(UniformGenerator { label: "global" }))),
            ("uniform", |_| Ok(Box::new(UniformGenerator { label: "uniform" }))),
            ("onehot", |_| Ok(Box::new(OneHotGenerator))),
        ];
        for (name, factory) in entries {
            reg.register(name, Arc::new(factory));
        }
        reg
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub kind: String,
    #[serde(default)]
    pub params: KindParams,
    pub layers: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub seed: u64,
    #[serde(default)]
    pub causal: bool,
}

impl SynthSpec {
    pub fn new(kind: &str, layers: usize, heads: usize, seq_len: usize, seed: u64) -> Self {
        Self {
            kind: kind.to_string(),
            params: KindParams::default(),
            layers,
            heads,
            seq_len,
            seed,
            causal: false,
        }
    }

    pub fn with_params(mut self, params: KindParams) -> Self {
        self.params = params;
        self
    }

    pub fn generator(&self) -> Result<Box<dyn PatternGenerator>, SynthError> {
        generators()
            .get(&self.kind)
            .ok_or_else(|| SynthError::UnknownKind(self.kind.clone()))?
            .create(&self.params)
    }

    fn check(&self) -> Result<(), SynthError> {
        if self.layers == 0 || self.heads == 0 {
            return Err(SynthError::InvalidSpec("layers and heads must be positive".into()));
        }
        if self.seq_len < crate::ingest::MIN_SERIES_LEN {
            return Err(SynthError::InvalidSpec(format!(
                "seq_len {} below {}",
                self.seq_len,
                crate::ingest::MIN_SERIES_LEN
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let described = self
            .generator()
            .map(|g| g.describe())
            .unwrap_or_else(|_| self.kind.clone());
        write!(
            f,
            "synth:{described};layers={};heads={};seq_len={};seed={};causal={}",
            self.layers, self.heads, self.seq_len, self.seed, self.causal
        )
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for one head's private random stream.
pub fn head_seed(seed: u64, layer: usize, head: usize) -> u64 {
    splitmix64(seed ^ ((layer as u64) << 32 | head as u64))
}

/// Generates a validated dump with `f64` storage.
pub fn generate(spec: &SynthSpec) -> Result<AttentionDump, SynthError> {
    generate_as(spec, Dtype::F64)
}

/// Generates a dump; with `Dtype::F32` the weights are rounded to `f32`
/// the way they would be after a write/read cycle.
pub fn generate_as(spec: &SynthSpec, dtype: Dtype) -> Result<AttentionDump, SynthError> {
    spec.check()?;
    let generator = spec.generator()?;
    let n = spec.seq_len;
    let mut tensor = Tensor4::zeros([spec.layers, spec.heads, n, n]);
    for layer in 0..spec.layers {
        for head in 0..spec.heads {
            let mut rng = ChaCha8Rng::seed_from_u64(head_seed(spec.seed, layer, head));
            let matrix = generator.head_matrix(n, spec.causal, &mut rng)?;
            let dst = tensor.head_matrix_mut(layer, head);
            dst.copy_from_slice(&matrix);
            if dtype == Dtype::F32 {
                dst.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
    }
    let manifest = Manifest {
        model_name: "synthetic".into(),
        num_layers: spec.layers,
        num_heads: spec.heads,
        seq_len: n,
        dtype,
        row_mode: RowMode::RowsMean,
        source: spec.to_string(),
        sequence_id: format!("synth-{}", spec.seed),
    };
    Ok(AttentionDump::new(manifest, tensor, dtype)?)
}

/// Normalized Gaussian bump `exp(−(t − centre)² / 2σ²)` over `n` positions.
pub fn gaussian_bump(n: usize, centre: f64, width: f64) -> Result<Series, SynthError> {
    if width.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(SynthError::InvalidSpec(format!("bump width {width} must be positive")));
    }
    let values = (0..n)
        .map(|t| (-0.5 * ((t as f64 - centre) / width).powi(2)).exp())
        .collect();
    Ok(Series::normalized(values)?)
}
