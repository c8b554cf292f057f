//! `attnscope` — batch driver for attention-map analysis.
//!
//! Exit codes: 0 success, 1 unreadable or unparsable input, 2 input that
//! parsed but failed validation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use attnscope::config::{ConfigError, StdConvention};
use attnscope::ingest::{read_npy, validate, Dtype, IngestError, Manifest};
use attnscope::pipeline::{analyze, PipelineError};
use attnscope::report::{
    compare_runs, emit, layer_frequency_profile, Emittable, OutputFormat, ReportError, RunReport, CHECKPOINT_KEYS,
    FAMILY_KEYS,
};
use attnscope::spectral::{BandPartition, PadPolicy};
use attnscope::synth::{generate_as, KindParams, SynthError, SynthSpec};
use attnscope::wavelet::BoundaryMode;
use attnscope::{load_dump, AnalysisConfig, EntropyBase, RowMode};

#[derive(Debug, Parser)]
#[command(
    name = "attnscope",
    version,
    about = "Spectral and wavelet analysis of attention maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analyse one or more dumps into a run report.
    Analyze(AnalyzeArgs),
    /// Write a synthetic dump with known structure.
    Synth(SynthArgs),
    /// Compare run reports in a table.
    Report(ReportArgs),
    /// Check a dump without analysing it.
    Validate(ValidateArgs),
    /// Per-layer mean band shares of a run report.
    Profile(ProfileArgs),
    /// Print the effective configuration after applying flags.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
struct Overrides {
    /// JSON config file (same schema as a report's provenance block).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Band edges as fractions of Nyquist, e.g. 0.25,0.75.
    #[arg(long, value_parser = parse_bands)]
    bands: Option<BandPartition>,
    #[arg(long)]
    wavelet: Option<String>,
    #[arg(long)]
    boundary: Option<BoundaryMode>,
    /// Decomposition depth (default: deepest admissible).
    #[arg(long)]
    levels: Option<usize>,
    /// Sliding-window sizes, e.g. 16,32,64.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,
    /// Subsampling factors, e.g. 0.5,0.25.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// rows-mean, last-row or row-index(k).
    #[arg(long)]
    row_mode: Option<RowMode>,
    #[arg(long)]
    dc_exclude: Option<bool>,
    /// nats or bits.
    #[arg(long)]
    base: Option<EntropyBase>,
    #[arg(long)]
    seed: Option<u64>,
    /// Spectral window: hann or rect.
    #[arg(long)]
    window: Option<String>,
    /// next-pow2 or none.
    #[arg(long)]
    pad: Option<PadPolicy>,
    #[arg(long)]
    locality_bandwidth: Option<usize>,
    #[arg(long)]
    wavelet_entropy_normalized: Option<bool>,
    /// population or sample.
    #[arg(long, value_parser = parse_std)]
    std: Option<StdConvention>,
    #[arg(long)]
    sig_digits: Option<usize>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// NPY tensor; repeat for a batch.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Manifest for each --input, in the same order.
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    /// Output path (standard output when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: OutputFormat,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// rope, sine, local, global, uniform or onehot.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    seq_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sine frequency as a fraction of Nyquist.
    #[arg(long)]
    freq: Option<f64>,
    /// Local band half-width.
    #[arg(long)]
    bandwidth: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long)]
    theta_base: Option<f64>,
    /// Single rotation angle used for every dimension pair.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    causal: bool,
    /// Storage dtype: f64 or f32.
    #[arg(long, default_value = "f64", value_parser = parse_dtype)]
    dtype: Dtype,
    /// NPY output path.
    #[arg(long)]
    out: PathBuf,
    /// Manifest output path (default: --out with a .json extension).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run report JSON; repeat to compare runs.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Metric columns, e.g. spectral_entropy,scale_sens_0.5,rho.
    #[arg(long, value_delimiter = ',', conflicts_with = "preset")]
    keys: Option<Vec<String>>,
    /// checkpoint or family column set.
    #[arg(long)]
    preset: Option<String>,
    /// Header of the first column.
    #[arg(long, default_value = "Run")]
    label_header: String,
    #[arg(long, default_value = "md")]
    format: OutputFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    #[command(flatten)]
    overrides: Overrides,
}

fn parse_bands(s: &str) -> Result<BandPartition, String> {
    let (l, m) = s.split_once(',').ok_or("expected two comma-separated edges")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    BandPartition::new(parse(l)?, parse(m)?).map_err(|e| e.to_string())
}

fn parse_std(s: &str) -> Result<StdConvention, String> {
    match s {
        "population" => Ok(StdConvention::Population),
        "sample" => Ok(StdConvention::Sample),
        other => Err(format!("unknown convention '{other}' (expected population or sample)")),
    }
}

fn parse_dtype(s: &str) -> Result<Dtype, String> {
    match s {
        "f64" | "f8" => Ok(Dtype::F64),
        "f32" | "f4" => Ok(Dtype::F32),
        other => Err(format!("unknown dtype '{other}' (expected f64 or f32)")),
    }
}

/// A failed command: message plus exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(message: impl ToString) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }

    fn invalid(message: impl ToString) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        if e.is_validation() {
            Failure::invalid(e)
        } else {
            Failure::io(e)
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(_) => Failure::invalid(e),
            _ => Failure::io(e),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Ingest(inner) => inner.into(),
            PipelineError::Config(inner) => inner.into(),
            other => Failure::invalid(other),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { .. } | ReportError::Parse(_) | ReportError::Csv(_) => Failure::io(e),
            _ => Failure::invalid(e),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Ingest(inner) => inner.into(),
            other => Failure::invalid(other),
        }
    }
}

fn effective_config(o: &Overrides) -> Result<AnalysisConfig, Failure> {
    let mut c = match &o.config {
        Some(path) => AnalysisConfig::read(path)?,
        None => AnalysisConfig::default(),
    };
    if let Some(v) = o.bands {
        c.bands = v;
    }
    if let Some(v) = &o.wavelet {
        c.wavelet = v.clone();
    }
    if let Some(v) = o.boundary {
        c.boundary_mode = v;
    }
    if let Some(v) = o.levels {
        c.levels = Some(v);
    }
    if let Some(v) = &o.windows {
        c.window_sizes = v.clone();
    }
    if let Some(v) = &o.alphas {
        c.alphas = v.clone();
    }
    if let Some(v) = o.row_mode {
        c.row_mode = v;
    }
    if let Some(v) = o.dc_exclude {
        c.dc_exclusion = v;
    }
    if let Some(v) = o.base {
        c.entropy_base = v;
    }
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = &o.window {
        c.window = v.clone();
    }
    if let Some(v) = o.pad {
        c.pad = v;
    }
    if let Some(v) = o.locality_bandwidth {
        c.locality_bandwidth = v;
    }
    if let Some(v) = o.wavelet_entropy_normalized {
        c.wavelet_entropy_normalized = v;
    }
    if let Some(v) = o.std {
        c.std = v;
    }
    if let Some(v) = o.sig_digits {
        c.sig_digits = v;
    }
    c.check()?;
    Ok(c)
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), Failure> {
    if args.input.len() != args.manifest.len() {
        return Err(Failure::invalid(format!(
            "{} --input paths but {} --manifest paths",
            args.input.len(),
            args.manifest.len()
        )));
    }
    let config = effective_config(&args.overrides)?;
    let dumps = args
        .input
        .iter()
        .zip(&args.manifest)
        .map(|(t, m)| load_dump(t, m))
        .collect::<Result<Vec<_>, _>>()?;
    let report = analyze(&dumps, &config)?;
    emit(&Emittable::Report(&report), args.format, args.out.as_deref())?;
    eprintln!(
        "analyzed {} heads from {} dump(s); {} flags raised",
        report.heads.len(),
        dumps.len(),
        report.flag_count()
    );
    Ok(())
}

fn default_manifest_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        kind: args.kind.clone(),
        params: KindParams {
            freq: args.freq,
            bandwidth: args.bandwidth,
            head_dim: args.head_dim,
            theta_base: args.theta_base,
            theta: args.theta,
        },
        layers: args.layers,
        heads: args.heads,
        seq_len: args.seq_len,
        seed: args.seed,
        causal: args.causal,
    };
    let dump = generate_as(&spec, args.dtype)?;
    let manifest = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(&args.out));
    dump.write(&args.out, &manifest)?;
    eprintln!(
        "wrote {}×{}×{}×{} {} dump to {}",
        args.layers,
        args.heads,
        args.seq_len,
        args.seq_len,
        args.kind,
        args.out.display()
    );
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), Failure> {
    if args.input.is_empty() {
        return Err(ReportError::EmptyInput("no reports given".into()).into());
    }
    let reports = args.input.iter().map(RunReport::read).collect::<Result<Vec<_>, _>>()?;
    let keys: Vec<String> = match (&args.keys, args.preset.as_deref()) {
        (Some(k), _) => k.clone(),
        (None, Some("family")) => FAMILY_KEYS.iter().map(|s| s.to_string()).collect(),
        (None, Some("checkpoint") | None) => CHECKPOINT_KEYS.iter().map(|s| s.to_string()).collect(),
        (None, Some(other)) => {
            return Err(Failure::invalid(format!(
                "unknown preset '{other}' (expected checkpoint or family)"
            )))
        }
    };
    let keys: Vec<&str> = keys.iter().map(String::as_str).collect();
    let table = compare_runs(&reports, &keys)?.with_label_header(&args.label_header);
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    let digits = reports[0].provenance.sig_digits;
    emit(&Emittable::Comparison(&table, digits), args.format, args.out.as_deref())?;
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), Failure> {
    let manifest = Manifest::read(&args.manifest)?;
    let npy = read_npy(&args.input)?;
    let report = validate(&manifest, &npy.tensor, npy.dtype);
    for v in &report.violations {
        println!("{v}");
    }
    println!(
        "{} violations ({} rows within tolerance would be renormalized)",
        report.violations.len(),
        report.renormalize.len()
    );
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::invalid(format!("{} violations", report.violations.len())))
    }
}

fn cmd_profile(args: &ProfileArgs) -> Result<(), Failure> {
    let report = RunReport::read(&args.input)?;
    let rows = layer_frequency_profile(&report);
    emit(
        &Emittable::Profile(&rows, report.provenance.sig_digits),
        args.format,
        args.out.as_deref(),
    )?;
    Ok(())
}

fn cmd_config(args: &ConfigArgs) -> Result<(), Failure> {
    let config = effective_config(&args.overrides)?;
    let text = serde_json::to_string_pretty(&config).map_err(Failure::io)?;
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Config(a) => cmd_config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
