//! Command-line front end: restore, degrade, eval, rank, bench, init-weights.
//!
//! Exit codes: 0 success, 1 other error, 2 missing/unreadable weights,
//! 3 sample-rate mismatch, 4 length mismatch, 5 disconnected comparisons.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::audio_io::{read_wav, write_atomic, write_wav, Encoding};
use crate::bench::{run_bench, BenchOptions};
use crate::degrade::{apply_chain, DegradationSpec};
use crate::error::Error;
use crate::generator::{init_weights, load_weights, save_weights, Generator, ModelConfig, WeightStore};
use crate::losses::{evaluate, LossWeights};
use crate::ranking::{self, ComparisonSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_WEIGHTS: i32 = 2;
pub const EXIT_SAMPLE_RATE: i32 = 3;
pub const EXIT_LENGTH: i32 = 4;
pub const EXIT_DISCONNECTED: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "voxrestore", version, about = "Band-split vocal restoration toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Restore a mono WAV file with a trained generator.
    Restore(RestoreArgs),
    /// Apply the seeded degradation chain to a clean WAV file.
    Degrade(DegradeArgs),
    /// Reconstruction losses between a reference and an estimate.
    Eval(EvalArgs),
    /// Bradley–Terry strengths and ELO scores from pairwise judgments.
    Rank(RankArgs),
    /// Time restoration of seeded noise and report the real-time factor.
    Bench(BenchArgs),
    /// Write randomly initialized weights and the matching config.
    InitWeights(InitArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

impl From<WavEncoding> for Encoding {
    fn from(e: WavEncoding) -> Self {
        match e {
            WavEncoding::Pcm16 => Encoding::Pcm16,
            WavEncoding::Float32 => Encoding::Float32,
        }
    }
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Model config; defaults to the full configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Segment length for long inputs, seconds.
    #[arg(long, default_value_t = 30.0)]
    pub segment: f64,
    /// Crossfade between segments, seconds.
    #[arg(long, default_value_t = 1.0)]
    pub overlap: f64,
    #[arg(long, value_enum, default_value_t = WavEncoding::Float32)]
    pub encoding: WavEncoding,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
    /// Degradation spec; defaults to every stage with probability 0.5.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trace destination (JSON lines); printed to stdout when omitted.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Noise recordings for the additive-noise stage; pink noise when none.
    #[arg(long = "noise")]
    pub noise: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = WavEncoding::Float32)]
    pub encoding: WavEncoding,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub est: PathBuf,
    /// Model config whose STFT grid the phase terms use; full config by default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Fit only the records with this category label.
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long, default_value_t = ranking::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = ranking::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Weights to time; seeded random weights when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 30)]
    pub runs: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Seed of the noise input (and of random weights).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Weight file to write.
    #[arg(long)]
    pub weights: PathBuf,
    /// Config file to write next to the weights.
    #[arg(long)]
    pub config_out: Option<PathBuf>,
    /// Config to initialize; full configuration by default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the small test configuration.
    #[arg(long, conflicts_with = "config")]
    pub toy: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::SampleRate { .. } => EXIT_SAMPLE_RATE,
            Error::LengthMismatch(..) => EXIT_LENGTH,
            Error::Connectivity(_) => EXIT_DISCONNECTED,
            _ => EXIT_ERROR,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn weights_error(path: &Path, e: Error) -> CliError {
    CliError { code: EXIT_WEIGHTS, message: format!("cannot load weights {}: {e}", path.display()) }
}

fn load_config(path: Option<&Path>) -> CliResult<ModelConfig> {
    Ok(match path {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    })
}

fn load_model(weights: &Path, config: Option<&Path>) -> CliResult<Generator> {
    let config = load_config(config)?;
    let store = load_weights(weights).map_err(|e| weights_error(weights, e))?;
    Generator::new(config, &store).map_err(|e| weights_error(weights, e))
}

fn emit(text: &str, out: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => {
            let mut text = text.to_string();
            if !text.ends_with('\n') {
                text.push('\n');
            }
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError { code: EXIT_ERROR, message: format!("stdout: {e}") })?;
        }
    }
    Ok(())
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn cmd_restore(a: &RestoreArgs, stderr: &mut dyn Write) -> CliResult<()> {
    let model = load_model(&a.weights, a.config.as_deref())?;
    let wave = read_wav(&a.input)?;
    let start = Instant::now();
    let out = model.restore_chunked(&wave, a.segment, a.overlap)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_wav(&out, &a.output, a.encoding.into())?;
    let _ = writeln!(
        stderr,
        "restored {:.3} s of audio in {:.3} s (RTF {:.2})",
        wave.duration_secs(),
        elapsed,
        wave.duration_secs() / elapsed.max(f64::MIN_POSITIVE)
    );
    Ok(())
}

fn cmd_degrade(a: &DegradeArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => DegradationSpec::load(p)?,
        None => DegradationSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec = spec.with_seed(seed);
    }
    let wave = read_wav(&a.input)?;
    let pool = a
        .noise
        .iter()
        .map(|p| {
            let n = read_wav(p)?;
            if n.sample_rate != wave.sample_rate {
                return Err(Error::SampleRate { expected: wave.sample_rate, got: n.sample_rate });
            }
            Ok(n.to_f64())
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let (out, trace) = apply_chain(&wave, &spec, &pool)?;
    write_wav(&out, &a.output, a.encoding.into())?;
    emit(&trace.to_json_lines(), a.trace_out.as_deref(), stdout)
}

/// Reconstruction-only report of the `eval` command.
#[derive(Debug, Serialize)]
struct ReconReport {
    wav: f64,
    spec: f64,
    omni: f64,
    recon: f64,
}

fn cmd_eval(a: &EvalArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let config = load_config(a.config.as_deref())?;
    let reference = read_wav(&a.reference)?;
    let est = read_wav(&a.est)?;
    if reference.sample_rate != est.sample_rate {
        return Err(Error::SampleRate { expected: reference.sample_rate, got: est.sample_rate }.into());
    }
    let r = evaluate(&est, &reference, &LossWeights::default(), &config.stft_params(), None)?;
    let report = ReconReport { wav: r.wav, spec: r.spec, omni: r.omni, recon: r.recon };
    emit(&to_json(&report), a.out.as_deref(), stdout)
}

fn cmd_rank(a: &RankArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let mut data = ComparisonSet::from_csv(&a.csv)?;
    if let Some(c) = &a.category {
        data = data.category_split(c);
        // the filtered set is fitted as a whole, under the requested label
        for r in &mut data.records {
            r.category = None;
        }
    }
    let mut report = ranking::rank(&data, a.tol, a.max_iter)?;
    if let Some(c) = &a.category {
        report.categories[0].category = c.clone();
    }
    emit(&report.to_json(), a.out.as_deref(), stdout)
}

fn cmd_bench(a: &BenchArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let model = match &a.weights {
        Some(w) => load_model(w, a.config.as_deref())?,
        None => {
            let config = load_config(a.config.as_deref())?;
            let store = init_weights(&config, a.seed)?;
            Generator::new(config, &store)?
        }
    };
    let opts = BenchOptions { seconds: a.seconds, runs: a.runs, warmup: a.warmup, threads: a.threads, seed: a.seed };
    let report = run_bench(&model, &opts)?;
    emit(&report.to_json(), a.out.as_deref(), stdout)
}

fn cmd_init(a: &InitArgs) -> CliResult<()> {
    let config = if a.toy { ModelConfig::toy() } else { load_config(a.config.as_deref())? };
    let store: WeightStore = init_weights(&config, a.seed)?;
    save_weights(&store, &a.weights)?;
    if let Some(p) = &a.config_out {
        config.save(p)?;
    }
    Ok(())
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Restore(a) => cmd_restore(a, stderr),
        Command::Degrade(a) => cmd_degrade(a, stdout),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Rank(a) => cmd_rank(a, stdout),
        Command::Bench(a) => cmd_bench(a, stdout),
        Command::InitWeights(a) => cmd_init(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}
