//! Subcommand runners behind the `expmoment` binary.
//!
//! Each subcommand reads its inputs from disk, computes, and only then writes
//! its JSON and CSV artifacts, so a failed run leaves nothing behind. Every
//! JSON artifact carries a provenance block with the configuration that
//! produced it, its SHA-256 hash, the working precision, the seed and the
//! library version. High-precision numbers are written as decimal strings.
//!
//! `pipeline` chains the subcommands through on-disk artifacts inside one
//! output directory.

use crate::auxiliary::{self, AuxiliaryError, CertificateStatus};
use crate::bilinear::{self, BilinearError, QSpec, ReachOptions, RectangleSystem};
use crate::control::{self, ControlError, ControlProblem, LrOptions};
use crate::hypotheses::{self, GapCertificate, HypothesesError, StructuralConstants, WeylFit};
use crate::moment::{self, MomentError, MomentProblem, ResidualMethod};
use crate::mp;
use crate::spectra::{self, PerturbedSquare, SideLength, SpectraError, SpectralSequence, Spectrum};
use clap::{Args, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::Float;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

/// Environment variable holding the default working precision in decimal digits.
pub const DIGITS_ENV: &str = "EXPMOMENT_DIGITS";

/// Working precision when neither a flag nor the environment sets one.
pub const DEFAULT_DIGITS: u32 = 80;

/// Significant digits of the constants in a verification certificate.
pub const CERTIFICATE_DIGITS: usize = 30;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_UNCONVERGED: i32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Unconverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Unconverged(_) => EXIT_UNCONVERGED,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Numerical(_) => "numerical",
            CliError::Unconverged(_) => "unconverged",
        }
    }

    /// One-line JSON diagnostic for stderr.
    pub fn diagnostic(&self) -> String {
        json!({ "error": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() }).to_string()
    }
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl From<SpectraError> for CliError {
    fn from(e: SpectraError) -> Self {
        match e {
            SpectraError::Invalid(_) | SpectraError::NotIncreasing { .. } | SpectraError::OutOfRange { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<HypothesesError> for CliError {
    fn from(e: HypothesesError) -> Self {
        match e {
            HypothesesError::Spectra(s) => s.into(),
            HypothesesError::Invalid(_) | HypothesesError::Regime(_) | HypothesesError::RepeatedValue { .. } => {
                CliError::Validation(e.to_string())
            }
            HypothesesError::Unsatisfiable { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<AuxiliaryError> for CliError {
    fn from(e: AuxiliaryError) -> Self {
        match e {
            AuxiliaryError::Spectra(s) => s.into(),
            AuxiliaryError::Invalid(_) => CliError::Validation(e.to_string()),
            AuxiliaryError::Precision { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<MomentError> for CliError {
    fn from(e: MomentError) -> Self {
        match e {
            MomentError::Invalid(_) => CliError::Validation(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Invalid(_) => CliError::Validation(e.to_string()),
            ControlError::Moment { source: MomentError::Invalid(_), .. } => CliError::Validation(e.to_string()),
            ControlError::Moment { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<BilinearError> for CliError {
    fn from(e: BilinearError) -> Self {
        match e {
            BilinearError::Control(c) => c.into(),
            BilinearError::Invalid(_)
            | BilinearError::RepeatedEigenvalue { .. }
            | BilinearError::ZeroCoupling { .. } => CliError::Validation(e.to_string()),
            BilinearError::SimulationUnconverged { .. } => CliError::Unconverged(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

/// Default working digits: `EXPMOMENT_DIGITS` if set and valid, else [`DEFAULT_DIGITS`].
pub fn default_digits() -> Result<u32, CliError> {
    match std::env::var(DIGITS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<u32>()
            .map_err(|_| validation(format!("{DIGITS_ENV} must be a positive integer, got `{s}`"))),
        Err(_) => Ok(DEFAULT_DIGITS),
    }
}

/// One subcommand with its arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a spectral sequence as CSV with a JSON sidecar.
    Spectra(SpectraArgs),
    /// Fit the Weyl law and weak gap, and derive the structural constants.
    Verify(VerifyArgs),
    /// Certify the auxiliary sequence at a cutoff.
    Certify(CertifyArgs),
    /// Solve a truncated exponential moment problem.
    Moment(MomentArgs),
    /// Synthesize a dyadic null control.
    Control(ControlArgs),
    /// Scan the control cost over horizons and fit the cost law.
    CostScan(CostScanArgs),
    /// Steer the bilinear plate equation onto an eigensolution.
    Bilinear(BilinearArgs),
    /// Run a chain of subcommands through on-disk artifacts.
    Pipeline(PipelineArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectra(_) => "spectra",
            Command::Verify(_) => "verify",
            Command::Certify(_) => "certify",
            Command::Moment(_) => "moment",
            Command::Control(_) => "control",
            Command::CostScan(_) => "cost-scan",
            Command::Bilinear(_) => "bilinear",
            Command::Pipeline(_) => "pipeline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    Laplacian,
    Bilaplacian,
    PerturbedSquare,
    Densify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct SpectraArgs {
    #[arg(long, value_enum)]
    pub generator: Generator,
    /// Rectangle side: a decimal, `p/q` or `r^(1/n)`.
    #[arg(long, default_value = "1")]
    #[serde(default = "one")]
    pub a_len: String,
    #[arg(long, default_value = "1")]
    #[serde(default = "one")]
    pub b_len: String,
    #[arg(long)]
    pub count: usize,
    /// Weyl exponent `a < 1/2` of the densified sequence.
    #[arg(long)]
    #[serde(default)]
    pub a_exponent: Option<String>,
    /// Source spectrum CSV for `densify` (default: the perturbed square).
    #[arg(long = "in")]
    #[serde(default, rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "1/2")]
    #[serde(default = "half")]
    pub a: String,
    #[arg(long, default_value = "1/4")]
    #[serde(default = "quarter")]
    pub b: String,
    #[arg(long, default_value = "1/2")]
    #[serde(default = "half")]
    pub delta: String,
    /// Largest value used by the fit (default: the last input value).
    #[arg(long)]
    #[serde(default)]
    pub gamma_max: Option<String>,
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct CertifyArgs {
    /// Cutoff: a number, `lambda0` or a multiple such as `2*lambda0`.
    #[arg(long, default_value = "lambda0")]
    #[serde(default = "lambda0")]
    pub lambda: String,
    #[arg(long, default_value_t = 2000)]
    #[serde(default = "default_range")]
    pub range: usize,
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    /// Certificate JSON written by `verify`.
    #[arg(long)]
    pub constants: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualKind {
    Quadrature,
    Algebraic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct MomentArgs {
    /// Frequency CSV (a `value` column or a single column).
    #[arg(long)]
    pub freqs: PathBuf,
    /// Use only the first `count` frequencies.
    #[arg(long)]
    #[serde(default)]
    pub count: Option<usize>,
    #[arg(long, default_value = "0.5")]
    #[serde(default = "half_decimal")]
    pub horizon: String,
    /// Target CSV, or `unit:k`, `ones`, `random`.
    #[arg(long, default_value = "unit:1")]
    #[serde(default = "unit_one")]
    pub targets: String,
    #[arg(long)]
    #[serde(default)]
    pub weights: Option<PathBuf>,
    /// Working digits (default: the automatic policy of the solver).
    #[arg(long)]
    #[serde(default)]
    pub digits: Option<u32>,
    /// Solve for every unit target instead.
    #[arg(long)]
    #[serde(default)]
    pub biorthogonal: bool,
    #[arg(long, value_enum, default_value = "quadrature")]
    #[serde(default = "quadrature")]
    pub residual: ResidualKind,
    /// Gauss–Legendre nodes per panel (default `4N + 50`).
    #[arg(long)]
    #[serde(default)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ControlArgs {
    #[arg(long)]
    pub spectrum: PathBuf,
    /// Simulated modes (default: every value of the spectrum file).
    #[arg(long)]
    #[serde(default)]
    pub modes: Option<usize>,
    /// `expdelta:C,delta` for `b_k = exp(-C μ_k^{1-δ})`, or a CSV of `b_k`.
    #[arg(long, default_value = "expdelta:1,0.5")]
    #[serde(default = "expdelta")]
    pub b_profile: String,
    /// `mode:k`, `random` (seeded) or a CSV of `⟨ξ₀, φ_k⟩`.
    #[arg(long, default_value = "mode:1")]
    #[serde(default = "mode_one")]
    pub xi0: String,
    #[arg(long, default_value = "0.5")]
    #[serde(default = "half_decimal")]
    pub horizon: String,
    #[arg(long, default_value_t = 7.0)]
    #[serde(default = "seven")]
    pub alpha: f64,
    #[arg(long, default_value_t = control::DEFAULT_DELTA)]
    #[serde(default = "default_delta")]
    pub delta_param: f64,
    #[arg(long, default_value_t = control::DEFAULT_TOL)]
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[arg(long)]
    #[serde(default)]
    pub digits: Option<u32>,
    /// Frequency shift: a number, `auto` (`max(0, 1 - μ₁)`) or `0`.
    #[arg(long, default_value = "auto")]
    #[serde(default = "auto")]
    pub shift: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct CostScanArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub control: ControlArgs,
    /// Comma-separated horizons in `(0, 1)`.
    #[arg(long, default_value = "0.15,0.2,0.3,0.4,0.6,0.8")]
    #[serde(default = "default_t_grid")]
    pub t_grid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct BilinearArgs {
    #[arg(long, default_value = "1")]
    #[serde(default = "one")]
    pub a_len: String,
    /// Use `b = 2^{1/3}` (overrides `--b-len`).
    #[arg(long)]
    #[serde(default)]
    pub b_len_cube_root_2: bool,
    #[arg(long, default_value = "1")]
    #[serde(default = "one")]
    pub b_len: String,
    /// Separable weight `Q1(x) Q2(y)`.
    #[arg(long, default_value = "x^2*y^2")]
    #[serde(default = "x2y2")]
    pub q: String,
    #[arg(long, default_value_t = 1)]
    #[serde(default = "one_usize")]
    pub mode: usize,
    /// Size `ε` of the initial perturbation `φ_j + ε φ_{j+1}`.
    #[arg(long, default_value_t = 1e-3)]
    #[serde(default = "milli")]
    pub perturb: f64,
    #[arg(long, default_value_t = 0.5)]
    #[serde(default = "half_f64")]
    pub horizon: f64,
    #[arg(long, default_value_t = bilinear::DEFAULT_TRUNCATION)]
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[arg(long, default_value_t = 6)]
    #[serde(default = "six")]
    pub max_iters: usize,
    /// Tolerance on the relative final error.
    #[arg(long, default_value_t = 1e-6)]
    #[serde(default = "micro")]
    pub tol: f64,
    /// Second perturbation size for the one-iterate ratio test.
    #[arg(long)]
    #[serde(default)]
    pub ratio_test: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct PipelineArgs {
    /// Pipeline JSON (default: the built-in perturbed-square chain).
    #[arg(long)]
    #[serde(default)]
    pub config: Option<PathBuf>,
    /// Directory receiving every artifact; relative stage paths resolve here.
    #[arg(long, default_value = "expmoment-run")]
    pub out_dir: PathBuf,
}

fn one() -> String {
    "1".into()
}
fn half() -> String {
    "1/2".into()
}
fn quarter() -> String {
    "1/4".into()
}
fn lambda0() -> String {
    "lambda0".into()
}
fn default_range() -> usize {
    2000
}
fn half_decimal() -> String {
    "0.5".into()
}
fn unit_one() -> String {
    "unit:1".into()
}
fn quadrature() -> ResidualKind {
    ResidualKind::Quadrature
}
fn expdelta() -> String {
    "expdelta:1,0.5".into()
}
fn mode_one() -> String {
    "mode:1".into()
}
fn seven() -> f64 {
    7.0
}
fn default_delta() -> f64 {
    control::DEFAULT_DELTA
}
fn default_tol() -> f64 {
    control::DEFAULT_TOL
}
fn auto() -> String {
    "auto".into()
}
fn default_t_grid() -> String {
    "0.15,0.2,0.3,0.4,0.6,0.8".into()
}
fn x2y2() -> String {
    "x^2*y^2".into()
}
fn one_usize() -> usize {
    1
}
fn milli() -> f64 {
    1e-3
}
fn half_f64() -> f64 {
    0.5
}
fn default_truncation() -> usize {
    bilinear::DEFAULT_TRUNCATION
}
fn six() -> usize {
    6
}
fn micro() -> f64 {
    1e-6
}

/// Everything that determines the numeric output of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub pipeline: Command,
    pub precision_digits: u32,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(10..=100_000).contains(&self.precision_digits) {
            return Err(validation(format!("precision digits must lie in 10..=100000, got {}", self.precision_digits)));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(validation(format!("{name} must be positive, got {v}")))
            }
        };
        match &self.pipeline {
            Command::Spectra(a) if a.count == 0 => Err(validation("--count must be positive")),
            Command::Certify(a) if a.range == 0 => Err(validation("--range must be positive")),
            Command::Control(a) => validate_control(a, &positive),
            Command::CostScan(a) => validate_control(&a.control, &positive),
            Command::Bilinear(a) => {
                positive("--tol", a.tol)?;
                positive("--horizon", a.horizon)?;
                if !a.perturb.is_finite() {
                    return Err(validation("--perturb must be finite"));
                }
                if let Some(s) = a.ratio_test {
                    positive("--ratio-test", s)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn prec(&self) -> u32 {
        mp::bits_for_digits(self.precision_digits)
    }

    fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    fn canonical(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }
}

fn validate_control(a: &ControlArgs, positive: &dyn Fn(&str, f64) -> Result<(), CliError>) -> Result<(), CliError> {
    positive("--tol", a.tol)?;
    positive("--alpha", a.alpha)?;
    if !(a.delta_param > 0.0 && a.delta_param < 0.5) {
        return Err(validation(format!("--delta-param must lie in (0, 1/2), got {}", a.delta_param)));
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Exit status and the files a run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    /// Set when the run finished and wrote its artifacts without meeting its tolerance.
    pub unconverged: Option<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.unconverged.is_some() {
            EXIT_UNCONVERGED
        } else {
            EXIT_OK
        }
    }
}

/// Files of one run, held in memory until the computation has succeeded.
struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    fn new() -> Self {
        Artifacts { files: Vec::new() }
    }

    fn json(&mut self, path: PathBuf, config: &RunConfig, result: Value) {
        let doc = json!({ "provenance": provenance(config), "result": result });
        let mut bytes = serde_json::to_vec_pretty(&doc).expect("JSON values serialize");
        bytes.push(b'\n');
        self.files.push((path, bytes));
    }

    fn csv(&mut self, path: PathBuf, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| validation(e.to_string()))?;
        for r in rows {
            w.write_record(&r).map_err(|e| validation(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| validation(e.to_string()))?;
        self.files.push((path, bytes));
        Ok(())
    }

    /// Writes every file through a temporary sibling and a rename.
    fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        let mut written = Vec::new();
        for (path, bytes) in &self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| validation(format!("cannot create {}: {e}", dir.display())))?;
            }
            let mut tmp = path.clone().into_os_string();
            tmp.push(".partial");
            let tmp = PathBuf::from(tmp);
            fs::write(&tmp, bytes).map_err(|e| validation(format!("cannot write {}: {e}", tmp.display())))?;
            written.push((tmp, path.clone()));
        }
        for (tmp, path) in &written {
            fs::rename(tmp, path).map_err(|e| validation(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(self.files.into_iter().map(|(p, _)| p).collect())
    }
}

fn provenance(config: &RunConfig) -> Value {
    json!({
        "library": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": config.pipeline.name(),
        "precision_digits": config.precision_digits,
        "precision_bits": config.prec(),
        "seed": config.seed,
        "config_sha256": config.hash(),
        "config": serde_json::to_value(config).expect("configuration serializes"),
    })
}

fn full(x: &Float) -> String {
    mp::to_decimal_full(x)
}

/// Plotting precision for CSV columns.
fn short(x: &Float) -> String {
    mp::to_decimal(x, 17)
}

fn digits30(x: &Float) -> String {
    mp::to_decimal(x, CERTIFICATE_DIGITS)
}

fn parse_float(prec: u32, s: &str, what: &str) -> Result<Float, CliError> {
    mp::parse(prec, s).map_err(|e| validation(format!("{what}: {e}")))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() && base != Path::new(".") {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

/// Runs one subcommand; relative paths resolve against `base`.
pub fn run(config: &RunConfig, base: &Path) -> Result<Outcome, CliError> {
    config.validate()?;
    match &config.pipeline {
        Command::Spectra(a) => run_spectra(config, a, base),
        Command::Verify(a) => run_verify(config, a, base),
        Command::Certify(a) => run_certify(config, a, base),
        Command::Moment(a) => run_moment(config, a, base),
        Command::Control(a) => run_control(config, a, base),
        Command::CostScan(a) => run_cost_scan(config, a, base),
        Command::Bilinear(a) => run_bilinear(config, a, base),
        Command::Pipeline(a) => run_pipeline(config, a, base),
    }
}

/// A spectrum read back from CSV, with the generator tag of its sidecar.
struct LoadedSpectrum {
    values: Vec<Float>,
    tag: String,
}

impl LoadedSpectrum {
    fn sequence(&self, count: Option<usize>) -> Result<SpectralSequence, CliError> {
        let n = match count {
            Some(0) => return Err(validation("the requested count must be positive")),
            Some(n) if n > self.values.len() => {
                return Err(validation(format!("{n} values requested but the file holds {}", self.values.len())))
            }
            Some(n) => n,
            None => self.values.len(),
        };
        Ok(SpectralSequence::new(self.values[..n].to_vec(), self.tag.clone())?)
    }

    fn is_perturbed_square(&self) -> bool {
        self.tag == PerturbedSquare::TAG
    }
}

/// The numeric column of a CSV: `value` if such a header exists, else the first.
fn read_column(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = Vec::new();
    for r in reader.records() {
        records.push(r.map_err(|e| validation(format!("{}: {e}", path.display())))?);
    }
    let mut column = 0;
    let mut start = 0;
    if let Some(first) = records.first() {
        if let Some(i) = first.iter().position(|f| f.trim() == "value") {
            column = i;
            start = 1;
        } else if first.get(0).is_some_and(|f| Float::parse(f.trim()).is_err() && !f.contains('/')) {
            start = 1;
        }
    }
    let values: Vec<String> = records[start..]
        .iter()
        .filter_map(|r| r.get(column).map(|s| s.trim().to_string()))
        .filter(|s| !s.is_empty())
        .collect();
    if values.is_empty() {
        return Err(validation(format!("{} holds no values", path.display())));
    }
    Ok(values)
}

fn read_floats(path: &Path, prec: u32) -> Result<Vec<Float>, CliError> {
    read_column(path)?
        .iter()
        .enumerate()
        .map(|(i, s)| parse_float(prec, s, &format!("{} row {}", path.display(), i + 1)))
        .collect()
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn load_spectrum(path: &Path, prec: u32) -> Result<LoadedSpectrum, CliError> {
    let values = read_floats(path, prec)?;
    let tag = fs::read_to_string(sidecar(path))
        .ok()
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .and_then(|v| v["result"]["generator_tag"].as_str().map(str::to_string))
        .unwrap_or_else(|| "csv".to_string());
    Ok(LoadedSpectrum { values, tag })
}

fn seeded_uniform(n: usize, seed: u64, prec: u32) -> Vec<Float> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Float::with_val(prec, rng.random_range(-1.0..1.0))).collect()
}

/// `unit:k`, `mode:k`, `ones`, `random` or a CSV path, as a vector of length `n`.
fn vector_spec(spec: &str, n: usize, seed: u64, prec: u32, base: &Path, what: &str) -> Result<Vec<Float>, CliError> {
    let s = spec.trim();
    if let Some(k) = s.strip_prefix("unit:").or_else(|| s.strip_prefix("mode:")) {
        let k: usize = k.trim().parse().map_err(|_| validation(format!("{what}: bad index in `{s}`")))?;
        if k == 0 || k > n {
            return Err(validation(format!("{what}: index {k} outside 1..={n}")));
        }
        return Ok(control::unit_mode(n, k, prec));
    }
    match s {
        "ones" => Ok((0..n).map(|_| Float::with_val(prec, 1)).collect()),
        "random" => Ok(seeded_uniform(n, seed, prec)),
        _ => {
            let v = read_floats(&resolve(base, Path::new(s)), prec)?;
            if v.len() < n {
                return Err(validation(format!("{what}: {} values given, {n} needed", v.len())));
            }
            Ok(v[..n].to_vec())
        }
    }
}

fn run_spectra(config: &RunConfig, a: &SpectraArgs, base: &Path) -> Result<Outcome, CliError> {
    let prec = config.prec();
    let out = resolve(base, &a.out);
    let mut rows = Vec::new();
    let label = |p: Option<(u64, u64)>| match p {
        Some((l, m)) => (l.to_string(), m.to_string()),
        None => (String::new(), String::new()),
    };
    let mut meta = json!({ "generator": a.generator, "count": a.count });
    let tag = match a.generator {
        Generator::Laplacian | Generator::Bilaplacian => {
            let (al, bl) = (SideLength::parse(&a.a_len)?, SideLength::parse(&a.b_len)?);
            let lat = if a.generator == Generator::Laplacian {
                spectra::generate_rectangle_laplacian(&al, &bl, a.count, prec)?
            } else {
                spectra::generate_rectangle_bilaplacian(&al, &bl, a.count, prec)?
            };
            for (i, (v, p)) in lat.raw_values.iter().zip(&lat.pairs).enumerate() {
                let (l, m) = label(Some(*p));
                rows.push(vec![(i + 1).to_string(), full(v), l, m]);
            }
            let repeats = lat.multiplicities().iter().filter(|(_, ps)| ps.len() > 1).count();
            meta["a_len"] = json!(al.to_string());
            meta["b_len"] = json!(bl.to_string());
            meta["repeated_values"] = json!(repeats);
            format!(
                "rectangle-{}({al},{bl})",
                if a.generator == Generator::Laplacian { "laplacian" } else { "bilaplacian" }
            )
        }
        Generator::PerturbedSquare => {
            let seq = spectra::generate_perturbed_square_example(a.count, prec)?;
            let labels = seq.labels().map(|l| l.to_vec());
            for (i, v) in seq.values_slice().iter().enumerate() {
                let (l, m) = label(labels.as_ref().map(|ls| ls[i]));
                rows.push(vec![(i + 1).to_string(), full(v), l, m]);
            }
            seq.generator_tag().to_string()
        }
        Generator::Densify => {
            let exponent = a.a_exponent.as_deref().ok_or_else(|| validation("densify needs --a-exponent"))?;
            let ax = parse_float(prec, exponent, "--a-exponent")?;
            let source = match &a.input {
                Some(p) => load_spectrum(&resolve(base, p), prec)?.sequence(Some(a.count))?,
                None => spectra::generate_perturbed_square_example(a.count, prec)?,
            };
            let d = spectra::densify_sequence(&source, &ax)?;
            for (i, v) in d.sequence.values_slice().iter().enumerate() {
                rows.push(vec![(i + 1).to_string(), full(v), String::new(), String::new()]);
            }
            meta["a_exponent"] = json!(exponent);
            meta["source_tag"] = json!(source.generator_tag());
            meta["block_sizes"] = json!(d.block_sizes);
            d.sequence.generator_tag().to_string()
        }
    };
    meta["generator_tag"] = json!(tag);
    meta["values"] = json!(rows.len());
    let mut art = Artifacts::new();
    art.csv(out.clone(), &["k", "value", "l_index", "m_index"], rows)?;
    art.json(sidecar(&out), config, meta);
    Ok(Outcome { artifacts: art.commit()?, unconverged: None })
}

/// Every constant of a verification, as decimal strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantSet {
    pub a: String,
    pub b: String,
    pub delta: String,
    pub c_w1: String,
    pub c_w2: String,
    pub k_w: String,
    pub kappa: String,
    pub c_w: String,
    pub epsilon: String,
    pub lambda_0: String,
    pub theta: String,
    pub k_star: u64,
    pub mu_k_star: String,
    pub mu1: String,
    pub alpha: String,
    pub beta: Option<String>,
    pub checked_up_to: String,
    pub checked_count: u64,
}

impl ConstantSet {
    fn build(fit: &WeylFit, gap: &GapCertificate, c: &StructuralConstants, fmt: impl Fn(&Float) -> String) -> Self {
        ConstantSet {
            a: fmt(&c.a),
            b: fmt(&c.b),
            delta: fmt(&c.delta),
            c_w1: fmt(&fit.c_w1),
            c_w2: fmt(&fit.c_w2),
            k_w: fmt(&fit.k_w),
            kappa: fmt(&c.kappa),
            c_w: fmt(&gap.c_w),
            epsilon: fmt(&c.epsilon),
            lambda_0: fmt(&c.lambda_0),
            theta: fmt(&c.theta),
            k_star: c.k_star,
            mu_k_star: fmt(&c.mu_k_star),
            mu1: fmt(&c.mu1),
            alpha: fmt(&c.alpha),
            beta: c.beta.as_ref().map(&fmt),
            checked_up_to: fmt(&fit.checked_up_to),
            checked_count: fit.checked_count,
        }
    }

    /// Rebuilds the fit, the weak-gap constant and the structural constants.
    fn restore(&self, prec: u32) -> Result<(WeylFit, Float, StructuralConstants), CliError> {
        let p = |s: &str, what: &str| parse_float(prec, s, what);
        let fit = WeylFit {
            a: p(&self.a, "a")?,
            b: p(&self.b, "b")?,
            c_w1: p(&self.c_w1, "c_w1")?,
            c_w2: p(&self.c_w2, "c_w2")?,
            k_w: p(&self.k_w, "k_w")?,
            checked_up_to: p(&self.checked_up_to, "checked_up_to")?,
            checked_count: self.checked_count,
        };
        let consts = StructuralConstants {
            a: fit.a.clone(),
            b: fit.b.clone(),
            epsilon: p(&self.epsilon, "epsilon")?,
            lambda_0: p(&self.lambda_0, "lambda_0")?,
            theta: p(&self.theta, "theta")?,
            k_star: self.k_star,
            mu_k_star: p(&self.mu_k_star, "mu_k_star")?,
            kappa: p(&self.kappa, "kappa")?,
            k_w: fit.k_w.clone(),
            c_w1: fit.c_w1.clone(),
            c_w2: fit.c_w2.clone(),
            mu1: p(&self.mu1, "mu1")?,
            alpha: p(&self.alpha, "alpha")?,
            beta: self.beta.as_deref().map(|s| p(s, "beta")).transpose()?,
            delta: p(&self.delta, "delta")?,
        };
        Ok((fit, p(&self.c_w, "c_w")?, consts))
    }
}

fn run_verify(config: &RunConfig, a: &VerifyArgs, base: &Path) -> Result<Outcome, CliError> {
    let prec = config.prec();
    let input = resolve(base, &a.input);
    let loaded = load_spectrum(&input, prec)?;
    let seq = loaded.sequence(None)?;
    let (ea, eb) = (parse_float(prec, &a.a, "--a")?, parse_float(prec, &a.b, "--b")?);
    let delta = parse_float(prec, &a.delta, "--delta")?;
    let gamma_max = match &a.gamma_max {
        Some(g) => parse_float(prec, g, "--gamma-max")?,
        None => seq.values_slice().last().expect("nonempty").clone(),
    };
    let regime = hypotheses::regime(&ea, &eb)?;
    let fit = hypotheses::fit_weyl(&seq, &ea, &eb, &gamma_max)?;
    let gap = hypotheses::check_weak_gap(&seq)?;
    let ks = hypotheses::k_star(&fit)?;
    let mu_ks = if loaded.is_perturbed_square() {
        PerturbedSquare::new(prec).value(ks)?
    } else if ks as usize <= seq.size() {
        seq.value(ks)?
    } else {
        return Err(CliError::Numerical(format!(
            "k* = {ks} exceeds the {} input values and no exact oracle is known for `{}`",
            seq.size(),
            loaded.tag
        )));
    };
    let consts = hypotheses::structural_constants(&fit, seq.first_value(), &mu_ks, &delta)?;
    let result = json!({
        "input": a.input,
        "generator_tag": loaded.tag,
        "regime": format!("{regime:?}").to_lowercase(),
        "checked_range": {
            "first_index": 1,
            "last_index": fit.checked_count,
            "gamma_max": digits30(&fit.checked_up_to),
            "weak_gap_checked_up_to": gap.checked_up_to,
        },
        "weak_gap_worst_index": gap.worst_index,
        "constants": ConstantSet::build(&fit, &gap, &consts, digits30),
        "full_precision": ConstantSet::build(&fit, &gap, &consts, full),
    });
    let mut art = Artifacts::new();
    art.json(resolve(base, &a.out), config, result);
    Ok(Outcome { artifacts: art.commit()?, unconverged: None })
}

fn parse_lambda(spec: &str, lambda_0: &Float, prec: u32) -> Result<Float, CliError> {
    let s = spec.trim().replace(' ', "");
    if let Some(factor) = s.strip_suffix("lambda0") {
        let factor = factor.trim_end_matches('*');
        let f = if factor.is_empty() { Float::with_val(prec, 1) } else { parse_float(prec, factor, "--lambda")? };
        return Ok(Float::with_val(prec, lambda_0 * f));
    }
    parse_float(prec, &s, "--lambda")
}

fn run_certify(config: &RunConfig, a: &CertifyArgs, base: &Path) -> Result<Outcome, CliError> {
    let prec = config.prec();
    let constants_path = resolve(base, &a.constants);
    let text = fs::read_to_string(&constants_path)
        .map_err(|e| validation(format!("cannot read {}: {e}", constants_path.display())))?;
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| validation(format!("{}: {e}", constants_path.display())))?;
    let set: ConstantSet = serde_json::from_value(doc["result"]["full_precision"].clone())
        .map_err(|e| validation(format!("{} is not a verify certificate: {e}", constants_path.display())))?;
    let (fit, c_w, consts) = set.restore(prec)?;
    let lambda = parse_lambda(&a.lambda, &consts.lambda_0, prec)?;
    let loaded = load_spectrum(&resolve(base, &a.input), prec)?;
    let base_spectrum: Arc<dyn Spectrum> = if loaded.is_perturbed_square() {
        Arc::new(PerturbedSquare::new(auxiliary::auxiliary_precision(&lambda, prec)))
    } else {
        Arc::new(loaded.sequence(None)?)
    };
    let aux = auxiliary::build_auxiliary(base_spectrum, &fit, &lambda, a.range)?;
    let params = auxiliary::block_gap_parameters(&consts, &lambda)?;
    let certs = auxiliary::certify_auxiliary(&aux, &consts, &params, &c_w)?;
    let contradiction =
        certs.iter().find(|c| c.status == CertificateStatus::Failed && c.within_guarantee).map(|c| c.name.clone());
    let list: Vec<Value> = certs
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "checked_range": [c.checked_range.0, c.checked_range.1],
                "status": format!("{:?}", c.status).to_lowercase(),
                "passed": c.passed,
                "worst_margin": if c.worst_margin.is_nan() { "nan".to_string() } else { digits30(&c.worst_margin) },
                "witness_index": c.witness_index,
                "within_guarantee": c.within_guarantee,
                "note": c.note,
            })
        })
        .collect();
    let result = json!({
        "lambda": full(&lambda),
        "lambda_over_lambda_0": mp::to_decimal(&Float::with_val(prec, &lambda / &consts.lambda_0), 17),
        "k_star_lambda": aux.k_star_lambda,
        "k_star_exact": aux.k_star_exact,
        "n_lambda": params.n_lambda,
        "gamma_lambda": digits30(&params.gamma_lambda),
        "range": a.range,
        "certificates": list,
    });
    let mut art = Artifacts::new();
    art.json(resolve(base, &a.out), config, result);
    let artifacts = art.commit()?;
    if let Some(name) = contradiction {
        return Err(CliError::Numerical(format!(
            "certificate `{name}` failed at a cutoff within the guarantee (artifact written)"
        )));
    }
    Ok(Outcome { artifacts, unconverged: None })
}

fn run_moment(config: &RunConfig, a: &MomentArgs, base: &Path) -> Result<Outcome, CliError> {
    let prec = config.prec().max(a.digits.map(mp::bits_for_digits).unwrap_or(0));
    let loaded = load_spectrum(&resolve(base, &a.freqs), prec)?;
    let freqs = loaded.sequence(a.count)?.values_slice().to_vec();
    let n = freqs.len();
    let horizon = parse_float(prec, &a.horizon, "--horizon")?;
    if !(horizon > 0) {
        return Err(validation("--horizon must be positive"));
    }
    let method = match a.residual {
        ResidualKind::Algebraic => ResidualMethod::Algebraic,
        ResidualKind::Quadrature => match a.nodes {
            Some(k) => ResidualMethod::Quadrature { nodes_per_panel: k },
            None => ResidualMethod::default_for(n),
        },
    };
    let mut result = json!({
        "freqs": a.freqs,
        "count": n,
        "horizon": full(&horizon),
        "residual_method": method,
    });
    if a.biorthogonal {
        let digits = a.digits.unwrap_or_else(|| moment::auto_digits(&freqs, &horizon));
        let fam = moment::biorthogonal_family(&freqs, &horizon, digits, method)?;
        result["biorthogonal"] = json!({
            "identity_error": full(&fam.identity_error()),
            "norms": fam.norms().iter().map(full).collect::<Vec<_>>(),
            "log_norms": fam.log_norms(),
            "norms_nondecreasing_after_first": fam.norms_nondecreasing_after_first(),
            "envelope_fit": fam.envelope_fit(),
            "members": fam.members,
        });
    } else {
        let targets = vector_spec(&a.targets, n, config.seed, prec, base, "--targets")?;
        let mut problem = MomentProblem::new(freqs, horizon, targets)?;
        if let Some(d) = a.digits {
            problem = problem.with_digits(d)?;
        }
        if let Some(w) = &a.weights {
            let w = read_floats(&resolve(base, w), prec)?;
            if w.len() < n {
                return Err(validation(format!("--weights: {} values given, {n} needed", w.len())));
            }
            problem = problem.with_weights(w[..n].to_vec())?;
        }
        problem.residual = method;
        let sol = moment::solve_moments(&problem)?;
        result["max_residual"] = json!(full(&sol.max_residual()));
        result["residual_exponent"] = json!(sol.residual_exponent());
        result["solution"] = serde_json::to_value(&sol).expect("solutions serialize");
    }
    let mut art = Artifacts::new();
    art.json(resolve(base, &a.out), config, result);
    Ok(Outcome { artifacts: art.commit()?, unconverged: None })
}

fn control_problem(config: &RunConfig, a: &ControlArgs, base: &Path) -> Result<(ControlProblem, Float), CliError> {
    let prec = config.prec();
    let loaded = load_spectrum(&resolve(base, &a.spectrum), prec)?;
    let seq = loaded.sequence(a.modes)?;
    let n = seq.size();
    let b = if let Some(params) = a.b_profile.trim().strip_prefix("expdelta:") {
        let (c, d) = params
            .split_once(',')
            .ok_or_else(|| validation(format!("--b-profile: expected expdelta:C,delta, got `{}`", a.b_profile)))?;
        let c: f64 = c.trim().parse().map_err(|_| validation(format!("--b-profile: bad C `{c}`")))?;
        let d: f64 = d.trim().parse().map_err(|_| validation(format!("--b-profile: bad delta `{d}`")))?;
        if !(c >= 0.0 && d > 0.0 && d <= 1.0) {
            return Err(validation("--b-profile: need C ≥ 0 and 0 < delta ≤ 1"));
        }
        control::b_profile_expdelta(seq.values_slice(), c, d)
    } else {
        let v = read_floats(&resolve(base, Path::new(a.b_profile.trim())), prec)?;
        if v.len() < n {
            return Err(validation(format!("--b-profile: {} values given, {n} needed", v.len())));
        }
        v[..n].to_vec()
    };
    let xi0 = vector_spec(&a.xi0, n, config.seed, prec, base, "--xi0")?;
    let horizon = parse_float(prec, &a.horizon, "--horizon")?;
    let mut problem = ControlProblem::new(seq, b, xi0, horizon, n)?.with_tolerance(a.tol)?;
    if let Some(d) = a.digits {
        problem = problem.with_digits(d);
    }
    let shift = match a.shift.trim() {
        "auto" => problem.default_shift(),
        s => parse_float(prec, s, "--shift")?,
    };
    if !shift.is_zero() {
        problem = problem.shifted(&shift)?;
    }
    Ok((problem, shift))
}

fn run_control(config: &RunConfig, a: &ControlArgs, base: &Path) -> Result<Outcome, CliError> {
    let (problem, shift) = control_problem(config, a, base)?;
    let sol = control::lebeau_robbiano_control(&problem, a.delta_param, a.alpha, LrOptions::default())?;
    let recomputed = mp::norm2(&control::simulate(&problem, &sol));
    let relative = Float::with_val(recomputed.prec(), &recomputed / problem.xi0_norm());
    let converged = sol.converged && relative.to_f64() <= a.tol;
    let log_cost = if sol.total_norm.is_zero() {
        f64::NEG_INFINITY
    } else {
        Float::with_val(64, sol.total_norm.ln_ref()).to_f64()
    };
    let out = resolve(base, &a.out);
    let result = json!({
        "modes": problem.truncation,
        "horizon": full(&problem.horizon),
        "alpha": a.alpha,
        "delta_param": a.delta_param,
        "tol": a.tol,
        "shift": full(&shift),
        "cost": full(&sol.total_norm),
        "log_cost": log_cost,
        "recomputed_final_state_norm": full(&recomputed),
        "relative_final_state": full(&relative),
        "converged": converged,
        "solution": sol,
    });
    let mut art = Artifacts::new();
    art.json(out.clone(), config, result);
    art.csv(
        out.with_extension("csv"),
        &["T", "cost", "log_cost", "final_state_norm", "converged"],
        vec![vec![
            short(&problem.horizon),
            short(&sol.total_norm),
            format!("{log_cost:e}"),
            short(&recomputed),
            converged.to_string(),
        ]],
    )?;
    let artifacts = art.commit()?;
    let unconverged = (!converged)
        .then(|| format!("relative final state {} above tolerance {:e}", mp::to_decimal(&relative, 6), a.tol));
    Ok(Outcome { artifacts, unconverged })
}

fn run_cost_scan(config: &RunConfig, a: &CostScanArgs, base: &Path) -> Result<Outcome, CliError> {
    let grid: Vec<f64> = a
        .t_grid
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| validation(format!("--t-grid: bad horizon `{s}`"))))
        .collect::<Result<_, _>>()?;
    let first = grid.first().ok_or_else(|| validation("--t-grid is empty"))?;
    let mut args = a.control.clone();
    args.horizon = first.to_string();
    let (problem, shift) = control_problem(config, &args, base)?;
    let scan = control::cost_scan(&problem, &grid, a.control.alpha, a.control.delta_param, LrOptions::default())?;
    let out = resolve(base, &a.control.out);
    let rows = scan
        .points
        .iter()
        .map(|p| {
            vec![
                p.horizon.to_string(),
                short(&p.cost),
                format!("{:e}", p.log_cost),
                short(&p.final_state_norm),
                p.converged.to_string(),
            ]
        })
        .collect();
    let result = json!({
        "modes": problem.truncation,
        "shift": full(&shift),
        "delta_param": a.control.delta_param,
        "tol": a.control.tol,
        "below_envelope": scan.below_envelope(0.0),
        "scan": scan,
    });
    let mut art = Artifacts::new();
    art.json(out.clone(), config, result);
    art.csv(out.with_extension("csv"), &["T", "cost", "log_cost", "final_state_norm", "converged"], rows)?;
    let artifacts = art.commit()?;
    let unconverged = scan.partial.then(|| "at least one horizon did not reach the tolerance".to_string());
    Ok(Outcome { artifacts, unconverged })
}

fn run_bilinear(config: &RunConfig, a: &BilinearArgs, base: &Path) -> Result<Outcome, CliError> {
    let a_len = SideLength::parse(&a.a_len)?;
    let b_len = if a.b_len_cube_root_2 { SideLength::cube_root_of_two() } else { SideLength::parse(&a.b_len)? };
    let q = QSpec::parse(&a.q)?;
    let system = RectangleSystem::new(a_len, b_len, q, a.truncation, config.prec())?;
    let opts = ReachOptions { max_iters: a.max_iters, tol: a.tol, ..ReachOptions::default() };
    let psi0 = bilinear::perturbed_mode(a.truncation, a.mode, a.perturb);
    let result = bilinear::reach_eigensolution(&system, a.mode, &psi0, a.horizon, &opts)?;
    let ratio = match a.ratio_test {
        Some(second) => {
            Some(bilinear::perturbation_ratio_test(&system, a.mode, a.horizon, (a.perturb, second), &opts)?)
        }
        None => None,
    };
    let out = resolve(base, &a.out);
    let rows = result
        .records
        .iter()
        .map(|r| {
            vec![
                r.index.to_string(),
                format!("{:e}", r.t_start),
                format!("{:e}", r.t_end),
                format!("{:e}", r.defect),
                format!("{:e}", r.control_l2),
                r.steps.to_string(),
            ]
        })
        .collect();
    let unconverged = (!result.converged).then(|| {
        if result.diverged {
            "the fixed-point scheme diverged".to_string()
        } else {
            format!("final error {:e} above tolerance {:e}", result.final_error, result.tol)
        }
    });
    let mut art = Artifacts::new();
    art.json(out.clone(), config, json!({ "reach": result, "ratio_test": ratio }));
    art.csv(out.with_extension("csv"), &["iter", "t_start", "t_end", "defect", "control_l2", "steps"], rows)?;
    Ok(Outcome { artifacts: art.commit()?, unconverged })
}

/// A pipeline file: shared settings and the stages to run in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineFile {
    #[serde(default)]
    pub precision_digits: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub stages: Vec<Command>,
}

impl PipelineFile {
    /// Spectra, verification and certification on the perturbed square, then a
    /// moment solve, a null control and a bilinear reach, all at small sizes.
    pub fn default_chain() -> Self {
        let p = PathBuf::from;
        let control = ControlArgs {
            spectrum: p("spectra.csv"),
            modes: Some(12),
            b_profile: expdelta(),
            xi0: mode_one(),
            horizon: half_decimal(),
            alpha: 7.0,
            delta_param: control::DEFAULT_DELTA,
            tol: control::DEFAULT_TOL,
            digits: None,
            shift: auto(),
            out: p("control.json"),
        };
        PipelineFile {
            precision_digits: None,
            seed: None,
            stages: vec![
                Command::Spectra(SpectraArgs {
                    generator: Generator::PerturbedSquare,
                    a_len: one(),
                    b_len: one(),
                    count: 2000,
                    a_exponent: None,
                    input: None,
                    out: p("spectra.csv"),
                }),
                Command::Verify(VerifyArgs {
                    a: half(),
                    b: quarter(),
                    delta: half(),
                    gamma_max: None,
                    input: p("spectra.csv"),
                    out: p("constants.json"),
                }),
                Command::Certify(CertifyArgs {
                    lambda: lambda0(),
                    range: 2000,
                    input: p("spectra.csv"),
                    constants: p("constants.json"),
                    out: p("certificates.json"),
                }),
                Command::Moment(MomentArgs {
                    freqs: p("spectra.csv"),
                    count: Some(6),
                    horizon: half_decimal(),
                    targets: unit_one(),
                    weights: None,
                    digits: None,
                    biorthogonal: false,
                    residual: ResidualKind::Algebraic,
                    nodes: None,
                    out: p("moment.json"),
                }),
                Command::Control(control),
                Command::Bilinear(BilinearArgs {
                    a_len: one(),
                    b_len_cube_root_2: true,
                    b_len: one(),
                    q: x2y2(),
                    mode: 1,
                    perturb: 1e-3,
                    horizon: 0.5,
                    truncation: 8,
                    max_iters: 6,
                    tol: 1e-6,
                    ratio_test: None,
                    out: p("bilinear.json"),
                }),
            ],
        }
    }
}

fn run_pipeline(config: &RunConfig, a: &PipelineArgs, base: &Path) -> Result<Outcome, CliError> {
    let file = match &a.config {
        Some(path) => {
            let path = resolve(base, path);
            let text =
                fs::read_to_string(&path).map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<PipelineFile>(&text).map_err(|e| validation(format!("{}: {e}", path.display())))?
        }
        None => PipelineFile::default_chain(),
    };
    if file.stages.is_empty() {
        return Err(validation("the pipeline has no stages"));
    }
    if file.stages.iter().any(|s| matches!(s, Command::Pipeline(_))) {
        return Err(validation("pipelines cannot nest"));
    }
    let dir = resolve(base, &a.out_dir);
    let stage_configs: Vec<RunConfig> = file
        .stages
        .iter()
        .map(|s| RunConfig {
            pipeline: s.clone(),
            precision_digits: file.precision_digits.unwrap_or(config.precision_digits),
            seed: file.seed.unwrap_or(config.seed),
        })
        .collect();
    for c in &stage_configs {
        c.validate()?;
    }
    let mut artifacts = Vec::new();
    let mut summary = Vec::new();
    let mut unconverged = None;
    for c in &stage_configs {
        let outcome = run(c, &dir)?;
        summary.push(json!({
            "command": c.pipeline.name(),
            "config_sha256": c.hash(),
            "exit_code": outcome.exit_code(),
            "artifacts": outcome.artifacts.iter().map(|p| p.strip_prefix(&dir).unwrap_or(p).to_path_buf()).collect::<Vec<_>>(),
        }));
        if unconverged.is_none() {
            unconverged = outcome.unconverged.map(|m| format!("{}: {m}", c.pipeline.name()));
        }
        artifacts.extend(outcome.artifacts);
    }
    let mut art = Artifacts::new();
    art.json(dir.join("pipeline.json"), config, json!({ "stages": summary, "pipeline": file }));
    artifacts.extend(art.commit()?);
    Ok(Outcome { artifacts, unconverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn config(cmd: Command) -> RunConfig {
        RunConfig { pipeline: cmd, precision_digits: 40, seed: 7 }
    }

    fn spectra_cmd(count: usize) -> Command {
        Command::Spectra(SpectraArgs {
            generator: Generator::PerturbedSquare,
            a_len: one(),
            b_len: one(),
            count,
            a_exponent: None,
            input: None,
            out: "s.csv".into(),
        })
    }

    fn read_json(p: &Path) -> Value {
        serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
    }

    #[test]
    fn spectra_writes_csv_and_sidecar() {
        let dir = TempDir::new().unwrap();
        let out = run(&config(spectra_cmd(10)), dir.path()).unwrap();
        assert_eq!(out.exit_code(), EXIT_OK);
        let csv = fs::read_to_string(dir.path().join("s.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("k,value,l_index,m_index"));
        assert!(lines.next().unwrap().ends_with(",1,1"));
        let side = read_json(&dir.path().join("s.json"));
        assert_eq!(side["result"]["generator_tag"], PerturbedSquare::TAG);
        assert_eq!(side["provenance"]["seed"], 7);
        assert_eq!(side["provenance"]["config"]["pipeline"]["command"], "spectra");
        assert_eq!(side["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
        let back = load_spectrum(&dir.path().join("s.csv"), 160).unwrap();
        assert_eq!(back.values.len(), 10);
        assert!(back.is_perturbed_square());
    }

    #[test]
    fn lattice_spectra_keep_repeats() {
        let dir = TempDir::new().unwrap();
        let cmd = Command::Spectra(SpectraArgs {
            generator: Generator::Laplacian,
            a_len: one(),
            b_len: one(),
            count: 5,
            a_exponent: None,
            input: None,
            out: "lap.csv".into(),
        });
        run(&config(cmd), dir.path()).unwrap();
        let side = read_json(&dir.path().join("lap.json"));
        assert!(side["result"]["repeated_values"].as_u64().unwrap() >= 1);
    }

    #[test]
    fn runs_are_byte_identical() {
        let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        let c = config(spectra_cmd(30));
        run(&c, d1.path()).unwrap();
        run(&c, d2.path()).unwrap();
        for f in ["s.csv", "s.json"] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap());
        }
    }

    #[test]
    fn empty_targets_file_writes_nothing() {
        let dir = TempDir::new().unwrap();
        run(&config(spectra_cmd(5)), dir.path()).unwrap();
        fs::write(dir.path().join("t.csv"), "value\n").unwrap();
        let cmd = Command::Moment(MomentArgs {
            freqs: "s.csv".into(),
            count: Some(3),
            horizon: half_decimal(),
            targets: "t.csv".into(),
            weights: None,
            digits: None,
            biorthogonal: false,
            residual: ResidualKind::Algebraic,
            nodes: None,
            out: "m.json".into(),
        });
        let err = run(&config(cmd), dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_VALIDATION);
        assert!(!dir.path().join("m.json").exists());
        assert!(!dir.path().join("m.json.partial").exists());
    }

    #[test]
    fn missing_input_is_a_validation_error() {
        let dir = TempDir::new().unwrap();
        let cmd = Command::Verify(VerifyArgs {
            a: half(),
            b: quarter(),
            delta: half(),
            gamma_max: None,
            input: "absent.csv".into(),
            out: "c.json".into(),
        });
        let err = run(&config(cmd), dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_VALIDATION);
        let diag: Value = serde_json::from_str(&err.diagnostic()).unwrap();
        assert_eq!(diag["error"], "validation");
    }

    #[test]
    fn nonpositive_tolerance_is_rejected() {
        let cmd = Command::Bilinear(BilinearArgs {
            a_len: one(),
            b_len_cube_root_2: true,
            b_len: one(),
            q: x2y2(),
            mode: 1,
            perturb: 1e-3,
            horizon: 0.5,
            truncation: 4,
            max_iters: 1,
            tol: 0.0,
            ratio_test: None,
            out: "b.json".into(),
        });
        assert_eq!(config(cmd).validate().unwrap_err().exit_code(), EXIT_VALIDATION);
    }

    #[test]
    fn column_reader_accepts_headerless_and_fractions() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("v.csv");
        fs::write(&p, "1.5\n3/2\n").unwrap();
        assert_eq!(read_column(&p).unwrap(), vec!["1.5", "3/2"]);
        fs::write(&p, "k,value\n1,2.5\n2,4\n").unwrap();
        assert_eq!(read_column(&p).unwrap(), vec!["2.5", "4"]);
    }

    #[test]
    fn vector_specs() {
        let base = Path::new(".");
        let u = vector_spec("unit:2", 3, 0, 64, base, "t").unwrap();
        assert_eq!(u.iter().map(|x| x.to_f64()).collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        assert!(vector_spec("mode:4", 3, 0, 64, base, "t").is_err());
        let r1 = vector_spec("random", 4, 11, 64, base, "t").unwrap();
        let r2 = vector_spec("random", 4, 11, 64, base, "t").unwrap();
        assert_eq!(r1, r2);
        assert!(r1.iter().all(|x| x.to_f64().abs() <= 1.0));
    }

    #[test]
    fn lambda_multiples() {
        let l0 = Float::with_val(64, 10);
        assert_eq!(parse_lambda("lambda0", &l0, 64).unwrap(), 10);
        assert_eq!(parse_lambda("2*lambda0", &l0, 64).unwrap(), 20);
        assert_eq!(parse_lambda("4lambda0", &l0, 64).unwrap(), 40);
        assert_eq!(parse_lambda("7.5", &l0, 64).unwrap(), 7.5);
    }

    #[test]
    fn pipeline_config_round_trips() {
        let file = PipelineFile::default_chain();
        let text = serde_json::to_string(&file).unwrap();
        let back: PipelineFile = serde_json::from_str(&text).unwrap();
        assert_eq!(file, back);
        let minimal: PipelineFile = serde_json::from_str(
            r#"{"stages":[{"command":"spectra","generator":"perturbed-square","count":3,"out":"x.csv"}]}"#,
        )
        .unwrap();
        assert_eq!(minimal.stages[0].name(), "spectra");
    }

    #[test]
    fn verify_then_certify_on_a_short_prefix() {
        let dir = TempDir::new().unwrap();
        run(&config(spectra_cmd(300)), dir.path()).unwrap();
        let verify = Command::Verify(VerifyArgs {
            a: half(),
            b: quarter(),
            delta: half(),
            gamma_max: None,
            input: "s.csv".into(),
            out: "c.json".into(),
        });
        run(&config(verify), dir.path()).unwrap();
        let doc = read_json(&dir.path().join("c.json"));
        let c = &doc["result"]["constants"];
        assert_eq!(c["a"], "5.00000000000000000000000000000e-1");
        assert_eq!(doc["result"]["checked_range"]["last_index"], 300);
        let set: ConstantSet = serde_json::from_value(doc["result"]["full_precision"].clone()).unwrap();
        let (fit, _, consts) = set.restore(mp::bits_for_digits(40)).unwrap();
        assert!(fit.c_w1 > 0 && consts.lambda_0 > 0);
    }
}
