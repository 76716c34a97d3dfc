//! Command-line front end.
//!
//! Every subcommand reads an optional JSON config, applies flag overrides,
//! writes `config.resolved.json` into `--out`, and then its outputs next to it.
//! Relative input paths in a config resolve against the config file's
//! directory; paths given as flags resolve against the working directory.
//!
//! Exit codes: 0 success, 2 config or schema error, 3 numeric or window error,
//! 4 verification failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::algebra::ThetaTuple;
use crate::ar1::{noise_from_stationary, verify_ar1, DEFAULT_TOLERANCE};
use crate::error::Error;
use crate::fields::{read_field, write_field, Clock, MultiIndex, Sidecar, Window};
use crate::fou::{FouConfig, FouKind, FouPlan};
use crate::gaussian::{mixed_sheet_cov, HurstSpec, MixingMatrix, SampleBatch, SheetSampler, DEFAULT_GRID_CAP};
use crate::stats::{
    increment_stationarity_check, moments_check, self_similarity_check, stationarity_check, unit_shifts,
    EnsembleReport, DEFAULT_Z_MAX,
};
use crate::transforms::{apply_chain, TransformKind, TransformRecord, TruncationPolicy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "field-correspond", version, about = "Stationary, self-similar and stationary-increment field correspondences")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "FIELD_CORRESPOND_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a batch of mixed fractional Brownian sheets.
    Simulate(SimulateArgs),
    /// Apply a chain of L, Linv, M, Minv to a field file.
    Transform(TransformArgs),
    /// Check the AR(1) residual of a field against a noise field.
    #[command(name = "ar1-verify")]
    Ar1Verify(Ar1Args),
    /// Sample fractional Ornstein-Uhlenbeck fields.
    Fou(FouArgs),
    /// Moment checks on a batch directory.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub theta: Option<PathBuf>,
    /// Comma-separated, e.g. `L,M`.
    #[arg(long, value_delimiter = ',')]
    pub chain: Option<Vec<String>>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub depth: Option<Vec<usize>>,
    /// Output file name inside `--out`.
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Args)]
pub struct Ar1Args {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub x: Option<PathBuf>,
    #[arg(long)]
    pub g: Option<PathBuf>,
    #[arg(long)]
    pub theta: Option<PathBuf>,
    /// Derive G from X instead of reading it.
    #[arg(long)]
    pub extract_noise: bool,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FouArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory with `manifest.json` and `rep_*.csv`.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// stationarity | increment_stationarity | self_similarity | moments
    #[arg(long)]
    pub check: Option<String>,
    #[arg(long)]
    pub z_max: Option<f64>,
    /// Also write `zscores.csv`.
    #[arg(long)]
    pub z_csv: bool,
}

/// A failed run with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: if e.is_config_error() { EXIT_CONFIG } else { EXIT_NUMERIC },
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Errors while loading inputs count as configuration problems.
fn loading<T>(r: crate::error::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::config(e.to_string()))
}

/// Result of a successful run: `verified = false` maps to exit code 4.
#[derive(Debug)]
pub struct Outcome {
    pub verified: bool,
    pub summary: String,
}

/// Either a path to a theta JSON file or the tuple inline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSource {
    Path(PathBuf),
    Inline(ThetaTuple),
}

impl ThetaSource {
    fn load(&self, base: &Path) -> CliResult<(ThetaTuple, String)> {
        match self {
            ThetaSource::Inline(t) => Ok((t.clone(), "inline".to_string())),
            ThetaSource::Path(p) => {
                let path = base.join(p);
                let text = fs::read_to_string(&path).map_err(|e| CliError::config(Error::io(&path, e).to_string()))?;
                let theta = loading(ThetaTuple::from_json_str(&text))?;
                Ok((theta, p.display().to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WindowSpec {
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl WindowSpec {
    fn window(&self) -> CliResult<Window> {
        loading(Window::new(MultiIndex(self.lo.clone()), MultiIndex(self.hi.clone())))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    hurst: Option<Vec<Vec<f64>>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<Vec<f64>>>,
    window: Option<WindowSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clock: Option<Clock>,
    seed: Option<u64>,
    replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid_cap: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformConfig {
    input: Option<PathBuf>,
    theta: Option<ThetaSource>,
    chain: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<TruncationPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Ar1Config {
    x: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    g: Option<PathBuf>,
    theta: Option<ThetaSource>,
    #[serde(default)]
    extract_noise: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FouFileConfig {
    kind: Option<FouKind>,
    hurst: Option<Vec<Vec<f64>>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<ThetaSource>,
    window: Option<WindowSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<TruncationPolicy>,
    seed: Option<u64>,
    replications: Option<usize>,
    /// Also write the driving noise fields under `noise/`.
    #[serde(default)]
    write_noise: bool,
    /// Run the unit-shift stationarity check on the batch.
    #[serde(default)]
    verify: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsConfig {
    batch: Option<PathBuf>,
    check: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shifts: Option<Vec<Vec<i64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<ThetaSource>,
    /// Sites for the `moments` check; defaults to the whole window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sites: Option<Vec<Vec<i64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z_max: Option<f64>,
    #[serde(default)]
    z_csv: bool,
}

/// Batch-level metadata written next to the replication files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    #[serde(rename = "R")]
    pub replications: usize,
    #[serde(rename = "H")]
    pub hurst: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub window: Window,
    pub clock: Clock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<FouKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaTuple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_bound: Option<f64>,
    pub files: Vec<String>,
}

fn rep_name(r: usize) -> String {
    format!("rep_{r:05}.csv")
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<(T, PathBuf)> {
    match path {
        None => Ok((T::default(), PathBuf::from("."))),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(Error::io(p, e).to_string()))?;
            let cfg = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("config {}: {e}", p.display())))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
            Ok((cfg, base))
        }
    }
}

fn require<T>(v: Option<T>, what: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::config(format!("missing required setting `{what}` (config file or flag)")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn prepare_out(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(())
}

/// Flag paths resolve against the working directory, config paths against the config.
fn input_path(flag: Option<&PathBuf>, config: Option<&PathBuf>, base: &Path) -> Option<PathBuf> {
    flag.cloned().or_else(|| config.map(|p| base.join(p)))
}

fn write_batch(
    out: &Path,
    batch: &SampleBatch,
    seed: u64,
    records: &[TransformRecord],
) -> CliResult<Vec<String>> {
    let mut files = Vec::with_capacity(batch.fields.len());
    for (r, field) in batch.fields.iter().enumerate() {
        let name = rep_name(r);
        let mut side = Sidecar::for_field(field, Some(seed));
        side.transforms = records.to_vec();
        write_field(&out.join(&name), field, &side)?;
        files.push(name);
    }
    Ok(files)
}

/// Reads a batch directory written by `simulate` or `fou`.
pub fn read_batch(dir: &Path) -> crate::error::Result<(Manifest, SampleBatch)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut fields = Vec::with_capacity(manifest.files.len());
    for name in &manifest.files {
        fields.push(read_field(&dir.join(name))?.0);
    }
    if fields.is_empty() {
        return Err(Error::InsufficientReplications {
            required: 1,
            actual: 0,
        });
    }
    let batch = SampleBatch::new(manifest.seed, fields)?;
    Ok((manifest, batch))
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<Outcome> {
    let (mut cfg, _) = read_config::<SimulateConfig>(args.common.config.as_deref())?;
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.reps.is_some() {
        cfg.replications = args.reps;
    }
    let hurst = loading(HurstSpec::new(require(cfg.hurst.clone(), "hurst")?))?;
    let a = match &cfg.a {
        Some(rows) => loading(MixingMatrix::from_rows(rows))?,
        None => MixingMatrix::identity(hurst.n()),
    };
    let window = require(cfg.window.clone(), "window")?.window()?;
    let clock = cfg.clock.unwrap_or(Clock::Integer);
    let seed = require(cfg.seed, "seed")?;
    let reps = require(cfg.replications, "replications")?;
    if reps == 0 {
        return Err(CliError::config("replications must be positive"));
    }
    let sampler = SheetSampler::with_cap(
        a.clone(),
        hurst.clone(),
        window.clone(),
        clock,
        cfg.grid_cap.unwrap_or(DEFAULT_GRID_CAP),
    )?;
    if sampler.is_rank_deficient() {
        warn!("covariance is rank deficient (Hurst index 1 or degenerate grid); sampling on its range");
    }
    let out = &args.common.out;
    prepare_out(out)?;
    write_json(&out.join(RESOLVED_CONFIG), &cfg)?;
    let batch = sampler.sample_batch(seed, reps)?;
    let files = write_batch(out, &batch, seed, &[])?;
    let manifest = Manifest {
        seed,
        replications: reps,
        hurst: hurst.rows().to_vec(),
        a: a.to_rows(),
        window,
        clock,
        kind: None,
        theta: None,
        depth: None,
        tail_bound: None,
        files,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(Outcome {
        verified: true,
        summary: format!("wrote {reps} replications to {}", out.display()),
    })
}

fn cmd_transform(args: &TransformArgs) -> CliResult<Outcome> {
    let (mut cfg, base) = read_config::<TransformConfig>(args.common.config.as_deref())?;
    let input = require(input_path(args.input.as_ref(), cfg.input.as_ref(), &base), "input")?;
    if let Some(c) = &args.chain {
        cfg.chain = Some(c.clone());
    }
    if let Some(t) = &args.theta {
        cfg.theta = Some(ThetaSource::Path(t.clone()));
    }
    let mut policy = cfg.policy.clone().unwrap_or_default();
    if let Some(eps) = args.eps {
        policy.eps = eps;
    }
    if args.depth.is_some() {
        policy.depth = args.depth.clone();
    }
    cfg.policy = Some(policy.clone());
    if args.output.is_some() {
        cfg.output = args.output.clone();
    }
    let chain = require(cfg.chain.clone(), "chain")?
        .iter()
        .map(|s| TransformKind::parse(s))
        .collect::<crate::error::Result<Vec<_>>>()
        .map_err(CliError::from)?;
    // flag paths are cwd-relative, so resolve against "." for them
    let theta_base = if args.theta.is_some() { PathBuf::from(".") } else { base.clone() };
    let (theta, theta_ref) = require(cfg.theta.clone(), "theta")?.load(&theta_base)?;
    let (field, mut side) = loading(read_field(&input))?;

    let out = &args.common.out;
    prepare_out(out)?;
    write_json(&out.join(RESOLVED_CONFIG), &cfg)?;
    let (result, records) = apply_chain(&field, &chain, &theta, &policy, Some(&theta_ref))?;
    side.big_n = result.dim();
    side.n = result.n();
    side.lo = result.window().lo.0.clone();
    side.hi = result.window().hi.0.clone();
    side.clock = result.clock();
    side.transforms.extend(records);
    let name = cfg.output.clone().unwrap_or_else(|| "transformed.csv".to_string());
    write_field(&out.join(&name), &result, &side)?;
    Ok(Outcome {
        verified: true,
        summary: format!("wrote {} on {}", out.join(name).display(), result.window()),
    })
}

#[derive(Debug, Serialize)]
struct Ar1Report<'a> {
    max_residual: f64,
    max_abs_residual: f64,
    scale: f64,
    sites: usize,
    tolerance: f64,
    pass: bool,
    offending_sites: &'a [MultiIndex],
    noise: &'static str,
}

fn cmd_ar1_verify(args: &Ar1Args) -> CliResult<Outcome> {
    let (mut cfg, base) = read_config::<Ar1Config>(args.common.config.as_deref())?;
    let x_path = require(input_path(args.x.as_ref(), cfg.x.as_ref(), &base), "x")?;
    let g_path = input_path(args.g.as_ref(), cfg.g.as_ref(), &base);
    if args.extract_noise {
        cfg.extract_noise = true;
    }
    if args.tolerance.is_some() {
        cfg.tolerance = args.tolerance;
    }
    if let Some(t) = &args.theta {
        cfg.theta = Some(ThetaSource::Path(t.clone()));
    }
    let tolerance = cfg.tolerance.unwrap_or(DEFAULT_TOLERANCE);
    let theta_base = if args.theta.is_some() { PathBuf::from(".") } else { base.clone() };
    let (theta, _) = require(cfg.theta.clone(), "theta")?.load(&theta_base)?;
    let (x, x_side) = loading(read_field(&x_path))?;
    let out = &args.common.out;
    prepare_out(out)?;
    write_json(&out.join(RESOLVED_CONFIG), &cfg)?;

    let (g, source) = if cfg.extract_noise {
        let g = noise_from_stationary(&x, &theta)?;
        let mut side = Sidecar::for_field(&g, x_side.seed);
        side.transforms = x_side.transforms.clone();
        for kind in [TransformKind::Lamperti, TransformKind::MForward] {
            side.transforms.push(TransformRecord {
                transform: kind,
                theta_ref: None,
                depth: None,
                tail_bound: None,
                margin: vec![0; g.dim()],
            });
        }
        write_field(&out.join("noise.csv"), &g, &side)?;
        (g, "extracted")
    } else {
        let path = require(g_path, "g (or --extract-noise)")?;
        (loading(read_field(&path))?.0, "file")
    };
    let report = verify_ar1(&x, &g, &theta, tolerance)?;
    write_json(
        &out.join("ar1_report.json"),
        &Ar1Report {
            max_residual: report.max_residual,
            max_abs_residual: report.max_abs_residual,
            scale: report.scale,
            sites: report.sites,
            tolerance: report.tolerance,
            pass: report.pass,
            offending_sites: &report.offending_sites,
            noise: source,
        },
    )?;
    let mut summary = format!(
        "max relative residual {:.3e} over {} sites (tolerance {:.1e})",
        report.max_residual, report.sites, tolerance
    );
    if !report.pass {
        let listed: Vec<String> = report.offending_sites.iter().take(20).map(|s| s.to_string()).collect();
        summary.push_str(&format!("; offending sites: {}", listed.join(" ")));
    }
    Ok(Outcome {
        verified: report.pass,
        summary,
    })
}

fn cmd_fou(args: &FouArgs) -> CliResult<Outcome> {
    let (mut cfg, base) = read_config::<FouFileConfig>(args.common.config.as_deref())?;
    if let Some(k) = &args.kind {
        cfg.kind = Some(loading(FouKind::parse(k))?);
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.reps.is_some() {
        cfg.replications = args.reps;
    }
    let kind = require(cfg.kind, "kind")?;
    let hurst = loading(HurstSpec::new(require(cfg.hurst.clone(), "hurst")?))?;
    let a = match &cfg.a {
        Some(rows) => loading(MixingMatrix::from_rows(rows))?,
        None => MixingMatrix::identity(hurst.n()),
    };
    let theta = match &cfg.theta {
        Some(src) => Some(src.load(&base)?.0),
        None => None,
    };
    let window = require(cfg.window.clone(), "window")?.window()?;
    let seed = require(cfg.seed, "seed")?;
    let reps = require(cfg.replications, "replications")?;
    if reps == 0 {
        return Err(CliError::config("replications must be positive"));
    }
    let policy = cfg.policy.clone().unwrap_or_default();
    let fou_cfg = FouConfig {
        kind,
        hurst: hurst.clone(),
        a: a.clone(),
        theta,
        window: window.clone(),
        policy,
        seed,
        replications: reps,
    };
    let plan = FouPlan::new(&fou_cfg)?;
    let out = &args.common.out;
    prepare_out(out)?;
    write_json(&out.join(RESOLVED_CONFIG), &cfg)?;
    let batch = plan.batch()?;
    let records: Vec<TransformRecord> = match kind {
        FouKind::First => {
            let depth = batch.depth.clone().expect("first kind has a depth");
            vec![
                TransformRecord {
                    transform: TransformKind::MInverse,
                    theta_ref: Some("manifest".into()),
                    margin: depth.iter().map(|d| d + 1).collect(),
                    depth: Some(depth),
                    tail_bound: batch.tail_bound,
                },
                TransformRecord {
                    transform: TransformKind::LampertiInv,
                    theta_ref: Some("manifest".into()),
                    depth: None,
                    tail_bound: None,
                    margin: vec![0; window.dim()],
                },
            ]
        }
        FouKind::Second => vec![TransformRecord {
            transform: TransformKind::LampertiInv,
            theta_ref: Some("manifest".into()),
            depth: None,
            tail_bound: None,
            margin: vec![0; window.dim()],
        }],
    };
    let files = write_batch(out, &batch.x, seed, &records)?;
    if cfg.write_noise {
        let noise_dir = out.join("noise");
        prepare_out(&noise_dir)?;
        let noise_files = write_batch(&noise_dir, &batch.noise, seed, &[])?;
        let noise_manifest = Manifest {
            seed,
            replications: reps,
            hurst: hurst.rows().to_vec(),
            a: a.to_rows(),
            window: plan.noise_window().clone(),
            clock: batch.noise.fields[0].clock(),
            kind: Some(kind),
            theta: None,
            depth: None,
            tail_bound: None,
            files: noise_files,
        };
        write_json(&noise_dir.join(MANIFEST), &noise_manifest)?;
    }
    let manifest = Manifest {
        seed,
        replications: reps,
        hurst: hurst.rows().to_vec(),
        a: a.to_rows(),
        window: window.clone(),
        clock: Clock::Integer,
        kind: Some(kind),
        theta: Some(batch.theta.clone()),
        depth: batch.depth.clone(),
        tail_bound: batch.tail_bound,
        files,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    let mut summary = format!("wrote {reps} {kind:?}-kind replications to {}", out.display());
    let mut verified = true;
    if cfg.verify {
        let report = stationarity_check(&batch.x, &unit_shifts(window.dim()), cfg.z_max.unwrap_or(DEFAULT_Z_MAX))?;
        write_json(&out.join("stationarity.json"), &report)?;
        summary.push_str(&format!(
            "; stationarity max |z| {:.2} (threshold {:.2}) {}",
            report.max_abs_z,
            report.z_threshold,
            if report.pass { "pass" } else { "FAIL" }
        ));
        verified = report.pass;
    }
    Ok(Outcome { verified, summary })
}

fn cmd_stats(args: &StatsArgs) -> CliResult<Outcome> {
    let (mut cfg, base) = read_config::<StatsConfig>(args.common.config.as_deref())?;
    let dir = require(input_path(args.batch.as_ref(), cfg.batch.as_ref(), &base), "batch")?;
    if args.check.is_some() {
        cfg.check = args.check.clone();
    }
    if args.z_max.is_some() {
        cfg.z_max = args.z_max;
    }
    if args.z_csv {
        cfg.z_csv = true;
    }
    let check = require(cfg.check.clone(), "check")?;
    let z_max = cfg.z_max.unwrap_or(DEFAULT_Z_MAX);
    let (manifest, batch) = loading(read_batch(&dir))?;
    let dim = manifest.window.dim();
    let shifts: Vec<MultiIndex> = match &cfg.shifts {
        Some(s) => s.iter().map(|v| MultiIndex(v.clone())).collect(),
        None => unit_shifts(dim),
    };
    let out = &args.common.out;
    prepare_out(out)?;
    write_json(&out.join(RESOLVED_CONFIG), &cfg)?;
    let report: EnsembleReport = match check.as_str() {
        "stationarity" => stationarity_check(&batch, &shifts, z_max)?,
        "increment_stationarity" => increment_stationarity_check(&batch, &shifts, z_max)?,
        "self_similarity" => {
            let theta = match &cfg.theta {
                Some(src) => src.load(&base)?.0,
                None => match &manifest.theta {
                    Some(t) => t.clone(),
                    None => loading(crate::fou::second_kind_theta(&loading(HurstSpec::new(
                        manifest.hurst.clone(),
                    ))?))?,
                },
            };
            self_similarity_check(&batch, &shifts, &theta, z_max)?
        }
        "moments" => {
            let hurst = loading(HurstSpec::new(manifest.hurst.clone()))?;
            let a = loading(MixingMatrix::from_rows(&manifest.a))?;
            if manifest.kind.is_some() {
                return Err(CliError::config(
                    "the moments check compares against the sheet covariance; use it on simulate batches",
                ));
            }
            let sites: Vec<MultiIndex> = match &cfg.sites {
                Some(s) => s.iter().map(|v| MultiIndex(v.clone())).collect(),
                None => manifest.window.sites().collect(),
            };
            let clock = manifest.clock;
            moments_check(
                &batch,
                &sites,
                |t, i, s, j| mixed_sheet_cov(&a, &hurst, clock, t, i, s, j),
                z_max,
            )?
        }
        other => {
            return Err(CliError::config(format!(
                "unknown check {other:?}; expected stationarity, increment_stationarity, self_similarity or moments"
            )))
        }
    };
    write_json(&out.join("report.json"), &report)?;
    if cfg.z_csv {
        report.write_z_csv(&out.join("zscores.csv"))?;
    }
    Ok(Outcome {
        verified: report.pass,
        summary: format!(
            "{}: {} tests, max |z| {:.2} (threshold {:.2}) {}",
            report.statistic,
            report.tests,
            report.max_abs_z,
            report.z_threshold,
            if report.pass { "pass" } else { "FAIL" }
        ),
    })
}

pub fn run(cli: &Cli) -> CliResult<Outcome> {
    let job = || match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Ar1Verify(a) => cmd_ar1_verify(a),
        Command::Fou(a) => cmd_fou(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match cli.threads {
        Some(0) => Err(CliError::config("--threads must be at least 1")),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::config(format!("cannot start {t} threads: {e}")))?;
            pool.install(job)
        }
        None => job(),
    }
}

/// Parses `std::env::args`, runs, reports, and returns the exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            if outcome.verified {
                info!("{}", outcome.summary);
                println!("{}", outcome.summary);
                EXIT_OK
            } else {
                eprintln!("verification failed: {}", outcome.summary);
                EXIT_VERIFY
            }
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
