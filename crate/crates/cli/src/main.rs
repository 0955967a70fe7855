// Copyright 2026 The twinbeam Authors
// SPDX-License-Identifier: Apache-2.0

//! `twinbeam` command-line front end.
//!
//! Exit codes: 0 success, 2 validation error, 3 computation error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use twinbeam::atomic::{self, AtomicConfig, AtomicError, DetuningPoint};
use twinbeam::experiment::{self, ExperimentError, PowerRecord};
use twinbeam::gaussian::GaussianError;
use twinbeam::lumped::{self, LumpedError, OptimizeOptions};
use twinbeam::metrics::MetricsError;
use twinbeam::propagation::{self, Medium, PropagationError, SearchOptions};

#[derive(Parser, Debug)]
#[command(name = "twinbeam", version, about = "Twin-beam noise modelling and analysis")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (default: standard output).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads (default: number of cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    workers: Option<u16>,
    /// Seed for randomized searches.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Best amplifier + loss configuration with unit overall transmission.
    LumpedOptimize {
        #[arg(long, value_parser = positive, allow_negative_numbers = true)]
        grid_step: Option<f64>,
    },
    /// Probe and conjugate gains against the two-photon detuning.
    SweepDelta,
    /// Detuning where G_a + G_b = 1, with the noise figures there.
    BeamSplitter {
        #[arg(long, allow_negative_numbers = true)]
        window_lo_mhz: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        window_hi_mhz: Option<f64>,
    },
    /// Search distributed gain/loss profiles for gemellity below the lumped limit.
    BeatLimit {
        #[arg(long)]
        segments: Option<usize>,
        /// Write the best profile as TOML.
        #[arg(long)]
        save_profile: Option<PathBuf>,
    },
    /// Gemellity from spectrum-analyzer traces.
    Analyze {
        /// Trace CSV (default: `traces` in the [analyze] section).
        traces: Option<PathBuf>,
        #[arg(long)]
        probe_frac: Option<f64>,
        #[arg(long)]
        conj_frac: Option<f64>,
        /// Analysis frequency in Hz (default: minimum of the difference noise in 0.5-5 MHz).
        #[arg(long)]
        freq: Option<f64>,
    },
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number (got {v})"))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    atom: Option<AtomicConfig>,
    sweep: Option<SweepConfig>,
    beam_splitter: Option<WindowConfig>,
    beat_limit: Option<BeatLimitConfig>,
    lumped: Option<LumpedConfigSection>,
    analyze: Option<AnalyzeConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    #[serde(rename = "delta_min_MHz", default = "default_lo")]
    delta_min_mhz: f64,
    #[serde(rename = "delta_max_MHz", default = "default_hi")]
    delta_max_mhz: f64,
    #[serde(default = "default_points")]
    points: usize,
    #[serde(default = "default_atomic_slabs")]
    slabs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { delta_min_mhz: default_lo(), delta_max_mhz: default_hi(), points: default_points(), slabs: default_atomic_slabs() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowConfig {
    #[serde(rename = "window_lo_MHz", default = "default_lo")]
    window_lo_mhz: f64,
    #[serde(rename = "window_hi_MHz", default = "default_hi")]
    window_hi_mhz: f64,
    #[serde(default = "default_atomic_slabs")]
    slabs: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window_lo_mhz: default_lo(), window_hi_mhz: default_hi(), slabs: default_atomic_slabs() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeatLimitConfig {
    #[serde(default = "default_segments")]
    segments: usize,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "default_max_rate")]
    max_rate: f64,
    #[serde(default = "default_restarts")]
    restarts: usize,
    #[serde(default = "default_search_slabs")]
    slabs: usize,
}

impl Default for BeatLimitConfig {
    fn default() -> Self {
        let d = SearchOptions::default();
        Self { segments: d.segments, epsilon: d.epsilon, max_rate: d.max_rate, restarts: d.restarts, slabs: d.slabs_per_unit }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LumpedConfigSection {
    #[serde(default = "default_grid_step")]
    grid_step: f64,
    #[serde(default = "default_refine_tol")]
    refine_tol: f64,
    #[serde(default = "default_max_gain")]
    max_gain: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeConfig {
    traces: Option<PathBuf>,
    probe_frac: Option<f64>,
    conj_frac: Option<f64>,
    freq_hz: Option<f64>,
}

fn default_lo() -> f64 {
    -100.0
}
fn default_hi() -> f64 {
    50.0
}
fn default_points() -> usize {
    151
}
fn default_atomic_slabs() -> usize {
    atomic::DEFAULT_SLABS
}
fn default_segments() -> usize {
    SearchOptions::default().segments
}
fn default_epsilon() -> f64 {
    SearchOptions::default().epsilon
}
fn default_max_rate() -> f64 {
    SearchOptions::default().max_rate
}
fn default_restarts() -> usize {
    SearchOptions::default().restarts
}
fn default_search_slabs() -> usize {
    SearchOptions::default().slabs_per_unit
}
fn default_grid_step() -> f64 {
    OptimizeOptions::default().grid_step
}
fn default_refine_tol() -> f64 {
    OptimizeOptions::default().refine_tol
}
fn default_max_gain() -> f64 {
    OptimizeOptions::default().max_gain
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Computation(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Computation(_) => 3,
        }
    }
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl From<GaussianError> for CliError {
    fn from(e: GaussianError) -> Self {
        match e {
            GaussianError::GainBelowUnity(_) | GaussianError::TransmissionOutOfRange(_) => validation(e.to_string()),
            _ => CliError::Computation(e.to_string()),
        }
    }
}

impl From<LumpedError> for CliError {
    fn from(e: LumpedError) -> Self {
        match e {
            LumpedError::Gaussian(g) => g.into(),
            LumpedError::InvalidStep(_) => validation(e.to_string()),
            _ => CliError::Computation(e.to_string()),
        }
    }
}

impl From<PropagationError> for CliError {
    fn from(e: PropagationError) -> Self {
        match e {
            PropagationError::InvalidProfile(_)
            | PropagationError::InvalidSearch(_)
            | PropagationError::InvalidTolerance(_)
            | PropagationError::Io(_)
            | PropagationError::Parse(_) => validation(e.to_string()),
            _ => CliError::Computation(e.to_string()),
        }
    }
}

impl From<AtomicError> for CliError {
    fn from(e: AtomicError) -> Self {
        match e {
            AtomicError::InvalidParams(_)
            | AtomicError::TemperatureOutOfRange(_)
            | AtomicError::Io(_)
            | AtomicError::Parse(_) => validation(e.to_string()),
            _ => CliError::Computation(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Metrics(MetricsError::Unphysical(_)) => CliError::Computation(e.to_string()),
            _ => validation(e.to_string()),
        }
    }
}

struct Loaded {
    config: RunConfig,
    dir: PathBuf,
    sha256: Option<String>,
}

fn load_config(path: Option<&Path>) -> Result<Loaded, CliError> {
    let Some(path) = path else {
        return Ok(Loaded { config: RunConfig::default(), dir: PathBuf::from("."), sha256: None });
    };
    let bytes = fs::read(path).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(Loaded {
        config,
        dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        sha256: Some(digest.iter().map(|b| format!("{b:02x}")).collect()),
    })
}

fn atom(cfg: &RunConfig) -> Result<atomic::AtomicParams, CliError> {
    let a = cfg.atom.ok_or_else(|| validation("config needs an [atom] section"))?;
    Ok(a.to_params()?)
}

/// A rendered result: CSV text and the JSON payload mirroring it.
struct Output {
    csv: String,
    json: Value,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn lumped_optimize(cfg: &RunConfig, grid_step: Option<f64>) -> Result<Output, CliError> {
    let mut opts = OptimizeOptions::default();
    if let Some(l) = &cfg.lumped {
        opts = OptimizeOptions { grid_step: l.grid_step, refine_tol: l.refine_tol, max_gain: l.max_gain };
    }
    if let Some(s) = grid_step {
        opts.grid_step = s;
        opts.refine_tol = opts.refine_tol.min(s);
    }
    let o = lumped::optimize_unit_transmission(&opts)?;
    let c = o.config;
    let csv = format!(
        "G,T_a,T_b,gemellity,gemellity_dB,interior_in_gain,boundary_T_b,evaluations\n{:.6},{:.6},{:.6},{:.9},{:.6},{},{},{}\n",
        c.gain, c.t_a, c.t_b, o.gemellity, o.gemellity_db, o.interior_in_gain, o.boundary_t_b, o.evaluations
    );
    let json = json!({
        "G": c.gain, "T_a": c.t_a, "T_b": c.t_b,
        "gemellity": o.gemellity, "gemellity_dB": o.gemellity_db,
        "interior_in_gain": o.interior_in_gain, "boundary_T_b": o.boundary_t_b,
        "evaluations": o.evaluations, "options": opts,
    });
    Ok(Output { csv, json })
}

fn point_json(p: &DetuningPoint) -> Value {
    json!({
        "delta_MHz": atomic::angular_to_mhz(p.delta),
        "G_a": p.g_a, "G_b": p.g_b, "sum": p.g_a + p.g_b,
        "gemellity_dB": p.gemellity_db(),
    })
}

fn sweep_delta(cfg: &RunConfig) -> Result<Output, CliError> {
    let p = atom(cfg)?;
    let default = SweepConfig::default();
    let s = cfg.sweep.as_ref().unwrap_or(&default);
    if !(s.delta_min_mhz < s.delta_max_mhz) || s.points < 2 || s.slabs == 0 {
        return Err(validation("[sweep] needs delta_min_MHz < delta_max_MHz, points >= 2 and slabs >= 1"));
    }
    let grid = atomic::detuning_grid(atomic::mhz_to_angular(s.delta_min_mhz), atomic::mhz_to_angular(s.delta_max_mhz), s.points);
    let curve = atomic::gain_curves(&p, &grid, s.slabs)?;
    Ok(Output {
        csv: curve.to_csv()?,
        json: json!({ "atom": p, "points": curve.points.iter().map(point_json).collect::<Vec<_>>() }),
    })
}

fn beam_splitter(cfg: &RunConfig, lo: Option<f64>, hi: Option<f64>) -> Result<Output, CliError> {
    let p = atom(cfg)?;
    let default = WindowConfig::default();
    let w = cfg.beam_splitter.as_ref().unwrap_or(&default);
    let (lo, hi) = (lo.unwrap_or(w.window_lo_mhz), hi.unwrap_or(w.window_hi_mhz));
    if !(lo < hi) || w.slabs == 0 {
        return Err(validation("beam-splitter window needs lo < hi and slabs >= 1"));
    }
    let bs = atomic::find_beam_splitter_point(&p, atomic::mhz_to_angular(lo), atomic::mhz_to_angular(hi), w.slabs)?;
    let nf = bs.noise.ok_or_else(|| CliError::Computation("noise figures undefined at the crossing".into()))?;
    let csv = format!(
        "delta_MHz,G_a,G_b,sum,F_a,F_b,C_ab,gemellity,gemellity_dB\n{:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{}\n",
        atomic::angular_to_mhz(bs.delta),
        bs.g_a,
        bs.g_b,
        bs.g_a + bs.g_b,
        nf.f_a,
        nf.f_b,
        nf.c_ab,
        bs.gemellity.unwrap_or(f64::NAN),
        fmt_opt(bs.gemellity_db()),
    );
    let mut json = point_json(&bs);
    json["F_a"] = json!(nf.f_a);
    json["F_b"] = json!(nf.f_b);
    json["C_ab"] = json!(nf.c_ab);
    json["gemellity"] = json!(bs.gemellity);
    json["window_MHz"] = json!([lo, hi]);
    Ok(Output { csv, json })
}

fn beat_limit(cfg: &RunConfig, segments: Option<usize>, seed: u64, save: Option<&Path>) -> Result<Output, CliError> {
    let default = BeatLimitConfig::default();
    let b = cfg.beat_limit.as_ref().unwrap_or(&default);
    let opts = SearchOptions {
        segments: segments.unwrap_or(b.segments),
        epsilon: b.epsilon,
        max_rate: b.max_rate,
        restarts: b.restarts,
        seed,
        slabs_per_unit: b.slabs,
    };
    let out = propagation::search_beyond_lumped_limit(&opts)?;
    if let Some(path) = save {
        out.profile.save(path)?;
    }
    let csv = propagation::results_csv(&[("best".into(), out.result.clone())])?;
    let segments: Vec<Value> = out
        .profile
        .segments()
        .iter()
        .map(|s| match &s.medium {
            Medium::Rates(r) => json!({ "dz": s.dz, "g": r.g, "alpha_a": r.alpha_a, "alpha_b": r.alpha_b }),
            Medium::Drift(_) => json!({ "dz": s.dz }),
        })
        .collect();
    let r = &out.result;
    let json = json!({
        "profile_id": "best",
        "G_a": r.g_a, "G_b": r.g_b,
        "gemellity_dB": r.gemellity_db(), "diff_noise_dB": r.diff_noise_db(),
        "feasible": out.feasible, "beats_limit": out.beats_limit,
        "evaluations": out.evaluations, "segments": segments, "options": opts,
    });
    Ok(Output { csv, json })
}

fn analyze(
    loaded: &Loaded,
    traces: Option<PathBuf>,
    probe_frac: Option<f64>,
    conj_frac: Option<f64>,
    freq: Option<f64>,
) -> Result<Output, CliError> {
    let a = loaded.config.analyze.as_ref();
    let path = traces
        .or_else(|| a.and_then(|a| a.traces.as_ref()).map(|t| loaded.dir.join(t)))
        .ok_or_else(|| validation("no trace file given (argument or [analyze].traces)"))?;
    let probe = probe_frac.or_else(|| a.and_then(|a| a.probe_frac));
    let conj = conj_frac.or_else(|| a.and_then(|a| a.conj_frac));
    let (Some(probe), Some(conj)) = (probe, conj) else {
        return Err(validation("power fractions needed (--probe-frac/--conj-frac or [analyze])"));
    };
    let freq = freq.or_else(|| a.and_then(|a| a.freq_hz));
    let set = experiment::load_traces(&path)?;
    let report = experiment::analyze(&set, PowerRecord::new(probe, conj)?, freq)?;
    let s = &report.summary;
    let csv = format!(
        "analysis_freq_Hz,diff_dB,F_a_dB,F_b_dB,C_ab,gemellity_dB\n{:.1},{:.6},{:.6},{:.6},{:.9},{:.6}\n",
        s.analysis_freq_hz, s.diff_db, s.f_a_db, s.f_b_db, s.c_ab, s.gemellity_db
    );
    let json = serde_json::to_value(&report).map_err(|e| CliError::Computation(e.to_string()))?;
    Ok(Output { csv, json })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let loaded = load_config(cli.config.as_deref())?;
    // Only the search consumes randomness; other commands record no seed.
    let seed = match (&cli.command, cli.seed) {
        (_, Some(s)) => Some(s),
        (Command::BeatLimit { .. }, None) => {
            let s = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
            eprintln!("warning: no --seed given; using {s}, results will not be reproducible");
            Some(s)
        }
        _ => None,
    };
    let (name, output) = match cli.command {
        Command::LumpedOptimize { grid_step } => ("lumped-optimize", lumped_optimize(&loaded.config, grid_step)?),
        Command::SweepDelta => ("sweep-delta", sweep_delta(&loaded.config)?),
        Command::BeamSplitter { window_lo_mhz, window_hi_mhz } => {
            ("beam-splitter", beam_splitter(&loaded.config, window_lo_mhz, window_hi_mhz)?)
        }
        Command::BeatLimit { segments, save_profile } => {
            ("beat-limit", beat_limit(&loaded.config, segments, seed.unwrap_or_default(), save_profile.as_deref())?)
        }
        Command::Analyze { traces, probe_frac, conj_frac, freq } => {
            ("analyze", analyze(&loaded, traces, probe_frac, conj_frac, freq)?)
        }
    };
    let text = match cli.format {
        Format::Csv => output.csv,
        Format::Json => {
            let doc = json!({
                "metadata": {
                    "command": name,
                    "version": env!("CARGO_PKG_VERSION"),
                    "config_sha256": loaded.sha256,
                    "seed": seed,
                },
                "result": output.json,
            });
            serde_json::to_string_pretty(&doc).map_err(|e| CliError::Computation(e.to_string()))? + "\n"
        }
    };
    match &cli.out {
        Some(path) => fs::write(path, text).map_err(|e| validation(format!("{}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Computation(e.to_string())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.into()).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(CliError::Computation(e.to_string())),
        },
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Validation(msg) | CliError::Computation(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}
