//! Command-line front end: JSON run configs, subcommands and result files.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{ComplexMatrix, StateVector, C64};
use crate::master::{compare_ensemble, integrate, DensityMatrix};
use crate::model::LindbladModel;
use crate::phase::{phase_for_jumps, PhaseBreakdown};
use crate::spin::{self, bloch_from_state, build_model, BlochPath, FlipConfig, SpinHalfConfig};
use crate::trajectory::{
    derive_seed, run_ensemble, run_prescribed, run_trajectory, EnsembleOptions, PropagationMode,
    RunSpec, TrajectorySummary,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "JUMPPHASE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Config {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("{count} trajectories have undefined phases (--strict); first: {first}")]
    Strict { count: usize, first: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } | Self::Usage(_) => EXIT_CONFIG,
            Self::Io { .. } => EXIT_FAILURE,
            Self::Numeric(_) | Self::Strict { .. } => EXIT_NUMERIC,
        }
    }
}

fn numeric(e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

type Matrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub omega: Option<f64>,
    pub lambda_dephase: Option<f64>,
    pub alpha_decay: Option<f64>,
    pub flip: Option<FlipConfig>,
    pub dimension: Option<usize>,
    pub hamiltonian: Option<Matrix>,
    pub jump_operators: Option<Vec<Matrix>>,
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateSection {
    pub theta: Option<f64>,
    pub phi: Option<f64>,
    pub amplitudes: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub total_time: Option<f64>,
    pub n_steps: Option<usize>,
    pub mode: Option<PropagationMode>,
    pub seed: Option<u64>,
    pub n_trajectories: Option<usize>,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    pub prescribed_jumps: Option<Vec<(f64, usize)>>,
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub format: OutputFormat,
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub initial_state: Option<InitialStateSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub report: ReportSection,
}

/// Values supplied on the command line that take precedence over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of trajectories.
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Number of time steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Propagation mode.
    #[arg(long, value_parser = ["euler", "exact"])]
    pub mode: Option<String>,
}

/// A validated configuration ready to run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: LindbladModel,
    pub spin: Option<SpinHalfConfig>,
    pub psi0: StateVector,
    pub spec: RunSpec,
    pub seed: u64,
    pub n_trajectories: usize,
    pub snapshot_times: Vec<f64>,
    pub prescribed_jumps: Vec<(f64, usize)>,
    pub output: OutputSection,
    pub report: ReportSection,
}

fn locate(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    for (i, line) in text.lines().enumerate() {
        if let Some(col) = line.find(&needle) {
            return (i + 1, col + 1);
        }
    }
    (1, 1)
}

struct Anchor<'a> {
    path: &'a str,
    text: &'a str,
}

impl Anchor<'_> {
    fn err(&self, key: &str, message: impl Into<String>) -> CliError {
        let (line, column) = locate(self.text, key);
        CliError::Config {
            path: self.path.to_string(),
            line,
            column,
            message: message.into(),
        }
    }
}

pub fn parse_config(path: &str, text: &str) -> Result<RunConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config {
        path: path.to_string(),
        line: e.line().max(1),
        column: e.column().max(1),
        message: strip_location(&e.to_string()),
    })
}

fn strip_location(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

fn to_matrix(m: &Matrix, dim: usize, a: &Anchor<'_>, key: &str) -> Result<ComplexMatrix, CliError> {
    if m.len() != dim || m.iter().any(|r| r.len() != dim) {
        return Err(a.err(
            key,
            format!("expected a {dim}x{dim} matrix of [re, im] pairs"),
        ));
    }
    let rows: Vec<Vec<C64>> = m
        .iter()
        .map(|r| r.iter().map(|[re, im]| C64::new(*re, *im)).collect())
        .collect();
    ComplexMatrix::from_rows(&rows).map_err(|e| a.err(key, e.to_string()))
}

/// Validates a parsed config and applies command-line overrides.
pub fn prepare(
    path: &str,
    text: &str,
    cfg: &RunConfig,
    ov: &Overrides,
) -> Result<Prepared, CliError> {
    let a = Anchor { path, text };
    let m = &cfg.model;
    let explicit = m.dimension.is_some() || m.hamiltonian.is_some() || m.jump_operators.is_some();
    let spin_fields = m.omega.is_some()
        || m.lambda_dephase.is_some()
        || m.alpha_decay.is_some()
        || m.flip.is_some();
    let init = cfg.initial_state.clone().unwrap_or_default();
    let angle_form = init.theta.is_some() || init.phi.is_some();
    if init.amplitudes.is_some() && angle_form {
        return Err(a.err(
            "initial_state",
            "give either {theta, phi} or amplitudes, not both",
        ));
    }

    let (model, spin_cfg, psi0) = match (&m.preset, explicit) {
        (Some(_), true) => {
            return Err(a.err(
                "preset",
                "model has both a preset and an explicit definition",
            ))
        }
        (None, false) => {
            return Err(a.err(
                "model",
                "model needs either a preset or {dimension, hamiltonian, jump_operators}",
            ))
        }
        (Some(name), false) => {
            let mut s = SpinHalfConfig::preset(name).map_err(|e| a.err("preset", e.to_string()))?;
            if let Some(v) = m.omega {
                s.omega = v;
            }
            if let Some(v) = m.lambda_dephase {
                s.lambda_dephase = v;
            }
            if let Some(v) = m.alpha_decay {
                s.alpha_decay = v;
            }
            if m.flip.is_some() {
                s.flip = m.flip;
            }
            if let Some(v) = init.theta {
                s.theta = v;
            }
            if let Some(v) = init.phi {
                s.phi = v;
            }
            let key = if init.theta.is_some() || init.phi.is_some() {
                "initial_state"
            } else {
                "model"
            };
            s.validate().map_err(|e| a.err(key, e.to_string()))?;
            let model = build_model(&s).map_err(|e| a.err("model", e.to_string()))?;
            let psi0 = match &init.amplitudes {
                Some(amps) => amplitudes_state(amps, model.dim(), &a)?,
                None => s.initial_state(),
            };
            (model, Some(s), psi0)
        }
        (None, true) => {
            if spin_fields {
                return Err(a.err("model", "spin-1/2 fields require a preset"));
            }
            let dim = m
                .dimension
                .ok_or_else(|| a.err("model", "explicit model needs `dimension`"))?;
            if dim == 0 {
                return Err(a.err("dimension", "dimension must be ≥ 1"));
            }
            let h = m
                .hamiltonian
                .as_ref()
                .ok_or_else(|| a.err("model", "explicit model needs `hamiltonian`"))?;
            let h = to_matrix(h, dim, &a, "hamiltonian")?;
            let ops = m
                .jump_operators
                .as_deref()
                .unwrap_or(&[])
                .iter()
                .map(|g| to_matrix(g, dim, &a, "jump_operators"))
                .collect::<Result<Vec<_>, _>>()?;
            let mut model =
                LindbladModel::new(h, ops).map_err(|e| a.err("hamiltonian", e.to_string()))?;
            if let Some(labels) = &m.labels {
                model = model
                    .with_labels(labels.clone())
                    .map_err(|e| a.err("labels", e.to_string()))?;
            }
            let psi0 = match (&init.amplitudes, angle_form) {
                (Some(amps), _) => amplitudes_state(amps, dim, &a)?,
                (None, true) if dim == 2 => {
                    let s = SpinHalfConfig {
                        theta: init.theta.unwrap_or(0.0),
                        phi: init.phi.unwrap_or(0.0),
                        ..SpinHalfConfig::default()
                    };
                    s.validate()
                        .map_err(|e| a.err("initial_state", e.to_string()))?;
                    s.initial_state()
                }
                (None, true) => {
                    return Err(a.err("initial_state", "{theta, phi} requires a 2-level model"))
                }
                (None, false) => {
                    return Err(a.err("initial_state", "explicit models need an initial_state"))
                }
            };
            (model, None, psi0)
        }
    };

    let r = &cfg.run;
    let total_time = match (r.total_time, &spin_cfg) {
        (Some(t), _) => t,
        (None, Some(s)) if s.omega != 0.0 => 2.0 * std::f64::consts::PI / s.omega.abs(),
        _ => return Err(a.err("run", "run.total_time is required")),
    };
    if !(total_time > 0.0) || !total_time.is_finite() {
        return Err(a.err(
            "total_time",
            format!("total_time must be positive, got {total_time}"),
        ));
    }
    let n_steps = ov.steps.or(r.n_steps).unwrap_or(spin::DEFAULT_STEPS);
    if n_steps == 0 {
        return Err(a.err("n_steps", "n_steps must be ≥ 1"));
    }
    let mode = match &ov.mode {
        Some(s) => s.parse().map_err(CliError::Usage)?,
        None => r.mode.unwrap_or_default(),
    };
    let n_trajectories = ov.trajectories.or(r.n_trajectories).unwrap_or(1);
    if n_trajectories == 0 {
        return Err(a.err("n_trajectories", "n_trajectories must be ≥ 1"));
    }
    if r.stride == Some(0) {
        return Err(a.err("stride", "stride must be ≥ 1"));
    }
    let mut spec = RunSpec::new(total_time, n_steps, mode);
    spec.stride = r.stride;
    let prescribed_jumps = r.prescribed_jumps.clone().unwrap_or_default();
    crate::trajectory::validate_jumps(&model, total_time, &prescribed_jumps)
        .map_err(|e| a.err("prescribed_jumps", e.to_string()))?;
    if r.snapshot_times
        .iter()
        .any(|t| !(0.0..=total_time).contains(t))
        || r.snapshot_times.windows(2).any(|w| w[1] < w[0])
    {
        return Err(a.err(
            "snapshot_times",
            "snapshot times must be sorted and inside [0, total_time]",
        ));
    }
    if let Err(e) = crate::trajectory::snapshot_steps(&spec, &r.snapshot_times) {
        return Err(a.err("snapshot_times", format!("{e} (dt = {})", spec.dt())));
    }

    Ok(Prepared {
        model,
        spin: spin_cfg,
        psi0,
        spec,
        seed: ov.seed.or(r.seed).unwrap_or(0),
        n_trajectories,
        snapshot_times: r.snapshot_times.clone(),
        prescribed_jumps,
        output: cfg.output.clone(),
        report: cfg.report.clone(),
    })
}

fn amplitudes_state(
    amps: &[[f64; 2]],
    dim: usize,
    a: &Anchor<'_>,
) -> Result<StateVector, CliError> {
    if amps.len() != dim {
        return Err(a.err(
            "amplitudes",
            format!("expected {dim} amplitudes, got {}", amps.len()),
        ));
    }
    let v = amps.iter().map(|[re, im]| C64::new(*re, *im)).collect();
    StateVector::new(v)
        .map(|s| s.normalized())
        .map_err(|e| a.err("amplitudes", e.to_string()))
}

pub fn load(path: &Path, ov: &Overrides) -> Result<Prepared, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let shown = path.display().to_string();
    let cfg = parse_config(&shown, &text)?;
    prepare(&shown, &text, &cfg, ov)
}

/// One result row per trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub trajectory_id: usize,
    pub seed: u64,
    pub jump_times: Vec<f64>,
    pub jump_channels: Vec<usize>,
    pub total_phase: Option<f64>,
    pub dynamical_phase: Option<f64>,
    pub geometric_phase: Option<f64>,
    pub closure_phase: Option<f64>,
    pub final_norm: f64,
    pub status: String,
}

impl TrajectoryRow {
    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn from_summary(s: &TrajectorySummary) -> Self {
        let (phase, status): (Option<&PhaseBreakdown>, String) = match &s.phase {
            Some(Ok(b)) => (Some(b), "ok".into()),
            Some(Err(e)) => (
                None,
                format!("phase_undefined: {e}").replace([',', '\n', '\r'], ";"),
            ),
            None => (None, "ok".into()),
        };
        Self {
            trajectory_id: s.index,
            seed: s.seed,
            jump_times: s.events.iter().map(|e| e.time).collect(),
            jump_channels: s.events.iter().map(|e| e.channel).collect(),
            total_phase: phase.map(|b| b.total_phase),
            dynamical_phase: phase.map(|b| b.dynamical_phase),
            geometric_phase: phase.map(|b| b.geometric_phase),
            closure_phase: phase.map(|b| b.closure_phase),
            final_norm: s.final_norm,
            status,
        }
    }
}

pub const CSV_HEADER: &str = "trajectory_id,seed,n_jumps,jump_times,jump_channels,total_phase,dynamical_phase,geometric_phase,closure_phase,final_norm,status";

/// 17 significant digits; round-trips every finite f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn rows_to_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 200);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let times: Vec<String> = r.jump_times.iter().map(|t| fmt_f64(*t)).collect();
        let channels: Vec<String> = r.jump_channels.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.trajectory_id,
            r.seed,
            r.n_jumps(),
            times.join(";"),
            channels.join(";"),
            fmt_opt(r.total_phase),
            fmt_opt(r.dynamical_phase),
            fmt_opt(r.geometric_phase),
            fmt_opt(r.closure_phase),
            fmt_f64(r.final_norm),
            r.status
        );
    }
    out
}

fn split_list(s: &str) -> Vec<&str> {
    if s.is_empty() {
        Vec::new()
    } else {
        s.split(';').collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CsvError {
    #[error("missing or unexpected header")]
    Header,
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
}

pub fn parse_csv(text: &str) -> Result<Vec<TrajectoryRow>, CsvError> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(CsvError::Header);
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| CsvError::Row {
            line: line_no,
            message,
        };
        let f: Vec<&str> = line.splitn(11, ',').collect();
        if f.len() != 11 {
            return Err(bad(format!("expected 11 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let opt = |s: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let jump_times = split_list(f[3])
            .into_iter()
            .map(num)
            .collect::<Result<Vec<_>, _>>()?;
        let jump_channels = split_list(f[4])
            .into_iter()
            .map(|s| s.parse::<usize>().map_err(|e| bad(format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let row = TrajectoryRow {
            trajectory_id: f[0]
                .parse()
                .map_err(|e| bad(format!("trajectory_id: {e}")))?,
            seed: f[1].parse().map_err(|e| bad(format!("seed: {e}")))?,
            jump_times,
            jump_channels,
            total_phase: opt(f[5])?,
            dynamical_phase: opt(f[6])?,
            geometric_phase: opt(f[7])?,
            closure_phase: opt(f[8])?,
            final_norm: num(f[9])?,
            status: f[10].to_string(),
        };
        let n: usize = f[2].parse().map_err(|e| bad(format!("n_jumps: {e}")))?;
        if n != row.n_jumps() || n != row.jump_channels.len() {
            return Err(bad("n_jumps does not match the jump lists".into()));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub circular_mean: f64,
    pub resultant: f64,
    pub min: f64,
    pub max: f64,
}

impl ColumnSummary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let sum: C64 = values.iter().map(|v| C64::from_polar(1.0, *v)).sum();
        let mean = sum / values.len() as f64;
        Some(Self {
            circular_mean: mean.arg(),
            resultant: mean.norm(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub n_trajectories: usize,
    pub n_ok: usize,
    pub n_flagged: usize,
    pub mean_jumps: f64,
    pub mean_final_norm: f64,
    pub total_phase: Option<ColumnSummary>,
    pub dynamical_phase: Option<ColumnSummary>,
    pub geometric_phase: Option<ColumnSummary>,
    pub closure_phase: Option<ColumnSummary>,
}

pub fn summarize_rows(rows: &[TrajectoryRow]) -> RunSummary {
    let n = rows.len().max(1) as f64;
    let col = |f: fn(&TrajectoryRow) -> Option<f64>| {
        ColumnSummary::of(&rows.iter().filter_map(f).collect::<Vec<_>>())
    };
    RunSummary {
        n_trajectories: rows.len(),
        n_ok: rows.iter().filter(|r| r.is_ok()).count(),
        n_flagged: rows.iter().filter(|r| !r.is_ok()).count(),
        mean_jumps: rows.iter().map(|r| r.n_jumps() as f64).sum::<f64>() / n,
        mean_final_norm: rows.iter().map(|r| r.final_norm).sum::<f64>() / n,
        total_phase: col(|r| r.total_phase),
        dynamical_phase: col(|r| r.dynamical_phase),
        geometric_phase: col(|r| r.geometric_phase),
        closure_phase: col(|r| r.closure_phase),
    }
}

pub fn summary_json(summary: &RunSummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

/// Re-summarizes an emitted trajectory CSV.
pub fn summarize_csv(text: &str) -> Result<String, CsvError> {
    Ok(summary_json(&summarize_rows(&parse_csv(text)?)))
}

#[derive(Debug, Parser)]
#[command(
    name = "jumpphase",
    version,
    about = "Geometric phases of open quantum systems from quantum-jump trajectories"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail with exit code 3 on any undefined phase.
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the trajectory ensemble and write one row per trajectory.
    Simulate(Common),
    /// Export the Bloch path of one trajectory.
    BlochPath {
        #[command(flatten)]
        common: Common,
        /// Trajectory index within the ensemble.
        #[arg(long, default_value_t = 0)]
        trajectory: usize,
    },
    /// Compare the ensemble average with the master-equation solution.
    MasterCompare(Common),
    /// Decay expansion-coefficient diagnostic.
    Report(Common),
    /// Phase breakdown of a single prescribed trajectory.
    Phase(Common),
}

fn out_dir(common: &Common, p: &Prepared) -> Result<PathBuf, CliError> {
    let dir = common
        .out
        .clone()
        .or_else(|| p.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn cmd_simulate(common: &Common) -> Result<(), CliError> {
    let p = load(&common.config, &common.overrides)?;
    let ensemble = run_ensemble(
        &p.model,
        &p.psi0,
        &p.spec,
        p.n_trajectories,
        p.seed,
        &[],
        EnsembleOptions {
            compute_phases: true,
        },
    )
    .map_err(numeric)?;
    let rows: Vec<TrajectoryRow> = ensemble
        .summaries
        .iter()
        .map(TrajectoryRow::from_summary)
        .collect();
    let dir = out_dir(common, &p)?;
    match p.output.format {
        OutputFormat::Csv => write(&dir.join("trajectories.csv"), &rows_to_csv(&rows))?,
        OutputFormat::Json => write(&dir.join("trajectories.json"), &rows_to_json(&rows))?,
    }
    let summary = summarize_rows(&rows);
    let json = summary_json(&summary);
    write(&dir.join("summary.json"), &json)?;
    print!("{json}");
    strict_check(common.strict, &rows)
}

fn rows_to_json(rows: &[TrajectoryRow]) -> String {
    let values: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "trajectory_id": r.trajectory_id,
                "seed": r.seed,
                "n_jumps": r.n_jumps(),
                "jump_times": r.jump_times,
                "jump_channels": r.jump_channels,
                "total_phase": r.total_phase,
                "dynamical_phase": r.dynamical_phase,
                "geometric_phase": r.geometric_phase,
                "closure_phase": r.closure_phase,
                "final_norm": r.final_norm,
                "status": r.status,
            })
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&values).expect("rows serialize");
    s.push('\n');
    s
}

fn strict_check(strict: bool, rows: &[TrajectoryRow]) -> Result<(), CliError> {
    let flagged: Vec<&TrajectoryRow> = rows.iter().filter(|r| !r.is_ok()).collect();
    if let Some(first) = flagged.first() {
        log::warn!(
            "{} trajectories flagged with undefined phases",
            flagged.len()
        );
        if strict {
            return Err(CliError::Strict {
                count: flagged.len(),
                first: format!("trajectory {}: {}", first.trajectory_id, first.status),
            });
        }
    }
    Ok(())
}

fn cmd_bloch_path(common: &Common, trajectory: usize) -> Result<(), CliError> {
    let p = load(&common.config, &common.overrides)?;
    if p.model.dim() != 2 {
        return Err(CliError::Usage(format!(
            "Bloch export requires dimension 2 (model has dimension {})",
            p.model.dim()
        )));
    }
    let record = if p.prescribed_jumps.is_empty() {
        run_trajectory(
            &p.model,
            &p.psi0,
            &p.spec,
            derive_seed(p.seed, trajectory as u64),
        )
    } else {
        run_prescribed(&p.model, &p.psi0, &p.spec, &p.prescribed_jumps)
    }
    .map_err(numeric)?;
    let path = BlochPath::from_record(&record).map_err(numeric)?;
    let mut csv = String::from("t,x,y,z\n");
    for s in path.samples() {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            fmt_f64(s.t),
            fmt_f64(s.x),
            fmt_f64(s.y),
            fmt_f64(s.z)
        );
    }
    let mut events = String::from("time,channel,x_pre,y_pre,z_pre,x_post,y_post,z_post\n");
    for (k, (e, pre)) in record
        .events
        .iter()
        .zip(&record.pre_jump_states)
        .enumerate()
    {
        let post = record
            .samples
            .iter()
            .find(|s| s.segment == k + 1)
            .map(|s| &s.state)
            .expect("post-jump sample stored");
        let b0 = bloch_from_state(pre).map_err(numeric)?;
        let b1 = bloch_from_state(post).map_err(numeric)?;
        let _ = writeln!(
            events,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(e.time),
            e.channel,
            fmt_f64(b0[0]),
            fmt_f64(b0[1]),
            fmt_f64(b0[2]),
            fmt_f64(b1[0]),
            fmt_f64(b1[1]),
            fmt_f64(b1[2])
        );
    }
    let dir = out_dir(common, &p)?;
    write(&dir.join("bloch_path.csv"), &csv)?;
    write(&dir.join("bloch_events.csv"), &events)
}

fn cmd_master_compare(common: &Common) -> Result<(), CliError> {
    let p = load(&common.config, &common.overrides)?;
    if p.snapshot_times.is_empty() {
        return Err(CliError::Usage(
            "master-compare needs non-empty run.snapshot_times".into(),
        ));
    }
    let ensemble = run_ensemble(
        &p.model,
        &p.psi0,
        &p.spec,
        p.n_trajectories,
        p.seed,
        &p.snapshot_times,
        EnsembleOptions::default(),
    )
    .map_err(numeric)?;
    let rho0 = DensityMatrix::from_pure(&p.psi0);
    let master = integrate(
        &p.model,
        &rho0,
        p.spec.total_time,
        p.spec.n_steps,
        &p.snapshot_times,
    )
    .map_err(numeric)?;
    let distances = compare_ensemble(&master, &ensemble).map_err(numeric)?;

    let mut csv = String::from("t,trace_distance\n");
    for (t, d) in &distances {
        let _ = writeln!(csv, "{},{}", fmt_f64(*t), fmt_f64(*d));
    }
    let dim = p.model.dim();
    let mut header = String::from("source,t");
    for i in 0..dim {
        for j in 0..dim {
            let _ = write!(header, ",re_{i}{j},im_{i}{j}");
        }
    }
    let mut snaps = header + "\n";
    for (source, states) in [
        ("master", &master.states),
        ("ensemble", &ensemble.snapshots),
    ] {
        for (t, rho) in p.snapshot_times.iter().zip(states.iter()) {
            let _ = write!(snaps, "{source},{}", fmt_f64(*t));
            for z in rho.matrix().entries() {
                let _ = write!(snaps, ",{},{}", fmt_f64(z.re), fmt_f64(z.im));
            }
            snaps.push('\n');
        }
    }
    let dir = out_dir(common, &p)?;
    write(&dir.join("master_compare.csv"), &csv)?;
    write(&dir.join("master_snapshots.csv"), &snaps)?;
    let max = distances.iter().map(|d| d.1).fold(0.0, f64::max);
    let mean = distances.iter().map(|d| d.1).sum::<f64>() / distances.len() as f64;
    println!("max={},mean={}", fmt_f64(max), fmt_f64(mean));
    Ok(())
}

pub const DEFAULT_REPORT_ALPHAS: [f64; 6] = [0.0025, 0.005, 0.01, 0.02, 0.05, 0.1];

fn cmd_report(common: &Common) -> Result<(), CliError> {
    let p = load(&common.config, &common.overrides)?;
    let s = p
        .spin
        .filter(|s| s.alpha_decay > 0.0 && s.lambda_dephase == 0.0 && s.flip.is_none())
        .ok_or_else(|| {
            CliError::Usage(
                "report needs the decay preset (alpha_decay > 0, no other channels)".into(),
            )
        })?;
    let alphas = p
        .report
        .alphas
        .clone()
        .unwrap_or_else(|| DEFAULT_REPORT_ALPHAS.to_vec());
    let report = spin::decay_expansion_report(s.omega, s.theta, &alphas).map_err(numeric)?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    let dir = out_dir(common, &p)?;
    write(&dir.join("report.json"), &json)?;
    print!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct PhaseJson<'a> {
    total_phase: f64,
    dynamical_phase: f64,
    geometric_phase: f64,
    geometric_phase_wrapped: f64,
    closure_phase: f64,
    closure_overlap: f64,
    method: crate::phase::PhaseMethod,
    jumps: Vec<JumpJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    half_area: Option<&'a spin::AreaDecomposition>,
}

#[derive(Serialize)]
struct JumpJson {
    time: f64,
    channel: usize,
    phase: f64,
}

fn cmd_phase(common: &Common) -> Result<(), CliError> {
    let p = load(&common.config, &common.overrides)?;
    let b = match phase_for_jumps(&p.model, &p.psi0, &p.spec, &p.prescribed_jumps) {
        Ok(b) => b,
        Err(e) if common.strict => return Err(CliError::Numeric(e.to_string())),
        Err(e) => {
            println!(
                "{{\"status\": \"phase_undefined: {}\"}}",
                e.to_string().replace('"', "'")
            );
            return Ok(());
        }
    };
    let areas = if p.model.dim() == 2 {
        run_prescribed(&p.model, &p.psi0, &p.spec, &p.prescribed_jumps)
            .ok()
            .and_then(|r| spin::flip_partial_areas(&r).ok())
    } else {
        None
    };
    let out = PhaseJson {
        total_phase: b.total_phase,
        dynamical_phase: b.dynamical_phase,
        geometric_phase: b.geometric_phase,
        geometric_phase_wrapped: b.geometric_wrapped(),
        closure_phase: b.closure_phase,
        closure_overlap: b.closure_overlap,
        method: b.method,
        jumps: b
            .jump_phases
            .iter()
            .map(|(e, phase)| JumpJson {
                time: e.time,
                channel: e.channel,
                phase: *phase,
            })
            .collect(),
        half_area: areas.as_ref(),
    };
    let mut json = serde_json::to_string_pretty(&out).expect("phase serializes");
    json.push('\n');
    let dir = out_dir(common, &p)?;
    write(&dir.join("phase.json"), &json)?;
    print!("{json}");
    Ok(())
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| {
            CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))
        })?;
        if n == 0 {
            return Err(CliError::Usage(format!("{THREADS_ENV} must be ≥ 1")));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Usage(e.to_string()))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let pool = thread_pool()?;
    pool.install(|| match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::BlochPath { common, trajectory } => cmd_bloch_path(common, *trajectory),
        Command::MasterCompare(c) => cmd_master_compare(c),
        Command::Report(c) => cmd_report(c),
        Command::Phase(c) => cmd_phase(c),
    })
}

/// Parses arguments, runs the command and maps errors to exit codes.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
