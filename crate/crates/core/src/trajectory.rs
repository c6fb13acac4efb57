//! Quantum-jump trajectories.
//!
//! A trajectory is a chain of pure states produced by repeated no-jump
//! evolution under H̃ punctuated by instantaneous jumps Γ_k. Stochastic
//! trajectories sample the channel at every step from the first-order jump
//! probabilities; prescribed trajectories place jumps at given times, which
//! is how fixed-jump phase calculations are reproduced.
//!
//! States are kept normalized. The squared norm of the unnormalized chain is
//! tracked as a log-norm relative to the start of the current no-jump
//! segment, so long stretches of decay never underflow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{mat_exp, ComplexMatrix, LinalgError, StateVector, C64, I};
use crate::master::DensityMatrix;
use crate::model::{
    effective_hamiltonian, jump_probabilities, step_operators, LindbladModel, ModelError,
};
use crate::phase::{self, PhaseBreakdown, PhaseError};

/// Squared norm below which a post-jump state counts as annihilated.
pub const NORM_COLLAPSE: f64 = 1e-14;

/// Largest step count stored at full resolution by default.
pub const FULL_RESOLUTION_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    /// Products of W₀ = 1 − iH̃dt.
    Euler,
    /// exp(−iH̃τ) between jumps.
    #[default]
    #[serde(alias = "exact-segment")]
    Exact,
}

impl std::str::FromStr for PropagationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(Self::Euler),
            "exact" | "exact-segment" => Ok(Self::Exact),
            other => Err(format!("unknown mode `{other}` (expected euler|exact)")),
        }
    }
}

impl std::fmt::Display for PropagationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Euler => "euler",
            Self::Exact => "exact",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(
        "state annihilated by channel {channel} at step {step} (t = {time}, ‖Γψ‖² = {norm_sqr:e})"
    )]
    NormCollapse {
        step: usize,
        time: f64,
        channel: usize,
        norm_sqr: f64,
    },
    #[error("initial state is not normalized (‖ψ‖² = {0})")]
    NotNormalized(f64),
    #[error("invalid run parameters: {0}")]
    InvalidSpec(String),
    #[error("invalid prescribed jumps: {0}")]
    InvalidJumps(String),
    #[error("snapshot time {0} is not on the step grid")]
    SnapshotOffGrid(f64),
    #[error("trajectory {index}: {source}")]
    InTrajectory {
        index: usize,
        #[source]
        source: Box<TrajectoryError>,
    },
}

/// Time grid and propagation settings shared by all trajectory kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub total_time: f64,
    pub n_steps: usize,
    pub mode: PropagationMode,
    /// Store every `stride`-th state; `None` picks a default from `n_steps`.
    pub stride: Option<usize>,
}

impl RunSpec {
    pub fn new(total_time: f64, n_steps: usize, mode: PropagationMode) -> Self {
        Self {
            total_time,
            n_steps,
            mode,
            stride: None,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = Some(stride);
        self
    }

    pub fn dt(&self) -> f64 {
        self.total_time / self.n_steps as f64
    }

    pub fn effective_stride(&self) -> usize {
        self.stride
            .unwrap_or_else(|| self.n_steps.div_ceil(FULL_RESOLUTION_LIMIT))
            .max(1)
    }

    fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.total_time > 0.0) || !self.total_time.is_finite() {
            return Err(TrajectoryError::InvalidSpec(format!(
                "total_time must be positive, got {}",
                self.total_time
            )));
        }
        if self.n_steps == 0 {
            return Err(TrajectoryError::InvalidSpec("n_steps must be ≥ 1".into()));
        }
        if self.stride == Some(0) {
            return Err(TrajectoryError::InvalidSpec("stride must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// A recorded jump. Channel indices are 1-based; 0 means "no jump" and is
/// never recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub step_index: usize,
    pub time: f64,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    pub step: usize,
    pub time: f64,
    /// Normalized state.
    pub state: StateVector,
    /// ln of the squared norm of the unnormalized chain since the last jump.
    pub log_norm: f64,
    /// Number of jumps before this sample.
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub dt: f64,
    pub total_time: f64,
    pub n_steps: usize,
    pub mode: PropagationMode,
    pub initial_state: StateVector,
    pub samples: Vec<StateSample>,
    pub events: Vec<JumpEvent>,
    /// Normalized state immediately before each event, parallel to `events`.
    pub pre_jump_states: Vec<StateVector>,
    /// States at the requested snapshot steps (ensemble runs only).
    pub snapshots: Vec<StateVector>,
}

impl TrajectoryRecord {
    pub fn n_jumps(&self) -> usize {
        self.events.len()
    }

    pub fn final_state(&self) -> &StateVector {
        &self
            .samples
            .last()
            .expect("records hold at least one sample")
            .state
    }

    /// Squared norm of the unnormalized state at the end of the run,
    /// relative to the start of the last no-jump segment.
    pub fn final_norm(&self) -> f64 {
        self.samples.last().map(|s| s.log_norm.exp()).unwrap_or(1.0)
    }

    pub fn norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.log_norm.exp())
    }

    /// Jump times and channels, the input expected by prescribed runs.
    pub fn jump_list(&self) -> Vec<(f64, usize)> {
        self.events.iter().map(|e| (e.time, e.channel)).collect()
    }

    pub fn spec(&self) -> RunSpec {
        RunSpec::new(self.total_time, self.n_steps, self.mode)
    }
}

/// No-jump propagation over [t0, t1]: exp(−iH̃(t1−t0))ψ in exact mode, or
/// (1 − iH̃h)^m with m = `euler_steps` in Euler mode. Never renormalizes.
pub fn no_jump_propagate(
    model: &LindbladModel,
    psi: &StateVector,
    t0: f64,
    t1: f64,
    mode: PropagationMode,
    euler_steps: usize,
) -> Result<StateVector, TrajectoryError> {
    if t1 < t0 {
        return Err(TrajectoryError::InvalidSpec(format!(
            "propagation interval reversed: [{t0}, {t1}]"
        )));
    }
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(psi.clone());
    }
    let h_eff = effective_hamiltonian(model);
    match mode {
        PropagationMode::Exact => Ok(mat_exp(&h_eff, -I * span)?.apply(psi)?),
        PropagationMode::Euler => {
            let m = euler_steps.max(1);
            let w0 = euler_factor(&h_eff, span / m as f64);
            let mut out = psi.clone();
            for _ in 0..m {
                out = w0.apply(&out)?;
            }
            Ok(out)
        }
    }
}

fn euler_factor(h_eff: &ComplexMatrix, h: f64) -> ComplexMatrix {
    &ComplexMatrix::identity(h_eff.rows()) - &h_eff.scale(I * h)
}

fn step_propagator(
    h_eff: &ComplexMatrix,
    h: f64,
    mode: PropagationMode,
) -> Result<ComplexMatrix, LinalgError> {
    match mode {
        PropagationMode::Exact => mat_exp(h_eff, -I * h),
        PropagationMode::Euler => Ok(euler_factor(h_eff, h)),
    }
}

fn check_initial(model: &LindbladModel, psi0: &StateVector) -> Result<(), TrajectoryError> {
    if psi0.dim() != model.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: model.dim(),
            found: psi0.dim(),
        }
        .into());
    }
    if !psi0.is_normalized(1e-9) {
        return Err(TrajectoryError::NotNormalized(psi0.norm_sqr()));
    }
    Ok(())
}

fn apply_jump(
    model: &LindbladModel,
    channel: usize,
    pre: &StateVector,
    step: usize,
    time: f64,
) -> Result<StateVector, TrajectoryError> {
    let op = model.channel(channel).ok_or_else(|| {
        TrajectoryError::InvalidJumps(format!(
            "channel {channel} out of range 1..={}",
            model.n_channels()
        ))
    })?;
    let jumped = op.apply(pre)?;
    let norm_sqr = jumped.norm_sqr();
    if norm_sqr < NORM_COLLAPSE {
        return Err(TrajectoryError::NormCollapse {
            step,
            time,
            channel,
            norm_sqr,
        });
    }
    Ok(jumped.scale(C64::new(1.0 / norm_sqr.sqrt(), 0.0)))
}

/// Index of the first cumulative bin exceeding `u`.
fn select_channel(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trajectory `index` in an ensemble; a pure function of both inputs.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    mix64(base_seed ^ mix64(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

/// Stochastic trajectory with jumps sampled at every step.
pub fn run_trajectory(
    model: &LindbladModel,
    psi0: &StateVector,
    spec: &RunSpec,
    seed: u64,
) -> Result<TrajectoryRecord, TrajectoryError> {
    run_trajectory_with_snapshots(model, psi0, spec, seed, &[])
}

/// As [`run_trajectory`], additionally capturing the state at the given step
/// indices (which must be sorted).
pub fn run_trajectory_with_snapshots(
    model: &LindbladModel,
    psi0: &StateVector,
    spec: &RunSpec,
    seed: u64,
    snapshot_steps: &[usize],
) -> Result<TrajectoryRecord, TrajectoryError> {
    spec.validate()?;
    check_initial(model, psi0)?;
    let dt = spec.dt();
    let stride = spec.effective_stride();
    let ops = step_operators(model, dt)?;
    let propagator = step_propagator(ops.h_eff(), dt, spec.mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut psi = psi0.clone();
    let mut log_norm = 0.0;
    let mut samples = vec![StateSample {
        step: 0,
        time: 0.0,
        state: psi.clone(),
        log_norm,
        segment: 0,
    }];
    let mut events = Vec::new();
    let mut pre_jump_states = Vec::new();
    let mut snapshots = Vec::with_capacity(snapshot_steps.len());
    let mut next_snapshot = snapshot_steps.iter().peekable();
    while next_snapshot.peek() == Some(&&0) {
        snapshots.push(psi.clone());
        next_snapshot.next();
    }

    for m in 0..spec.n_steps {
        let probs = jump_probabilities(&ops, &psi)?;
        let u: f64 = rng.gen();
        let channel = select_channel(&probs.probs, u);
        let step = m + 1;
        let time = step as f64 * dt;
        let evolved = propagator.apply(&psi)?;
        if channel == 0 {
            let n2 = evolved.norm_sqr();
            log_norm += n2.ln();
            psi = evolved.scale(C64::new(1.0 / n2.sqrt(), 0.0));
        } else {
            let pre = evolved.normalized();
            psi = apply_jump(model, channel, &pre, step, time)?;
            log_norm = 0.0;
            events.push(JumpEvent {
                step_index: step,
                time,
                channel,
            });
            pre_jump_states.push(pre);
        }
        if step % stride == 0 || channel != 0 || step == spec.n_steps {
            samples.push(StateSample {
                step,
                time,
                state: psi.clone(),
                log_norm,
                segment: events.len(),
            });
        }
        while next_snapshot.peek() == Some(&&step) {
            snapshots.push(psi.clone());
            next_snapshot.next();
        }
    }

    Ok(TrajectoryRecord {
        seed,
        dt,
        total_time: spec.total_time,
        n_steps: spec.n_steps,
        mode: spec.mode,
        initial_state: psi0.clone(),
        samples,
        events,
        pre_jump_states,
        snapshots,
    })
}

/// One no-jump stretch of a trajectory at full node resolution.
#[derive(Debug, Clone)]
pub(crate) struct Segment {
    /// (time, normalized state, log-norm) at every node, endpoints included.
    pub nodes: Vec<(f64, StateVector, f64)>,
}

/// A trajectory rebuilt segment by segment from its jump list.
#[derive(Debug, Clone)]
pub(crate) struct SegmentChain {
    pub segments: Vec<Segment>,
    /// (event, pre-jump state) at each segment boundary.
    pub jumps: Vec<(JumpEvent, StateVector)>,
}

pub(crate) fn validate_jumps(
    model: &LindbladModel,
    total_time: f64,
    jumps: &[(f64, usize)],
) -> Result<(), TrajectoryError> {
    let mut last = f64::NEG_INFINITY;
    for &(t, channel) in jumps {
        if !(0.0..=total_time).contains(&t) {
            return Err(TrajectoryError::InvalidJumps(format!(
                "time {t} outside [0, {total_time}]"
            )));
        }
        if t <= last {
            return Err(TrajectoryError::InvalidJumps(
                "times must be strictly increasing".into(),
            ));
        }
        if channel == 0 || channel > model.n_channels() {
            return Err(TrajectoryError::InvalidJumps(format!(
                "channel {channel} out of range 1..={}",
                model.n_channels()
            )));
        }
        last = t;
    }
    Ok(())
}

/// Number of propagation intervals for a segment of length `span`.
/// Exact mode rounds up to an even count (Simpson nodes); Euler mode keeps
/// the step as close to `dt` as possible.
pub(crate) fn segment_intervals(span: f64, dt: f64, mode: PropagationMode) -> usize {
    if span <= 0.0 {
        return 0;
    }
    let ratio = span / dt;
    match mode {
        PropagationMode::Exact => {
            let n = ((ratio - 1e-9).ceil() as usize).max(2);
            n + n % 2
        }
        PropagationMode::Euler => (ratio.round() as usize).max(1),
    }
}

/// Rebuilds the full-resolution chain for a given jump list.
pub(crate) fn segment_chain(
    model: &LindbladModel,
    psi0: &StateVector,
    spec: &RunSpec,
    jumps: &[(f64, usize)],
) -> Result<SegmentChain, TrajectoryError> {
    spec.validate()?;
    check_initial(model, psi0)?;
    validate_jumps(model, spec.total_time, jumps)?;
    let dt = spec.dt();
    let h_eff = effective_hamiltonian(model);

    let mut boundaries: Vec<f64> = Vec::with_capacity(jumps.len() + 2);
    boundaries.push(0.0);
    boundaries.extend(jumps.iter().map(|j| j.0));
    boundaries.push(spec.total_time);

    let mut segments = Vec::with_capacity(jumps.len() + 1);
    let mut jump_out = Vec::with_capacity(jumps.len());
    let mut start = psi0.clone();
    for (k, window) in boundaries.windows(2).enumerate() {
        let (a, b) = (window[0], window[1]);
        let n = segment_intervals(b - a, dt, spec.mode);
        let mut nodes = Vec::with_capacity(n + 1);
        nodes.push((a, start.clone(), 0.0));
        if n > 0 {
            let h = (b - a) / n as f64;
            let prop = step_propagator(&h_eff, h, spec.mode)?;
            let mut psi = start.clone();
            let mut log_norm = 0.0;
            for i in 1..=n {
                let evolved = prop.apply(&psi)?;
                let n2 = evolved.norm_sqr();
                log_norm += n2.ln();
                psi = evolved.scale(C64::new(1.0 / n2.sqrt(), 0.0));
                let t = if i == n { b } else { a + i as f64 * h };
                nodes.push((t, psi.clone(), log_norm));
            }
        }
        let pre = nodes.last().expect("segment has a start node").1.clone();
        segments.push(Segment { nodes });
        if let Some(&(time, channel)) = jumps.get(k) {
            let step_index = (time / dt).round() as usize;
            start = apply_jump(model, channel, &pre, step_index, time)?;
            jump_out.push((
                JumpEvent {
                    step_index,
                    time,
                    channel,
                },
                pre,
            ));
        }
    }
    Ok(SegmentChain {
        segments,
        jumps: jump_out,
    })
}

/// Deterministic trajectory with jumps at the given (time, channel) pairs.
///
/// Jump times must be strictly increasing inside [0, T]. Each no-jump
/// segment is resolved with steps of (close to) T / n_steps.
pub fn run_prescribed(
    model: &LindbladModel,
    psi0: &StateVector,
    spec: &RunSpec,
    jumps: &[(f64, usize)],
) -> Result<TrajectoryRecord, TrajectoryError> {
    let chain = segment_chain(model, psi0, spec, jumps)?;
    let dt = spec.dt();
    let stride = spec.effective_stride();
    let mut samples = Vec::new();
    let n_segments = chain.segments.len();
    for (k, seg) in chain.segments.iter().enumerate() {
        let last_segment = k + 1 == n_segments;
        let len = seg.nodes.len();
        for (i, (t, state, log_norm)) in seg.nodes.iter().enumerate() {
            // The segment end is either the next jump's pre-state (kept in
            // pre_jump_states) or the final state.
            let is_end = i + 1 == len && i > 0;
            if is_end && !last_segment {
                continue;
            }
            if i == 0 || i % stride == 0 || is_end {
                samples.push(StateSample {
                    step: (*t / dt).round() as usize,
                    time: *t,
                    state: state.clone(),
                    log_norm: *log_norm,
                    segment: k,
                });
            }
        }
    }
    let (events, pre_jump_states) = chain.jumps.into_iter().unzip();
    Ok(TrajectoryRecord {
        seed: 0,
        dt,
        total_time: spec.total_time,
        n_steps: spec.n_steps,
        mode: spec.mode,
        initial_state: psi0.clone(),
        samples,
        events,
        pre_jump_states,
        snapshots: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnsembleOptions {
    /// Evaluate the trajectory phase for every member.
    pub compute_phases: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub index: usize,
    pub seed: u64,
    pub events: Vec<JumpEvent>,
    pub final_norm: f64,
    pub phase: Option<Result<PhaseBreakdown, PhaseError>>,
}

impl TrajectorySummary {
    pub fn n_jumps(&self) -> usize {
        self.events.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub n_traj: usize,
    pub summaries: Vec<TrajectorySummary>,
    pub snapshot_times: Vec<f64>,
    /// ρ̄(t) = (1/n) Σ_j |ψ_j(t)⟩⟨ψ_j(t)| at each snapshot time.
    pub snapshots: Vec<DensityMatrix>,
}

impl EnsembleResult {
    pub fn mean_jump_count(&self) -> f64 {
        self.summaries
            .iter()
            .map(|s| s.n_jumps() as f64)
            .sum::<f64>()
            / self.n_traj as f64
    }
}

pub(crate) fn snapshot_steps(spec: &RunSpec, times: &[f64]) -> Result<Vec<usize>, TrajectoryError> {
    let dt = spec.dt();
    let mut steps = Vec::with_capacity(times.len());
    for &t in times {
        let m = (t / dt).round();
        if !(0.0..=spec.total_time * (1.0 + 1e-12)).contains(&t) || (t - m * dt).abs() > 1e-6 * dt {
            return Err(TrajectoryError::SnapshotOffGrid(t));
        }
        steps.push(m as usize);
    }
    if steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(TrajectoryError::InvalidSpec(
            "snapshot times must be non-decreasing".into(),
        ));
    }
    Ok(steps)
}

fn pairwise_projector_sum(states: &[&StateVector]) -> ComplexMatrix {
    match states {
        [] => unreachable!("ensembles hold at least one trajectory"),
        [one] => ComplexMatrix::outer(one, one),
        _ => {
            let (lo, hi) = states.split_at(states.len() / 2);
            &pairwise_projector_sum(lo) + &pairwise_projector_sum(hi)
        }
    }
}

/// Runs `n_traj` independent trajectories in parallel on the current rayon
/// pool. Trajectory `j` uses [`derive_seed`]`(base_seed, j)`, and the
/// snapshot average is reduced in index order, so the result does not depend
/// on the number of worker threads.
pub fn run_ensemble(
    model: &LindbladModel,
    psi0: &StateVector,
    spec: &RunSpec,
    n_traj: usize,
    base_seed: u64,
    snapshot_times: &[f64],
    options: EnsembleOptions,
) -> Result<EnsembleResult, TrajectoryError> {
    if n_traj == 0 {
        return Err(TrajectoryError::InvalidSpec("n_traj must be ≥ 1".into()));
    }
    spec.validate()?;
    let steps = snapshot_steps(spec, snapshot_times)?;
    // Ensembles only need endpoints; phases are rebuilt from the jump list.
    let lean = RunSpec {
        stride: Some(spec.n_steps),
        ..*spec
    };

    let results: Vec<Result<(TrajectorySummary, Vec<StateVector>), TrajectoryError>> =
        (0..n_traj)
            .into_par_iter()
            .map(|index| {
                let seed = derive_seed(base_seed, index as u64);
                let record = run_trajectory_with_snapshots(model, psi0, &lean, seed, &steps)
                    .map_err(|e| TrajectoryError::InTrajectory {
                        index,
                        source: Box::new(e),
                    })?;
                let phase = options
                    .compute_phases
                    .then(|| phase::trajectory_phase(&record, model));
                let summary = TrajectorySummary {
                    index,
                    seed,
                    events: record.events.clone(),
                    final_norm: record.final_norm(),
                    phase,
                };
                Ok((summary, record.snapshots))
            })
            .collect();

    let mut summaries = Vec::with_capacity(n_traj);
    let mut snapshot_states = Vec::with_capacity(n_traj);
    for result in results {
        let (summary, snaps) = result?;
        summaries.push(summary);
        snapshot_states.push(snaps);
    }

    let inv = 1.0 / n_traj as f64;
    let mut snapshots = Vec::with_capacity(steps.len());
    for s in 0..steps.len() {
        let column: Vec<&StateVector> = snapshot_states.iter().map(|v| &v[s]).collect();
        let rho = pairwise_projector_sum(&column).scale_real(inv);
        snapshots.push(DensityMatrix::from_matrix_unchecked(rho));
    }

    Ok(EnsembleResult {
        n_traj,
        summaries,
        snapshot_times: snapshot_times.to_vec(),
        snapshots,
    })
}
