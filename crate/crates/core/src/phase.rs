//! Pancharatnam and geometric phases of pure-state chains and trajectories.
//!
//! Conventions: the discrete phase of a chain ψ₁…ψ_N is
//! −arg(⟨ψ₁|ψ₂⟩⋯⟨ψ_{N−1}|ψ_N⟩⟨ψ_N|ψ₁⟩). For a trajectory the geometric phase
//! splits as
//!
//! ```text
//! geometric = −dynamical + closure − Σ_jumps arg⟨ψ_pre|Γ|ψ_pre⟩
//! ```
//!
//! with `dynamical = −∫⟨H⟩dt` over the no-jump segments and
//! `closure = −arg⟨ψ(T)|ψ(0)⟩`. The non-dynamical part
//! `closure − Σ jump args` is reported as the total phase.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    expectation, inner_product, mat_exp, ComplexMatrix, LinalgError, StateVector, C64, I, ONE,
};
use crate::model::{effective_hamiltonian, LindbladModel};
use crate::trajectory::{
    segment_chain, validate_jumps, JumpEvent, PropagationMode, RunSpec, TrajectoryError,
    TrajectoryRecord,
};

/// Default modulus below which overlaps and jump amplitudes are treated as zero.
pub const OVERLAP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("a phase chain needs at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("Pancharatnam undefined: orthogonal consecutive states at link {index} (|overlap| = {modulus:e})")]
    Orthogonal { index: usize, modulus: f64 },
    #[error("phase undefined: final state orthogonal to initial (|overlap| = {modulus:e})")]
    ClosureOrthogonal { modulus: f64 },
    #[error("jump phase undefined (|⟨ψ|Γ|ψ⟩| = {modulus:e})")]
    JumpUndefined { modulus: f64 },
    #[error("jump phase undefined at event {index} (channel {channel}, t = {time}, |⟨ψ|Γ|ψ⟩| = {modulus:e})")]
    JumpUndefinedAt {
        index: usize,
        channel: usize,
        time: f64,
        modulus: f64,
    },
    #[error("invalid interval [{t0}, {t1}]")]
    InvalidInterval { t0: f64, t1: f64 },
    #[error("sample times must be strictly increasing inside [0, T]")]
    InvalidTimes,
    #[error("no phase breakdowns to summarize")]
    Empty,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMethod {
    /// Sums of args of consecutive overlaps.
    Discrete,
    /// Simpson quadrature of ⟨H⟩ on exactly propagated segments.
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBreakdown {
    /// Non-dynamical phase `closure − Σ jump args`, wrapped to (−π, π].
    pub total_phase: f64,
    /// −∫⟨H⟩dt (continuous) or Σ arg⟨ψ_j|ψ_{j+1}⟩ within segments (discrete).
    pub dynamical_phase: f64,
    /// Unwrapped geometric phase.
    pub geometric_phase: f64,
    /// arg⟨ψ_pre|Γ|ψ_pre⟩ for each event.
    pub jump_phases: Vec<(JumpEvent, f64)>,
    /// −arg⟨ψ(T)|ψ(0)⟩.
    pub closure_phase: f64,
    /// |⟨ψ(T)|ψ(0)⟩| for normalized endpoints.
    pub closure_overlap: f64,
    pub method: PhaseMethod,
}

impl PhaseBreakdown {
    fn assemble(
        dynamical_phase: f64,
        jump_phases: Vec<(JumpEvent, f64)>,
        closure: C64,
        method: PhaseMethod,
    ) -> Self {
        let closure_phase = -closure.arg();
        let jump_sum: f64 = jump_phases.iter().map(|j| j.1).sum();
        let total = closure_phase - jump_sum;
        Self {
            total_phase: wrap_phase(total),
            dynamical_phase,
            geometric_phase: total - dynamical_phase,
            jump_phases,
            closure_phase,
            closure_overlap: closure.norm(),
            method,
        }
    }

    pub fn geometric_wrapped(&self) -> f64 {
        wrap_phase(self.geometric_phase)
    }

    pub fn jump_phase_sum(&self) -> f64 {
        self.jump_phases.iter().map(|j| j.1).sum()
    }

    /// Residual of `geometric = −dynamical + closure − Σ jump args`.
    pub fn decomposition_residual(&self) -> f64 {
        let non_dynamical = self.closure_phase - self.jump_phase_sum();
        let geometric = (self.geometric_phase - (non_dynamical - self.dynamical_phase)).abs();
        let total = wrap_phase(self.total_phase - non_dynamical).abs();
        geometric.max(total)
    }
}

/// Maps an angle to (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Distance between two angles on the circle, in [0, π].
pub fn phase_distance(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

/// Discrete phase of a chain closed back onto its first state, with the
/// unwrapped accumulation of the individual link phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainPhase {
    /// −arg of the product, in (−π, π].
    pub wrapped: f64,
    /// −Σ arg of each link.
    pub unwrapped: f64,
}

fn check_link(z: C64, a: &StateVector, b: &StateVector, tol: f64) -> Result<C64, f64> {
    let modulus = z.norm() / (a.norm() * b.norm());
    if modulus < tol {
        Err(modulus)
    } else {
        Ok(z)
    }
}

fn frexp(x: f64) -> (f64, i32) {
    if x == 0.0 || !x.is_finite() {
        return (x, 0);
    }
    let exp = x.log2().floor() as i32 + 1;
    (x * 2f64.powi(-exp), exp)
}

pub fn pancharatnam_chain(states: &[StateVector], tol: f64) -> Result<ChainPhase, PhaseError> {
    if states.len() < 2 {
        return Err(PhaseError::TooFewStates(states.len()));
    }
    let n = states.len();
    let mut product = ONE;
    let mut unwrapped = 0.0;
    for index in 0..n {
        let (a, b) = (&states[index], &states[(index + 1) % n]);
        let z = check_link(inner_product(a, b)?, a, b, tol)
            .map_err(|modulus| PhaseError::Orthogonal { index, modulus })?;
        unwrapped -= z.arg();
        product *= z;
        // Power-of-two rescaling is exact, so the argument carries no extra rounding.
        let (_, exp) = frexp(product.norm());
        if exp.abs() > 64 {
            product = product.scale(2f64.powi(-exp));
        }
    }
    Ok(ChainPhase {
        wrapped: wrap_phase(-product.arg()),
        unwrapped,
    })
}

/// −arg{⟨ψ₁|ψ₂⟩⋯⟨ψ_N|ψ₁⟩}, in (−π, π].
pub fn pancharatnam_discrete(states: &[StateVector], tol: f64) -> Result<f64, PhaseError> {
    pancharatnam_chain(states, tol).map(|c| c.wrapped)
}

/// Im⟨ψ|dψ⟩ / ⟨ψ|ψ⟩.
pub fn connection_increment(psi: &StateVector, dpsi: &StateVector) -> Result<f64, PhaseError> {
    Ok(inner_product(psi, dpsi)?.im / psi.norm_sqr())
}

/// arg⟨ψ|Γ|ψ⟩; errors when the normalized amplitude is below `tol`.
pub fn jump_phase_term_with_tol(
    gamma_op: &ComplexMatrix,
    psi_pre: &StateVector,
    tol: f64,
) -> Result<f64, PhaseError> {
    let z = expectation(gamma_op, psi_pre)?;
    if z.norm() < tol {
        return Err(PhaseError::JumpUndefined { modulus: z.norm() });
    }
    Ok(z.arg())
}

pub fn jump_phase_term(gamma_op: &ComplexMatrix, psi_pre: &StateVector) -> Result<f64, PhaseError> {
    jump_phase_term_with_tol(gamma_op, psi_pre, OVERLAP_TOL)
}

fn closure_overlap(last: &StateVector, first: &StateVector) -> Result<C64, PhaseError> {
    let z = inner_product(last, first)? / (last.norm() * first.norm());
    if z.norm() < OVERLAP_TOL {
        return Err(PhaseError::ClosureOrthogonal { modulus: z.norm() });
    }
    Ok(z)
}

/// Composite Simpson rule on an even number of equal intervals.
fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    debug_assert!(n.is_multiple_of(2));
    if n == 0 {
        return 0.0;
    }
    let mut acc = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

fn energy(model: &LindbladModel, psi: &StateVector) -> Result<f64, PhaseError> {
    Ok(expectation(model.hamiltonian(), psi)?.re)
}

/// Geometric phase of the no-jump evolution from `psi0` over [t0, t1].
///
/// States are propagated exactly under H̃ and ∫⟨H⟩dt is evaluated by
/// composite Simpson on `n_quad` nodes (raised to the next odd count).
pub fn no_jump_phase(
    model: &LindbladModel,
    psi0: &StateVector,
    t0: f64,
    t1: f64,
    n_quad: usize,
) -> Result<PhaseBreakdown, PhaseError> {
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(PhaseError::InvalidInterval { t0, t1 });
    }
    if !psi0.is_normalized(1e-9) {
        return Err(TrajectoryError::NotNormalized(psi0.norm_sqr()).into());
    }
    let mut intervals = n_quad.saturating_sub(1).max(2);
    intervals += intervals % 2;
    let h = (t1 - t0) / intervals as f64;
    let step = mat_exp(&effective_hamiltonian(model), -I * h)?;
    let mut psi = psi0.clone();
    let mut energies = Vec::with_capacity(intervals + 1);
    energies.push(energy(model, &psi)?);
    for _ in 0..intervals {
        psi = step.apply(&psi)?.normalized();
        energies.push(energy(model, &psi)?);
    }
    let dynamical = -simpson(&energies, h);
    let closure = closure_overlap(&psi, psi0)?;
    Ok(PhaseBreakdown::assemble(
        dynamical,
        Vec::new(),
        closure,
        PhaseMethod::Continuous,
    ))
}

fn located_jump_phase(
    model: &LindbladModel,
    index: usize,
    event: &JumpEvent,
    pre: &StateVector,
) -> Result<f64, PhaseError> {
    let op = model.channel(event.channel).ok_or_else(|| {
        TrajectoryError::InvalidJumps(format!("channel {} out of range", event.channel))
    })?;
    jump_phase_term(op, pre).map_err(|e| match e {
        PhaseError::JumpUndefined { modulus } => PhaseError::JumpUndefinedAt {
            index,
            channel: event.channel,
            time: event.time,
            modulus,
        },
        other => other,
    })
}

/// Phase of a recorded trajectory, rebuilt at full resolution from its jump
/// list. Exact-mode records use the continuous decomposition; Euler-mode
/// records use the discrete one on the Euler chain itself.
pub fn trajectory_phase(
    record: &TrajectoryRecord,
    model: &LindbladModel,
) -> Result<PhaseBreakdown, PhaseError> {
    phase_for_jumps(
        model,
        &record.initial_state,
        &record.spec(),
        &record.jump_list(),
    )
}

/// As [`trajectory_phase`] for an explicit jump list.
pub fn phase_for_jumps(
    model: &LindbladModel,
    psi0: &StateVector,
    spec: &RunSpec,
    jumps: &[(f64, usize)],
) -> Result<PhaseBreakdown, PhaseError> {
    let chain = segment_chain(model, psi0, spec, jumps)?;
    let mut dynamical = 0.0;
    let method = match spec.mode {
        PropagationMode::Exact => PhaseMethod::Continuous,
        PropagationMode::Euler => PhaseMethod::Discrete,
    };
    for seg in &chain.segments {
        let nodes = &seg.nodes;
        if nodes.len() < 2 {
            continue;
        }
        match method {
            PhaseMethod::Continuous => {
                let h = (nodes[nodes.len() - 1].0 - nodes[0].0) / (nodes.len() - 1) as f64;
                let energies = nodes
                    .iter()
                    .map(|(_, psi, _)| energy(model, psi))
                    .collect::<Result<Vec<_>, _>>()?;
                dynamical -= simpson(&energies, h);
            }
            PhaseMethod::Discrete => {
                for (index, w) in nodes.windows(2).enumerate() {
                    let z = check_link(
                        inner_product(&w[0].1, &w[1].1)?,
                        &w[0].1,
                        &w[1].1,
                        OVERLAP_TOL,
                    )
                    .map_err(|modulus| PhaseError::Orthogonal { index, modulus })?;
                    dynamical += z.arg();
                }
            }
        }
    }
    let mut jump_phases = Vec::with_capacity(chain.jumps.len());
    for (index, (event, pre)) in chain.jumps.iter().enumerate() {
        jump_phases.push((*event, located_jump_phase(model, index, event, pre)?));
    }
    let last = &chain
        .segments
        .last()
        .and_then(|s| s.nodes.last())
        .expect("chain ends in a node")
        .1;
    let closure = closure_overlap(last, psi0)?;
    Ok(PhaseBreakdown::assemble(
        dynamical,
        jump_phases,
        closure,
        method,
    ))
}

/// Discrete phase of the exact trajectory sampled at arbitrary times.
///
/// `times` must start at 0, end at `total_time`, and be strictly
/// increasing; jump times are inserted automatically. Every sample is
/// propagated directly from its segment start, so the chain lies on the
/// exact path whatever the spacing.
pub fn discrete_phase_at_times(
    model: &LindbladModel,
    psi0: &StateVector,
    total_time: f64,
    times: &[f64],
    jumps: &[(f64, usize)],
) -> Result<PhaseBreakdown, PhaseError> {
    let ok = times.len() >= 2
        && times[0] == 0.0
        && (times[times.len() - 1] - total_time).abs() <= 1e-12 * total_time.max(1.0)
        && times.windows(2).all(|w| w[1] > w[0]);
    if !ok {
        return Err(PhaseError::InvalidTimes);
    }
    if !psi0.is_normalized(1e-9) {
        return Err(TrajectoryError::NotNormalized(psi0.norm_sqr()).into());
    }
    validate_jumps(model, total_time, jumps)?;
    let h_eff = effective_hamiltonian(model);

    let mut dynamical = 0.0;
    let mut jump_phases = Vec::with_capacity(jumps.len());
    let mut seg_start_time = 0.0;
    let mut seg_start = psi0.clone();
    let mut prev = psi0.clone();
    let mut link = 0;
    let mut next_jump = 0;
    let mut push = |state: StateVector,
                    prev: &mut StateVector,
                    dynamical: &mut f64|
     -> Result<(), PhaseError> {
        let z = check_link(inner_product(prev, &state)?, prev, &state, OVERLAP_TOL).map_err(
            |modulus| PhaseError::Orthogonal {
                index: link,
                modulus,
            },
        )?;
        link += 1;
        *dynamical += z.arg();
        *prev = state;
        Ok(())
    };
    let at = |start: &StateVector, dt: f64| -> Result<StateVector, PhaseError> {
        if dt == 0.0 {
            return Ok(start.clone());
        }
        Ok(mat_exp(&h_eff, -I * dt)?.apply(start)?.normalized())
    };

    for &t in &times[1..] {
        while next_jump < jumps.len() && jumps[next_jump].0 <= t {
            let (tj, channel) = jumps[next_jump];
            let pre = at(&seg_start, tj - seg_start_time)?;
            if tj > seg_start_time && prev != pre {
                push(pre.clone(), &mut prev, &mut dynamical)?;
            }
            let event = JumpEvent {
                step_index: next_jump,
                time: tj,
                channel,
            };
            jump_phases.push((event, located_jump_phase(model, next_jump, &event, &pre)?));
            let post = model.channel(channel).expect("validated").apply(&pre)?;
            if post.norm_sqr() < crate::trajectory::NORM_COLLAPSE {
                return Err(TrajectoryError::NormCollapse {
                    step: next_jump,
                    time: tj,
                    channel,
                    norm_sqr: post.norm_sqr(),
                }
                .into());
            }
            seg_start = post.normalized();
            seg_start_time = tj;
            prev = seg_start.clone();
            next_jump += 1;
        }
        if t > seg_start_time {
            let state = at(&seg_start, t - seg_start_time)?;
            push(state, &mut prev, &mut dynamical)?;
        }
    }
    let closure = closure_overlap(&prev, psi0)?;
    Ok(PhaseBreakdown::assemble(
        dynamical,
        jump_phases,
        closure,
        PhaseMethod::Discrete,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    /// Number of uniformly spaced time samples (jump times are added on top).
    pub n_states: usize,
    pub discrete: f64,
    pub continuous: f64,
    /// |γ_N − γ_continuous| on the circle.
    pub error: f64,
}

/// Discrete phase on uniform grids of increasing size against the
/// continuous phase of the same prescribed trajectory.
pub fn discrete_vs_continuous(
    record: &TrajectoryRecord,
    model: &LindbladModel,
    n_refinements: &[usize],
) -> Result<Vec<ConvergenceRow>, PhaseError> {
    let jumps = record.jump_list();
    let finest = n_refinements
        .iter()
        .copied()
        .max()
        .unwrap_or(0)
        .max(record.n_steps)
        .max(2);
    let reference_spec = RunSpec::new(record.total_time, 4 * finest, PropagationMode::Exact);
    let continuous =
        phase_for_jumps(model, &record.initial_state, &reference_spec, &jumps)?.geometric_phase;
    let mut rows = Vec::with_capacity(n_refinements.len());
    for &n in n_refinements {
        let n = n.max(2);
        let times: Vec<f64> = (0..n)
            .map(|i| {
                if i + 1 == n {
                    record.total_time
                } else {
                    record.total_time * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        let discrete = discrete_phase_at_times(
            model,
            &record.initial_state,
            record.total_time,
            &times,
            &jumps,
        )?
        .geometric_phase;
        rows.push(ConvergenceRow {
            n_states: n,
            discrete,
            continuous,
            error: phase_distance(discrete, continuous),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircularSummary {
    /// atan2 of the mean unit phasor.
    pub mean: f64,
    /// |⟨e^{iγ}⟩|.
    pub resultant: f64,
    /// Counts over equal bins covering (−π, π].
    pub histogram: Vec<usize>,
}

impl CircularSummary {
    pub fn from_angles(angles: &[f64], n_bins: usize) -> Self {
        let n_bins = n_bins.max(1);
        let mut histogram = vec![0; n_bins];
        let mut sum = C64::new(0.0, 0.0);
        for &a in angles {
            sum += C64::from_polar(1.0, a);
            let w = wrap_phase(a);
            let bin = (((w + PI) / (2.0 * PI)) * n_bins as f64).ceil() as usize;
            histogram[bin.clamp(1, n_bins) - 1] += 1;
        }
        let mean = sum / angles.len().max(1) as f64;
        Self {
            mean: mean.arg(),
            resultant: mean.norm(),
            histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseStatistics {
    pub count: usize,
    pub geometric: CircularSummary,
    pub dynamical: CircularSummary,
    pub total: CircularSummary,
    /// |⟨|⟨ψ(T)|ψ(0)⟩|·e^{i·total}⟩|, an interference-visibility proxy.
    pub visibility: f64,
}

pub fn ensemble_phase_statistics(
    breakdowns: &[PhaseBreakdown],
    n_bins: usize,
) -> Result<PhaseStatistics, PhaseError> {
    if breakdowns.is_empty() {
        return Err(PhaseError::Empty);
    }
    let collect = |f: fn(&PhaseBreakdown) -> f64| breakdowns.iter().map(f).collect::<Vec<_>>();
    let visibility = breakdowns
        .iter()
        .map(|b| C64::from_polar(b.closure_overlap, b.total_phase))
        .sum::<C64>()
        .norm()
        / breakdowns.len() as f64;
    Ok(PhaseStatistics {
        count: breakdowns.len(),
        geometric: CircularSummary::from_angles(&collect(|b| b.geometric_phase), n_bins),
        dynamical: CircularSummary::from_angles(&collect(|b| b.dynamical_phase), n_bins),
        total: CircularSummary::from_angles(&collect(|b| b.total_phase), n_bins),
        visibility,
    })
}
