//! Density-matrix reference dynamics.

use thiserror::Error;

use crate::linalg::{ComplexMatrix, LinalgError, StateVector, C64, I, ONE};
use crate::model::LindbladModel;
use crate::trajectory::EnsembleResult;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-8;
/// Smallest eigenvalue tolerated during integration before aborting.
pub const STEP_POSITIVITY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MasterError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("density matrix is not Hermitian (defect {0:e})")]
    NotHermitian(f64),
    #[error("density matrix trace is {0}, expected 1")]
    BadTrace(C64),
    #[error("density matrix has negative eigenvalue {0:e}")]
    NotPositive(f64),
    #[error("positivity lost at t = {time} (smallest eigenvalue {min_eigenvalue:e}); reduce the step size")]
    PositivityViolation { time: f64, min_eigenvalue: f64 },
    #[error("invalid integration parameters: {0}")]
    InvalidSpec(String),
    #[error("snapshot {index}: master time {master} does not match ensemble time {ensemble}")]
    TimeMismatch {
        index: usize,
        master: f64,
        ensemble: f64,
    },
    #[error("snapshot count mismatch: {master} master vs {ensemble} ensemble")]
    CountMismatch { master: usize, ensemble: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    m: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self, MasterError> {
        if !m.is_square() {
            return Err(LinalgError::NotSquare {
                rows: m.rows(),
                cols: m.cols(),
            }
            .into());
        }
        let defect = m.hermiticity_defect();
        if defect > HERMITIAN_TOL {
            return Err(MasterError::NotHermitian(defect));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(MasterError::BadTrace(tr));
        }
        let rho = Self { m };
        let min = rho.min_eigenvalue();
        if min < -POSITIVITY_TOL {
            return Err(MasterError::NotPositive(min));
        }
        Ok(rho)
    }

    pub(crate) fn from_matrix_unchecked(m: ComplexMatrix) -> Self {
        Self { m }
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        let n = psi.normalized();
        Self {
            m: ComplexMatrix::outer(&n, &n),
        }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            m: ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.m
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.m * &self.m).trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.m
            .hermitian_part()
            .hermitian_eigenvalues()
            .ok()
            .and_then(|v| v.first().copied())
            .unwrap_or(f64::NAN)
    }
}

fn rhs(model: &LindbladModel, rho: &ComplexMatrix) -> ComplexMatrix {
    let h = model.hamiltonian();
    let commutator = &(h * rho) - &(rho * h);
    let mut out = commutator.scale(-I);
    let anti = model.decay_sum();
    let anti_term = &(anti * rho) + &(rho * anti);
    out = &out - &anti_term.scale_real(0.5);
    for g in model.jump_ops() {
        out = &out + &(&(g * rho) * &g.adjoint());
    }
    out
}

/// −i[H,ρ] − ½Σ_k{Γ_k†Γ_kρ + ρΓ_k†Γ_k − 2Γ_kρΓ_k†}.
pub fn lindblad_rhs(
    model: &LindbladModel,
    rho: &DensityMatrix,
) -> Result<ComplexMatrix, MasterError> {
    if rho.dim() != model.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: model.dim(),
            found: rho.dim(),
        }
        .into());
    }
    Ok(rhs(model, rho.matrix()))
}

fn rk4_step(model: &LindbladModel, rho: &ComplexMatrix, h: f64) -> ComplexMatrix {
    let k1 = rhs(model, rho);
    let k2 = rhs(model, &(rho + &k1.scale_real(h / 2.0)));
    let k3 = rhs(model, &(rho + &k2.scale_real(h / 2.0)));
    let k4 = rhs(model, &(rho + &k3.scale_real(h)));
    let incr = &(&k1 + &k2.scale_real(2.0)) + &(&k3.scale_real(2.0) + &k4);
    (rho + &incr.scale_real(h / 6.0)).hermitian_part()
}

/// A master-equation solution sampled at the requested times.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterSolution {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

/// Fixed-step RK4 over [0, T] with nominal step T / n_steps. The grid is
/// split at every snapshot time so that each snapshot is hit exactly.
pub fn integrate(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    total_time: f64,
    n_steps: usize,
    snapshot_times: &[f64],
) -> Result<MasterSolution, MasterError> {
    if !(total_time > 0.0) || !total_time.is_finite() || n_steps == 0 {
        return Err(MasterError::InvalidSpec(format!(
            "need total_time > 0 and n_steps ≥ 1 (got {total_time}, {n_steps})"
        )));
    }
    if rho0.dim() != model.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: model.dim(),
            found: rho0.dim(),
        }
        .into());
    }
    if snapshot_times
        .iter()
        .any(|t| !(0.0..=total_time).contains(t))
        || snapshot_times.windows(2).any(|w| w[1] < w[0])
    {
        return Err(MasterError::InvalidSpec(
            "snapshot times must be sorted and inside [0, T]".into(),
        ));
    }
    let h_nominal = total_time / n_steps as f64;
    let mut rho = rho0.matrix().clone();
    let mut t = 0.0;
    let mut states = Vec::with_capacity(snapshot_times.len());
    for &target in snapshot_times {
        let span = target - t;
        if span > 0.0 {
            let n = ((span / h_nominal).round() as usize).max(1);
            let h = span / n as f64;
            for i in 0..n {
                rho = rk4_step(model, &rho, h);
                let now = t + (i + 1) as f64 * h;
                let min = DensityMatrix::from_matrix_unchecked(rho.clone()).min_eigenvalue();
                if min < -STEP_POSITIVITY_TOL {
                    return Err(MasterError::PositivityViolation {
                        time: now,
                        min_eigenvalue: min,
                    });
                }
            }
            t = target;
        }
        states.push(DensityMatrix::from_matrix_unchecked(rho.clone()));
    }
    Ok(MasterSolution {
        times: snapshot_times.to_vec(),
        states,
    })
}

/// ½‖a − b‖₁.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64, MasterError> {
    let diff = a.matrix().try_sub(b.matrix())?;
    Ok(0.5 * diff.hermitian_part().hermitian_trace_norm()?)
}

/// Trace distance between master and ensemble snapshots, per time.
pub fn compare_ensemble(
    master: &MasterSolution,
    ensemble: &EnsembleResult,
) -> Result<Vec<(f64, f64)>, MasterError> {
    if master.states.len() != ensemble.snapshots.len() {
        return Err(MasterError::CountMismatch {
            master: master.states.len(),
            ensemble: ensemble.snapshots.len(),
        });
    }
    master
        .times
        .iter()
        .zip(&ensemble.snapshot_times)
        .zip(master.states.iter().zip(&ensemble.snapshots))
        .enumerate()
        .map(|(index, ((&tm, &te), (a, b)))| {
            if (tm - te).abs() > 1e-9 * tm.abs().max(1.0) {
                return Err(MasterError::TimeMismatch {
                    index,
                    master: tm,
                    ensemble: te,
                });
            }
            Ok((tm, trace_distance(a, b)?))
        })
        .collect()
}
