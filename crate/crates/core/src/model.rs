//! Open-system models: Hamiltonian plus jump operators, the effective
//! non-Hermitian Hamiltonian and the discrete-time step operators.

use thiserror::Error;

use crate::linalg::{expectation, ComplexMatrix, LinalgError, StateVector, C64, I};

/// Maximum tolerated ‖H − H†‖_max.
pub const HERMITICITY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("hamiltonian is not Hermitian (‖H−H†‖_max = {defect:e})")]
    NonHermitian { defect: f64 },
    #[error("jump operator {index} is {rows}x{cols}, expected {dim}x{dim}")]
    JumpShape {
        index: usize,
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error("got {labels} labels for {channels} jump channels")]
    LabelCount { labels: usize, channels: usize },
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("state is not normalized (‖ψ‖² = {0})")]
    NotNormalized(f64),
    #[error("negative jump probability {value:e} on channel {channel}; time step too large")]
    NegativeProbability { channel: usize, value: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Hamiltonian H and ordered jump operators Γ_k (units of √rate).
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladModel {
    hamiltonian: ComplexMatrix,
    jump_ops: Vec<ComplexMatrix>,
    labels: Option<Vec<String>>,
    // Σ_k Γ_k†Γ_k, cached.
    decay_sum: ComplexMatrix,
}

impl LindbladModel {
    pub fn new(
        hamiltonian: ComplexMatrix,
        jump_ops: Vec<ComplexMatrix>,
    ) -> Result<Self, ModelError> {
        if !hamiltonian.is_square() {
            return Err(LinalgError::NotSquare {
                rows: hamiltonian.rows(),
                cols: hamiltonian.cols(),
            }
            .into());
        }
        let defect = hamiltonian.hermiticity_defect();
        if defect > HERMITICITY_TOL {
            return Err(ModelError::NonHermitian { defect });
        }
        let dim = hamiltonian.rows();
        let mut decay_sum = ComplexMatrix::zeros(dim, dim);
        for (index, op) in jump_ops.iter().enumerate() {
            if op.rows() != dim || op.cols() != dim {
                return Err(ModelError::JumpShape {
                    index,
                    rows: op.rows(),
                    cols: op.cols(),
                    dim,
                });
            }
            decay_sum = &decay_sum + &(&op.adjoint() * op);
        }
        Ok(Self {
            hamiltonian,
            jump_ops,
            labels: None,
            decay_sum,
        })
    }

    pub fn closed(hamiltonian: ComplexMatrix) -> Result<Self, ModelError> {
        Self::new(hamiltonian, Vec::new())
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, ModelError> {
        if labels.len() != self.jump_ops.len() {
            return Err(ModelError::LabelCount {
                labels: labels.len(),
                channels: self.jump_ops.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.rows()
    }

    pub fn hamiltonian(&self) -> &ComplexMatrix {
        &self.hamiltonian
    }

    pub fn jump_ops(&self) -> &[ComplexMatrix] {
        &self.jump_ops
    }

    pub fn n_channels(&self) -> usize {
        self.jump_ops.len()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Jump operator for a 1-based channel index.
    pub fn channel(&self, channel: usize) -> Option<&ComplexMatrix> {
        channel.checked_sub(1).and_then(|k| self.jump_ops.get(k))
    }

    /// Σ_k Γ_k†Γ_k.
    pub fn decay_sum(&self) -> &ComplexMatrix {
        &self.decay_sum
    }

    /// Same Hamiltonian with all jump channels removed.
    pub fn without_jumps(&self) -> Self {
        Self::closed(self.hamiltonian.clone()).expect("hamiltonian already validated")
    }
}

/// H̃ = H − (i/2) Σ_k Γ_k†Γ_k.
pub fn effective_hamiltonian(model: &LindbladModel) -> ComplexMatrix {
    model.hamiltonian() - &model.decay_sum().scale(I * 0.5)
}

/// Kraus-like set for one time step: W₀ = 1 − iH̃dt and W_k = √dt·Γ_k.
#[derive(Debug, Clone)]
pub struct StepOperators {
    dt: f64,
    h_eff: ComplexMatrix,
    w0: ComplexMatrix,
    w_jump: Vec<ComplexMatrix>,
    completeness_residual: f64,
}

impl StepOperators {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn h_eff(&self) -> &ComplexMatrix {
        &self.h_eff
    }

    pub fn w0(&self) -> &ComplexMatrix {
        &self.w0
    }

    pub fn w_jump(&self) -> &[ComplexMatrix] {
        &self.w_jump
    }

    /// ‖Σ_k W_k†W_k − 1‖_max.
    pub fn completeness_residual(&self) -> f64 {
        self.completeness_residual
    }
}

pub fn step_operators(model: &LindbladModel, dt: f64) -> Result<StepOperators, ModelError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(ModelError::NonPositiveDt(dt));
    }
    let dim = model.dim();
    let h_eff = effective_hamiltonian(model);
    let w0 = &ComplexMatrix::identity(dim) - &h_eff.scale(I * dt);
    let root = C64::new(dt.sqrt(), 0.0);
    let w_jump: Vec<_> = model.jump_ops().iter().map(|g| g.scale(root)).collect();

    let mut total = &w0.adjoint() * &w0;
    for w in &w_jump {
        total = &total + &(&w.adjoint() * w);
    }
    let completeness_residual = (&total - &ComplexMatrix::identity(dim)).max_abs();
    Ok(StepOperators {
        dt,
        h_eff,
        w0,
        w_jump,
        completeness_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitalCheck {
    pub unital: bool,
    /// trace(ΣΓ†Γ)/dim, the proportionality constant when unital.
    pub constant: f64,
    /// ‖ΣΓ†Γ − c·1‖_max.
    pub deviation: f64,
}

/// Tests Σ_k Γ_k†Γ_k ∝ 1.
pub fn is_unital(model: &LindbladModel, tol: f64) -> UnitalCheck {
    let dim = model.dim();
    let sum = model.decay_sum();
    let constant = sum.trace().re / dim as f64;
    let deviation = (sum - &ComplexMatrix::identity(dim).scale_real(constant)).max_abs();
    UnitalCheck {
        unital: deviation <= tol,
        constant,
        deviation,
    }
}

/// Per-channel probabilities for one step (index 0 is the no-jump branch).
#[derive(Debug, Clone, PartialEq)]
pub struct JumpProbabilities {
    /// Renormalized so that the entries sum to one.
    pub probs: Vec<f64>,
    /// First-order values p_k = ⟨ψ|W_k†W_k|ψ⟩ before renormalization.
    pub raw: Vec<f64>,
    /// Σ raw − 1, which is O(dt²).
    pub residual: f64,
}

impl JumpProbabilities {
    pub fn jump_total(&self) -> f64 {
        self.probs[1..].iter().sum()
    }
}

pub fn jump_probabilities(
    ops: &StepOperators,
    psi: &StateVector,
) -> Result<JumpProbabilities, ModelError> {
    let norm_sqr = psi.norm_sqr();
    if (norm_sqr - 1.0).abs() > 1e-9 {
        return Err(ModelError::NotNormalized(norm_sqr));
    }
    let mut raw = Vec::with_capacity(ops.w_jump.len() + 1);
    let w0psi = ops.w0.apply(psi)?;
    raw.push(w0psi.norm_sqr());
    for w in &ops.w_jump {
        raw.push(w.apply(psi)?.norm_sqr());
    }
    let jump_sum: f64 = raw[1..].iter().sum();
    // First-order no-jump weight; negative means the jump budget exceeds one.
    let first_order_p0 = 1.0 - jump_sum;
    if first_order_p0 < -1e-12 {
        return Err(ModelError::NegativeProbability {
            channel: 0,
            value: first_order_p0,
        });
    }
    if let Some((channel, &value)) = raw.iter().enumerate().find(|(_, &p)| p < -1e-12) {
        return Err(ModelError::NegativeProbability { channel, value });
    }
    let sum: f64 = raw.iter().sum();
    let probs = raw.iter().map(|p| p.max(0.0) / sum).collect();
    Ok(JumpProbabilities {
        probs,
        residual: sum - 1.0,
        raw,
    })
}

/// Expectation dt·⟨ψ|Γ_k†Γ_k|ψ⟩ of one channel, for diagnostics.
pub fn channel_rate(model: &LindbladModel, channel: usize, psi: &StateVector) -> Option<f64> {
    let op = model.channel(channel)?;
    let gdg = &op.adjoint() * op;
    expectation(&gdg, psi).ok().map(|z| z.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{pauli, ONE, ZERO};

    fn dephasing(omega: f64, lambda: f64) -> LindbladModel {
        LindbladModel::new(
            pauli::sigma_z().scale_real(omega / 2.0),
            vec![pauli::sigma_z().scale_real(lambda)],
        )
        .unwrap()
    }

    fn decay(omega: f64, alpha: f64) -> LindbladModel {
        LindbladModel::new(
            pauli::sigma_z().scale_real(omega / 2.0),
            vec![pauli::sigma_minus().scale_real(alpha)],
        )
        .unwrap()
    }

    #[test]
    fn effective_hamiltonian_dephasing() {
        let (omega, lambda) = (1.3, 0.7);
        let got = effective_hamiltonian(&dephasing(omega, lambda));
        let want = &pauli::sigma_z().scale_real(omega / 2.0)
            - &ComplexMatrix::identity(2).scale(I * (0.5 * lambda * lambda));
        assert!((&got - &want).max_abs() < 1e-15);
    }

    #[test]
    fn effective_hamiltonian_closed_and_decay() {
        let h = pauli::sigma_x().scale_real(0.4);
        let closed = LindbladModel::closed(h.clone()).unwrap();
        assert_eq!(effective_hamiltonian(&closed), h);

        let (omega, alpha) = (1.0, 0.3);
        let got = effective_hamiltonian(&decay(omega, alpha));
        let projector = ComplexMatrix::diagonal(&[ONE, ZERO]);
        let want =
            &pauli::sigma_z().scale_real(omega / 2.0) - &projector.scale(I * (0.5 * alpha * alpha));
        assert!((&got - &want).max_abs() < 1e-15);
    }

    #[test]
    fn rejects_non_hermitian_and_bad_shapes() {
        let bad = pauli::sigma_plus();
        assert!(matches!(
            LindbladModel::closed(bad),
            Err(ModelError::NonHermitian { .. })
        ));
        let err = LindbladModel::new(pauli::sigma_z(), vec![ComplexMatrix::identity(3)]);
        assert!(matches!(err, Err(ModelError::JumpShape { index: 0, .. })));
        let labelled = dephasing(1.0, 1.0).with_labels(vec![]);
        assert!(matches!(labelled, Err(ModelError::LabelCount { .. })));
    }

    #[test]
    fn step_operators_definition() {
        let dt = 1e-3;
        let ops = step_operators(&dephasing(1.0, 1.0), dt).unwrap();
        let want = pauli::sigma_z().scale_real(dt.sqrt());
        assert_eq!(ops.w_jump()[0], want);
        let w0 = &ComplexMatrix::identity(2) - &ops.h_eff().scale(I * dt);
        assert_eq!(ops.w0(), &w0);
        assert!(matches!(
            step_operators(&dephasing(1.0, 1.0), 0.0),
            Err(ModelError::NonPositiveDt(_))
        ));
        assert!(step_operators(&dephasing(1.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn closed_system_step_is_unitary_to_second_order() {
        let ops = step_operators(&LindbladModel::closed(pauli::sigma_z()).unwrap(), 1e-3).unwrap();
        assert!(ops.w_jump().is_empty());
        assert!(ops.completeness_residual() <= 1.01e-6);
    }

    #[test]
    fn completeness_residual_is_second_order() {
        let model = dephasing(1.0, 1.0);
        let r1 = step_operators(&model, 1e-2)
            .unwrap()
            .completeness_residual();
        let r2 = step_operators(&model, 5e-3)
            .unwrap()
            .completeness_residual();
        let ratio = r1 / r2;
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn unitality_examples() {
        let lambda = 0.6;
        let check = is_unital(&dephasing(1.0, lambda), 1e-12);
        assert!(check.unital);
        assert!((check.constant - lambda * lambda).abs() < 1e-15);
        assert!(!is_unital(&decay(1.0, 0.4), 1e-12).unital);
        let axis = [0.48, -0.6, 0.64];
        let flip = LindbladModel::new(pauli::sigma_z(), vec![pauli::sigma_axis(axis)]).unwrap();
        let check = is_unital(&flip, 1e-12);
        assert!(check.unital && (check.constant - 1.0).abs() < 1e-12);
        let closed = is_unital(&LindbladModel::closed(pauli::sigma_z()).unwrap(), 1e-12);
        assert!(closed.unital && closed.constant == 0.0);
    }

    #[test]
    fn jump_probability_examples() {
        let psi = StateVector::new(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]).unwrap();
        let closed =
            step_operators(&LindbladModel::closed(pauli::sigma_z()).unwrap(), 1e-3).unwrap();
        let p = jump_probabilities(&closed, &psi).unwrap();
        assert_eq!(p.probs, vec![1.0]);

        let (lambda, dt) = (0.8, 1e-3);
        let ops = step_operators(&dephasing(1.0, lambda), dt).unwrap();
        let p = jump_probabilities(&ops, &psi).unwrap();
        assert!((p.raw[1] - lambda * lambda * dt).abs() < 1e-17);
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.residual.abs() < 1e-5);

        // P_e = |⟨0|ψ⟩|² = 0.36
        let alpha = 0.5;
        let ops = step_operators(&decay(1.0, alpha), dt).unwrap();
        let p = jump_probabilities(&ops, &psi).unwrap();
        assert!((p.raw[1] - alpha * alpha * dt * 0.36).abs() < 1e-17);
        assert!(
            (channel_rate(&decay(1.0, alpha), 1, &psi).unwrap() - alpha * alpha * 0.36).abs()
                < 1e-15
        );
    }

    #[test]
    fn jump_probabilities_reject_bad_input() {
        let ops = step_operators(&dephasing(1.0, 1.0), 2.0).unwrap();
        let psi = StateVector::basis(2, 0);
        assert!(matches!(
            jump_probabilities(&ops, &psi),
            Err(ModelError::NegativeProbability { channel: 0, .. })
        ));
        let unnormalized = psi.scale(C64::new(2.0, 0.0));
        let ops = step_operators(&dephasing(1.0, 1.0), 1e-3).unwrap();
        assert!(matches!(
            jump_probabilities(&ops, &unnormalized),
            Err(ModelError::NotNormalized(_))
        ));
    }
}
