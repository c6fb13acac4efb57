//! Spin-1/2 presets, Bloch-sphere geometry and closed-form references.
//!
//! Basis convention: |0⟩ is the excited state at the north pole (+z), |1⟩ the
//! ground state at the south pole, σ_− = |1⟩⟨0|, and H = (ω/2)σ_z.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{pauli, LinalgError, StateVector, C64};
use crate::model::{LindbladModel, ModelError};
use crate::phase::wrap_phase;
use crate::trajectory::TrajectoryRecord;

pub const AXIS_NORM_TOL: f64 = 1e-12;

/// Intervals used by the pipeline when no step count is given.
pub const DEFAULT_STEPS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("invalid spin configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "unknown preset `{0}` (expected closed, dephasing, decay, dephasing+decay or spinflip)"
    )]
    UnknownPreset(String),
    #[error("Bloch export requires dimension 2, got {0}")]
    NotQubit(usize),
    #[error("solid angle needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("consecutive Bloch points {index} and {next} are antipodal; geodesic is ambiguous")]
    Antipodal { index: usize, next: usize },
    #[error("path is not closed and geodesic closure was not requested")]
    NotClosed,
    #[error("Bloch path times must be strictly increasing (sample {0})")]
    TimesNotIncreasing(usize),
    #[error("Bloch vector {index} has length² {norm_sqr} > 1")]
    OutsideBall { index: usize, norm_sqr: f64 },
    #[error("{0} requires {1}")]
    Requires(&'static str, &'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn default_strength() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipConfig {
    /// Unit axis n̂ of the flip operator σ_n̂.
    pub axis: [f64; 3],
    #[serde(default = "default_strength")]
    pub strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinHalfConfig {
    pub omega: f64,
    #[serde(default)]
    pub lambda_dephase: f64,
    #[serde(default)]
    pub alpha_decay: f64,
    #[serde(default)]
    pub flip: Option<FlipConfig>,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub phi: f64,
}

impl Default for SpinHalfConfig {
    fn default() -> Self {
        Self {
            omega: 1.0,
            lambda_dephase: 0.0,
            alpha_decay: 0.0,
            flip: None,
            theta: PI / 3.0,
            phi: 0.0,
        }
    }
}

impl SpinHalfConfig {
    /// Named starting points; individual fields can be overridden afterwards.
    pub fn preset(name: &str) -> Result<Self, SpinError> {
        let base = Self::default();
        let cfg = match name {
            "closed" => base,
            "dephasing" => Self {
                lambda_dephase: 0.1f64.sqrt(),
                ..base
            },
            "decay" => Self {
                alpha_decay: 0.05,
                theta: PI / 2.0,
                ..base
            },
            "dephasing+decay" => Self {
                lambda_dephase: 0.1f64.sqrt(),
                alpha_decay: 0.05,
                ..base
            },
            "spinflip" => Self {
                flip: Some(FlipConfig {
                    axis: [1.0, 0.0, 0.0],
                    strength: 0.3,
                }),
                theta: PI / 2.0,
                ..base
            },
            other => return Err(SpinError::UnknownPreset(other.to_string())),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        let bad = |m: String| Err(SpinError::InvalidConfig(m));
        for (name, v) in [
            ("omega", self.omega),
            ("lambda_dephase", self.lambda_dephase),
            ("alpha_decay", self.alpha_decay),
            ("theta", self.theta),
            ("phi", self.phi),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.lambda_dephase < 0.0 {
            return bad(format!(
                "lambda_dephase must be ≥ 0, got {}",
                self.lambda_dephase
            ));
        }
        if self.alpha_decay < 0.0 {
            return bad(format!("alpha_decay must be ≥ 0, got {}", self.alpha_decay));
        }
        if !(0.0..=PI).contains(&self.theta) {
            return bad(format!("theta must lie in [0, π], got {}", self.theta));
        }
        if !(0.0..2.0 * PI).contains(&self.phi) {
            return bad(format!("phi must lie in [0, 2π), got {}", self.phi));
        }
        if let Some(flip) = &self.flip {
            let n2: f64 = flip.axis.iter().map(|c| c * c).sum();
            if (n2.sqrt() - 1.0).abs() > AXIS_NORM_TOL {
                return bad(format!(
                    "flip axis must be a unit vector, |n| = {}",
                    n2.sqrt()
                ));
            }
            if !flip.strength.is_finite() {
                return bad("flip strength must be finite".into());
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> StateVector {
        state_from_angles(self.theta, self.phi)
    }
}

/// cos(θ/2)|0⟩ + e^{iφ} sin(θ/2)|1⟩.
pub fn state_from_angles(theta: f64, phi: f64) -> StateVector {
    StateVector::new(vec![
        C64::new((theta / 2.0).cos(), 0.0),
        C64::from_polar((theta / 2.0).sin(), phi),
    ])
    .expect("unit vector")
}

/// H = (ω/2)σ_z with channels λσ_z, ασ_−, s·σ_n̂ in that order (each only
/// when its coupling is non-zero).
pub fn build_model(cfg: &SpinHalfConfig) -> Result<LindbladModel, SpinError> {
    cfg.validate()?;
    let mut ops = Vec::new();
    let mut labels = Vec::new();
    if cfg.lambda_dephase > 0.0 {
        ops.push(pauli::sigma_z().scale_real(cfg.lambda_dephase));
        labels.push("dephasing".to_string());
    }
    if cfg.alpha_decay > 0.0 {
        ops.push(pauli::sigma_minus().scale_real(cfg.alpha_decay));
        labels.push("decay".to_string());
    }
    if let Some(flip) = &cfg.flip {
        if flip.strength != 0.0 {
            ops.push(pauli::sigma_axis(flip.axis).scale_real(flip.strength));
            labels.push("flip".to_string());
        }
    }
    if ops.is_empty() && cfg.omega == 0.0 {
        log::warn!("degenerate spin model: no Hamiltonian and no jump channels");
    }
    let hamiltonian = pauli::sigma_z().scale_real(cfg.omega / 2.0);
    Ok(LindbladModel::new(hamiltonian, ops)?.with_labels(labels)?)
}

/// (⟨σ_x⟩, ⟨σ_y⟩, ⟨σ_z⟩) of the normalized state.
pub fn bloch_from_state(psi: &StateVector) -> Result<[f64; 3], SpinError> {
    if psi.dim() != 2 {
        return Err(SpinError::NotQubit(psi.dim()));
    }
    let a = psi.amplitudes();
    let n = psi.norm_sqr();
    let c = a[0].conj() * a[1] * 2.0 / n;
    Ok([c.re, c.im, (a[0].norm_sqr() - a[1].norm_sqr()) / n])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlochSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochSample {
    pub fn vector(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Azimuth in (−π, π].
    pub fn azimuth(&self) -> f64 {
        self.y.atan2(self.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlochPath {
    samples: Vec<BlochSample>,
}

impl BlochPath {
    pub fn new(samples: Vec<BlochSample>) -> Result<Self, SpinError> {
        for (index, s) in samples.iter().enumerate() {
            let n2 = s.x * s.x + s.y * s.y + s.z * s.z;
            if n2 > 1.0 + 1e-9 {
                return Err(SpinError::OutsideBall {
                    index,
                    norm_sqr: n2,
                });
            }
            if index > 0 && s.t <= samples[index - 1].t {
                return Err(SpinError::TimesNotIncreasing(index));
            }
        }
        Ok(Self { samples })
    }

    /// Stored samples of a record. A sample sharing its time with the
    /// previous one (a jump at t = 0) replaces it.
    pub fn from_record(record: &TrajectoryRecord) -> Result<Self, SpinError> {
        let mut samples: Vec<BlochSample> = Vec::with_capacity(record.samples.len());
        for s in &record.samples {
            let [x, y, z] = bloch_from_state(&s.state)?;
            let b = BlochSample { t: s.time, x, y, z };
            match samples.last_mut() {
                Some(prev) if prev.t >= b.t => *prev = b,
                _ => samples.push(b),
            }
        }
        Self::new(samples)
    }

    pub fn samples(&self) -> &[BlochSample] {
        &self.samples
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        self.samples.iter().map(BlochSample::vector).collect()
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot(&v, &v).sqrt();
    (n > 1e-12).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

/// Signed area of the spherical triangle (a, b, c), positive when
/// counter-clockwise seen from outside.
fn triangle_excess(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    let num = dot(a, &cross(b, c));
    let den = 1.0 + dot(a, b) + dot(b, c) + dot(c, a);
    2.0 * num.atan2(den)
}

/// Reduces an area (defined modulo 4π) to (−2π, 2π].
fn reduce_area(a: f64) -> f64 {
    let r = a.rem_euclid(4.0 * PI);
    if r > 2.0 * PI {
        r - 4.0 * PI
    } else {
        r
    }
}

const ANTIPODAL_TOL: f64 = 1e-12;

/// Signed solid angle of a closed polygon of unit vectors, reduced to
/// (−2π, 2π]. Points are normalized first.
pub fn polygon_area(points: &[[f64; 3]], close_geodesically: bool) -> Result<f64, SpinError> {
    if points.len() < 3 {
        return Err(SpinError::TooFewPoints(points.len()));
    }
    let mut pts: Vec<[f64; 3]> = points
        .iter()
        .map(|p| {
            unit(*p).ok_or(SpinError::Requires(
                "solid angle",
                "pure states (non-zero Bloch vectors)",
            ))
        })
        .collect::<Result<_, _>>()?;
    let first = pts[0];
    let last = pts[pts.len() - 1];
    let closed = dot(&first, &last) > 1.0 - 1e-12;
    if closed {
        pts.pop();
    } else if !close_geodesically {
        return Err(SpinError::NotClosed);
    }
    let n = pts.len();
    for i in 0..n {
        let j = (i + 1) % n;
        if dot(&pts[i], &pts[j]) < -1.0 + ANTIPODAL_TOL {
            return Err(SpinError::Antipodal { index: i, next: j });
        }
    }
    if n < 3 {
        return Ok(0.0);
    }
    let mut normal = [0.0; 3];
    let mut centroid = [0.0; 3];
    for i in 0..n {
        let c = cross(&pts[i], &pts[(i + 1) % n]);
        for k in 0..3 {
            normal[k] += c[k];
            centroid[k] += pts[i][k];
        }
    }
    let candidates = [
        unit(normal),
        unit(centroid),
        Some([0.0, 0.0, 1.0]),
        Some([1.0, 0.0, 0.0]),
        Some([0.0, 1.0, 0.0]),
        Some([0.0, 0.0, -1.0]),
    ];
    let reference = candidates
        .into_iter()
        .flatten()
        .find(|r| pts.iter().all(|p| dot(r, p) > -1.0 + 1e-6))
        .unwrap_or([0.0, 0.0, 1.0]);
    let total: f64 = (0..n)
        .map(|i| triangle_excess(&reference, &pts[i], &pts[(i + 1) % n]))
        .sum();
    Ok(reduce_area(total))
}

/// Signed solid angle enclosed by a Bloch path.
pub fn solid_angle(path: &BlochPath, close_geodesically: bool) -> Result<f64, SpinError> {
    polygon_area(&path.points(), close_geodesically)
}

/// π(1 − cosθ): the cap phase for one precession period, as an unsigned
/// half-area.
pub fn dephasing_phase(theta: f64) -> f64 {
    PI * (1.0 - theta.cos())
}

fn require_pure_decay(cfg: &SpinHalfConfig) -> Result<(), SpinError> {
    cfg.validate()?;
    if !(cfg.alpha_decay > 0.0) || cfg.lambda_dephase != 0.0 || cfg.flip.is_some() {
        return Err(SpinError::Requires(
            "decay reference",
            "alpha_decay > 0 with no dephasing or flip channel",
        ));
    }
    Ok(())
}

/// No-jump geometric phase of the pure decay model over [0, T] from the
/// analytic propagator, with Simpson quadrature on `10 · DEFAULT_STEPS`
/// intervals.
pub fn decay_no_jump_reference(cfg: &SpinHalfConfig, total_time: f64) -> Result<f64, SpinError> {
    decay_no_jump_reference_with(cfg, total_time, 10 * DEFAULT_STEPS)
}

pub fn decay_no_jump_reference_with(
    cfg: &SpinHalfConfig,
    total_time: f64,
    intervals: usize,
) -> Result<f64, SpinError> {
    require_pure_decay(cfg)?;
    if !(total_time > 0.0) {
        return Err(SpinError::InvalidConfig(format!(
            "total time must be positive, got {total_time}"
        )));
    }
    // H̃ = diag(ω/2 − iα²/2, −ω/2), so each amplitude evolves independently.
    let (w, g) = (cfg.omega, cfg.alpha_decay * cfg.alpha_decay);
    let a0 = C64::new((cfg.theta / 2.0).cos(), 0.0);
    let a1 = C64::from_polar((cfg.theta / 2.0).sin(), cfg.phi);
    let at = |t: f64| {
        (
            a0 * C64::from_polar((-g * t / 2.0).exp(), -w * t / 2.0),
            a1 * C64::from_polar(1.0, w * t / 2.0),
        )
    };
    let energy = |t: f64| {
        let (u, v) = at(t);
        let (p, q) = (u.norm_sqr(), v.norm_sqr());
        0.5 * w * (p - q) / (p + q)
    };
    let n = intervals.max(2) + intervals % 2;
    let h = total_time / n as f64;
    let mut integral = energy(0.0) + energy(total_time);
    for i in 1..n {
        integral += energy(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    integral *= h / 3.0;
    let (u, v) = at(total_time);
    let overlap = u.conj() * a0 + v.conj() * a1;
    Ok(integral - overlap.arg())
}

/// The same phase in closed form at one period T = 2π/ω:
/// −(ω/α²)·ln(sin²(θ/2) + cos²(θ/2)·e^{−2πα²/ω}), wrapped to (−π, π].
pub fn decay_one_period_closed_form(cfg: &SpinHalfConfig) -> Result<f64, SpinError> {
    require_pure_decay(cfg)?;
    let g = cfg.alpha_decay * cfg.alpha_decay;
    let p = (cfg.theta / 2.0).cos().powi(2);
    let q = (cfg.theta / 2.0).sin().powi(2);
    let x = -(cfg.omega / g) * (q + p * (-2.0 * PI * g / cfg.omega).exp()).ln();
    Ok(wrap_phase(x))
}

/// π + (1/(2x))·ln⟨ψ₀|e^{−4πxσ_z}|ψ₀⟩ for a dimensionless coupling x; one
/// of the candidate closed forms compared in [`decay_expansion_report`].
pub fn decay_log_candidate(theta: f64, x: f64) -> f64 {
    let p = (theta / 2.0).cos().powi(2);
    let q = (theta / 2.0).sin().powi(2);
    PI + (p * (-4.0 * PI * x).exp() + q * (4.0 * PI * x).exp()).ln() / (2.0 * x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecaySweepRow {
    pub alpha: f64,
    pub gamma: f64,
    /// γ(α) − γ(0) on the circle.
    pub correction: f64,
    pub closed_form: f64,
    pub log_candidate_alpha: f64,
    pub log_candidate_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayExpansionReport {
    pub omega: f64,
    pub theta: f64,
    /// γ(0): the closed-system one-period phase in the crate's sign convention.
    pub limit: f64,
    /// π(1 − cosθ), the unsigned half cap area.
    pub unsigned_limit: f64,
    pub rows: Vec<DecaySweepRow>,
    /// Least-squares slope of the correction against α/ω.
    pub coefficient_alpha: f64,
    /// Least-squares slope of the correction against α²/ω.
    pub coefficient_rate: f64,
    /// (4π)²·sin²θ.
    pub candidate_16pi2: f64,
    /// 4π²·sin²θ.
    pub candidate_4pi2: f64,
    /// −(π²/2)·sin²θ, the slope against α²/ω implied by the closed form.
    pub closed_form_slope_rate: f64,
}

fn slope_through_origin(xs: &[f64], ys: &[f64]) -> f64 {
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    sxy / sxx
}

/// Sweeps α at fixed θ over one period and fits the small-coupling slope of
/// the phase correction. Diagnostic only.
pub fn decay_expansion_report(
    omega: f64,
    theta: f64,
    alphas: &[f64],
) -> Result<DecayExpansionReport, SpinError> {
    let total_time = 2.0 * PI / omega;
    let limit = wrap_phase(-PI * (1.0 - theta.cos()));
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = SpinHalfConfig {
            omega,
            alpha_decay: alpha,
            theta,
            ..SpinHalfConfig::default()
        };
        let gamma = decay_no_jump_reference(&cfg, total_time)?;
        rows.push(DecaySweepRow {
            alpha,
            gamma,
            correction: wrap_phase(gamma - limit),
            closed_form: decay_one_period_closed_form(&cfg)?,
            log_candidate_alpha: decay_log_candidate(theta, alpha / omega),
            log_candidate_rate: decay_log_candidate(theta, alpha * alpha / omega),
        });
    }
    let corrections: Vec<f64> = rows.iter().map(|r| r.correction).collect();
    let xa: Vec<f64> = alphas.iter().map(|a| a / omega).collect();
    let xr: Vec<f64> = alphas.iter().map(|a| a * a / omega).collect();
    let s2 = theta.sin().powi(2);
    Ok(DecayExpansionReport {
        omega,
        theta,
        limit,
        unsigned_limit: dephasing_phase(theta),
        coefficient_alpha: slope_through_origin(&xa, &corrections),
        coefficient_rate: slope_through_origin(&xr, &corrections),
        rows,
        candidate_16pi2: 16.0 * PI * PI * s2,
        candidate_4pi2: 4.0 * PI * PI * s2,
        closed_form_slope_rate: -0.5 * PI * PI * s2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaDecomposition {
    /// Signed solid angle of each no-jump stretch, closed geodesically.
    pub lobes: Vec<f64>,
    /// Σ lobes.
    pub signed_area: f64,
    /// Area of the whole path including the jump connectors.
    pub full_area: f64,
    /// −signed_area / 2, the phase predicted by the lobes.
    pub predicted_phase: f64,
}

fn lobe_area(points: &[[f64; 3]]) -> Result<f64, SpinError> {
    let mut distinct: Vec<[f64; 3]> = Vec::with_capacity(points.len());
    for p in points {
        if distinct.last().is_none_or(|q| dot(p, q) < 1.0 - 1e-15) {
            distinct.push(*p);
        }
    }
    if distinct.len() < 3 {
        return Ok(0.0);
    }
    polygon_area(&distinct, true)
}

/// Splits a qubit trajectory at its jumps and measures each no-jump stretch
/// (start, stored samples, pre-jump state) as a geodesically closed lobe.
pub fn flip_partial_areas(record: &TrajectoryRecord) -> Result<AreaDecomposition, SpinError> {
    if record.initial_state.dim() != 2 {
        return Err(SpinError::NotQubit(record.initial_state.dim()));
    }
    let n_segments = record.events.len() + 1;
    let mut segments: Vec<Vec<[f64; 3]>> = vec![Vec::new(); n_segments];
    for s in &record.samples {
        segments[s.segment].push(bloch_from_state(&s.state)?);
    }
    for (k, pre) in record.pre_jump_states.iter().enumerate() {
        segments[k].push(bloch_from_state(pre)?);
    }
    let lobes = segments
        .iter()
        .map(|seg| lobe_area(seg))
        .collect::<Result<Vec<_>, _>>()?;
    let full: Vec<[f64; 3]> = segments.concat();
    let full_area = lobe_area(&full)?;
    let signed_area = reduce_area(lobes.iter().sum());
    Ok(AreaDecomposition {
        predicted_phase: wrap_phase(-signed_area / 2.0),
        lobes,
        signed_area,
        full_area,
    })
}
