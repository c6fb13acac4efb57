//! Dense complex linear algebra for few-level systems.
//!
//! Matrices are stored row-major. Everything here is sized for dimensions
//! between 2 and roughly 16, so the routines favour clarity and robustness
//! over blocking or vectorization.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Default relative accuracy requested from [`mat_exp`].
pub const EXPM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix shape {rows}x{cols} does not match {len} entries")]
    BadShape {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("the zero vector is not a valid state")]
    ZeroVector,
    #[error("empty matrix or vector")]
    Empty,
    #[error("singular matrix in linear solve")]
    Singular,
}

fn check_finite(values: &[C64]) -> Result<(), LinalgError> {
    match values
        .iter()
        .position(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        Some(index) => Err(LinalgError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Dense complex matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty);
        }
        if data.len() != rows * cols {
            return Err(LinalgError::BadShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self, LinalgError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(LinalgError::DimensionMismatch {
                    expected: n_cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(n_rows, n_cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Outer product |a⟩⟨b|.
    pub fn outer(a: &StateVector, b: &StateVector) -> Self {
        let (n, m) = (a.dim(), b.dim());
        let mut out = Self::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                out.data[i * m + j] = a.amps[i] * b.amps[j].conj();
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: C64) {
        self.data[i * self.cols + j] = value;
    }

    fn require_square(&self) -> Result<usize, LinalgError> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(LinalgError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, LinalgError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, LinalgError> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.rows,
                found: other.rows,
            });
        }
        if self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                found: other.cols,
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![ZERO; n * m];
        for i in 0..n {
            for l in 0..k {
                let a = self.data[i * k + l];
                if a == ZERO {
                    continue;
                }
                let row = &other.data[l * m..(l + 1) * m];
                let dst = &mut out[i * m..(i + 1) * m];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: out,
        })
    }

    /// Matrix-vector product.
    pub fn apply(&self, psi: &StateVector) -> Result<StateVector, LinalgError> {
        if self.cols != psi.dim() {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                found: psi.dim(),
            });
        }
        Ok(StateVector {
            amps: self.apply_slice(&psi.amps),
        })
    }

    pub(crate) fn apply_slice(&self, v: &[C64]) -> Vec<C64> {
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols))
            .map(|i| self.data[i * self.cols + i])
            .sum()
    }

    /// Largest entry modulus, ‖·‖_max.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Induced 1-norm (maximum absolute column sum).
    pub fn norm1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// ‖M − M†‖_max.
    pub fn hermiticity_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    /// (M + M†)/2.
    pub fn hermitian_part(&self) -> Self {
        let adj = self.adjoint();
        self.zip_with(&adj, |a, b| (a + b) * 0.5)
            .expect("adjoint of a square matrix has the same shape")
    }

    /// Eigenvalues of the Hermitian part of a square matrix, ascending.
    pub fn hermitian_eigenvalues(&self) -> Result<Vec<f64>, LinalgError> {
        let n = self.require_square()?;
        let h = self.hermitian_part();
        let m = nalgebra::DMatrix::<C64>::from_row_slice(n, n, &h.data);
        let mut eig: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        Ok(eig)
    }

    /// Trace norm ‖M‖₁ of a Hermitian matrix (sum of |eigenvalues|).
    pub fn hermitian_trace_norm(&self) -> Result<f64, LinalgError> {
        Ok(self.hermitian_eigenvalues()?.iter().map(|e| e.abs()).sum())
    }

    /// Solves `self · X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self, LinalgError> {
        let n = self.require_square()?;
        if rhs.rows != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: rhs.rows,
            });
        }
        let m = rhs.cols;
        let mut a = self.data.clone();
        let mut b = rhs.data.clone();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r, &s| a[r * n + col].norm().total_cmp(&a[s * n + col].norm()))
                .expect("non-empty pivot range");
            if a[pivot * n + col].norm() <= scale * 1e-300 {
                return Err(LinalgError::Singular);
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot * n + j);
                }
                for j in 0..m {
                    b.swap(col * m + j, pivot * m + j);
                }
            }
            let inv = ONE / a[col * n + col];
            for r in col + 1..n {
                let factor = a[r * n + col] * inv;
                if factor == ZERO {
                    continue;
                }
                for j in col..n {
                    let v = a[col * n + j];
                    a[r * n + j] -= factor * v;
                }
                for j in 0..m {
                    let v = b[col * m + j];
                    b[r * m + j] -= factor * v;
                }
            }
        }
        for col in (0..n).rev() {
            let inv = ONE / a[col * n + col];
            for j in 0..m {
                let mut acc = b[col * m + j];
                for k in col + 1..n {
                    acc -= a[col * n + k] * b[k * m + j];
                }
                b[col * m + j] = acc * inv;
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: b,
        })
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self.get(i, j);
                write!(f, "{:+.6}{:+.6}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl<'a> Mul<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        self.try_mul(rhs).expect("matrix product shape mismatch")
    }
}

impl<'a> Add<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        self.try_add(rhs).expect("matrix sum shape mismatch")
    }
}

impl<'a> Sub<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        self.try_sub(rhs).expect("matrix difference shape mismatch")
    }
}

/// A (not necessarily normalized) pure state.
#[derive(Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Result<Self, LinalgError> {
        if amps.is_empty() {
            return Err(LinalgError::Empty);
        }
        check_finite(&amps)?;
        let norm_sqr: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        if norm_sqr == 0.0 {
            return Err(LinalgError::ZeroVector);
        }
        Ok(Self { amps })
    }

    /// Standard basis vector |k⟩.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut amps = vec![ZERO; dim];
        amps[k] = ONE;
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalized(&self) -> Self {
        let inv = 1.0 / self.norm();
        self.scale(C64::new(inv, 0.0))
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            amps: self.amps.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm_sqr() - 1.0).abs() <= tol
    }
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.amps.iter().map(|z| (z.re, z.im)))
            .finish()
    }
}

fn check_dims(a: usize, b: usize) -> Result<(), LinalgError> {
    if a == b {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch {
            expected: a,
            found: b,
        })
    }
}

/// ⟨a|b⟩, conjugate-linear in `a`.
pub fn inner_product(a: &StateVector, b: &StateVector) -> Result<C64, LinalgError> {
    check_dims(a.dim(), b.dim())?;
    Ok(a.amps.iter().zip(&b.amps).map(|(x, &y)| x.conj() * y).sum())
}

/// ⟨ψ|op|ψ⟩ / ⟨ψ|ψ⟩.
pub fn expectation(op: &ComplexMatrix, psi: &StateVector) -> Result<C64, LinalgError> {
    let n = op.require_square()?;
    check_dims(n, psi.dim())?;
    let applied = op.apply_slice(&psi.amps);
    let num: C64 = psi
        .amps
        .iter()
        .zip(&applied)
        .map(|(x, &y)| x.conj() * y)
        .sum();
    Ok(num / psi.norm_sqr())
}

/// exp(scale · m) to the default relative tolerance.
pub fn mat_exp(m: &ComplexMatrix, scale: C64) -> Result<ComplexMatrix, LinalgError> {
    mat_exp_with_tol(m, scale, EXPM_TOL)
}

/// exp(scale · m). Two-level matrices use the closed form
/// e^{μ}(cosh s · 1 + sinh s / s · B) with B the traceless part;
/// larger ones use scaling and squaring around a [6/6] Padé approximant.
pub fn mat_exp_with_tol(
    m: &ComplexMatrix,
    scale: C64,
    tol: f64,
) -> Result<ComplexMatrix, LinalgError> {
    let n = m.require_square()?;
    let a = m.scale(scale);
    if n == 2 {
        return Ok(expm_2x2(&a));
    }
    Ok(expm_pade(&a, tol))
}

pub(crate) fn expm_2x2(a: &ComplexMatrix) -> ComplexMatrix {
    let (p, q, r, s) = (a.get(0, 0), a.get(0, 1), a.get(1, 0), a.get(1, 1));
    let mu = (p + s) * 0.5;
    let half_diff = (p - s) * 0.5;
    // B = [[half_diff, q], [r, -half_diff]], B² = z·1.
    let z = half_diff * half_diff + q * r;
    let (cosh, sinhc) = if z.norm() < 1e-6 {
        (
            ONE + z / 2.0 + z * z / 24.0 + z * z * z / 720.0,
            ONE + z / 6.0 + z * z / 120.0 + z * z * z / 5040.0,
        )
    } else {
        let root = z.sqrt();
        (root.cosh(), root.sinh() / root)
    };
    let e = mu.exp();
    let data = vec![
        e * (cosh + sinhc * half_diff),
        e * sinhc * q,
        e * sinhc * r,
        e * (cosh - sinhc * half_diff),
    ];
    ComplexMatrix {
        rows: 2,
        cols: 2,
        data,
    }
}

/// Padé [6/6] truncation constant (q!)² / ((2q)! (2q+1)!) for q = 6.
const PADE6_ERROR_CONST: f64 = 518_400.0 / (479_001_600.0 * 6_227_020_800.0);

pub(crate) fn expm_pade(a: &ComplexMatrix, tol: f64) -> ComplexMatrix {
    const Q: usize = 6;
    let n = a.rows;
    let theta = (tol / PADE6_ERROR_CONST).powf(1.0 / 13.0).min(1.0);
    let norm = a.norm1();
    let squarings = if norm > theta {
        (norm / theta).log2().ceil() as i32
    } else {
        0
    };
    let a = a.scale_real(0.5f64.powi(squarings));

    // c_k = (2q-k)! q! / ((2q)! k! (q-k)!)
    let mut coeffs = [1.0f64; Q + 1];
    for k in 1..=Q {
        coeffs[k] = coeffs[k - 1] * (Q + 1 - k) as f64 / (k * (2 * Q + 1 - k)) as f64;
    }
    let ident = ComplexMatrix::identity(n);
    let mut power = ident.clone();
    let mut num = ident.clone();
    let mut den = ident;
    for (k, &c) in coeffs.iter().enumerate().skip(1) {
        power = &power * &a;
        let term = power.scale_real(c);
        num = &num + &term;
        den = if k % 2 == 0 {
            &den + &term
        } else {
            &den - &term
        };
    }
    let mut result = den
        .solve(&num)
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Pauli and ladder matrices in the basis {|0⟩, |1⟩} with σ_z|0⟩ = +|0⟩.
pub mod pauli {
    use super::{ComplexMatrix, C64, I, ONE, ZERO};

    fn m2(a: C64, b: C64, c: C64, d: C64) -> ComplexMatrix {
        ComplexMatrix::new(2, 2, vec![a, b, c, d]).expect("2x2 literal")
    }

    pub fn identity() -> ComplexMatrix {
        ComplexMatrix::identity(2)
    }

    pub fn sigma_x() -> ComplexMatrix {
        m2(ZERO, ONE, ONE, ZERO)
    }

    pub fn sigma_y() -> ComplexMatrix {
        m2(ZERO, -I, I, ZERO)
    }

    pub fn sigma_z() -> ComplexMatrix {
        m2(ONE, ZERO, ZERO, -ONE)
    }

    /// σ_− = |1⟩⟨0|: lowers the excited state |0⟩ (+z) to the ground state |1⟩ (−z).
    pub fn sigma_minus() -> ComplexMatrix {
        m2(ZERO, ZERO, ONE, ZERO)
    }

    /// σ_+ = |0⟩⟨1|.
    pub fn sigma_plus() -> ComplexMatrix {
        m2(ZERO, ONE, ZERO, ZERO)
    }

    /// n̂·σ for a (not necessarily unit) axis.
    pub fn sigma_axis(axis: [f64; 3]) -> ComplexMatrix {
        let [x, y, z] = axis;
        m2(
            C64::new(z, 0.0),
            C64::new(x, -y),
            C64::new(x, y),
            C64::new(-z, 0.0),
        )
    }
}
