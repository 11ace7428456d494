//! Dense complex operators on one and two qubits.
//!
//! Everything here works with fixed dimensions (2 and 4) stored row-major.
//! Validation (Hermiticity, trace, positivity) is explicit: arithmetic never
//! checks, the `validate_*` functions and the state constructors do.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Slack on `|n| <= 1` for Bloch vectors.
pub const BLOCH_NORM_SLACK: f64 = 1e-9;
/// Absolute tolerance for Hermiticity of stored operators.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance for Hermiticity and unit trace of incoming density matrices.
pub const DENSITY_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted for a two-qubit density matrix.
pub const MIN_EIGENVALUE_TOL: f64 = -1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Square complex matrix of fixed dimension `D`, row-major.
#[derive(Clone, Copy, PartialEq)]
pub struct Operator<const D: usize> {
    entries: [[C64; D]; D],
}

pub type Operator2 = Operator<2>;
pub type Operator4 = Operator<4>;

/// The Pauli matrices σx, σy, σz.
pub const PAULI: [Operator2; 3] = [
    Operator {
        entries: [[ZERO, ONE], [ONE, ZERO]],
    },
    Operator {
        entries: [[ZERO, C64::new(0.0, -1.0)], [I, ZERO]],
    },
    Operator {
        entries: [[ONE, ZERO], [ZERO, C64::new(-1.0, 0.0)]],
    },
];

impl<const D: usize> Operator<D> {
    pub const fn from_rows(entries: [[C64; D]; D]) -> Self {
        Self { entries }
    }

    pub fn zeros() -> Self {
        Self {
            entries: [[ZERO; D]; D],
        }
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..D {
            m.entries[i][i] = ONE;
        }
        m
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros();
        for i in 0..D {
            for j in 0..D {
                m.entries[i][j] = f(i, j);
            }
        }
        m
    }

    pub fn diagonal(d: [f64; D]) -> Self {
        let mut m = Self::zeros();
        for i in 0..D {
            m.entries[i][i] = C64::new(d[i], 0.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> &[[C64; D]; D] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[i][j]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(|i, j| self.entries[j][i].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..D).map(|i| self.entries[i][i]).sum()
    }

    pub fn scale(&self, c: C64) -> Self {
        Self::from_fn(|i, j| self.entries[i][j] * c)
    }

    pub fn scale_real(&self, c: f64) -> Self {
        Self::from_fn(|i, j| self.entries[i][j] * c)
    }

    pub fn commutator(&self, other: &Self) -> Self {
        *self * *other - *other * *self
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        *self * *other + *other * *self
    }

    /// `self · rho · self†`.
    pub fn sandwich(&self, rho: &Self) -> Self {
        *self * *rho * self.adjoint()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().flatten().all(|z| z.is_finite())
    }

    /// Largest deviation from Hermiticity, `max |a_ij - conj(a_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..D {
            for j in i..D {
                worst = worst.max((self.entries[i][j] - self.entries[j][i].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    /// Frobenius distance to `other`.
    pub fn distance(&self, other: &Self) -> f64 {
        (*self - *other).frobenius_norm()
    }

    /// Eigenvalues of the Hermitian part, ascending. Uses a dense
    /// Hermitian eigensolver; for `D = 2` prefer [`Operator2::eigenvalues_2x2`].
    pub fn hermitian_eigenvalues(&self) -> [f64; D] {
        let m = DMatrix::from_fn(D, D, |i, j| {
            (self.entries[i][j] + self.entries[j][i].conj()) * 0.5
        });
        let eig = m.symmetric_eigenvalues();
        let mut out = [0.0; D];
        for (o, e) in out.iter_mut().zip(eig.iter()) {
            *o = *e;
        }
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.hermitian_eigenvalues()[0]
    }
}

impl Operator2 {
    /// `v · σ` for a real 3-vector.
    pub fn dot_sigma(v: [f64; 3]) -> Self {
        Self::from_rows([
            [C64::new(v[2], 0.0), C64::new(v[0], -v[1])],
            [C64::new(v[0], v[1]), C64::new(-v[2], 0.0)],
        ])
    }

    /// Closed-form eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues_2x2(&self) -> [f64; 2] {
        let a = self.entries[0][0].re;
        let d = self.entries[1][1].re;
        let b = (self.entries[0][1] + self.entries[1][0].conj()) * 0.5;
        let mean = 0.5 * (a + d);
        let half_gap = (0.25 * (a - d).powi(2) + b.norm_sqr()).sqrt();
        [mean - half_gap, mean + half_gap]
    }

    /// Real Pauli coefficients `Tr(A σ_i)` (real parts).
    pub fn pauli_components(&self) -> [f64; 3] {
        let e = &self.entries;
        [
            (e[0][1] + e[1][0]).re,
            (I * (e[0][1] - e[1][0])).re,
            (e[0][0] - e[1][1]).re,
        ]
    }
}

impl<const D: usize> Default for Operator<D> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<const D: usize> fmt::Debug for Operator<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.iter()).finish()
    }
}

impl<const D: usize> Add for Operator<D> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.entries[i][j] + rhs.entries[i][j])
    }
}

impl<const D: usize> AddAssign for Operator<D> {
    fn add_assign(&mut self, rhs: Self) {
        for i in 0..D {
            for j in 0..D {
                self.entries[i][j] += rhs.entries[i][j];
            }
        }
    }
}

impl<const D: usize> Sub for Operator<D> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.entries[i][j] - rhs.entries[i][j])
    }
}

impl<const D: usize> Neg for Operator<D> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale_real(-1.0)
    }
}

impl<const D: usize> Mul for Operator<D> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..D {
            for k in 0..D {
                let a = self.entries[i][k];
                for j in 0..D {
                    out.entries[i][j] += a * rhs.entries[k][j];
                }
            }
        }
        out
    }
}

impl<const D: usize> Mul<C64> for Operator<D> {
    type Output = Self;
    fn mul(self, rhs: C64) -> Self {
        self.scale(rhs)
    }
}

impl<const D: usize> Mul<f64> for Operator<D> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale_real(rhs)
    }
}

/// Kronecker product, `(a ⊗ b)[2i+k][2j+l] = a[i][j] · b[k][l]`.
pub fn tensor(a: &Operator2, b: &Operator2) -> Operator4 {
    Operator4::from_fn(|r, c| a.entries[r / 2][c / 2] * b.entries[r % 2][c % 2])
}

/// Which factor of a two-qubit system to keep in a partial trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subsystem {
    A,
    B,
}

impl FromStr for Subsystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Subsystem::A),
            "B" | "b" => Ok(Subsystem::B),
            other => Err(Error::Usage(format!(
                "unknown subsystem label {other:?} (expected A or B)"
            ))),
        }
    }
}

/// Reduced state of a two-qubit density matrix.
pub fn partial_trace(rho4: &Operator4, keep: Subsystem) -> Result<Operator2> {
    validate_hermitian_unit_trace(rho4)?;
    Ok(partial_trace_unchecked(rho4, keep))
}

pub(crate) fn partial_trace_unchecked(rho4: &Operator4, keep: Subsystem) -> Operator2 {
    let e = rho4.rows();
    match keep {
        Subsystem::A => Operator2::from_fn(|i, j| e[2 * i][2 * j] + e[2 * i + 1][2 * j + 1]),
        Subsystem::B => Operator2::from_fn(|k, l| e[k][l] + e[2 + k][2 + l]),
    }
}

/// Checks Hermiticity and unit trace within [`DENSITY_TOL`].
pub fn validate_hermitian_unit_trace<const D: usize>(rho: &Operator<D>) -> Result<()> {
    if !rho.is_finite() {
        return Err(Error::InvalidOperator("non-finite entries".into()));
    }
    let defect = rho.hermiticity_defect();
    if defect > DENSITY_TOL {
        return Err(Error::InvalidOperator(format!(
            "not Hermitian (defect {defect:e})"
        )));
    }
    let tr = rho.trace();
    if (tr - ONE).norm() > DENSITY_TOL {
        return Err(Error::InvalidOperator(format!(
            "trace {} + {}i differs from 1",
            tr.re, tr.im
        )));
    }
    Ok(())
}

/// Validates a single-qubit density matrix: Hermitian, unit trace, positive.
pub fn validate_density(rho: &Operator2) -> Result<()> {
    validate_hermitian_unit_trace(rho)?;
    let lo = rho.eigenvalues_2x2()[0];
    if lo < -BLOCH_NORM_SLACK {
        return Err(Error::InvalidState(format!(
            "density matrix has eigenvalue {lo:e}"
        )));
    }
    Ok(())
}

/// Qubit state as a Bloch vector, `ρ = (I + n·σ)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlochState {
    n: [f64; 3],
}

impl BlochState {
    pub const MAXIMALLY_MIXED: BlochState = BlochState { n: [0.0; 3] };

    pub fn new(n: [f64; 3]) -> Result<Self> {
        if n.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidState("non-finite Bloch vector".into()));
        }
        let s = Self { n };
        let norm = s.norm();
        if norm > 1.0 + BLOCH_NORM_SLACK {
            return Err(Error::InvalidState(format!(
                "Bloch vector norm {norm} exceeds 1"
            )));
        }
        Ok(s)
    }

    /// Wraps a vector without the norm check; used for integrator samples,
    /// which are audited separately.
    pub(crate) fn from_raw(n: [f64; 3]) -> Self {
        Self { n }
    }

    #[inline]
    pub fn components(&self) -> [f64; 3] {
        self.n
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::from(self.n)
    }

    pub fn norm(&self) -> f64 {
        self.vector().norm()
    }

    pub fn distance(&self, other: &BlochState) -> f64 {
        (self.vector() - other.vector()).norm()
    }
}

impl From<Vector3<f64>> for BlochState {
    fn from(v: Vector3<f64>) -> Self {
        Self::from_raw([v.x, v.y, v.z])
    }
}

/// `(I + n·σ)/2`.
pub fn bloch_to_density(n: &BlochState) -> Result<Operator2> {
    BlochState::new(n.n)?;
    Ok(bloch_to_density_unchecked(n.n))
}

pub(crate) fn bloch_to_density_unchecked(n: [f64; 3]) -> Operator2 {
    (Operator2::identity() + Operator2::dot_sigma(n)) * 0.5
}

/// `n_i = Tr(ρ σ_i)`.
pub fn density_to_bloch(rho: &Operator2) -> Result<BlochState> {
    validate_hermitian_unit_trace(rho)?;
    Ok(BlochState::from_raw(rho.pauli_components()))
}

/// Two-qubit state in Pauli form: marginal Bloch vectors and correlation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoQubitState {
    pub n_a: [f64; 3],
    pub n_b: [f64; 3],
    pub t: [[f64; 3]; 3],
}

impl TwoQubitState {
    /// Builds the state and checks that it is a valid density matrix.
    pub fn new(n_a: [f64; 3], n_b: [f64; 3], t: [[f64; 3]; 3]) -> Result<Self> {
        let s = Self { n_a, n_b, t };
        two_qubit_assemble(&s)?;
        Ok(s)
    }

    pub fn product(a: &BlochState, b: &BlochState) -> Self {
        let (a, b) = (a.components(), b.components());
        Self {
            n_a: a,
            n_b: b,
            t: std::array::from_fn(|i| std::array::from_fn(|j| a[i] * b[j])),
        }
    }

    /// Pauli coefficients of a two-qubit operator: `Tr(ρ σ_i⊗I)`, `Tr(ρ I⊗σ_j)`, `Tr(ρ σ_i⊗σ_j)`.
    pub fn from_density(rho4: &Operator4) -> Self {
        let id = Operator2::identity();
        let coeff = |op: Operator4| (op * *rho4).trace().re;
        Self {
            n_a: std::array::from_fn(|i| coeff(tensor(&PAULI[i], &id))),
            n_b: std::array::from_fn(|j| coeff(tensor(&id, &PAULI[j]))),
            t: std::array::from_fn(|i| {
                std::array::from_fn(|j| coeff(tensor(&PAULI[i], &PAULI[j])))
            }),
        }
    }

    pub fn marginal_a(&self) -> BlochState {
        BlochState::from_raw(self.n_a)
    }

    pub fn marginal_b(&self) -> BlochState {
        BlochState::from_raw(self.n_b)
    }

    pub fn density_a(&self) -> Operator2 {
        bloch_to_density_unchecked(self.n_a)
    }

    pub fn density_b(&self) -> Operator2 {
        bloch_to_density_unchecked(self.n_b)
    }
}

/// `¼(I⊗I + n_A·σ⊗I + I⊗n_B·σ + T_ij σ_i⊗σ_j)`, rejected if not positive.
pub fn two_qubit_assemble(s: &TwoQubitState) -> Result<Operator4> {
    let rho = two_qubit_assemble_unchecked(s);
    if !rho.is_finite() {
        return Err(Error::InvalidState(
            "non-finite two-qubit parameters".into(),
        ));
    }
    let lo = rho.min_eigenvalue();
    if lo < MIN_EIGENVALUE_TOL {
        return Err(Error::InvalidState(format!(
            "two-qubit operator has eigenvalue {lo:e}"
        )));
    }
    Ok(rho)
}

pub(crate) fn two_qubit_assemble_unchecked(s: &TwoQubitState) -> Operator4 {
    let id = Operator2::identity();
    let mut rho = tensor(&id, &id)
        + tensor(&Operator2::dot_sigma(s.n_a), &id)
        + tensor(&id, &Operator2::dot_sigma(s.n_b));
    for i in 0..3 {
        for j in 0..3 {
            if s.t[i][j] != 0.0 {
                rho += tensor(&PAULI[i], &PAULI[j]) * s.t[i][j];
            }
        }
    }
    rho * 0.25
}
