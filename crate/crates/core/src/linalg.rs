//! Small dense complex matrix algebra.
//!
//! Everything here is sized for qubit problems: system dimension 2, extended
//! (system + ancilla) dimension 4, and superoperators on the vectorized space
//! of either. Nothing is hard-wired to dimension 2.
//!
//! Vectorization is column-stacking: `vec(ρ)[i + j·d] = ρ[i][j]`. With that
//! convention `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`, so the sandwich `ρ ↦ A ρ A†` is
//! represented by `conj(A) ⊗ A`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Numerical tolerances shared by every module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Structural checks: positivity, Hermiticity of user input, linearity.
    pub structural: f64,
    /// Algebraic identities that hold up to rounding.
    pub algebraic: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        structural: 1e-10,
        algebraic: 1e-12,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Square complex matrix stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| if i == j { ONE } else { ZERO })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    /// Builds a matrix from row-major entries. Panics if `entries.len()` is
    /// not a perfect square.
    pub fn from_row_major(entries: Vec<C64>) -> Self {
        let dim = (entries.len() as f64).sqrt().round() as usize;
        assert_eq!(dim * dim, entries.len(), "entries do not form a square matrix");
        Self { dim, data: entries }
    }

    pub fn from_real(dim: usize, entries: &[f64]) -> Self {
        assert_eq!(entries.len(), dim * dim);
        Self {
            dim,
            data: entries.iter().map(|&x| C64::new(x, 0.0)).collect(),
        }
    }

    pub fn diag(entries: &[C64]) -> Self {
        Self::from_fn(entries.len(), |i, j| if i == j { entries[i] } else { ZERO })
    }

    /// `|u⟩⟨v|`
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        assert_eq!(u.len(), v.len());
        Self::from_fn(u.len(), |i, j| u[i] * v[j].conj())
    }

    /// Matrix unit `|i⟩⟨j|`.
    pub fn unit(dim: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(i, j)] = ONE;
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn dagger(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// Kronecker product `self ⊗ other`; `self` carries the slow index.
    pub fn kron(&self, other: &Self) -> Self {
        let (a, b) = (self.dim, other.dim);
        Self::from_fn(a * b, |r, c| self[(r / b, c / b)] * other[(r % b, c % b)])
    }

    pub fn powi(&self, n: u32) -> Self {
        (0..n).fold(Self::identity(self.dim), |acc, _| &acc * self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest element of `|m − m†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in i..self.dim {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn hermitian_part(&self) -> Self {
        (self + &self.dagger()).scale_real(0.5)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        (0..self.dim)
            .map(|j| (0..self.dim).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        let gram = (&self.dagger() * self).hermitian_part();
        let eigs = hermitian_eigs(&gram).expect("Gram matrix is Hermitian");
        eigs.last().copied().unwrap_or(0.0).max(0.0).sqrt()
    }

    /// Sum of singular values; for Hermitian input, the sum of |eigenvalues|.
    pub fn trace_norm_hermitian(&self) -> Result<f64> {
        Ok(hermitian_eigs(self)?.iter().map(|x| x.abs()).sum())
    }

    /// `⟨u| self |u⟩`
    pub fn expectation(&self, state: &ComplexMatrix) -> C64 {
        (self * state).trace()
    }

    /// Column-stacked vector.
    pub fn vectorize(&self) -> Vec<C64> {
        let d = self.dim;
        let mut v = vec![ZERO; d * d];
        for j in 0..d {
            for i in 0..d {
                v[i + j * d] = self[(i, j)];
            }
        }
        v
    }

    pub fn unvectorize(v: &[C64]) -> Self {
        let d = (v.len() as f64).sqrt().round() as usize;
        assert_eq!(d * d, v.len());
        Self::from_fn(d, |i, j| v[i + j * d])
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|i| (0..self.dim).map(|k| self[(i, k)] * v[k]).sum())
            .collect()
    }

    fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in add");
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in sub");
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in mul");
        let d = self.dim;
        let mut out = ComplexMatrix::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * rhs.data[k * d + j];
                }
            }
        }
        out
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

impl Mul<C64> for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: C64) -> ComplexMatrix {
        self.scale(rhs)
    }
}

impl Mul<f64> for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: f64) -> ComplexMatrix {
        self.scale_real(rhs)
    }
}

macro_rules! forward_owned_binop {
    ($trait:ident, $method:ident) => {
        impl $trait for ComplexMatrix {
            type Output = ComplexMatrix;
            fn $method(self, rhs: ComplexMatrix) -> ComplexMatrix {
                (&self).$method(&rhs)
            }
        }
        impl $trait<&ComplexMatrix> for ComplexMatrix {
            type Output = ComplexMatrix;
            fn $method(self, rhs: &ComplexMatrix) -> ComplexMatrix {
                (&self).$method(rhs)
            }
        }
        impl $trait<ComplexMatrix> for &ComplexMatrix {
            type Output = ComplexMatrix;
            fn $method(self, rhs: ComplexMatrix) -> ComplexMatrix {
                self.$method(&rhs)
            }
        }
    };
}

forward_owned_binop!(Add, add);
forward_owned_binop!(Sub, sub);
forward_owned_binop!(Mul, mul);

impl Mul<f64> for ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: f64) -> ComplexMatrix {
        self.scale_real(rhs)
    }
}

impl Mul<C64> for ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: C64) -> ComplexMatrix {
        self.scale(rhs)
    }
}

impl Neg for ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&ComplexMatrix> for ComplexMatrix {
    fn sub_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

/// Conjugate transpose.
pub fn dagger(m: &ComplexMatrix) -> ComplexMatrix {
    m.dagger()
}

/// Qubit operators. Index 0 is the excited state |e⟩ and index 1 the ground
/// state |g⟩, so `σ_z = diag(1, −1)` and `σ₋ = |g⟩⟨e|`.
pub mod qubit {
    use super::*;

    pub fn identity() -> ComplexMatrix {
        ComplexMatrix::identity(2)
    }

    pub fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_real(2, &[0.0, 1.0, 1.0, 0.0])
    }

    pub fn sigma_y() -> ComplexMatrix {
        ComplexMatrix::from_row_major(vec![ZERO, -I, I, ZERO])
    }

    pub fn sigma_z() -> ComplexMatrix {
        ComplexMatrix::from_real(2, &[1.0, 0.0, 0.0, -1.0])
    }

    pub fn sigma_minus() -> ComplexMatrix {
        ComplexMatrix::from_real(2, &[0.0, 0.0, 1.0, 0.0])
    }

    pub fn sigma_plus() -> ComplexMatrix {
        ComplexMatrix::from_real(2, &[0.0, 1.0, 0.0, 0.0])
    }

    /// `|e⟩⟨e|`
    pub fn excited() -> ComplexMatrix {
        ComplexMatrix::from_real(2, &[1.0, 0.0, 0.0, 0.0])
    }

    /// `|g⟩⟨g|`
    pub fn ground() -> ComplexMatrix {
        ComplexMatrix::from_real(2, &[0.0, 0.0, 0.0, 1.0])
    }
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and the
/// unitary whose columns are the matching eigenvectors.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let d: Vec<C64> = self.values.iter().map(|&x| C64::new(x, 0.0)).collect();
        &(&self.vectors * &ComplexMatrix::diag(&d)) * &self.vectors.dagger()
    }

    /// Column `k` of the eigenvector matrix.
    pub fn vector(&self, k: usize) -> Vec<C64> {
        (0..self.vectors.dim()).map(|i| self.vectors[(i, k)]).collect()
    }
}

fn check_hermitian(m: &ComplexMatrix) -> Result<()> {
    let deviation = m.hermiticity_defect();
    if !(deviation <= Tolerances::DEFAULT.structural) {
        return Err(Error::NonHermitianInput { deviation });
    }
    Ok(())
}

/// Cyclic complex Jacobi diagonalization.
pub fn hermitian_eigh(m: &ComplexMatrix) -> Result<HermitianEigen> {
    check_hermitian(m)?;
    let n = m.dim();
    let mut a = m.hermitian_part();
    let mut v = ComplexMatrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= 1e-300 {
                    continue;
                }
                // Phase-rotate the pair onto the real 2×2 problem
                // [[app, r], [r, aqq]] and zero its off-diagonal.
                let phase = apq / r;
                let (app, aqq) = (a[(p, p)].re, a[(q, q)].re);
                let theta = 0.5 * (2.0 * r).atan2(app - aqq);
                let (s, c) = theta.sin_cos();
                let pc = phase.conj();
                // Columns: A ← A V with V = [[c, −s], [s·e^{−iφ}, c·e^{−iφ}]].
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c + akq * pc * s;
                    a[(k, q)] = -akp * s + akq * pc * c;
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c + vkq * pc * s;
                    v[(k, q)] = -vkp * s + vkq * pc * c;
                }
                // Rows: A ← V† A.
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c + aqk * phase * s;
                    a[(q, k)] = -apk * s + aqk * phase * c;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&k| a[(k, k)].re).collect();
    let vectors = ComplexMatrix::from_fn(n, |i, j| v[(i, order[j])]);
    Ok(HermitianEigen { values, vectors })
}

/// Ascending real eigenvalues of a Hermitian matrix.
pub fn hermitian_eigs(m: &ComplexMatrix) -> Result<Vec<f64>> {
    if m.dim() == 2 {
        check_hermitian(m)?;
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
        let mean = 0.5 * (a + d);
        let half_gap = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        return Ok(vec![mean - half_gap, mean + half_gap]);
    }
    Ok(hermitian_eigh(m)?.values)
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
pub fn mat_exp(m: &ComplexMatrix) -> ComplexMatrix {
    let n = m.dim();
    let norm = m.one_norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m.scale_real(0.5f64.powi(squarings));

    let mut result = ComplexMatrix::identity(n);
    let mut term = ComplexMatrix::identity(n);
    for k in 1..=30 {
        term = (&term * &scaled).scale_real(1.0 / k as f64);
        result += &term;
        if term.max_abs() <= f64::EPSILON * 1e-3 * result.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// A unit-trace positive semidefinite Hermitian matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    /// Validates Hermiticity (1e-12), unit trace (1e-12) and positivity
    /// (minimum eigenvalue ≥ −1e-10).
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        let tol = Tolerances::DEFAULT;
        if !m.is_finite() {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        let herm = m.hermiticity_defect();
        if herm > tol.algebraic {
            return Err(Error::InvalidState(format!(
                "not Hermitian (deviation {herm:.3e})"
            )));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > tol.algebraic {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min = hermitian_eigs(&m)?[0];
        if min < -tol.structural {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min:.3e}"
            )));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix known to be a state up to rounding; the matrix is
    /// symmetrized and renormalized but not checked for positivity.
    pub fn new_unchecked(m: ComplexMatrix) -> Self {
        let h = m.hermitian_part();
        let tr = h.trace().re;
        Self(h.scale_real(1.0 / tr))
    }

    pub fn pure(psi: &[C64]) -> Self {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let psi: Vec<C64> = psi.iter().map(|z| z / norm).collect();
        Self(ComplexMatrix::outer(&psi, &psi))
    }

    /// `cos(θ/2)|0⟩ + e^{iφ} sin(θ/2)|1⟩`
    pub fn bloch(theta: f64, phi: f64) -> Self {
        let (s, c) = (0.5 * theta).sin_cos();
        Self::pure(&[C64::new(c, 0.0), C64::from_polar(s, phi)])
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        Self(ComplexMatrix::unit(dim, k, k))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64))
    }

    /// `(Σ_i |ii⟩)/√d` on a `d ⊗ d` space, system factor first.
    pub fn maximally_entangled(dim: usize) -> Self {
        let mut psi = vec![ZERO; dim * dim];
        for i in 0..dim {
            psi[i * dim + i] = ONE;
        }
        Self::pure(&psi)
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn expectation(&self, op: &ComplexMatrix) -> C64 {
        (op * &self.0).trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigs(&self.0).expect("density matrix is Hermitian")[0]
    }

    /// `λ self + (1 − λ) other`
    pub fn mix(&self, other: &Self, lambda: f64) -> Self {
        Self(&self.0.scale_real(lambda) + &other.0.scale_real(1.0 - lambda))
    }
}

impl AsRef<ComplexMatrix> for ComplexMatrix {
    fn as_ref(&self) -> &ComplexMatrix {
        self
    }
}

impl AsRef<ComplexMatrix> for DensityMatrix {
    fn as_ref(&self) -> &ComplexMatrix {
        &self.0
    }
}

/// `½ Σ |λ_i(a − b)|`
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    a.0.check_same_dim(&b.0)?;
    Ok(0.5 * (&a.0 - &b.0).trace_norm_hermitian()?)
}

/// A linear map on `d × d` matrices, stored as its `d² × d²` matrix on the
/// column-stacked vectorization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    dim: usize,
    matrix: ComplexMatrix,
}

impl Channel {
    pub fn from_matrix(dim: usize, matrix: ComplexMatrix) -> Result<Self> {
        if matrix.dim() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: matrix.dim(),
            });
        }
        Ok(Self { dim, matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            matrix: ComplexMatrix::identity(dim * dim),
        }
    }

    /// `ρ ↦ A ρ B†`, i.e. `conj(B) ⊗ A`.
    pub fn sandwich(a: &ComplexMatrix, b: &ComplexMatrix) -> Self {
        Self {
            dim: a.dim(),
            matrix: b.conj().kron(a),
        }
    }

    /// `𝒥[A]: ρ ↦ A ρ A†`
    pub fn jump(a: &ComplexMatrix) -> Self {
        Self::sandwich(a, a)
    }

    /// `ρ ↦ A ρ`
    pub fn left(a: &ComplexMatrix) -> Self {
        Self {
            dim: a.dim(),
            matrix: ComplexMatrix::identity(a.dim()).kron(a),
        }
    }

    /// `ρ ↦ ρ B`
    pub fn right(b: &ComplexMatrix) -> Self {
        Self {
            dim: b.dim(),
            matrix: b.transpose().kron(&ComplexMatrix::identity(b.dim())),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: rho.dim(),
            });
        }
        Ok(ComplexMatrix::unvectorize(
            &self.matrix.mul_vec(&rho.vectorize()),
        ))
    }

    /// `self ∘ first`
    pub fn compose(&self, first: &Channel) -> Channel {
        Channel {
            dim: self.dim,
            matrix: &self.matrix * &first.matrix,
        }
    }

    pub fn scale(&self, s: f64) -> Channel {
        Channel {
            dim: self.dim,
            matrix: self.matrix.scale_real(s),
        }
    }

    /// `exp(self)` for a generator `self`.
    pub fn exp(&self) -> Channel {
        Channel {
            dim: self.dim,
            matrix: mat_exp(&self.matrix),
        }
    }

    /// `(Φ ⊗ id)(|Ω⟩⟨Ω|)` for the maximally entangled `|Ω⟩`, system first.
    /// Equals the Choi matrix divided by `d`.
    pub fn on_maximally_entangled(&self) -> ComplexMatrix {
        let d = self.dim;
        let scale = 1.0 / d as f64;
        ComplexMatrix::from_fn(d * d, |r, c| {
            let (a, i) = (r / d, r % d);
            let (b, j) = (c / d, c % d);
            // Φ(|i⟩⟨j|)[a][b]
            self.matrix[(a + b * d, i + j * d)] * scale
        })
    }

    /// Smallest eigenvalue of the extended output; negative values certify
    /// a failure of complete positivity.
    pub fn min_extended_eigenvalue(&self) -> f64 {
        let out = self.on_maximally_entangled().hermitian_part();
        hermitian_eigs(&out).expect("Hermitian by construction")[0]
    }

    pub fn distance(&self, other: &Channel) -> f64 {
        (&self.matrix - &other.matrix).spectral_norm()
    }
}

impl Add for &Channel {
    type Output = Channel;
    fn add(self, rhs: &Channel) -> Channel {
        Channel {
            dim: self.dim,
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl Sub for &Channel {
    type Output = Channel;
    fn sub(self, rhs: &Channel) -> Channel {
        Channel {
            dim: self.dim,
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

impl Add for Channel {
    type Output = Channel;
    fn add(self, rhs: Channel) -> Channel {
        &self + &rhs
    }
}

impl AddAssign<&Channel> for Channel {
    fn add_assign(&mut self, rhs: &Channel) {
        self.matrix += &rhs.matrix;
    }
}

/// Builds the matrix of a linear action by applying it to the matrix units,
/// then confirms linearity on a handful of fixed random inputs.
pub fn vectorize_superop(
    dim: usize,
    action: impl Fn(&ComplexMatrix) -> ComplexMatrix,
) -> Result<Channel> {
    let n = dim * dim;
    let mut matrix = ComplexMatrix::zeros(n);
    for j in 0..dim {
        for i in 0..dim {
            let col = i + j * dim;
            let image = action(&ComplexMatrix::unit(dim, i, j));
            if image.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: image.dim(),
                });
            }
            for (row, z) in image.vectorize().into_iter().enumerate() {
                matrix[(row, col)] = z;
            }
        }
    }
    let channel = Channel { dim, matrix };

    // Fixed low-discrepancy probes; no RNG needed for a residual check.
    let mut residual = 0.0f64;
    for k in 1..=4 {
        let probe = ComplexMatrix::from_fn(dim, |i, j| {
            let t = (k * 7 + i * 3 + j * 5) as f64;
            C64::new((t * 0.618_034).fract() - 0.5, (t * 0.414_214).fract() - 0.5)
        });
        let direct = action(&probe);
        let via = channel.apply(&probe)?;
        residual = residual.max(direct.max_abs_diff(&via));
    }
    if residual > Tolerances::DEFAULT.structural {
        return Err(Error::NonLinearAction { residual });
    }
    Ok(channel)
}

#[cfg(test)]
mod tests {
    use super::qubit::*;
    use super::*;
    use crate::random::{random_matrix, random_state, Stream};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn dagger_examples() {
        assert_eq!(dagger(&identity()), identity());
        assert_eq!(dagger(&sigma_minus()), sigma_plus());
        let mut rng = Stream::new(1, 0);
        let m = random_matrix(&mut rng, 3);
        assert_eq!(dagger(&dagger(&m)), m);
    }

    #[test]
    fn eigs_of_paulis() {
        assert_eq!(hermitian_eigs(&sigma_z()).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(hermitian_eigs(&identity()).unwrap(), vec![1.0, 1.0]);
        let y = hermitian_eigh(&sigma_y()).unwrap();
        assert_abs_diff_eq!(y.values[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(y.values[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eigs_reject_non_hermitian() {
        let err = hermitian_eigs(&sigma_minus()).unwrap_err();
        assert!(matches!(err, Error::NonHermitianInput { .. }));
        assert!(hermitian_eigh(&sigma_minus()).is_err());
    }

    #[test]
    fn jacobi_reconstructs_random_hermitian() {
        let mut rng = Stream::new(2, 0);
        for dim in [2, 3, 4, 8, 16] {
            let m = random_matrix(&mut rng, dim).hermitian_part();
            let e = hermitian_eigh(&m).unwrap();
            assert!(e.reconstruct().max_abs_diff(&m) < 1e-10, "dim {dim}");
            let u = &e.vectors.dagger() * &e.vectors;
            assert!(u.max_abs_diff(&ComplexMatrix::identity(dim)) < 1e-12);
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn extended_output_lowest_eigenvalue_closed_form() {
        // The extended-state output of the first-order averaged SME for decay,
        // written in the ancilla-paired basis {00, 01, 10, 11}.
        let x: f64 = 0.01;
        let m = ComplexMatrix::from_real(
            4,
            &[
                1.0, 0.0, 0.0, 1.0 - x / 2.0, //
                0.0, x, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, //
                1.0 - x / 2.0, 0.0, 0.0, 1.0 - x,
            ],
        )
        .scale_real(0.5);
        let lowest = hermitian_eigh(&m).unwrap().values[0];
        let closed_form = -0.25 * (x + (2.0 * (2.0 - x * (2.0 - x))).sqrt() - 2.0);
        assert!((lowest - closed_form).abs() < 1e-15);
        // Leading order of the closed form is −x²/16.
        assert!((lowest / (-x * x / 16.0) - 1.0).abs() < 0.05);
    }

    #[test]
    fn trace_distance_examples() {
        let e = DensityMatrix::basis(2, 0);
        let g = DensityMatrix::basis(2, 1);
        let mixed = DensityMatrix::maximally_mixed(2);
        assert_eq!(trace_distance(&e, &e).unwrap(), 0.0);
        assert_abs_diff_eq!(trace_distance(&e, &g).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(trace_distance(&e, &mixed).unwrap(), 0.5, epsilon = 1e-15);
        let ent = DensityMatrix::maximally_entangled(2);
        assert!(matches!(
            trace_distance(&e, &ent),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mat_exp_examples() {
        assert_eq!(mat_exp(&ComplexMatrix::zeros(3)), ComplexMatrix::identity(3));
        let d = ComplexMatrix::diag(&[C64::new(0.3, 0.0), C64::new(-2.5, 1.0)]);
        let e = mat_exp(&d);
        assert!((e[(0, 0)] - C64::new(0.3, 0.0).exp()).norm() < 1e-14);
        assert!((e[(1, 1)] - C64::new(-2.5, 1.0).exp()).norm() < 1e-14);
        assert!(e[(0, 1)].norm() == 0.0);

        let mut rng = Stream::new(3, 0);
        for _ in 0..10 {
            let h = random_matrix(&mut rng, 4).hermitian_part().scale_real(3.0);
            let eig = hermitian_eigh(&h).unwrap();
            let expected = (0..4).fold(ComplexMatrix::zeros(4), |acc, k| {
                let v = eig.vector(k);
                &acc + &ComplexMatrix::outer(&v, &v).scale_real(eig.values[k].exp())
            });
            let e = mat_exp(&h);
            assert!(e.max_abs_diff(&expected) < 1e-12 * expected.max_abs());
            let u = mat_exp(&h.scale(I));
            assert!((&u * &u.dagger()).max_abs_diff(&ComplexMatrix::identity(4)) < 1e-12);

            let m = random_matrix(&mut rng, 4);
            let (a, b) = (mat_exp(&m), mat_exp(&-&m));
            let prod = &a * &b;
            assert!(prod.max_abs_diff(&ComplexMatrix::identity(4)) < 1e-13 * a.max_abs() * b.max_abs() * 4.0);
        }
    }

    #[test]
    fn jump_channel_convention() {
        let a = sigma_x();
        let channel = vectorize_superop(2, |rho| &(&a * rho) * &a.dagger()).unwrap();
        assert_eq!(channel, Channel::jump(&a));
        // conj(σx) ⊗ σx is a permutation matrix: |i⟩⟨j| ↦ |1−i⟩⟨1−j|.
        for j in 0..2 {
            for i in 0..2 {
                let image = channel.apply(&ComplexMatrix::unit(2, i, j)).unwrap();
                assert_eq!(image, ComplexMatrix::unit(2, 1 - i, 1 - j));
            }
        }
        let m = channel.matrix();
        for r in 0..4 {
            let row: f64 = (0..4).map(|c| m[(r, c)].norm()).sum();
            assert_eq!(row, 1.0);
        }
    }

    #[test]
    fn vectorize_identity_and_nonlinear() {
        assert_eq!(vectorize_superop(2, |r| r.clone()).unwrap(), Channel::identity(2));
        let err = vectorize_superop(2, |r| r * r).unwrap_err();
        assert!(matches!(err, Error::NonLinearAction { .. }));
    }

    #[test]
    fn extended_output_of_identity_is_bell_state() {
        let out = Channel::identity(2).on_maximally_entangled();
        let bell = DensityMatrix::maximally_entangled(2);
        assert!(out.max_abs_diff(bell.matrix()) < 1e-15);
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(sigma_z()).is_err());
        assert!(DensityMatrix::new(ComplexMatrix::from_real(2, &[1.5, 0.0, 0.0, -0.5])).is_err());
        assert!(DensityMatrix::new(DensityMatrix::bloch(1.0, 2.0).into_matrix()).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dagger_reverses_products(seed in any::<u64>(), dim in 2usize..5) {
            let mut rng = Stream::new(seed, 0);
            let a = random_matrix(&mut rng, dim);
            let b = random_matrix(&mut rng, dim);
            let lhs = dagger(&(&a * &b));
            let rhs = &dagger(&b) * &dagger(&a);
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }

        #[test]
        fn trace_distance_triangle(seed in any::<u64>(), dim in 2usize..5) {
            let mut rng = Stream::new(seed, 1);
            let a = random_state(&mut rng, dim);
            let b = random_state(&mut rng, dim);
            let c = random_state(&mut rng, dim);
            let ab = trace_distance(&a, &b).unwrap();
            let bc = trace_distance(&b, &c).unwrap();
            let ac = trace_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-10);
            prop_assert!((ab - trace_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        }

        #[test]
        fn difference_spectrum_sums_to_zero(seed in any::<u64>(), dim in 2usize..5) {
            let mut rng = Stream::new(seed, 2);
            let a = random_state(&mut rng, dim);
            let b = random_state(&mut rng, dim);
            let sum: f64 = hermitian_eigs(&(a.matrix() - b.matrix())).unwrap().iter().sum();
            prop_assert!(sum.abs() < 1e-10);
        }

        #[test]
        fn vectorized_action_matches_direct(seed in any::<u64>()) {
            let mut rng = Stream::new(seed, 3);
            let a = random_matrix(&mut rng, 2);
            let b = random_matrix(&mut rng, 2);
            let action = |r: &ComplexMatrix| &(&(&a * r) * &b) + &(r * &a.dagger());
            let channel = vectorize_superop(2, action).unwrap();
            for _ in 0..100 {
                let rho = random_state(&mut rng, 2);
                let via = channel.apply(rho.matrix()).unwrap();
                prop_assert!(via.max_abs_diff(&action(rho.matrix())) < 1e-10);
            }
        }
    }
}
