//! Operators and states in the truncated Fock basis.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::params::SystemParams;

/// Maximum elementwise `|rho - rho^dagger|` accepted for a density matrix.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Maximum `|Tr rho - 1|` accepted for a density matrix.
pub const TRACE_TOL: f64 = 1e-8;
/// Most negative eigenvalue accepted for a density matrix.
pub const POSITIVITY_TOL: f64 = 1e-6;
/// Largest population allowed in the two highest Fock levels.
pub const WATCHDOG_LIMIT: f64 = 1e-5;
/// Largest norm deficit of a truncated coherent state.
pub const COHERENT_DEFICIT_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum FockError {
    #[error("Fock dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("truncation overflow: {0}")]
    TruncationOverflow(String),
    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("trace {0} differs from 1")]
    TraceNotUnity(f64),
    #[error("matrix has negative eigenvalue {0:.3e}")]
    NotPositive(f64),
}

/// Dense complex matrix on the truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct FockOperator {
    data: DMatrix<C64>,
}

impl FockOperator {
    /// Wraps a square matrix.
    ///
    /// # Panics
    /// If `data` is not square.
    pub fn from_matrix(data: DMatrix<C64>) -> Self {
        assert_eq!(data.nrows(), data.ncols(), "Fock operators are square");
        FockOperator { data }
    }

    pub fn from_real(data: &DMatrix<f64>) -> Self {
        Self::from_matrix(data.map(|v| C64::new(v, 0.0)))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_matrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_matrix(DMatrix::identity(dim, dim))
    }

    /// Diagonal operator with the given real entries.
    pub fn diagonal(values: &[f64]) -> Self {
        let dim = values.len();
        Self::from_matrix(DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                C64::new(values[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[(i, j)]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_matrix(self.data.adjoint())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_matrix(&self.data * s)
    }

    pub fn commutator(&self, other: &Self) -> Self {
        Self::from_matrix(&self.data * &other.data - &other.data * &self.data)
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    /// `Tr[self rho]`.
    pub fn expectation(&self, rho: &DensityMatrix) -> C64 {
        let r = rho.matrix();
        let n = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += self.data[(i, k)] * r[(k, i)];
            }
        }
        acc
    }

    /// Largest elementwise `|A - A^dagger|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Largest absolute imaginary part of any element.
    pub fn max_imag(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, z| m.max(z.im.abs()))
    }

    /// Real part as a real matrix.
    pub fn real_part(&self) -> DMatrix<f64> {
        self.data.map(|z| z.re)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()))
    }

    /// Eigenvalues of a Hermitian operator, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.data.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

impl<'a> Mul<&'a FockOperator> for &'a FockOperator {
    type Output = FockOperator;
    fn mul(self, rhs: &FockOperator) -> FockOperator {
        FockOperator::from_matrix(&self.data * &rhs.data)
    }
}

impl<'a> Add<&'a FockOperator> for &'a FockOperator {
    type Output = FockOperator;
    fn add(self, rhs: &FockOperator) -> FockOperator {
        FockOperator::from_matrix(&self.data + &rhs.data)
    }
}

impl<'a> Sub<&'a FockOperator> for &'a FockOperator {
    type Output = FockOperator;
    fn sub(self, rhs: &FockOperator) -> FockOperator {
        FockOperator::from_matrix(&self.data - &rhs.data)
    }
}

fn check_dim(dim: usize) -> Result<(), FockError> {
    if dim < 2 {
        Err(FockError::DimensionTooSmall(dim))
    } else {
        Ok(())
    }
}

/// Ladder operator with `a|n> = sqrt(n)|n-1>`.
pub fn annihilation(dim: usize) -> Result<FockOperator, FockError> {
    check_dim(dim)?;
    Ok(FockOperator::from_matrix(DMatrix::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            C64::new((j as f64).sqrt(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })))
}

pub fn creation(dim: usize) -> Result<FockOperator, FockError> {
    Ok(annihilation(dim)?.adjoint())
}

pub fn number(dim: usize) -> Result<FockOperator, FockError> {
    check_dim(dim)?;
    let diag: Vec<f64> = (0..dim).map(|n| n as f64).collect();
    Ok(FockOperator::diagonal(&diag))
}

/// `x = x_zpf (a + a^dagger)`.
pub fn position(dim: usize, p: &SystemParams) -> Result<FockOperator, FockError> {
    let a = annihilation(dim)?;
    Ok((&a + &a.adjoint()).scale(C64::new(p.x_zpf(), 0.0)))
}

/// `p = i sqrt(aleph / 2) (a^dagger - a)`, so that `[x, p] = i`.
pub fn momentum(dim: usize, p: &SystemParams) -> Result<FockOperator, FockError> {
    let a = annihilation(dim)?;
    Ok((&a.adjoint() - &a).scale(C64::new(0.0, (0.5 * p.aleph).sqrt())))
}

/// Fock amplitudes of `|alpha>`, renormalised after truncation.
pub fn coherent_amplitudes(alpha: C64, dim: usize) -> Result<DVector<C64>, FockError> {
    check_dim(dim)?;
    let mean = alpha.norm_sqr();
    if mean >= dim as f64 / 4.0 {
        return Err(FockError::TruncationOverflow(format!(
            "coherent state with |alpha|^2 = {mean:.3} needs |alpha|^2 < dim/4 = {}",
            dim as f64 / 4.0
        )));
    }
    let mut amps = DVector::zeros(dim);
    amps[0] = C64::new((-0.5 * mean).exp(), 0.0);
    for n in 1..dim {
        amps[n] = amps[n - 1] * alpha / (n as f64).sqrt();
    }
    let norm_sqr: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
    let deficit = 1.0 - norm_sqr;
    if deficit > COHERENT_DEFICIT_TOL {
        return Err(FockError::TruncationOverflow(format!(
            "coherent state norm deficit {deficit:.3e} exceeds {COHERENT_DEFICIT_TOL:e}"
        )));
    }
    amps /= C64::new(norm_sqr.sqrt(), 0.0);
    Ok(amps)
}

/// `|n>` as a column vector.
pub fn fock_vector(n: usize, dim: usize) -> DVector<C64> {
    let mut v = DVector::zeros(dim);
    v[n] = C64::new(1.0, 0.0);
    v
}

/// Hermitian, unit-trace, positive operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    op: FockOperator,
}

impl DensityMatrix {
    /// Validates hermiticity, trace and (soft) positivity.
    pub fn new(op: FockOperator) -> Result<Self, FockError> {
        let herm = op.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(FockError::NotHermitian(herm));
        }
        let tr = op.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(FockError::TraceNotUnity(tr.re));
        }
        let min_ev = op.hermitian_eigenvalues()[0];
        if min_ev < -POSITIVITY_TOL {
            return Err(FockError::NotPositive(min_ev));
        }
        Ok(DensityMatrix { op })
    }

    /// Skips validation; for states produced by a trace- and
    /// hermiticity-preserving integrator that are checked separately.
    pub fn new_unchecked(op: FockOperator) -> Self {
        DensityMatrix { op }
    }

    /// `|psi><psi|` for a normalised vector.
    pub fn pure(psi: &DVector<C64>) -> Self {
        DensityMatrix {
            op: FockOperator::from_matrix(psi * psi.adjoint()),
        }
    }

    pub fn fock(n: usize, dim: usize) -> Self {
        Self::pure(&fock_vector(n, dim))
    }

    pub fn ground(dim: usize) -> Self {
        Self::fock(0, dim)
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn op(&self) -> &FockOperator {
        &self.op
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        self.op.matrix()
    }

    pub fn trace(&self) -> f64 {
        self.op.trace().re
    }

    pub fn purity(&self) -> f64 {
        // Tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
        self.matrix().iter().map(|z| z.norm_sqr()).sum()
    }

    /// `<psi|rho|psi>`.
    pub fn overlap_with(&self, psi: &DVector<C64>) -> f64 {
        (psi.adjoint() * self.matrix() * psi)[(0, 0)].re
    }

    /// Population of the `k` highest Fock levels.
    pub fn top_occupation(&self, k: usize) -> f64 {
        let n = self.dim();
        (n.saturating_sub(k)..n).map(|i| self.matrix()[(i, i)].re).sum()
    }

    /// Errors when the two highest levels hold more than [`WATCHDOG_LIMIT`].
    pub fn check_truncation(&self) -> Result<(), FockError> {
        let top = self.top_occupation(2);
        if top > WATCHDOG_LIMIT {
            return Err(FockError::TruncationOverflow(format!(
                "top-two-level occupation {top:.3e} exceeds {WATCHDOG_LIMIT:e}; increase n_trunc"
            )));
        }
        Ok(())
    }
}

/// Pure coherent state `|alpha><alpha|`.
pub fn coherent_state(alpha: C64, dim: usize) -> Result<DensityMatrix, FockError> {
    Ok(DensityMatrix::pure(&coherent_amplitudes(alpha, dim)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn ladder_matrices() {
        let a = annihilation(2).unwrap();
        assert_eq!(a.get(0, 1), c(1.0));
        assert_eq!(a.get(1, 0), c(0.0));
        assert_eq!(a.get(0, 0), c(0.0));

        let a = annihilation(3).unwrap();
        assert_eq!(a.get(0, 1), c(1.0));
        assert_relative_eq!(a.get(1, 2).re, 2f64.sqrt());
        let nonzero = a.matrix().iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 2);
        assert!(annihilation(1).is_err());
    }

    #[test]
    fn number_operator_on_fock_state() {
        let a = annihilation(10).unwrap();
        let n = &a.adjoint() * &a;
        let v = fock_vector(5, 10);
        let nv = n.matrix() * &v;
        assert_relative_eq!((nv - &v * c(5.0)).norm(), 0.0, epsilon = 1e-14);
        assert!(n.max_abs_diff(&number(10).unwrap()) < 1e-13);
    }

    #[test]
    fn canonical_commutator_except_corner() {
        let dim = 12;
        let a = annihilation(dim).unwrap();
        let comm = a.commutator(&a.adjoint());
        for i in 0..dim {
            for j in 0..dim {
                if i == dim - 1 && j == dim - 1 {
                    assert_relative_eq!(comm.get(i, j).re, 1.0 - dim as f64);
                } else {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((comm.get(i, j) - c(want)).norm() < 1e-13, "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn position_matrix() {
        let p = SystemParams::default();
        let x = position(2, &p).unwrap();
        assert_relative_eq!(x.get(0, 1).re, (1.0f64 / 24.0).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(x.get(0, 1).re, 0.2041, epsilon = 1e-4);
        assert_eq!(x.get(0, 0), c(0.0));
        assert_eq!(x.hermiticity_error(), 0.0);
    }

    #[test]
    fn coherent_position_expectation_matches_brute_force() {
        let p = SystemParams::default();
        let dim = 60;
        let x = position(dim, &p).unwrap();
        for &alpha in &[C64::new(1.3, -0.4), C64::new(-2.0, 0.7), C64::new(0.0, 1.5)] {
            let rho = coherent_state(alpha, dim).unwrap();
            // brute-force sum over untruncated Poisson amplitudes
            let mut amps = vec![C64::new(0.0, 0.0); dim];
            let mut fact = 1.0f64;
            for n in 0..dim {
                if n > 0 {
                    fact *= n as f64;
                }
                amps[n] = (-alpha.norm_sqr() / 2.0).exp() * alpha.powu(n as u32) / fact.sqrt();
            }
            let mut brute = C64::new(0.0, 0.0);
            for n in 0..dim - 1 {
                brute += amps[n].conj() * amps[n + 1] * ((n + 1) as f64).sqrt();
            }
            let brute_x = 2.0 * p.x_zpf() * brute.re;
            assert_relative_eq!(x.expectation(&rho).re, brute_x, epsilon = 1e-12);
            assert_relative_eq!(brute_x, 2.0 * p.x_zpf() * alpha.re, epsilon = 1e-12);
        }
        assert_eq!(x.expectation(&DensityMatrix::ground(dim)), c(0.0));
    }

    #[test]
    fn position_momentum_commutator_on_low_states() {
        let p = SystemParams::default();
        let dim = 40;
        let x = position(dim, &p).unwrap();
        let mom = momentum(dim, &p).unwrap();
        let comm = x.commutator(&mom);
        let rho = coherent_state(C64::new(1.5, 0.5), dim).unwrap();
        let v = comm.expectation(&rho);
        assert_relative_eq!(v.re, 0.0, epsilon = 1e-10);
        assert_relative_eq!(v.im, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn coherent_states() {
        let vac = coherent_state(C64::new(0.0, 0.0), 8).unwrap();
        assert_eq!(vac, DensityMatrix::ground(8));

        let rho = coherent_state(C64::new(2.0, 0.0), 60).unwrap();
        let n = number(60).unwrap();
        assert_relative_eq!(n.expectation(&rho).re, 4.0, epsilon = 1e-9);
        assert_relative_eq!(rho.purity(), 1.0, epsilon = 1e-9);
        DensityMatrix::new(rho.op().clone()).unwrap();

        assert!(matches!(
            coherent_state(C64::new(3.0, 0.0), 20),
            Err(FockError::TruncationOverflow(_))
        ));
    }

    #[test]
    fn density_matrix_validation() {
        let mut m = DMatrix::<C64>::zeros(3, 3);
        m[(0, 0)] = c(0.5);
        m[(1, 1)] = c(0.5);
        DensityMatrix::new(FockOperator::from_matrix(m.clone())).unwrap();

        let mut bad = m.clone();
        bad[(0, 1)] = c(0.1);
        assert!(matches!(
            DensityMatrix::new(FockOperator::from_matrix(bad)),
            Err(FockError::NotHermitian(_))
        ));

        let mut bad = m.clone();
        bad[(2, 2)] = c(0.1);
        assert!(matches!(
            DensityMatrix::new(FockOperator::from_matrix(bad)),
            Err(FockError::TraceNotUnity(_))
        ));

        let mut bad = m;
        bad[(0, 0)] = c(1.1);
        bad[(1, 1)] = c(-0.1);
        assert!(matches!(
            DensityMatrix::new(FockOperator::from_matrix(bad)),
            Err(FockError::NotPositive(_))
        ));
    }

    #[test]
    fn watchdog() {
        let dim = 10;
        assert!(DensityMatrix::ground(dim).check_truncation().is_ok());
        assert!(DensityMatrix::fock(dim - 2, dim).check_truncation().is_err());
    }
}
