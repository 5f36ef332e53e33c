//! Open quantum dynamics of a mesoscopic driven Duffing oscillator.
//!
//! Units: `hbar = Omega = 1`, mass `aleph`. All dynamics live in the frame
//! rotating at the drive frequency.

pub mod analysis;
pub mod bath;
pub mod classical;
pub mod fock;
pub mod params;
pub mod propagate;
pub mod spectra;
pub mod wigner;

use analysis::AnalysisError;
use classical::ClassicalError;
use fock::FockError;
use params::ParamsError;
use propagate::PropagateError;
use spectra::SpectraError;
use wigner::WignerError;

/// Any error of the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Classical(#[from] ClassicalError),
    #[error(transparent)]
    Propagate(#[from] PropagateError),
    #[error(transparent)]
    Wigner(#[from] WignerError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

fn fock_guard(e: &FockError) -> bool {
    matches!(e, FockError::TruncationOverflow(_))
}

fn classical_guard(_: &ClassicalError) -> bool {
    true
}

fn spectra_guard(e: &SpectraError) -> bool {
    match e {
        SpectraError::Fock(f) => fock_guard(f),
        SpectraError::Classical(c) => classical_guard(c),
        SpectraError::LevelOutOfRange { .. } | SpectraError::DegenerateTracking { .. } => false,
    }
}

fn propagate_guard(e: &PropagateError) -> bool {
    match e {
        PropagateError::Fock(f) => fock_guard(f),
        PropagateError::Spectra(s) => spectra_guard(s),
        PropagateError::Classical(c) => classical_guard(c),
        PropagateError::TraceDrift { .. } => true,
        PropagateError::Params(_) | PropagateError::ComplexOperator(_) | PropagateError::DimensionMismatch { .. } => {
            false
        }
    }
}

impl Error {
    /// True for failures of a physical guard (truncation watchdog, missing
    /// bistability, unresolved decay, trace drift, clipped Wigner grid), as
    /// opposed to invalid input.
    pub fn is_physics_guard(&self) -> bool {
        match self {
            Error::Params(_) => false,
            Error::Fock(f) => fock_guard(f),
            Error::Spectra(s) => spectra_guard(s),
            Error::Classical(c) => classical_guard(c),
            Error::Propagate(p) => propagate_guard(p),
            Error::Wigner(w) => matches!(w, WignerError::GridTooSmall { .. }),
            Error::Analysis(a) => match a {
                AnalysisError::InsufficientDecay { .. } => true,
                AnalysisError::Propagate(p) => propagate_guard(p),
                AnalysisError::Classical(c) => classical_guard(c),
                _ => false,
            },
        }
    }

    /// Process exit code: 2 for physics guards, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        if self.is_physics_guard() {
            2
        } else {
            1
        }
    }
}
