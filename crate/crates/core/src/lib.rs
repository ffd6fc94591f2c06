//! Line-probe microscopy toolkit.
//!
//! Simulates measurements taken by a scanning line probe over a sparse sample,
//! reconstructs the sample with a reweighted, PSF-calibrating nonnegative
//! sparse regression, and provides diagnostics (coherence Gram matrices,
//! low-pass spectra, dual certificates, phase-transition benchmarks) that
//! quantify when line measurements suffice for recovery.

pub mod analysis;
pub mod harness;
pub mod io;
pub mod model;
pub mod ops;
pub mod psf;
pub mod sim;
pub mod solver;

mod fourier;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value or combination of values violates a documented invariant.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },
    /// A file could not be parsed; `line` is 1-based (0 = whole file).
    #[error("parse error at row {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// Rejection sampling could not place the requested motifs.
    #[error("infeasible density: failed to place {placed} of {requested} motifs within {cap} draws")]
    InfeasibleDensity {
        requested: usize,
        placed: usize,
        cap: usize,
    },
    /// Backtracking halved the step more than 60 times without sufficient decrease.
    #[error("Lipschitz blowup: backtracking exceeded {halvings} halvings (block {block})")]
    LipschitzBlowup { block: &'static str, halvings: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
