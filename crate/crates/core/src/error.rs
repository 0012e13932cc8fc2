use std::path::PathBuf;

use thiserror::Error;

/// Failure classes, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("wavelength {wavelength_nm:.4} nm is within the {guard_hz:.3e} Hz guard band of the {line} resonance")]
    ResonanceSingularity { wavelength_nm: f64, line: String, guard_hz: f64 },

    #[error("probe detuning {detuning_hz:.4e} Hz is not dispersive: |δ| must exceed {threshold_hz:.4e} Hz")]
    DispersiveRegime { detuning_hz: f64, threshold_hz: f64 },

    #[error("fiber is multimode at {wavelength_nm:.2} nm: V = {v_number:.4} exceeds the HE11 single-mode cutoff 2.4048")]
    Multimode { wavelength_nm: f64, v_number: f64 },

    #[error("no guided HE11 root in the physical bracket at {wavelength_nm:.2} nm")]
    NoGuidedMode { wavelength_nm: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("grid resolution: {0}")]
    Resolution(String),

    #[error("no trap: {0}")]
    NoTrap(String),

    #[error("potential is not confining along {direction} (curvature {curvature:.3e} J/m^2)")]
    Saddle { direction: &'static str, curvature: f64 },

    #[error("time step {dt:.3e} s exceeds the stability limit {limit:.3e} s")]
    StepSize { dt: f64, limit: f64 },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("fitted width {fwhm_hz:.4e} Hz collapsed below one bin ({bin_hz:.4e} Hz)")]
    DegenerateWidth { fwhm_hz: f64, bin_hz: f64 },

    #[error("segment shows no decay")]
    NoDecay,

    #[error("segment error: {0}")]
    Segment(String),

    #[error("window error: {0}")]
    Window(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) | Error::Parse { .. } | Error::Window(_) | Error::Domain(_) => {
                ErrorKind::Validation
            }
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
