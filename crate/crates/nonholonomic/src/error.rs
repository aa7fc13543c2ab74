//! Error type shared by the geometry, dynamics and verification layers.

use thiserror::Error;

/// Library-wide error enum.
///
/// Variants carry enough context to be reported on one line; the CLI maps
/// them to exit codes via [`Error::code`].
#[derive(Debug, Error)]
pub enum Error {
    /// Frame Gram matrix is singular or its condition number exceeds the cap.
    #[error("frame degenerate: gram condition {cond:.3e} exceeds {max:.3e} at q = {q:?}")]
    FrameDegenerate { cond: f64, max: f64, q: Vec<f64> },

    /// Metric evaluation produced a non-symmetric or non-positive matrix.
    #[error("metric singular or not positive definite at q = {q:?}")]
    MetricSingular { q: Vec<f64> },

    /// Finite differencing would step outside the declared chart bounds.
    #[error("jacobian unavailable: differencing coordinate {coord} exits chart bounds at q = {q:?}")]
    JacobianUnavailable { coord: usize, q: Vec<f64> },

    /// The energy margin e - V(q) dropped to the Hill boundary.
    #[error("hill boundary: e - V = {margin:.3e} at t = {t:.6e}")]
    HillBoundary { margin: f64, t: f64 },

    /// A velocity was not inside the constraint distribution.
    #[error("velocity not in distribution: residual {residual:.3e} exceeds {tol:.3e}")]
    NotInDistribution { residual: f64, tol: f64 },

    /// A projection was handed the zero velocity.
    #[error("zero velocity cannot be projected")]
    ZeroVector,

    /// Input expected on the energy sphere/shell was off it.
    #[error("not on the energy sphere: residual {residual:.3e} exceeds {tol:.3e}")]
    NotOnSphere { residual: f64, tol: f64 },

    /// A kinetic-only operation received a system with a varying potential.
    #[error("not a kinetic system: potential varies by {variation:.3e} near the base point")]
    NotKinetic { variation: f64 },

    /// Adaptive step control underflowed the minimum step size.
    #[error("step underflow: step {step:.3e} at t = {t:.6e}")]
    StepUnderflow { step: f64, t: f64 },

    /// The step/accept loop exceeded its iteration cap.
    #[error("step limit exceeded: {max_steps} steps reached at t = {t:.6e}")]
    StepLimit { max_steps: usize, t: f64 },

    /// A field evaluation failed during integration; wraps the cause with the time.
    #[error("integration failed at t = {t:.6e}: {source}")]
    Integration {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    /// Cumulative quadrature of e - V produced a non-increasing sequence.
    #[error("reparametrization not strictly increasing at sample {index}")]
    NonMonotone { index: usize },

    /// One of the two trajectory legs of a verification run failed.
    #[error("{leg} leg failed: {source}")]
    LegFailed {
        leg: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// Requested builtin system does not exist.
    #[error("unknown system '{name}'")]
    UnknownSystem { name: String },

    /// The builtin has no closed-form trajectory.
    #[error("no analytic solution for system '{name}'")]
    NoAnalyticSolution { name: String },

    /// The builtin has no closed-form reparametrization.
    #[error("no analytic reparametrization for system '{name}'")]
    NoAnalyticH { name: String },

    /// Malformed user input (dimensions, ranges, grids, expressions, files).
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Stable machine-readable code naming the failure class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::FrameDegenerate { .. } => "FrameDegenerate",
            Error::MetricSingular { .. } => "MetricSingular",
            Error::JacobianUnavailable { .. } => "JacobianUnavailable",
            Error::HillBoundary { .. } => "HillBoundary",
            Error::NotInDistribution { .. } => "NotInDistribution",
            Error::ZeroVector => "ZeroVector",
            Error::NotOnSphere { .. } => "NotOnSphere",
            Error::NotKinetic { .. } => "NotKinetic",
            Error::StepUnderflow { .. } => "StepUnderflow",
            Error::StepLimit { .. } => "StepLimit",
            Error::Integration { source, .. } => source.code(),
            Error::NonMonotone { .. } => "NonMonotone",
            Error::LegFailed { source, .. } => source.code(),
            Error::UnknownSystem { .. } => "UnknownSystem",
            Error::NoAnalyticSolution { .. } => "NoAnalyticSolution",
            Error::NoAnalyticH { .. } => "NoAnalyticH",
            Error::InvalidInput(_) => "InvalidInput",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
