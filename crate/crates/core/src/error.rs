use thiserror::Error;

/// Failures of jet evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("jet order {order} exceeds the supported maximum {max}")]
    UnsupportedOrder { order: usize, max: usize },
    #[error("arity mismatch: expected {expected} components, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("evaluation outside the map's domain: {0}")]
    Domain(String),
}

/// Failures of the geometric solvers and builders.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(
        "Newton iteration did not converge after {iterations} steps (residual {residual:.3e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Jacobian of the Newton system is singular at the seed")]
    DegenerateJacobian,
    #[error("covector vanishes: point lies outside the punctured cotangent bundle")]
    ZeroCovector,
    #[error("point is not critical for the phase: |d_θ φ| = {residual:.3e}")]
    NotCritical { residual: f64 },
    #[error("unknown built-in name `{0}`")]
    UnknownName(String),
    #[error("curve derivatives are dependent near t = {t} (|det| = {det:.3e})")]
    DegenerateCurve { t: f64, det: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("corank {corank} exceeds one")]
    CorankTooHigh { corank: usize },
    #[error("root is not a cusp: {0}")]
    NotACusp(String),
    #[error("point is not on the zero set of the defining functions (residual {residual:.3e})")]
    NotOnSet { residual: f64 },
    #[error("defining functions have dependent differentials")]
    DependentDefiners,
    #[error("umbrella verdict negative: {condition}")]
    VerdictNegative { condition: String },
    #[error("the factor N vanishes at the requested point")]
    DegenerateN,
    #[error("Jacobian of the critical-set parametrization is singular (|det| = {det:.3e})")]
    SingularJacobian { det: f64 },
    #[error("source lies closer than 0.2 box lengths to the boundary")]
    SourceTooCloseToBoundary,
    #[error("no locus samples inside the analysis region")]
    EmptyLocus,
    #[error("ray left the working box at t = {t}")]
    LeftDomain { t: f64 },
    #[error("step size collapsed at t = {t} (dt = {dt:.3e})")]
    StepFailure { t: f64, dt: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
