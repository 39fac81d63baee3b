use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice box: {0}")]
    InvalidBox(String),
    #[error("trace has imaginary part {imag:e} (tolerance {tol:e})")]
    NonRealTrace { imag: f64, tol: f64 },
    #[error("position moment has imaginary part {imag:e} (tolerance {tol:e})")]
    NonRealMoment { imag: f64, tol: f64 },
    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("entry ({x:?}, {y:?}) lies outside the stored window")]
    OutsideWindow { x: [i64; 2], y: [i64; 2] },

    #[error("atom {index} has negative weight {weight}")]
    NegativeWeight { index: usize, weight: f64 },
    #[error("atom {index} has dimension {found}, expected {expected}")]
    AtomDimension { index: usize, found: usize, expected: usize },
    #[error("kernel truncation discards {discarded:.3e} of mass against {retained:.3e} retained")]
    TruncationTooLossy { discarded: f64, retained: f64 },
    #[error("spectral gap changes from {coarse:.6e} to {fine:.6e} under grid refinement")]
    GridTooCoarse { coarse: f64, fine: f64 },
    #[error("kernel is identically zero")]
    ZeroKernel,
    #[error("invalid grid size {0}: must be even and at least 8")]
    InvalidGrid(usize),

    #[error("disorder and state live on different boxes")]
    BoxMismatch,
    #[error("translations are only defined on periodic boxes")]
    TruncatedBoxShift,
    #[error("unknown disorder distribution `{0}`")]
    UnknownDistribution(String),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("boundary mass {mass:e} exceeds tolerance {tol:e} at t = {t}")]
    BoundaryMassExceeded { mass: f64, tol: f64, t: f64 },
    #[error("coherence window edge mass {mass:e} exceeds tolerance {tol:e} at t = {t}")]
    CoherenceWindowExceeded { mass: f64, tol: f64, t: f64 },
    #[error("evolution requires a truncated box")]
    PeriodicEvolution,

    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("Abel tail correction is {fraction:.3} of the integral")]
    TailDominates { fraction: f64 },
    #[error("fit window [{t1}, {t2}] holds {points} grid points")]
    WindowTooShort { t1: f64, t2: f64, points: usize },
    #[error("kernel constraint violated: |L(delta_0 x 1)| = {residual:e}")]
    KernelConstraintViolated { residual: f64 },
    #[error("Re(Pi G0 Pi) has smallest eigenvalue {min_eig:e} below {bound:e}")]
    IllConditioned { min_eig: f64, bound: f64 },
    #[error("Lindbladian solve residual {residual:e}")]
    SingularLindbladian { residual: f64 },
    #[error("second moment shows no plateau (last quartile adds {growth:.3})")]
    NoPlateau { growth: f64 },
    #[error("D(g) curvature ratio {ratio:.3} exceeds 0.2")]
    NonlinearRegime { ratio: f64 },

    #[error("matrix is not normal: |AA* - A*A| = {defect:e}")]
    NotNormal { defect: f64 },
    #[error("matrix is not accretive: min eig of Hermitian part = {min_eig:e}")]
    NotAccretive { min_eig: f64 },
    #[error("singular linear system")]
    Singular,

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
