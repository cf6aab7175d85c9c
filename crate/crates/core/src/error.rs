use thiserror::Error;

/// Errors raised by the numerical kernels and experiment drivers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown subsystem label `{0}`")]
    UnknownLabel(String),

    #[error("duplicate subsystem label `{0}`")]
    DuplicateLabel(String),

    #[error("subsystem `{label}` has invalid dimension {dim}")]
    InvalidDimension { label: String, dim: usize },

    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is indefinite beyond tolerance (min eigenvalue {min_eigenvalue:e})")]
    Indefinite { min_eigenvalue: f64 },

    #[error("Gram matrices differ by {deviation:e}; no isometry maps the inputs onto the outputs")]
    GramMismatch { deviation: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("input vectors are linearly dependent")]
    DependentInputs,

    #[error("states live on different Hilbert layouts")]
    MixedLayouts,

    #[error("vector is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("operator set is not a valid POVM (completeness deviation {deviation:e})")]
    InvalidPovm { deviation: f64 },

    #[error("subsystem `{0}` is not a qubit")]
    NotQubit(String),

    #[error("bipartition has an empty side")]
    EmptyCut,

    #[error("state is Schmidt-rank deficient (smallest coefficient {coefficient:e})")]
    RankDeficient { coefficient: f64 },

    #[error("invalid cloning job: {0}")]
    InvalidJob(String),

    #[error("cloning job is infeasible (residual min eigenvalue {min_eigenvalue:e})")]
    Infeasible { min_eigenvalue: f64 },

    #[error("angle {0} makes the measurement bases coincide")]
    DegenerateAngle(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("states {0} and {1} coincide up to phase")]
    CoincidentStates(usize, usize),
}

pub type Result<T> = std::result::Result<T, LabError>;
