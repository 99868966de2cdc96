use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric positive definite (jitter escalation exhausted)")]
    NotSpd,

    #[error("matrix is rank deficient (eigenvalue ratio {ratio:.3e} below threshold)")]
    RankDeficient { ratio: f64 },

    #[error("decoder Jacobian is rank deficient (latent inertia eigenvalue ratio {ratio:.3e})")]
    RankDeficientJacobian { ratio: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("spring {edge} is degenerate (length {length:.3e} m)")]
    DegenerateSpring { edge: usize, length: f64 },

    #[error("node index {index} out of range (node count {count})")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("node {0} is pinned and cannot be actuated")]
    PinnedNode(usize),

    #[error("numerical blowup at t = {t:.6} s (state norm {norm:.3e}); try a smaller step")]
    NumericalBlowup { t: f64, norm: f64 },

    #[error("initial configuration rejection sampling exhausted after {0} tries")]
    RejectionExhausted(usize),

    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
