use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("target unreachable: law-of-cosines argument {cosine} outside [-1, 1]")]
    Unreachable { cosine: f64 },

    #[error("base yaw undefined: target lies on the vertical axis but the wrist offset is radial")]
    SingularYaw,

    #[error("joint {joint} inertia {inertia:e} kg·m² is at or below the degeneracy threshold")]
    DegenerateInertia { joint: usize, inertia: f64 },

    #[error("riccati iteration failed to produce a stabilizing solution: {0}")]
    NotStabilizable(String),

    #[error("riccati residual {residual:e} exceeds bound {bound:e}")]
    IllConditioned { residual: f64, bound: f64 },

    #[error("gain computation failed at node {index:?} (angles {angles:?}): {source}")]
    NodeFailure {
        index: Option<usize>,
        angles: [f64; 4],
        source: Box<Error>,
    },

    #[error("joint angles {angles:?} fall outside the table bounds")]
    OutOfBounds { angles: [f64; 4] },

    #[error("bad magic bytes in table file")]
    BadMagic,

    #[error("unsupported table format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("table parameter digest does not match the current arm configuration")]
    DigestMismatch,

    #[error("table data truncated or malformed: {0}")]
    TruncatedData(String),

    #[error("benchmark needs at least one iteration")]
    EmptyBenchmark,
}

impl Error {
    /// Wraps an error raised while solving for a table node.
    pub(crate) fn at_node(self, index: Option<usize>, angles: [f64; 4]) -> Error {
        Error::NodeFailure {
            index,
            angles,
            source: Box::new(self),
        }
    }
}
