use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible acceleration target {requested}: fully sampled center alone limits AF to at most {max_achievable:.4}")]
    InfeasibleMask { requested: f64, max_achievable: f64 },

    #[error("degenerate gradient scheme: tensor design matrix has rank {rank}, need 7")]
    DegenerateGradients { rank: usize },

    #[error("degenerate training matrix: {0}")]
    DegenerateTraining(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("bad magic in {path:?}: expected \"KLRVOL01\", found {found:?}")]
    BadMagic { path: PathBuf, found: String },

    #[error("unsupported dtype code {code} in {path:?}")]
    BadDtype { path: PathBuf, code: u8 },

    #[error("dims overflow in {path:?}: element count {count} exceeds 2^32")]
    DimsOverflow { path: PathBuf, count: u128 },

    #[error("truncated payload in {path:?}: header needs {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: u64, found: u64 },

    #[error("unexpected container content in {path:?}: {msg}")]
    Content { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
}
