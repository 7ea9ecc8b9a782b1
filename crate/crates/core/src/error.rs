use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh validation failed: {0}")]
    MeshValidation(String),

    #[error("mesh file parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("unsupported quadrature degree {0}")]
    UnsupportedDegree(usize),

    #[error("element {elem} is not positively oriented (det B = {det:e})")]
    Orientation { elem: usize, det: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("patch compatibility violated at vertex {vertex}: relative residual {residual:e}")]
    Compatibility { vertex: usize, residual: f64 },

    #[error("unknown field `{0}`")]
    UnknownField(String),

    #[error("incompatible input: {0}")]
    Incompatible(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
