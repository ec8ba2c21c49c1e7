use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("argument outside the function domain: {0}")]
    Domain(String),

    /// Cholesky met a non-positive pivot. For truncated factorizations this
    /// usually means the truncation tolerance is too loose or a nugget is needed.
    #[error(
        "matrix is not positive definite (pivot {pivot}); tighten the truncation \
         tolerance or add a nugget to the kernel"
    )]
    NotPositiveDefinite { pivot: usize },

    #[error("interval ({a}, {b}) carries no probability mass in working precision")]
    DegenerateInterval { a: f64, b: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dense assembly of dimension {n} exceeds the cap {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("adaptive cross approximation did not converge within rank {0}")]
    RankCapExceeded(usize),

    #[error("triangular factor has a zero on its diagonal at {0}")]
    SingularTriangle(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed serialized data: {0}")]
    Format(String),
}
