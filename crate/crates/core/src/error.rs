use thiserror::Error;

/// Errors raised by the numerical core and the report layer.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("point lies outside the domain: {0}")]
    OutsideDomain(String),

    #[error("weight expression, column {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("weight is +inf on {count} quadrature node(s), starting with {nodes:?}")]
    InfiniteWeight { count: usize, nodes: Vec<usize> },

    #[error("matrix is indefinite (smallest eigenvalue {min_eig:e}, scale {scale:e})")]
    Indefinite { min_eig: f64, scale: f64 },

    #[error("fiber datum not representable by the joint basis; offending fiber monomials: {0:?}")]
    Unrepresentable(Vec<Vec<u32>>),

    #[error("constraint system is rank deficient after thresholding")]
    RankDeficient,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
