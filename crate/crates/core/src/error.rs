use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("spacecraft {i} and {j} are {distance:.3e} m apart, below the separation guard")]
    Singularity { i: usize, j: usize, distance: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("pair index ({i}, {j}) out of range for {num_spacecraft} spacecraft")]
    PairOutOfRange {
        i: usize,
        j: usize,
        num_spacecraft: usize,
    },
    #[error("matrix is not positive definite (pivot {pivot} = {value:.3e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("oracle size guard: {0}")]
    OracleTooLarge(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
