use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("rank-deficient ensemble: {0}")]
    RankDeficient(String),

    #[error("no complement space (Q = N = {0}); discrepancy model undefined")]
    NoComplement(usize),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("explicit Euler step unstable at step {step}: reduce step")]
    Unstable { step: usize },

    #[error("{0}")]
    Incompatible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
