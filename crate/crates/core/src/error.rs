use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid OFDM configuration: {0}")]
    Ofdm(String),

    #[error("cannot pick {requested} items out of {available}")]
    TooMany { requested: usize, available: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("noise power undefined: the noiseless signal has zero energy")]
    ZeroSignal,

    #[error("reference channel has zero energy on the scored rows")]
    ZeroReference,

    #[error("non-finite value in {quantity} at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        quantity: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
