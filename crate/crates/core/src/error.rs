use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("unknown expert '{0}'")]
    UnknownExpert(String),
    #[error("duplicate expert '{0}'")]
    DuplicateExpert(String),
    #[error("unknown category '{0}'")]
    UnknownCategory(String),
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<SimError>,
    },
    #[error(transparent)]
    Nn(#[from] routesim_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("toml: {0}")]
    Toml(String),
}

impl From<toml::de::Error> for SimError {
    fn from(e: toml::de::Error) -> Self {
        SimError::Toml(e.to_string())
    }
}

impl From<toml::ser::Error> for SimError {
    fn from(e: toml::ser::Error) -> Self {
        SimError::Toml(e.to_string())
    }
}

impl SimError {
    pub fn at_step(self, step: u64) -> Self {
        SimError::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
