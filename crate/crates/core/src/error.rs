use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data quality error: {malformed} of {total} rows malformed")]
    DataQuality { total: usize, malformed: usize },
    #[error("point ({lat}, {lon}) is outside the grid")]
    OutOfGrid { lat: f64, lon: f64 },
    #[error("timestamp {ts} precedes the slot epoch {epoch}")]
    BeforeEpoch { ts: i64, epoch: i64 },
    #[error("slot {t} has insufficient history (need at least {history} slots)")]
    InsufficientHistory { t: usize, history: usize },
    #[error("slot {t} has no next-slot target within {slots} slots")]
    NoTarget { t: usize, slots: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical failure in {component}: {detail}")]
    NumericalFailure { component: String, detail: String },
    #[error("metric undefined on an empty input")]
    UndefinedMetric,
    #[error("region vocabulary mismatch: {0}")]
    Vocabulary(String),
    #[error("unknown baseline `{0}`")]
    UnknownBaseline(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
