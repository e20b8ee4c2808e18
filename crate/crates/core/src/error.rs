use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector is not unit (norm {norm})")]
    NotUnit { norm: f64 },

    #[error("matrix is not a proper rotation (defect {deviation:.3e})")]
    NotOrthogonal { deviation: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A modelling assumption is violated; `label` names it, e.g. `H1` or `K2`.
    #[error("assumption ({label}) violated: {detail}")]
    Assumption { label: &'static str, detail: String },

    #[error("unknown shape `{name}`; catalogue: {catalogue}")]
    UnknownShape { name: String, catalogue: String },

    #[error("index {index} out of range {range}")]
    OutOfRange { index: usize, range: &'static str },

    #[error("custom surface density `{0}` does not provide a derivative")]
    MissingDerivative(String),

    #[error("mollifier radius {sigma} is below twice the grid spacing {h}")]
    SigmaTooSmall { sigma: f64, h: f64 },

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error("field/grid mismatch: {0}")]
    Mismatch(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier, used for machine-parseable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotUnit { .. } => "not_unit",
            Error::NotOrthogonal { .. } => "not_orthogonal",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Assumption { .. } => "assumption",
            Error::UnknownShape { .. } => "unknown_shape",
            Error::OutOfRange { .. } => "out_of_range",
            Error::MissingDerivative(_) => "missing_derivative",
            Error::SigmaTooSmall { .. } => "sigma_too_small",
            Error::Singular(_) => "singular",
            Error::Mismatch(_) => "mismatch",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
