use thiserror::Error;

use crate::oracle::OracleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive altitude above ground (z = {z}, z_ground = {z_ground})")]
    NonPositiveAltitude { z: f64, z_ground: f64 },

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("unknown reference `{label}` at `{path}`")]
    UnknownReference { path: String, label: String },

    #[error("no landmark prior resolves for the instruction landmarks")]
    NoLandmarkPrior,

    #[error("plan exhausted")]
    PlanExhausted,

    #[error("action issued after stop")]
    ActionAfterStop,

    #[error("cannot aggregate an empty metrics list")]
    EmptyMetrics,

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
