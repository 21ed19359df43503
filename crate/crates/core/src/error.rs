use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("covariance B = ({b11}, {b12}, {b22}) is not positive semi-definite")]
    NotPsd { b11: f64, b12: f64, b22: f64 },

    #[error("mode {index} (lambda = {lambda}) left the PSD cone at t = {t}: v11 v22 - v12^2 = {deficit}")]
    PsdBreach {
        index: usize,
        lambda: f64,
        t: f64,
        deficit: f64,
    },

    #[error("non-finite state at t = {t}: {what}")]
    NonFinite { t: f64, what: String },

    #[error("negative radicand {value} in learning rate `{rule}`")]
    NegativeRadicand { rule: &'static str, value: f64 },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("volterra corrector failed to contract at t = {t} (residual {residual:e}); reduce dt")]
    CorrectorDiverged { t: f64, residual: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
