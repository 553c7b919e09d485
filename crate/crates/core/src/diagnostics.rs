use serde::{Deserialize, Serialize};
use std::fmt;

/// A non-fatal validity or regime diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub code: String,
    pub message: String,
}

impl Warning {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Warning {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}

/// Threshold at which a "much smaller than" ratio is reported.
pub const WARN_RATIO: f64 = 0.1;
/// Threshold at which a "much smaller than" ratio becomes an error.
pub const ERROR_RATIO: f64 = 0.5;
