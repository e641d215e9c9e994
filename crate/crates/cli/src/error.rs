use serde::Serialize;
use thiserror::Error;

/// A config problem located by a dotted path such as `experiment.epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl FieldError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration")]
    Validation(Vec<FieldError>),

    #[error("{operation} failed: {source}")]
    Numerical {
        operation: &'static str,
        source: aniso_privacy::Error,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Numerical { .. } => 2,
        }
    }

    /// Machine-readable description printed on failure.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Validation(errors) => serde_json::json!({
                "status": "invalid",
                "errors": errors,
            }),
            CliError::Numerical { operation, source } => serde_json::json!({
                "status": "numerical-error",
                "operation": operation,
                "error": source.to_string(),
            }),
            CliError::Io(msg) => serde_json::json!({
                "status": "io-error",
                "errors": [FieldError::new("", msg.clone())],
            }),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Tags a library error raised while checking the config.
pub fn at(path: impl Into<String>) -> impl FnOnce(aniso_privacy::Error) -> CliError {
    let path = path.into();
    move |e| {
        let path = match &e {
            aniso_privacy::Error::InvalidParameter { name, .. } if !path.ends_with(name) => format!("{path}.{name}"),
            _ => path,
        };
        CliError::Validation(vec![FieldError::new(path, e.to_string())])
    }
}

/// Tags a library error raised during computation.
pub fn during(operation: &'static str) -> impl FnOnce(aniso_privacy::Error) -> CliError {
    move |source| CliError::Numerical { operation, source }
}
