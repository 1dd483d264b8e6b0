//! Error taxonomy shared across the framework.
//!
//! Evaluation errors ([`EvalError`]) come from the task expression itself and
//! are relayed to the controller as-is. Infrastructure errors
//! ([`FutureError`]) come from the machinery around the task: dead workers,
//! broken channels, protocol violations. The two kinds are never conflated so
//! callers can retry or escalate the right one.

use thiserror::Error;

/// An error raised while evaluating a task expression.
///
/// The message is preserved verbatim from the point of failure so the
/// controller re-raises exactly what a local evaluation would have produced.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct EvalError {
    pub message: String,
    /// Condition class, `"error"` for ordinary evaluation errors.
    pub class: String,
}

impl EvalError {
    pub fn new(message: impl Into<String>) -> Self {
        EvalError {
            message: message.into(),
            class: "error".to_string(),
        }
    }

    pub fn with_class(message: impl Into<String>, class: impl Into<String>) -> Self {
        EvalError {
            message: message.into(),
            class: class.into(),
        }
    }
}

/// An infrastructure failure: terminated workers, failed communication,
/// protocol violations.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("FutureError: {message}")]
pub struct FutureError {
    pub message: String,
    /// Whether relaunching the task elsewhere could plausibly succeed.
    pub retryable: bool,
}

impl FutureError {
    pub fn new(message: impl Into<String>) -> Self {
        FutureError {
            message: message.into(),
            retryable: false,
        }
    }

    pub fn retryable(message: impl Into<String>) -> Self {
        FutureError {
            message: message.into(),
            retryable: true,
        }
    }
}

/// A parse failure, with a 1-based source position.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at {line}:{col}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

/// Failures detected when a future is created, before anything launches.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CreateError {
    /// A free variable of the body is absent from the supplied environment.
    #[error("object '{0}' not found in the provided environment")]
    MissingGlobal(String),
    /// A captured value is bound to its creating session and cannot cross
    /// process boundaries.
    #[error("non-exportable value captured for '{0}'")]
    NonExportable(String),
    /// The backend could not launch the task.
    #[error(transparent)]
    Backend(#[from] FutureError),
}

/// Error raised by `value()`: either the task's own error or an
/// infrastructure failure, re-raised at the controller.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Future(#[from] FutureError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_error_displays_bare_message() {
        let e = EvalError::new("object 'k' not found");
        assert_eq!(e.to_string(), "object 'k' not found");
        assert_eq!(e.class, "error");
    }

    #[test]
    fn future_error_is_marked() {
        let e = FutureError::retryable("worker died");
        assert!(e.to_string().contains("FutureError"));
        assert!(e.retryable);
    }
}
