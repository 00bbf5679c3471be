use thiserror::Error;

/// An input value that breaks a domain invariant, tagged with the field path
/// it came from (for example `services[3].gamma_gflops`).
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {message}")]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl ValidationError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Re-roots the error under `prefix`, e.g. `rate_bps` -> `environment.rate_bps`.
    pub fn under(mut self, prefix: &str) -> Self {
        self.path = if self.path.is_empty() {
            prefix.to_string()
        } else if self.path.starts_with('[') {
            format!("{prefix}{}", self.path)
        } else {
            format!("{prefix}.{}", self.path)
        };
        self
    }
}

pub(crate) fn ensure(cond: bool, path: &str, message: impl Into<String>) -> Result<(), ValidationError> {
    if cond {
        Ok(())
    } else {
        Err(ValidationError::new(path, message))
    }
}

pub(crate) fn ensure_finite(value: f64, path: &str) -> Result<(), ValidationError> {
    ensure(value.is_finite(), path, format!("must be finite, got {value}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefixes_paths() {
        let err = ValidationError::new("rate_bps", "must be positive").under("environment");
        assert_eq!(err.to_string(), "environment.rate_bps: must be positive");
        let err = ValidationError::new("[2]", "bad").under("types.pmf");
        assert_eq!(err.path, "types.pmf[2]");
    }
}
