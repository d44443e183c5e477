use std::fmt;

pub const EXIT_OK: i32 = 0;
/// A rerun produced artifacts whose checksums differ from its manifest.
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Invalid configuration or arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Raised by `rerun` when checksums differ.
#[derive(Debug, Clone, PartialEq)]
pub struct ChecksumMismatch(pub Vec<String>);

impl fmt::Display for ChecksumMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "artifacts differ from the manifest: {}", self.0.join(", "))
    }
}

impl std::error::Error for ChecksumMismatch {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<ChecksumMismatch>() {
            return EXIT_MISMATCH;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<dfmerge::Error>() {
            return if e.is_io() {
                EXIT_IO
            } else if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_CONFIG
            };
        }
    }
    EXIT_CONFIG
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_the_error_kind() {
        assert_eq!(exit_code(&ConfigError("x".into()).into()), EXIT_CONFIG);
        assert_eq!(exit_code(&dfmerge::Error::Divergence { step: 3 }.into()), EXIT_NUMERICAL);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&dfmerge::Error::Io(io).into()), EXIT_IO);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&anyhow::Error::from(io).context("reading")), EXIT_IO);
        assert_eq!(exit_code(&ChecksumMismatch(vec!["a".into()]).into()), EXIT_MISMATCH);
    }
}
