use thiserror::Error;

/// Unified error type for the whole crate.
///
/// Variants map one-to-one onto the failure classes surfaced by the CLI
/// (each gets its own exit code there), so library users can match on the
/// class rather than parse messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: dimension mismatch, expected {expected_w}x{expected_h}, got {actual_w}x{actual_h}")]
    DimensionMismatch {
        context: String,
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No eligible pixel survived masking when selecting an alignment region.
    #[error("empty region: no eligible pixels to align")]
    EmptyRegion,

    /// Region exists but holds fewer points than a rigid fit needs.
    #[error("degenerate region: {points} point(s), need at least {min}")]
    DegenerateRegion { points: usize, min: usize },

    /// Selected points do not constrain all six rigid degrees of freedom
    /// (collinear or coincident configuration).
    #[error("singular configuration: selected points do not determine a rigid transform")]
    SingularConfiguration,

    /// A metric was asked for on an empty support set.
    #[error("empty support: {0}")]
    EmptySupport(String),

    #[error("scene render failed: no surface covers pixel ({x}, {y}) in view {view}")]
    NoCoverage { x: usize, y: usize, view: String },

    #[error("unsupported gradient: {loss} with respect to {input}")]
    UnsupportedGradient {
        loss: &'static str,
        input: &'static str,
    },

    #[error("malformed {format} file {path}: {message}")]
    Format {
        format: &'static str,
        path: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Checks that two rasters agree on size; `context` names the pair in the error.
pub(crate) fn ensure_same_dims(
    context: &str,
    expected: (usize, usize),
    actual: (usize, usize),
) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected_w: expected.0,
            expected_h: expected.1,
            actual_w: actual.0,
            actual_h: actual.1,
        })
    }
}
