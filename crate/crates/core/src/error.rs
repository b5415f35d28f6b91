use thiserror::Error;

/// A parameter that failed validation, with the dotted path of the
/// offending field (e.g. `optics.lambda_p`).
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {reason}")]
pub struct InvalidParameter {
    pub field: String,
    pub reason: String,
}

impl InvalidParameter {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Prefix the field path with an enclosing section name.
    pub fn within(mut self, section: &str) -> Self {
        self.field = format!("{section}.{}", self.field);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("finite-spread model requires sigma_p > 0 (got {0}); use the closed-form path")]
    ZeroBiphotonSpread(f64),
    #[error("degenerate normalization of the final state (delta_t = {delta_t:e} s)")]
    DegenerateNormalization { delta_t: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error(
        "quadrature did not converge: doubling the node count changed the result by {relative_change:e} (relative)"
    )]
    NonConvergence { relative_change: f64 },
    #[error("integral has an imaginary residual of {relative:e} of its scale")]
    ImaginaryResidual { relative: f64 },
    #[error("{0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scan has no stage positions")]
    EmptyScan,
    #[error(transparent)]
    Invalid(#[from] InvalidParameter),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("trace has {0} points; at least 15 are needed to separate feature and background")]
    TooFewPoints(usize),
    #[error("background estimate is not positive ({0})")]
    NonPositiveBackground(f64),
    #[error("sinusoid fit needs at least 5 points (got {0})")]
    TooFewFitPoints(usize),
    #[error("power-law fit needs at least 3 points (got {0})")]
    TooFewCalibrationPoints(usize),
    #[error("power-law fit requires positive values (found {0} at index {1})")]
    NonPositiveCalibration(f64, usize),
    #[error("input lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("rotation values span zero width")]
    ZeroSpan,
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("config error at {0}")]
    Config(#[from] InvalidParameter),
}
