use alloc::string::String;

use crate::geometry::FrameId;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("frame mismatch: expected {expected:?}, found {found:?}")]
    FrameMismatch { expected: FrameId, found: FrameId },

    #[error("degenerate gaze ray: eye midpoint coincides with the screen point")]
    DegenerateRay,

    #[error("rotation is not a proper orthonormal matrix (deviation {deviation:e})")]
    InvalidRotation { deviation: f64 },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate design: all regressor values are equal")]
    DegenerateDesign,

    #[error("logistic fit requires both classes, only {present} present")]
    MissingClass { present: &'static str },

    #[error("classes are perfectly separable; maximum likelihood estimate diverges")]
    Separation,

    #[error("invalid trackability model: {0}")]
    InvalidModel(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
