//! Quaternion algebra and the small dense matrices the kinematics and the
//! QP solver are built on.

mod mat;
mod quaternion;

use thiserror::Error;

pub use mat::{dot, max_abs, norm, Mat};
pub use quaternion::{PureQuaternion, Quaternion, UnitQuaternion, RENORMALIZE_TOLERANCE, UNIT_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("quaternion norm {norm} is not within tolerance of 1")]
    NotUnit { norm: f64 },
    #[error("rotation axis norm {norm} is not within tolerance of 1")]
    NonUnitAxis { norm: f64 },
    #[error("cannot normalize a zero or non-finite quaternion")]
    ZeroNorm,
    #[error("non-finite value")]
    NonFinite,
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("matrix of shape {0:?} is not square")]
    NotSquare((usize, usize)),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is singular")]
    Singular,
}
