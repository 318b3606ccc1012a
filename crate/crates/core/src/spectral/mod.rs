//! Periodic grid, transforms, and Fourier-multiplier operators.

mod fft;
mod field;
mod grid;
mod ops;

pub use field::{FieldComponents, Multipliable, ScalarField, SobolevIndex, VelocityField};
pub use grid::TorusGrid;
pub use ops::{
    apply_derivative, bessel_norm, bessel_norm_sq, dealiased_product, divergence, gradient,
    hessian_entry, inner_product, laplacian, leray_project, mollify, partial, quadrature_inner,
    truncate, two_thirds, DealiasRule, Derivative, DerivativeOutput, Truncation,
};
pub(crate) use ops::{mask_in_place, pad, project_in_place, unpad};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid field")]
    InvalidField,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("component count mismatch")]
    ComponentMismatch,
    #[error("axis {0} out of range")]
    InvalidAxis(usize),
    #[error("Sobolev index must be finite, got {0}")]
    InvalidIndex(f64),
    #[error("{0}")]
    InvalidParameter(String),
}
