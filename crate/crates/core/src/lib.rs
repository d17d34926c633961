//! Scattered-data interpolation with multiquadric and Gaussian radial basis
//! functions, analytic derivatives of the interpolant, and a harness that
//! measures how fast interpolation errors and their derivatives decay with
//! the fill distance.

pub mod bounds;
pub mod error;
pub mod geometry;
pub mod interpolant;
pub mod kernels;
pub mod linalg;
pub mod multiindex;
pub mod polybasis;
pub mod scalar;
pub mod study;

pub use error::{Error, Result};
pub use geometry::{CubeDomain, PointScheme, PointSet};
pub use kernels::{Kernel, KernelSpec};
pub use multiindex::MultiIndex;
pub use scalar::{Mp, Real};
