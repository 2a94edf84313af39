//! Incompressible diffeomorphic registration with divergence-conforming
//! B-spline stationary velocity fields.
//!
//! The core is generic over [`scalar::Real`] (`f32` or `f64`); the aliases
//! below fix the usual double-precision types.

pub mod bspline1d;
pub mod constraint;
pub mod error;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod interp;
pub mod io_image;
pub mod metrics;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};

pub type Svf = field::DivConformingSvf<f64>;
pub type ClassicalField = field::ClassicalSvf<f64>;
pub type Image = io_image::Image3D<f64>;
pub type Mask = constraint::MaskRegion<f64>;
pub type Grid = field::ControlGrid<f64>;
pub type Voxels = geometry::VoxelGrid<f64>;

pub type SvfF32 = field::DivConformingSvf<f32>;
pub type ImageF32 = io_image::Image3D<f32>;
