//! Numerical core for ankle fracture reduction planning.
//!
//! The crate covers the full pipeline from training data to an executable
//! plan: triangle-mesh geometry and spatial queries ([`geometry`]), scalar
//! image volumes with NIfTI I/O ([`volume`]), statistical shape models built
//! by Procrustes alignment + PCA ([`shape_model`]), point-set registration
//! ([`pointreg`]), coupled model-to-image fitting ([`casm_fit`]),
//! contralateral mirroring and reduction planning ([`reduction`]), and a
//! synthetic-data generator used as ground truth in tests ([`phantom`]).
//!
//! Everything numeric is generic over the scalar type through [`Real`]
//! (`f32` or `f64`); the aliases at the crate root pin the `f64`
//! instantiation used by the command-line tools.

pub mod casm_fit;
pub mod geometry;
pub mod phantom;
pub mod pointreg;
pub mod reduction;
pub mod shape_model;
pub mod volume;

mod scalar;

pub use scalar::Real;

/// Scalar type used by the binaries and the phantom generator.
pub type Scalar = f64;

pub type Mesh = geometry::TriangleMesh<Scalar>;
pub type Transform = geometry::SimilarityTransform<Scalar>;
pub type Plane = geometry::MirrorPlane<Scalar>;
pub type Cloud = pointreg::PointCloud<Scalar>;
pub type Volume = volume::Volume3<Scalar>;
pub type Model = shape_model::ShapeModel<Scalar>;
