//! Neural field to textured mesh pipeline.
//!
//! A scene is split into overlapping blocks. Each block trains a hash-encoded neural field whose
//! samples live on an optimizable octahedral lattice mesh. Training produces five LOD meshes; the
//! baker keeps only visible, opaque faces and stores the field's features in BC4-compressed
//! texture atlases; the rasterizer draws those meshes and decodes colors per pixel with a small
//! MLP.

pub mod bake;
pub mod error;
pub mod field;
pub mod geometry;
pub mod imaging;
pub mod partition;
pub mod pipeline;
pub mod raster;
pub mod train;

pub use error::{Error, Result};
