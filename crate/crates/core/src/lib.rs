//! Semantic-guided conditional texture generation for 3D meshes.
//!
//! A mesh is projected into a fixed set of canonical views whose projected
//! coordinates serve as UV maps. A style-based generator produces one texture
//! per view from a stack of per-layer latent codes; the first `n` codes come
//! from a structure encoder fed with the view's segmentation map and the rest
//! from a style encoder fed with a reference image, shared across views.

pub mod app;
pub mod encoders;
pub mod error;
pub mod generator;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod training;

pub use error::{Error, Result};
