//! Core library for object-aware panoramic 3D scene construction.
//!
//! The pipeline fits a sphere distance field from multi-view depth/normal
//! predictions, builds and fuses a panoramic scene mesh, plans an adaptive
//! object-aware closed camera trajectory from a semantic scene graph,
//! renders novel panoramas with disocclusion masks, encodes camera motion
//! for conditioning, and synthesizes motion-conditioned inpainting
//! training pairs.

pub mod dataset;
pub mod error;
pub mod field;
pub mod graph;
pub mod grid;
pub mod io;
pub mod mesh;
pub mod motion;
pub(crate) mod optim;
pub mod pano;
pub mod raycast;
pub mod render;
pub mod scene;
pub mod trajectory;

pub use error::{Error, Result};
