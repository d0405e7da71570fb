//! Reconstruction of deforming soft-tissue scenes from masked RGB-D video with a
//! grid-based dynamic radiance field, extraction of a closed tissue mesh, and a
//! small MLS-MPM elastic simulation on the result.

pub mod camera;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod mesh;
pub mod mlp;
pub mod motion;
pub mod mpm;
pub mod par;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
