pub mod error;
pub mod linalg;

pub use error::{Error, Result};
pub mod geometry;
pub mod models;
pub mod frame;
pub mod vertex;
pub mod wannier;
pub mod extension;
pub mod face2d;
pub mod cell3d;
pub mod smoothing;
pub mod pipeline;
