//! Panoramic affordance grounding.
//!
//! A task query and an equirectangular panorama go in; a panoramic mask of
//! the object that affords the task comes out. The pipeline routes the query
//! through numbered grid overlays ([`grid`]), looks at the routed region
//! through a virtual perspective camera ([`gaze`]), grounds the object with a
//! detector and a promptable segmenter ([`grounding`]) and maps the mask back
//! onto the sphere ([`geometry`]). [`eval`] scores predictions against
//! annotated masks.

pub mod config;
pub mod error;
pub mod eval;
pub mod gaze;
pub mod geometry;
pub mod grid;
pub mod grounding;
pub mod raster;
pub mod synthetic;

pub use error::{Error, Result};
