//! Frequency-aware textured 2D Gaussian splatting: scene model, renderer,
//! hand-written reverse pass, two-stage trainer and analysis tools.

pub mod bench;
pub mod checkpoint;
pub mod compositor;
pub mod diff;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod raster;
pub mod scene;
pub mod sh;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
pub use raster::Image;
pub use scene::{Camera, GaussianPrimitive, Scene, View};
