//! Tensorial radiance fields with appearance-only style adaptation.
//!
//! A scene is fitted as a vector-matrix factored grid ([`grid::VMGrid`]) by
//! analytic-gradient Adam on posed images ([`optim`]). A sparse set of views
//! rendered along a spiral is stylized externally, and the grid's appearance
//! factors are fine-tuned against those priors while density stays frozen
//! ([`style`]). Stylized renders are scored for view consistency by warping
//! frames with reprojection or external optical flow ([`consistency`]).

pub mod camera;
pub mod checkpoint;
pub mod consistency;
pub mod error;
pub mod grid;
pub mod imaging;
pub mod math;
pub mod optim;
pub mod render;
pub mod scene;
pub mod sh;
pub mod style;

pub use camera::{Camera, Ray};
pub use error::{Error, Result};
pub use grid::{Aabb, GridGradients, GridShape, VMGrid};
pub use optim::{GradMask, TrainConfig};
pub use render::{RenderConfig, RenderOutput};
