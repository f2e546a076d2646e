//! Differentiable 2D Gaussian surfel splatting with spatially varying color
//! and opacity.
//!
//! A [`Scene`] is a list of planar surfels. Each surfel carries spherical
//! harmonics for view-dependent color and an [`Appearance`] that modulates
//! color and opacity across the surfel's own uv plane. [`renderer`]
//! composites them front to back along exact ray-plane intersections and
//! provides the matching backward pass; [`training`] fits scenes to images.

pub mod appearance;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod renderer;
pub mod scene;
pub mod training;

pub use appearance::{Appearance, KernelForm, VariantSpec, VariantTag};
pub use error::{Error, Result};
pub use geometry::{Camera, SurfelGeometry};
pub use image::Image;
pub use renderer::{render, render_backward, GradientBuffer, RenderConfig, RenderOutput};
pub use scene::{Scene, Surfel};
pub use training::{fit, Dataset, FitResult, TrainConfig, TrainingView};
