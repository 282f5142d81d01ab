//! Scene-text propagation for video.
//!
//! Given an annotated clip and a replaced-text reference ROI, this crate
//! frontalizes the text region in every frame, selects a high-quality
//! reference frame, models per-frame lighting (multiplicative ratio maps
//! over inpainted backgrounds) and sharpness changes (a fitted
//! oriented-Gaussian differential blur), and re-inserts the replaced ROI
//! into every frame with temporal smoothing of the transform parameters.
//!
//! Modules:
//!
//! - [`imgcore`] — image buffers, convolution, resampling, PNG I/O.
//! - [`geometry`] — quads, homographies, warping, parameter smoothing.
//! - [`blur`] — oriented-Gaussian differential transform and its fitter.
//! - [`photometry`] — background inpainting and lighting ratio maps.
//! - [`refselect`] — reference frame scoring and selection.
//! - [`metrics`] — MSE/PSNR/SSIM, trajectory jitter, blur-transfer
//!   correlation.
//! - [`synth`] — deterministic synthetic clip generator with ground truth.
//! - [`pipeline`] — end-to-end ingestion, recipe building, propagation.

pub mod error;
pub mod imgcore;
pub mod geometry;
pub mod blur;
pub mod photometry;
pub mod refselect;
pub mod metrics;
pub mod synth;
pub mod pipeline;

/// Default canonical frontal ROI width.
pub const CANONICAL_WIDTH: usize = 256;
/// Default canonical frontal ROI height.
pub const CANONICAL_HEIGHT: usize = 64;

pub use blur::{BlurParams, FitConfig, FitResult};
pub use error::{Error, Result};
pub use geometry::{Homography, RoiQuad};
pub use imgcore::{ImageBuffer, Kernel2D};
pub use metrics::BoxTrajectory;
pub use photometry::RatioMap;
pub use pipeline::{
    Clip, ClipFrame, FrameAnnotation, Manifest, PipelineConfig, RecipeSet, TimingReport,
    TransformRecipe,
};
pub use refselect::{FrameMeasurement, FrameQuality};
pub use synth::{GroundTruthBundle, ScenarioSpec};
