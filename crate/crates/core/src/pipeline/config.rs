//! Pipeline configuration with file loading (TOML key-value pairs).

use std::path::Path;

use crate::blur::FitConfig;
use crate::error::{invalid_arg, Error, Result};
use crate::{CANONICAL_HEIGHT, CANONICAL_WIDTH};

/// Every tunable default of the propagation pipeline. `lambda_t` smooths
/// the homography parameters over time; `lambda_R`/`lambda_T` weight the
/// blur-fit reconstruction and temporal terms.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Contrast weight of the composite reference score.
    pub alpha1: f64,
    /// Frontalness weight of the composite reference score.
    pub alpha2: f64,
    /// OCR confidence floor for reference candidates.
    pub conf_floor: f64,
    /// Number of sharpest candidates kept before composite scoring.
    pub top_k: usize,
    /// Homography-sequence smoothing weight.
    pub lambda_t: f64,
    /// Blur-fit reconstruction weight.
    #[serde(rename = "lambda_R")]
    pub lambda_r: f64,
    /// Blur-fit temporal consistency weight.
    #[serde(rename = "lambda_T")]
    pub lambda_t_blur: f64,
    /// Temporal window length (frames) for background averaging and blur
    /// fitting.
    pub window: usize,
    /// Ratio-map division guard.
    pub epsilon: f32,
    /// Compositing feather width in pixels.
    pub feather: f64,
    /// Canonical frontal ROI width.
    pub canonical_width: usize,
    /// Canonical frontal ROI height.
    pub canonical_height: usize,
    /// Blur-fit refinement iteration cap.
    pub fit_max_iterations: usize,
    /// Blur-fit relative improvement tolerance.
    pub fit_tolerance: f64,
    /// Undo integer translation between reference and window frames before
    /// blur fitting.
    pub align_translation: bool,
    /// Translation search radius, pixels.
    pub max_shift: usize,
    /// Moving-average length of the jitter metric.
    pub jitter_lowpass_window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.7,
            alpha2: 0.3,
            conf_floor: 0.99,
            top_k: 10,
            lambda_t: 10.0,
            lambda_r: 1.0,
            lambda_t_blur: 0.1,
            window: 3,
            epsilon: 0.01,
            feather: 2.0,
            canonical_width: CANONICAL_WIDTH,
            canonical_height: CANONICAL_HEIGHT,
            fit_max_iterations: 30,
            fit_tolerance: 1e-6,
            align_translation: true,
            max_shift: 6,
            jitter_lowpass_window: 5,
        }
    }
}

impl PipelineConfig {
    /// Blur-fit settings derived from the pipeline defaults.
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            lambda_r: self.lambda_r,
            lambda_t: self.lambda_t_blur,
            window: self.window.max(1),
            max_iterations: self.fit_max_iterations,
            tolerance: self.fit_tolerance,
            align_translation: self.align_translation,
            max_shift: self.max_shift,
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return Err(invalid_arg!("alpha weights must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.conf_floor) {
            return Err(invalid_arg!("conf_floor must lie in [0, 1]"));
        }
        if self.top_k == 0 {
            return Err(invalid_arg!("top_k must be positive"));
        }
        if self.lambda_t < 0.0 || self.lambda_r < 0.0 || self.lambda_t_blur < 0.0 {
            return Err(invalid_arg!("lambda weights must be non-negative"));
        }
        if self.window == 0 {
            return Err(invalid_arg!("window must be at least 1"));
        }
        if self.epsilon <= 0.0 {
            return Err(invalid_arg!("epsilon must be positive"));
        }
        if self.feather < 0.0 {
            return Err(invalid_arg!("feather must be non-negative"));
        }
        if self.canonical_width < 8 || self.canonical_height < 8 {
            return Err(invalid_arg!("canonical size must be at least 8x8"));
        }
        Ok(())
    }

    /// Load from a TOML key-value file; unspecified keys keep defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let config: PipelineConfig = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|span| text[..span.start.min(text.len())].lines().count())
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }
}
