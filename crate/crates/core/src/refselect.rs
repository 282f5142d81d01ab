//! Reference frame selection: score frames on OCR confidence, sharpness,
//! contrast, and frontal pose; pick the best candidate.

use crate::error::{invalid_arg, Error, Result};
use crate::imgcore::ImageBuffer;

/// Raw per-frame measurements feeding reference selection.
#[derive(Debug, Clone, Copy)]
pub struct FrameMeasurement {
    pub frame_index: usize,
    /// OCR confidence reported by the annotation source, in `[0, 1]`.
    pub ocr_confidence: f64,
    /// Variance of the Laplacian of the luminance ROI.
    pub sharpness: f64,
    /// Normalized interclass variance (text contrast), in `[0, 1]`.
    pub s1: f64,
    /// Quad-area to bounding-box-area ratio (frontal pose), in `(0, 1]`.
    pub s2: f64,
}

/// A scored frame: measurements plus the composite quality score.
#[derive(Debug, Clone, Copy)]
pub struct FrameQuality {
    pub frame_index: usize,
    pub ocr_confidence: f64,
    pub sharpness: f64,
    pub s1: f64,
    pub s2: f64,
    /// `alpha1 * s1 + alpha2 * s2`.
    pub composite: f64,
}

impl FrameQuality {
    /// Attach the composite score for the given weights.
    pub fn from_measurement(m: &FrameMeasurement, alpha1: f64, alpha2: f64) -> Self {
        Self {
            frame_index: m.frame_index,
            ocr_confidence: m.ocr_confidence,
            sharpness: m.sharpness,
            s1: m.s1,
            s2: m.s2,
            composite: alpha1 * m.s1 + alpha2 * m.s2,
        }
    }
}

/// Sharpness: variance of the 3x3 Laplacian response over the valid
/// (non-border) region of a single-channel image.
pub fn sharpness_score(roi_luma: &ImageBuffer) -> Result<f64> {
    if roi_luma.channels() != 1 {
        return Err(invalid_arg!("sharpness_score expects a 1-channel image"));
    }
    let (w, h, _) = roi_luma.dims();
    if w < 3 || h < 3 {
        return Err(invalid_arg!(
            "image must be at least 3x3 for the Laplacian, got {w}x{h}"
        ));
    }
    let mut responses = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = roi_luma.get(x, y, 0) as f64;
            let lap = roi_luma.get(x - 1, y, 0) as f64
                + roi_luma.get(x + 1, y, 0) as f64
                + roi_luma.get(x, y - 1, 0) as f64
                + roi_luma.get(x, y + 1, 0) as f64
                - 4.0 * c;
            responses.push(lap);
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n)
}

/// 256-bin intensity histogram of a single-channel image.
pub(crate) fn histogram_256(img: &ImageBuffer) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        let bin = ((v * 255.0).round() as usize).min(255);
        hist[bin] += 1;
    }
    hist
}

/// Otsu threshold search on a 256-bin histogram. Returns
/// `(threshold_bin, between_class_variance, total_variance)`.
pub(crate) fn otsu_statistics(hist: &[u64; 256]) -> (usize, f64, f64) {
    let total: u64 = hist.iter().sum();
    let total_f = total as f64;
    let global_sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let global_mean = global_sum / total_f;
    let total_var: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 * (i as f64 - global_mean).powi(2))
        .sum::<f64>()
        / total_f;

    let mut best_thresh = 0usize;
    let mut best_between = 0.0f64;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for t in 0..256 {
        w0 += hist[t] as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total_f - w0;
        if w1 == 0.0 {
            break;
        }
        sum0 += t as f64 * hist[t] as f64;
        let m0 = sum0 / w0;
        let m1 = (global_sum - sum0) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2) / (total_f * total_f);
        if between > best_between {
            best_between = between;
            best_thresh = t;
        }
    }
    (best_thresh, best_between, total_var)
}

/// Text-contrast score: Otsu's between-class variance at the optimal
/// threshold, normalized by the total variance. Returns 0 for constant
/// images (no contrast) instead of erroring.
pub fn contrast_score(roi_luma: &ImageBuffer) -> Result<f64> {
    if roi_luma.channels() != 1 {
        return Err(invalid_arg!("contrast_score expects a 1-channel image"));
    }
    let hist = histogram_256(roi_luma);
    let (_, between, total) = otsu_statistics(&hist);
    if total <= 0.0 {
        return Ok(0.0);
    }
    Ok((between / total).clamp(0.0, 1.0))
}

/// Binary text mask from Otsu thresholding of a luminance ROI: the minority
/// class is taken as text. Mask samples are 1.0 on text, 0.0 on background.
pub fn otsu_text_mask(roi_luma: &ImageBuffer) -> Result<ImageBuffer> {
    if roi_luma.channels() != 1 {
        return Err(invalid_arg!("otsu_text_mask expects a 1-channel image"));
    }
    let hist = histogram_256(roi_luma);
    let (thresh, _, _) = otsu_statistics(&hist);
    let cutoff = thresh as f32 / 255.0;
    let below: usize = roi_luma.data().iter().filter(|&&v| v <= cutoff).count();
    let text_is_below = below * 2 <= roi_luma.data().len();
    Ok(ImageBuffer::from_fn(
        roi_luma.width(),
        roi_luma.height(),
        1,
        |x, y, _| {
            let v = roi_luma.get(x, y, 0);
            let is_text = if text_is_below {
                v <= cutoff
            } else {
                v > cutoff
            };
            if is_text {
                1.0
            } else {
                0.0
            }
        },
    ))
}

/// Pick the reference frame: filter by `ocr_confidence > conf_floor`, keep
/// the `top_k` sharpest candidates, then return the index of the frame with
/// the highest composite score `alpha1*s1 + alpha2*s2`. Ties break toward
/// the lowest frame index.
pub fn select_reference(
    frames: &[FrameMeasurement],
    alpha1: f64,
    alpha2: f64,
    conf_floor: f64,
    top_k: usize,
) -> Result<usize> {
    if top_k == 0 {
        return Err(invalid_arg!("top_k must be positive"));
    }
    let mut confident: Vec<&FrameMeasurement> = frames
        .iter()
        .filter(|m| m.ocr_confidence > conf_floor)
        .collect();
    if confident.is_empty() {
        let best_rejected = frames
            .iter()
            .map(|m| m.ocr_confidence)
            .fold(0.0f64, f64::max);
        return Err(Error::NoCandidate { best_rejected });
    }
    // Stable ordering: sharpness descending, index ascending on ties.
    confident.sort_by(|a, b| {
        b.sharpness
            .partial_cmp(&a.sharpness)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.frame_index.cmp(&b.frame_index))
    });
    confident.truncate(top_k);

    let best = confident
        .iter()
        .map(|m| FrameQuality::from_measurement(m, alpha1, alpha2))
        .max_by(|a, b| {
            a.composite
                .partial_cmp(&b.composite)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.frame_index.cmp(&a.frame_index))
        })
        .expect("candidate list is non-empty");
    Ok(best.frame_index)
}
