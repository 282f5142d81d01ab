//! Lighting correction: plain-background estimation by diffusion
//! inpainting, temporal averaging, and multiplicative ratio maps.

use crate::error::{invalid_arg, Error, Result};
use crate::imgcore::ImageBuffer;

/// Gains are clamped to this range to guard against alignment artifacts.
pub const GAIN_MIN: f32 = 0.1;
pub const GAIN_MAX: f32 = 10.0;

/// Fixed-point scale used when a ratio map is serialized as a 16-bit gain
/// image: `gain = stored_value / GAIN_FIXED_POINT_SCALE`.
pub const GAIN_FIXED_POINT_SCALE: f64 = 6553.5;

/// Per-pixel, per-channel multiplicative gain field.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioMap {
    width: usize,
    height: usize,
    channels: usize,
    gains: Vec<f32>,
    epsilon: f32,
    unit: bool,
}

impl RatioMap {
    /// Exact all-ones gain field (used for reference frames).
    pub fn unit(width: usize, height: usize, channels: usize, epsilon: f32) -> Self {
        Self {
            width,
            height,
            channels,
            gains: vec![1.0; width * height * channels],
            epsilon,
            unit: true,
        }
    }

    fn from_gains(
        width: usize,
        height: usize,
        channels: usize,
        gains: Vec<f32>,
        epsilon: f32,
    ) -> Self {
        debug_assert_eq!(gains.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            gains,
            epsilon,
            unit: false,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }

    /// True when this is the exact unit field of a reference frame.
    pub fn is_unit(&self) -> bool {
        self.unit
    }

    pub fn gains(&self) -> &[f32] {
        &self.gains
    }

    #[inline]
    pub fn gain_at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.gains[(y * self.width + x) * self.channels + c]
    }

    /// Snap every gain onto the 16-bit fixed-point grid used by the
    /// serialized form, making in-memory and round-tripped maps identical.
    /// Unit maps are left exact.
    pub fn quantized(&self) -> Self {
        if self.unit {
            return self.clone();
        }
        let gains = self
            .gains
            .iter()
            .map(|&g| {
                let q = (g as f64 * GAIN_FIXED_POINT_SCALE).round().clamp(0.0, 65535.0);
                (q / GAIN_FIXED_POINT_SCALE) as f32
            })
            .collect();
        Self {
            gains,
            ..self.clone()
        }
    }

    /// Raw 16-bit samples for serialization.
    pub fn to_u16_samples(&self) -> Vec<u16> {
        self.gains
            .iter()
            .map(|&g| (g as f64 * GAIN_FIXED_POINT_SCALE).round().clamp(0.0, 65535.0) as u16)
            .collect()
    }

    /// Rebuild from 16-bit samples.
    pub fn from_u16_samples(
        width: usize,
        height: usize,
        channels: usize,
        samples: &[u16],
        epsilon: f32,
    ) -> Result<Self> {
        if samples.len() != width * height * channels {
            return Err(invalid_arg!(
                "ratio map sample count {} does not match {}x{}x{}",
                samples.len(),
                width,
                height,
                channels
            ));
        }
        let gains = samples
            .iter()
            .map(|&s| (s as f64 / GAIN_FIXED_POINT_SCALE) as f32)
            .collect();
        Ok(Self::from_gains(width, height, channels, gains, epsilon))
    }
}

fn check_same_dims(a: &ImageBuffer, b: &ImageBuffer, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(invalid_arg!(
            "{what}: dimension mismatch {:?} vs {:?}",
            a.dims(),
            b.dims()
        ));
    }
    Ok(())
}

/// Estimate the plain background of a text ROI by diffusion inpainting.
///
/// Masked (text) pixels are filled by red-black Gauss-Seidel averaging of
/// their 4-neighborhoods until the largest per-iteration change drops below
/// 1e-4 or 500 iterations elapse; unmasked pixels are left untouched.
pub fn estimate_background(roi: &ImageBuffer, text_mask: &ImageBuffer) -> Result<ImageBuffer> {
    if text_mask.channels() != 1 {
        return Err(invalid_arg!("text mask must be single-channel"));
    }
    if text_mask.width() != roi.width() || text_mask.height() != roi.height() {
        return Err(invalid_arg!(
            "mask dimensions {}x{} do not match roi {}x{}",
            text_mask.width(),
            text_mask.height(),
            roi.width(),
            roi.height()
        ));
    }
    let (w, h, ch) = roi.dims();
    let masked: Vec<bool> = (0..w * h)
        .map(|i| text_mask.data()[i] >= 0.5)
        .collect();
    let masked_count = masked.iter().filter(|&&m| m).count();
    if masked_count * 10 >= w * h * 9 {
        return Err(Error::InsufficientBackground(format!(
            "{masked_count} of {} pixels masked (>= 90%)",
            w * h
        )));
    }
    if masked_count == 0 {
        return Ok(roi.clone());
    }

    // Seed masked pixels with the unmasked mean to speed convergence.
    let mut seed = [0.0f64; 3];
    for y in 0..h {
        for x in 0..w {
            if !masked[y * w + x] {
                for c in 0..ch {
                    seed[c] += roi.get(x, y, c) as f64;
                }
            }
        }
    }
    let unmasked_count = (w * h - masked_count) as f64;
    let mut out = roi.clone();
    for y in 0..h {
        for x in 0..w {
            if masked[y * w + x] {
                for c in 0..ch {
                    out.set(x, y, c, (seed[c] / unmasked_count) as f32);
                }
            }
        }
    }

    let mut max_delta = f32::MAX;
    let mut iterations = 0;
    while max_delta > 1e-4 && iterations < 500 {
        max_delta = 0.0;
        // Red-black ordering keeps the sweep deterministic and converges
        // roughly twice as fast as Jacobi.
        for parity in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    if (x + y) % 2 != parity || !masked[y * w + x] {
                        continue;
                    }
                    for c in 0..ch {
                        let sum = out.get_clamped(x as isize - 1, y as isize, c)
                            + out.get_clamped(x as isize + 1, y as isize, c)
                            + out.get_clamped(x as isize, y as isize - 1, c)
                            + out.get_clamped(x as isize, y as isize + 1, c);
                        let next = sum / 4.0;
                        let delta = (next - out.get(x, y, c)).abs();
                        if delta > max_delta {
                            max_delta = delta;
                        }
                        out.set(x, y, c, next);
                    }
                }
            }
        }
        iterations += 1;
    }
    Ok(out)
}

/// Grow a binary mask by `radius` pixels (L∞ / square structuring element).
pub fn dilate_mask(mask: &ImageBuffer, radius: usize) -> Result<ImageBuffer> {
    if mask.channels() != 1 {
        return Err(invalid_arg!("dilate_mask expects a 1-channel mask"));
    }
    if radius == 0 {
        return Ok(mask.clone());
    }
    let (w, h, _) = mask.dims();
    let r = radius as isize;
    Ok(ImageBuffer::from_fn(w, h, 1, |x, y, _| {
        for dy in -r..=r {
            for dx in -r..=r {
                let xs = x as isize + dx;
                let ys = y as isize + dy;
                if xs >= 0 && ys >= 0 && (xs as usize) < w && (ys as usize) < h {
                    if mask.get(xs as usize, ys as usize, 0) >= 0.5 {
                        return 1.0;
                    }
                }
            }
        }
        0.0
    }))
}

/// Pixel-wise weighted mean of equally sized frames; weights are
/// renormalized to sum 1.
pub fn temporal_average(frames: &[&ImageBuffer], weights: &[f64]) -> Result<ImageBuffer> {
    if frames.is_empty() {
        return Err(invalid_arg!("temporal_average needs at least one frame"));
    }
    if frames.len() != weights.len() {
        return Err(invalid_arg!(
            "{} frames but {} weights",
            frames.len(),
            weights.len()
        ));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(invalid_arg!("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(invalid_arg!("weights must sum to a positive value"));
    }
    let first = frames[0];
    for f in &frames[1..] {
        check_same_dims(first, f, "temporal_average")?;
    }
    let (w, h, ch) = first.dims();
    let mut acc = vec![0.0f64; w * h * ch];
    for (frame, &weight) in frames.iter().zip(weights) {
        let norm = weight / total;
        for (a, &v) in acc.iter_mut().zip(frame.data()) {
            *a += norm * v as f64;
        }
    }
    ImageBuffer::from_vec(w, h, ch, acc.into_iter().map(|v| v as f32).collect())
}

/// Per-pixel, per-channel lighting gain `(cur + eps) / (ref + eps)`,
/// clamped to `[0.1, 10]`.
pub fn compute_ratio(cur_bg: &ImageBuffer, ref_bg: &ImageBuffer, epsilon: f32) -> Result<RatioMap> {
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(invalid_arg!("epsilon must be positive, got {epsilon}"));
    }
    check_same_dims(cur_bg, ref_bg, "compute_ratio")?;
    let (w, h, ch) = cur_bg.dims();
    let gains = cur_bg
        .data()
        .iter()
        .zip(ref_bg.data())
        .map(|(&c, &r)| ((c + epsilon) / (r + epsilon)).clamp(GAIN_MIN, GAIN_MAX))
        .collect();
    Ok(RatioMap::from_gains(w, h, ch, gains, epsilon))
}

/// Apply a gain field multiplicatively, clamping to `[0, 1]`.
pub fn apply_lighting(roi: &ImageBuffer, ratio: &RatioMap) -> Result<ImageBuffer> {
    if roi.width() != ratio.width()
        || roi.height() != ratio.height()
        || roi.channels() != ratio.channels()
    {
        return Err(invalid_arg!(
            "apply_lighting: roi {:?} vs ratio {}x{}x{}",
            roi.dims(),
            ratio.width(),
            ratio.height(),
            ratio.channels()
        ));
    }
    let data = roi
        .data()
        .iter()
        .zip(ratio.gains())
        .map(|(&v, &g)| v * g)
        .collect();
    ImageBuffer::from_vec(roi.width(), roi.height(), roi.channels(), data)
}

/// Symmetric triangular weights for an `n`-frame window (n odd gives the
/// classic 1,2,...,2,1 shape).
pub fn triangular_weights(n: usize) -> Vec<f64> {
    let half = (n as f64 - 1.0) / 2.0;
    (0..n)
        .map(|i| 1.0 + half - (i as f64 - half).abs())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered_mask(w: usize, h: usize, frac: f64) -> ImageBuffer {
        let bw = (w as f64 * frac).round() as usize;
        let bh = (h as f64 * frac).round() as usize;
        let x0 = (w - bw) / 2;
        let y0 = (h - bh) / 2;
        ImageBuffer::from_fn(w, h, 1, |x, y, _| {
            if x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn background_of_constant_is_constant() {
        let roi = ImageBuffer::filled(32, 16, 3, 0.42);
        let mask = centered_mask(32, 16, 0.5);
        let out = estimate_background(&roi, &mask).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-5));
    }

    #[test]
    fn background_recovers_linear_gradient() {
        let roi = ImageBuffer::from_fn(48, 24, 1, |x, _, _| x as f32 / 47.0);
        let mask = centered_mask(48, 24, 0.4);
        let out = estimate_background(&roi, &mask).unwrap();
        for y in 0..24 {
            for x in 0..48 {
                let truth = x as f32 / 47.0;
                assert!(
                    (out.get(x, y, 0) - truth).abs() < 0.05,
                    "({x},{y}): {} vs {truth}",
                    out.get(x, y, 0)
                );
            }
        }
    }

    #[test]
    fn background_rejects_saturated_mask() {
        let roi = ImageBuffer::filled(20, 20, 1, 0.5);
        let mask = ImageBuffer::from_fn(20, 20, 1, |x, y, _| {
            if x < 19 || y < 10 {
                1.0
            } else {
                0.0
            }
        });
        assert!(matches!(
            estimate_background(&roi, &mask),
            Err(Error::InsufficientBackground(_))
        ));
    }

    #[test]
    fn background_is_idempotent() {
        let roi = ImageBuffer::from_fn(40, 20, 1, |x, y, _| {
            0.3 + 0.4 * (x as f32 / 39.0) + 0.1 * (y as f32 / 19.0)
        });
        let mask = centered_mask(40, 20, 0.35);
        let once = estimate_background(&roi, &mask).unwrap();
        let twice = estimate_background(&once, &mask).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() <= 1.01e-4);
        }
    }

    #[test]
    fn temporal_average_of_identical_frames() {
        let f = ImageBuffer::from_fn(8, 8, 3, |x, y, c| ((x + y + c) % 5) as f32 / 4.0);
        let out = temporal_average(&[&f, &f, &f], &[0.2, 1.0, 3.0]).unwrap();
        for (a, b) in out.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn temporal_average_zero_weight_selects_other() {
        let a = ImageBuffer::filled(6, 6, 1, 0.2);
        let b = ImageBuffer::filled(6, 6, 1, 0.9);
        let out = temporal_average(&[&a, &b], &[1.0, 0.0]).unwrap();
        for (&v, &e) in out.data().iter().zip(a.data()) {
            assert!((v - e).abs() < 1e-7);
        }
    }

    #[test]
    fn temporal_average_matches_scalar_oracle() {
        let frames: Vec<ImageBuffer> = (0..3)
            .map(|k| {
                ImageBuffer::from_fn(5, 4, 3, |x, y, c| ((x * 3 + y * 7 + c + k * 11) % 13) as f32 / 12.0)
            })
            .collect();
        let refs: Vec<&ImageBuffer> = frames.iter().collect();
        let weights = [1.0, 2.0, 1.0];
        let out = temporal_average(&refs, &weights).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                for c in 0..3 {
                    let expect = (frames[0].get(x, y, c) as f64
                        + 2.0 * frames[1].get(x, y, c) as f64
                        + frames[2].get(x, y, c) as f64)
                        / 4.0;
                    assert!((out.get(x, y, c) as f64 - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn temporal_average_rejects_empty_list() {
        assert!(temporal_average(&[], &[]).is_err());
    }

    #[test]
    fn temporal_average_is_permutation_equivariant() {
        let a = ImageBuffer::filled(4, 4, 1, 0.1);
        let b = ImageBuffer::filled(4, 4, 1, 0.5);
        let c = ImageBuffer::filled(4, 4, 1, 0.9);
        let w = [0.5, 1.5, 2.0];
        let fwd = temporal_average(&[&a, &b, &c], &w).unwrap();
        let rev = temporal_average(&[&c, &a, &b], &[2.0, 0.5, 1.5]).unwrap();
        for (x, y) in fwd.data().iter().zip(rev.data()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn ratio_of_identical_backgrounds_is_one() {
        let bg = ImageBuffer::from_fn(16, 8, 3, |x, y, _| (x + y) as f32 / 22.0);
        let r = compute_ratio(&bg, &bg, 0.01).unwrap();
        assert!(r.gains().iter().all(|&g| (g - 1.0).abs() < 1e-7));
    }

    #[test]
    fn ratio_formula_matches_hand_computation() {
        let refb = ImageBuffer::filled(4, 4, 1, 0.8);
        let cur = ImageBuffer::filled(4, 4, 1, 0.4);
        let r = compute_ratio(&cur, &refb, 0.01).unwrap();
        let expect = (0.4 + 0.01) / (0.8 + 0.01);
        assert!(r.gains().iter().all(|&g| (g - expect).abs() < 1e-6));
    }

    #[test]
    fn ratio_rejects_non_positive_epsilon() {
        let bg = ImageBuffer::filled(4, 4, 1, 0.5);
        assert!(compute_ratio(&bg, &bg, 0.0).is_err());
        assert!(compute_ratio(&bg, &bg, -0.2).is_err());
    }

    #[test]
    fn half_shadow_ratio_matches_scalar_recompute() {
        let refb = ImageBuffer::from_fn(32, 8, 3, |x, _, _| 0.6 + 0.2 * (x as f32 / 31.0));
        let cur = ImageBuffer::from_fn(32, 8, 3, |x, y, c| {
            let v = refb.get(x, y, c);
            if x < 16 {
                v * 0.3
            } else {
                v
            }
        });
        let eps = 0.01;
        let r = compute_ratio(&cur, &refb, eps).unwrap();
        for y in 0..8 {
            for x in 0..32 {
                for c in 0..3 {
                    let expect =
                        ((cur.get(x, y, c) + eps) / (refb.get(x, y, c) + eps)).clamp(0.1, 10.0);
                    assert!((r.gain_at(x, y, c) - expect).abs() < 1e-6);
                }
            }
        }
        assert!(r.gain_at(2, 4, 0) < 0.45);
        assert!((r.gain_at(30, 4, 0) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn apply_unit_ratio_is_identity() {
        let roi = ImageBuffer::from_fn(10, 6, 3, |x, y, c| ((x + 2 * y + c) % 7) as f32 / 6.0);
        let unit = RatioMap::unit(10, 6, 3, 0.01);
        let out = apply_lighting(&roi, &unit).unwrap();
        assert_eq!(roi, out);
    }

    #[test]
    fn apply_half_ratio_halves_values() {
        let roi = ImageBuffer::filled(8, 8, 1, 0.8);
        let dim = compute_ratio(
            &ImageBuffer::filled(8, 8, 1, 0.395),
            &ImageBuffer::filled(8, 8, 1, 0.79),
            0.01,
        )
        .unwrap();
        let out = apply_lighting(&roi, &dim).unwrap();
        // (0.395+0.01)/(0.79+0.01) = 0.50625
        assert!(out.data().iter().all(|&v| (v - 0.8 * 0.50625).abs() < 1e-5));
    }

    #[test]
    fn apply_rejects_dimension_mismatch() {
        let roi = ImageBuffer::filled(8, 8, 3, 0.5);
        let ratio = RatioMap::unit(8, 4, 3, 0.01);
        assert!(apply_lighting(&roi, &ratio).is_err());
    }

    #[test]
    fn gain_field_recovery_within_epsilon_bound() {
        // compute_ratio(g*B, B) recovers g within eps/(min(B)+eps) relative
        // error, and apply_lighting reconstructs g*B within the same bound.
        // Gains in [0.5, 1.5] keep |1 - g|/g <= 1 (so the stated bound is
        // exact) and the lit image below the [0, 1] clamp.
        let eps = 0.01f32;
        let bg = ImageBuffer::from_fn(24, 12, 3, |x, y, _| 0.3 + 0.35 * ((x + y) % 9) as f32 / 8.0);
        let gain_field = |x: usize, _y: usize| 0.5 + 1.0 * (x as f32 / 23.0);
        let lit = ImageBuffer::from_fn(24, 12, 3, |x, y, c| bg.get(x, y, c) * gain_field(x, y));
        let r = compute_ratio(&lit, &bg, eps).unwrap();
        let min_b = bg.data().iter().cloned().fold(f32::MAX, f32::min);
        let bound = eps / (min_b + eps);
        for y in 0..12 {
            for x in 0..24 {
                let g = gain_field(x, y);
                let rel = (r.gain_at(x, y, 0) - g).abs() / g;
                assert!(rel <= bound + 1e-4, "({x},{y}): rel {rel} > bound {bound}");
            }
        }
        let rebuilt = apply_lighting(&bg, &r).unwrap();
        for (v, t) in rebuilt.data().iter().zip(lit.data()) {
            let rel = (v - t).abs() / t.max(1e-6);
            assert!(rel <= bound + 1e-4);
        }
    }

    #[test]
    fn quantized_round_trip_is_stable() {
        let cur = ImageBuffer::from_fn(16, 8, 3, |x, y, c| ((x * y + c * 3) % 11) as f32 / 10.0);
        let refb = ImageBuffer::from_fn(16, 8, 3, |x, y, c| ((x + y + c) % 7) as f32 / 6.0 + 0.1);
        let r = compute_ratio(&cur, &refb, 0.01).unwrap().quantized();
        let samples = r.to_u16_samples();
        let back = RatioMap::from_u16_samples(16, 8, 3, &samples, 0.01).unwrap();
        assert_eq!(r.gains(), back.gains());
    }

    #[test]
    fn triangular_weights_shape() {
        assert_eq!(triangular_weights(3), vec![1.0, 2.0, 1.0]);
        assert_eq!(triangular_weights(1), vec![1.0]);
    }
}
