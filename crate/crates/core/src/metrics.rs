//! Image and temporal quality metrics: MSE, PSNR, SSIM, bounding-box
//! jitter, and the blur-transfer Pearson correlation.

use crate::error::{invalid_arg, Error, Result};
use crate::geometry::RoiQuad;
use crate::imgcore::{to_luminance, ImageBuffer};
use crate::refselect::sharpness_score;

/// Frame-indexed quad trajectory for one text box. Indices must be
/// strictly increasing; gaps mark missed detections.
#[derive(Debug, Clone, Default)]
pub struct BoxTrajectory {
    entries: Vec<(usize, RoiQuad)>,
}

impl BoxTrajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an observation; the frame index must exceed the previous one.
    pub fn push(&mut self, frame_index: usize, quad: RoiQuad) -> Result<()> {
        if let Some((last, _)) = self.entries.last() {
            if frame_index <= *last {
                return Err(invalid_arg!(
                    "trajectory indices must be strictly increasing ({last} then {frame_index})"
                ));
            }
        }
        self.entries.push((frame_index, quad));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, RoiQuad)] {
        &self.entries
    }
}

fn check_same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(invalid_arg!(
            "dimension mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        ));
    }
    Ok(())
}

/// Mean squared per-sample difference over all channels.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio for `[0, 1]` data: `10·log10(1/MSE)`.
/// Identical images report `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / e).log10())
    }
}

/// Structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5) and stabilizers C1 = 0.01², C2 = 0.03², computed on
/// luminance over valid (fully covered) window positions.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    let (w, h, _) = a.dims();
    if w < 11 || h < 11 {
        return Err(invalid_arg!(
            "ssim needs at least 11x11 images, got {w}x{h}"
        ));
    }
    let la = if a.channels() == 3 {
        to_luminance(a)?
    } else {
        a.clone()
    };
    let lb = if b.channels() == 3 {
        to_luminance(b)?
    } else {
        b.clone()
    };

    // 11x11 Gaussian window, sigma 1.5.
    let mut window = [0.0f64; 121];
    let mut sum = 0.0;
    for dy in -5i32..=5 {
        for dx in -5i32..=5 {
            let g = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
            window[((dy + 5) * 11 + dx + 5) as usize] = g;
            sum += g;
        }
    }
    for v in &mut window {
        *v /= sum;
    }

    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in 5..h - 5 {
        for cx in 5..w - 5 {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            let mut idx = 0;
            for dy in 0..11 {
                for dx in 0..11 {
                    let wv = window[idx];
                    idx += 1;
                    let va = la.get(cx + dx - 5, cy + dy - 5, 0) as f64;
                    let vb = lb.get(cx + dx - 5, cy + dy - 5, 0) as f64;
                    mu_a += wv * va;
                    mu_b += wv * vb;
                    aa += wv * va * va;
                    bb += wv * vb * vb;
                    ab += wv * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2))
                / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// RMS of the high-pass component of a box's vertex trajectories.
///
/// Each coordinate is high-passed by subtracting a centered moving average
/// of length `lowpass_window` (symmetrically shrunken near the ends so a
/// linear trend passes through unchanged); the jitter is
/// `sqrt(mean(x̃² + ỹ²))` averaged over the four vertices.
pub fn jitter(traj: &BoxTrajectory, lowpass_window: usize) -> Result<f64> {
    if lowpass_window == 0 {
        return Err(invalid_arg!("lowpass window must be positive"));
    }
    let n = traj.len();
    if n < lowpass_window {
        return Err(invalid_arg!(
            "trajectory length {n} is shorter than the lowpass window {lowpass_window}"
        ));
    }
    let half = (lowpass_window - 1) / 2;
    let mut vertex_means = 0.0;
    for v in 0..4 {
        let xs: Vec<f64> = traj.entries.iter().map(|(_, q)| q.vertices[v].0).collect();
        let ys: Vec<f64> = traj.entries.iter().map(|(_, q)| q.vertices[v].1).collect();
        let mut acc = 0.0;
        for t in 0..n {
            let span = half.min(t).min(n - 1 - t);
            let lo = t - span;
            let hi = t + span;
            let count = (hi - lo + 1) as f64;
            let mx: f64 = xs[lo..=hi].iter().sum::<f64>() / count;
            let my: f64 = ys[lo..=hi].iter().sum::<f64>() / count;
            let hx = xs[t] - mx;
            let hy = ys[t] - my;
            acc += hx * hx + hy * hy;
        }
        vertex_means += (acc / n as f64).sqrt();
    }
    Ok(vertex_means / 4.0)
}

/// Pearson correlation between two equal-length series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(invalid_arg!(
            "correlation needs equal-length series of at least 3 samples"
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a series has zero variance".into(),
        ));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Pearson correlation between the sharpness series (Laplacian variance)
/// of two aligned ROI sequences, measuring how faithfully blur levels were
/// transferred.
pub fn blur_transfer_correlation(
    orig_rois: &[ImageBuffer],
    altered_rois: &[ImageBuffer],
) -> Result<f64> {
    if orig_rois.len() != altered_rois.len() || orig_rois.len() < 3 {
        return Err(invalid_arg!(
            "blur transfer correlation needs equal-length lists of at least 3 ROIs"
        ));
    }
    let series = |rois: &[ImageBuffer]| -> Result<Vec<f64>> {
        rois.iter()
            .map(|roi| {
                let luma = if roi.channels() == 3 {
                    to_luminance(roi)?
                } else {
                    roi.clone()
                };
                sharpness_score(&luma)
            })
            .collect()
    };
    pearson(&series(orig_rois)?, &series(altered_rois)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_at(x: f64, y: f64) -> RoiQuad {
        RoiQuad {
            vertices: [(x, y), (x + 60.0, y), (x + 60.0, y + 20.0), (x, y + 20.0)],
        }
    }

    fn trajectory_from(points: &[(f64, f64)]) -> BoxTrajectory {
        let mut t = BoxTrajectory::new();
        for (i, &(x, y)) in points.iter().enumerate() {
            t.push(i, quad_at(x, y)).unwrap();
        }
        t
    }

    #[test]
    fn mse_psnr_trivial_cases() {
        let a = ImageBuffer::filled(8, 8, 3, 0.5);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);

        // f32 storage of 0.6 is inexact; compare at single-precision slack.
        let b = ImageBuffer::filled(8, 8, 3, 0.6);
        let e = mse(&a, &b).unwrap();
        assert!((e - 0.01).abs() < 1e-7);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
    }

    #[test]
    fn mse_matches_scalar_oracle() {
        let a = ImageBuffer::from_fn(7, 5, 3, |x, y, c| ((x * 3 + y * 5 + c) % 9) as f32 / 8.0);
        let b = ImageBuffer::from_fn(7, 5, 3, |x, y, c| ((x + y * 2 + c * 4) % 11) as f32 / 10.0);
        let got = mse(&a, &b).unwrap();
        let mut acc = 0.0f64;
        for (x, y) in a.data().iter().zip(b.data()) {
            acc += (*x as f64 - *y as f64).powi(2);
        }
        let expect = acc / (7.0 * 5.0 * 3.0);
        assert!((got - expect).abs() < 1e-12);
        // Symmetry.
        assert_eq!(got, mse(&b, &a).unwrap());
    }

    #[test]
    fn mse_rejects_dimension_mismatch() {
        let a = ImageBuffer::filled(8, 8, 1, 0.5);
        let b = ImageBuffer::filled(8, 4, 1, 0.5);
        assert!(mse(&a, &b).is_err());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = ImageBuffer::from_fn(32, 16, 3, |x, y, _| ((x ^ y) % 7) as f32 / 6.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_near_identity_under_small_offset() {
        let a = ImageBuffer::from_fn(48, 24, 1, |x, y, _| {
            0.2 + 0.5 * (((x / 4) + (y / 4)) % 2) as f32
        });
        let b = ImageBuffer::from_fn(48, 24, 1, |x, y, _| a.get(x, y, 0) + 0.01);
        let s = ssim(&a, &b).unwrap();
        assert!(s > 0.99, "ssim {s}");
    }

    /// Straightforward from-scratch SSIM used as the reference
    /// implementation: same window, independently coded accumulation.
    fn ssim_reference(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
        let (w, h, _) = a.dims();
        let mut kernel = vec![];
        for dy in -5i64..=5 {
            for dx in -5i64..=5 {
                kernel.push((-((dx * dx + dy * dy) as f64) / 4.5).exp());
            }
        }
        let ksum: f64 = kernel.iter().sum();
        let c1 = 0.0001f64;
        let c2 = 0.0009f64;
        let mut vals = vec![];
        for cy in 5..(h as i64) - 5 {
            for cx in 5..(w as i64) - 5 {
                let (mut ma, mut mb) = (0.0, 0.0);
                let mut idx = 0;
                for dy in -5i64..=5 {
                    for dx in -5i64..=5 {
                        let wv = kernel[idx] / ksum;
                        idx += 1;
                        ma += wv * a.get((cx + dx) as usize, (cy + dy) as usize, 0) as f64;
                        mb += wv * b.get((cx + dx) as usize, (cy + dy) as usize, 0) as f64;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                idx = 0;
                for dy in -5i64..=5 {
                    for dx in -5i64..=5 {
                        let wv = kernel[idx] / ksum;
                        idx += 1;
                        let xa = a.get((cx + dx) as usize, (cy + dy) as usize, 0) as f64 - ma;
                        let xb = b.get((cx + dx) as usize, (cy + dy) as usize, 0) as f64 - mb;
                        va += wv * xa * xa;
                        vb += wv * xb * xb;
                        cov += wv * xa * xb;
                    }
                }
                vals.push(
                    ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2)),
                );
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn ssim_matches_reference_implementation() {
        // Structured pattern against its contrast inverse.
        let a = ImageBuffer::from_fn(40, 24, 1, |x, y, _| {
            if (x / 5 + y / 5) % 2 == 0 {
                0.2
            } else {
                0.8
            }
        });
        let b = ImageBuffer::from_fn(40, 24, 1, |x, y, _| 1.0 - a.get(x, y, 0));
        let got = ssim(&a, &b).unwrap();
        let expect = ssim_reference(&a, &b);
        assert!(
            (got - expect).abs() < 1e-4,
            "ssim {got:.6} vs reference {expect:.6}"
        );
        // Symmetry.
        let rev = ssim(&b, &a).unwrap();
        assert!((got - rev).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = ImageBuffer::filled(10, 10, 1, 0.5);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn jitter_of_constant_trajectory_is_zero() {
        let pts: Vec<(f64, f64)> = (0..20).map(|_| (10.0, 5.0)).collect();
        let t = trajectory_from(&pts);
        assert_eq!(jitter(&t, 5).unwrap(), 0.0);
    }

    #[test]
    fn jitter_of_linear_motion_is_negligible() {
        // Constant velocity passes the symmetric moving average exactly.
        let pts: Vec<(f64, f64)> = (0..60).map(|i| (i as f64 * 1.7, i as f64 * 0.4)).collect();
        let t = trajectory_from(&pts);
        let j = jitter(&t, 5).unwrap();
        assert!(j < 0.1, "jitter {j}");
    }

    #[test]
    fn jitter_matches_scalar_recomputation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let gauss = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|_| (100.0 + 2.0 * gauss(&mut rng), 50.0 + 2.0 * gauss(&mut rng)))
            .collect();
        let t = trajectory_from(&pts);
        let window = 5usize;
        let got = jitter(&t, window).unwrap();

        // Independent recomputation of the definition.
        let mut total = 0.0;
        for v in 0..4 {
            let xs: Vec<f64> = t.entries().iter().map(|(_, q)| q.vertices[v].0).collect();
            let ys: Vec<f64> = t.entries().iter().map(|(_, q)| q.vertices[v].1).collect();
            let n = xs.len();
            let mut acc = 0.0;
            for i in 0..n {
                let span = 2.min(i).min(n - 1 - i);
                let cnt = (2 * span + 1) as f64;
                let mx: f64 = xs[i - span..=i + span].iter().sum::<f64>() / cnt;
                let my: f64 = ys[i - span..=i + span].iter().sum::<f64>() / cnt;
                acc += (xs[i] - mx).powi(2) + (ys[i] - my).powi(2);
            }
            total += (acc / n as f64).sqrt();
        }
        let expect = total / 4.0;
        assert!((got - expect).abs() < 1e-12);
        assert!(got > 0.5, "noisy trajectory should have real jitter: {got}");
    }

    #[test]
    fn jitter_invariant_to_offset_and_velocity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<(f64, f64)> = (0..50)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let base: Vec<(f64, f64)> = noise.iter().map(|&(x, y)| (50.0 + x, 20.0 + y)).collect();
        let offset: Vec<(f64, f64)> = base.iter().map(|&(x, y)| (x + 300.0, y - 40.0)).collect();
        let moving: Vec<(f64, f64)> = base
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| (x + 0.08 * i as f64, y + 0.02 * i as f64))
            .collect();
        let j0 = jitter(&trajectory_from(&base), 5).unwrap();
        let j1 = jitter(&trajectory_from(&offset), 5).unwrap();
        let j2 = jitter(&trajectory_from(&moving), 5).unwrap();
        assert!((j0 - j1).abs() < 1e-9);
        assert!((j0 - j2).abs() < 0.1);
    }

    #[test]
    fn jitter_rejects_short_trajectory() {
        let pts = [(0.0, 0.0), (1.0, 1.0)];
        let t = trajectory_from(&pts);
        assert!(jitter(&t, 5).is_err());
    }

    #[test]
    fn trajectory_rejects_non_increasing_indices() {
        let mut t = BoxTrajectory::new();
        t.push(3, quad_at(0.0, 0.0)).unwrap();
        assert!(t.push(3, quad_at(1.0, 1.0)).is_err());
        assert!(t.push(1, quad_at(1.0, 1.0)).is_err());
    }

    #[test]
    fn correlation_trivial_cases() {
        let rois: Vec<ImageBuffer> = (0..5)
            .map(|i| {
                ImageBuffer::from_fn(16, 16, 1, |x, y, _| {
                    if (x + y + i) % (2 + i) == 0 {
                        0.1
                    } else {
                        0.9
                    }
                })
            })
            .collect();
        let r = blur_transfer_correlation(&rois, &rois).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pearson_is_affine_invariant() {
        let a = [1.0, 4.0, 2.0, 8.0, 5.0];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + 5.0).collect();
        let r = pearson(&a, &b).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_rejects_zero_variance() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            pearson(&a, &b),
            Err(Error::UndefinedCorrelation(_))
        ));
    }
}
