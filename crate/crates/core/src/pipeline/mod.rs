//! End-to-end orchestration: ingest frames and annotations, frontalize,
//! select a reference, build per-frame transform recipes, and propagate a
//! replaced reference ROI into every frame — with recipe reuse across
//! multiple output copies.

pub mod config;
pub mod recipe;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::blur::{
    apply_differential_transform, fit_blur_params_multi, BlurParams,
};
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{
    estimate_homography, frontalness_score, invert, quad_inside_distance,
    smooth_parameter_sequence, warp, RoiQuad,
};
use crate::imgcore::{read_png, to_luminance, ImageBuffer};
use crate::photometry::{
    apply_lighting, compute_ratio, dilate_mask, estimate_background, temporal_average,
    triangular_weights, RatioMap,
};
use crate::refselect::{
    contrast_score, otsu_text_mask, select_reference, sharpness_score, FrameMeasurement,
};

pub use config::PipelineConfig;
pub use recipe::{load_recipes, save_recipes, RecipeSet, TransformRecipe, RECIPE_FORMAT_VERSION};

/// One annotated frame of the input clip. Frames without a quad pass
/// through the pipeline unmodified.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FrameAnnotation {
    pub index: usize,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad: Option<RoiQuad>,
    pub ocr_confidence: f64,
    #[serde(default)]
    pub ocr_text: String,
}

/// Annotation manifest: `{ "frames": [ ... ] }`.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub frames: Vec<FrameAnnotation>,
}

/// A loaded frame with its annotation.
#[derive(Debug, Clone)]
pub struct ClipFrame {
    pub image: ImageBuffer,
    pub annotation: FrameAnnotation,
}

impl ClipFrame {
    /// Frames with a valid quad take part in propagation.
    pub fn is_active(&self) -> bool {
        self.annotation.quad.is_some()
    }
}

/// An ingested clip, ordered by frame index.
#[derive(Debug, Clone)]
pub struct Clip {
    pub frames: Vec<ClipFrame>,
}

impl Clip {
    /// Positions (into `frames`) of the active frames, in order.
    pub fn active_positions(&self) -> Vec<usize> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_active())
            .map(|(i, _)| i)
            .collect()
    }

    /// Find a frame by its annotation index.
    pub fn frame_by_index(&self, index: usize) -> Option<&ClipFrame> {
        self.frames.iter().find(|f| f.annotation.index == index)
    }
}

/// Load a manifest and its frames. Frames are ordered by index; entries
/// with a missing quad are flagged as passthrough. Degenerate quads are
/// rejected.
pub fn ingest(annotations_file: impl AsRef<Path>, frames_dir: impl AsRef<Path>) -> Result<Clip> {
    let annotations_file = annotations_file.as_ref();
    let frames_dir = frames_dir.as_ref();
    let text = std::fs::read_to_string(annotations_file).map_err(|e| Error::Io {
        path: annotations_file.display().to_string(),
        source: e,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    ingest_manifest(manifest, frames_dir)
}

/// Ingest from an in-memory manifest (frames still load from disk).
pub fn ingest_manifest(mut manifest: Manifest, frames_dir: &Path) -> Result<Clip> {
    if manifest.frames.is_empty() {
        return Err(invalid_arg!("annotation manifest lists no frames"));
    }
    manifest.frames.sort_by_key(|f| f.index);
    for pair in manifest.frames.windows(2) {
        if pair[0].index == pair[1].index {
            return Err(invalid_arg!(
                "duplicate frame index {} in manifest",
                pair[0].index
            ));
        }
    }
    let frames = manifest
        .frames
        .into_iter()
        .map(|annotation| {
            if let Some(q) = &annotation.quad {
                RoiQuad::new(q.vertices).map_err(|e| e.at_frame(annotation.index))?;
            }
            let image = read_png(frames_dir.join(&annotation.file))?;
            Ok(ClipFrame { image, annotation })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Clip { frames })
}

/// Canonical-space target rectangle for a quad, aspect-padded when the quad
/// aspect ratio differs from the canonical one by more than 2x.
fn canonical_target(quad: &RoiQuad, cw: usize, ch: usize) -> RoiQuad {
    let v = &quad.vertices;
    let edge = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
    let qw = (edge(v[0], v[1]) + edge(v[3], v[2])) / 2.0;
    let qh = (edge(v[0], v[3]) + edge(v[1], v[2])) / 2.0;
    let full_w = cw as f64 - 1.0;
    let full_h = ch as f64 - 1.0;
    let quad_aspect = qw / qh.max(1e-9);
    let canon_aspect = cw as f64 / ch as f64;
    let ratio = quad_aspect / canon_aspect;
    let (tw, th) = if ratio > 2.0 {
        (full_w, (full_w / quad_aspect).max(2.0))
    } else if ratio < 0.5 {
        ((full_h * quad_aspect).max(2.0), full_h)
    } else {
        (full_w, full_h)
    };
    let x0 = (full_w - tw) / 2.0;
    let y0 = (full_h - th) / 2.0;
    RoiQuad {
        vertices: [
            (x0, y0),
            (x0 + tw, y0),
            (x0 + tw, y0 + th),
            (x0, y0 + th),
        ],
    }
}

/// Score every active frame for reference selection. Sharpness and
/// contrast are measured on the frontalized, canonically sized ROI so
/// scores are comparable across frames.
pub fn score_frames(clip: &Clip, cfg: &PipelineConfig) -> Result<Vec<FrameMeasurement>> {
    let active = clip.active_positions();
    if active.is_empty() {
        return Err(invalid_arg!("clip has no frames with a valid quad"));
    }
    active
        .par_iter()
        .map(|&pos| {
            let frame = &clip.frames[pos];
            let quad = frame.annotation.quad.expect("active frame has a quad");
            let index = frame.annotation.index;
            let target = canonical_target(&quad, cfg.canonical_width, cfg.canonical_height);
            let theta = estimate_homography(&quad, &target).map_err(|e| e.at_frame(index))?;
            let frontal = warp(
                &frame.image,
                &theta,
                cfg.canonical_width,
                cfg.canonical_height,
            )
            .map_err(|e| e.at_frame(index))?;
            let luma = luma_of(&frontal).map_err(|e| e.at_frame(index))?;
            Ok(FrameMeasurement {
                frame_index: index,
                ocr_confidence: frame.annotation.ocr_confidence,
                sharpness: sharpness_score(&luma).map_err(|e| e.at_frame(index))?,
                s1: contrast_score(&luma).map_err(|e| e.at_frame(index))?,
                s2: frontalness_score(&quad).map_err(|e| e.at_frame(index))?,
            })
        })
        .collect()
}

/// Pick the reference frame index for a clip.
pub fn choose_reference(clip: &Clip, cfg: &PipelineConfig) -> Result<usize> {
    let measurements = score_frames(clip, cfg)?;
    select_reference(
        &measurements,
        cfg.alpha1,
        cfg.alpha2,
        cfg.conf_floor,
        cfg.top_k,
    )
}

fn luma_of(img: &ImageBuffer) -> Result<ImageBuffer> {
    if img.channels() == 1 {
        Ok(img.clone())
    } else {
        to_luminance(img)
    }
}

/// Build per-frame transform recipes: smoothed frontalization homographies,
/// lighting ratio maps from temporally averaged inpainted backgrounds, and
/// blur parameters fitted per window against the lighting-corrected
/// reference.
pub fn build_recipes(clip: &Clip, ref_index: usize, cfg: &PipelineConfig) -> Result<RecipeSet> {
    cfg.validate()?;
    let active = clip.active_positions();
    if active.is_empty() {
        return Err(invalid_arg!("clip has no frames with a valid quad"));
    }
    let (cw, ch) = (cfg.canonical_width, cfg.canonical_height);
    let ref_pos_in_active = active
        .iter()
        .position(|&pos| clip.frames[pos].annotation.index == ref_index)
        .ok_or_else(|| {
            invalid_arg!("reference frame {ref_index} is not an active frame of the clip")
        })?;

    // Homographies onto the canonical target, smoothed over the clip.
    let mut targets = Vec::with_capacity(active.len());
    let mut thetas_raw = Vec::with_capacity(active.len());
    for &pos in &active {
        let frame = &clip.frames[pos];
        let quad = frame.annotation.quad.expect("active frame has a quad");
        let target = canonical_target(&quad, cw, ch);
        let theta =
            estimate_homography(&quad, &target).map_err(|e| e.at_frame(frame.annotation.index))?;
        targets.push(target);
        thetas_raw.push(theta);
    }
    let thetas = smooth_parameter_sequence(&thetas_raw, cfg.lambda_t)?;

    // Frontalized ROIs under the smoothed homographies.
    let frontals: Vec<ImageBuffer> = active
        .par_iter()
        .zip(&thetas)
        .map(|(&pos, theta)| {
            warp(&clip.frames[pos].image, theta, cw, ch)
                .map_err(|e| e.at_frame(clip.frames[pos].annotation.index))
        })
        .collect::<Result<_>>()?;

    // One text mask, estimated on the reference frame and reused for every
    // frame: after frontalization the text occupies the same canonical
    // position, and the reference is the cleanest frame to threshold.
    let ref_frontal = &frontals[ref_pos_in_active];
    let ref_luma = luma_of(ref_frontal)?;
    let text_mask = dilate_mask(&otsu_text_mask(&ref_luma)?, 2)?;

    let backgrounds: Vec<ImageBuffer> = active
        .par_iter()
        .zip(&frontals)
        .map(|(&pos, frontal)| {
            estimate_background(frontal, &text_mask)
                .map_err(|e| e.at_frame(clip.frames[pos].annotation.index))
        })
        .collect::<Result<_>>()?;

    // Temporally averaged backgrounds (triangular window over the active
    // sequence; windows shrink at the ends and around gaps).
    let averaged: Vec<ImageBuffer> = (0..backgrounds.len())
        .into_par_iter()
        .map(|i| {
            let half = (cfg.window.max(1) - 1) / 2;
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(backgrounds.len() - 1);
            let frames: Vec<&ImageBuffer> = backgrounds[lo..=hi].iter().collect();
            let all_weights = triangular_weights(2 * half + 1);
            let weights: Vec<f64> = (lo..=hi)
                .map(|j| all_weights[j + half - i])
                .collect();
            temporal_average(&frames, &weights)
        })
        .collect::<Result<_>>()?;

    // Exact ratios drive the blur fit; the recipes store the 16-bit
    // quantized form so serialization round-trips bit-exactly.
    let ref_background = &averaged[ref_pos_in_active];
    let ratios_exact: Vec<RatioMap> = averaged
        .iter()
        .enumerate()
        .map(|(i, avg)| {
            if i == ref_pos_in_active {
                Ok(RatioMap::unit(cw, ch, ref_background.channels(), cfg.epsilon))
            } else {
                compute_ratio(avg, ref_background, cfg.epsilon)
            }
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<RatioMap> = ratios_exact.iter().map(|r| r.quantized()).collect();

    // Blur fitting per disjoint window against the lighting-corrected
    // reference ROI.
    let fit_cfg = cfg.fit_config();
    let window = cfg.window.max(1);
    let chunk_starts: Vec<usize> = (0..active.len()).step_by(window).collect();
    let mut psis = vec![BlurParams::identity(); active.len()];
    let chunk_results: Vec<(usize, Vec<BlurParams>)> = chunk_starts
        .par_iter()
        .map(|&start| {
            let end = (start + window).min(active.len());
            let corrected: Vec<ImageBuffer> = (start..end)
                .map(|i| apply_lighting(ref_frontal, &ratios_exact[i]))
                .collect::<Result<_>>()?;
            let refs: Vec<&ImageBuffer> = corrected.iter().collect();
            let window_frames: Vec<&ImageBuffer> = frontals[start..end].iter().collect();
            let fit = fit_blur_params_multi(&refs, &window_frames, &fit_cfg).map_err(|e| {
                e.at_frame(clip.frames[active[start]].annotation.index)
            })?;
            Ok((start, fit.params))
        })
        .collect::<Result<_>>()?;
    for (start, params) in chunk_results {
        for (offset, p) in params.into_iter().enumerate() {
            psis[start + offset] = p;
        }
    }

    let mut recipes = Vec::with_capacity(active.len());
    for (i, &pos) in active.iter().enumerate() {
        let is_ref = i == ref_pos_in_active;
        let theta_inv = invert(&thetas[i])
            .map_err(|e| e.at_frame(clip.frames[pos].annotation.index))?;
        let placed = theta_inv.apply_quad(&targets[i]);
        recipes.push(TransformRecipe {
            frame_index: clip.frames[pos].annotation.index,
            theta: thetas[i],
            quad: RoiQuad { vertices: placed },
            ratio: if is_ref {
                RatioMap::unit(cw, ch, ref_frontal.channels(), cfg.epsilon)
            } else {
                ratios[i].clone()
            },
            psi: if is_ref { BlurParams::identity() } else { psis[i] },
            reference: is_ref,
        });
    }
    Ok(RecipeSet {
        ref_index,
        canonical_width: cw,
        canonical_height: ch,
        recipes,
    })
}

/// Propagate a replaced reference ROI into every frame of the clip.
///
/// Per frame: lighting correction, differential blur, inverse warp into the
/// frame quad, and a feathered composite. The reference frame composites
/// the untouched replaced ROI through its own inverse homography.
/// Passthrough frames copy the input unchanged.
pub fn propagate(
    clip: &Clip,
    recipes: &RecipeSet,
    replaced_ref_roi: &ImageBuffer,
    cfg: &PipelineConfig,
) -> Result<Vec<ImageBuffer>> {
    if replaced_ref_roi.width() != recipes.canonical_width
        || replaced_ref_roi.height() != recipes.canonical_height
    {
        return Err(invalid_arg!(
            "replacement ROI is {}x{}, recipes expect {}x{}",
            replaced_ref_roi.width(),
            replaced_ref_roi.height(),
            recipes.canonical_width,
            recipes.canonical_height
        ));
    }
    clip.frames
        .par_iter()
        .map(|frame| {
            let index = frame.annotation.index;
            let recipe = match (frame.is_active(), recipes.recipe_for(index)) {
                (true, Some(r)) => r,
                _ => return Ok(frame.image.clone()),
            };
            let content = if recipe.reference {
                replaced_ref_roi.clone()
            } else {
                let lit = apply_lighting(replaced_ref_roi, &recipe.ratio)
                    .map_err(|e| e.at_frame(index))?;
                apply_differential_transform(&lit, &recipe.psi)
                    .map_err(|e| e.at_frame(index))?
            };
            let theta_inv = invert(&recipe.theta).map_err(|e| e.at_frame(index))?;
            let warped = warp(
                &content,
                &theta_inv,
                frame.image.width(),
                frame.image.height(),
            )
            .map_err(|e| e.at_frame(index))?;
            Ok(composite_feathered(
                &frame.image,
                &warped,
                &recipe.quad,
                cfg.feather,
            ))
        })
        .collect()
}

/// Feathered composite of `content` over `base` inside `quad`: full opacity
/// deeper than `feather` pixels inside the boundary, ramping linearly to
/// zero at the boundary. Pixels outside the quad are bit-identical to the
/// base.
fn composite_feathered(
    base: &ImageBuffer,
    content: &ImageBuffer,
    quad: &RoiQuad,
    feather: f64,
) -> ImageBuffer {
    let mut out = base.clone();
    let (x0, y0, x1, y1) = quad.bounding_box();
    let xs = x0.floor().max(0.0) as usize;
    let ys = y0.floor().max(0.0) as usize;
    let xe = (x1.ceil() as usize + 1).min(base.width());
    let ye = (y1.ceil() as usize + 1).min(base.height());
    for y in ys..ye {
        for x in xs..xe {
            let d = quad_inside_distance(quad, x as f64, y as f64);
            if d <= 0.0 {
                continue;
            }
            let alpha = if feather > 0.0 {
                (d / feather).min(1.0) as f32
            } else {
                1.0
            };
            for c in 0..base.channels() {
                let b = out.get(x, y, c);
                let v = content.get(x, y, c);
                out.set(x, y, c, b + alpha * (v - b));
            }
        }
    }
    out
}

/// Wall-time accounting of a propagation run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TimingReport {
    pub copies: usize,
    pub frames_per_copy: usize,
    /// Seconds spent building the recipes (supplied by the caller).
    pub recipe_build_secs: f64,
    /// Seconds spent in propagation across all copies.
    pub propagate_secs: f64,
    /// Propagation throughput, frames per second.
    pub frames_per_second: f64,
    /// `(build + propagation) / (copies * frames)` in seconds.
    pub amortized_secs_per_frame: f64,
}

/// Propagate several replacement ROIs through the same recipes, reusing the
/// recipe computation across all copies, and report timings.
pub fn propagate_many(
    clip: &Clip,
    recipes: &RecipeSet,
    replaced_rois: &[ImageBuffer],
    cfg: &PipelineConfig,
    recipe_build_secs: f64,
) -> Result<(Vec<Vec<ImageBuffer>>, TimingReport)> {
    if replaced_rois.is_empty() {
        return Err(invalid_arg!("no replacement ROIs supplied"));
    }
    let start = Instant::now();
    let outputs = replaced_rois
        .iter()
        .map(|roi| propagate(clip, recipes, roi, cfg))
        .collect::<Result<Vec<_>>>()?;
    let propagate_secs = start.elapsed().as_secs_f64();
    let copies = replaced_rois.len();
    let frames = clip.frames.len();
    let total_frames = (copies * frames) as f64;
    let report = TimingReport {
        copies,
        frames_per_copy: frames,
        recipe_build_secs,
        propagate_secs,
        frames_per_second: if propagate_secs > 0.0 {
            total_frames / propagate_secs
        } else {
            f64::INFINITY
        },
        amortized_secs_per_frame: (recipe_build_secs + propagate_secs) / total_frames,
    };
    Ok((outputs, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::write_png;
    use crate::metrics::ssim;
    use crate::synth::{generate_clip, BackgroundSpec, ScenarioSpec};

    fn clip_from_bundle(bundle: &crate::synth::GroundTruthBundle) -> Clip {
        let frames = bundle
            .manifest
            .frames
            .iter()
            .zip(&bundle.frames)
            .map(|(annotation, image)| ClipFrame {
                image: image.clone(),
                annotation: annotation.clone(),
            })
            .collect();
        Clip { frames }
    }

    fn static_spec() -> ScenarioSpec {
        ScenarioSpec {
            frame_count: 6,
            background: BackgroundSpec::LinearGradient { from: 0.65, to: 0.85 },
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn ingest_round_trips_synth_manifest() {
        let spec = static_spec();
        let bundle = generate_clip(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        crate::synth::save_bundle(&bundle, &spec, dir.path()).unwrap();
        let clip = ingest(dir.path().join("manifest.json"), dir.path()).unwrap();
        assert_eq!(clip.frames.len(), 6);
        for (frame, ann) in clip.frames.iter().zip(&bundle.manifest.frames) {
            assert_eq!(
                frame.annotation.quad.unwrap().vertices,
                ann.quad.unwrap().vertices
            );
        }
    }

    #[test]
    fn ingest_rejects_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, r#"{"frames":[]}"#).unwrap();
        assert!(matches!(
            ingest(&path, dir.path()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn ingest_flags_missing_quads_as_passthrough() {
        let spec = static_spec();
        let bundle = generate_clip(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (t, frame) in bundle.frames.iter().enumerate() {
            write_png(frame, dir.path().join(format!("frame_{t:04}.png"))).unwrap();
        }
        let mut manifest = bundle.manifest.clone();
        manifest.frames[2].quad = None;
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let clip = ingest(&path, dir.path()).unwrap();
        assert_eq!(clip.frames.len(), 6);
        assert_eq!(clip.active_positions().len(), 5);
        assert!(!clip.frames[2].is_active());
    }

    #[test]
    fn ingest_reports_parse_error_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, "{\n  \"frames\": [\n    {\"bogus\": true}\n  ]\n}").unwrap();
        match ingest(&path, dir.path()) {
            Err(Error::Parse { line, .. }) => assert!(line > 0),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_names_missing_image() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = Manifest {
            frames: vec![FrameAnnotation {
                index: 0,
                file: "nope.png".into(),
                quad: Some(RoiQuad::rect(10.0, 10.0, 50.0, 30.0).unwrap()),
                ocr_confidence: 0.999,
                ocr_text: "X".into(),
            }],
        };
        std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        match ingest(&path, dir.path()) {
            Err(Error::Io { path, .. }) => assert!(path.contains("nope.png")),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn static_clip_recipes_are_near_identity() {
        let spec = static_spec();
        let bundle = generate_clip(&spec).unwrap();
        let clip = clip_from_bundle(&bundle);
        let cfg = PipelineConfig::default();
        let ref_index = choose_reference(&clip, &cfg).unwrap();
        let recipes = build_recipes(&clip, ref_index, &cfg).unwrap();
        assert_eq!(recipes.recipes.len(), 6);
        let ref_theta = recipes.recipe_for(ref_index).unwrap().theta.entries();
        for recipe in &recipes.recipes {
            assert!(recipe.psi.weight.abs() <= 0.05, "psi {:?}", recipe.psi);
            for &g in recipe.ratio.gains() {
                assert!((g - 1.0).abs() < 1e-3 + 2e-4, "gain {g}");
            }
            for (a, b) in recipe.theta.entries().iter().zip(ref_theta.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        let ref_recipe = recipes.recipe_for(ref_index).unwrap();
        assert!(ref_recipe.reference);
        assert_eq!(ref_recipe.psi.weight, 0.0);
        assert!(ref_recipe.ratio.is_unit());
    }

    #[test]
    fn passthrough_frames_are_skipped_and_windows_contract() {
        let spec = static_spec();
        let bundle = generate_clip(&spec).unwrap();
        let mut clip = clip_from_bundle(&bundle);
        clip.frames[3].annotation.quad = None;
        let cfg = PipelineConfig::default();
        let ref_index = choose_reference(&clip, &cfg).unwrap();
        let recipes = build_recipes(&clip, ref_index, &cfg).unwrap();
        assert_eq!(recipes.recipes.len(), 5);
        assert!(recipes.recipe_for(3).is_none());

        let replacement = ImageBuffer::filled(
            cfg.canonical_width,
            cfg.canonical_height,
            3,
            0.5,
        );
        let outputs = propagate(&clip, &recipes, &replacement, &cfg).unwrap();
        assert_eq!(outputs.len(), 6);
        assert_eq!(outputs[3], clip.frames[3].image);
    }

    #[test]
    fn static_clip_propagation_is_stationary() {
        let spec = static_spec();
        let bundle = generate_clip(&spec).unwrap();
        let clip = clip_from_bundle(&bundle);
        let cfg = PipelineConfig::default();
        let ref_index = choose_reference(&clip, &cfg).unwrap();
        let recipes = build_recipes(&clip, ref_index, &cfg).unwrap();
        let replacement = crate::synth::render_text_roi(
            "NEW",
            &crate::synth::TextStyle::default(),
            cfg.canonical_width,
            cfg.canonical_height,
            7,
        )
        .unwrap()
        .0;
        let outputs = propagate(&clip, &recipes, &replacement, &cfg).unwrap();
        // All frames identical up to the (tiny) recipe differences.
        for out in &outputs[1..] {
            let s = ssim(out, &outputs[0]).unwrap();
            assert!(s > 0.999, "ssim {s}");
        }
        // Pixels outside the quad are untouched.
        let quad = recipes.recipes[0].quad;
        for y in 0..outputs[0].height() {
            for x in 0..outputs[0].width() {
                if quad_inside_distance(&quad, x as f64, y as f64) <= 0.0 {
                    for c in 0..3 {
                        assert_eq!(
                            outputs[0].get(x, y, c),
                            clip.frames[0].image.get(x, y, c),
                            "pixel ({x},{y},{c}) outside the quad changed"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn propagate_rejects_wrong_roi_size() {
        let spec = static_spec();
        let bundle = generate_clip(&spec).unwrap();
        let clip = clip_from_bundle(&bundle);
        let cfg = PipelineConfig::default();
        let recipes = build_recipes(&clip, 0, &cfg).unwrap();
        let replacement = ImageBuffer::filled(64, 32, 3, 0.5);
        assert!(propagate(&clip, &recipes, &replacement, &cfg).is_err());
    }

    #[test]
    fn propagate_many_is_deterministic_and_matches_single() {
        let spec = static_spec();
        let bundle = generate_clip(&spec).unwrap();
        let clip = clip_from_bundle(&bundle);
        let cfg = PipelineConfig::default();
        let ref_index = choose_reference(&clip, &cfg).unwrap();
        let recipes = build_recipes(&clip, ref_index, &cfg).unwrap();
        let replacement = ImageBuffer::filled(
            cfg.canonical_width,
            cfg.canonical_height,
            3,
            0.42,
        );
        let single = propagate(&clip, &recipes, &replacement, &cfg).unwrap();
        let (multi, report) = propagate_many(
            &clip,
            &recipes,
            &[replacement.clone(), replacement.clone(), replacement],
            &cfg,
            0.0,
        )
        .unwrap();
        assert_eq!(report.copies, 3);
        assert_eq!(multi[0], single);
        assert_eq!(multi[1], single);
        assert_eq!(multi[2], single);
    }

    #[test]
    fn recipe_round_trip_gives_bit_identical_propagation() {
        let spec = ScenarioSpec {
            frame_count: 5,
            lighting_path: crate::synth::LightingPath::GlobalRamp { from: 1.0, to: 0.7 },
            ..static_spec()
        };
        let bundle = generate_clip(&spec).unwrap();
        let clip = clip_from_bundle(&bundle);
        let cfg = PipelineConfig::default();
        let ref_index = choose_reference(&clip, &cfg).unwrap();
        let recipes = build_recipes(&clip, ref_index, &cfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recipes.json");
        save_recipes(&recipes, &path).unwrap();
        let loaded = load_recipes(&path).unwrap();

        let replacement = crate::synth::render_text_roi(
            "SWAP",
            &crate::synth::TextStyle::default(),
            cfg.canonical_width,
            cfg.canonical_height,
            3,
        )
        .unwrap()
        .0;
        let a = propagate(&clip, &recipes, &replacement, &cfg).unwrap();
        let b = propagate(&clip, &loaded, &replacement, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
