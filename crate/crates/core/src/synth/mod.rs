//! Synthetic scene-text clip generator: renders ROI videos with ground-truth
//! pose, lighting, and blur trajectories, plus identically distorted
//! source/target text pairs for end-to-end testing.

pub mod font;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blur::{apply_differential_transform, BlurParams};
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{
    canonical_rect, estimate_homography, invert, quad_inside_distance, warp, Homography, RoiQuad,
};
use crate::imgcore::ImageBuffer;
use crate::pipeline::{FrameAnnotation, Manifest};
use crate::{CANONICAL_HEIGHT, CANONICAL_WIDTH};

/// Background fill behind the text.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundSpec {
    /// Uniform gray level.
    Constant { value: f32 },
    /// Horizontal linear gradient.
    LinearGradient { from: f32, to: f32 },
    /// Smooth value-noise texture around a base level. Amplitude is capped
    /// at 0.2 so Otsu text masking stays valid.
    PerlinTexture { base: f32, amplitude: f32, cell: usize },
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec::Constant { value: 0.8 }
    }
}

impl BackgroundSpec {
    /// Background level at pixel `(x, y)` of a `w x h` canvas.
    pub fn sample(&self, x: usize, y: usize, w: usize, h: usize, seed: u64) -> f32 {
        let _ = h;
        match self {
            BackgroundSpec::Constant { value } => value.clamp(0.0, 1.0),
            BackgroundSpec::LinearGradient { from, to } => {
                let t = if w > 1 { x as f32 / (w - 1) as f32 } else { 0.0 };
                (from + (to - from) * t).clamp(0.0, 1.0)
            }
            BackgroundSpec::PerlinTexture { base, amplitude, cell } => {
                let amp = amplitude.clamp(0.0, 0.2);
                let cell = (*cell).max(2) as f64;
                let n = value_noise(x as f64 / cell, y as f64 / cell, seed);
                (base + amp * (2.0 * n as f32 - 1.0)).clamp(0.0, 1.0)
            }
        }
    }
}

/// Smooth deterministic value noise on a unit lattice, in `[0, 1]`.
fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let xi = x.floor() as i64;
    let yi = y.floor() as i64;
    let fx = x - xi as f64;
    let fy = y - yi as f64;
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let v00 = lattice_hash(xi, yi, seed);
    let v10 = lattice_hash(xi + 1, yi, seed);
    let v01 = lattice_hash(xi, yi + 1, seed);
    let v11 = lattice_hash(xi + 1, yi + 1, seed);
    let top = v00 + (v10 - v00) * sx;
    let bot = v01 + (v11 - v01) * sx;
    top + (bot - top) * sy
}

fn lattice_hash(x: i64, y: i64, seed: u64) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E3779B97F4A7C15)
        ^ (y as u64).wrapping_mul(0xC2B2AE3D27D4EB4F)
        ^ seed.wrapping_mul(0xD6E8FEB86659FD93);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51AFD7ED558CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Text rendering style.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TextStyle {
    /// Foreground (glyph) color.
    pub fg: [f32; 3],
    /// Background fill.
    pub background: BackgroundSpec,
    /// Margin kept clear of glyphs, pixels.
    pub padding: usize,
}

impl Default for TextStyle {
    fn default() -> Self {
        Self {
            fg: [0.08, 0.08, 0.12],
            background: BackgroundSpec::default(),
            padding: 6,
        }
    }
}

/// Integer glyph layout chosen for a string on a `width x height` canvas.
#[derive(Debug, Clone, Copy)]
pub struct TextLayout {
    /// Integer magnification of the 5x7 font.
    pub scale: usize,
    /// Top-left corner of the text block.
    pub origin: (usize, usize),
    /// Rendered text block size in pixels.
    pub size: (usize, usize),
}

impl TextLayout {
    /// Largest centered integer scale at which `text` fits inside the
    /// canvas minus padding.
    pub fn compute(text: &str, padding: usize, width: usize, height: usize) -> Result<Self> {
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return Err(invalid_arg!("text must be non-empty"));
        }
        for &c in &chars {
            if font::glyph_for(c).is_none() {
                return Err(Error::Layout(format!(
                    "character {c:?} is not printable"
                )));
            }
        }
        // Text block width drops the trailing inter-glyph spacing column.
        let block_w = chars.len() * font::GLYPH_ADVANCE - 1;
        let block_h = font::GLYPH_HEIGHT;
        let avail_w = width.saturating_sub(2 * padding);
        let avail_h = height.saturating_sub(2 * padding);
        let scale = (avail_w / block_w).min(avail_h / block_h);
        if scale == 0 {
            return Err(Error::Layout(format!(
                "text {text:?} does not fit a {width}x{height} region at unit scale"
            )));
        }
        let size = (block_w * scale, block_h * scale);
        let origin = ((width - size.0) / 2, (height - size.1) / 2);
        Ok(Self {
            scale,
            origin,
            size,
        })
    }
}

/// Rasterize a string onto a canvas with the embedded fixed-width font.
/// Returns the image and its binary text mask (1.0 on glyph pixels).
pub fn render_text_roi(
    text: &str,
    style: &TextStyle,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<(ImageBuffer, ImageBuffer)> {
    let layout = TextLayout::compute(text, style.padding, width, height)?;
    let chars: Vec<char> = text.chars().collect();

    let mut img = ImageBuffer::from_fn(width, height, 3, |x, y, _| {
        style.background.sample(x, y, width, height, seed)
    });
    let mut mask = ImageBuffer::new(width, height, 1);
    let s = layout.scale;
    for (ci, &c) in chars.iter().enumerate() {
        let glyph = font::glyph_for(c).expect("validated by layout");
        let gx0 = layout.origin.0 + ci * font::GLYPH_ADVANCE * s;
        for row in 0..font::GLYPH_HEIGHT {
            for col in 0..font::GLYPH_WIDTH {
                if !font::glyph_bit(glyph, col, row) {
                    continue;
                }
                for dy in 0..s {
                    for dx in 0..s {
                        let x = gx0 + col * s + dx;
                        let y = layout.origin.1 + row * s + dy;
                        for ch in 0..3 {
                            img.set(x, y, ch, style.fg[ch]);
                        }
                        mask.set(x, y, 0, 1.0);
                    }
                }
            }
        }
    }
    Ok((img, mask))
}

/// Parametric quad trajectory of the text region across the clip.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraPath {
    /// Fixed quad.
    Static,
    /// Quad translating at constant velocity, centered mid-clip.
    LinearPan { dx_per_frame: f64, dy_per_frame: f64 },
    /// Planar rectangle seen from a camera swinging around it, giving
    /// perspective foreshortening, with optional sideways pan.
    CurvedOrbit {
        max_angle_deg: f64,
        cycles: f64,
        pan_amplitude: f64,
    },
}

impl Default for CameraPath {
    fn default() -> Self {
        CameraPath::Static
    }
}

/// Per-frame gain-field trajectory.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LightingPath {
    /// Unit gain everywhere.
    None,
    /// Scalar gain ramping linearly from `from` to `to` over the clip,
    /// applied to the whole frame.
    GlobalRamp { from: f64, to: f64 },
    /// Half-shadow with the given gain sweeping left-to-right across the
    /// ROI over the clip; `band_px` is the soft edge width.
    MovingShadow { gain: f64, band_px: f64 },
}

impl Default for LightingPath {
    fn default() -> Self {
        LightingPath::None
    }
}

/// Per-frame blur-parameter trajectory.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlurPath {
    /// No blur (`w = 0`).
    Identity,
    /// Same parameters on every frame.
    Constant { params: BlurParams },
    /// Isotropic blur with the blend weight ramping linearly, emulating a
    /// focus pull.
    FocusRamp { w_from: f64, w_to: f64, sigma: f64 },
    /// Explicit per-frame parameters (length must equal the frame count).
    Explicit { params: Vec<BlurParams> },
}

impl Default for BlurPath {
    fn default() -> Self {
        BlurPath::Identity
    }
}

/// Full description of one synthetic clip.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub text_source: String,
    pub text_target: String,
    pub style: TextStyle,
    pub background: BackgroundSpec,
    pub camera_path: CameraPath,
    pub lighting_path: LightingPath,
    pub blur_path: BlurPath,
    pub frame_count: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Fraction of the canonical ROI size used for the base quad.
    pub roi_scale: f64,
    /// Uniform annotation noise (pixels) added to the manifest quads; the
    /// ground-truth quads stay exact.
    pub quad_jitter_px: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            text_source: "COFFEE".into(),
            text_target: "ROBERT".into(),
            style: TextStyle::default(),
            background: BackgroundSpec::default(),
            camera_path: CameraPath::default(),
            lighting_path: LightingPath::default(),
            blur_path: BlurPath::default(),
            frame_count: 30,
            frame_width: 400,
            frame_height: 200,
            roi_scale: 0.95,
            quad_jitter_px: 0.0,
            seed: 1,
        }
    }
}

impl ScenarioSpec {
    /// Ground-truth quad of frame `t`.
    pub fn quad_at(&self, t: usize) -> RoiQuad {
        let n = self.frame_count.max(1);
        let cx = self.frame_width as f64 / 2.0;
        let cy = self.frame_height as f64 / 2.0;
        let half_w = CANONICAL_WIDTH as f64 * self.roi_scale / 2.0;
        let half_h = CANONICAL_HEIGHT as f64 * self.roi_scale / 2.0;
        let phase = if n > 1 {
            t as f64 / (n - 1) as f64
        } else {
            0.0
        };
        match &self.camera_path {
            CameraPath::Static => RoiQuad {
                vertices: [
                    (cx - half_w, cy - half_h),
                    (cx + half_w, cy - half_h),
                    (cx + half_w, cy + half_h),
                    (cx - half_w, cy + half_h),
                ],
            },
            CameraPath::LinearPan {
                dx_per_frame,
                dy_per_frame,
            } => {
                let offset = t as f64 - (n as f64 - 1.0) / 2.0;
                let ox = cx + dx_per_frame * offset;
                let oy = cy + dy_per_frame * offset;
                RoiQuad {
                    vertices: [
                        (ox - half_w, oy - half_h),
                        (ox + half_w, oy - half_h),
                        (ox + half_w, oy + half_h),
                        (ox - half_w, oy + half_h),
                    ],
                }
            }
            CameraPath::CurvedOrbit {
                max_angle_deg,
                cycles,
                pan_amplitude,
            } => {
                let angle = max_angle_deg.to_radians()
                    * (2.0 * std::f64::consts::PI * cycles * phase).sin();
                let pan = pan_amplitude * (2.0 * std::f64::consts::PI * phase).sin();
                let distance = 6.0 * half_w;
                let focal = distance;
                let project = |x: f64, y: f64| {
                    let xr = x * angle.cos();
                    let z = distance + x * angle.sin();
                    (focal * xr / z + cx + pan, focal * y / z + cy)
                };
                RoiQuad {
                    vertices: [
                        project(-half_w, -half_h),
                        project(half_w, -half_h),
                        project(half_w, half_h),
                        project(-half_w, half_h),
                    ],
                }
            }
        }
    }

    /// Ground-truth blur parameters of frame `t`.
    pub fn psi_at(&self, t: usize) -> BlurParams {
        let n = self.frame_count.max(1);
        let phase = if n > 1 {
            t as f64 / (n - 1) as f64
        } else {
            0.0
        };
        match &self.blur_path {
            BlurPath::Identity => BlurParams::identity(),
            BlurPath::Constant { params } => *params,
            BlurPath::FocusRamp { w_from, w_to, sigma } => {
                BlurParams::new(*sigma, *sigma, 0.0, w_from + (w_to - w_from) * phase)
            }
            BlurPath::Explicit { params } => params[t],
        }
    }

    /// Ground-truth gain field of frame `t` in canonical ROI coordinates,
    /// single channel.
    pub fn gain_field_at(&self, t: usize, w: usize, h: usize) -> Vec<f32> {
        let n = self.frame_count.max(1);
        let phase = if n > 1 {
            t as f64 / (n - 1) as f64
        } else {
            0.0
        };
        match &self.lighting_path {
            LightingPath::None => vec![1.0; w * h],
            LightingPath::GlobalRamp { from, to } => {
                vec![(from + (to - from) * phase) as f32; w * h]
            }
            LightingPath::MovingShadow { gain, band_px } => {
                // Edge sweeps from just left of the ROI to just right.
                let edge = -band_px + (w as f64 + 2.0 * band_px) * phase;
                let band = band_px.max(1e-6);
                let mut field = vec![1.0f32; w * h];
                for y in 0..h {
                    for x in 0..w {
                        let d = (x as f64 - edge) / band;
                        let s = if d <= 0.0 {
                            0.0
                        } else if d >= 1.0 {
                            1.0
                        } else {
                            d * d * (3.0 - 2.0 * d)
                        };
                        field[y * w + x] = (*gain + (1.0 - *gain) * s) as f32;
                    }
                }
                field
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(invalid_arg!("frame_count must be positive"));
        }
        if let BlurPath::Explicit { params } = &self.blur_path {
            if params.len() != self.frame_count {
                return Err(invalid_arg!(
                    "explicit blur path has {} entries for {} frames",
                    params.len(),
                    self.frame_count
                ));
            }
        }
        if self.roi_scale <= 0.0 {
            return Err(invalid_arg!("roi_scale must be positive"));
        }
        if self.quad_jitter_px < 0.0 {
            return Err(invalid_arg!("quad_jitter_px must be non-negative"));
        }
        Ok(())
    }
}

/// Everything generated for one clip: source/target frames plus the exact
/// trajectories that produced them.
#[derive(Debug, Clone)]
pub struct GroundTruthBundle {
    pub frames: Vec<ImageBuffer>,
    pub target_frames: Vec<ImageBuffer>,
    /// Exact per-frame quads.
    pub quads: Vec<RoiQuad>,
    /// Exact frontalization homographies (quad to canonical rectangle).
    pub homographies: Vec<Homography>,
    pub psis: Vec<BlurParams>,
    /// Canonical-coordinates gain fields, single channel, row-major.
    pub gains: Vec<Vec<f32>>,
    /// Annotation manifest (quads carry the configured jitter noise).
    pub manifest: Manifest,
}

/// Render a full clip: for each frame the frontal ROI is lit, warped into
/// the frame, and blurred; the identical chain runs on the target text.
/// Fully deterministic for a given spec.
pub fn generate_clip(spec: &ScenarioSpec) -> Result<GroundTruthBundle> {
    spec.validate()?;
    let (cw, chh) = (CANONICAL_WIDTH, CANONICAL_HEIGHT);
    let style = TextStyle {
        background: spec.background.clone(),
        ..spec.style.clone()
    };
    let (src_roi, _src_mask) = render_text_roi(&spec.text_source, &style, cw, chh, spec.seed)?;
    let (tgt_roi, _tgt_mask) = render_text_roi(&spec.text_target, &style, cw, chh, spec.seed)?;

    let canonical = canonical_rect(cw, chh);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x51CE_11A5);

    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut target_frames = Vec::with_capacity(spec.frame_count);
    let mut quads = Vec::with_capacity(spec.frame_count);
    let mut homographies = Vec::with_capacity(spec.frame_count);
    let mut psis = Vec::with_capacity(spec.frame_count);
    let mut gains = Vec::with_capacity(spec.frame_count);
    let mut annotations = Vec::with_capacity(spec.frame_count);

    for t in 0..spec.frame_count {
        let quad = spec.quad_at(t);
        let theta = estimate_homography(&quad, &canonical).map_err(|e| e.at_frame(t))?;
        let psi = spec.psi_at(t);
        let gain = spec.gain_field_at(t, cw, chh);
        let global_gain = match &spec.lighting_path {
            LightingPath::GlobalRamp { .. } => Some(gain[0]),
            _ => None,
        };

        let frame = render_frame(spec, &src_roi, &gain, global_gain, &quad, &theta, &psi, t)?;
        let target = render_frame(spec, &tgt_roi, &gain, global_gain, &quad, &theta, &psi, t)?;

        // Manifest quads emulate detector noise; ground truth stays exact.
        let noisy_quad = if spec.quad_jitter_px > 0.0 {
            let j = spec.quad_jitter_px;
            let mut v = quad.vertices;
            for p in &mut v {
                p.0 += rng.gen_range(-j..=j);
                p.1 += rng.gen_range(-j..=j);
            }
            RoiQuad { vertices: v }
        } else {
            quad
        };
        let confidence = 0.999 - 0.004 * spec.psi_at(t).weight.max(0.0);
        annotations.push(FrameAnnotation {
            index: t,
            file: format!("frame_{t:04}.png"),
            quad: Some(noisy_quad),
            ocr_confidence: confidence,
            ocr_text: spec.text_source.clone(),
        });

        frames.push(frame);
        target_frames.push(target);
        quads.push(quad);
        homographies.push(theta);
        psis.push(psi);
        gains.push(gain);
    }

    Ok(GroundTruthBundle {
        frames,
        target_frames,
        quads,
        homographies,
        psis,
        gains,
        manifest: Manifest {
            frames: annotations,
        },
    })
}

/// Single-frame chain: light the frontal ROI, warp it into the frame over
/// the background, then apply the differential blur to the composite.
#[allow(clippy::too_many_arguments)]
fn render_frame(
    spec: &ScenarioSpec,
    roi: &ImageBuffer,
    gain: &[f32],
    global_gain: Option<f32>,
    quad: &RoiQuad,
    theta: &Homography,
    psi: &BlurParams,
    frame_index: usize,
) -> Result<ImageBuffer> {
    let (cw, chh) = (roi.width(), roi.height());
    let mut lit = roi.clone();
    for y in 0..chh {
        for x in 0..cw {
            let g = gain[y * cw + x];
            for c in 0..3 {
                lit.set(x, y, c, lit.get(x, y, c) * g);
            }
        }
    }

    let theta_inv = invert(theta).map_err(|e| e.at_frame(frame_index))?;
    let warped = warp(&lit, &theta_inv, spec.frame_width, spec.frame_height)
        .map_err(|e| e.at_frame(frame_index))?;

    let bg_gain = global_gain.unwrap_or(1.0);
    let composite = ImageBuffer::from_fn(spec.frame_width, spec.frame_height, 3, |x, y, c| {
        if quad_inside_distance(quad, x as f64, y as f64) > 0.0 {
            warped.get(x, y, c)
        } else {
            spec.background
                .sample(x, y, spec.frame_width, spec.frame_height, spec.seed)
                * bg_gain
        }
    });

    apply_differential_transform(&composite, psi).map_err(|e| e.at_frame(frame_index))
}

/// Write a bundle to disk: numbered source/target PNGs, the annotation
/// manifest, and the ground-truth trajectory file.
pub fn save_bundle(
    bundle: &GroundTruthBundle,
    spec: &ScenarioSpec,
    out_dir: impl AsRef<std::path::Path>,
) -> Result<()> {
    use crate::imgcore::write_png;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    for (t, frame) in bundle.frames.iter().enumerate() {
        write_png(frame, dir.join(format!("frame_{t:04}.png")))?;
    }
    for (t, frame) in bundle.target_frames.iter().enumerate() {
        write_png(frame, dir.join(format!("target_{t:04}.png")))?;
    }
    let manifest_path = dir.join("manifest.json");
    let manifest_json = serde_json::to_string_pretty(&bundle.manifest).map_err(|e| {
        invalid_arg!("manifest serialization failed: {e}")
    })?;
    std::fs::write(&manifest_path, manifest_json).map_err(|e| Error::Io {
        path: manifest_path.display().to_string(),
        source: e,
    })?;

    let gt = GroundTruthFile {
        version: 1,
        canonical_width: CANONICAL_WIDTH,
        canonical_height: CANONICAL_HEIGHT,
        lighting_path: spec.lighting_path.clone(),
        frames: (0..bundle.frames.len())
            .map(|t| GroundTruthFrame {
                index: t,
                quad: bundle.quads[t],
                theta: bundle.homographies[t].entries(),
                psi: bundle.psis[t].as_array(),
            })
            .collect(),
    };
    let gt_path = dir.join("ground_truth.json");
    let gt_json = serde_json::to_string_pretty(&gt)
        .map_err(|e| invalid_arg!("ground truth serialization failed: {e}"))?;
    std::fs::write(&gt_path, gt_json).map_err(|e| Error::Io {
        path: gt_path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

/// On-disk ground-truth record.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct GroundTruthFile {
    pub version: u32,
    pub canonical_width: usize,
    pub canonical_height: usize,
    pub lighting_path: LightingPath,
    pub frames: Vec<GroundTruthFrame>,
}

/// Per-frame ground truth: exact quad, frontalization homography (9
/// row-major entries), and blur parameters.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct GroundTruthFrame {
    pub index: usize,
    pub quad: RoiQuad,
    pub theta: [f64; 9],
    pub psi: [f64; 4],
}
