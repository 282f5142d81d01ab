//! Per-frame transform recipes and their versioned sidecar format.
//!
//! A recipe fully determines how the replaced reference ROI propagates to
//! one frame: frontalization homography, lighting ratio map, and blur
//! parameters. Recipes are computed once per input video and reused for
//! every output copy.

use std::io::Cursor;
use std::path::Path;

use base64::Engine;

use crate::blur::BlurParams;
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{Homography, RoiQuad};
use crate::photometry::RatioMap;

/// Current sidecar format version.
pub const RECIPE_FORMAT_VERSION: u32 = 1;

/// Everything needed to propagate the replaced reference ROI into one frame.
#[derive(Debug, Clone)]
pub struct TransformRecipe {
    /// Annotation index of the frame.
    pub frame_index: usize,
    /// Frontalization homography: frame quad onto the canonical target
    /// rectangle.
    pub theta: Homography,
    /// Effective placement quad in frame coordinates (the canonical target
    /// projected back through `theta⁻¹`); compositing feathers against it.
    pub quad: RoiQuad,
    /// Lighting gain map in canonical coordinates.
    pub ratio: RatioMap,
    /// Differential blur parameters.
    pub psi: BlurParams,
    /// True for the reference frame (identity blur, unit ratio).
    pub reference: bool,
}

/// Ordered recipe collection for one clip.
#[derive(Debug, Clone)]
pub struct RecipeSet {
    /// Annotation index of the reference frame.
    pub ref_index: usize,
    /// Canonical ROI dimensions the recipes were built at.
    pub canonical_width: usize,
    pub canonical_height: usize,
    /// Recipes for active frames, ordered by frame index.
    pub recipes: Vec<TransformRecipe>,
}

impl RecipeSet {
    /// Recipe lookup by annotation index.
    pub fn recipe_for(&self, frame_index: usize) -> Option<&TransformRecipe> {
        self.recipes
            .binary_search_by_key(&frame_index, |r| r.frame_index)
            .ok()
            .map(|pos| &self.recipes[pos])
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RecipeFile {
    version: u32,
    ref_index: usize,
    canonical_width: usize,
    canonical_height: usize,
    recipes: Vec<RecipeRecord>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RecipeRecord {
    frame_index: usize,
    /// Row-major homography entries, `m[2][2] = 1` last.
    theta: [f64; 9],
    quad: RoiQuad,
    /// `[sigma_x, sigma_y, rho, w]`.
    psi: [f64; 4],
    reference: bool,
    epsilon: f32,
    /// Ratio map channel count (1 or 3).
    ratio_channels: usize,
    /// True for the exact unit gain field; `ratio_png` is absent then.
    ratio_unit: bool,
    /// Base64 PNG (16-bit) of the gain map, `gain = sample / 6553.5`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ratio_png: Option<String>,
}

fn encode_ratio_png(ratio: &RatioMap) -> Result<String> {
    let samples = ratio.to_u16_samples();
    let w = ratio.width() as u32;
    let h = ratio.height() as u32;
    let mut bytes = Vec::new();
    let dynamic = match ratio.channels() {
        1 => {
            let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
                image::ImageBuffer::from_raw(w, h, samples)
                    .expect("sample count matches dimensions");
            image::DynamicImage::ImageLuma16(buf)
        }
        _ => {
            let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
                image::ImageBuffer::from_raw(w, h, samples)
                    .expect("sample count matches dimensions");
            image::DynamicImage::ImageRgb16(buf)
        }
    };
    dynamic
        .write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Codec {
            path: "<memory>".into(),
            source: e,
        })?;
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
}

fn decode_ratio_png(
    data: &str,
    channels: usize,
    epsilon: f32,
) -> Result<RatioMap> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(data)
        .map_err(|e| invalid_arg!("ratio map base64 is invalid: {e}"))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Codec {
        path: "<memory>".into(),
        source: e,
    })?;
    let (w, h, samples): (usize, usize, Vec<u16>) = match (channels, img) {
        (1, image::DynamicImage::ImageLuma16(buf)) => {
            let (w, h) = buf.dimensions();
            (w as usize, h as usize, buf.into_raw())
        }
        (3, image::DynamicImage::ImageRgb16(buf)) => {
            let (w, h) = buf.dimensions();
            (w as usize, h as usize, buf.into_raw())
        }
        (c, other) => {
            return Err(invalid_arg!(
                "ratio map PNG has color type {:?}, expected {c}-channel 16-bit",
                other.color()
            ))
        }
    };
    RatioMap::from_u16_samples(w, h, channels, &samples, epsilon)
}

/// Serialize a recipe set to the versioned JSON sidecar.
pub fn save_recipes(set: &RecipeSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let records = set
        .recipes
        .iter()
        .map(|r| {
            Ok(RecipeRecord {
                frame_index: r.frame_index,
                theta: r.theta.entries(),
                quad: r.quad,
                psi: r.psi.as_array(),
                reference: r.reference,
                epsilon: r.ratio.epsilon(),
                ratio_channels: r.ratio.channels(),
                ratio_unit: r.ratio.is_unit(),
                ratio_png: if r.ratio.is_unit() {
                    None
                } else {
                    Some(encode_ratio_png(&r.ratio)?)
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let file = RecipeFile {
        version: RECIPE_FORMAT_VERSION,
        ref_index: set.ref_index,
        canonical_width: set.canonical_width,
        canonical_height: set.canonical_height,
        recipes: records,
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| invalid_arg!("recipe serialization failed: {e}"))?;
    std::fs::write(path, json).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Load a recipe sidecar written by [`save_recipes`].
pub fn load_recipes(path: impl AsRef<Path>) -> Result<RecipeSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let file: RecipeFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if file.version != RECIPE_FORMAT_VERSION {
        return Err(invalid_arg!(
            "unsupported recipe format version {} (expected {RECIPE_FORMAT_VERSION})",
            file.version
        ));
    }
    let recipes = file
        .recipes
        .into_iter()
        .map(|r| {
            let ratio = if r.ratio_unit {
                RatioMap::unit(
                    file.canonical_width,
                    file.canonical_height,
                    r.ratio_channels,
                    r.epsilon,
                )
            } else {
                let png = r.ratio_png.as_deref().ok_or_else(|| {
                    invalid_arg!("frame {}: non-unit ratio map lacks PNG data", r.frame_index)
                })?;
                decode_ratio_png(png, r.ratio_channels, r.epsilon)?
            };
            Ok(TransformRecipe {
                frame_index: r.frame_index,
                theta: Homography::from_entries(r.theta)?,
                quad: r.quad,
                ratio,
                psi: BlurParams::from_array(r.psi),
                reference: r.reference,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RecipeSet {
        ref_index: file.ref_index,
        canonical_width: file.canonical_width,
        canonical_height: file.canonical_height,
        recipes,
    })
}
