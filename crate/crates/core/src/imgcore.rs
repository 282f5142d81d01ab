//! Image representation, color conversion, convolution, and resampling
//! primitives shared by all modules.
//!
//! Images are interleaved row-major `f32` buffers with 1 or 3 channels and
//! values kept in `[0, 1]`. All operations are pure functions over immutable
//! inputs.

use std::path::Path;

use crate::error::{invalid_arg, Error, Result};

/// Dense floating-point image, row-major, interleaved channels, values in
/// `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    /// All-zero image. `channels` must be 1 or 3.
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    /// Constant image. `channels` must be 1 or 3.
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        assert!(
            channels == 1 || channels == 3,
            "channels must be 1 or 3, got {channels}"
        );
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        Self {
            width,
            height,
            channels,
            data: vec![value.clamp(0.0, 1.0); width * height * channels],
        }
    }

    /// Build from a closure producing each `(x, y, c)` sample. Values are
    /// clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.set(x, y, c, f(x, y, c));
                }
            }
        }
        img
    }

    /// Wrap an existing buffer. Fails if the length does not match
    /// `width * height * channels` or any value is non-finite.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid_arg!("channels must be 1 or 3, got {channels}"));
        }
        if data.len() != width * height * channels {
            return Err(invalid_arg!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid_arg!("image data contains non-finite values"));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
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

    /// `(width, height, channels)` triple.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    /// Raw interleaved samples.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Store a sample, clamping to `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    /// Sample with clamp-to-edge (replicate) handling of out-of-range
    /// integer coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc, c)
    }

    /// Bilinear sample at fractional coordinates, replicating edge pixels
    /// outside the image.
    pub fn sample_bilinear(&self, fx: f64, fy: f64, c: usize) -> f32 {
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = (fx - x0) as f32;
        let ty = (fy - y0) as f32;
        let x0 = x0 as isize;
        let y0 = y0 as isize;
        let v00 = self.get_clamped(x0, y0, c);
        let v10 = self.get_clamped(x0 + 1, y0, c);
        let v01 = self.get_clamped(x0, y0 + 1, c);
        let v11 = self.get_clamped(x0 + 1, y0 + 1, c);
        let top = v00 + (v10 - v00) * tx;
        let bot = v01 + (v11 - v01) * tx;
        top + (bot - top) * ty
    }

    /// Mean over all samples.
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Square 2-D filter kernel with odd side `2 * radius + 1`, non-negative
/// weights normalized to sum 1.
#[derive(Debug, Clone)]
pub struct Kernel2D {
    radius: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    /// Normalize raw weights into a kernel. Fails on negative weights or an
    /// all-zero grid.
    pub fn new(radius: usize, weights: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if weights.len() != side * side {
            return Err(invalid_arg!(
                "kernel weight count {} does not match side {}",
                weights.len(),
                side
            ));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(invalid_arg!("kernel weights must be finite and >= 0"));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(invalid_arg!("kernel weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Ok(Self { radius, weights })
    }

    /// Identity (delta) kernel of radius 0.
    pub fn delta() -> Self {
        Self {
            radius: 0,
            weights: vec![1.0],
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Normalized weights, row-major over the `(2r+1)^2` grid.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dx, dy)` from the center, `|dx|, |dy| <= radius`.
    #[inline]
    pub fn weight_at(&self, dx: isize, dy: isize) -> f64 {
        let side = 2 * self.radius + 1;
        let ix = (dx + self.radius as isize) as usize;
        let iy = (dy + self.radius as isize) as usize;
        self.weights[iy * side + ix]
    }
}

/// Rec. 601 luminance of a 3-channel image.
///
/// Errors with `InvalidArgument` when the input is already single-channel.
pub fn to_luminance(img: &ImageBuffer) -> Result<ImageBuffer> {
    if img.channels() != 3 {
        return Err(invalid_arg!(
            "to_luminance expects a 3-channel image, got {} channel(s)",
            img.channels()
        ));
    }
    let mut out = ImageBuffer::new(img.width(), img.height(), 1);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let r = img.get(x, y, 0);
            let g = img.get(x, y, 1);
            let b = img.get(x, y, 2);
            out.set(x, y, 0, 0.299 * r + 0.587 * g + 0.114 * b);
        }
    }
    Ok(out)
}

/// Dense 2-D convolution with replicate (clamp-to-edge) boundary handling.
/// Channels are processed independently; the output is clamped to `[0, 1]`.
///
/// Errors when the kernel radius is not strictly smaller than both image
/// dimensions.
pub fn convolve(img: &ImageBuffer, kernel: &Kernel2D) -> Result<ImageBuffer> {
    let r = kernel.radius();
    if r >= img.width() || r >= img.height() {
        return Err(invalid_arg!(
            "kernel radius {} too large for {}x{} image",
            r,
            img.width(),
            img.height()
        ));
    }
    let (w, h, ch) = img.dims();
    let side = 2 * r + 1;
    let ri = r as isize;
    let mut out = ImageBuffer::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            let interior =
                x >= r && y >= r && x + r < w && y + r < h;
            for c in 0..ch {
                let mut acc = 0.0f64;
                if interior {
                    // Hot path: no coordinate clamping needed.
                    for (ky, row) in kernel.weights().chunks_exact(side).enumerate() {
                        let yy = y + ky - r;
                        let base = (yy * w + x - r) * ch + c;
                        for (kx, &wk) in row.iter().enumerate() {
                            if wk != 0.0 {
                                acc += wk * img.data[base + kx * ch] as f64;
                            }
                        }
                    }
                } else {
                    for dy in -ri..=ri {
                        for dx in -ri..=ri {
                            let wk = kernel.weight_at(dx, dy);
                            if wk != 0.0 {
                                acc += wk
                                    * img.get_clamped(x as isize + dx, y as isize + dy, c) as f64;
                            }
                        }
                    }
                }
                out.set(x, y, c, acc as f32);
            }
        }
    }
    Ok(out)
}

/// Shift an image by an integer offset, replicating edge pixels into the
/// uncovered band. Positive `dx` moves content rightward.
pub fn translate_replicate(img: &ImageBuffer, dx: isize, dy: isize) -> ImageBuffer {
    let (w, h, ch) = img.dims();
    let mut out = ImageBuffer::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out.set(x, y, c, img.get_clamped(x as isize - dx, y as isize - dy, c));
            }
        }
    }
    out
}

/// Bilinear resampling to `out_w x out_h` (center-aligned sampling grid).
/// Returns a bit-identical copy when the dimensions are unchanged.
pub fn resample_bilinear(img: &ImageBuffer, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    if out_w < 2 || out_h < 2 {
        return Err(invalid_arg!(
            "output dimensions must be at least 2x2, got {}x{}",
            out_w,
            out_h
        ));
    }
    if out_w == img.width() && out_h == img.height() {
        return Ok(img.clone());
    }
    let sx = img.width() as f64 / out_w as f64;
    let sy = img.height() as f64 / out_h as f64;
    let mut out = ImageBuffer::new(out_w, out_h, img.channels());
    for y in 0..out_h {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..out_w {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            for c in 0..img.channels() {
                out.set(x, y, c, img.sample_bilinear(fx, fy, c));
            }
        }
    }
    Ok(out)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn codec_err(path: &Path, source: image::ImageError) -> Error {
    Error::Codec {
        path: path.display().to_string(),
        source,
    }
}

/// Read an 8-bit PNG into `[0, 1]` floats. Grayscale files load as one
/// channel, everything else as RGB.
pub fn read_png(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| codec_err(path, e))?;
    Ok(decode_dynamic(img))
}

fn decode_dynamic(img: image::DynamicImage) -> ImageBuffer {
    use image::DynamicImage;
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let data = g.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            ImageBuffer::from_vec(w as usize, h as usize, 1, data)
                .expect("decoded buffer length is consistent")
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            ImageBuffer::from_vec(w as usize, h as usize, 3, data)
                .expect("decoded buffer length is consistent")
        }
    }
}

/// Write an image as 8-bit PNG (`round(v * 255)` per sample).
pub fn write_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
        }
    }
    let to_u8 = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let w = img.width() as u32;
    let h = img.height() as u32;
    match img.channels() {
        1 => {
            let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
            let buf: image::GrayImage =
                image::ImageBuffer::from_raw(w, h, raw).expect("raw buffer length is consistent");
            buf.save(path).map_err(|e| codec_err(path, e))
        }
        _ => {
            let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
            let buf: image::RgbImage =
                image::ImageBuffer::from_raw(w, h, raw).expect("raw buffer length is consistent");
            buf.save(path).map_err(|e| codec_err(path, e))
        }
    }
}
