//! Image buffers, deterministic file I/O and the two resampling helpers every
//! metric relies on.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use thiserror::Error;

use crate::linear::{Op1d, Plane};

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive (got {height}x{width})")]
    EmptyDimensions { height: usize, width: usize },
    #[error("unsupported channel count {0}; expected 1 or 3")]
    Channels(usize),
    #[error("sample buffer has {actual} values, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("maximum pixel value must be positive and finite (got {0})")]
    InvalidMaxValue(f64),
    #[error("sample {index} = {value} lies outside [0, {max}]")]
    OutOfRange { index: usize, value: f64, max: f64 },
    #[error("{0}: no such file")]
    MissingFile(PathBuf),
    #[error("{0}: unsupported image format")]
    UnsupportedFormat(PathBuf),
    #[error("{path}: corrupt image stream ({detail})")]
    CorruptStream { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// An `H x W x C` image stored row-major with interleaved channels.
///
/// Samples are kept as `f64` regardless of the source bit depth; they are
/// quantized only when written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    max_value: f64,
}

impl ImageBuffer {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        max_value: f64,
    ) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::EmptyDimensions { height, width });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        if !(max_value.is_finite() && max_value > 0.0) {
            return Err(ImageError::InvalidMaxValue(max_value));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ImageError::LengthMismatch { expected, actual: data.len() });
        }
        if let Some((index, &value)) =
            data.iter().enumerate().find(|(_, &v)| !(0.0..=max_value).contains(&v))
        {
            return Err(ImageError::OutOfRange { index, value, max: max_value });
        }
        Ok(ImageBuffer { height, width, channels, data, max_value })
    }

    /// Builds an image, clamping every sample into `[0, max_value]`.
    pub fn from_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<f64>,
        max_value: f64,
    ) -> Result<Self, ImageError> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, max_value) };
        }
        ImageBuffer::new(height, width, channels, data, max_value)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64, max_value: f64) -> Self {
        ImageBuffer::new(height, width, channels, vec![value; height * width * channels], max_value)
            .expect("filled image must satisfy invariants")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn sample(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Same shape and range, new samples (clamped).
    pub fn with_data(&self, data: Vec<f64>) -> Result<ImageBuffer, ImageError> {
        ImageBuffer::from_clamped(self.height, self.width, self.channels, data, self.max_value)
    }

    pub fn channel_plane(&self, channel: usize) -> Plane {
        Plane::new(
            self.height,
            self.width,
            self.data.iter().skip(channel).step_by(self.channels).copied().collect(),
        )
    }

    /// Luminance as a bare plane in the image's own units.
    pub fn luma_plane(&self) -> Plane {
        if self.channels == 1 {
            return Plane::new(self.height, self.width, self.data.clone());
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| {
                let y = LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2];
                y.clamp(0.0, self.max_value)
            })
            .collect();
        Plane::new(self.height, self.width, data)
    }

    /// Fingerprint of shape, range and samples; stable across runs.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for dim in [self.height, self.width, self.channels] {
            hasher.update((dim as u64).to_le_bytes());
        }
        hasher.update(self.max_value.to_le_bytes());
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Pulls a luminance gradient back onto the image's channels.
pub fn luma_adjoint(grad: &Plane, channels: usize) -> Vec<f64> {
    if channels == 1 {
        return grad.data.clone();
    }
    grad.data
        .iter()
        .flat_map(|&g| LUMA_WEIGHTS.iter().map(move |w| w * g))
        .collect()
}

pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    let plane = img.luma_plane();
    ImageBuffer::new(img.height, img.width, 1, plane.data, img.max_value)
        .expect("luma stays within range")
}

pub fn resize_bilinear(img: &ImageBuffer, new_h: usize, new_w: usize) -> ImageBuffer {
    assert!(new_h >= 1 && new_w >= 1, "target dimensions must be positive");
    if new_h == img.height && new_w == img.width {
        return img.clone();
    }
    let op_h = Op1d::bilinear(img.height, new_h);
    let op_w = Op1d::bilinear(img.width, new_w);
    let planes: Vec<Plane> =
        (0..img.channels).map(|c| img.channel_plane(c).separable(&op_h, &op_w)).collect();
    let mut data = Vec::with_capacity(new_h * new_w * img.channels);
    for i in 0..new_h * new_w {
        for p in &planes {
            data.push(p.data[i]);
        }
    }
    ImageBuffer::from_clamped(new_h, new_w, img.channels, data, img.max_value)
        .expect("bilinear output stays within range")
}

/// Resizes `img` to `like`'s spatial dimensions when they differ.
pub fn match_dimensions(img: &ImageBuffer, like: &ImageBuffer) -> ImageBuffer {
    resize_bilinear(img, like.height, like.width)
}

pub fn load_image(path: &Path) -> Result<ImageBuffer, ImageError> {
    if !path.exists() {
        return Err(ImageError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|source| ImageError::Io { path: path.to_path_buf(), source })?;
    let format = image::guess_format(&bytes)
        .map_err(|_| ImageError::UnsupportedFormat(path.to_path_buf()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(ImageError::UnsupportedFormat(path.to_path_buf()));
    }
    let decoded = image::load_from_memory_with_format(&bytes, format).map_err(|e| match e {
        image::ImageError::Unsupported(_) => ImageError::UnsupportedFormat(path.to_path_buf()),
        other => ImageError::CorruptStream { path: path.to_path_buf(), detail: other.to_string() },
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw): (usize, Vec<u8>) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageLumaA8(_) => (1, decoded.to_luma8().into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        DynamicImage::ImageRgba8(_) => (3, decoded.to_rgb8().into_raw()),
        _ => return Err(ImageError::UnsupportedFormat(path.to_path_buf())),
    };
    ImageBuffer::new(h, w, channels, raw.into_iter().map(f64::from).collect(), 255.0)
}

/// 8-bit quantization with round-half-up, rescaling from `max_value` to 255.
pub fn quantize_u8(img: &ImageBuffer) -> Vec<u8> {
    let scale = 255.0 / img.max_value;
    img.data.iter().map(|&v| (v * scale + 0.5).floor().clamp(0.0, 255.0) as u8).collect()
}

/// Writes PNG for `.png`, binary PGM/PPM (max value 255) for `.pgm`, `.ppm`
/// and `.pnm`.
pub fn save_image(img: &ImageBuffer, path: &Path) -> Result<(), ImageError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = quantize_u8(img);
    let io_err = |source| ImageError::Io { path: path.to_path_buf(), source };
    match ext.as_str() {
        "png" => {
            let color = if img.channels == 1 {
                image::ExtendedColorType::L8
            } else {
                image::ExtendedColorType::Rgb8
            };
            image::save_buffer_with_format(
                path,
                &bytes,
                img.width as u32,
                img.height as u32,
                color,
                ImageFormat::Png,
            )
            .map_err(|e| ImageError::CorruptStream { path: path.to_path_buf(), detail: e.to_string() })
        }
        "pgm" | "ppm" | "pnm" => {
            let magic = if img.channels == 1 { "P5" } else { "P6" };
            let file = fs::File::create(path).map_err(io_err)?;
            let mut out = BufWriter::new(file);
            write!(out, "{magic}\n{} {}\n255\n", img.width, img.height).map_err(io_err)?;
            out.write_all(&bytes).map_err(io_err)?;
            out.flush().map_err(io_err)
        }
        _ => Err(ImageError::UnsupportedFormat(path.to_path_buf())),
    }
}
