//! The four similarity channels of the composite score.
//!
//! PSNR and SSIM are computed exactly here. Perceptual distance and semantic
//! similarity go through provider traits: the built-in reference providers are
//! deterministic and differentiable, while learned-network values arrive as
//! precomputed manifest channels.

mod perceptual;
mod psnr;
mod semantic;
mod ssim;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{match_dimensions, to_grayscale, ImageBuffer};

pub use perceptual::{PrecomputedDistances, ReferencePyramidDistance};
pub use psnr::{psnr, psnr_gradient, MSE_FLOOR_RATIO, PSNR_CAP};
pub use semantic::{PrecomputedEmbeddings, ReferenceEmbedding};
pub use ssim::{ssim, ssim_gradient, SsimConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("image shapes differ: {left:?} vs {right:?}")]
    DimensionMismatch { left: (usize, usize, usize), right: (usize, usize, usize) },
    #[error("image {height}x{width} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall { height: usize, width: usize, window: usize },
    #[error("invalid SSIM configuration: {0}")]
    InvalidConfig(String),
    #[error("{provider}: {reason}")]
    ProviderUnavailable { provider: String, reason: String },
}

pub(crate) fn shape(img: &ImageBuffer) -> (usize, usize, usize) {
    (img.height(), img.width(), img.channels())
}

pub(crate) fn check_same_shape(x: &ImageBuffer, y: &ImageBuffer) -> Result<(), MetricError> {
    if x.same_shape(y) && x.max_value() == y.max_value() {
        Ok(())
    } else {
        Err(MetricError::DimensionMismatch { left: shape(x), right: shape(y) })
    }
}

/// One value per similarity channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub clip: f64,
}

impl MetricVector {
    pub const fn new(psnr: f64, ssim: f64, lpips: f64, clip: f64) -> Self {
        MetricVector { psnr, ssim, lpips, clip }
    }

    /// Channel values of an image compared with itself.
    pub const fn identical() -> Self {
        MetricVector::new(PSNR_CAP, 1.0, 0.0, 1.0)
    }

    /// `(psnr, ssim, 1 - lpips, clip)`: the features the weights multiply.
    pub fn features(&self) -> [f64; 4] {
        [self.psnr, self.ssim, 1.0 - self.lpips, self.clip]
    }

    pub fn is_valid(&self) -> bool {
        let finite = [self.psnr, self.ssim, self.lpips, self.clip].iter().all(|v| v.is_finite());
        finite
            && self.lpips >= 0.0
            && (-1.0..=1.0).contains(&self.clip)
            && (-1.0 - 1e-9..=1.0 + 1e-9).contains(&self.ssim)
            && self.psnr <= PSNR_CAP
    }
}

/// Any subset of channels supplied ahead of time (e.g. by an external adapter).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialMetrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
}

impl PartialMetrics {
    pub fn complete(&self) -> Option<MetricVector> {
        Some(MetricVector::new(self.psnr?, self.ssim?, self.lpips?, self.clip?))
    }

    pub fn is_empty(&self) -> bool {
        self.psnr.is_none() && self.ssim.is_none() && self.lpips.is_none() && self.clip.is_none()
    }
}

impl From<MetricVector> for PartialMetrics {
    fn from(m: MetricVector) -> Self {
        PartialMetrics { psnr: Some(m.psnr), ssim: Some(m.ssim), lpips: Some(m.lpips), clip: Some(m.clip) }
    }
}

/// LPIPS-style perceptual distance between two images.
pub trait PerceptualProvider: Send + Sync {
    fn name(&self) -> &str;

    fn distance(&self, x: &ImageBuffer, y: &ImageBuffer) -> Result<f64, MetricError>;

    /// Gradient of `distance(x, y)` with respect to the samples of `y`.
    fn distance_gradient(&self, _x: &ImageBuffer, _y: &ImageBuffer) -> Option<Vec<f64>> {
        None
    }
}

/// Unit-norm image embedding (CLIP-style).
pub trait SemanticProvider: Send + Sync {
    fn name(&self) -> &str;

    fn embed(&self, img: &ImageBuffer) -> Result<Vec<f64>, MetricError>;

    /// Pulls a cotangent on the unit embedding back to the image samples.
    fn embedding_vjp(&self, _img: &ImageBuffer, _upstream: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Everything needed to fill a [`MetricVector`].
#[derive(Clone)]
pub struct Providers {
    pub ssim: SsimConfig,
    pub perceptual: Arc<dyn PerceptualProvider>,
    pub semantic: Arc<dyn SemanticProvider>,
}

impl Providers {
    pub fn reference() -> Self {
        Providers {
            ssim: SsimConfig::default(),
            perceptual: Arc::new(ReferencePyramidDistance::default()),
            semantic: Arc::new(ReferenceEmbedding::default()),
        }
    }

    pub fn with_ssim(mut self, cfg: SsimConfig) -> Self {
        self.ssim = cfg;
        self
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "ssim": self.ssim,
            "ssim_color": "bt601-luma",
            "psnr_color": "all-channels",
            "perceptual": self.perceptual.name(),
            "semantic": self.semantic.name(),
        })
    }
}

impl std::fmt::Debug for Providers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Providers")
            .field("ssim", &self.ssim)
            .field("perceptual", &self.perceptual.name())
            .field("semantic", &self.semantic.name())
            .finish()
    }
}

pub fn perceptual_distance(
    x: &ImageBuffer,
    y: &ImageBuffer,
    provider: &dyn PerceptualProvider,
) -> Result<f64, MetricError> {
    if x == y {
        return Ok(0.0);
    }
    provider.distance(x, y)
}

pub fn semantic_similarity(
    x: &ImageBuffer,
    y: &ImageBuffer,
    provider: &dyn SemanticProvider,
) -> Result<f64, MetricError> {
    let ex = provider.embed(x)?;
    let ey = provider.embed(y)?;
    if ex.len() != ey.len() {
        return Err(MetricError::ProviderUnavailable {
            provider: provider.name().to_string(),
            reason: format!("embedding sizes differ ({} vs {})", ex.len(), ey.len()),
        });
    }
    Ok(cosine(&ex, &ey))
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Brings `y` onto `x`'s grid: same spatial size, channel count and range.
pub fn harmonize(x: &ImageBuffer, y: &ImageBuffer) -> ImageBuffer {
    let mut y = if y.height() != x.height() || y.width() != x.width() {
        match_dimensions(y, x)
    } else {
        y.clone()
    };
    if y.max_value() != x.max_value() {
        let scale = x.max_value() / y.max_value();
        y = ImageBuffer::from_clamped(
            y.height(),
            y.width(),
            y.channels(),
            y.data().iter().map(|v| v * scale).collect(),
            x.max_value(),
        )
        .expect("rescaled image is valid");
    }
    if y.channels() != x.channels() {
        y = if x.channels() == 1 {
            to_grayscale(&y)
        } else {
            let data = y.data().iter().flat_map(|&v| [v, v, v]).collect();
            ImageBuffer::new(y.height(), y.width(), 3, data, y.max_value()).expect("replicated gray")
        };
    }
    y
}

/// Fills all four channels for `(x, x_inv)`. Precomputed values win per channel;
/// channels that are precomputed are never computed.
pub fn metric_vector(
    x: &ImageBuffer,
    x_inv: &ImageBuffer,
    providers: &Providers,
    precomputed: Option<&PartialMetrics>,
) -> Result<MetricVector, MetricError> {
    let pre = precomputed.copied().unwrap_or_default();
    if let Some(full) = pre.complete() {
        return Ok(full);
    }
    let y = harmonize(x, x_inv);
    let psnr_v = match pre.psnr {
        Some(v) => v,
        None => psnr(x, &y)?,
    };
    let ssim_v = match pre.ssim {
        Some(v) => v,
        None => ssim(x, &y, &providers.ssim)?,
    };
    let lpips_v = match pre.lpips {
        Some(v) => v,
        None => perceptual_distance(x, &y, providers.perceptual.as_ref())?,
    };
    let clip_v = match pre.clip {
        Some(v) => v,
        None => semantic_similarity(x, &y, providers.semantic.as_ref())?,
    };
    Ok(MetricVector::new(psnr_v, ssim_v, lpips_v, clip_v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn identity_pair_gives_identity_vector() {
        let x = synth::natural_image(24, 24, 3, 7);
        let m = metric_vector(&x, &x, &Providers::reference(), None).unwrap();
        assert_eq!(m.psnr, PSNR_CAP);
        assert!((m.ssim - 1.0).abs() < 1e-9);
        assert_eq!(m.lpips, 0.0);
        assert!((m.clip - 1.0).abs() < 1e-9);
    }

    #[test]
    fn precomputed_channels_take_precedence() {
        let x = synth::natural_image(24, 24, 3, 1);
        let y = synth::natural_image(24, 24, 3, 2);
        let pre = PartialMetrics { lpips: Some(0.1), clip: Some(0.95), ..Default::default() };
        let m = metric_vector(&x, &y, &Providers::reference(), Some(&pre)).unwrap();
        assert_eq!((m.lpips, m.clip), (0.1, 0.95));
        assert_eq!(m.psnr, psnr(&x, &y).unwrap());
    }

    #[test]
    fn composes_the_individual_channels() {
        let p = Providers::reference();
        let x = synth::natural_image(20, 20, 3, 11);
        let y = synth::natural_image(20, 20, 3, 12);
        let m = metric_vector(&x, &y, &p, None).unwrap();
        assert_eq!(m.psnr, psnr(&x, &y).unwrap());
        assert_eq!(m.ssim, ssim(&x, &y, &p.ssim).unwrap());
        assert_eq!(m.lpips, perceptual_distance(&x, &y, p.perceptual.as_ref()).unwrap());
        assert_eq!(m.clip, semantic_similarity(&x, &y, p.semantic.as_ref()).unwrap());
        assert!(m.is_valid());
    }

    #[test]
    fn mismatched_inversion_is_resized() {
        let x = synth::natural_image(20, 20, 3, 3);
        let small = crate::image::resize_bilinear(&x, 16, 16);
        let m = metric_vector(&x, &small, &Providers::reference(), None).unwrap();
        assert!(m.psnr < PSNR_CAP && m.psnr > 10.0);
    }

    #[test]
    fn full_precomputed_vector_skips_images() {
        // Shapes are incompatible on purpose: nothing may be computed.
        let x = ImageBuffer::filled(2, 2, 1, 0.0, 255.0);
        let y = ImageBuffer::filled(3, 3, 3, 0.0, 1.0);
        let full = PartialMetrics::from(MetricVector::new(31.0, 0.8, 0.2, 0.9));
        let m = metric_vector(&x, &y, &Providers::reference(), Some(&full)).unwrap();
        assert_eq!(m, MetricVector::new(31.0, 0.8, 0.2, 0.9));
    }
}
