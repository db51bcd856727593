//! Authenticity scoring by inversion.
//!
//! An image is passed through an inverter (a model that resynthesizes it),
//! and the pair is compared on four channels: PSNR, SSIM, a learned-style
//! perceptual distance and an embedding cosine. A weighted sum of the
//! channels goes through a sigmoid to give an index in `(0, 1)`; images whose
//! index clears a calibrated threshold are certified authentic, the rest are
//! plausibly deniable.
//!
//! The crate covers metrics, weight fitting, threshold calibration, adversarial
//! stress tests, frame sampling for videos and batch pipelines. Model-backed
//! inverters and providers plug in through the [`inverters::Inverter`],
//! [`metrics::PerceptualProvider`] and [`metrics::SemanticProvider`] traits or
//! through precomputed values in a manifest.

pub mod adversary;
pub mod calibrate;
pub mod image;
pub mod index;
pub mod inverters;
pub mod linear;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod video;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/attacks.md")]
    mod attacks {}
    #[doc = include_str!("../../../book/src/video.md")]
    mod video {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
