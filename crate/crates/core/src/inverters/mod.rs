//! The inversion seam: anything that maps an image to its resynthesis.

mod discrepancy;
mod manifest;
mod reference;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ImageBuffer, ImageError};

pub use discrepancy::{feature_discrepancy, fourier_magnitude, FeatureExtractor};
pub use manifest::{
    load_manifest, parse_manifest, write_manifest, Manifest, ManifestError, PairRecord, MANIFEST_SCHEMA_VERSION,
};
pub(crate) use manifest::{jsonl_lines, optional_str, parse_label, required_str};
pub use reference::{ReferenceInverter, ReferenceInverterConfig};

#[derive(Debug, Error)]
pub enum InverterError {
    #[error("inverter {name} failed: {reason}")]
    Failed { name: String, reason: String },
    #[error("inverter {name} changed the image shape")]
    ShapeChanged { name: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// What an inverter is and what it can do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverterDescriptor {
    pub name: String,
    pub version: String,
    pub parameters: serde_json::Value,
    pub differentiable: bool,
    /// False means calls must be serialized by the caller.
    pub thread_safe: bool,
}

pub trait Inverter: Send + Sync {
    fn descriptor(&self) -> InverterDescriptor;

    /// The resynthesis of `x`; same dimensions and range as `x`.
    fn invert(&self, x: &ImageBuffer) -> Result<ImageBuffer, InverterError>;

    /// Pulls a cotangent on the output back to the input. `None` when the
    /// inverter is not differentiable.
    fn vjp(&self, _x: &ImageBuffer, _upstream: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Hides the derivative of a wrapped inverter, so only black-box access remains.
#[derive(Clone)]
pub struct OpaqueInverter(pub Arc<dyn Inverter>);

impl Inverter for OpaqueInverter {
    fn descriptor(&self) -> InverterDescriptor {
        let inner = self.0.descriptor();
        InverterDescriptor { name: format!("opaque({})", inner.name), differentiable: false, ..inner }
    }

    fn invert(&self, x: &ImageBuffer) -> Result<ImageBuffer, InverterError> {
        self.0.invert(x)
    }
}

/// Inverts `x` and checks that shape and range are preserved.
pub fn invert_checked(inverter: &dyn Inverter, x: &ImageBuffer) -> Result<ImageBuffer, InverterError> {
    let out = inverter.invert(x)?;
    if !out.same_shape(x) || out.max_value() != x.max_value() {
        return Err(InverterError::ShapeChanged { name: inverter.descriptor().name });
    }
    Ok(out)
}
