use std::collections::HashMap;
use std::f64::consts::PI;

use crate::image::{luma_adjoint, ImageBuffer};
use crate::linear::{Op1d, Plane};

use super::{MetricError, SemanticProvider};

const GRID: usize = 8;
const BINS: usize = 8;

/// Deterministic stand-in for a CLIP image encoder.
///
/// The embedding concatenates an 8x8 cell-mean thumbnail of the luminance,
/// the per-channel mean color and an 8-bin soft histogram of gradient
/// orientations, then normalizes to unit length. Orientation votes use a
/// von Mises-style kernel so the embedding is smooth in the pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEmbedding {
    pub thumbnail_weight: f64,
    pub color_weight: f64,
    pub orientation_weight: f64,
    /// Concentration of the orientation vote kernel.
    pub kappa: f64,
    /// Softening added to gradient magnitudes (luminance in `[0, 1]`).
    pub magnitude_eps: f64,
}

impl Default for ReferenceEmbedding {
    fn default() -> Self {
        ReferenceEmbedding {
            thumbnail_weight: 1.0 / 8.0,
            color_weight: 1.0 / 3f64.sqrt(),
            orientation_weight: 4.0,
            kappa: 2.0,
            magnitude_eps: 0.05,
        }
    }
}

pub(crate) const EMBEDDING_DIM: usize = GRID * GRID + 3 + BINS;

struct Forward {
    raw: Vec<f64>,
    norm: f64,
    gx: Plane,
    gy: Plane,
    thumb_ops: (Op1d, Op1d),
}

fn bin_direction(b: usize) -> (f64, f64) {
    let theta = 2.0 * PI * b as f64 / BINS as f64;
    (theta.cos(), theta.sin())
}

impl ReferenceEmbedding {
    fn forward(&self, img: &ImageBuffer) -> Forward {
        let (h, w) = (img.height(), img.width());
        let lum = img.luma_plane().map(|v| v / img.max_value());
        let thumb_ops = (Op1d::cell_mean(h, GRID), Op1d::cell_mean(w, GRID));
        let thumb = lum.separable(&thumb_ops.0, &thumb_ops.1);

        let mut raw = Vec::with_capacity(EMBEDDING_DIM);
        raw.extend(thumb.data.iter().map(|v| self.thumbnail_weight * v));

        let n_px = (h * w) as f64;
        for c in 0..3 {
            let ch = c.min(img.channels() - 1);
            let mean = img.data().iter().skip(ch).step_by(img.channels()).sum::<f64>() / n_px;
            raw.push(self.color_weight * mean / img.max_value());
        }

        let gx = lum.separable(&Op1d::identity(h), &Op1d::central_diff(w));
        let gy = lum.separable(&Op1d::central_diff(h), &Op1d::identity(w));
        let eps2 = self.magnitude_eps * self.magnitude_eps;
        let mut hist = [0.0; BINS];
        for k in 0..gx.len() {
            let (a, b) = (gx.data[k], gy.data[k]);
            let m = (a * a + b * b + eps2).sqrt();
            for (bin, slot) in hist.iter_mut().enumerate() {
                let (cb, sb) = bin_direction(bin);
                let u = a * cb + b * sb;
                *slot += m * (self.kappa * (u / m - 1.0)).exp();
            }
        }
        raw.extend(hist.iter().map(|v| self.orientation_weight * v / n_px));

        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        Forward { raw, norm, gx, gy, thumb_ops }
    }

    fn vjp(&self, img: &ImageBuffer, upstream: &[f64]) -> Vec<f64> {
        let f = self.forward(img);
        let (h, w) = (img.height(), img.width());
        let n_px = (h * w) as f64;
        let unit: Vec<f64> = f.raw.iter().map(|v| v / f.norm).collect();
        let dot: f64 = unit.iter().zip(upstream).map(|(e, u)| e * u).sum();
        let g_raw: Vec<f64> = upstream.iter().zip(&unit).map(|(u, e)| (u - e * dot) / f.norm).collect();

        // thumbnail
        let g_thumb = Plane::new(GRID, GRID, g_raw[..GRID * GRID].iter().map(|g| g * self.thumbnail_weight).collect());
        let mut g_lum = g_thumb.separable_adjoint(&f.thumb_ops.0, &f.thumb_ops.1);

        // orientation histogram
        let g_hist = &g_raw[GRID * GRID + 3..];
        let eps2 = self.magnitude_eps * self.magnitude_eps;
        let mut g_gx = Plane::zeros(h, w);
        let mut g_gy = Plane::zeros(h, w);
        for k in 0..f.gx.len() {
            let (a, b) = (f.gx.data[k], f.gy.data[k]);
            let m2 = a * a + b * b + eps2;
            let m = m2.sqrt();
            let (mut da, mut db) = (0.0, 0.0);
            for (bin, &gh) in g_hist.iter().enumerate() {
                let (cb, sb) = bin_direction(bin);
                let u = a * cb + b * sb;
                let e = (self.kappa * (u / m - 1.0)).exp();
                let scale = gh * self.orientation_weight / n_px * e;
                da += scale * (a / m + self.kappa * (cb - u * a / m2));
                db += scale * (b / m + self.kappa * (sb - u * b / m2));
            }
            g_gx.data[k] = da;
            g_gy.data[k] = db;
        }
        let from_gx = g_gx.separable_adjoint(&Op1d::identity(h), &Op1d::central_diff(w));
        let from_gy = g_gy.separable_adjoint(&Op1d::central_diff(h), &Op1d::identity(w));
        for k in 0..g_lum.len() {
            g_lum.data[k] += from_gx.data[k] + from_gy.data[k];
        }
        let g_lum = g_lum.map(|g| g / img.max_value());
        let mut grad = luma_adjoint(&g_lum, img.channels());

        // mean color
        let c = img.channels();
        for (ch, &g) in g_raw[GRID * GRID..GRID * GRID + 3].iter().enumerate() {
            let target = ch.min(c - 1);
            let per_sample = g * self.color_weight / (n_px * img.max_value());
            grad.iter_mut().skip(target).step_by(c).for_each(|v| *v += per_sample);
        }
        grad
    }
}

impl SemanticProvider for ReferenceEmbedding {
    fn name(&self) -> &str {
        "reference-embedding-v1"
    }

    fn embed(&self, img: &ImageBuffer) -> Result<Vec<f64>, MetricError> {
        let f = self.forward(img);
        Ok(f.raw.iter().map(|v| v / f.norm).collect())
    }

    fn embedding_vjp(&self, img: &ImageBuffer, upstream: &[f64]) -> Option<Vec<f64>> {
        (upstream.len() == EMBEDDING_DIM).then(|| self.vjp(img, upstream))
    }
}

/// Embeddings supplied ahead of time, keyed by image fingerprint.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbeddings {
    values: HashMap<String, Vec<f64>>,
}

impl PrecomputedEmbeddings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `embedding` normalized to unit length.
    pub fn insert(&mut self, img: &ImageBuffer, embedding: &[f64]) {
        let norm = embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.values.insert(img.fingerprint(), embedding.iter().map(|v| v / norm).collect());
    }
}

impl SemanticProvider for PrecomputedEmbeddings {
    fn name(&self) -> &str {
        "precomputed-lookup"
    }

    fn embed(&self, img: &ImageBuffer) -> Result<Vec<f64>, MetricError> {
        self.values.get(&img.fingerprint()).cloned().ok_or_else(|| MetricError::ProviderUnavailable {
            provider: self.name().to_string(),
            reason: "no precomputed embedding for this image".into(),
        })
    }
}
