use std::collections::HashMap;

use crate::image::{luma_adjoint, ImageBuffer};
use crate::linear::{Op1d, Plane};

use super::{check_same_shape, MetricError, PerceptualProvider};

const BINOMIAL_5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Learning-free stand-in for LPIPS.
///
/// Luminance (scaled to `[0, 1]`) is decomposed into a low-pass pyramid by
/// repeated 2x2 averaging. At each level the image is locally contrast
/// normalized, `n = (L - mu) / sqrt(var + c)` with a 5-tap binomial window, and
/// the level contributes
/// `w_l * mean((n_x - n_y)^2 + lambda * (L_x - L_y)^2)`.
/// The raw luminance term keeps the distance sensitive to global brightness
/// shifts, which contrast normalization alone would cancel.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePyramidDistance {
    pub level_weights: Vec<f64>,
    pub contrast_floor: f64,
    pub luminance_weight: f64,
}

impl Default for ReferencePyramidDistance {
    fn default() -> Self {
        ReferencePyramidDistance {
            level_weights: vec![0.5, 0.3, 0.2],
            contrast_floor: 0.01,
            luminance_weight: 1.0,
        }
    }
}

struct Level {
    lum: Plane,
    mu: Plane,
    scale: Plane,
    norm: Plane,
    window: (Op1d, Op1d),
    // operator taking the previous (finer) level to this one
    pool: Option<(Op1d, Op1d)>,
}

impl ReferencePyramidDistance {
    fn pyramid(&self, img: &ImageBuffer) -> Vec<Level> {
        let mut lum = img.luma_plane().map(|v| v / img.max_value());
        let mut levels = Vec::with_capacity(self.level_weights.len());
        for l in 0..self.level_weights.len() {
            let pool = if l == 0 {
                None
            } else {
                let ops = (Op1d::pool2(lum.height), Op1d::pool2(lum.width));
                lum = lum.separable(&ops.0, &ops.1);
                Some(ops)
            };
            let window = (
                Op1d::kernel_same(lum.height, &BINOMIAL_5),
                Op1d::kernel_same(lum.width, &BINOMIAL_5),
            );
            let mu = lum.separable(&window.0, &window.1);
            let sq = lum.map(|v| v * v).separable(&window.0, &window.1);
            let c = self.contrast_floor;
            let scale = sq.zip_map(&mu, |q, m| (q - m * m + c).sqrt());
            let centered = lum.zip_map(&mu, |v, m| v - m);
            let norm = centered.zip_map(&scale, |d, s| d / s);
            levels.push(Level { lum: lum.clone(), mu, scale, norm, window, pool });
        }
        levels
    }

    /// Flattened features whose squared Euclidean distance equals [`Self::distance`].
    pub fn feature_stack(&self, img: &ImageBuffer) -> Vec<f64> {
        let mut out = Vec::new();
        for (level, &w) in self.pyramid(img).iter().zip(&self.level_weights) {
            let k = (w / level.lum.len() as f64).sqrt();
            let kl = k * self.luminance_weight.sqrt();
            out.extend(level.norm.data.iter().map(|v| k * v));
            out.extend(level.lum.data.iter().map(|v| kl * v));
        }
        out
    }

    fn raw_distance(&self, x: &[Level], y: &[Level]) -> f64 {
        x.iter()
            .zip(y)
            .zip(&self.level_weights)
            .map(|((lx, ly), &w)| {
                let n = lx.lum.len() as f64;
                let dn: f64 = lx.norm.data.iter().zip(&ly.norm.data).map(|(a, b)| (a - b) * (a - b)).sum();
                let dl: f64 = lx.lum.data.iter().zip(&ly.lum.data).map(|(a, b)| (a - b) * (a - b)).sum();
                w * (dn + self.luminance_weight * dl) / n
            })
            .sum()
    }

    fn gradient_wrt_y(&self, x: &ImageBuffer, y: &ImageBuffer) -> Vec<f64> {
        let px = self.pyramid(x);
        let py = self.pyramid(y);
        let mut carry: Option<Plane> = None;
        for l in (0..py.len()).rev() {
            let (lx, ly) = (&px[l], &py[l]);
            let w = self.level_weights[l];
            let n = ly.lum.len() as f64;
            let g_norm = ly.norm.zip_map(&lx.norm, |b, a| 2.0 * w * (b - a) / n);
            // contrast normalization backward:
            // dL_j = G_j/s_j - F^T(G/s)_j - L_j F^T(G n/s^2)_j + F^T(G n mu/s^2)_j
            let (fh, fw) = (&ly.window.0, &ly.window.1);
            let g_over_s = g_norm.zip_map(&ly.scale, |g, s| g / s);
            let gns2 = Plane::new(
                ly.lum.height,
                ly.lum.width,
                (0..ly.lum.len())
                    .map(|k| g_norm.data[k] * ly.norm.data[k] / (ly.scale.data[k] * ly.scale.data[k]))
                    .collect(),
            );
            let gns2_mu = gns2.zip_map(&ly.mu, |a, m| a * m);
            let t1 = g_over_s.separable_adjoint(fh, fw);
            let t2 = gns2.separable_adjoint(fh, fw);
            let t3 = gns2_mu.separable_adjoint(fh, fw);
            let mut grad: Vec<f64> = (0..ly.lum.len())
                .map(|k| {
                    g_over_s.data[k] - t1.data[k] - ly.lum.data[k] * t2.data[k]
                        + t3.data[k]
                        + 2.0 * w * self.luminance_weight * (ly.lum.data[k] - lx.lum.data[k]) / n
                })
                .collect();
            if let Some(c) = carry.take() {
                grad.iter_mut().zip(&c.data).for_each(|(g, c)| *g += c);
            }
            let grad = Plane::new(ly.lum.height, ly.lum.width, grad);
            carry = Some(match &ly.pool {
                Some((ph, pw)) => grad.separable_adjoint(ph, pw),
                None => grad,
            });
        }
        let g0 = carry.expect("at least one level").map(|g| g / y.max_value());
        luma_adjoint(&g0, y.channels())
    }
}

impl PerceptualProvider for ReferencePyramidDistance {
    fn name(&self) -> &str {
        "reference-pyramid-v1"
    }

    fn distance(&self, x: &ImageBuffer, y: &ImageBuffer) -> Result<f64, MetricError> {
        check_same_shape(x, y)?;
        Ok(self.raw_distance(&self.pyramid(x), &self.pyramid(y)))
    }

    fn distance_gradient(&self, x: &ImageBuffer, y: &ImageBuffer) -> Option<Vec<f64>> {
        check_same_shape(x, y).ok()?;
        Some(self.gradient_wrt_y(x, y))
    }
}

/// Distances supplied ahead of time, keyed by the fingerprints of the pair.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedDistances {
    values: HashMap<(String, String), f64>,
}

impl PrecomputedDistances {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, x: &ImageBuffer, y: &ImageBuffer, distance: f64) {
        let (fx, fy) = (x.fingerprint(), y.fingerprint());
        self.values.insert((fy.clone(), fx.clone()), distance);
        self.values.insert((fx, fy), distance);
    }
}

impl PerceptualProvider for PrecomputedDistances {
    fn name(&self) -> &str {
        "precomputed-lookup"
    }

    fn distance(&self, x: &ImageBuffer, y: &ImageBuffer) -> Result<f64, MetricError> {
        self.values.get(&(x.fingerprint(), y.fingerprint())).copied().ok_or_else(|| {
            MetricError::ProviderUnavailable {
                provider: self.name().to_string(),
                reason: "no precomputed distance for this pair".into(),
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::perceptual_distance;
    use crate::synth;

    fn shifted(img: &ImageBuffer, by: f64) -> ImageBuffer {
        img.with_data(img.data().iter().map(|v| v + by).collect()).unwrap()
    }

    #[test]
    fn zero_on_identical_and_symmetric() {
        let p = ReferencePyramidDistance::default();
        let x = synth::natural_image(32, 32, 3, 4);
        let y = synth::natural_image(32, 32, 3, 5);
        assert_eq!(p.distance(&x, &x).unwrap(), 0.0);
        let (a, b) = (p.distance(&x, &y).unwrap(), p.distance(&y, &x).unwrap());
        assert!(a > 0.0 && (a - b).abs() < 1e-12);
    }

    #[test]
    fn larger_brightness_shifts_cost_more() {
        let p = ReferencePyramidDistance::default();
        // stay clear of the clamp so the shift is uniform
        let x = synth::natural_image(32, 32, 3, 8).with_data(
            synth::natural_image(32, 32, 3, 8).data().iter().map(|v| 0.2 * 255.0 + 0.6 * v).collect(),
        ).unwrap();
        let small = p.distance(&x, &shifted(&x, 10.0)).unwrap();
        let large = p.distance(&x, &shifted(&x, 50.0)).unwrap();
        assert!(small > 0.0 && small < large, "{small} {large}");
    }

    #[test]
    fn feature_stack_matches_distance() {
        let p = ReferencePyramidDistance::default();
        let x = synth::natural_image(20, 28, 1, 2);
        let y = synth::natural_image(20, 28, 1, 3);
        let fx = p.feature_stack(&x);
        let fy = p.feature_stack(&y);
        let d2: f64 = fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((d2 - p.distance(&x, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = ReferencePyramidDistance::default();
        let x = synth::natural_image(9, 10, 3, 30);
        let y = synth::natural_image(9, 10, 3, 31);
        let g = p.distance_gradient(&x, &y).unwrap();
        let h = 1e-3;
        for k in 0..y.len() {
            let mut up = y.data().to_vec();
            let mut dn = y.data().to_vec();
            up[k] += h;
            dn[k] -= h;
            let up = ImageBuffer::new(9, 10, 3, up, 255.0).unwrap();
            let dn = ImageBuffer::new(9, 10, 3, dn, 255.0).unwrap();
            let fd = (p.distance(&x, &up).unwrap() - p.distance(&x, &dn).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1e-4), "k={k} fd={fd} an={}", g[k]);
        }
    }

    #[test]
    fn lookup_passes_values_through() {
        let x = synth::natural_image(4, 4, 1, 1);
        let y = synth::natural_image(4, 4, 1, 2);
        let mut lookup = PrecomputedDistances::new();
        lookup.insert(&x, &y, 0.1);
        assert_eq!(perceptual_distance(&x, &y, &lookup).unwrap(), 0.1);
        assert_eq!(perceptual_distance(&y, &x, &lookup).unwrap(), 0.1);
        assert_eq!(perceptual_distance(&x, &x, &lookup).unwrap(), 0.0);
        let z = synth::natural_image(4, 4, 1, 3);
        assert!(matches!(
            perceptual_distance(&x, &z, &lookup),
            Err(MetricError::ProviderUnavailable { .. })
        ));
    }
}
