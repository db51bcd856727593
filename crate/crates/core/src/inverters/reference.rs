use serde::{Deserialize, Serialize};

use crate::image::ImageBuffer;
use crate::linear::{Op1d, Plane};
use crate::synth::gaussian_field;

use super::{Inverter, InverterDescriptor, InverterError};

/// Blend of the input with a blurred, noised copy of itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInverterConfig {
    /// Blur standard deviation in pixels; 0 disables blurring.
    pub blur_sigma: f64,
    /// Noise standard deviation as a fraction of the image maximum.
    pub noise_sigma: f64,
    pub noise_seed: u64,
    /// 1 reproduces the input exactly, 0 returns only the degraded copy.
    pub fidelity: f64,
}

impl Default for ReferenceInverterConfig {
    fn default() -> Self {
        ReferenceInverterConfig { blur_sigma: 1.5, noise_sigma: 0.01, noise_seed: 0, fidelity: 0.6 }
    }
}

impl ReferenceInverterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return Err(format!("blur sigma must be non-negative (got {})", self.blur_sigma));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(format!("noise sigma must be non-negative (got {})", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.fidelity) {
            return Err(format!("fidelity must lie in [0, 1] (got {})", self.fidelity));
        }
        Ok(())
    }
}

/// Differentiable stand-in for a generative inverter:
/// `clamp(f x + (1 - f) (blur(x) + noise))`. The noise field depends only on
/// the seed and the image size, never on pixel values.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceInverter {
    cfg: ReferenceInverterConfig,
}

impl ReferenceInverter {
    pub fn new(cfg: ReferenceInverterConfig) -> Result<Self, String> {
        cfg.validate()?;
        Ok(ReferenceInverter { cfg })
    }

    pub fn config(&self) -> &ReferenceInverterConfig {
        &self.cfg
    }

    fn blur_ops(&self, x: &ImageBuffer) -> Option<(Op1d, Op1d)> {
        (self.cfg.blur_sigma > 0.0).then(|| {
            (Op1d::gaussian_same(x.height(), self.cfg.blur_sigma), Op1d::gaussian_same(x.width(), self.cfg.blur_sigma))
        })
    }

    fn channelwise(x: &ImageBuffer, data: &[f64], f: impl Fn(&Plane) -> Plane) -> Vec<f64> {
        let c = x.channels();
        let mut out = vec![0.0; data.len()];
        for ch in 0..c {
            let plane = Plane::new(x.height(), x.width(), data.iter().skip(ch).step_by(c).copied().collect());
            for (k, v) in f(&plane).data.into_iter().enumerate() {
                out[k * c + ch] = v;
            }
        }
        out
    }

    /// Value before clamping.
    fn unclamped(&self, x: &ImageBuffer) -> Vec<f64> {
        let f = self.cfg.fidelity;
        let blurred = match self.blur_ops(x) {
            Some((oh, ow)) => Self::channelwise(x, x.data(), |p| p.separable(&oh, &ow)),
            None => x.data().to_vec(),
        };
        let scale = self.cfg.noise_sigma * x.max_value();
        let noise = if scale > 0.0 { gaussian_field(x.len(), self.cfg.noise_seed) } else { vec![0.0; x.len()] };
        x.data()
            .iter()
            .zip(&blurred)
            .zip(&noise)
            .map(|((v, b), n)| f * v + (1.0 - f) * (b + scale * n))
            .collect()
    }
}

impl Inverter for ReferenceInverter {
    fn descriptor(&self) -> InverterDescriptor {
        InverterDescriptor {
            name: "reference-degradation".into(),
            version: "1".into(),
            parameters: serde_json::to_value(self.cfg).expect("config serializes"),
            differentiable: true,
            thread_safe: true,
        }
    }

    fn invert(&self, x: &ImageBuffer) -> Result<ImageBuffer, InverterError> {
        if self.cfg.fidelity == 1.0 {
            return Ok(x.clone());
        }
        Ok(x.with_data(self.unclamped(x))?)
    }

    fn vjp(&self, x: &ImageBuffer, upstream: &[f64]) -> Option<Vec<f64>> {
        if upstream.len() != x.len() {
            return None;
        }
        if self.cfg.fidelity == 1.0 {
            return Some(upstream.to_vec());
        }
        let max = x.max_value();
        // zero subgradient wherever the clamp is active
        let masked: Vec<f64> = self
            .unclamped(x)
            .iter()
            .zip(upstream)
            .map(|(&p, &g)| if (0.0..=max).contains(&p) { g } else { 0.0 })
            .collect();
        let f = self.cfg.fidelity;
        let through_blur = match self.blur_ops(x) {
            Some((oh, ow)) => Self::channelwise(x, &masked, |p| p.separable_adjoint(&oh, &ow)),
            None => masked.clone(),
        };
        Some(masked.iter().zip(&through_blur).map(|(g, b)| f * g + (1.0 - f) * b).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::natural_image;
    use proptest::prelude::*;

    fn inverter(blur: f64, noise: f64, fidelity: f64) -> ReferenceInverter {
        ReferenceInverter::new(ReferenceInverterConfig { blur_sigma: blur, noise_sigma: noise, noise_seed: 9, fidelity })
            .unwrap()
    }

    #[test]
    fn identity_cases() {
        let x = natural_image(12, 10, 3, 1);
        assert_eq!(inverter(2.0, 0.1, 1.0).invert(&x).unwrap(), x);
        assert_eq!(inverter(0.0, 0.0, 0.0).invert(&x).unwrap(), x);
    }

    #[test]
    fn deterministic_per_seed() {
        let x = natural_image(12, 10, 3, 1);
        let inv = inverter(1.5, 0.05, 0.3);
        assert_eq!(inv.invert(&x).unwrap(), inv.invert(&x).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            ReferenceInverterConfig { fidelity: 1.5, ..Default::default() },
            ReferenceInverterConfig { blur_sigma: -1.0, ..Default::default() },
            ReferenceInverterConfig { noise_sigma: f64::NAN, ..Default::default() },
        ] {
            assert!(ReferenceInverter::new(cfg).is_err());
        }
    }

    #[test]
    fn vjp_matches_central_differences() {
        let x = natural_image(7, 6, 3, 4);
        let inv = inverter(1.2, 0.02, 0.4);
        let weights: Vec<f64> = (0..x.len()).map(|k| ((k * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let objective = |img: &ImageBuffer| -> f64 {
            inv.invert(img).unwrap().data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let g = inv.vjp(&x, &weights).unwrap();
        let h = 1e-3;
        for k in 0..x.len() {
            let mut plus = x.data().to_vec();
            let mut minus = x.data().to_vec();
            plus[k] += h;
            minus[k] -= h;
            let fd = (objective(&x.with_data(plus).unwrap()) - objective(&x.with_data(minus).unwrap())) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6, "k={k}: fd {fd} vjp {}", g[k]);
        }
    }

    proptest! {
        #[test]
        fn output_is_a_valid_image(
            blur in 0.0f64..3.0, noise in 0.0f64..0.3, fidelity in 0.0f64..=1.0, seed in 0u64..1000,
        ) {
            let x = natural_image(9, 11, 3, seed);
            let cfg = ReferenceInverterConfig { blur_sigma: blur, noise_sigma: noise, noise_seed: seed, fidelity };
            let out = ReferenceInverter::new(cfg).unwrap().invert(&x).unwrap();
            prop_assert!(out.same_shape(&x));
            prop_assert_eq!(out.max_value(), x.max_value());
            prop_assert!(out.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
        }

        #[test]
        fn noiseless_inversion_is_nonexpansive(
            blur in 0.0f64..3.0, fidelity in 0.0f64..=1.0, a in 0u64..500, b in 0u64..500,
        ) {
            let x = natural_image(10, 8, 3, a);
            let y = natural_image(10, 8, 3, b);
            let inv = inverter(blur, 0.0, fidelity);
            let (ix, iy) = (inv.invert(&x).unwrap(), inv.invert(&y).unwrap());
            let linf = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            prop_assert!(linf(ix.data(), iy.data()) <= linf(x.data(), y.data()) + 1e-9);
        }
    }
}
