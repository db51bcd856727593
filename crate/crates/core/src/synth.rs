//! Seeded procedural images with natural-image-like statistics.
//!
//! Used for desk-scale corpora, the attacker simulation's default candidate
//! generator and the test suites. Every image is a pure function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::ImageBuffer;
use crate::linear::{Op1d, Plane};

const OCTAVES: u32 = 5;

fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, octaves: u32, falloff: f64) -> Plane {
    let mut acc = Plane::zeros(h, w);
    let mut amp = 1.0;
    for o in 0..octaves {
        let cells = (1usize << o) + 1;
        let gh = cells.min(h.max(2));
        let gw = cells.min(w.max(2));
        let grid = Plane::new(gh, gw, (0..gh * gw).map(|_| rng.random_range(-1.0..1.0)).collect());
        let up = grid.separable(&Op1d::bilinear(gh, h), &Op1d::bilinear(gw, w));
        for (a, u) in acc.data.iter_mut().zip(&up.data) {
            *a += amp * u;
        }
        amp *= falloff;
    }
    acc
}

/// A smooth, multi-scale random image with 8-bit range (`MAX_I = 255`).
/// Samples span roughly `[0.1, 0.9] * 255`.
pub fn natural_image(h: usize, w: usize, channels: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a6e_0000_0000);
    let base = value_noise(&mut rng, h, w, OCTAVES, 0.55);
    let tints: Vec<Plane> = (0..channels).map(|_| value_noise(&mut rng, h, w, 3, 0.5)).collect();
    let mut data = Vec::with_capacity(h * w * channels);
    for k in 0..h * w {
        for t in &tints {
            data.push(base.data[k] + 0.35 * t.data[k]);
        }
    }
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let data = data.into_iter().map(|v| 255.0 * (0.1 + 0.8 * (v - lo) / span)).collect();
    ImageBuffer::new(h, w, channels, data, 255.0).expect("synthetic image in range")
}

/// Seeded zero-mean Gaussian noise field of `n` samples with unit variance.
pub fn gaussian_field(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// `img + sigma * MAX_I * N(0, 1)`, clamped.
pub fn add_noise(img: &ImageBuffer, sigma: f64, seed: u64) -> ImageBuffer {
    let field = gaussian_field(img.len(), seed);
    let scale = sigma * img.max_value();
    img.with_data(img.data().iter().zip(&field).map(|(v, n)| v + scale * n).collect())
        .expect("clamped")
}

/// Procedural stand-in for a prompt-conditioned generator: candidate `i` of a
/// prompt is `natural_image` seeded from the prompt tag and `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSource {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub prompt_tag: String,
}

impl SyntheticSource {
    pub fn new(height: usize, width: usize, channels: usize, prompt_tag: impl Into<String>) -> Self {
        SyntheticSource { height, width, channels, prompt_tag: prompt_tag.into() }
    }

    fn prompt_seed(&self) -> u64 {
        // FNV-1a; stable across platforms and releases
        self.prompt_tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
    }

    pub fn candidate(&self, index: u64) -> ImageBuffer {
        natural_image(self.height, self.width, self.channels, self.prompt_seed().wrapping_add(index))
    }
}
