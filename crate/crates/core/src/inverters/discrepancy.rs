use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::image::ImageBuffer;
use crate::linear::Plane;
use crate::metrics::{harmonize, ReferencePyramidDistance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureExtractor {
    FourierMagnitude,
    Pyramid,
}

/// Magnitude spectrum of the unnormalized 2-D DFT of the luma plane.
pub fn fourier_magnitude(img: &ImageBuffer) -> Plane {
    let (h, w) = (img.height(), img.width());
    let luma = img.luma_plane();
    let mut buf: Vec<Complex<f64>> = luma.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = buf[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            buf[r * w + c] = col[r];
        }
    }
    Plane::new(h, w, buf.iter().map(|z| z.norm()).collect())
}

fn features(img: &ImageBuffer, extractor: FeatureExtractor) -> Vec<f64> {
    match extractor {
        FeatureExtractor::FourierMagnitude => fourier_magnitude(img).data,
        FeatureExtractor::Pyramid => ReferencePyramidDistance::default().feature_stack(img),
    }
}

/// `|features(x) - features(x_inv)|_2`, with `x_inv` brought onto `x`'s grid first.
pub fn feature_discrepancy(x: &ImageBuffer, x_inv: &ImageBuffer, extractor: FeatureExtractor) -> f64 {
    let y = harmonize(x, x_inv);
    let fx = features(x, extractor);
    let fy = features(&y, extractor);
    fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::natural_image;

    /// Direct O(N^2) DFT.
    fn naive_dft_magnitude(p: &Plane) -> Vec<f64> {
        let (h, w) = (p.height, p.width);
        let mut out = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let t = -2.0 * std::f64::consts::PI * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                        re += p.data[r * w + c] * t.cos();
                        im += p.data[r * w + c] * t.sin();
                    }
                }
                out[u * w + v] = (re * re + im * im).sqrt();
            }
        }
        out
    }

    #[test]
    fn spectrum_matches_naive_dft() {
        let img = natural_image(6, 10, 3, 2);
        let fast = fourier_magnitude(&img);
        let slow = naive_dft_magnitude(&img.luma_plane());
        for (a, b) in fast.data.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn constant_shift_only_moves_dc() {
        let x = natural_image(8, 12, 1, 3);
        let c = 7.0;
        let shifted = x.with_data(x.data().iter().map(|v| v + c).collect()).unwrap();
        let (fx, fy) = (fourier_magnitude(&x), fourier_magnitude(&shifted));
        assert!((fy.data[0] - fx.data[0] - c * 96.0).abs() < 1e-8);
        for k in 1..fx.len() {
            assert!((fx.data[k] - fy.data[k]).abs() < 1e-8, "bin {k}");
        }
        let d = feature_discrepancy(&x, &shifted, FeatureExtractor::FourierMagnitude);
        assert!((d - c * 96.0).abs() < 1e-6);
    }

    #[test]
    fn zero_for_identical_and_symmetric() {
        let x = natural_image(16, 16, 3, 5);
        let y = natural_image(16, 16, 3, 6);
        for e in [FeatureExtractor::FourierMagnitude, FeatureExtractor::Pyramid] {
            assert_eq!(feature_discrepancy(&x, &x, e), 0.0);
            let (a, b) = (feature_discrepancy(&x, &y, e), feature_discrepancy(&y, &x, e));
            assert!(a > 0.0 && (a - b).abs() <= 1e-12 * a);
        }
    }
}
