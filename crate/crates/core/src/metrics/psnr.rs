use crate::image::ImageBuffer;

use super::{check_same_shape, MetricError};

/// Value reported when the MSE falls under the floor (identical images).
pub const PSNR_CAP: f64 = 100.0;

/// `MSE_FLOOR = MAX_I^2 * MSE_FLOOR_RATIO`.
pub const MSE_FLOOR_RATIO: f64 = 1e-10;

fn mse(x: &ImageBuffer, y: &ImageBuffer) -> f64 {
    let n = x.len() as f64;
    x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

/// Peak signal-to-noise ratio over every sample of every channel, in dB.
pub fn psnr(x: &ImageBuffer, y: &ImageBuffer) -> Result<f64, MetricError> {
    check_same_shape(x, y)?;
    let max2 = x.max_value() * x.max_value();
    let mse = mse(x, y);
    if mse < max2 * MSE_FLOOR_RATIO {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (max2 / mse).log10()).min(PSNR_CAP))
}

/// d PSNR / d y. Zero on the capped branch.
pub fn psnr_gradient(x: &ImageBuffer, y: &ImageBuffer) -> Result<Vec<f64>, MetricError> {
    check_same_shape(x, y)?;
    let max2 = x.max_value() * x.max_value();
    let mse = mse(x, y);
    if mse < max2 * MSE_FLOOR_RATIO || 10.0 * (max2 / mse).log10() >= PSNR_CAP {
        return Ok(vec![0.0; x.len()]);
    }
    let n = x.len() as f64;
    let scale = -10.0 / (std::f64::consts::LN_10 * mse) * 2.0 / n;
    Ok(x.data().iter().zip(y.data()).map(|(a, b)| scale * (b - a)).collect())
}
