use serde::{Deserialize, Serialize};

use super::CalibrationError;

/// Minimum samples per class for a density estimate.
pub const MIN_KDE_SAMPLES: usize = 10;

/// Shared-grid Gaussian KDE settings used by [`overlap_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeSettings {
    pub grid_points: usize,
    /// Grid padding on each side, in pooled bandwidths.
    pub pad_bandwidths: f64,
    /// Bandwidths never drop below `joint_range * bandwidth_floor` so every
    /// kernel spans several grid cells.
    pub bandwidth_floor: f64,
    /// Kernels are truncated at this many bandwidths.
    pub truncate_bandwidths: f64,
}

impl Default for KdeSettings {
    fn default() -> Self {
        KdeSettings { grid_points: 512, pad_bandwidths: 3.0, bandwidth_floor: 1.0 / 256.0, truncate_bandwidths: 8.0 }
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule: `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back to
/// whichever spread measure is non-zero.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => 0.0,
    };
    0.9 * spread * n.powf(-0.2)
}

fn density_on_grid(samples: &[f64], h: f64, grid_lo: f64, step: f64, settings: &KdeSettings) -> Vec<f64> {
    let g = settings.grid_points;
    let mut dens = vec![0.0; g];
    let reach = settings.truncate_bandwidths * h;
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    for &s in samples {
        let first = (((s - reach - grid_lo) / step).ceil().max(0.0)) as usize;
        let last = (((s + reach - grid_lo) / step).floor().min((g - 1) as f64)).max(0.0) as usize;
        for (i, d) in dens.iter_mut().enumerate().take(last + 1).skip(first) {
            let z = (grid_lo + i as f64 * step - s) / h;
            *d += norm * (-0.5 * z * z).exp();
        }
    }
    dens
}

fn trapezoid(values: &[f64], step: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    step * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

/// Detailed result of one overlap evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapDetail {
    pub overlap: f64,
    pub bandwidth_a: f64,
    pub bandwidth_b: f64,
    pub pooled_bandwidth: f64,
}

/// `integral min(p_a, p_b)` with both densities estimated on one grid.
///
/// Each density is renormalized to unit mass on the grid before taking the
/// pointwise minimum, so identical inputs give exactly one.
pub fn overlap_estimate(a: &[f64], b: &[f64]) -> Result<f64, CalibrationError> {
    overlap_with(a, b, &KdeSettings::default()).map(|d| d.overlap)
}

pub fn overlap_with(a: &[f64], b: &[f64], settings: &KdeSettings) -> Result<OverlapDetail, CalibrationError> {
    for (name, xs) in [("first score list", a), ("second score list", b)] {
        if xs.len() < MIN_KDE_SAMPLES {
            return Err(CalibrationError::InsufficientSamples { what: name, needed: MIN_KDE_SAMPLES, got: xs.len() });
        }
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(CalibrationError::NonFiniteScore);
        }
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range <= 0.0 {
        // both lists are the same point mass
        return Ok(OverlapDetail { overlap: 1.0, bandwidth_a: 0.0, bandwidth_b: 0.0, pooled_bandwidth: 0.0 });
    }
    let floor = range * settings.bandwidth_floor;
    let ha = silverman_bandwidth(a).max(floor);
    let hb = silverman_bandwidth(b).max(floor);
    let pooled = ((ha * ha + hb * hb) / 2.0).sqrt();
    let grid_lo = lo - settings.pad_bandwidths * pooled;
    let grid_hi = hi + settings.pad_bandwidths * pooled;
    let step = (grid_hi - grid_lo) / (settings.grid_points - 1) as f64;
    let mut pa = density_on_grid(a, ha, grid_lo, step, settings);
    let mut pb = density_on_grid(b, hb, grid_lo, step, settings);
    for p in [&mut pa, &mut pb] {
        let mass = trapezoid(p, step);
        p.iter_mut().for_each(|v| *v /= mass);
    }
    let mins: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x.min(*y)).collect();
    Ok(OverlapDetail {
        overlap: trapezoid(&mins, step).clamp(0.0, 1.0),
        bandwidth_a: ha,
        bandwidth_b: hb,
        pooled_bandwidth: pooled,
    })
}
