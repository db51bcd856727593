use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::image::ImageBuffer;
use crate::index::{a_index, a_index_derivative, composite_score, WeightVector};
use crate::inverters::{invert_checked, Inverter};
use crate::metrics::{metric_vector, psnr_gradient, ssim_gradient, Providers};

use super::{AdversaryError, GradientMode};

/// `A(x_ref, inv(z))`.
pub fn objective(
    x_ref: &ImageBuffer,
    z: &ImageBuffer,
    inverter: &dyn Inverter,
    w: &WeightVector,
    providers: &Providers,
) -> Result<f64, AdversaryError> {
    let y = invert_checked(inverter, z)?;
    let m = metric_vector(x_ref, &y, providers, None)?;
    Ok(a_index(composite_score(&m, w), w))
}

fn analytic(
    z: &ImageBuffer,
    x_ref: &ImageBuffer,
    inverter: &dyn Inverter,
    w: &WeightVector,
    providers: &Providers,
) -> Result<Vec<f64>, AdversaryError> {
    let desc = inverter.descriptor();
    if !desc.differentiable {
        return Err(AdversaryError::NonDifferentiableInverter(desc.name));
    }
    let y = invert_checked(inverter, z)?;
    let m = metric_vector(x_ref, &y, providers, None)?;
    let d_ds = a_index_derivative(composite_score(&m, w), w);
    let mut g_y = vec![0.0; y.len()];
    if d_ds == 0.0 {
        return Ok(g_y);
    }
    let mut add = |scale: f64, g: &[f64]| g_y.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
    if w.alpha1 != 0.0 {
        add(d_ds * w.alpha1, &psnr_gradient(x_ref, &y)?);
    }
    if w.alpha2 != 0.0 {
        add(d_ds * w.alpha2, &ssim_gradient(x_ref, &y, &providers.ssim)?);
    }
    if w.alpha3 != 0.0 {
        let p = &providers.perceptual;
        let g = p.distance_gradient(x_ref, &y).ok_or_else(|| AdversaryError::NonDifferentiableProvider(p.name().into()))?;
        // the score uses 1 - distance
        add(-d_ds * w.alpha3, &g);
    }
    if w.alpha4 != 0.0 {
        let p = &providers.semantic;
        let ex = p.embed(x_ref)?;
        let g = p.embedding_vjp(&y, &ex).ok_or_else(|| AdversaryError::NonDifferentiableProvider(p.name().into()))?;
        add(d_ds * w.alpha4, &g);
    }
    inverter.vjp(z, &g_y).ok_or(AdversaryError::NonDifferentiableInverter(desc.name))
}

fn finite_difference(
    z: &ImageBuffer,
    x_ref: &ImageBuffer,
    inverter: &dyn Inverter,
    w: &WeightVector,
    providers: &Providers,
    fd_samples: usize,
    seed: u64,
) -> Result<Vec<f64>, AdversaryError> {
    let n = z.len();
    let coords: Vec<usize> = if fd_samples >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, n, fd_samples).into_vec();
        picked.sort_unstable();
        picked
    };
    let max = z.max_value();
    let h = max / 1024.0;
    let probe = |k: usize| -> Result<f64, AdversaryError> {
        let base = z.data()[k];
        let (hi, lo) = ((base + h).min(max), (base - h).max(0.0));
        let at = |v: f64| -> Result<f64, AdversaryError> {
            let mut data = z.data().to_vec();
            data[k] = v;
            objective(x_ref, &z.with_data(data)?, inverter, w, providers)
        };
        Ok((at(hi)? - at(lo)?) / (hi - lo))
    };
    let values: Vec<f64> = if inverter.descriptor().thread_safe {
        coords.par_iter().map(|&k| probe(k)).collect::<Result<_, _>>()?
    } else {
        coords.iter().map(|&k| probe(k)).collect::<Result<_, _>>()?
    };
    let mut g = vec![0.0; n];
    for (k, v) in coords.into_iter().zip(values) {
        g[k] = v;
    }
    Ok(g)
}

/// Gradient of `A(x_ref, inv(z))` with respect to `z`.
///
/// Finite-difference mode probes `fd_samples` seeded coordinates (all of them
/// when `fd_samples >= len`) with step `MAX/1024`, shrunk at the range edges,
/// and leaves the rest at zero.
#[allow(clippy::too_many_arguments)]
pub fn gradient(
    z: &ImageBuffer,
    x_ref: &ImageBuffer,
    inverter: &dyn Inverter,
    w: &WeightVector,
    providers: &Providers,
    mode: GradientMode,
    fd_samples: usize,
    seed: u64,
) -> Result<Vec<f64>, AdversaryError> {
    match mode {
        GradientMode::Analytic => analytic(z, x_ref, inverter, w, providers),
        GradientMode::FiniteDifference => finite_difference(z, x_ref, inverter, w, providers, fd_samples, seed),
    }
}
