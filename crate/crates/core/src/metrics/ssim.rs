use serde::{Deserialize, Serialize};

use crate::image::{luma_adjoint, ImageBuffer};
use crate::linear::{gaussian_kernel, Op1d, Plane};

use super::{check_same_shape, MetricError};

/// Gaussian-window SSIM parameters. `C1 = (k1 MAX)^2`, `C2 = (k2 MAX)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { window: 11, gaussian_sigma: 1.5, k1: 0.01, k2: 0.03 }
    }
}

impl SsimConfig {
    pub fn with_window(window: usize) -> Self {
        SsimConfig { window, ..SsimConfig::default() }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(MetricError::InvalidConfig(format!(
                "window must be odd and >= 3 (got {})",
                self.window
            )));
        }
        if !(self.gaussian_sigma > 0.0 && self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(MetricError::InvalidConfig("sigma, k1 and k2 must be positive".into()));
        }
        Ok(())
    }

    fn constants(&self, max_value: f64) -> (f64, f64) {
        ((self.k1 * max_value).powi(2), (self.k2 * max_value).powi(2))
    }
}

struct Window {
    op_h: Op1d,
    op_w: Op1d,
}

impl Window {
    fn new(cfg: &SsimConfig, height: usize, width: usize) -> Result<Self, MetricError> {
        cfg.validate()?;
        if height.min(width) < cfg.window {
            return Err(MetricError::ImageTooSmall { height, width, window: cfg.window });
        }
        let kernel = gaussian_kernel(cfg.window, cfg.gaussian_sigma);
        Ok(Window {
            op_h: Op1d::kernel_valid(height, &kernel),
            op_w: Op1d::kernel_valid(width, &kernel),
        })
    }

    fn filter(&self, p: &Plane) -> Plane {
        p.separable(&self.op_h, &self.op_w)
    }

    fn scatter(&self, p: &Plane) -> Plane {
        p.separable_adjoint(&self.op_h, &self.op_w)
    }
}

/// Local statistics at every valid window position.
struct Moments {
    mu_x: Plane,
    mu_y: Plane,
    var_x: Plane,
    var_y: Plane,
    cov: Plane,
}

fn moments(win: &Window, x: &Plane, y: &Plane) -> Moments {
    let mu_x = win.filter(x);
    let mu_y = win.filter(y);
    let xx = win.filter(&x.zip_map(x, |a, b| a * b));
    let yy = win.filter(&y.zip_map(y, |a, b| a * b));
    let xy = win.filter(&x.zip_map(y, |a, b| a * b));
    Moments {
        var_x: xx.zip_map(&mu_x, |e, m| e - m * m),
        var_y: yy.zip_map(&mu_y, |e, m| e - m * m),
        cov: xy.zip_map(&mu_x.zip_map(&mu_y, |a, b| a * b), |e, m| e - m),
        mu_x,
        mu_y,
    }
}

pub(crate) fn ssim_planes(x: &Plane, y: &Plane, max_value: f64, cfg: &SsimConfig) -> Result<f64, MetricError> {
    let win = Window::new(cfg, x.height, x.width)?;
    let (c1, c2) = cfg.constants(max_value);
    let m = moments(&win, x, y);
    let n = m.mu_x.len() as f64;
    let total: f64 = (0..m.mu_x.len())
        .map(|i| {
            let (mx, my) = (m.mu_x.data[i], m.mu_y.data[i]);
            (2.0 * mx * my + c1) * (2.0 * m.cov.data[i] + c2)
                / ((mx * mx + my * my + c1) * (m.var_x.data[i] + m.var_y.data[i] + c2))
        })
        .sum();
    Ok(total / n)
}

/// d SSIM / d y on luminance planes.
pub(crate) fn ssim_gradient_planes(
    x: &Plane,
    y: &Plane,
    max_value: f64,
    cfg: &SsimConfig,
) -> Result<Plane, MetricError> {
    let win = Window::new(cfg, x.height, x.width)?;
    let (c1, c2) = cfg.constants(max_value);
    let m = moments(&win, x, y);
    let n = m.mu_x.len();
    let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let (mx, my) = (m.mu_x.data[i], m.mu_y.data[i]);
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * m.cov.data[i] + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = m.var_x.data[i] + m.var_y.data[i] + c2;
        let s = a1 * a2 / (b1 * b2);
        // dS/dy_k = w_k (a + b x_k + c y_k)
        a[i] = s * (2.0 * mx / a1 - 2.0 * my / b1 - 2.0 * mx / a2 + 2.0 * my / b2) / n as f64;
        b[i] = 2.0 * s / a2 / n as f64;
        c[i] = -2.0 * s / b2 / n as f64;
    }
    let (oh, ow) = (m.mu_x.height, m.mu_x.width);
    let sa = win.scatter(&Plane::new(oh, ow, a));
    let sb = win.scatter(&Plane::new(oh, ow, b));
    let sc = win.scatter(&Plane::new(oh, ow, c));
    let data = (0..x.len())
        .map(|k| sa.data[k] + x.data[k] * sb.data[k] + y.data[k] * sc.data[k])
        .collect();
    Ok(Plane::new(x.height, x.width, data))
}

/// Mean SSIM over all valid window positions, computed on luminance.
pub fn ssim(x: &ImageBuffer, y: &ImageBuffer, cfg: &SsimConfig) -> Result<f64, MetricError> {
    check_same_shape(x, y)?;
    ssim_planes(&x.luma_plane(), &y.luma_plane(), x.max_value(), cfg)
}

/// Gradient of [`ssim`] with respect to every sample of `y`.
pub fn ssim_gradient(x: &ImageBuffer, y: &ImageBuffer, cfg: &SsimConfig) -> Result<Vec<f64>, MetricError> {
    check_same_shape(x, y)?;
    let g = ssim_gradient_planes(&x.luma_plane(), &y.luma_plane(), x.max_value(), cfg)?;
    Ok(luma_adjoint(&g, y.channels()))
}
