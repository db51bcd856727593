//! Sparse separable linear operators on single-channel planes.
//!
//! Every linear step in the metric and inverter stacks (Gaussian smoothing,
//! valid-window filtering, 2x pooling, bilinear resampling, finite
//! differences) is expressed as an [`Op1d`] applied along each axis. Keeping
//! them explicit makes the adjoint a plain transpose, which is what the
//! analytic attack gradient needs.

/// A linear map from `in_len` samples to `rows.len()` samples with sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Op1d {
    in_len: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Op1d {
    pub fn from_rows(in_len: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert!(rows.iter().flatten().all(|&(j, _)| j < in_len));
        Op1d { in_len, rows }
    }

    pub fn identity(n: usize) -> Self {
        Op1d::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Centered odd kernel, "same" output length, weights renormalized where
    /// the kernel hangs off either edge.
    pub fn kernel_same(n: usize, kernel: &[f64]) -> Self {
        assert!(kernel.len() % 2 == 1, "kernel length must be odd");
        let r = (kernel.len() / 2) as isize;
        let rows = (0..n as isize)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(kernel.len());
                for (k, &kw) in kernel.iter().enumerate() {
                    let j = i + k as isize - r;
                    if j >= 0 && (j as usize) < n {
                        row.push((j as usize, kw));
                    }
                }
                let total: f64 = row.iter().map(|&(_, v)| v).sum();
                row.iter_mut().for_each(|(_, v)| *v /= total);
                row
            })
            .collect();
        Op1d::from_rows(n, rows)
    }

    /// Kernel evaluated only where it lies fully inside the signal.
    /// Output length is `n - kernel.len() + 1`; weights are used as given.
    pub fn kernel_valid(n: usize, kernel: &[f64]) -> Self {
        assert!(kernel.len() <= n, "kernel longer than signal");
        let rows = (0..=n - kernel.len())
            .map(|i| kernel.iter().enumerate().map(|(k, &v)| (i + k, v)).collect())
            .collect();
        Op1d::from_rows(n, rows)
    }

    /// Gaussian smoothing with radius `ceil(3 sigma)`; `sigma == 0` is the identity.
    pub fn gaussian_same(n: usize, sigma: f64) -> Self {
        if sigma <= 0.0 {
            return Op1d::identity(n);
        }
        let radius = (3.0 * sigma).ceil().max(1.0) as usize;
        Op1d::kernel_same(n, &gaussian_kernel(2 * radius + 1, sigma))
    }

    /// Pairwise averaging to `max(n / 2, 1)` samples. A trailing odd sample
    /// is folded into the last pair.
    pub fn pool2(n: usize) -> Self {
        if n < 2 {
            return Op1d::identity(n);
        }
        let out = n / 2;
        let rows = (0..out)
            .map(|i| {
                if i == out - 1 && n % 2 == 1 {
                    vec![(2 * i, 1.0 / 3.0), (2 * i + 1, 1.0 / 3.0), (2 * i + 2, 1.0 / 3.0)]
                } else {
                    vec![(2 * i, 0.5), (2 * i + 1, 0.5)]
                }
            })
            .collect();
        Op1d::from_rows(n, rows)
    }

    /// Corner-aligned linear interpolation from `n_in` to `n_out` samples.
    pub fn bilinear(n_in: usize, n_out: usize) -> Self {
        if n_in == n_out {
            return Op1d::identity(n_in);
        }
        let rows = (0..n_out)
            .map(|i| {
                if n_in == 1 || n_out == 1 {
                    return vec![(0, 1.0)];
                }
                let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
                let lo = (pos.floor() as usize).min(n_in - 1);
                let t = pos - lo as f64;
                if lo + 1 >= n_in || t == 0.0 {
                    vec![(lo, 1.0)]
                } else {
                    vec![(lo, 1.0 - t), (lo + 1, t)]
                }
            })
            .collect();
        Op1d::from_rows(n_in, rows)
    }

    /// Box average over `cells` equal-ish grid cells. Cells always cover at
    /// least one sample, so they overlap when `n < cells`.
    pub fn cell_mean(n: usize, cells: usize) -> Self {
        let rows = (0..cells)
            .map(|c| {
                let lo = (c * n) / cells;
                let hi = (((c + 1) * n) / cells).max(lo + 1).min(n);
                let lo = lo.min(hi - 1);
                let wgt = 1.0 / (hi - lo) as f64;
                (lo..hi).map(|j| (j, wgt)).collect()
            })
            .collect();
        Op1d::from_rows(n, rows)
    }

    /// Central difference with clamped indices (one-sided at the edges).
    pub fn central_diff(n: usize) -> Self {
        let rows = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(n - 1);
                if lo == hi {
                    Vec::new()
                } else {
                    vec![(lo, -0.5), (hi, 0.5)]
                }
            })
            .collect();
        Op1d::from_rows(n, rows)
    }

    pub fn transpose(&self) -> Op1d {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.in_len];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                rows[j].push((i, v));
            }
        }
        Op1d::from_rows(self.rows.len(), rows)
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_len);
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * input[j]).sum())
            .collect()
    }
}

/// Normalized 1-D Gaussian kernel of odd length `len`.
pub fn gaussian_kernel(len: usize, sigma: f64) -> Vec<f64> {
    let r = (len / 2) as f64;
    let raw: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// A single-channel row-major plane of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width);
        Plane { height, width, data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Plane::new(height, width, vec![0.0; height * width])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane::new(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        Plane::new(
            self.height,
            self.width,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// Applies `op_h` down the columns and `op_w` along the rows.
    pub fn separable(&self, op_h: &Op1d, op_w: &Op1d) -> Plane {
        assert_eq!(op_h.in_len(), self.height);
        assert_eq!(op_w.in_len(), self.width);
        let (oh, ow) = (op_h.out_len(), op_w.out_len());
        // rows first: height x ow
        let mut tmp = Vec::with_capacity(self.height * ow);
        for r in 0..self.height {
            let row = &self.data[r * self.width..(r + 1) * self.width];
            for taps in op_w.rows() {
                tmp.push(taps.iter().map(|&(j, v)| v * row[j]).sum::<f64>());
            }
        }
        let mut out = vec![0.0; oh * ow];
        for (i, taps) in op_h.rows().iter().enumerate() {
            let dst = &mut out[i * ow..(i + 1) * ow];
            for &(j, v) in taps {
                let src = &tmp[j * ow..(j + 1) * ow];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        Plane::new(oh, ow, out)
    }

    /// Adjoint of [`Plane::separable`] for the same pair of operators.
    pub fn separable_adjoint(&self, op_h: &Op1d, op_w: &Op1d) -> Plane {
        self.separable(&op_h.transpose(), &op_w.transpose())
    }
}
