use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;
use crate::io_image::Image3D;
use crate::scalar::Real;

/// Relative variance floor, in units of the squared intensity range.
pub const LNCC_VARIANCE_FLOOR: f64 = 1e-5;

/// Symmetric truncated Gaussian filter with zero padding.
#[derive(Debug, Clone)]
pub struct GaussianWindow<T> {
    dims: [usize; 3],
    kernels: [Vec<T>; 3],
    /// `G * 1`, the local window mass.
    mass: Vec<T>,
}

impl<T: Real> GaussianWindow<T> {
    /// `sigma_mm` converted to voxels per axis; kernels cut at 3 sigma.
    pub fn new(grid: &VoxelGrid<T>, sigma_mm: f64) -> Result<Self> {
        if !(sigma_mm > 0.0) {
            return Err(Error::Config(format!("LNCC window sigma must be positive, got {sigma_mm}")));
        }
        let kernels = [0, 1, 2].map(|a| {
            let s = sigma_mm / grid.spacing[a].as_f64();
            let r = (3.0 * s).ceil().max(1.0) as isize;
            let k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * s * s)).exp()).collect();
            let total: f64 = k.iter().sum();
            k.into_iter().map(|v| T::lit(v / total)).collect()
        });
        let mut w = GaussianWindow {
            dims: grid.dims,
            kernels,
            mass: Vec::new(),
        };
        w.mass = w.apply(&vec![T::one(); grid.len()]);
        Ok(w)
    }

    pub fn apply(&self, src: &[T]) -> Vec<T> {
        let mut data = src.to_vec();
        let d = self.dims;
        for a in 0..3 {
            let stride = [1, d[0], d[0] * d[1]][a];
            let n = d[a] as isize;
            let kern = &self.kernels[a];
            let r = (kern.len() / 2) as isize;
            let prev = data.clone();
            data.par_iter_mut().enumerate().for_each(|(idx, out)| {
                let pos = ((idx / stride) % d[a]) as isize;
                let base = idx - pos as usize * stride;
                let mut acc = T::zero();
                for (j, &w) in kern.iter().enumerate() {
                    let q = pos + j as isize - r;
                    if q >= 0 && q < n {
                        acc += w * prev[base + q as usize * stride];
                    }
                }
                *out = acc;
            });
        }
        data
    }

    /// Normalised local mean `G * f / G * 1`.
    pub fn local_mean(&self, f: &[T]) -> Vec<T> {
        self.apply(f).into_iter().zip(&self.mass).map(|(v, &m)| v / m).collect()
    }

    pub fn mass(&self) -> &[T] {
        &self.mass
    }
}

/// Variance floors derived from intensity ranges.
pub fn lncc_floor<T: Real>(img: &Image3D<T>) -> T {
    let range = img.max() - img.min();
    T::lit(LNCC_VARIANCE_FLOOR) * range * range
}

/// `1 - mean rho^2` with window `sigma_mm`; floors from each image's range.
pub fn lncc_value_grad<T: Real>(reference: &Image3D<T>, warped: &Image3D<T>, sigma_mm: f64) -> Result<(T, Vec<T>)> {
    let window = GaussianWindow::new(&reference.grid, sigma_mm)?;
    lncc_value_grad_with(reference, warped, &window, lncc_floor(reference), lncc_floor(warped))
}

/// Local correlation dissimilarity with explicit window and floors.
///
/// The mean runs over voxels whose reference variance exceeds its floor;
/// the warped variance is clamped at its floor.
pub fn lncc_value_grad_with<T: Real>(
    reference: &Image3D<T>,
    warped: &Image3D<T>,
    window: &GaussianWindow<T>,
    floor_ref: T,
    floor_warped: T,
) -> Result<(T, Vec<T>)> {
    reference.grid.check_same_frame(&warped.grid, "lncc")?;
    let r = reference.data();
    let w = warped.data();
    let n = r.len();
    let mu_r = window.local_mean(r);
    let mu_w = window.local_mean(w);
    let sq = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x * y).collect::<Vec<T>>();
    let m_rr = window.local_mean(&sq(r, r));
    let m_ww = window.local_mean(&sq(w, w));
    let m_wr = window.local_mean(&sq(w, r));
    let mut a = vec![T::zero(); n];
    let mut b = vec![T::zero(); n];
    let mut acc = T::zero();
    let mut count = 0usize;
    for x in 0..n {
        let s_rr = m_rr[x] - mu_r[x] * mu_r[x];
        if !(s_rr > floor_ref) {
            continue;
        }
        count += 1;
        let raw_ww = m_ww[x] - mu_w[x] * mu_w[x];
        let s_ww = raw_ww.max(floor_warped);
        let s_wr = m_wr[x] - mu_w[x] * mu_r[x];
        acc += s_wr * s_wr / (s_ww * s_rr);
        a[x] = T::lit(2.0) * s_wr / (s_ww * s_rr);
        if raw_ww > floor_warped {
            b[x] = -s_wr * s_wr / (s_ww * s_ww * s_rr);
        }
    }
    if count == 0 {
        log::warn!("lncc: reference variance below floor everywhere");
        return Ok((T::one(), vec![T::zero(); n]));
    }
    let cn = T::from_usize_lossy(count);
    let mass = window.mass();
    let div = |v: &[T], f: &dyn Fn(usize) -> T| -> Vec<T> { (0..n).map(|x| v[x] * f(x) / mass[x]).collect() };
    let ga = window.apply(&div(&a, &|_| T::one()));
    let gamu = window.apply(&div(&a, &|x| mu_r[x]));
    let gb = window.apply(&div(&b, &|_| T::one()));
    let gbmu = window.apply(&div(&b, &|x| mu_w[x]));
    let two = T::lit(2.0);
    let grad = (0..n)
        .map(|y| -(r[y] * ga[y] - gamu[y] + two * w[y] * gb[y] - two * gbmu[y]) / cn)
        .collect();
    Ok((T::one() - acc / cn, grad))
}
