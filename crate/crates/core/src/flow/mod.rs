//! Euler exponential of a stationary velocity field, warping and Jacobian
//! diagnostics.
//!
//! `exp(v)(m0)` is approximated by `m_{k+1} = m_k + tau v(m_k)` with
//! `tau = 1 / 2^K`, evaluating the spline exactly at every trajectory point.
//! Outside the control grid domain the velocity is taken to be zero and the
//! trajectory is flagged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SplineVelocity;
use crate::geometry::VoxelGrid;
use crate::interp::{ImageSampler, Interpolation};
use crate::io_image::Image3D;
use crate::scalar::{det3, Mat3, Real, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Euler,
    /// Reserved; not implemented.
    ScalingAndSquaring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EulerConfig {
    pub steps: usize,
    pub integrator: Integrator,
}

impl Default for EulerConfig {
    fn default() -> Self {
        EulerConfig {
            steps: 64,
            integrator: Integrator::Euler,
        }
    }
}

impl EulerConfig {
    pub fn new(steps: usize) -> Result<Self> {
        let cfg = EulerConfig {
            steps,
            integrator: Integrator::Euler,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `2^k` steps.
    pub fn from_exponent(k: u32) -> Result<Self> {
        if k > 30 {
            return Err(Error::Config(format!("step exponent {k} too large")));
        }
        Self::new(1 << k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !self.steps.is_power_of_two() {
            return Err(Error::Config(format!("Euler steps must be a power of two, got {}", self.steps)));
        }
        if self.integrator == Integrator::ScalingAndSquaring {
            return Err(Error::Unsupported("scaling and squaring is not implemented".into()));
        }
        Ok(())
    }

    pub fn tau<T: Real>(&self) -> T {
        T::one() / T::from_usize_lossy(self.steps)
    }
}

/// Velocity extended by zero outside the control grid domain.
#[inline]
pub(crate) fn velocity_or_zero<T: Real, F: SplineVelocity<T>>(svf: &F, p: Vec3<T>) -> Vec3<T> {
    if svf.contains(p) {
        svf.velocity_unchecked(p)
    } else {
        [T::zero(); 3]
    }
}

#[inline]
pub(crate) fn velocity_jacobian_or_zero<T: Real, F: SplineVelocity<T>>(svf: &F, p: Vec3<T>) -> (Vec3<T>, Mat3<T>) {
    if svf.contains(p) {
        svf.velocity_and_jacobian_unchecked(p)
    } else {
        ([T::zero(); 3], [[T::zero(); 3]; 3])
    }
}

/// End point of the Euler trajectory from `p` and whether it left the domain.
pub fn integrate_point<T: Real, F: SplineVelocity<T>>(svf: &F, p: Vec3<T>, steps: usize) -> (Vec3<T>, bool) {
    let tau = T::one() / T::from_usize_lossy(steps);
    let mut m = p;
    let mut left = !svf.contains(p);
    for _ in 0..steps {
        let v = velocity_or_zero(svf, m);
        for a in 0..3 {
            m[a] += tau * v[a];
        }
        left |= !svf.contains(m);
    }
    (m, left)
}

/// Dense displacement field sampled at voxel centres.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField<T> {
    pub grid: VoxelGrid<T>,
    /// Displacement components in mm, x-fastest per component.
    pub displacement: [Vec<T>; 3],
    /// Voxels whose trajectory left the control grid domain.
    pub out_of_domain: Vec<bool>,
}

impl<T: Real> DeformationField<T> {
    pub fn identity(grid: VoxelGrid<T>) -> Self {
        let n = grid.len();
        DeformationField {
            grid,
            displacement: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]],
            out_of_domain: vec![false; n],
        }
    }

    /// Constant displacement `u` everywhere.
    pub fn translation(grid: VoxelGrid<T>, u: Vec3<T>) -> Self {
        let n = grid.len();
        DeformationField {
            grid,
            displacement: [vec![u[0]; n], vec![u[1]; n], vec![u[2]; n]],
            out_of_domain: vec![false; n],
        }
    }

    #[inline]
    pub fn displacement_at(&self, idx: usize) -> Vec3<T> {
        [self.displacement[0][idx], self.displacement[1][idx], self.displacement[2][idx]]
    }

    /// `m0 + u(m0)` for voxel `idx`.
    #[inline]
    pub fn mapped(&self, idx: usize) -> Vec3<T> {
        let c = self.grid.center(idx);
        let u = self.displacement_at(idx);
        [c[0] + u[0], c[1] + u[1], c[2] + u[2]]
    }

    pub fn flagged_count(&self) -> usize {
        self.out_of_domain.iter().filter(|&&f| f).count()
    }

    pub fn flagged_fraction(&self) -> f64 {
        self.flagged_count() as f64 / self.out_of_domain.len().max(1) as f64
    }

    /// Largest displacement norm over unflagged voxels.
    pub fn max_norm(&self) -> T {
        (0..self.grid.len())
            .filter(|&i| !self.out_of_domain[i])
            .map(|i| {
                let u = self.displacement_at(i);
                (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
            })
            .fold(T::zero(), T::max)
    }

    /// Root mean square of `|u - other|` over voxels unflagged in both.
    pub fn rmse_against(&self, other: &DeformationField<T>) -> Result<T> {
        self.grid.check_same_frame(&other.grid, "deformation comparison")?;
        let mut acc = T::zero();
        let mut n = 0usize;
        for i in 0..self.grid.len() {
            if self.out_of_domain[i] || other.out_of_domain[i] {
                continue;
            }
            let (a, b) = (self.displacement_at(i), other.displacement_at(i));
            acc += (0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum::<T>();
            n += 1;
        }
        Ok((acc / T::from_usize_lossy(n.max(1))).sqrt())
    }

    pub fn write_nifti(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io_image::write_nifti_vector(
            &self.grid,
            [&self.displacement[0], &self.displacement[1], &self.displacement[2]],
            path,
        )
    }
}

/// Euler exponential sampled at the voxel centres of `out_grid`.
pub fn exponential_euler<T: Real, F: SplineVelocity<T>>(svf: &F, cfg: &EulerConfig, out_grid: &VoxelGrid<T>) -> Result<DeformationField<T>> {
    cfg.validate()?;
    let results: Vec<(Vec3<T>, bool)> = (0..out_grid.len())
        .into_par_iter()
        .map(|i| {
            let p = out_grid.center(i);
            let (m, left) = integrate_point(svf, p, cfg.steps);
            ([m[0] - p[0], m[1] - p[1], m[2] - p[2]], left)
        })
        .collect();
    let mut def = DeformationField::identity(*out_grid);
    for (i, (u, left)) in results.into_iter().enumerate() {
        for c in 0..3 {
            def.displacement[c][i] = u[c];
        }
        def.out_of_domain[i] = left;
    }
    Ok(def)
}

/// Scalar map with a validity mask; invalid entries hold the marker `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMap<T> {
    pub grid: VoxelGrid<T>,
    pub det: Vec<T>,
    pub valid: Vec<bool>,
    /// Smallest single-step determinant seen along any valid trajectory.
    pub min_step_det: T,
}

impl<T: Real> JacobianMap<T> {
    /// Mean of `|det - 1|` over valid voxels selected by `select`.
    pub fn mae_where(&self, select: impl Fn(usize) -> bool) -> T {
        let mut acc = T::zero();
        let mut n = 0usize;
        for i in 0..self.det.len() {
            if self.valid[i] && select(i) {
                acc += (self.det[i] - T::one()).abs();
                n += 1;
            }
        }
        acc / T::from_usize_lossy(n.max(1))
    }

    pub fn mae(&self) -> T {
        self.mae_where(|_| true)
    }

    pub fn max_abs_deviation_where(&self, select: impl Fn(usize) -> bool) -> T {
        (0..self.det.len())
            .filter(|&i| self.valid[i] && select(i))
            .map(|i| (self.det[i] - T::one()).abs())
            .fold(T::zero(), T::max)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Natural log of the determinant; invalid or nonpositive entries map to 0.
    pub fn log_jacobian(&self) -> Image3D<T> {
        let data = self
            .det
            .iter()
            .zip(&self.valid)
            .map(|(&d, &v)| if v && d > T::zero() { d.ln() } else { T::zero() })
            .collect();
        Image3D::new(self.grid, data).expect("finite log determinants")
    }

    pub fn to_image(&self) -> Image3D<T> {
        Image3D::new(self.grid, self.det.clone()).expect("finite determinants")
    }
}

/// Chain-product determinant `prod_k det(I + tau J_v(m_k))` per voxel.
pub fn jacobian_determinant_map<T: Real, F: SplineVelocity<T>>(svf: &F, cfg: &EulerConfig, out_grid: &VoxelGrid<T>) -> Result<JacobianMap<T>> {
    cfg.validate()?;
    let tau = cfg.tau::<T>();
    let results: Vec<(T, bool, T)> = (0..out_grid.len())
        .into_par_iter()
        .map(|i| {
            let mut m = out_grid.center(i);
            let mut det = T::one();
            let mut left = !svf.contains(m);
            let mut min_step = T::infinity();
            for _ in 0..cfg.steps {
                let (v, j) = velocity_jacobian_or_zero(svf, m);
                let mut step = [[T::zero(); 3]; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        step[r][c] = tau * j[r][c] + if r == c { T::one() } else { T::zero() };
                    }
                }
                let d = det3(&step);
                min_step = min_step.min(d);
                det *= d;
                for a in 0..3 {
                    m[a] += tau * v[a];
                }
                left |= !svf.contains(m);
            }
            if left {
                (T::zero(), false, T::infinity())
            } else {
                (det, true, min_step)
            }
        })
        .collect();
    let min_step_det = results.iter().map(|r| r.2).fold(T::infinity(), T::min);
    Ok(JacobianMap {
        grid: *out_grid,
        det: results.iter().map(|r| r.0).collect(),
        valid: results.iter().map(|r| r.1).collect(),
        min_step_det,
    })
}

/// Central-difference determinant of `x + u(x)` on the displacement lattice
/// (one-sided at the lattice faces). Voxels touching a flagged neighbour are
/// invalid.
pub fn finite_difference_determinant<T: Real>(def: &DeformationField<T>) -> JacobianMap<T> {
    let g = def.grid;
    let d = g.dims;
    let results: Vec<(T, bool)> = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let v = g.unravel(idx);
            let mut jac = [[T::zero(); 3]; 3];
            let mut ok = !def.out_of_domain[idx];
            for a in 0..3 {
                if d[a] < 2 {
                    jac[a][a] = T::one();
                    continue;
                }
                let (lo, hi) = (v[a].saturating_sub(1), (v[a] + 1).min(d[a] - 1));
                let mut vl = v;
                let mut vh = v;
                vl[a] = lo;
                vh[a] = hi;
                let il = g.index(vl[0], vl[1], vl[2]);
                let ih = g.index(vh[0], vh[1], vh[2]);
                ok &= !def.out_of_domain[il] && !def.out_of_domain[ih];
                let h = T::from_usize_lossy(hi - lo) * g.spacing[a];
                for c in 0..3 {
                    let du = (def.displacement[c][ih] - def.displacement[c][il]) / h;
                    jac[c][a] = du + if c == a { T::one() } else { T::zero() };
                }
            }
            if ok {
                (det3(&jac), true)
            } else {
                (T::zero(), false)
            }
        })
        .collect();
    JacobianMap {
        grid: g,
        det: results.iter().map(|r| r.0).collect(),
        valid: results.iter().map(|r| r.1).collect(),
        min_step_det: T::nan(),
    }
}

/// `img` sampled at `m + u(m)` for every voxel of the deformation lattice.
pub fn warp_image<T: Real>(img: &Image3D<T>, def: &DeformationField<T>, interp: Interpolation) -> Result<Image3D<T>> {
    warp_image_with_padding(img, def, interp, img.min())
}

pub fn warp_image_with_padding<T: Real>(img: &Image3D<T>, def: &DeformationField<T>, interp: Interpolation, padding: T) -> Result<Image3D<T>> {
    img.grid.check_same_frame(&def.grid, "warp_image")?;
    let s = ImageSampler::new(img, interp, padding);
    let data = (0..def.grid.len()).into_par_iter().map(|i| s.sample(def.mapped(i))).collect();
    Image3D::new(def.grid, data)
}

/// Transported point and whether its trajectory left the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpedPoint<T> {
    pub position: Vec3<T>,
    pub left_domain: bool,
}

pub fn warp_points<T: Real, F: SplineVelocity<T>>(points: &[Vec3<T>], svf: &F, cfg: &EulerConfig) -> Result<Vec<WarpedPoint<T>>> {
    cfg.validate()?;
    for p in points {
        if !svf.contains(*p) {
            return Err(Error::Domain {
                x: p[0].as_f64(),
                y: p[1].as_f64(),
                z: p[2].as_f64(),
            });
        }
    }
    Ok(points
        .par_iter()
        .map(|&p| {
            let (m, left) = integrate_point(svf, p, cfg.steps);
            WarpedPoint {
                position: m,
                left_domain: left,
            }
        })
        .collect())
}

/// Max over unflagged voxels of `|exp(-v)(exp(v)(m)) - m|`.
pub fn inverse_consistency_residual<T: Real, F: SplineVelocity<T>>(svf: &F, cfg: &EulerConfig, grid: &VoxelGrid<T>) -> Result<T> {
    cfg.validate()?;
    let neg = svf.negated();
    let worst = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = grid.center(i);
            let (m, l1) = integrate_point(svf, p, cfg.steps);
            let (q, l2) = integrate_point(&neg, m, cfg.steps);
            if l1 || l2 {
                T::zero()
            } else {
                (0..3).map(|a| (q[a] - p[a]) * (q[a] - p[a])).sum::<T>().sqrt()
            }
        })
        .reduce(T::zero, T::max);
    Ok(worst)
}

#[cfg(test)]
mod tests;
