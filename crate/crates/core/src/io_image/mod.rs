//! Volumes, NIfTI-1 I/O, synthetic phantoms and ground-truth fields.

mod ground_truth;
mod nifti;
mod phantom;

pub use ground_truth::{
    full_domain_constraints, make_ground_truth_svf, smooth_incompressible_svf, smooth_target, GroundTruth,
};
pub use nifti::{
    read_mask, read_nifti, read_nifti_vector, write_mask, write_nifti, write_nifti_as,
    write_nifti_vector, NiftiDatatype, NIFTI_INTENT_DISPVECT,
};
pub use phantom::{make_phantom, PhantomKind, PhantomSpec};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;
use crate::interp::{ImageSampler, Interpolation};
use crate::scalar::{Real, Vec3};

/// Scalar volume on a voxel lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Image3D<T> {
    pub grid: VoxelGrid<T>,
    data: Vec<T>,
}

impl<T: Real> Image3D<T> {
    pub fn new(grid: VoxelGrid<T>, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite intensity at voxel {i}")));
        }
        Ok(Image3D { grid, data })
    }

    pub fn filled(grid: VoxelGrid<T>, value: T) -> Self {
        Image3D {
            data: vec![value; grid.len()],
            grid,
        }
    }

    /// Samples `f` at every voxel centre.
    pub fn from_fn(grid: VoxelGrid<T>, f: impl Fn(Vec3<T>) -> T + Sync) -> Self {
        let data = (0..grid.len()).into_par_iter().map(|i| f(grid.center(i))).collect();
        Image3D { grid, data }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.grid.index(i, j, k)]
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::from_usize_lossy(self.len())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Image3D {
            grid: self.grid,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Image3D<U> {
        Image3D {
            grid: self.grid.cast(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Separable Gaussian smoothing; `sigma` in voxels per axis, kernels
    /// truncated at 3 sigma, edge voxels replicated.
    pub fn gaussian_smoothed(&self, sigma: Vec3<T>) -> Self {
        let mut data = self.data.clone();
        let dims = self.grid.dims;
        for a in 0..3 {
            if !(sigma[a] > T::zero()) {
                continue;
            }
            let s = sigma[a].as_f64();
            let r = (3.0 * s).ceil() as isize;
            let mut kern: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * s * s)).exp()).collect();
            let total: f64 = kern.iter().sum();
            kern.iter_mut().for_each(|k| *k /= total);
            let kern: Vec<T> = kern.into_iter().map(T::lit).collect();
            let stride = [1, dims[0], dims[0] * dims[1]][a];
            let n = dims[a] as isize;
            let src = data.clone();
            data.par_iter_mut().enumerate().for_each(|(idx, out)| {
                let pos = ((idx / stride) % dims[a]) as isize;
                let base = idx - pos as usize * stride;
                let mut acc = T::zero();
                for (j, &w) in kern.iter().enumerate() {
                    let q = (pos + j as isize - r).clamp(0, n - 1) as usize;
                    acc += w * src[base + q * stride];
                }
                *out = acc;
            });
        }
        Image3D { grid: self.grid, data }
    }

    /// Downsampled copy with `factor` times the spacing and the same lower
    /// domain corner; values by trilinear sampling of `self`.
    pub fn downsampled(&self, factor: usize) -> Self {
        if factor <= 1 {
            return self.clone();
        }
        let f = T::from_usize_lossy(factor);
        let (lo, _) = self.grid.bounds();
        let dims = self.grid.dims.map(|d| d.div_ceil(factor));
        let spacing = self.grid.spacing.map(|s| s * f);
        let origin = [0, 1, 2].map(|a| lo[a] + T::lit(0.5) * spacing[a]);
        let grid = VoxelGrid { dims, spacing, origin };
        let s = ImageSampler::new(self, Interpolation::Trilinear, self.min());
        let half = T::lit(0.5);
        let (_, hi) = self.grid.bounds();
        Image3D::from_fn(grid, |p| {
            // coarse centres past the fine domain clamp to its last voxel
            let q = [0, 1, 2].map(|a| p[a].min(hi[a] - half * self.grid.spacing[a]));
            s.sample(q)
        })
    }

    /// Smoothed and downsampled copy for pyramid level `level` (factor 2^level).
    pub fn pyramid_level(&self, level: usize) -> Self {
        if level == 0 {
            return self.clone();
        }
        let factor = 1usize << level;
        let sigma = T::lit(0.5 * factor as f64);
        self.gaussian_smoothed([sigma; 3]).downsampled(factor)
    }
}
