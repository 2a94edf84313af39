//! Voxel lattice geometry shared by images, masks and deformation fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3};

/// Axis-aligned voxel lattice in world (mm) coordinates.
///
/// `origin` is the centre of voxel `(0, 0, 0)`; voxel `(i, j, k)` is the box of
/// size `spacing` centred on `origin + (i, j, k) * spacing`. The image domain
/// is the union of all voxel boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid<T> {
    pub dims: [usize; 3],
    pub spacing: Vec3<T>,
    pub origin: Vec3<T>,
}

impl<T: Real> VoxelGrid<T> {
    pub fn new(dims: [usize; 3], spacing: Vec3<T>, origin: Vec3<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Geometry(format!("empty voxel lattice {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > T::zero()) || !s.is_finite()) {
            return Err(Error::Geometry("voxel spacing must be positive".into()));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Geometry("voxel origin must be finite".into()));
        }
        Ok(VoxelGrid { dims, spacing, origin })
    }

    /// Isotropic lattice with the domain starting at the world origin.
    pub fn isotropic(n: usize, spacing: T) -> Self {
        let half = spacing * T::lit(0.5);
        VoxelGrid {
            dims: [n; 3],
            spacing: [spacing; 3],
            origin: [half; 3],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    #[inline]
    pub fn voxel_to_world(&self, v: Vec3<T>) -> Vec3<T> {
        [
            self.origin[0] + v[0] * self.spacing[0],
            self.origin[1] + v[1] * self.spacing[1],
            self.origin[2] + v[2] * self.spacing[2],
        ]
    }

    #[inline]
    pub fn world_to_voxel(&self, p: Vec3<T>) -> Vec3<T> {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// World position of the centre of voxel `idx`.
    #[inline]
    pub fn center(&self, idx: usize) -> Vec3<T> {
        let [i, j, k] = self.unravel(idx);
        self.voxel_to_world([
            T::from_usize_lossy(i),
            T::from_usize_lossy(j),
            T::from_usize_lossy(k),
        ])
    }

    /// Lower and upper corners of the domain (outer faces of the edge voxels).
    pub fn bounds(&self) -> (Vec3<T>, Vec3<T>) {
        let half = T::lit(0.5);
        let mut lo = [T::zero(); 3];
        let mut hi = [T::zero(); 3];
        for a in 0..3 {
            lo[a] = self.origin[a] - half * self.spacing[a];
            hi[a] = self.origin[a]
                + (T::from_usize_lossy(self.dims[a]) - half) * self.spacing[a];
        }
        (lo, hi)
    }

    /// Whether `p` lies in the closed domain.
    pub fn contains(&self, p: Vec3<T>) -> bool {
        let (lo, hi) = self.bounds();
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    /// Same lattice up to a relative tolerance on spacing and origin.
    pub fn same_frame(&self, other: &VoxelGrid<T>) -> bool {
        let tol = T::lit(1e-9);
        self.dims == other.dims
            && (0..3).all(|a| {
                let s = self.spacing[a].abs().max(T::one());
                (self.spacing[a] - other.spacing[a]).abs() <= tol * s
                    && (self.origin[a] - other.origin[a]).abs() <= tol * s
            })
    }

    pub fn check_same_frame(&self, other: &VoxelGrid<T>, what: &str) -> Result<()> {
        if self.same_frame(other) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "{what}: lattices differ ({:?} vs {:?})",
                self.dims, other.dims
            )))
        }
    }

    pub fn cast<U: Real>(&self) -> VoxelGrid<U> {
        let c = |v: Vec3<T>| v.map(|x| U::lit(x.as_f64()));
        VoxelGrid {
            dims: self.dims,
            spacing: c(self.spacing),
            origin: c(self.origin),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn world_voxel_round_trip(
            x in -50.0f64..50.0, y in -50.0f64..50.0, z in -50.0f64..50.0,
            sx in 0.3f64..4.0, sy in 0.3f64..4.0, sz in 0.3f64..4.0,
            ox in -20.0f64..20.0,
        ) {
            let g = VoxelGrid::new([10, 11, 12], [sx, sy, sz], [ox, -ox, 0.5]).unwrap();
            let p = [x, y, z];
            let q = g.voxel_to_world(g.world_to_voxel(p));
            for a in 0..3 {
                prop_assert!((p[a] - q[a]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn index_round_trip_and_bounds() {
        let g = VoxelGrid::new([3, 4, 5], [1.0, 2.0, 0.5], [0.0, 0.0, 0.0]).unwrap();
        for idx in 0..g.len() {
            let [i, j, k] = g.unravel(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
        let (lo, hi) = g.bounds();
        assert_eq!(lo, [-0.5, -1.0, -0.25]);
        assert_eq!(hi, [2.5, 7.0, 2.25]);
        assert!(VoxelGrid::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
    }
}
