//! Linear divergence constraints on divergence-conforming coefficients.
//!
//! A divergence-conforming field has divergence `sum_i psi_i B^k_i` with
//! `psi_i` a linear function of the coefficients. Because the `B^k_i` are
//! nonnegative and sum to one, `|psi_i| <= eps` on every `i` whose support
//! meets the region `M` bounds `|div v| <= eps` on `M`; with `eps = 0` the
//! field is exactly divergence free there.

mod export;
mod projection;
mod sparse;

pub use export::{write_constraint_export, write_index_manifest, write_triplets};
pub use projection::{CgOptions, NullSpaceProjector, ProjectionStats};
pub use sparse::CsrMatrix;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{ClassicalSvf, ControlGrid, DivConformingSvf, SplineVelocity};
use crate::geometry::VoxelGrid;
use crate::scalar::{Real, Vec3};

/// Binary voxel mask of the incompressible region.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRegion<T> {
    pub grid: VoxelGrid<T>,
    occupied: Vec<bool>,
}

impl<T: Real> MaskRegion<T> {
    pub fn new(grid: VoxelGrid<T>, occupied: Vec<bool>) -> Result<Self> {
        if occupied.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                actual: occupied.len(),
            });
        }
        Ok(MaskRegion { grid, occupied })
    }

    pub fn full(grid: VoxelGrid<T>) -> Self {
        MaskRegion {
            occupied: vec![true; grid.len()],
            grid,
        }
    }

    pub fn empty(grid: VoxelGrid<T>) -> Self {
        MaskRegion {
            occupied: vec![false; grid.len()],
            grid,
        }
    }

    /// Mask of voxels whose centre satisfies `f`.
    pub fn from_fn(grid: VoxelGrid<T>, f: impl Fn(Vec3<T>) -> bool) -> Self {
        let occupied = (0..grid.len()).map(|i| f(grid.center(i))).collect();
        MaskRegion { grid, occupied }
    }

    pub fn occupied(&self) -> &[bool] {
        &self.occupied
    }

    #[inline]
    pub fn is_set(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupied[self.grid.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, on: bool) {
        let idx = self.grid.index(i, j, k);
        self.occupied[idx] = on;
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.occupied.iter().any(|&b| b)
    }

    /// Box dilation by `r` voxels along every axis.
    pub fn dilated(&self, r: usize) -> Self {
        let d = self.grid.dims;
        let mut out = Self::empty(self.grid);
        for idx in 0..self.occupied.len() {
            if !self.occupied[idx] {
                continue;
            }
            let [i, j, k] = self.grid.unravel(idx);
            for z in k.saturating_sub(r)..(k + r + 1).min(d[2]) {
                for y in j.saturating_sub(r)..(j + r + 1).min(d[1]) {
                    for x in i.saturating_sub(r)..(i + r + 1).min(d[0]) {
                        out.set(x, y, z, true);
                    }
                }
            }
        }
        out
    }

    /// `n` seeded uniform random points of the union of masked voxel boxes.
    pub fn sample_points(&self, n: usize, seed: u64) -> Result<Vec<Vec3<T>>> {
        use rand::{Rng, SeedableRng};
        let cells: Vec<usize> = (0..self.occupied.len()).filter(|&i| self.occupied[i]).collect();
        if cells.is_empty() {
            return Err(Error::Config("cannot sample an empty mask".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let c = self.grid.center(cells[rng.gen_range(0..cells.len())]);
                [0, 1, 2].map(|a| c[a] + T::lit(rng.gen_range(-0.5..0.5)) * self.grid.spacing[a])
            })
            .collect())
    }

    /// Voxel-wise union; both masks must share a lattice.
    pub fn union(&self, other: &MaskRegion<T>) -> Result<Self> {
        self.grid.check_same_frame(&other.grid, "mask union")?;
        Ok(MaskRegion {
            grid: self.grid,
            occupied: self.occupied.iter().zip(&other.occupied).map(|(a, b)| *a || *b).collect(),
        })
    }
}

/// Sparse constraint rows `psi_i(Θ) = 0` for the active indices.
#[derive(Debug, Clone)]
pub struct ConstraintSystem<T> {
    /// Knot multi-indices `i` (each in `-k..n`), one per row.
    pub active_indices: Vec<[isize; 3]>,
    pub matrix: CsrMatrix<T>,
}

impl<T: Real> ConstraintSystem<T> {
    /// No constraints over a parameter vector of length `ncols`.
    pub fn unconstrained(ncols: usize) -> Self {
        ConstraintSystem {
            active_indices: Vec::new(),
            matrix: CsrMatrix::empty(ncols),
        }
    }

    pub fn len(&self) -> usize {
        self.active_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active_indices.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn residual(&self, theta: &[T]) -> Vec<T> {
        self.matrix.mul_vec(theta)
    }

    pub fn residual_inf(&self, theta: &[T]) -> T {
        self.residual(theta).into_iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn projector(&self) -> NullSpaceProjector<T> {
        NullSpaceProjector::new(self.matrix.clone())
    }

    /// Smallest `eps` such that `|psi_i| <= eps` on every active index; a
    /// certified bound for `|div v|` on the region the indices came from.
    pub fn divergence_bound(&self, svf: &DivConformingSvf<T>) -> Result<T> {
        if svf.param_count() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                actual: svf.param_count(),
            });
        }
        Ok(self.residual_inf(&svf.coefficient_vector()))
    }

    /// Whether the coefficients certify `|div v| <= eps` on the region.
    pub fn satisfies_bound(&self, svf: &DivConformingSvf<T>, eps: T) -> Result<bool> {
        Ok(self.divergence_bound(svf)? <= eps)
    }
}

/// Largest `|div v|` at `points`, all of which must lie in the field domain.
pub fn max_divergence_at<T: Real>(svf: &DivConformingSvf<T>, points: &[Vec3<T>]) -> Result<T> {
    points
        .par_iter()
        .map(|&p| svf.eval_divergence(p).map(T::abs))
        .try_reduce(T::zero, |a, b| Ok(a.max(b)))
}

/// Knot indices along one axis whose open support `]u_i, u_i + (k+1) d[`
/// overlaps the closed interval `[lo, hi]` with positive length.
fn overlapping_indices<T: Real>(axis: &crate::bspline1d::KnotAxis<T>, k: crate::bspline1d::SplineOrder, lo: T, hi: T) -> std::ops::RangeInclusive<isize> {
    let kk = k.get() as isize;
    let n = axis.knot_count() as isize;
    let d = axis.spacing();
    let o = axis.origin();
    let guess_hi = ((hi - o) / d).ceil().to_isize().unwrap_or(n);
    let guess_lo = ((lo - o) / d).floor().to_isize().unwrap_or(-kk) - kk - 1;
    let mut first = isize::MAX;
    let mut last = isize::MIN;
    for i in (guess_lo - 1).max(-kk)..=(guess_hi + 1).min(n - 1) {
        let (a, b) = axis.support(i, k);
        if a < hi && b > lo && hi > lo {
            first = first.min(i);
            last = last.max(i);
        }
    }
    first..=last
}

fn check_mask_frame<T: Real>(grid: &ControlGrid<T>, mask: &MaskRegion<T>) -> Result<()> {
    let (lo, hi) = mask.grid.bounds();
    let (glo, ghi) = grid.domain();
    for a in 0..3 {
        let tol = T::lit(1e-9) * grid.axes[a].spacing();
        if lo[a] < glo[a] - tol || hi[a] > ghi[a] + tol {
            return Err(Error::Geometry(format!(
                "mask extent [{}, {}] on axis {a} leaves the control grid domain [{}, {}]",
                lo[a], hi[a], glo[a], ghi[a]
            )));
        }
    }
    Ok(())
}

/// Active set `J_M`: knot multi-indices of the divergence basis whose open
/// support box overlaps a masked voxel (closed box) with positive volume.
/// Sorted x-fastest.
pub fn active_index_set<T: Real>(grid: &ControlGrid<T>, mask: &MaskRegion<T>) -> Result<Vec<[isize; 3]>> {
    check_mask_frame(grid, mask)?;
    let k = grid.order;
    let kk = k.get() as isize;
    let counts = grid.knot_counts().map(|n| n + k.get());
    let vg = &mask.grid;
    let half = T::lit(0.5);
    // per-axis ranges for each voxel coordinate
    let ranges: Vec<Vec<std::ops::RangeInclusive<isize>>> = (0..3)
        .map(|a| {
            (0..vg.dims[a])
                .map(|v| {
                    let c = vg.origin[a] + T::from_usize_lossy(v) * vg.spacing[a];
                    let h = half * vg.spacing[a];
                    overlapping_indices(&grid.axes[a], k, c - h, c + h)
                })
                .collect()
        })
        .collect();
    let mut hit = vec![false; counts[0] * counts[1] * counts[2]];
    for idx in 0..mask.occupied.len() {
        if !mask.occupied[idx] {
            continue;
        }
        let v = vg.unravel(idx);
        for iz in ranges[2][v[2]].clone() {
            for iy in ranges[1][v[1]].clone() {
                for ix in ranges[0][v[0]].clone() {
                    let s = [(ix + kk) as usize, (iy + kk) as usize, (iz + kk) as usize];
                    hit[s[0] + counts[0] * (s[1] + counts[1] * s[2])] = true;
                }
            }
        }
    }
    Ok(hit
        .iter()
        .enumerate()
        .filter(|(_, &h)| h)
        .map(|(flat, _)| {
            let sx = flat % counts[0];
            let r = flat / counts[0];
            [sx as isize - kk, (r % counts[1]) as isize - kk, (r / counts[1]) as isize - kk]
        })
        .collect())
}

/// Rows `psi_i = sum_c (phi_c[i] - phi_c[i - e_c]) / d_c` over the flat
/// parameter vector of a divergence-conforming field on `grid`.
///
/// In storage indices the component lattice is one longer than the `psi`
/// lattice along its own axis, so every row has exactly six entries.
pub fn assemble_constraints<T: Real>(grid: &ControlGrid<T>, indices: &[[isize; 3]]) -> Result<ConstraintSystem<T>> {
    let template = DivConformingSvf::new(*grid)?;
    let k = grid.order;
    let sp = grid.spacing();
    let comps = template.components();
    let offsets = [0, 1, 2].map(|c| template.component_offset(c));
    let rows: Vec<Vec<(usize, T)>> = indices
        .par_iter()
        .map(|i| {
            let mut s = [0usize; 3];
            for a in 0..3 {
                s[a] = grid.axes[a].storage_index(i[a], k)?;
            }
            let mut row = Vec::with_capacity(6);
            for c in 0..3 {
                let inv = T::one() / sp[c];
                let mut hi = s;
                hi[c] += 1;
                row.push((offsets[c] + comps[c].index(hi), inv));
                row.push((offsets[c] + comps[c].index(s), -inv));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(ConstraintSystem {
        active_indices: indices.to_vec(),
        matrix: CsrMatrix::from_rows(rows, template.param_count())?,
    })
}

/// Constraint system for `mask`; `J_M` then rows.
pub fn constraints_from_mask<T: Real>(grid: &ControlGrid<T>, mask: &MaskRegion<T>) -> Result<ConstraintSystem<T>> {
    let idx = active_index_set(grid, mask)?;
    assemble_constraints(grid, &idx)
}

/// Closest feasible coefficient vector to `theta0` in the Euclidean norm.
pub fn project_divergence_free<T: Real>(theta0: &[T], system: &ConstraintSystem<T>) -> Result<Vec<T>> {
    if system.is_empty() {
        return Err(Error::Config("projection requires a nonempty constraint system".into()));
    }
    system.projector().project(theta0)
}

/// Knot positions `u_j`, `j = 0..=n`, of one axis.
fn knots<T: Real>(axis: &crate::bspline1d::KnotAxis<T>) -> Vec<T> {
    (0..=axis.knot_count() as isize).map(|j| axis.knot(j)).collect()
}

/// Rows of `div v(u_j)` at every knot of a classical field.
pub fn classical_knot_constraints<T: Real>(svf: &ClassicalSvf<T>) -> Result<CsrMatrix<T>> {
    let g = svf.grid();
    let [kx, ky, kz] = [knots(&g.axes[0]), knots(&g.axes[1]), knots(&g.axes[2])];
    let mut points = Vec::with_capacity(kx.len() * ky.len() * kz.len());
    for &z in &kz {
        for &y in &ky {
            for &x in &kx {
                points.push([x, y, z]);
            }
        }
    }
    let rows: Vec<Vec<(usize, T)>> = points
        .par_iter()
        .map(|&p| {
            let mut row = Vec::new();
            for c in 0..3 {
                let mut d = [0; 3];
                d[c] = 1;
                row.extend(svf.component_derivative_entries(c, d, p, T::one()));
            }
            row
        })
        .collect();
    CsrMatrix::from_rows(rows, svf.param_count())
}

/// Closest classical field (coefficient norm) whose divergence vanishes at
/// every knot. Off the knots the divergence is small but generally nonzero.
pub fn project_classical_at_knots<T: Real>(svf0: &ClassicalSvf<T>) -> Result<ClassicalSvf<T>> {
    let a = classical_knot_constraints(svf0)?;
    let theta = NullSpaceProjector::new(a).project(&svf0.coefficient_vector())?;
    svf0.with_coefficients(&theta)
}
