//! B-spline stationary velocity fields.
//!
//! Both field families are three scalar tensor-product splines sharing one
//! knot lattice. They differ only in the per-component basis orders:
//!
//! * [`ClassicalSvf`]: order `k` along every axis for every component.
//! * [`DivConformingSvf`]: component `U` uses order `k + 1` along `U` and `k`
//!   along the two other axes, so its divergence is an order-`k` spline.
//!
//! The flat parameter vector concatenates the x, y and z component
//! coefficient arrays, each stored x-fastest.

mod classical;
mod conforming;
pub mod container;
mod spline;

pub use classical::ClassicalSvf;
pub use conforming::DivConformingSvf;
pub use spline::TensorSpline;

use crate::bspline1d::{KnotAxis, LocalBasis, SplineOrder};
use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;
use crate::scalar::{Mat3, Real, Vec3};

/// Regular knot lattice plus the basis order the field family builds on.
///
/// For a divergence-conforming field `order` is the divergence order `k`
/// (components use `k + 1` along their own axis); for a classical field it
/// is the order of every basis function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGrid<T> {
    pub axes: [KnotAxis<T>; 3],
    pub order: SplineOrder,
}

impl<T: Real> ControlGrid<T> {
    pub fn new(axes: [KnotAxis<T>; 3], order: SplineOrder) -> Self {
        ControlGrid { axes, order }
    }

    /// Isotropic lattice with `n` cells of size `spacing` starting at `origin`.
    pub fn cube(n: usize, spacing: T, origin: T, order: SplineOrder) -> Result<Self> {
        let axis = KnotAxis::new(spacing, n, origin)?;
        Ok(ControlGrid::new([axis; 3], order))
    }

    /// Smallest lattice of the given knot spacing whose domain covers the
    /// voxel domain of `image`. Cell counts are rounded up to a multiple of
    /// `multiple` so that the lattice can be coarsened that many times by 2.
    pub fn covering(
        image: &VoxelGrid<T>,
        spacing: Vec3<T>,
        order: SplineOrder,
        multiple: usize,
    ) -> Result<Self> {
        let (lo, hi) = image.bounds();
        let multiple = multiple.max(1);
        let mut axes = Vec::with_capacity(3);
        for a in 0..3 {
            let extent = (hi[a] - lo[a]) / spacing[a];
            let n = extent.ceil().to_usize().unwrap_or(1).max(1);
            let n = n.div_ceil(multiple) * multiple;
            axes.push(KnotAxis::new(spacing[a], n, lo[a])?);
        }
        Ok(ControlGrid::new([axes[0], axes[1], axes[2]], order))
    }

    /// Knot counts per axis.
    pub fn knot_counts(&self) -> [usize; 3] {
        [
            self.axes[0].knot_count(),
            self.axes[1].knot_count(),
            self.axes[2].knot_count(),
        ]
    }

    pub fn spacing(&self) -> Vec3<T> {
        [self.axes[0].spacing(), self.axes[1].spacing(), self.axes[2].spacing()]
    }

    pub fn origin(&self) -> Vec3<T> {
        [self.axes[0].origin(), self.axes[1].origin(), self.axes[2].origin()]
    }

    /// Closed domain `[origin, origin + n * spacing]` per axis.
    pub fn domain(&self) -> (Vec3<T>, Vec3<T>) {
        (self.origin(), [self.axes[0].end(), self.axes[1].end(), self.axes[2].end()])
    }

    #[inline]
    pub fn contains(&self, p: Vec3<T>) -> bool {
        (0..3).all(|a| self.axes[a].contains(p[a]))
    }

    /// Cell-centred sample lattice with `per_cell` points per knot cell and axis.
    pub fn sample_lattice(&self, per_cell: usize) -> VoxelGrid<T> {
        let per_cell = per_cell.max(1);
        let (lo, _) = self.domain();
        let sp = self.spacing().map(|s| s / T::from_usize_lossy(per_cell));
        VoxelGrid {
            dims: self.knot_counts().map(|n| per_cell * n),
            spacing: sp,
            origin: [0, 1, 2].map(|a| lo[a] + T::lit(0.5) * sp[a]),
        }
    }

    /// Lattice with half the spacing and twice the cells over the same domain.
    pub fn refined(&self) -> Result<Self> {
        let mut axes = self.axes;
        for ax in axes.iter_mut() {
            *ax = KnotAxis::new(ax.spacing() * T::lit(0.5), ax.knot_count() * 2, ax.origin())?;
        }
        Ok(ControlGrid::new(axes, self.order))
    }

    /// Lattice with twice the spacing; requires even cell counts.
    pub fn coarsened(&self) -> Result<Self> {
        let mut axes = self.axes;
        for ax in axes.iter_mut() {
            if ax.knot_count() % 2 != 0 {
                return Err(Error::Config(format!(
                    "cannot coarsen an axis with {} cells",
                    ax.knot_count()
                )));
            }
            *ax = KnotAxis::new(ax.spacing() * T::lit(2.0), ax.knot_count() / 2, ax.origin())?;
        }
        Ok(ControlGrid::new(axes, self.order))
    }

    pub(crate) fn check_domain(&self, p: Vec3<T>) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::Domain {
                x: p[0].as_f64(),
                y: p[1].as_f64(),
                z: p[2].as_f64(),
            })
        }
    }
}

/// Axis bases at one point; cells are located once, weights are closed forms.
pub(crate) struct BasisCache<'a, T: Real> {
    axes: &'a [KnotAxis<T>; 3],
    cells: [(isize, T); 3],
}

impl<'a, T: Real> BasisCache<'a, T> {
    #[inline]
    pub(crate) fn new(axes: &'a [KnotAxis<T>; 3], p: Vec3<T>) -> Self {
        BasisCache {
            axes,
            cells: [axes[0].locate(p[0]), axes[1].locate(p[1]), axes[2].locate(p[2])],
        }
    }

    #[inline]
    pub(crate) fn get(&mut self, axis: usize, order: SplineOrder, deriv: usize) -> LocalBasis<T> {
        let (cell, f) = self.cells[axis];
        self.axes[axis].basis_in_cell(order, deriv, cell, f)
    }

    #[inline]
    pub(crate) fn bases(
        &mut self,
        orders: [SplineOrder; 3],
        derivs: [usize; 3],
    ) -> [LocalBasis<T>; 3] {
        [
            self.get(0, orders[0], derivs[0]),
            self.get(1, orders[1], derivs[1]),
            self.get(2, orders[2], derivs[2]),
        ]
    }
}

/// Behaviour shared by the classical and divergence-conforming fields.
///
/// The `*_unchecked` evaluators accept any point; outside the lattice the
/// sums simply run out of basis functions, which extends the field by zero
/// beyond the padded knots.
pub trait SplineVelocity<T: Real>: Clone + Send + Sync + Sized {
    fn grid(&self) -> &ControlGrid<T>;
    fn components(&self) -> &[TensorSpline<T>; 3];
    fn components_mut(&mut self) -> &mut [TensorSpline<T>; 3];

    /// Zero field of this family on `grid`.
    fn zeros(grid: ControlGrid<T>) -> Result<Self>;

    /// Short family label used in reports and containers.
    fn family(&self) -> &'static str;

    fn param_count(&self) -> usize {
        self.components().iter().map(TensorSpline::len).sum()
    }

    /// Offset of component `c` inside the flat parameter vector.
    fn component_offset(&self, c: usize) -> usize {
        self.components()[..c].iter().map(TensorSpline::len).sum()
    }

    fn coefficient_vector(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.param_count());
        for comp in self.components() {
            v.extend_from_slice(comp.coeffs());
        }
        v
    }

    fn set_coefficients(&mut self, theta: &[T]) -> Result<()> {
        let expected = self.param_count();
        if theta.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: theta.len(),
            });
        }
        let mut off = 0;
        for comp in self.components_mut() {
            let n = comp.len();
            comp.coeffs_mut().copy_from_slice(&theta[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn with_coefficients(&self, theta: &[T]) -> Result<Self> {
        let mut out = self.clone();
        out.set_coefficients(theta)?;
        Ok(out)
    }

    fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        for comp in out.components_mut() {
            comp.coeffs_mut().iter_mut().for_each(|c| *c *= s);
        }
        out
    }

    fn negated(&self) -> Self {
        self.scaled(-T::one())
    }

    fn contains(&self, p: Vec3<T>) -> bool {
        self.grid().contains(p)
    }

    fn velocity_unchecked(&self, p: Vec3<T>) -> Vec3<T> {
        let mut cache = BasisCache::new(&self.grid().axes, p);
        let mut v = [T::zero(); 3];
        for (c, comp) in self.components().iter().enumerate() {
            let b = cache.bases(comp.orders(), [0, 0, 0]);
            v[c] = comp.contract(&b);
        }
        v
    }

    /// Velocity and its spatial Jacobian `J[c][d] = dv_c / dx_d`.
    fn velocity_and_jacobian_unchecked(&self, p: Vec3<T>) -> (Vec3<T>, Mat3<T>) {
        let mut cache = BasisCache::new(&self.grid().axes, p);
        let mut v = [T::zero(); 3];
        let mut j = [[T::zero(); 3]; 3];
        for (c, comp) in self.components().iter().enumerate() {
            let o = comp.orders();
            (v[c], j[c]) = comp.contract_with_gradient(&cache.bases(o, [0, 0, 0]), &cache.bases(o, [1, 1, 1]));
        }
        (v, j)
    }

    fn eval_velocity(&self, p: Vec3<T>) -> Result<Vec3<T>> {
        self.grid().check_domain(p)?;
        Ok(self.velocity_unchecked(p))
    }

    fn eval_jacobian(&self, p: Vec3<T>) -> Result<Mat3<T>> {
        self.grid().check_domain(p)?;
        Ok(self.velocity_and_jacobian_unchecked(p).1)
    }

    /// Mixed partial derivative of one component.
    fn component_derivative(&self, c: usize, derivs: [usize; 3], p: Vec3<T>) -> T {
        let comp = &self.components()[c];
        let mut cache = BasisCache::new(&self.grid().axes, p);
        comp.contract(&cache.bases(comp.orders(), derivs))
    }

    /// Adds `d(w . v(p)) / dTheta` to `out`.
    fn spray_velocity(&self, p: Vec3<T>, w: Vec3<T>, out: &mut [T]) {
        let mut cache = BasisCache::new(&self.grid().axes, p);
        let mut off = 0;
        for (c, comp) in self.components().iter().enumerate() {
            let n = comp.len();
            if w[c] != T::zero() {
                let b = cache.bases(comp.orders(), [0, 0, 0]);
                comp.spray(&b, w[c], &mut out[off..off + n]);
            }
            off += n;
        }
    }

    /// Spatial Jacobian at `p`; also adds `d(w . v(p)) / dTheta` to `out`.
    /// One basis evaluation serves both.
    fn jacobian_and_spray(&self, p: Vec3<T>, w: Vec3<T>, out: &mut [T]) -> Mat3<T> {
        let mut cache = BasisCache::new(&self.grid().axes, p);
        let mut j = [[T::zero(); 3]; 3];
        let mut off = 0;
        for (c, comp) in self.components().iter().enumerate() {
            let o = comp.orders();
            let n = comp.len();
            let b = cache.bases(o, [0, 0, 0]);
            (_, j[c]) = comp.contract_with_gradient(&b, &cache.bases(o, [1, 1, 1]));
            if w[c] != T::zero() {
                comp.spray(&b, w[c], &mut out[off..off + n]);
            }
            off += n;
        }
        j
    }

    /// Adds `scale * d(component_derivative(c, derivs, p)) / dTheta` to `out`.
    fn spray_component_derivative(
        &self,
        c: usize,
        derivs: [usize; 3],
        p: Vec3<T>,
        scale: T,
        out: &mut [T],
    ) {
        let off = self.component_offset(c);
        let comp = &self.components()[c];
        let mut cache = BasisCache::new(&self.grid().axes, p);
        let b = cache.bases(comp.orders(), derivs);
        comp.spray(&b, scale, &mut out[off..off + comp.len()]);
    }

    /// Sparse gradient of `scale * component_derivative(c, derivs, p)` with
    /// respect to the flat parameter vector.
    fn component_derivative_entries(&self, c: usize, derivs: [usize; 3], p: Vec3<T>, scale: T) -> Vec<(usize, T)> {
        let off = self.component_offset(c);
        let comp = &self.components()[c];
        let mut cache = BasisCache::new(&self.grid().axes, p);
        let b = cache.bases(comp.orders(), derivs);
        let mut out = Vec::new();
        comp.entries(&b, scale, off, &mut out);
        out
    }

    /// The same field represented exactly on the lattice with half the
    /// knot spacing (on the grid domain).
    fn refined(&self) -> Result<Self> {
        let grid = self.grid().refined()?;
        let mut out = Self::zeros(grid)?;
        for (dst, src) in out.components_mut().iter_mut().zip(self.components()) {
            *dst = src.refined(&grid.axes)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
