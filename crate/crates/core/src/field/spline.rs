use crate::bspline1d::{subdivision_weights, KnotAxis, LocalBasis, SplineOrder};
use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3};

use super::BasisCache;

/// Scalar tensor-product B-spline with per-axis orders.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpline<T> {
    axes: [KnotAxis<T>; 3],
    orders: [SplineOrder; 3],
    counts: [usize; 3],
    coeffs: Vec<T>,
}

impl<T: Real> TensorSpline<T> {
    pub fn zeros(axes: [KnotAxis<T>; 3], orders: [SplineOrder; 3]) -> Self {
        let counts = [
            axes[0].basis_count(orders[0]),
            axes[1].basis_count(orders[1]),
            axes[2].basis_count(orders[2]),
        ];
        TensorSpline {
            axes,
            orders,
            counts,
            coeffs: vec![T::zero(); counts[0] * counts[1] * counts[2]],
        }
    }

    pub fn with_coeffs(axes: [KnotAxis<T>; 3], orders: [SplineOrder; 3], coeffs: Vec<T>) -> Result<Self> {
        let mut s = Self::zeros(axes, orders);
        if coeffs.len() != s.coeffs.len() {
            return Err(Error::Shape {
                expected: s.coeffs.len(),
                actual: coeffs.len(),
            });
        }
        s.coeffs = coeffs;
        Ok(s)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    #[inline]
    pub fn orders(&self) -> [SplineOrder; 3] {
        self.orders
    }

    #[inline]
    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    #[inline]
    pub fn axes(&self) -> &[KnotAxis<T>; 3] {
        &self.axes
    }

    #[inline]
    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.coeffs
    }

    /// Flat index of storage multi-index `s`, x fastest.
    #[inline]
    pub fn index(&self, s: [usize; 3]) -> usize {
        s[0] + self.counts[0] * (s[1] + self.counts[1] * s[2])
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.counts[0];
        let r = idx / self.counts[0];
        [x, r % self.counts[1], r / self.counts[1]]
    }

    /// Boundary-safe versions, clipping windows to the lattice.
    #[inline]
    fn contract_clipped(&self, b: &[LocalBasis<T>; 3]) -> T {
        let [cx, cy, _] = self.counts;
        let [rx, ry, rz] = self.clipped(b);
        let mut acc = T::zero();
        for jz in rz.0..rz.1 {
            let sz = (b[2].start + jz as isize) as usize;
            let wz = b[2].weights[jz];
            for jy in ry.0..ry.1 {
                let sy = (b[1].start + jy as isize) as usize;
                let base = cx * (sy + cy * sz);
                let row = &self.coeffs[base..base + cx];
                let mut inner = T::zero();
                for jx in rx.0..rx.1 {
                    inner += b[0].weights[jx] * row[(b[0].start + jx as isize) as usize];
                }
                acc += b[1].weights[jy] * wz * inner;
            }
        }
        acc
    }

    #[inline]
    fn contract_with_gradient_clipped(&self, b: &[LocalBasis<T>; 3], d: &[LocalBasis<T>; 3]) -> (T, [T; 3]) {
        let [cx, cy, _] = self.counts;
        let [rx, ry, rz] = self.clipped(b);
        let (mut v, mut gx, mut gy, mut gz) = (T::zero(), T::zero(), T::zero(), T::zero());
        for jz in rz.0..rz.1 {
            let sz = (b[2].start + jz as isize) as usize;
            let (wz, dz) = (b[2].weights[jz], d[2].weights[jz]);
            for jy in ry.0..ry.1 {
                let sy = (b[1].start + jy as isize) as usize;
                let (wy, dy) = (b[1].weights[jy], d[1].weights[jy]);
                let base = cx * (sy + cy * sz);
                let row = &self.coeffs[base..base + cx];
                let (mut s0, mut s1) = (T::zero(), T::zero());
                for jx in rx.0..rx.1 {
                    let c = row[(b[0].start + jx as isize) as usize];
                    s0 += b[0].weights[jx] * c;
                    s1 += d[0].weights[jx] * c;
                }
                let wyz = wy * wz;
                v += wyz * s0;
                gx += wyz * s1;
                gy += dy * wz * s0;
                gz += wy * dz * s0;
            }
        }
        (v, [gx, gy, gz])
    }

    /// Per-axis `j` ranges of the window whose storage index is in range.
    #[inline]
    fn clipped(&self, b: &[LocalBasis<T>; 3]) -> [(usize, usize); 3] {
        [0, 1, 2].map(|a| {
            let lo = (-b[a].start).max(0) as usize;
            let hi = (self.counts[a] as isize - b[a].start).clamp(0, b[a].len as isize) as usize;
            (lo.min(hi), hi)
        })
    }

    #[inline]
    fn spray_clipped(&self, b: &[LocalBasis<T>; 3], scale: T, out: &mut [T]) {
        let [cx, cy, _] = self.counts;
        let [rx, ry, rz] = self.clipped(b);
        for jz in rz.0..rz.1 {
            let sz = (b[2].start + jz as isize) as usize;
            let wz = b[2].weights[jz] * scale;
            for jy in ry.0..ry.1 {
                let sy = (b[1].start + jy as isize) as usize;
                let wyz = b[1].weights[jy] * wz;
                let base = cx * (sy + cy * sz);
                let row = &mut out[base..base + cx];
                for jx in rx.0..rx.1 {
                    row[(b[0].start + jx as isize) as usize] += b[0].weights[jx] * wyz;
                }
            }
        }
    }

    /// Appends `(offset + flat index, scale * weight)` for the local window.
    pub(crate) fn entries(&self, b: &[LocalBasis<T>; 3], scale: T, offset: usize, out: &mut Vec<(usize, T)>) {
        let [cx, cy, cz] = self.counts;
        for (sz, wz) in b[2].iter_valid(cz) {
            for (sy, wy) in b[1].iter_valid(cy) {
                let wyz = wy * wz * scale;
                let row = cx * (sy + cy * sz);
                for (sx, wx) in b[0].iter_valid(cx) {
                    out.push((offset + row + sx, wx * wyz));
                }
            }
        }
    }

    /// Partial derivative of order `derivs` at `p`.
    pub fn eval_derivative(&self, derivs: [usize; 3], p: Vec3<T>) -> T {
        let mut cache = BasisCache::new(&self.axes, p);
        self.contract(&cache.bases(self.orders, derivs))
    }

    pub fn eval(&self, p: Vec3<T>) -> T {
        self.eval_derivative([0, 0, 0], p)
    }

    /// Brute-force evaluation summing every basis function of the lattice.
    pub fn eval_exhaustive(&self, p: Vec3<T>) -> T {
        let mut acc = T::zero();
        for idx in 0..self.len() {
            let s = self.unravel(idx);
            let mut w = self.coeffs[idx];
            for a in 0..3 {
                let i = self.axes[a].knot_index(s[a], self.orders[a]);
                w *= self.axes[a]
                    .eval_knot_basis(i, self.orders[a], p[a])
                    .expect("index in range");
            }
            acc += w;
        }
        acc
    }

    /// Exact representation on the twice finer lattice `fine_axes`.
    ///
    /// Fine functions whose support misses the domain are dropped; they
    /// vanish there, so the represented function is unchanged on the domain.
    pub fn refined(&self, fine_axes: &[KnotAxis<T>; 3]) -> Result<TensorSpline<T>> {
        for a in 0..3 {
            let (c, f) = (&self.axes[a], &fine_axes[a]);
            let ratio = c.spacing() / f.spacing();
            if (ratio - T::lit(2.0)).abs() > T::lit(1e-9)
                || c.knot_count() * 2 != f.knot_count()
                || (c.origin() - f.origin()).abs() > T::lit(1e-9) * c.spacing()
            {
                return Err(Error::Config("refinement lattice is not a dyadic split".into()));
            }
        }
        let mut data = self.coeffs.clone();
        let mut counts = self.counts;
        for a in 0..3 {
            let k = self.orders[a];
            let w: Vec<T> = subdivision_weights(k).into_iter().map(T::lit).collect();
            let fine_count = fine_axes[a].basis_count(k);
            let kk = k.get() as isize;
            let mut new_counts = counts;
            new_counts[a] = fine_count;
            let mut out = vec![T::zero(); new_counts[0] * new_counts[1] * new_counts[2]];
            let idx = |s: [usize; 3], n: [usize; 3]| s[0] + n[0] * (s[1] + n[1] * s[2]);
            for flat in 0..data.len() {
                let s = [
                    flat % counts[0],
                    (flat / counts[0]) % counts[1],
                    flat / (counts[0] * counts[1]),
                ];
                let c = data[flat];
                if c == T::zero() {
                    continue;
                }
                let i = s[a] as isize - kk;
                for (j, wj) in w.iter().enumerate() {
                    let m = 2 * i + j as isize;
                    let fs = m + kk;
                    if fs < 0 || fs as usize >= fine_count {
                        continue;
                    }
                    let mut t = s;
                    t[a] = fs as usize;
                    out[idx(t, new_counts)] += *wj * c;
                }
            }
            data = out;
            counts = new_counts;
        }
        TensorSpline::with_coeffs(*fine_axes, self.orders, data)
    }
}

/// Calls `$f::<NX, NY, NZ>` when every window is interior and 3 or 4 wide.
macro_rules! dispatch_fixed {
    ($self:ident, $b:ident, $f:ident ( $($arg:expr),* )) => {
        if $self.interior($b) {
            match ($b[0].len, $b[1].len, $b[2].len) {
                (3, 3, 3) => return $self.$f::<3, 3, 3>($($arg),*),
                (4, 3, 3) => return $self.$f::<4, 3, 3>($($arg),*),
                (3, 4, 3) => return $self.$f::<3, 4, 3>($($arg),*),
                (3, 3, 4) => return $self.$f::<3, 3, 4>($($arg),*),
                (4, 4, 4) => return $self.$f::<4, 4, 4>($($arg),*),
                _ => {}
            }
        }
    };
}

impl<T: Real> TensorSpline<T> {
    #[inline]
    fn interior(&self, b: &[LocalBasis<T>; 3]) -> bool {
        (0..3).all(|a| b[a].start >= 0 && b[a].start as usize + b[a].len <= self.counts[a])
    }

    /// `sum_s wx[sx] wy[sy] wz[sz] c[s]` over the local window.
    #[inline]
    pub(crate) fn contract(&self, b: &[LocalBasis<T>; 3]) -> T {
        dispatch_fixed!(self, b, contract_fixed(b));
        self.contract_clipped(b)
    }

    /// Value and gradient in one sweep; `d` holds the first-derivative bases
    /// (same windows as `b`).
    #[inline]
    pub(crate) fn contract_with_gradient(&self, b: &[LocalBasis<T>; 3], d: &[LocalBasis<T>; 3]) -> (T, [T; 3]) {
        dispatch_fixed!(self, b, contract_with_gradient_fixed(b, d));
        self.contract_with_gradient_clipped(b, d)
    }

    /// Adds `scale * wx * wy * wz` to `out` over the local window.
    #[inline]
    pub(crate) fn spray(&self, b: &[LocalBasis<T>; 3], scale: T, out: &mut [T]) {
        dispatch_fixed!(self, b, spray_fixed(b, scale, out));
        self.spray_clipped(b, scale, out)
    }

    #[inline(always)]
    fn base_index(&self, b: &[LocalBasis<T>; 3], jy: usize, jz: usize) -> usize {
        let [cx, cy, _] = self.counts;
        b[0].start as usize + cx * (b[1].start as usize + jy + cy * (b[2].start as usize + jz))
    }

    #[inline(always)]
    fn contract_fixed<const NX: usize, const NY: usize, const NZ: usize>(&self, b: &[LocalBasis<T>; 3]) -> T {
        let mut acc = T::zero();
        for jz in 0..NZ {
            let mut plane = T::zero();
            for jy in 0..NY {
                let base = self.base_index(b, jy, jz);
                let row = &self.coeffs[base..base + NX];
                let mut inner = T::zero();
                for jx in 0..NX {
                    inner += b[0].weights[jx] * row[jx];
                }
                plane += b[1].weights[jy] * inner;
            }
            acc += b[2].weights[jz] * plane;
        }
        acc
    }

    #[inline(always)]
    fn contract_with_gradient_fixed<const NX: usize, const NY: usize, const NZ: usize>(
        &self,
        b: &[LocalBasis<T>; 3],
        d: &[LocalBasis<T>; 3],
    ) -> (T, [T; 3]) {
        let (mut v, mut gx, mut gy, mut gz) = (T::zero(), T::zero(), T::zero(), T::zero());
        for jz in 0..NZ {
            let (mut p0, mut px, mut py) = (T::zero(), T::zero(), T::zero());
            for jy in 0..NY {
                let base = self.base_index(b, jy, jz);
                let row = &self.coeffs[base..base + NX];
                let (mut s0, mut s1) = (T::zero(), T::zero());
                for jx in 0..NX {
                    s0 += b[0].weights[jx] * row[jx];
                    s1 += d[0].weights[jx] * row[jx];
                }
                p0 += b[1].weights[jy] * s0;
                px += b[1].weights[jy] * s1;
                py += d[1].weights[jy] * s0;
            }
            let wz = b[2].weights[jz];
            v += wz * p0;
            gx += wz * px;
            gy += wz * py;
            gz += d[2].weights[jz] * p0;
        }
        (v, [gx, gy, gz])
    }

    #[inline(always)]
    fn spray_fixed<const NX: usize, const NY: usize, const NZ: usize>(
        &self,
        b: &[LocalBasis<T>; 3],
        scale: T,
        out: &mut [T],
    ) {
        for jz in 0..NZ {
            let wz = b[2].weights[jz] * scale;
            for jy in 0..NY {
                let wyz = b[1].weights[jy] * wz;
                let base = self.base_index(b, jy, jz);
                let row = &mut out[base..base + NX];
                for jx in 0..NX {
                    row[jx] += b[0].weights[jx] * wyz;
                }
            }
        }
    }
}
