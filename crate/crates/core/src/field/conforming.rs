use crate::bspline1d::SplineOrder;
use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3};

use super::{BasisCache, ControlGrid, SplineVelocity, TensorSpline};

/// Divergence-conforming B-spline velocity field.
///
/// With divergence order `k = grid.order`, component `U` has order `k + 1`
/// along `U` and `k` along the other axes. Its divergence is the order-`k`
/// spline with coefficients
/// `psi_i = (phiX_i - phiX_{i-1})/dx + (phiY_i - phiY_{i-1})/dy + (phiZ_i - phiZ_{i-1})/dz`,
/// exact everywhere on the grid domain.
///
/// In storage indices the backward difference along the component's own axis
/// reads `phiX[s + ex] - phiX[s]`: the extra order shifts that axis' storage
/// offset by one, so every `psi` lattice entry has both neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct DivConformingSvf<T> {
    grid: ControlGrid<T>,
    comps: [TensorSpline<T>; 3],
}

impl<T: Real> DivConformingSvf<T> {
    /// Per-axis basis orders of component `c` for divergence order `k`.
    pub fn component_orders(k: SplineOrder, c: usize) -> Result<[SplineOrder; 3]> {
        let high = k.raise()?;
        let mut o = [k; 3];
        o[c] = high;
        Ok(o)
    }

    /// Zero field; requires a divergence order of at least 2 whose raised
    /// order is still supported.
    pub fn new(grid: ControlGrid<T>) -> Result<Self> {
        if grid.order.get() < 2 {
            return Err(Error::Config(format!(
                "divergence order must be at least 2, got {}",
                grid.order
            )));
        }
        let comps = [
            TensorSpline::zeros(grid.axes, Self::component_orders(grid.order, 0)?),
            TensorSpline::zeros(grid.axes, Self::component_orders(grid.order, 1)?),
            TensorSpline::zeros(grid.axes, Self::component_orders(grid.order, 2)?),
        ];
        Ok(DivConformingSvf { grid, comps })
    }

    pub fn from_components(grid: ControlGrid<T>, coeffs: [Vec<T>; 3]) -> Result<Self> {
        let mut svf = Self::new(grid)?;
        for (comp, data) in svf.comps.iter_mut().zip(coeffs) {
            *comp = TensorSpline::with_coeffs(grid.axes, comp.orders(), data)?;
        }
        Ok(svf)
    }

    pub fn from_coefficient_vector(grid: ControlGrid<T>, theta: &[T]) -> Result<Self> {
        let mut svf = Self::new(grid)?;
        svf.set_coefficients(theta)?;
        Ok(svf)
    }

    /// Quasi-interpolant of `f`: each coefficient takes the value of the
    /// matching component of `f` at the centre of its basis support.
    /// Reproduces affine fields exactly.
    pub fn from_fn(grid: ControlGrid<T>, f: impl Fn(Vec3<T>) -> Vec3<T>) -> Result<Self> {
        let mut svf = Self::new(grid)?;
        for c in 0..3 {
            let comp = &mut svf.comps[c];
            let orders = comp.orders();
            for idx in 0..comp.len() {
                let s = comp.unravel(idx);
                let mut p = [T::zero(); 3];
                for a in 0..3 {
                    let i = grid.axes[a].knot_index(s[a], orders[a]);
                    let (lo, hi) = grid.axes[a].support(i, orders[a]);
                    p[a] = (lo + hi) * T::lit(0.5);
                }
                comp.coeffs_mut()[idx] = f(p)[c];
            }
        }
        Ok(svf)
    }

    /// Higher-order quasi-interpolant: per axis the three-point rule
    /// `(-f(u - d) + w f(u) - f(u + d)) / (w - 2)` around each support centre,
    /// with `w = 10` for quadratic and `w = 8` for cubic factors. Reproduces
    /// polynomials up to the basis degree, so the error is one order higher
    /// than [`Self::from_fn`].
    pub fn quasi_interpolate(grid: ControlGrid<T>, f: impl Fn(Vec3<T>) -> Vec3<T>) -> Result<Self> {
        let mut svf = Self::new(grid)?;
        let rule = |k: usize| -> [T; 3] {
            match k {
                2 => [T::lit(-0.125), T::lit(1.25), T::lit(-0.125)],
                3 => [T::lit(-1.0 / 6.0), T::lit(8.0 / 6.0), T::lit(-1.0 / 6.0)],
                _ => [T::zero(), T::one(), T::zero()],
            }
        };
        for c in 0..3 {
            let comp = &mut svf.comps[c];
            let orders = comp.orders();
            let w: [[T; 3]; 3] = [rule(orders[0].get()), rule(orders[1].get()), rule(orders[2].get())];
            for idx in 0..comp.len() {
                let s = comp.unravel(idx);
                let mut centre = [T::zero(); 3];
                for a in 0..3 {
                    let i = grid.axes[a].knot_index(s[a], orders[a]);
                    let (lo, hi) = grid.axes[a].support(i, orders[a]);
                    centre[a] = (lo + hi) * T::lit(0.5);
                }
                let mut acc = T::zero();
                for (jz, wz) in w[2].iter().enumerate() {
                    for (jy, wy) in w[1].iter().enumerate() {
                        for (jx, wx) in w[0].iter().enumerate() {
                            let wt = *wx * *wy * *wz;
                            if wt == T::zero() {
                                continue;
                            }
                            let off = [jx, jy, jz];
                            let p = [0, 1, 2].map(|a| {
                                centre[a] + grid.axes[a].spacing() * T::from_isize(off[a] as isize - 1).expect("small")
                            });
                            acc += wt * f(p)[c];
                        }
                    }
                }
                comp.coeffs_mut()[idx] = acc;
            }
        }
        Ok(svf)
    }

    pub fn divergence_order(&self) -> SplineOrder {
        self.grid.order
    }

    /// Shape of the `psi` lattice (`n + k` per axis).
    pub fn psi_counts(&self) -> [usize; 3] {
        let k = self.grid.order;
        [
            self.grid.axes[0].basis_count(k),
            self.grid.axes[1].basis_count(k),
            self.grid.axes[2].basis_count(k),
        ]
    }

    /// Divergence coefficient at `psi` storage index `s`.
    pub fn psi(&self, s: [usize; 3]) -> T {
        let sp = self.grid.spacing();
        let mut acc = T::zero();
        for (c, comp) in self.comps.iter().enumerate() {
            let mut hi = s;
            hi[c] += 1;
            acc += (comp.coeffs()[comp.index(hi)] - comp.coeffs()[comp.index(s)]) / sp[c];
        }
        acc
    }

    /// All divergence coefficients, x fastest over [`Self::psi_counts`].
    pub fn psi_coefficients(&self) -> Vec<T> {
        let [nx, ny, nz] = self.psi_counts();
        let mut out = Vec::with_capacity(nx * ny * nz);
        for sz in 0..nz {
            for sy in 0..ny {
                for sx in 0..nx {
                    out.push(self.psi([sx, sy, sz]));
                }
            }
        }
        out
    }

    /// The divergence as an explicit order-`k` scalar spline.
    pub fn divergence_spline(&self) -> TensorSpline<T> {
        let k = self.grid.order;
        TensorSpline::with_coeffs(self.grid.axes, [k; 3], self.psi_coefficients())
            .expect("psi lattice matches order-k spline")
    }

    pub fn divergence_unchecked(&self, p: Vec3<T>) -> T {
        let k = self.grid.order;
        let mut cache = BasisCache::new(&self.grid.axes, p);
        let b = cache.bases([k; 3], [0, 0, 0]);
        let [cx, cy, cz] = self.psi_counts();
        let mut acc = T::zero();
        for (sz, wz) in b[2].iter_valid(cz) {
            for (sy, wy) in b[1].iter_valid(cy) {
                let wyz = wy * wz;
                for (sx, wx) in b[0].iter_valid(cx) {
                    acc += wx * wyz * self.psi([sx, sy, sz]);
                }
            }
        }
        acc
    }

    /// Divergence at `p` from the `psi` spline.
    pub fn eval_divergence(&self, p: Vec3<T>) -> Result<T> {
        self.grid.check_domain(p)?;
        Ok(self.divergence_unchecked(p))
    }
}

impl<T: Real> SplineVelocity<T> for DivConformingSvf<T> {
    fn grid(&self) -> &ControlGrid<T> {
        &self.grid
    }

    fn components(&self) -> &[TensorSpline<T>; 3] {
        &self.comps
    }

    fn components_mut(&mut self) -> &mut [TensorSpline<T>; 3] {
        &mut self.comps
    }

    fn zeros(grid: ControlGrid<T>) -> Result<Self> {
        Self::new(grid)
    }

    fn family(&self) -> &'static str {
        "div-conforming"
    }
}
