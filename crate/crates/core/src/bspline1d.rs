//! Uniform 1D B-spline kernels of orders 0 to 3.
//!
//! `eval_centered` is the cardinal B-spline centred on the origin. A knot
//! axis turns it into the shifted basis `B^k_i(u) = B^k((u - u_i)/du - (k+1)/2)`
//! whose support is the open interval `]u_i, u_i + (k+1) du[`.
//!
//! Order 0 uses the half-open cell `[-1/2, 1/2[` so that shifted boxes tile the
//! line; it is the only order whose support includes its left end point.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Polynomial order of a B-spline (degree, in the usual terminology).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SplineOrder(u8);

impl SplineOrder {
    pub const MAX: usize = 3;
    pub const CONSTANT: SplineOrder = SplineOrder(0);
    pub const LINEAR: SplineOrder = SplineOrder(1);
    pub const QUADRATIC: SplineOrder = SplineOrder(2);
    pub const CUBIC: SplineOrder = SplineOrder(3);

    pub fn new(k: usize) -> Result<Self> {
        if k > Self::MAX {
            return Err(Error::InvalidOrder(k));
        }
        Ok(SplineOrder(k as u8))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// The order one below, if any.
    #[inline]
    pub fn lower(self) -> Option<SplineOrder> {
        self.0.checked_sub(1).map(SplineOrder)
    }

    /// The order one above, if still supported.
    pub fn raise(self) -> Result<SplineOrder> {
        SplineOrder::new(self.get() + 1)
    }
}

impl std::fmt::Display for SplineOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Centred cardinal B-spline `B^k(t)`.
pub fn eval_centered<T: Real>(k: SplineOrder, t: T) -> T {
    let half = T::lit(0.5);
    let a = t.abs();
    match k.0 {
        0 => {
            if t >= -half && t < half {
                T::one()
            } else {
                T::zero()
            }
        }
        1 => {
            if a < T::one() {
                T::one() - a
            } else {
                T::zero()
            }
        }
        2 => {
            if a < half {
                T::lit(0.75) - t * t
            } else if a < T::lit(1.5) {
                let r = T::lit(1.5) - a;
                half * r * r
            } else {
                T::zero()
            }
        }
        _ => {
            if a < T::one() {
                (T::lit(4.0) - T::lit(3.0) * t * t * (T::lit(2.0) - a)) / T::lit(6.0)
            } else if a < T::lit(2.0) {
                let r = T::lit(2.0) - a;
                r * r * r / T::lit(6.0)
            } else {
                T::zero()
            }
        }
    }
}

/// First derivative `dB^k/dt` via `B^{k-1}(t + 1/2) - B^{k-1}(t - 1/2)`.
pub fn eval_centered_derivative<T: Real>(k: SplineOrder, t: T) -> Result<T> {
    let lower = k
        .lower()
        .ok_or_else(|| Error::Unsupported("order-0 B-spline has no derivative".into()))?;
    let half = T::lit(0.5);
    Ok(eval_centered(lower, t + half) - eval_centered(lower, t - half))
}

/// Second derivative, defined for `k >= 2` (piecewise constant for `k = 2`).
pub fn eval_centered_second_derivative<T: Real>(k: SplineOrder, t: T) -> Result<T> {
    let lower = k
        .lower()
        .and_then(SplineOrder::lower)
        .ok_or_else(|| Error::Unsupported(format!("order-{k} B-spline has no second derivative")))?;
    Ok(eval_centered(lower, t + T::one()) - T::lit(2.0) * eval_centered(lower, t)
        + eval_centered(lower, t - T::one()))
}

/// Centred kernel or one of its first two derivatives.
#[inline]
pub(crate) fn eval_centered_nth<T: Real>(k: SplineOrder, deriv: usize, t: T) -> T {
    match deriv {
        0 => eval_centered(k, t),
        1 => eval_centered_derivative(k, t).unwrap_or_else(|_| T::zero()),
        _ => eval_centered_second_derivative(k, t).unwrap_or_else(|_| T::zero()),
    }
}

/// Uniform knot lattice along one axis.
///
/// Knots sit at `u_i = origin + i * spacing`. For a basis of order `k` the
/// functions whose support meets the domain `[origin, origin + n * spacing]`
/// carry the indices `i = -k, ..., n - 1`; they are stored at
/// `s = i + k`, i.e. the storage offset equals the order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnotAxis<T> {
    spacing: T,
    knot_count: usize,
    origin: T,
}

/// The nonzero window of an axis basis at one coordinate.
///
/// `weights[j]` belongs to storage index `start + j`; entries whose storage
/// index falls outside the lattice are zero.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis<T> {
    pub start: isize,
    pub len: usize,
    pub weights: [T; 4],
}

impl<T: Real> LocalBasis<T> {
    /// Iterates `(storage_index, weight)` pairs inside `0..count`.
    pub fn iter_valid(&self, count: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (0..self.len).filter_map(move |j| {
            let s = self.start + j as isize;
            if s >= 0 && (s as usize) < count {
                Some((s as usize, self.weights[j]))
            } else {
                None
            }
        })
    }
}

impl<T: Real> KnotAxis<T> {
    pub fn new(spacing: T, knot_count: usize, origin: T) -> Result<Self> {
        if !(spacing > T::zero()) || !spacing.is_finite() {
            return Err(Error::Config(format!("knot spacing must be positive, got {spacing}")));
        }
        if knot_count == 0 {
            return Err(Error::Config("knot axis needs at least one cell".into()));
        }
        if !origin.is_finite() {
            return Err(Error::Config("knot origin must be finite".into()));
        }
        Ok(KnotAxis { spacing, knot_count, origin })
    }

    #[inline]
    pub fn spacing(&self) -> T {
        self.spacing
    }

    #[inline]
    pub fn knot_count(&self) -> usize {
        self.knot_count
    }

    #[inline]
    pub fn origin(&self) -> T {
        self.origin
    }

    /// Upper end of the covered domain, `origin + n * spacing`.
    #[inline]
    pub fn end(&self) -> T {
        self.origin + self.spacing * T::from_usize_lossy(self.knot_count)
    }

    /// Number of basis functions of order `k` meeting the domain.
    #[inline]
    pub fn basis_count(&self, k: SplineOrder) -> usize {
        self.knot_count + k.get()
    }

    /// Knot position for a (possibly negative) knot index.
    #[inline]
    pub fn knot(&self, i: isize) -> T {
        self.origin + self.spacing * T::from_isize(i).expect("index representable")
    }

    /// Maps a knot index in `-k..n` to its storage index.
    pub fn storage_index(&self, i: isize, k: SplineOrder) -> Result<usize> {
        let lo = -(k.get() as isize);
        let hi = self.knot_count as isize;
        if i < lo || i >= hi {
            return Err(Error::Index {
                index: i.to_string(),
                range: format!("{lo}..{hi}"),
            });
        }
        Ok((i - lo) as usize)
    }

    #[inline]
    pub fn knot_index(&self, storage: usize, k: SplineOrder) -> isize {
        storage as isize - k.get() as isize
    }

    /// Support interval `]u_i, u_i + (k+1) du[` of basis `i` (knot index).
    pub fn support(&self, i: isize, k: SplineOrder) -> (T, T) {
        let lo = self.knot(i);
        (lo, lo + self.spacing * T::from_usize_lossy(k.get() + 1))
    }

    /// `B^k_i(u)` for knot index `i`.
    pub fn eval_knot_basis(&self, i: isize, k: SplineOrder, u: T) -> Result<T> {
        self.storage_index(i, k)?;
        Ok(self.eval_unchecked(i, k, 0, u))
    }

    #[inline]
    fn eval_unchecked(&self, i: isize, k: SplineOrder, deriv: usize, u: T) -> T {
        let t = (u - self.knot(i)) / self.spacing - T::lit((k.get() + 1) as f64 * 0.5);
        let v = eval_centered_nth(k, deriv, t);
        match deriv {
            0 => v,
            1 => v / self.spacing,
            _ => v / (self.spacing * self.spacing),
        }
    }

    /// Values (or `deriv`-th derivatives in `u`) of all order-`k` functions
    /// that can be nonzero at `u`.
    pub fn local_basis(&self, k: SplineOrder, deriv: usize, u: T) -> LocalBasis<T> {
        let (cell, f) = self.locate(u);
        self.basis_in_cell(k, deriv, cell, f)
    }

    /// Cell index `floor((u - origin) / spacing)` and the offset in it.
    #[inline]
    pub(crate) fn locate(&self, u: T) -> (isize, T) {
        let t = (u - self.origin) / self.spacing;
        let fl = t.floor();
        (fl.to_isize().unwrap_or(isize::MIN / 2), t - fl)
    }

    /// [`KnotAxis::local_basis`] from a precomputed [`KnotAxis::locate`].
    #[inline]
    pub(crate) fn basis_in_cell(&self, k: SplineOrder, deriv: usize, cell: isize, f: T) -> LocalBasis<T> {
        let mut weights = uniform_weights(k, deriv, f);
        if deriv > 0 {
            let mut scale = self.spacing.recip();
            if deriv > 1 {
                scale = scale * scale;
            }
            weights.iter_mut().for_each(|w| *w *= scale);
        }
        LocalBasis {
            start: cell,
            len: k.get() + 1,
            weights,
        }
    }

    /// Whether `u` lies in the closed domain `[origin, end]`.
    #[inline]
    pub fn contains(&self, u: T) -> bool {
        u >= self.origin && u <= self.end()
    }
}

/// Polynomial pieces of the `k + 1` functions nonzero on a cell, at offset
/// `f` in `[0, 1)` from its left knot, in units of the spacing.
#[inline]
fn uniform_weights<T: Real>(k: SplineOrder, deriv: usize, f: T) -> [T; 4] {
    let z = T::zero();
    let one = T::one();
    let g = one - f;
    match (k.get(), deriv) {
        (0, 0) => [one, z, z, z],
        (1, 0) => [g, f, z, z],
        (1, 1) => [-one, one, z, z],
        (2, 0) => {
            let h = T::lit(0.5);
            [h * g * g, T::lit(0.75) - (f - h) * (f - h), h * f * f, z]
        }
        (2, 1) => [-g, one - T::lit(2.0) * f, f, z],
        (2, 2) => [one, T::lit(-2.0), one, z],
        (3, 0) => {
            let s = T::lit(1.0 / 6.0);
            let f2 = f * f;
            let f3 = f2 * f;
            [
                s * g * g * g,
                s * (T::lit(4.0) - T::lit(6.0) * f2 + T::lit(3.0) * f3),
                s * (one + T::lit(3.0) * (f + f2 - f3)),
                s * f3,
            ]
        }
        (3, 1) => {
            let h = T::lit(0.5);
            let f2 = f * f;
            [
                -h * g * g,
                T::lit(1.5) * f2 - T::lit(2.0) * f,
                h + f - T::lit(1.5) * f2,
                h * f2,
            ]
        }
        (3, 2) => [g, T::lit(3.0) * f - T::lit(2.0), one - T::lit(3.0) * f, f],
        _ => [z; 4],
    }
}

/// Free function form of [`KnotAxis::eval_knot_basis`].
pub fn eval_knot_basis<T: Real>(axis: &KnotAxis<T>, i: isize, k: SplineOrder, u: T) -> Result<T> {
    axis.eval_knot_basis(i, k, u)
}

/// Two-scale relation weights: a basis of spacing `2h` is
/// `sum_j w_j * B_{2i+j}` over the basis of spacing `h`.
pub(crate) fn subdivision_weights(k: SplineOrder) -> Vec<f64> {
    let k = k.get();
    let mut w = vec![0.0; k + 2];
    let mut binom = 1.0;
    for (j, wj) in w.iter_mut().enumerate() {
        *wj = binom / (1u64 << k) as f64;
        binom = binom * (k + 1 - j) as f64 / (j + 1) as f64;
    }
    w
}
