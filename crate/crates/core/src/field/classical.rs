use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3};

use super::{ControlGrid, SplineVelocity, TensorSpline};

/// Classical B-spline velocity field: every component uses order
/// `grid.order` along every axis, one 3-vector coefficient per knot.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalSvf<T> {
    grid: ControlGrid<T>,
    comps: [TensorSpline<T>; 3],
}

impl<T: Real> ClassicalSvf<T> {
    pub fn new(grid: ControlGrid<T>) -> Self {
        let z = TensorSpline::zeros(grid.axes, [grid.order; 3]);
        ClassicalSvf {
            grid,
            comps: [z.clone(), z.clone(), z],
        }
    }

    pub fn from_coefficient_vector(grid: ControlGrid<T>, theta: &[T]) -> Result<Self> {
        let mut svf = Self::new(grid);
        svf.set_coefficients(theta)?;
        Ok(svf)
    }

    /// Knot lattice shape (identical for all three components).
    pub fn counts(&self) -> [usize; 3] {
        self.comps[0].counts()
    }

    /// Coefficient vector `phi_i` at storage index `s`.
    pub fn coeff(&self, s: [usize; 3]) -> Vec3<T> {
        let i = self.comps[0].index(s);
        [self.comps[0].coeffs()[i], self.comps[1].coeffs()[i], self.comps[2].coeffs()[i]]
    }

    pub fn set_coeff(&mut self, s: [usize; 3], phi: Vec3<T>) {
        let i = self.comps[0].index(s);
        for c in 0..3 {
            self.comps[c].coeffs_mut()[i] = phi[c];
        }
    }

    /// The divergence of a classical field is not itself a B-spline.
    pub fn eval_divergence(&self, _p: Vec3<T>) -> Result<T> {
        Err(Error::Unsupported(
            "the divergence of a classical B-spline field is not a B-spline; use divergence_via_jacobian".into(),
        ))
    }

    /// Divergence as the trace of the analytic Jacobian.
    pub fn divergence_via_jacobian(&self, p: Vec3<T>) -> Result<T> {
        let j = self.eval_jacobian(p)?;
        Ok(j[0][0] + j[1][1] + j[2][2])
    }
}

impl<T: Real> SplineVelocity<T> for ClassicalSvf<T> {
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
        Ok(Self::new(grid))
    }

    fn family(&self) -> &'static str {
        "classical"
    }
}
