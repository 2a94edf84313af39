use crate::error::{Error, Result};
use crate::scalar::Real;

use super::sparse::CsrMatrix;

/// Stopping rules for the Schur-complement conjugate gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative tolerance on the residual of `A Aᵀ λ = b`.
    pub rel_tol: f64,
    /// Absolute floor on the same residual.
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Target for `‖A θ‖∞` after projection; triggers refinement passes.
    pub feasibility_tol: f64,
    pub max_refinements: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-15,
            max_iter: 5000,
            feasibility_tol: 1e-12,
            max_refinements: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProjectionStats {
    pub cg_iterations: usize,
    pub refinements: usize,
    /// `‖A θ‖∞` of the returned vector.
    pub residual_inf: f64,
}

/// Orthogonal projector onto `ker A`.
///
/// `P θ = θ - Aᵀ λ` with `A Aᵀ λ = A θ`, solved by Jacobi-preconditioned CG.
/// A rank-deficient `A` is fine: the right-hand side always lies in the
/// range of `A Aᵀ`, and CG started from zero stays there.
#[derive(Debug, Clone)]
pub struct NullSpaceProjector<T> {
    a: CsrMatrix<T>,
    at: CsrMatrix<T>,
    inv_diag: Vec<T>,
    opts: CgOptions,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn norm_inf<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

impl<T: Real> NullSpaceProjector<T> {
    pub fn new(a: CsrMatrix<T>) -> Self {
        Self::with_options(a, CgOptions::default())
    }

    pub fn with_options(a: CsrMatrix<T>, opts: CgOptions) -> Self {
        let inv_diag = a
            .row_norms_sq()
            .into_iter()
            .map(|d| if d > T::zero() { T::one() / d } else { T::zero() })
            .collect();
        let at = a.transpose();
        NullSpaceProjector { a, at, inv_diag, opts }
    }

    pub fn matrix(&self) -> &CsrMatrix<T> {
        &self.a
    }

    pub fn options(&self) -> CgOptions {
        self.opts
    }

    pub fn is_trivial(&self) -> bool {
        self.a.nrows() == 0
    }

    pub fn residual(&self, theta: &[T]) -> Vec<T> {
        self.a.mul_vec(theta)
    }

    pub fn residual_inf(&self, theta: &[T]) -> T {
        if self.is_trivial() {
            return T::zero();
        }
        norm_inf(&self.residual(theta))
    }

    fn normal_apply(&self, p: &[T]) -> Vec<T> {
        self.a.mul_vec(&self.at.mul_vec(p))
    }

    /// Approximately solves `A Aᵀ λ = b`; returns `λ` and the iteration count.
    pub fn solve_normal(&self, b: &[T]) -> (Vec<T>, usize) {
        let m = b.len();
        let mut x = vec![T::zero(); m];
        let bnorm = dot(b, b).sqrt();
        if bnorm == T::zero() {
            return (x, 0);
        }
        let tol = (T::lit(self.opts.rel_tol) * bnorm).max(T::lit(self.opts.abs_tol));
        let mut r = b.to_vec();
        let mut z: Vec<T> = r.iter().zip(&self.inv_diag).map(|(&r, &d)| r * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut it = 0;
        while it < self.opts.max_iter {
            it += 1;
            let q = self.normal_apply(&p);
            let pq = dot(&p, &q);
            if !(pq > T::zero()) {
                break;
            }
            let alpha = rz / pq;
            for i in 0..m {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            if dot(&r, &r).sqrt() <= tol {
                break;
            }
            for i in 0..m {
                z[i] = r[i] * self.inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            if !(rz_new > T::zero()) {
                break;
            }
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
        }
        (x, it)
    }

    /// Largest residual accepted before reporting a solver failure.
    fn acceptance_tol(&self, theta: &[T]) -> T {
        let scale = norm_inf(theta).max(T::one());
        T::lit(1e-10).max(T::epsilon() * T::lit(1e4) * scale)
    }

    pub fn project_with_stats(&self, theta0: &[T]) -> Result<(Vec<T>, ProjectionStats)> {
        if theta0.len() != self.a.ncols() {
            return Err(Error::Shape {
                expected: self.a.ncols(),
                actual: theta0.len(),
            });
        }
        let mut stats = ProjectionStats::default();
        let mut theta = theta0.to_vec();
        if self.is_trivial() {
            return Ok((theta, stats));
        }
        let target = T::lit(self.opts.feasibility_tol);
        let mut res = self.residual(&theta);
        let mut res_inf = norm_inf(&res);
        let mut pass = 0;
        while res_inf > target && pass <= self.opts.max_refinements {
            let (lambda, its) = self.solve_normal(&res);
            stats.cg_iterations += its;
            let corr = self.at.mul_vec(&lambda);
            for (t, c) in theta.iter_mut().zip(&corr) {
                *t -= *c;
            }
            res = self.residual(&theta);
            let next = norm_inf(&res);
            pass += 1;
            if !(next < res_inf) {
                res_inf = next;
                break;
            }
            res_inf = next;
        }
        stats.refinements = pass.saturating_sub(1);
        stats.residual_inf = res_inf.as_f64();
        if !(res_inf <= self.acceptance_tol(theta0)) {
            return Err(Error::SolverDivergence {
                iterations: stats.cg_iterations,
                residual: stats.residual_inf,
            });
        }
        Ok((theta, stats))
    }

    pub fn project(&self, theta0: &[T]) -> Result<Vec<T>> {
        self.project_with_stats(theta0).map(|(t, _)| t)
    }

    /// Projects in place; used on gradients and search directions.
    pub fn project_in_place(&self, theta: &mut [T]) -> Result<()> {
        let p = self.project(theta)?;
        theta.copy_from_slice(&p);
        Ok(())
    }
}
