//! Image dissimilarities, bending energy and the symmetric registration
//! objective with its gradient with respect to the spline coefficients.

mod bending;
mod lncc;
mod nmi;
mod ssd;

pub use bending::{bending_energy, bending_energy_value_grad, BendingOperator};
pub use lncc::{lncc_floor, lncc_value_grad, lncc_value_grad_with, GaussianWindow, LNCC_VARIANCE_FLOOR};
pub use nmi::{nmi_hard, nmi_value_grad, nmi_value_grad_with, IntensityRange, NmiSettings, ParzenWindow};
pub use ssd::ssd_value_grad;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SplineVelocity;
use crate::flow::EulerConfig;
use crate::interp::{ImageSampler, Interpolation};
use crate::io_image::Image3D;
use crate::scalar::{Real, Vec3};

/// Fixed number of partial sums in parallel reductions, independent of the
/// thread count, so results are bitwise reproducible.
const REDUCTION_CHUNKS: usize = 32;

/// `sum_i f(i, grad)` over `0..n` with per-chunk gradient buffers of length
/// `len`, summed in chunk order.
pub(crate) fn chunked_sum<T: Real>(n: usize, len: usize, f: impl Fn(usize, &mut [T]) -> T + Sync) -> (T, Vec<T>) {
    let chunks = n.clamp(1, REDUCTION_CHUNKS);
    let per = n.div_ceil(chunks).max(1);
    let partials: Vec<(T, Vec<T>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut g = vec![T::zero(); len];
            let mut v = T::zero();
            for i in c * per..((c + 1) * per).min(n) {
                v += f(i, &mut g);
            }
            (v, g)
        })
        .collect();
    let mut value = T::zero();
    let mut grad = vec![T::zero(); len];
    for (v, g) in partials {
        value += v;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    (value, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Ssd,
    Lncc,
    #[default]
    Nmi,
}

impl std::str::FromStr for Similarity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssd" => Ok(Similarity::Ssd),
            "lncc" => Ok(Similarity::Lncc),
            "nmi" => Ok(Similarity::Nmi),
            other => Err(Error::Config(format!("unknown similarity '{other}'"))),
        }
    }
}

/// How the similarity gradient is carried through the exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Reverse accumulation through every Euler step.
    #[default]
    Adjoint,
    /// Basis map at the trajectory end point only.
    OneStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub similarity: Similarity,
    pub similarity_weight: f64,
    pub bending_weight: f64,
    /// Gaussian window sigma in mm.
    pub lncc_window_sigma: f64,
    pub nmi_bins: usize,
    pub interpolation: Interpolation,
    pub gradient_mode: GradientMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            similarity: Similarity::Nmi,
            similarity_weight: 0.95,
            bending_weight: 0.05,
            lncc_window_sigma: 5.0,
            nmi_bins: 64,
            interpolation: Interpolation::Cubic,
            gradient_mode: GradientMode::Adjoint,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(self.similarity_weight) || !ok(self.bending_weight) {
            return Err(Error::Config("objective weights must be finite and non-negative".into()));
        }
        if self.nmi_bins < 8 {
            return Err(Error::Config(format!("nmi_bins must be at least 8, got {}", self.nmi_bins)));
        }
        if !(self.lncc_window_sigma > 0.0) {
            return Err(Error::Config("lncc_window_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Objective value split into its parts (weights not applied).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    /// `L(I1 o exp(v), I2)`.
    pub forward: f64,
    /// `L(I1, I2 o exp(-v))`.
    pub backward: f64,
    pub bending: f64,
    pub total: f64,
}

/// Similarity state for one direction of the symmetric objective.
struct Term<T> {
    /// Image sampled through the flow.
    moving: ImageSampler<T>,
    /// Image compared against.
    fixed: Image3D<T>,
    metric: Metric<T>,
    /// `+1` for `exp(v)`, `-1` for `exp(-v)`.
    sign: T,
}

enum Metric<T> {
    Ssd,
    Lncc {
        window: GaussianWindow<T>,
        floor_fixed: T,
        floor_moving: T,
    },
    Nmi(NmiSettings),
}

impl<T: Real> Metric<T> {
    fn eval(&self, fixed: &Image3D<T>, warped: &Image3D<T>) -> Result<(T, Vec<T>)> {
        match self {
            Metric::Ssd => ssd_value_grad(fixed, warped),
            Metric::Lncc {
                window,
                floor_fixed,
                floor_moving,
            } => lncc_value_grad_with(fixed, warped, window, *floor_fixed, *floor_moving),
            Metric::Nmi(s) => nmi_value_grad_with(fixed, warped, s),
        }
    }
}

/// Symmetric objective
/// `w_s (L(I1 o exp v, I2) + L(I1, I2 o exp(-v))) / 2 + w_b R(v)`
/// over the coefficient vector of a field family `F`.
///
/// LNCC floors and NMI intensity ranges are fixed from the input images at
/// construction so the objective is a smooth function of the coefficients.
pub struct Objective<T, F> {
    template: F,
    cfg: ObjectiveConfig,
    euler: EulerConfig,
    terms: [Term<T>; 2],
    bending: BendingOperator<T>,
}

impl<T: Real, F: SplineVelocity<T>> Objective<T, F> {
    /// `template` fixes the field family and control grid.
    pub fn new(template: F, i1: &Image3D<T>, i2: &Image3D<T>, cfg: ObjectiveConfig, euler: EulerConfig) -> Result<Self> {
        cfg.validate()?;
        euler.validate()?;
        i1.grid.check_same_frame(&i2.grid, "objective images")?;
        let metric = |fixed: &Image3D<T>, moving: &Image3D<T>| -> Result<Metric<T>> {
            Ok(match cfg.similarity {
                Similarity::Ssd => Metric::Ssd,
                Similarity::Lncc => Metric::Lncc {
                    window: GaussianWindow::new(&fixed.grid, cfg.lncc_window_sigma)?,
                    floor_fixed: lncc_floor(fixed),
                    floor_moving: lncc_floor(moving),
                },
                Similarity::Nmi => Metric::Nmi(NmiSettings {
                    bins: cfg.nmi_bins,
                    window: ParzenWindow::Cubic,
                    reference_range: IntensityRange::of(fixed, 0.05),
                    warped_range: IntensityRange::of(moving, 0.05),
                }),
            })
        };
        let terms = [
            Term {
                moving: ImageSampler::with_default_padding(i1, cfg.interpolation),
                fixed: i2.clone(),
                metric: metric(i2, i1)?,
                sign: T::one(),
            },
            Term {
                moving: ImageSampler::with_default_padding(i2, cfg.interpolation),
                fixed: i1.clone(),
                metric: metric(i1, i2)?,
                sign: -T::one(),
            },
        ];
        let bending = BendingOperator::new(&template, &i2.grid);
        Ok(Objective {
            bending,
            template,
            cfg,
            euler,
            terms,
        })
    }

    pub fn param_count(&self) -> usize {
        self.template.param_count()
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    pub fn euler(&self) -> &EulerConfig {
        &self.euler
    }

    pub fn template(&self) -> &F {
        &self.template
    }

    pub fn field(&self, theta: &[T]) -> Result<F> {
        self.template.with_coefficients(theta)
    }

    fn trajectory(&self, svf: &F, sign: T, p: Vec3<T>, path: &mut Vec<Vec3<T>>) {
        let tau = self.euler.tau::<T>() * sign;
        path.clear();
        let mut m = p;
        path.push(m);
        for _ in 0..self.euler.steps {
            let v = crate::flow::velocity_or_zero(svf, m);
            for a in 0..3 {
                m[a] += tau * v[a];
            }
            path.push(m);
        }
    }

    /// Warped image; with `paths`, the full trajectories are kept as well
    /// (`steps + 1` points per voxel).
    fn warped(&self, svf: &F, term: &Term<T>, paths: Option<&mut Vec<Vec3<T>>>) -> Result<Image3D<T>> {
        let grid = term.fixed.grid;
        let stride = self.euler.steps + 1;
        let data = match paths {
            None => (0..grid.len())
                .into_par_iter()
                .map_init(Vec::new, |path, i| {
                    self.trajectory(svf, term.sign, grid.center(i), path);
                    term.moving.sample(*path.last().expect("non-empty path"))
                })
                .collect(),
            Some(all) => {
                all.clear();
                all.resize(grid.len() * stride, [T::zero(); 3]);
                all.par_chunks_mut(stride)
                    .enumerate()
                    .map_init(Vec::new, |path, (i, out)| {
                        self.trajectory(svf, term.sign, grid.center(i), path);
                        out.copy_from_slice(path);
                        term.moving.sample(path[stride - 1])
                    })
                    .collect()
            }
        };
        Image3D::new(grid, data)
    }

    /// Value and gradient of one similarity term.
    fn term_value_grad(&self, svf: &F, term: &Term<T>, want_grad: bool) -> Result<(T, Option<Vec<T>>)> {
        if !want_grad {
            let warped = self.warped(svf, term, None)?;
            return Ok((term.metric.eval(&term.fixed, &warped)?.0, None));
        }
        let mut paths = Vec::new();
        let warped = self.warped(svf, term, Some(&mut paths))?;
        let (value, dl) = term.metric.eval(&term.fixed, &warped)?;
        let grid = term.fixed.grid;
        let steps = self.euler.steps;
        let tau = self.euler.tau::<T>() * term.sign;
        let mode = self.cfg.gradient_mode;
        let (_, grad) = chunked_sum(grid.len(), svf.param_count(), |i, g| {
            if dl[i] == T::zero() {
                return T::zero();
            }
            let path = &paths[i * (steps + 1)..(i + 1) * (steps + 1)];
            let end = path[steps];
            let (_, di) = term.moving.sample_with_gradient(end);
            let mut a = di.map(|d| d * dl[i]);
            if a.iter().all(|&x| x == T::zero()) {
                return T::zero();
            }
            match mode {
                GradientMode::OneStep => {
                    if svf.contains(end) {
                        svf.spray_velocity(end, a.map(|x| x * term.sign), g);
                    }
                }
                GradientMode::Adjoint => {
                    for &m in path[..steps].iter().rev() {
                        if !svf.contains(m) {
                            continue;
                        }
                        let j = svf.jacobian_and_spray(m, a.map(|x| x * tau), g);
                        let mut next = a;
                        for (d, nd) in next.iter_mut().enumerate() {
                            *nd += tau * (0..3).map(|c| j[c][d] * a[c]).sum::<T>();
                        }
                        a = next;
                    }
                }
            }
            T::zero()
        });
        Ok((value, Some(grad)))
    }

    fn evaluate(&self, theta: &[T], want_grad: bool) -> Result<(ObjectiveParts, T, Option<Vec<T>>)> {
        let svf = self.field(theta)?;
        let ws = T::lit(self.cfg.similarity_weight);
        let wb = T::lit(self.cfg.bending_weight);
        let half = T::lit(0.5);
        let mut grad = want_grad.then(|| vec![T::zero(); theta.len()]);
        let mut sims = [T::zero(); 2];
        for (t, term) in self.terms.iter().enumerate() {
            if self.cfg.similarity_weight == 0.0 && !want_grad {
                break;
            }
            let (v, g) = self.term_value_grad(&svf, term, want_grad && self.cfg.similarity_weight > 0.0)?;
            sims[t] = v;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += ws * half * b);
            }
        }
        let (bend, bg) = if self.cfg.bending_weight > 0.0 || !want_grad {
            self.bending.value_grad(theta)
        } else {
            (T::zero(), Vec::new())
        };
        if let Some(acc) = grad.as_mut() {
            if self.cfg.bending_weight > 0.0 {
                acc.iter_mut().zip(bg).for_each(|(a, b)| *a += wb * b);
            }
        }
        let total = ws * half * (sims[0] + sims[1]) + wb * bend;
        let parts = ObjectiveParts {
            forward: sims[0].as_f64(),
            backward: sims[1].as_f64(),
            bending: bend.as_f64(),
            total: total.as_f64(),
        };
        Ok((parts, total, grad))
    }

    pub fn value(&self, theta: &[T]) -> Result<T> {
        Ok(self.evaluate(theta, false)?.1)
    }

    pub fn parts(&self, theta: &[T]) -> Result<ObjectiveParts> {
        Ok(self.evaluate(theta, false)?.0)
    }

    pub fn value_grad(&self, theta: &[T]) -> Result<(T, Vec<T>)> {
        let (_, v, g) = self.evaluate(theta, true)?;
        Ok((v, g.expect("gradient requested")))
    }
}

/// One-shot evaluation of the objective at `theta` for the family and grid
/// of `template`.
pub fn objective_value_grad<T: Real, F: SplineVelocity<T>>(
    theta: &[T],
    template: &F,
    i1: &Image3D<T>,
    i2: &Image3D<T>,
    cfg: &ObjectiveConfig,
    euler: &EulerConfig,
) -> Result<(T, Vec<T>)> {
    Objective::new(template.clone(), i1, i2, *cfg, *euler)?.value_grad(theta)
}

#[cfg(test)]
mod tests;
