use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::constraint::NullSpaceProjector;
use crate::error::{Error, Result};
use crate::scalar::Real;

use super::SolverConfig;

/// Largest constraint residual accepted for a starting point.
pub const START_FEASIBILITY: f64 = 1e-12;
/// Iterates drifting above this residual are projected back.
const DRIFT_FEASIBILITY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// No sufficient decrease along steepest descent; best iterate returned.
    LineSearchFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub projected_gradient_norm: f64,
    pub constraint_residual: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: StopReason,
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub final_constraint_residual: f64,
    /// Max over all accepted iterates.
    pub max_constraint_residual: f64,
    pub line_search_warning: bool,
    pub trace: Vec<IterationRecord>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn project<T: Real>(p: Option<&NullSpaceProjector<T>>, v: Vec<T>) -> Result<Vec<T>> {
    match p {
        Some(p) if !p.is_trivial() => p.project(&v),
        _ => Ok(v),
    }
}

fn residual<T: Real>(p: Option<&NullSpaceProjector<T>>, theta: &[T]) -> f64 {
    match p {
        Some(p) if !p.is_trivial() => p.residual_inf(theta).as_f64(),
        _ => 0.0,
    }
}

/// `-H g` by the two-loop recursion over the stored `(s, y)` pairs.
fn two_loop<T: Real>(g: &[T], memory: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = *rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, &yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, &si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimises `objective` over `{theta : A theta = 0}` by limited-memory
/// quasi-Newton steps in the null space of `A`.
///
/// Gradients are projected onto `ker A`; search directions are built from
/// projected vectors only, so every iterate stays feasible. `projector =
/// None` means no constraints.
pub fn solve_constrained<T: Real>(
    mut objective: impl FnMut(&[T]) -> Result<(T, Vec<T>)>,
    projector: Option<&NullSpaceProjector<T>>,
    theta0: &[T],
    cfg: &SolverConfig,
) -> Result<(Vec<T>, SolveReport)> {
    cfg.validate()?;
    let r0 = residual(projector, theta0);
    if r0 > START_FEASIBILITY {
        return Err(Error::Infeasible(r0));
    }
    let mut theta = theta0.to_vec();
    let (mut f, g) = objective(&theta)?;
    let mut evaluations = 1;
    let mut gp = project(projector, g)?;
    let initial = f.as_f64();
    let g0_norm = norm(&gp).as_f64();
    let gtol = cfg.gradient_tolerance.max(cfg.relative_gradient_tolerance * g0_norm);
    let mut memory: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(cfg.history);
    let mut trace = vec![IterationRecord {
        iteration: 0,
        objective: initial,
        projected_gradient_norm: g0_norm,
        constraint_residual: r0,
        step: 0.0,
    }];
    let mut max_res = r0;
    let mut status = StopReason::MaxIterations;
    let mut warning = false;
    let mut stalls = 0usize;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        let gnorm = norm(&gp).as_f64();
        if gnorm <= gtol {
            status = StopReason::Converged;
            break;
        }
        let mut d = two_loop(&gp, &memory);
        let mut slope = dot(&d, &gp);
        if !(slope < T::zero()) {
            memory.clear();
            d = gp.iter().map(|&v| -v).collect();
            slope = dot(&d, &gp);
        }
        // without curvature information the step is sized in coefficient
        // units: the trial moves `initial_step` on the largest coefficient
        let dmax = d.iter().fold(T::zero(), |m, v| m.max(v.abs())).as_f64();
        let mut alpha = if memory.is_empty() { cfg.initial_step / dmax } else { 1.0 };
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let a = T::lit(alpha);
            let trial: Vec<T> = theta.iter().zip(&d).map(|(&t, &di)| t + a * di).collect();
            let (ft, gt) = objective(&trial)?;
            evaluations += 1;
            if ft.is_finite() && ft <= f + T::lit(cfg.armijo_c) * a * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= cfg.backtrack_factor;
        }
        let Some((mut trial, ft, gt)) = accepted else {
            if memory.is_empty() {
                // predicted decrease below the round-off of f: nothing left to gain
                let noise = 1e3 * f64::EPSILON * f.as_f64().abs().max(f64::MIN_POSITIVE);
                if (-slope.as_f64()) <= noise {
                    status = StopReason::Converged;
                    break;
                }
                log::warn!("line search failed at iteration {iterations}; returning best iterate");
                warning = true;
                status = StopReason::LineSearchFailed;
                break;
            }
            memory.clear();
            continue;
        };
        iterations += 1;
        let mut res = residual(projector, &trial);
        if res > DRIFT_FEASIBILITY {
            trial = project(projector, trial)?;
            res = residual(projector, &trial);
        }
        max_res = max_res.max(res);
        let gpt = project(projector, gt)?;
        let s: Vec<T> = trial.iter().zip(&theta).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = gpt.iter().zip(&gp).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::lit(1e-12) * norm(&s) * norm(&y) && sy > T::zero() {
            if memory.len() == cfg.history {
                memory.pop_front();
            }
            memory.push_back((s, y, T::one() / sy));
        }
        let decrease = (f - ft).as_f64();
        theta = trial;
        f = ft;
        gp = gpt;
        trace.push(IterationRecord {
            iteration: iterations,
            objective: f.as_f64(),
            projected_gradient_norm: norm(&gp).as_f64(),
            constraint_residual: res,
            step: alpha,
        });
        if decrease <= cfg.objective_tolerance * f.as_f64().abs() {
            stalls += 1;
            if stalls >= 3 {
                status = StopReason::Converged;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    if status == StopReason::MaxIterations && norm(&gp).as_f64() <= gtol {
        status = StopReason::Converged;
    }
    let final_res = residual(projector, &theta);
    let report = SolveReport {
        status,
        iterations,
        evaluations,
        initial_objective: initial,
        final_objective: f.as_f64(),
        final_constraint_residual: final_res,
        max_constraint_residual: max_res.max(final_res),
        line_search_warning: warning,
        trace,
    };
    Ok((theta, report))
}
