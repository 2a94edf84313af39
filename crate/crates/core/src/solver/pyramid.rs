use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bspline1d::SplineOrder;
use crate::constraint::{constraints_from_mask, ConstraintSystem, MaskRegion};
use crate::error::{Error, Result};
use crate::field::{ClassicalSvf, ControlGrid, DivConformingSvf, SplineVelocity};
use crate::flow::EulerConfig;
use crate::io_image::Image3D;
use crate::metrics::{Objective, ObjectiveConfig};
use crate::scalar::Real;

use super::{solve_constrained, SolveReport, SolverConfig, StopReason};

/// Field families the pyramid driver can optimise.
pub trait RegistrationField<T: Real>: SplineVelocity<T> {
    /// Basis order handed to [`ControlGrid`] for this family.
    fn default_order() -> SplineOrder;

    /// Linear equality constraints enforcing incompressibility on `mask`.
    fn constraints(grid: &ControlGrid<T>, mask: &MaskRegion<T>) -> Result<ConstraintSystem<T>>;
}

impl<T: Real> RegistrationField<T> for DivConformingSvf<T> {
    fn default_order() -> SplineOrder {
        SplineOrder::QUADRATIC
    }

    fn constraints(grid: &ControlGrid<T>, mask: &MaskRegion<T>) -> Result<ConstraintSystem<T>> {
        constraints_from_mask(grid, mask)
    }
}

impl<T: Real> RegistrationField<T> for ClassicalSvf<T> {
    fn default_order() -> SplineOrder {
        SplineOrder::CUBIC
    }

    fn constraints(_: &ControlGrid<T>, _: &MaskRegion<T>) -> Result<ConstraintSystem<T>> {
        Err(Error::Unsupported(
            "mask constraints need a divergence-conforming field".into(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// Divergence-free on the mask at every level.
    #[default]
    Constrained,
    Unconstrained,
}

/// Finest control grid and flow discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Finest knot spacing in mm.
    pub spacing: f64,
    pub euler: EulerConfig,
    pub mode: ConstraintMode,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            spacing: 5.0,
            euler: EulerConfig::new(8).expect("power of two"),
            mode: ConstraintMode::Constrained,
        }
    }
}

impl GridSpec {
    /// 3 mm knots.
    pub fn cardiac() -> Self {
        GridSpec {
            spacing: 3.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    /// 0 is the finest level.
    pub level: usize,
    pub image_dims: [usize; 3],
    pub knot_counts: [usize; 3],
    pub knot_spacing: [f64; 3],
    pub parameters: usize,
    pub constraint_rows: usize,
    pub seconds: f64,
    pub solve: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub family: String,
    pub mode: ConstraintMode,
    pub objective: ObjectiveConfig,
    pub solver: SolverConfig,
    pub grid: GridSpec,
    pub status: StopReason,
    pub final_objective: f64,
    pub final_constraint_residual: f64,
    pub max_constraint_residual: f64,
    pub levels: Vec<LevelReport>,
}

/// Coarse-to-fine registration of `i1` onto `i2`.
///
/// The coarsest grid covers the image domain with knot spacing
/// `spacing * 2^(levels-1)`; every finer level halves it, so coefficients
/// carry over exactly by spline refinement.
pub fn register_pyramid<T: Real, F: RegistrationField<T>>(
    i1: &Image3D<T>,
    i2: &Image3D<T>,
    mask: Option<&MaskRegion<T>>,
    obj_cfg: &ObjectiveConfig,
    solver_cfg: &SolverConfig,
    grid_spec: &GridSpec,
) -> Result<(F, RegistrationReport)> {
    obj_cfg.validate()?;
    solver_cfg.validate()?;
    grid_spec.euler.validate()?;
    i1.grid.check_same_frame(&i2.grid, "registration images")?;
    if !(grid_spec.spacing > 0.0 && grid_spec.spacing.is_finite()) {
        return Err(Error::Config(format!("grid spacing must be positive, got {}", grid_spec.spacing)));
    }
    let mask = match (grid_spec.mode, mask) {
        (ConstraintMode::Constrained, None) => {
            return Err(Error::Config("constrained registration needs a mask".into()))
        }
        (ConstraintMode::Constrained, Some(m)) if m.is_empty() => {
            return Err(Error::Config("constrained registration needs a non-empty mask".into()))
        }
        (ConstraintMode::Constrained, Some(m)) => Some(m),
        (ConstraintMode::Unconstrained, _) => None,
    };
    let levels = solver_cfg.pyramid_levels;
    let coarse_spacing = T::lit(grid_spec.spacing * (1u64 << (levels - 1)) as f64);
    let mut grid = ControlGrid::covering(&i1.grid, [coarse_spacing; 3], F::default_order(), 1)?;
    let mut field = F::zeros(grid)?;
    let mut reports = Vec::with_capacity(levels);
    let mut status = StopReason::Converged;

    for level in (0..levels).rev() {
        let start = Instant::now();
        if level + 1 < levels {
            field = field.refined()?;
            grid = *field.grid();
        }
        let l1 = i1.pyramid_level(level);
        let l2 = i2.pyramid_level(level);
        let system = match mask {
            Some(m) => F::constraints(&grid, m)?,
            None => ConstraintSystem::unconstrained(field.param_count()),
        };
        let projector = (!system.is_empty()).then(|| system.projector());
        let mut theta0 = field.coefficient_vector();
        if let Some(p) = &projector {
            // prolongation preserves feasibility; this removes round-off
            theta0 = p.project(&theta0)?;
        }
        let objective = Objective::new(field.clone(), &l1, &l2, *obj_cfg, grid_spec.euler)?;
        let (theta, solve) = solve_constrained(|t| objective.value_grad(t), projector.as_ref(), &theta0, solver_cfg)?;
        field.set_coefficients(&theta)?;
        log::info!(
            "level {level}: {} iterations, objective {:.6e} -> {:.6e}, residual {:.2e}",
            solve.iterations,
            solve.initial_objective,
            solve.final_objective,
            solve.final_constraint_residual
        );
        if level == 0 {
            status = solve.status;
        }
        reports.push(LevelReport {
            level,
            image_dims: l1.grid.dims,
            knot_counts: grid.knot_counts(),
            knot_spacing: grid.spacing().map(|s| s.as_f64()),
            parameters: field.param_count(),
            constraint_rows: system.len(),
            seconds: start.elapsed().as_secs_f64(),
            solve,
        });
    }
    let last = &reports.last().expect("at least one level").solve;
    let report = RegistrationReport {
        family: field.family().into(),
        mode: grid_spec.mode,
        objective: *obj_cfg,
        solver: *solver_cfg,
        grid: *grid_spec,
        status,
        final_objective: last.final_objective,
        final_constraint_residual: last.final_constraint_residual,
        max_constraint_residual: reports.iter().map(|r| r.solve.max_constraint_residual).fold(0.0, f64::max),
        levels: reports,
    };
    Ok((field, report))
}
