use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use divreg::bspline1d::SplineOrder;
use divreg::constraint::{constraints_from_mask, max_divergence_at, MaskRegion};
use divreg::field::container::{load_svf, save_svf, AnySvf};
use divreg::field::{ClassicalSvf, ControlGrid, DivConformingSvf, SplineVelocity};
use divreg::flow::{exponential_euler, jacobian_determinant_map, warp_image, warp_points, EulerConfig};
use divreg::geometry::VoxelGrid;
use divreg::io_image::{make_ground_truth_svf, make_phantom, read_mask, read_nifti, write_mask, write_nifti, PhantomSpec};
use divreg::metrics::ObjectiveConfig;
use divreg::solver::{register_pyramid, ConstraintMode, GridSpec, RegistrationReport, SolverConfig, StopReason};
use serde_json::{json, Value};

use crate::cli::{Command, DivcheckArgs, ExpArgs, Family, ProjectArgs, RegisterArgs, SynthArgs, WarpArgs};
use crate::exit::{CliError, NOT_CONVERGED};

pub struct Outcome {
    pub code: i32,
    pub summary: Value,
    pub text: String,
}

impl Outcome {
    fn ok(summary: Value, text: String) -> Self {
        Outcome { code: 0, summary, text }
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn dispatch(cmd: &Command) -> CliResult<Outcome> {
    match cmd {
        Command::Register(a) => register(a),
        Command::Exp(a) => exp(a),
        Command::Project(a) => project(a),
        Command::Divcheck(a) => divcheck(a),
        Command::Synth(a) => synth(a),
        Command::Warp(a) => warp(a),
    }
}

fn euler(steps: usize) -> CliResult<EulerConfig> {
    EulerConfig::new(steps).map_err(|e| CliError::Usage(format!("--steps: {e}")))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn register(a: &RegisterArgs) -> CliResult<Outcome> {
    let mode = if a.unconstrained {
        ConstraintMode::Unconstrained
    } else {
        ConstraintMode::Constrained
    };
    if mode == ConstraintMode::Constrained && a.mask.is_none() {
        return Err(CliError::Usage("--mask is required unless --unconstrained is given".into()));
    }
    if mode == ConstraintMode::Constrained && a.family == Family::Classical {
        return Err(CliError::Usage("the classical family only supports --unconstrained".into()));
    }
    let obj = ObjectiveConfig {
        similarity: a.similarity,
        similarity_weight: a.sim_weight,
        bending_weight: a.bend_weight,
        lncc_window_sigma: a.lncc_sigma,
        nmi_bins: a.nmi_bins,
        interpolation: a.interpolation.into(),
        ..Default::default()
    };
    obj.validate()?;
    let solver = SolverConfig {
        max_iterations: a.max_iterations,
        pyramid_levels: a.levels,
        ..Default::default()
    };
    solver.validate()?;
    let grid = GridSpec {
        spacing: a.grid_spacing,
        euler: euler(a.steps)?,
        mode,
    };
    let fixed = read_nifti::<f64>(&a.fixed)?;
    let moving = read_nifti::<f64>(&a.moving)?;
    let mask = match (&a.mask, mode) {
        (Some(p), ConstraintMode::Constrained) => Some(read_mask::<f64>(p)?),
        (Some(_), ConstraintMode::Unconstrained) => {
            log::warn!("--mask is ignored by an unconstrained registration");
            None
        }
        (None, _) => None,
    };
    let report: RegistrationReport = match a.family {
        Family::Conforming => {
            let (svf, rep) = register_pyramid::<f64, DivConformingSvf<f64>>(&moving, &fixed, mask.as_ref(), &obj, &solver, &grid)?;
            save_svf(&svf, &a.out)?;
            rep
        }
        Family::Classical => {
            let (svf, rep) = register_pyramid::<f64, ClassicalSvf<f64>>(&moving, &fixed, None, &obj, &solver, &grid)?;
            save_svf(&svf, &a.out)?;
            rep
        }
    };
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".report.json");
        PathBuf::from(s)
    });
    fs::write(&report_path, serde_json::to_string_pretty(&report).map_err(divreg::Error::from)?)
        .map_err(divreg::Error::from)?;
    let converged = report.status == StopReason::Converged;
    let summary = json!({
        "command": "register",
        "status": report.status,
        "converged": converged,
        "final_objective": report.final_objective,
        "final_constraint_residual": report.final_constraint_residual,
        "max_constraint_residual": report.max_constraint_residual,
        "levels": report.levels.len(),
        "out": path_str(&a.out),
        "report": path_str(&report_path),
    });
    let text = format!(
        "registration {:?}: objective {:.6e}, constraint residual {:.3e}\nfield: {}\nreport: {}",
        report.status,
        report.final_objective,
        report.final_constraint_residual,
        a.out.display(),
        report_path.display()
    );
    Ok(Outcome {
        code: if converged { 0 } else { NOT_CONVERGED },
        summary,
        text,
    })
}

/// Lattice with about 1 mm voxels over the control grid domain.
fn default_lattice(grid: &ControlGrid<f64>) -> VoxelGrid<f64> {
    let h = grid.spacing().iter().copied().fold(f64::INFINITY, f64::min);
    grid.sample_lattice(h.round().max(1.0) as usize)
}

fn exp(a: &ExpArgs) -> CliResult<Outcome> {
    let cfg = euler(a.steps)?;
    let any = load_svf::<f64>(&a.svf)?;
    match any {
        AnySvf::DivConforming(s) => exp_with(&s, a, &cfg),
        AnySvf::Classical(s) => exp_with(&s, a, &cfg),
    }
}

fn exp_with<F: SplineVelocity<f64>>(svf: &F, a: &ExpArgs, cfg: &EulerConfig) -> CliResult<Outcome> {
    let lattice = match &a.reference {
        Some(p) => read_nifti::<f64>(p)?.grid,
        None => default_lattice(svf.grid()),
    };
    let mask = a.mask.as_ref().map(read_mask::<f64>).transpose()?;
    if let Some(m) = &mask {
        m.grid.check_same_frame(&lattice, "mask and output lattice")?;
    }
    let def = exponential_euler(svf, cfg, &lattice)?;
    if let Some(out) = &a.out {
        def.write_nifti(out)?;
    }
    let jac = jacobian_determinant_map(svf, cfg, &lattice)?;
    if let Some(p) = &a.jacobian {
        let img = if a.log_jacobian { jac.log_jacobian() } else { jac.to_image() };
        write_nifti(&img, p)?;
    }
    let select = |i: usize| mask.as_ref().map_or(true, |m| m.occupied()[i]);
    let mae = jac.mae_where(select);
    let max_dev = jac.max_abs_deviation_where(select);
    let summary = json!({
        "command": "exp",
        "steps": cfg.steps,
        "voxels": lattice.len(),
        "valid": jac.valid_count(),
        "flagged_fraction": def.flagged_fraction(),
        "max_displacement": def.max_norm(),
        "jacobian_mae": mae,
        "jacobian_max_deviation": max_dev,
        "min_step_det": jac.min_step_det,
        "masked": mask.is_some(),
    });
    let text = format!(
        "mean |det J - 1| {mae:.3e}, max {max_dev:.3e} over {} valid voxels; {:.2}% of trajectories left the domain",
        jac.valid_count(),
        100.0 * def.flagged_fraction()
    );
    Ok(Outcome::ok(summary, text))
}

fn project(a: &ProjectArgs) -> CliResult<Outcome> {
    let svf = load_svf::<f64>(&a.svf)?.into_conforming()?;
    let mask = read_mask::<f64>(&a.mask)?;
    let system = constraints_from_mask(svf.grid(), &mask)?;
    let theta0 = svf.coefficient_vector();
    let before = system.residual_inf(&theta0);
    let theta = system.projector().project(&theta0)?;
    let after = system.residual_inf(&theta);
    let moved = theta0.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    save_svf(&DivConformingSvf::from_coefficient_vector(*svf.grid(), &theta)?, &a.out)?;
    let summary = json!({
        "command": "project",
        "constraints": system.matrix.nrows(),
        "residual_before": before,
        "residual_after": after,
        "coefficient_change": moved,
        "out": path_str(&a.out),
    });
    let text = format!(
        "{} constraints; residual {before:.3e} -> {after:.3e}; coefficients moved by {moved:.3e}",
        system.matrix.nrows()
    );
    Ok(Outcome::ok(summary, text))
}

fn divcheck(a: &DivcheckArgs) -> CliResult<Outcome> {
    let mask = read_mask::<f64>(&a.mask)?;
    let points = mask.sample_points(a.samples, a.seed)?;
    let (max_div, bound) = match load_svf::<f64>(&a.svf)? {
        AnySvf::DivConforming(svf) => {
            let system = constraints_from_mask(svf.grid(), &mask)?;
            (max_divergence_at(&svf, &points)?, Some(system.divergence_bound(&svf)?))
        }
        AnySvf::Classical(svf) => {
            let mut worst = 0.0f64;
            for &p in &points {
                worst = worst.max(svf.divergence_via_jacobian(p)?.abs());
            }
            (worst, None)
        }
    };
    let summary = json!({
        "command": "divcheck",
        "samples": a.samples,
        "max_abs_divergence": max_div,
        "certified_bound": bound,
    });
    let mut text = format!("max |div v| over {} samples: {max_div:.3e}", a.samples);
    if let Some(b) = bound {
        let _ = write!(text, " (certified bound {b:.3e})");
    }
    Ok(Outcome::ok(summary, text))
}

fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synth(a: &SynthArgs) -> CliResult<Outcome> {
    let spec: PhantomSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(divreg::Error::from)?;
            serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?
        }
        None => PhantomSpec::new(a.kind, a.size, a.seed).with_second_modality(),
    };
    if spec.dims.iter().any(|&d| d < 4) {
        return Err(CliError::Usage("phantom size must be at least 4".into()));
    }
    let (m1, m2) = make_phantom::<f64>(&spec);
    let mut written = Vec::new();
    let p1 = prefixed(&a.out_prefix, "m1.nii");
    write_nifti(&m1, &p1)?;
    written.push(p1);
    if let Some(m2) = &m2 {
        let p = prefixed(&a.out_prefix, "m2.nii");
        write_nifti(m2, &p)?;
        written.push(p);
    }
    if a.mask_radius > 0.0 {
        let (c, _) = spec.shell_geometry();
        let r = a.mask_radius * spec.dims.iter().copied().min().unwrap_or(1) as f64 * spec.spacing;
        let mask = MaskRegion::from_fn(m1.grid, |p: [f64; 3]| (0..3).map(|i| (p[i] - c[i]).powi(2)).sum::<f64>() < r * r);
        let p = prefixed(&a.out_prefix, "mask.nii");
        write_mask(&mask, &p)?;
        written.push(p);
    }
    let mut amplitude = None;
    if a.ground_truth {
        let grid = ControlGrid::covering(&m1.grid, [a.gt_spacing; 3], SplineOrder::CUBIC, 1)?;
        let gt = make_ground_truth_svf::<f64>(&grid, spec.seed, a.amplitude)?;
        amplitude = Some(gt.amplitude);
        let p = prefixed(&a.out_prefix, "gt.bin");
        save_svf(&gt.classical, &p)?;
        written.push(p);
        let p = prefixed(&a.out_prefix, "gt_conforming.bin");
        save_svf(&gt.conforming, &p)?;
        written.push(p);
        let inverse = exponential_euler(&gt.classical.negated(), &EulerConfig::default(), &m1.grid)?;
        let moving = warp_image(&m1, &inverse, divreg::interp::Interpolation::Cubic)?;
        let p = prefixed(&a.out_prefix, "moving.nii");
        write_nifti(&moving, &p)?;
        written.push(p);
    }
    let files: Vec<String> = written.iter().map(|p| path_str(p)).collect();
    let summary = json!({
        "command": "synth",
        "spec": spec,
        "ground_truth_amplitude": amplitude,
        "files": files,
    });
    Ok(Outcome::ok(summary, files.join("\n")))
}

fn warp(a: &WarpArgs) -> CliResult<Outcome> {
    let cfg = euler(a.steps)?;
    match load_svf::<f64>(&a.svf)? {
        AnySvf::DivConforming(s) => warp_with(&s, a, &cfg),
        AnySvf::Classical(s) => warp_with(&s, a, &cfg),
    }
}

fn parse_points(text: &str) -> CliResult<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Parse(format!("points line {}: {e}", n + 1)))?;
        if vals.len() != 3 {
            return Err(CliError::Parse(format!("points line {}: expected 3 values, found {}", n + 1, vals.len())));
        }
        out.push([vals[0], vals[1], vals[2]]);
    }
    Ok(out)
}

fn warp_with<F: SplineVelocity<f64>>(svf: &F, a: &WarpArgs, cfg: &EulerConfig) -> CliResult<Outcome> {
    let field = if a.inverse { svf.negated() } else { svf.clone() };
    if let Some(img_path) = &a.image {
        let img = read_nifti::<f64>(img_path)?;
        let def = exponential_euler(&field, cfg, &img.grid)?;
        let out = warp_image(&img, &def, a.interpolation.into())?;
        write_nifti(&out, &a.out)?;
        let summary = json!({
            "command": "warp",
            "image": path_str(img_path),
            "flagged_fraction": def.flagged_fraction(),
            "out": path_str(&a.out),
        });
        return Ok(Outcome::ok(summary, format!("warped image written to {}", a.out.display())));
    }
    let path = a.points.as_ref().expect("clap enforces --image or --points");
    let text = fs::read_to_string(path).map_err(divreg::Error::from)?;
    let points = parse_points(&text)?;
    let warped = warp_points(&points, &field, cfg)?;
    let mut csv = String::from("x,y,z,left_domain\n");
    for w in &warped {
        let _ = writeln!(csv, "{},{},{},{}", w.position[0], w.position[1], w.position[2], w.left_domain);
    }
    fs::write(&a.out, csv).map_err(divreg::Error::from)?;
    let left = warped.iter().filter(|w| w.left_domain).count();
    let summary = json!({
        "command": "warp",
        "points": warped.len(),
        "left_domain": left,
        "out": path_str(&a.out),
    });
    Ok(Outcome::ok(summary, format!("{} points transported, {left} left the domain", warped.len())))
}
