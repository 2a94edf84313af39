use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::constraint::{CsrMatrix, MaskRegion, NullSpaceProjector};
use crate::error::Error;
use crate::field::{ClassicalSvf, DivConformingSvf, SplineVelocity};
use crate::geometry::VoxelGrid;
use crate::io_image::Image3D;
use crate::metrics::{ObjectiveConfig, Similarity};

struct Quadratic {
    q: DMatrix<f64>,
    b: DVector<f64>,
    a: DMatrix<f64>,
}

fn quadratic(n: usize, m: usize, seed: u64) -> Quadratic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = || rng.gen_range(-1.0..1.0);
    let mfac = DMatrix::from_fn(n, n, |_, _| r());
    let q = mfac.transpose() * &mfac + DMatrix::identity(n, n);
    let b = DVector::from_fn(n, |_, _| r());
    let a = DMatrix::from_fn(m, n, |_, _| r());
    Quadratic { q, b, a }
}

/// Closed-form KKT solution of `min 1/2 x'Qx - b'x  s.t.  Ax = 0`.
fn kkt_solution(p: &Quadratic) -> DVector<f64> {
    let (n, m) = (p.q.nrows(), p.a.nrows());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&p.q);
    k.view_mut((n, 0), (m, n)).copy_from(&p.a);
    k.view_mut((0, n), (n, m)).copy_from(&p.a.transpose());
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&p.b);
    k.lu().solve(&rhs).expect("regular KKT matrix").rows(0, n).into_owned()
}

fn csr(a: &DMatrix<f64>) -> CsrMatrix<f64> {
    let rows = (0..a.nrows())
        .map(|r| (0..a.ncols()).map(|c| (c, a[(r, c)])).collect())
        .collect();
    CsrMatrix::from_rows(rows, a.ncols()).unwrap()
}

fn tight() -> SolverConfig {
    SolverConfig {
        max_iterations: 2000,
        gradient_tolerance: 1e-11,
        relative_gradient_tolerance: 0.0,
        objective_tolerance: 0.0,
        ..SolverConfig::default()
    }
}

#[test]
fn equality_constrained_quadratic_matches_kkt() {
    let p = quadratic(30, 10, 1);
    let exact = kkt_solution(&p);
    let projector = NullSpaceProjector::new(csr(&p.a));
    let f = |t: &[f64]| {
        let x = DVector::from_column_slice(t);
        let qx = &p.q * &x;
        let v = 0.5 * x.dot(&qx) - p.b.dot(&x);
        Ok((v, (qx - &p.b).as_slice().to_vec()))
    };
    let (theta, report) = solve_constrained(f, Some(&projector), &vec![0.0; 30], &tight()).unwrap();
    assert_eq!(report.status, StopReason::Converged, "{:?} {:?}", report.status, report.trace.last());
    let err = (DVector::from_column_slice(&theta) - exact).amax();
    assert!(err <= 1e-8, "{err:e}");
    assert!(report.max_constraint_residual <= 1e-10);
    assert!(report.trace.iter().all(|r| r.constraint_residual <= 1e-10));
    for w in report.trace.windows(2) {
        assert!(w[1].objective <= w[0].objective);
    }
}

fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
    let n = x.len();
    let mut f = 0.0;
    let mut g = vec![0.0; n];
    for i in 0..n - 1 {
        let a = x[i + 1] - x[i] * x[i];
        let b = 1.0 - x[i];
        f += 100.0 * a * a + b * b;
        g[i] += -400.0 * x[i] * a - 2.0 * b;
        g[i + 1] += 200.0 * a;
    }
    (f, g)
}

#[test]
fn unconstrained_rosenbrock_10d() {
    let x0: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { -1.2 } else { 1.0 }).collect();
    let (x, report) = solve_constrained(|t| Ok(rosenbrock(t)), None, &x0, &tight()).unwrap();
    assert!(report.final_objective < 1e-8, "{report:?}");
    assert!(report.iterations <= 2000);
    assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-3));
}

#[test]
fn infeasible_start_is_rejected() {
    let p = quadratic(6, 2, 2);
    let projector = NullSpaceProjector::new(csr(&p.a));
    let err = solve_constrained(|_t: &[f64]| Ok((0.0, vec![0.0; 6])), Some(&projector), &[1.0; 6], &tight()).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)));
}

#[test]
fn wrong_gradient_ends_in_line_search_failure() {
    // gradient points uphill, so no step ever decreases the value
    let f = |t: &[f64]| Ok((t.iter().map(|v| v * v).sum::<f64>(), t.iter().map(|v| -2.0 * v).collect()));
    let (x, report) = solve_constrained(f, None, &[1.0, -2.0], &SolverConfig::default()).unwrap();
    assert_eq!(report.status, StopReason::LineSearchFailed);
    assert!(report.line_search_warning);
    assert_eq!(x, vec![1.0, -2.0]);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        SolverConfig { armijo_c: 0.0, ..SolverConfig::default() },
        SolverConfig { backtrack_factor: 1.0, ..SolverConfig::default() },
        SolverConfig { pyramid_levels: 0, ..SolverConfig::default() },
        SolverConfig { history: 0, ..SolverConfig::default() },
        SolverConfig { gradient_tolerance: 0.0, relative_gradient_tolerance: 0.0, ..SolverConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
    }
}

fn blob(p: [f64; 3], c: f64) -> f64 {
    // content fades out well inside the domain, away from the boundary band
    let r2: f64 = p.iter().map(|x| (x - c).powi(2)).sum();
    (-r2 / 6.0).exp() * (1.0 + 0.5 * (p[0] * 0.9).sin() * (p[1] * 0.7).cos())
}

fn blob_image(n: usize) -> Image3D<f64> {
    let c = n as f64 / 2.0;
    Image3D::from_fn(VoxelGrid::isotropic(n, 1.0), |p: [f64; 3]| blob(p, c))
}

fn small_cfgs() -> (ObjectiveConfig, SolverConfig, GridSpec) {
    let obj = ObjectiveConfig {
        similarity: Similarity::Ssd,
        ..ObjectiveConfig::default()
    };
    let solver = SolverConfig {
        max_iterations: 20,
        pyramid_levels: 2,
        ..SolverConfig::default()
    };
    let grid = GridSpec {
        spacing: 4.0,
        euler: crate::flow::EulerConfig::new(4).unwrap(),
        mode: ConstraintMode::Constrained,
    };
    (obj, solver, grid)
}

#[test]
fn identity_registration_stays_at_zero() {
    let img = blob_image(12);
    let mask = MaskRegion::from_fn(img.grid, |p: [f64; 3]| p[0] < 6.0);
    let (obj, solver, grid) = small_cfgs();
    let (svf, report) = register_pyramid::<f64, DivConformingSvf<f64>>(&img, &img, Some(&mask), &obj, &solver, &grid).unwrap();
    let max = svf.coefficient_vector().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max <= 1e-6, "{max:e}");
    assert_eq!(report.levels.len(), 2);
    assert_eq!(report.status, StopReason::Converged);
    assert!(report.final_constraint_residual <= 1e-10);
    let text = serde_json::to_string(&report).unwrap();
    assert!(text.contains("\"status\":\"converged\""));
}

#[test]
fn pyramid_rejects_bad_mask_configurations() {
    let img = blob_image(8);
    let (obj, solver, grid) = small_cfgs();
    let empty = MaskRegion::empty(img.grid);
    let r = register_pyramid::<f64, DivConformingSvf<f64>>(&img, &img, Some(&empty), &obj, &solver, &grid);
    assert!(matches!(r, Err(Error::Config(_))));
    let r = register_pyramid::<f64, DivConformingSvf<f64>>(&img, &img, None, &obj, &solver, &grid);
    assert!(matches!(r, Err(Error::Config(_))));
    let full = MaskRegion::full(img.grid);
    let r = register_pyramid::<f64, ClassicalSvf<f64>>(&img, &img, Some(&full), &obj, &solver, &grid);
    assert!(matches!(r, Err(Error::Unsupported(_))));
    let free = GridSpec { mode: ConstraintMode::Unconstrained, ..grid };
    let (svf, _) = register_pyramid::<f64, ClassicalSvf<f64>>(&img, &img, None, &obj, &solver, &free).unwrap();
    assert_eq!(svf.family(), "classical");
    let other = Image3D::filled(VoxelGrid::isotropic(9, 1.0), 0.0);
    let r = register_pyramid::<f64, DivConformingSvf<f64>>(&img, &other, Some(&full), &obj, &solver, &grid);
    assert!(matches!(r, Err(Error::Geometry(_))));
}

#[test]
fn registration_decreases_the_objective() {
    let i1 = blob_image(12);
    // i1 translated by 0.4 mm along each axis
    let i2 = Image3D::from_fn(i1.grid, |p: [f64; 3]| blob(p.map(|x| x + 0.4), 6.0));
    let (obj, solver, grid) = small_cfgs();
    let free = GridSpec { mode: ConstraintMode::Unconstrained, ..grid };
    let (_, report) = register_pyramid::<f64, DivConformingSvf<f64>>(&i1, &i2, None, &obj, &solver, &free).unwrap();
    for level in &report.levels {
        assert!(level.solve.final_objective <= level.solve.initial_objective);
        for w in level.solve.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
    }
    let fine = report.levels.last().unwrap();
    assert!(fine.solve.final_objective < 0.5 * report.levels[0].solve.initial_objective);
}

