use super::*;
use crate::bspline1d::SplineOrder;
use crate::field::{ControlGrid, DivConformingSvf};
use crate::io_image::smooth_incompressible_svf;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid() -> ControlGrid<f64> {
    ControlGrid::cube(4, 4.0, 0.0, SplineOrder::QUADRATIC).unwrap()
}

fn lattice(n: usize, spacing: f64) -> VoxelGrid<f64> {
    VoxelGrid::isotropic(n, spacing)
}

#[test]
fn steps_must_be_powers_of_two() {
    assert!(EulerConfig::new(6).is_err());
    assert!(EulerConfig::new(0).is_err());
    assert_eq!(EulerConfig::from_exponent(6).unwrap().steps, 64);
    assert_eq!(EulerConfig::default().steps, 64);
    let svf = DivConformingSvf::new(grid()).unwrap();
    let cfg = EulerConfig { steps: 12, integrator: Integrator::Euler };
    assert!(matches!(exponential_euler(&svf, &cfg, &lattice(4, 4.0)), Err(Error::Config(_))));
    let cfg = EulerConfig { steps: 8, integrator: Integrator::ScalingAndSquaring };
    assert!(matches!(exponential_euler(&svf, &cfg, &lattice(4, 4.0)), Err(Error::Unsupported(_))));
}

#[test]
fn zero_field_is_identity() {
    let svf = DivConformingSvf::new(grid()).unwrap();
    let cfg = EulerConfig::default();
    let def = exponential_euler(&svf, &cfg, &lattice(8, 2.0)).unwrap();
    assert_eq!(def, DeformationField::identity(lattice(8, 2.0)));
    let jac = jacobian_determinant_map(&svf, &cfg, &lattice(8, 2.0)).unwrap();
    assert!(jac.det.iter().all(|&d| d == 1.0) && jac.valid.iter().all(|&v| v));
    let pts = warp_points(&[[1.0, 2.0, 3.0]], &svf, &cfg).unwrap();
    assert_eq!(pts[0].position, [1.0, 2.0, 3.0]);
}

#[test]
fn constant_field_translates() {
    let c = [0.25, -1.5, 0.125];
    let svf = DivConformingSvf::from_fn(grid(), |_| c).unwrap();
    let cfg = EulerConfig::new(16).unwrap();
    let def = exponential_euler(&svf, &cfg, &lattice(8, 2.0)).unwrap();
    for i in 0..def.grid.len() {
        if def.out_of_domain[i] {
            continue;
        }
        let u = def.displacement_at(i);
        for a in 0..3 {
            assert!((u[a] - c[a]).abs() < 1e-12);
        }
    }
    // voxels at the far face leave the domain
    assert!(def.flagged_count() > 0);
    let pts = warp_points(&[[5.0, 6.0, 7.0]], &svf, &cfg).unwrap();
    assert!((pts[0].position[1] - 4.5).abs() < 1e-12 && !pts[0].left_domain);
    assert!(warp_points(&[[-1.0, 0.0, 0.0]], &svf, &cfg).is_err());
}

#[test]
fn leaving_points_are_flagged_not_clamped() {
    let svf = DivConformingSvf::from_fn(grid(), |_| [3.0, 0.0, 0.0]).unwrap();
    let out = warp_points(&[[15.0, 8.0, 8.0]], &svf, &EulerConfig::new(8).unwrap()).unwrap();
    assert!(out[0].left_domain);
    // stops where the velocity extension is zero, past the boundary
    assert!(out[0].position[0] > 16.0);
}

#[test]
fn inverse_consistency_converges_first_order() {
    let svf = smooth_incompressible_svf::<f64>(&grid(), 1.5, 3).unwrap();
    let g = lattice(16, 1.0);
    let r: Vec<f64> = (3..7)
        .map(|k| inverse_consistency_residual(&svf, &EulerConfig::from_exponent(k).unwrap(), &g).unwrap())
        .collect();
    for w in r.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.5..=3.0).contains(&ratio), "residuals {r:?}");
    }
    // point transport back and forth stays within the same bound
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = EulerConfig::from_exponent(5).unwrap();
    let pts: Vec<[f64; 3]> = (0..50).map(|_| [0; 3].map(|_| rng.gen_range(2.0..14.0))).collect();
    let fwd = warp_points(&pts, &svf, &cfg).unwrap();
    let mid: Vec<[f64; 3]> = fwd.iter().map(|w| w.position).collect();
    let back = warp_points(&mid, &svf.negated(), &cfg).unwrap();
    let bound = inverse_consistency_residual(&svf, &cfg, &lattice(64, 0.25)).unwrap();
    for (p, q) in pts.iter().zip(&back) {
        let d = (0..3).map(|a| (p[a] - q.position[a]).powi(2)).sum::<f64>().sqrt();
        assert!(d <= 1.5 * bound, "{d} vs {bound}");
    }
}

#[test]
fn determinant_error_halves_with_tau() {
    let svf = smooth_incompressible_svf::<f64>(&grid(), 2.0, 5).unwrap();
    let g = lattice(16, 1.0);
    let maes: Vec<f64> = (4..8)
        .map(|k| {
            let m = jacobian_determinant_map(&svf, &EulerConfig::from_exponent(k).unwrap(), &g).unwrap();
            assert!(m.min_step_det > 0.0);
            m.mae()
        })
        .collect();
    for w in maes.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.5..=3.0).contains(&ratio), "mae {maes:?}");
    }
}

#[test]
fn chain_product_agrees_with_finite_differences() {
    let svf = smooth_incompressible_svf::<f64>(&grid(), 2.0, 6).unwrap();
    let cfg = EulerConfig::from_exponent(6).unwrap();
    let g = lattice(64, 0.25);
    let chain = jacobian_determinant_map(&svf, &cfg, &g).unwrap();
    let fd = finite_difference_determinant(&exponential_euler(&svf, &cfg, &g).unwrap());
    let mut worst = 0.0f64;
    for i in 0..g.len() {
        let v = g.unravel(i);
        let interior = v.iter().all(|&x| x > 0 && x < 63);
        if chain.valid[i] && fd.valid[i] && interior {
            worst = worst.max((chain.det[i] - fd.det[i]).abs() / chain.det[i].abs());
        }
    }
    assert!(worst < 1e-2, "relative disagreement {worst}");
}

#[test]
fn identity_warp_is_bitwise_and_translation_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let vg = VoxelGrid::new([9, 8, 7], [1.0, 1.5, 0.7], [0.3, -2.0, 1.1]).unwrap();
    let img: Image3D<f64> = Image3D::new(vg, (0..vg.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let same = warp_image(&img, &DeformationField::identity(vg), Interpolation::Trilinear).unwrap();
    assert_eq!(same, img);
    let shift = [2.0 * vg.spacing[0], -vg.spacing[1], 0.0];
    let moved = warp_image(&img, &DeformationField::translation(vg, shift), Interpolation::Trilinear).unwrap();
    for k in 0..7 {
        for j in 1..8 {
            for i in 0..7 {
                assert!((moved.get(i, j, k) - img.get(i + 2, j - 1, k)).abs() < 1e-12);
            }
        }
    }
    let other = VoxelGrid::isotropic(4, 1.0);
    assert!(warp_image(&img, &DeformationField::identity(other), Interpolation::Cubic).is_err());
}

#[test]
fn cubic_beats_trilinear_on_smooth_phantoms() {
    let vg = VoxelGrid::isotropic(24, 1.0);
    let f = |p: [f64; 3]| (0.4 * p[0]).sin() * (0.3 * p[1]).cos() * (0.35 * p[2] + 0.5).sin();
    let img = Image3D::from_fn(vg, f);
    let svf = smooth_incompressible_svf::<f64>(&ControlGrid::cube(6, 4.0, 0.0, SplineOrder::QUADRATIC).unwrap(), 1.5, 2).unwrap();
    let def = exponential_euler(&svf, &EulerConfig::from_exponent(4).unwrap(), &vg).unwrap();
    let err = |kind| {
        let w = warp_image(&img, &def, kind).unwrap();
        let mut acc = 0.0;
        let mut n = 0;
        for i in 0..vg.len() {
            let v = vg.unravel(i);
            if v.iter().all(|&x| (3..21).contains(&x)) && !def.out_of_domain[i] {
                acc += (w.data()[i] - f(def.mapped(i))).powi(2);
                n += 1;
            }
        }
        (acc / n as f64).sqrt()
    };
    let (lin, cub) = (err(Interpolation::Trilinear), err(Interpolation::Cubic));
    assert!(cub < lin, "cubic {cub} trilinear {lin}");
}

#[test]
fn compressible_outside_small_mask() {
    // divergence free only on a small ball; large flow carries voxels out
    use crate::constraint::{constraints_from_mask, project_divergence_free, MaskRegion};
    let g = ControlGrid::cube(8, 2.0, 0.0, SplineOrder::QUADRATIC).unwrap();
    let vg = lattice(16, 1.0);
    let inside = |p: [f64; 3]| (p[0] - 8.0).powi(2) + (p[1] - 8.0).powi(2) + (p[2] - 8.0).powi(2) < 9.0;
    let mask = MaskRegion::from_fn(vg, inside);
    let sys = constraints_from_mask(&g, &mask).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let base = DivConformingSvf::from_fn(g, |p| {
        let r = [p[0] - 8.0, p[1] - 8.0, p[2] - 8.0];
        [2.0 + 0.3 * r[1], 0.2 * r[0], 0.5 * (0.3 * p[2]).sin()]
    })
    .unwrap();
    let theta: Vec<f64> = base.coefficient_vector().iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
    let svf = DivConformingSvf::from_coefficient_vector(g, &project_divergence_free(&theta, &sys).unwrap()).unwrap();
    let jac = jacobian_determinant_map(&svf, &EulerConfig::from_exponent(6).unwrap(), &vg).unwrap();
    let worst = jac.max_abs_deviation_where(|i| mask.occupied()[i]);
    assert!(worst > 1e-2, "{worst}");
}
