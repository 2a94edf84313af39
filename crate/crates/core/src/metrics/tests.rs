use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bspline1d::SplineOrder;
use crate::field::{ClassicalSvf, ControlGrid, DivConformingSvf};
use crate::geometry::VoxelGrid;

/// Sum of a few random plane waves plus a blob; smooth and non-constant.
fn smooth_image(grid: VoxelGrid<f64>, seed: u64) -> Image3D<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<([f64; 3], f64, f64)> = (0..4)
        .map(|_| {
            let k = [0, 1, 2].map(|_| rng.gen_range(-0.7..0.7));
            (k, rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.3..1.0))
        })
        .collect();
    let c = [0, 1, 2].map(|a| grid.origin[a] + grid.spacing[a] * grid.dims[a] as f64 * rng.gen_range(0.3..0.7));
    Image3D::from_fn(grid, |p: [f64; 3]| {
        let mut v = 2.0;
        for (k, ph, a) in &waves {
            v += a * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin();
        }
        let r2: f64 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum();
        v + (-r2 / 8.0).exp()
    })
}

fn grid(n: usize) -> VoxelGrid<f64> {
    VoxelGrid::isotropic(n, 1.0)
}

/// Per-entry relative error, with entries far below the gradient scale
/// compared against `1e-3 * max|g|`.
fn rel_err(fd: f64, an: f64, scale: f64) -> f64 {
    (fd - an).abs() / an.abs().max(fd.abs()).max(1e-3 * scale)
}

fn image_fd_check(
    reference: &Image3D<f64>,
    warped: &Image3D<f64>,
    f: impl Fn(&Image3D<f64>, &Image3D<f64>) -> (f64, Vec<f64>),
    h: f64,
    tol: f64,
    seed: u64,
) {
    let (_, g) = f(reference, warped);
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let x = rng.gen_range(0..warped.len());
        let mut p = warped.clone();
        p.data_mut()[x] += h;
        let mut m = warped.clone();
        m.data_mut()[x] -= h;
        let fd = (f(reference, &p).0 - f(reference, &m).0) / (2.0 * h);
        let e = rel_err(fd, g[x], scale);
        assert!(e <= tol, "voxel {x}: fd {fd:e} analytic {:e} rel {e:e}", g[x]);
    }
}

#[test]
fn ssd_trivial_values() {
    let a = smooth_image(grid(6), 1);
    let (v, g) = ssd_value_grad(&a, &a).unwrap();
    assert_eq!(v, 0.0);
    assert!(g.iter().all(|&x| x == 0.0));
    let zero = Image3D::filled(grid(6), 0.0);
    let c = Image3D::filled(grid(6), 1.5);
    assert!((ssd_value_grad(&zero, &c).unwrap().0 - 2.25).abs() < 1e-15);
    let other = Image3D::filled(grid(5), 0.0);
    assert!(matches!(ssd_value_grad(&zero, &other), Err(Error::Geometry(_))));
}

#[test]
fn ssd_gradient_matches_fd() {
    let a = smooth_image(grid(7), 2);
    let b = smooth_image(grid(7), 3);
    image_fd_check(&a, &b, |r, w| ssd_value_grad(r, w).unwrap(), 1e-4, 1e-7, 4);
}

#[test]
fn lncc_self_and_affine_invariance() {
    let a = smooth_image(grid(10), 5);
    let (v, _) = lncc_value_grad(&a, &a, 2.0).unwrap();
    assert!(v.abs() < 1e-10, "{v}");
    let b = a.map(|x| 3.0 * x - 7.0);
    let (v, _) = lncc_value_grad(&a, &b, 2.0).unwrap();
    assert!(v.abs() < 1e-9, "{v}");
    let c = smooth_image(grid(10), 6);
    let (v, _) = lncc_value_grad(&a, &c, 2.0).unwrap();
    assert!(v > 1e-3 && v <= 1.0);
    assert!(GaussianWindow::new(&a.grid, 0.0).is_err());
}

#[test]
fn lncc_gradient_matches_fd() {
    let a = smooth_image(grid(9), 7);
    let b = smooth_image(grid(9), 8);
    image_fd_check(&a, &b, |r, w| lncc_value_grad(r, w, 1.5).unwrap(), 1e-5, 1e-5, 9);
}

#[test]
fn window_is_normalised_and_symmetric() {
    let g: VoxelGrid<f64> = VoxelGrid::new([7, 5, 6], [1.0, 1.5, 0.8], [0.0; 3]).unwrap();
    let w = GaussianWindow::new(&g, 1.2).unwrap();
    let ones = vec![1.0f64; g.len()];
    assert!(w.local_mean(&ones).iter().all(|&v| (v - 1.0).abs() < 1e-14));
    // <G x, y> = <x, G y>
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..g.len()).map(|_| rng.gen()).collect();
    let y: Vec<f64> = (0..g.len()).map(|_| rng.gen()).collect();
    let gx = w.apply(&x);
    let gy = w.apply(&y);
    let l: f64 = gx.iter().zip(&y).map(|(a, b)| a * b).sum();
    let r: f64 = x.iter().zip(&gy).map(|(a, b)| a * b).sum();
    assert!((l - r).abs() < 1e-12 * l.abs());
}

fn labels(n: usize, seed: u64) -> Image3D<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image3D::from_fn(grid(n), |_p: [f64; 3]| 0.0);
    for v in img.data_mut() {
        *v = rng.gen_range(0..64) as f64;
    }
    img.data_mut()[0] = 0.0;
    img.data_mut()[1] = 63.0;
    img
}

#[test]
fn hard_nmi_is_two_for_identity_and_relabelling() {
    let a = labels(8, 1);
    assert!((nmi_hard(&a, &a, 64).unwrap() - 2.0).abs() < 1e-6);
    let mut perm: Vec<usize> = (0..64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in (1..64).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let b = a.map(|v| perm[v as usize] as f64);
    assert!((nmi_hard(&a, &b, 64).unwrap() - 2.0).abs() < 1e-6);
    let unrelated = labels(8, 9);
    assert!(nmi_hard(&a, &unrelated, 64).unwrap() < 1.9);
}

#[test]
fn parzen_nmi_prefers_aligned_images() {
    let a = smooth_image(grid(10), 11);
    let b = smooth_image(grid(10), 12);
    let (self_v, _) = nmi_value_grad(&a, &a, 32).unwrap();
    let (other_v, _) = nmi_value_grad(&a, &b, 32).unwrap();
    assert!(-self_v > 1.0 && -self_v < 2.0);
    assert!(self_v < other_v);
    assert!(nmi_value_grad(&a, &b, 4).is_err());
}

#[test]
fn constant_image_hits_the_entropy_floor() {
    let a = Image3D::filled(grid(5), 1.0);
    let (v, g) = nmi_value_grad(&a, &a, 16).unwrap();
    assert!(v.is_finite());
    assert!(g.iter().all(|x| x.is_finite()));
}

#[test]
fn nmi_gradient_matches_fd() {
    let a = smooth_image(grid(8), 13);
    let b = smooth_image(grid(8), 14);
    let settings = NmiSettings {
        bins: 32,
        window: ParzenWindow::Cubic,
        reference_range: IntensityRange::of(&a, 0.05),
        warped_range: IntensityRange::of(&b, 0.05),
    };
    image_fd_check(&a, &b, |r, w| nmi_value_grad_with(r, w, &settings).unwrap(), 1e-6, 1e-3, 15);
}

fn control_grid(n: usize, h: f64) -> ControlGrid<f64> {
    ControlGrid::cube(n, h, 0.0, SplineOrder::QUADRATIC).unwrap()
}

fn random_svf(g: ControlGrid<f64>, amp: f64, seed: u64) -> DivConformingSvf<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let svf = DivConformingSvf::new(g).unwrap();
    let theta: Vec<f64> = (0..svf.param_count()).map(|_| rng.gen_range(-amp..amp)).collect();
    svf.with_coefficients(&theta).unwrap()
}

#[test]
fn bending_zero_and_affine_fields() {
    let g = control_grid(4, 2.0);
    let zero = DivConformingSvf::new(g).unwrap();
    let (v, grad) = bending_energy(&zero);
    assert_eq!(v, 0.0);
    assert!(grad.iter().all(|&x| x == 0.0));
    let affine = DivConformingSvf::from_fn(g, |p: [f64; 3]| {
        [0.3 * p[0] - 0.2 * p[1] + 1.0, 0.1 * p[2] + 0.5 * p[0], -0.4 * p[2] + 0.7 * p[1] - 2.0]
    })
    .unwrap();
    let (v, grad) = bending_energy(&affine);
    assert!(v.abs() < 1e-10, "{v:e}");
    assert!(grad.iter().all(|x| x.abs() < 1e-10));
    let quad = g.sample_lattice(3);
    let bent = DivConformingSvf::from_fn(g, |p: [f64; 3]| [0.0, 0.0, 0.1 * p[0] * p[0]]).unwrap();
    let (v, _) = bending_energy_value_grad(&bent, &quad);
    // v_zz'' = 0.2 along x: energy 0.04 at every point
    assert!((v - 0.04).abs() < 1e-10, "{v}");
}

/// Direct pointwise quadrature, the oracle for the Kronecker form.
fn bending_pointwise(svf: &DivConformingSvf<f64>, quad: &VoxelGrid<f64>) -> f64 {
    let mut e = 0.0;
    for i in 0..quad.len() {
        let p = quad.center(i);
        if !svf.contains(p) {
            continue;
        }
        for c in 0..3 {
            for (d, w) in super::bending::TERMS {
                e += w * svf.component_derivative(c, d, p).powi(2);
            }
        }
    }
    e / quad.len() as f64
}

#[test]
fn kronecker_form_matches_pointwise_sum() {
    let svf = random_svf(control_grid(3, 1.5), 1.0, 4);
    let quad = VoxelGrid::new([7, 6, 9], [0.9, 0.75, 0.6], [0.2, -0.3, 0.1]).unwrap();
    let (v, _) = bending_energy_value_grad(&svf, &quad);
    let want = bending_pointwise(&svf, &quad);
    assert!((v - want).abs() <= 1e-12 * want, "{v} vs {want}");
}

#[test]
fn bending_gradient_matches_fd() {
    let svf = random_svf(control_grid(3, 1.5), 1.0, 3);
    let quad = VoxelGrid::new([5, 6, 4], [0.9, 0.75, 1.1], [0.2, 0.3, 0.1]).unwrap();
    let (_, g) = bending_energy_value_grad(&svf, &quad);
    let theta = svf.coefficient_vector();
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // the energy is quadratic, so a large step keeps central differences exact
    let h = 0.1;
    for i in 0..theta.len() {
        let mut tp = theta.clone();
        tp[i] += h;
        let mut tm = theta.clone();
        tm[i] -= h;
        let fp = bending_energy_value_grad(&svf.with_coefficients(&tp).unwrap(), &quad).0;
        let fm = bending_energy_value_grad(&svf.with_coefficients(&tm).unwrap(), &quad).0;
        let fd = (fp - fm) / (2.0 * h);
        assert!(rel_err(fd, g[i], scale) < 1e-7, "param {i}: {fd:e} vs {:e}", g[i]);
    }
}

/// 8^3 voxel images on a 4^3 knot lattice, as used by the gradient checks.
fn tiny_problem() -> (Image3D<f64>, Image3D<f64>, DivConformingSvf<f64>) {
    let i1 = smooth_image(grid(8), 21);
    let i2 = smooth_image(grid(8), 22);
    (i1, i2, DivConformingSvf::new(control_grid(4, 2.0)).unwrap())
}

fn cfg(sim: Similarity) -> ObjectiveConfig {
    ObjectiveConfig {
        similarity: sim,
        lncc_window_sigma: 1.5,
        nmi_bins: 32,
        ..ObjectiveConfig::default()
    }
}

pub(crate) fn objective_fd_check<F: SplineVelocity<f64>>(obj: &Objective<f64, F>, theta: &[f64], params: &[usize], h: f64, tol: f64) -> f64 {
    let (_, g) = obj.value_grad(theta).unwrap();
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for &i in params {
        let mut tp = theta.to_vec();
        tp[i] += h;
        let mut tm = theta.to_vec();
        tm[i] -= h;
        let fd = (obj.value(&tp).unwrap() - obj.value(&tm).unwrap()) / (2.0 * h);
        let e = rel_err(fd, g[i], scale);
        worst = worst.max(e);
        assert!(e <= tol, "param {i}: fd {fd:e} analytic {:e} rel {e:e}", g[i]);
    }
    worst
}

fn small_theta(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect()
}

#[test]
fn objective_gradient_ssd_all_parameters() {
    let (i1, i2, svf) = tiny_problem();
    let obj = Objective::new(svf.clone(), &i1, &i2, cfg(Similarity::Ssd), EulerConfig::new(2).unwrap()).unwrap();
    let theta = small_theta(svf.param_count(), 1);
    let all: Vec<usize> = (0..theta.len()).collect();
    objective_fd_check(&obj, &theta, &all, 1e-6, 1e-4);
}

#[test]
fn objective_gradient_lncc_all_parameters() {
    let (i1, i2, svf) = tiny_problem();
    let obj = Objective::new(svf.clone(), &i1, &i2, cfg(Similarity::Lncc), EulerConfig::new(2).unwrap()).unwrap();
    let theta = small_theta(svf.param_count(), 2);
    let all: Vec<usize> = (0..theta.len()).collect();
    objective_fd_check(&obj, &theta, &all, 1e-6, 1e-4);
}

#[test]
fn objective_gradient_nmi_random_parameters() {
    let (i1, i2, svf) = tiny_problem();
    let obj = Objective::new(svf.clone(), &i1, &i2, cfg(Similarity::Nmi), EulerConfig::new(2).unwrap()).unwrap();
    let theta = small_theta(svf.param_count(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let some: Vec<usize> = (0..50).map(|_| rng.gen_range(0..theta.len())).collect();
    objective_fd_check(&obj, &theta, &some, 1e-6, 1e-3);
}

#[test]
fn objective_gradient_classical_family_and_more_steps() {
    let i1 = smooth_image(grid(8), 31);
    let i2 = smooth_image(grid(8), 32);
    let svf = ClassicalSvf::new(ControlGrid::cube(4, 2.0, 0.0, SplineOrder::CUBIC).unwrap());
    let obj = Objective::new(svf.clone(), &i1, &i2, cfg(Similarity::Ssd), EulerConfig::new(8).unwrap()).unwrap();
    let theta = small_theta(svf.param_count(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let some: Vec<usize> = (0..40).map(|_| rng.gen_range(0..theta.len())).collect();
    objective_fd_check(&obj, &theta, &some, 1e-6, 1e-4);
}

#[test]
fn one_step_mode_is_close_for_small_fields() {
    let (i1, i2, svf) = tiny_problem();
    let mk = |mode| {
        let c = ObjectiveConfig {
            gradient_mode: mode,
            bending_weight: 0.0,
            ..cfg(Similarity::Ssd)
        };
        Objective::new(svf.clone(), &i1, &i2, c, EulerConfig::new(4).unwrap()).unwrap()
    };
    let theta: Vec<f64> = small_theta(svf.param_count(), 7).iter().map(|x| x * 0.01).collect();
    let (va, ga) = mk(GradientMode::Adjoint).value_grad(&theta).unwrap();
    let (vo, go) = mk(GradientMode::OneStep).value_grad(&theta).unwrap();
    assert_eq!(va, vo);
    let num: f64 = ga.iter().zip(&go).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = ga.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(num / den < 0.05, "{}", num / den);
}

#[test]
fn identity_problem_at_zero() {
    let (i1, _, svf) = tiny_problem();
    let obj = Objective::new(svf.clone(), &i1, &i1, cfg(Similarity::Ssd), EulerConfig::new(4).unwrap()).unwrap();
    let theta = vec![0.0; svf.param_count()];
    let parts = obj.parts(&theta).unwrap();
    // cubic prefiltering reproduces samples up to round-off
    assert!(parts.forward < 1e-26 && parts.backward < 1e-26, "{parts:?}");
    assert_eq!(parts.bending, 0.0);
    let (_, g) = obj.value_grad(&theta).unwrap();
    assert!(g.iter().all(|x| x.abs() < 1e-14));
}

#[test]
fn similarity_weight_is_linear() {
    let (i1, i2, svf) = tiny_problem();
    let theta = small_theta(svf.param_count(), 8);
    let parts = |ws: f64| {
        let c = ObjectiveConfig {
            similarity_weight: ws,
            bending_weight: 0.05,
            ..cfg(Similarity::Lncc)
        };
        let obj = Objective::new(svf.clone(), &i1, &i2, c, EulerConfig::new(2).unwrap()).unwrap();
        obj.parts(&theta).unwrap()
    };
    let (a, b) = (parts(0.4), parts(0.8));
    let sim_a = a.total - 0.05 * a.bending;
    let sim_b = b.total - 0.05 * b.bending;
    assert!((sim_b - 2.0 * sim_a).abs() <= 1e-14 * sim_b.abs().max(1.0));
    let bad = ObjectiveConfig {
        bending_weight: -1.0,
        ..ObjectiveConfig::default()
    };
    assert!(Objective::new(svf, &i1, &i2, bad, EulerConfig::default()).is_err());
}

#[test]
fn swapping_images_and_negating_is_symmetric() {
    let (i1, i2, svf) = tiny_problem();
    let theta = small_theta(svf.param_count(), 9);
    let neg: Vec<f64> = theta.iter().map(|x| -x).collect();
    for sim in [Similarity::Ssd, Similarity::Lncc, Similarity::Nmi] {
        let e = EulerConfig::new(4).unwrap();
        let a = Objective::new(svf.clone(), &i1, &i2, cfg(sim), e).unwrap().value(&theta).unwrap();
        let b = Objective::new(svf.clone(), &i2, &i1, cfg(sim), e).unwrap().value(&neg).unwrap();
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{sim:?}: {a} vs {b}");
    }
}

#[test]
fn reduction_is_independent_of_thread_count() {
    let (i1, i2, svf) = tiny_problem();
    let theta = small_theta(svf.param_count(), 10);
    let obj = Objective::new(svf.clone(), &i1, &i2, cfg(Similarity::Lncc), EulerConfig::new(2).unwrap()).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| obj.value_grad(&theta).unwrap())
    };
    let (v1, g1) = run(1);
    let (v3, g3) = run(3);
    assert_eq!(v1.to_bits(), v3.to_bits());
    assert!(g1.iter().zip(&g3).all(|(a, b)| a.to_bits() == b.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pointwise_metric_gradients_match_fd(seed in 0u64..1000) {
        let a = smooth_image(grid(6), seed);
        let b = smooth_image(grid(6), seed + 1);
        image_fd_check(&a, &b, |r, w| ssd_value_grad(r, w).unwrap(), 1e-4, 1e-7, seed);
        image_fd_check(&a, &b, |r, w| lncc_value_grad(r, w, 1.0).unwrap(), 1e-5, 1e-5, seed);
    }

    #[test]
    fn bending_is_nonnegative_and_quadratic(seed in 0u64..1000, s in -3.0f64..3.0) {
        let svf = random_svf(control_grid(3, 1.0), 1.0, seed);
        let (e, _) = bending_energy(&svf);
        let (es, _) = bending_energy(&svf.scaled(s));
        prop_assert!(e >= 0.0);
        prop_assert!((es - s * s * e).abs() <= 1e-10 * e.max(1.0));
    }
}
