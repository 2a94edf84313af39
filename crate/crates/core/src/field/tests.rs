use super::*;
use crate::bspline1d::{KnotAxis, SplineOrder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid6() -> ControlGrid<f64> {
    ControlGrid::new(
        [
            KnotAxis::new(1.0, 6, 0.0).unwrap(),
            KnotAxis::new(1.25, 6, -1.0).unwrap(),
            KnotAxis::new(0.8, 6, 2.0).unwrap(),
        ],
        SplineOrder::QUADRATIC,
    )
}

fn random_theta(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_field(seed: u64) -> DivConformingSvf<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut svf = DivConformingSvf::new(grid6()).unwrap();
    let theta = random_theta(svf.param_count(), &mut rng);
    svf.set_coefficients(&theta).unwrap();
    svf
}

fn random_point(g: &ControlGrid<f64>, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let (lo, hi) = g.domain();
    [0, 1, 2].map(|a| rng.gen_range(lo[a]..hi[a]))
}

/// Coefficients with every psi equal to zero: phiY, phiZ random, phiX
/// integrated along x so that each backward difference cancels.
pub(crate) fn divergence_free_field(grid: ControlGrid<f64>, seed: u64) -> DivConformingSvf<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut svf = DivConformingSvf::new(grid).unwrap();
    let theta = random_theta(svf.param_count(), &mut rng);
    svf.set_coefficients(&theta).unwrap();
    let [nx, ny, nz] = svf.psi_counts();
    let sp = grid.spacing();
    for sz in 0..nz {
        for sy in 0..ny {
            for sx in 0..nx {
                let rest = {
                    let cy = &svf.components()[1];
                    let cz = &svf.components()[2];
                    (cy.coeffs()[cy.index([sx, sy + 1, sz])] - cy.coeffs()[cy.index([sx, sy, sz])]) / sp[1]
                        + (cz.coeffs()[cz.index([sx, sy, sz + 1])] - cz.coeffs()[cz.index([sx, sy, sz])])
                            / sp[2]
                };
                let cx = &mut svf.components_mut()[0];
                let lo = cx.coeffs()[cx.index([sx, sy, sz])];
                let hi = cx.index([sx + 1, sy, sz]);
                cx.coeffs_mut()[hi] = lo - sp[0] * rest;
            }
        }
    }
    svf
}

#[test]
fn rejects_unsupported_divergence_orders() {
    let g = ControlGrid::<f64>::cube(4, 1.0, 0.0, SplineOrder::LINEAR).unwrap();
    assert!(DivConformingSvf::new(g).is_err());
    let g = ControlGrid::<f64>::cube(4, 1.0, 0.0, SplineOrder::CUBIC).unwrap();
    assert!(DivConformingSvf::new(g).is_err());
}

#[test]
fn zero_and_constant_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut svf = DivConformingSvf::new(grid6()).unwrap();
    for _ in 0..50 {
        let p = random_point(svf.grid(), &mut rng);
        assert_eq!(svf.eval_velocity(p).unwrap(), [0.0; 3]);
        assert_eq!(svf.eval_jacobian(p).unwrap(), [[0.0; 3]; 3]);
    }
    let c = [0.3, -1.2, 2.5];
    for (i, comp) in svf.components_mut().iter_mut().enumerate() {
        comp.coeffs_mut().iter_mut().for_each(|v| *v = c[i]);
    }
    for _ in 0..200 {
        let p = random_point(svf.grid(), &mut rng);
        let v = svf.eval_velocity(p).unwrap();
        for a in 0..3 {
            assert!((v[a] - c[a]).abs() < 1e-13);
        }
        assert!(svf.eval_divergence(p).unwrap().abs() < 1e-13);
    }
}

#[test]
fn velocity_matches_exhaustive_sum() {
    let svf = random_field(2);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let p = random_point(svf.grid(), &mut rng);
        let v = svf.eval_velocity(p).unwrap();
        for c in 0..3 {
            let brute = svf.components()[c].eval_exhaustive(p);
            assert!((v[c] - brute).abs() <= 1e-12, "{} vs {}", v[c], brute);
        }
    }
}

#[test]
fn outside_domain_is_an_error() {
    let svf = random_field(3);
    assert!(matches!(svf.eval_velocity([-0.1, 0.0, 2.5]), Err(Error::Domain { .. })));
    assert!(svf.eval_divergence([0.5, 100.0, 2.5]).is_err());
    assert!(svf.eval_jacobian([0.5, 0.0, -3.0]).is_err());
}

fn fd_jacobian(svf: &DivConformingSvf<f64>, p: [f64; 3], h: f64) -> [[f64; 3]; 3] {
    let mut j = [[0.0; 3]; 3];
    for d in 0..3 {
        let mut pp = p;
        let mut pm = p;
        pp[d] += h;
        pm[d] -= h;
        let vp = svf.velocity_unchecked(pp);
        let vm = svf.velocity_unchecked(pm);
        for c in 0..3 {
            j[c][d] = (vp[c] - vm[c]) / (2.0 * h);
        }
    }
    j
}

fn interior_point(g: &ControlGrid<f64>, rng: &mut ChaCha8Rng, margin: f64) -> [f64; 3] {
    let (lo, hi) = g.domain();
    [0, 1, 2].map(|a| rng.gen_range(lo[a] + margin..hi[a] - margin))
}

#[test]
fn divergence_matches_finite_differences() {
    let svf = random_field(4);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let h = 1e-4;
    for _ in 0..500 {
        let p = interior_point(svf.grid(), &mut rng, 2.0 * h);
        let j = fd_jacobian(&svf, p, h);
        let fd = j[0][0] + j[1][1] + j[2][2];
        let an = svf.eval_divergence(p).unwrap();
        assert!((fd - an).abs() <= 1e-5, "fd={fd} an={an}");
    }
}

#[test]
fn jacobian_matches_finite_differences_and_trace() {
    let svf = random_field(5);
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let h = 1e-4;
    for _ in 0..200 {
        let p = interior_point(svf.grid(), &mut rng, 2.0 * h);
        let an = svf.eval_jacobian(p).unwrap();
        let fd = fd_jacobian(&svf, p, h);
        for c in 0..3 {
            for d in 0..3 {
                assert!((an[c][d] - fd[c][d]).abs() <= 1e-5);
            }
        }
        let tr = an[0][0] + an[1][1] + an[2][2];
        assert!((tr - svf.eval_divergence(p).unwrap()).abs() <= 1e-13);
    }
}

#[test]
fn psi_free_field_is_divergence_free_everywhere() {
    let svf = divergence_free_field(grid6(), 6);
    assert!(svf.psi_coefficients().iter().all(|p| p.abs() < 1e-12));
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    for _ in 0..100_000 {
        let p = random_point(svf.grid(), &mut rng);
        assert!(svf.eval_divergence(p).unwrap().abs() <= 1e-12);
    }
}

#[test]
fn divergence_is_the_psi_spline() {
    let svf = random_field(7);
    let spline = svf.divergence_spline();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let p = random_point(svf.grid(), &mut rng);
        let a = svf.eval_divergence(p).unwrap();
        let b = spline.eval_exhaustive(p);
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn lemma_bound_holds_on_samples() {
    let base = divergence_free_field(grid6(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    // perturb psi by at most eps through phiX at the upper end of each x row
    let eps = 1e-3;
    let mut svf = base.clone();
    {
        let cx = &mut svf.components_mut()[0];
        for v in cx.coeffs_mut().iter_mut() {
            *v += rng.gen_range(-0.5 * eps..0.5 * eps) * 1.0;
        }
    }
    let max_psi = svf.psi_coefficients().iter().fold(0.0f64, |m, p| m.max(p.abs()));
    assert!(max_psi <= eps + 1e-12);
    for _ in 0..100_000 {
        let p = random_point(svf.grid(), &mut rng);
        assert!(svf.eval_divergence(p).unwrap().abs() <= max_psi + 1e-15);
    }
}

#[test]
fn coefficient_vector_round_trip_and_length() {
    let svf = random_field(9);
    let theta = svf.coefficient_vector();
    let [n0, n1, n2] = svf.grid().knot_counts();
    let expected = (n0 + 3) * (n1 + 2) * (n2 + 2)
        + (n0 + 2) * (n1 + 3) * (n2 + 2)
        + (n0 + 2) * (n1 + 2) * (n2 + 3);
    assert_eq!(theta.len(), expected);
    let back = DivConformingSvf::from_coefficient_vector(*svf.grid(), &theta).unwrap();
    assert_eq!(back, svf);
    assert!(matches!(
        DivConformingSvf::from_coefficient_vector(*svf.grid(), &theta[1..]),
        Err(Error::Shape { .. })
    ));
    let zero = DivConformingSvf::<f64>::new(grid6()).unwrap();
    assert!(zero.coefficient_vector().iter().all(|&v| v == 0.0));
}

#[test]
fn evaluations_are_linear_in_parameters() {
    let a = random_field(10);
    let b = random_field(11);
    let (sa, sb) = (0.7, -1.9);
    let ta = a.coefficient_vector();
    let tb = b.coefficient_vector();
    let mix: Vec<f64> = ta.iter().zip(&tb).map(|(x, y)| sa * x + sb * y).collect();
    let m = a.with_coefficients(&mix).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let p = random_point(a.grid(), &mut rng);
        let (va, ja) = a.velocity_and_jacobian_unchecked(p);
        let (vb, jb) = b.velocity_and_jacobian_unchecked(p);
        let (vm, jm) = m.velocity_and_jacobian_unchecked(p);
        for c in 0..3 {
            assert!((vm[c] - (sa * va[c] + sb * vb[c])).abs() <= 1e-12);
            for d in 0..3 {
                assert!((jm[c][d] - (sa * ja[c][d] + sb * jb[c][d])).abs() <= 1e-12);
            }
        }
        let dm = m.eval_divergence(p).unwrap();
        let dd = sa * a.eval_divergence(p).unwrap() + sb * b.eval_divergence(p).unwrap();
        assert!((dm - dd).abs() <= 1e-12);
    }
}

#[test]
fn perturbation_is_local_to_the_support_box() {
    let base = random_field(13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let c = 1;
    let comp = &base.components()[c];
    let idx = comp.len() / 2;
    let s = comp.unravel(idx);
    let orders = comp.orders();
    let mut bumped = base.clone();
    bumped.components_mut()[c].coeffs_mut()[idx] += 1.0;
    let g = base.grid();
    let support: Vec<(f64, f64)> = (0..3)
        .map(|a| g.axes[a].support(g.axes[a].knot_index(s[a], orders[a]), orders[a]))
        .collect();
    for _ in 0..2000 {
        let p = random_point(g, &mut rng);
        let inside = (0..3).all(|a| p[a] > support[a].0 && p[a] < support[a].1);
        let dv = bumped.velocity_unchecked(p)[c] - base.velocity_unchecked(p)[c];
        if !inside {
            assert!(dv.abs() < 1e-14);
        }
    }
}

#[test]
fn refinement_preserves_the_field() {
    let svf = random_field(15);
    let fine = svf.refined().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..500 {
        let p = random_point(svf.grid(), &mut rng);
        let a = svf.velocity_unchecked(p);
        let b = fine.velocity_unchecked(p);
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-12);
        }
    }
    let free = divergence_free_field(grid6(), 17).refined().unwrap();
    assert!(free.psi_coefficients().iter().all(|p| p.abs() < 1e-12));
}

#[test]
fn classical_field_divergence_is_unsupported() {
    let g = ControlGrid::<f64>::cube(4, 1.0, 0.0, SplineOrder::CUBIC).unwrap();
    let mut svf = ClassicalSvf::new(g);
    svf.set_coeff([2, 2, 2], [1.0, 0.0, 0.0]);
    assert!(matches!(svf.eval_divergence([1.0; 3]), Err(Error::Unsupported(_))));
    let p = [1.3, 2.1, 1.7];
    let h = 1e-5;
    let fd = (svf.velocity_unchecked([p[0] + h, p[1], p[2]])[0]
        - svf.velocity_unchecked([p[0] - h, p[1], p[2]])[0])
        / (2.0 * h);
    assert!((svf.divergence_via_jacobian(p).unwrap() - fd).abs() < 1e-8);
}

#[test]
fn from_fn_reproduces_affine_fields() {
    let f = |p: [f64; 3]| [1.0 + 0.2 * p[0] - 0.1 * p[2], -0.3 * p[1] + 0.05 * p[0], 0.1 * p[2] + 2.0];
    let svf = DivConformingSvf::from_fn(grid6(), f).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..200 {
        let p = random_point(svf.grid(), &mut rng);
        let v = svf.eval_velocity(p).unwrap();
        let e = f(p);
        for c in 0..3 {
            assert!((v[c] - e[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn quasi_interpolate_reproduces_quadratics() {
    let f = |p: [f64; 3]| {
        [
            0.02 * p[0] * p[1] - 0.01 * p[2] * p[2] + 0.3,
            0.015 * p[1] * p[1] + 0.02 * p[0] * p[2],
            -0.01 * p[0] * p[0] + 0.1 * p[1],
        ]
    };
    let svf = DivConformingSvf::quasi_interpolate(grid6(), f).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..200 {
        let p = random_point(svf.grid(), &mut rng);
        let v = svf.eval_velocity(p).unwrap();
        let e = f(p);
        for c in 0..3 {
            assert!((v[c] - e[c]).abs() < 1e-11, "{v:?} {e:?}");
        }
    }
}
