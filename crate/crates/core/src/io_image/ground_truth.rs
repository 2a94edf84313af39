//! Synthetic incompressible velocity fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bspline1d::SplineOrder;
use crate::constraint::{assemble_constraints, project_classical_at_knots, ConstraintSystem};
use crate::error::{Error, Result};
use crate::field::{ClassicalSvf, ControlGrid, DivConformingSvf, SplineVelocity};
use crate::flow::{exponential_euler, EulerConfig};
use crate::geometry::VoxelGrid;
use crate::scalar::Real;

/// Box-Muller standard normal sample.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Constraint rows for every divergence coefficient of the lattice, i.e.
/// divergence free on the whole grid domain.
pub fn full_domain_constraints<T: Real>(grid: &ControlGrid<T>) -> Result<ConstraintSystem<T>> {
    let k = grid.order.get() as isize;
    let n = grid.knot_counts();
    let mut idx = Vec::new();
    for z in -k..n[2] as isize {
        for y in -k..n[1] as isize {
            for x in -k..n[0] as isize {
                idx.push([x, y, z]);
            }
        }
    }
    assemble_constraints(grid, &idx)
}

/// Pair of ground-truth fields on one knot lattice.
#[derive(Debug, Clone)]
pub struct GroundTruth<T> {
    /// Cubic classical field with zero divergence at every knot.
    pub classical: ClassicalSvf<T>,
    /// Divergence-conforming field, exactly divergence free on the domain.
    pub conforming: DivConformingSvf<T>,
    /// Amplitude actually used after any reductions.
    pub amplitude: f64,
}

fn taper(t: f64) -> f64 {
    let s = (std::f64::consts::PI * t.clamp(0.0, 1.0)).sin();
    s * s
}

/// Lattice of spacing `d / 2` covering the grid domain, used to check flags.
pub(crate) fn check_lattice<T: Real>(grid: &ControlGrid<T>) -> VoxelGrid<T> {
    grid.sample_lattice(2)
}

fn max_speed_at_knots<T: Real, F: SplineVelocity<T>>(svf: &F) -> f64 {
    let g = svf.grid();
    let n = g.knot_counts();
    let mut m = 0.0f64;
    for z in 0..=n[2] {
        for y in 0..=n[1] {
            for x in 0..=n[0] {
                let p = [g.axes[0].knot(x as isize), g.axes[1].knot(y as isize), g.axes[2].knot(z as isize)];
                let v = svf.velocity_unchecked(p);
                m = m.max((0..3).map(|a| v[a].as_f64().powi(2)).sum::<f64>().sqrt());
            }
        }
    }
    m
}

/// Seeded random smooth ground truth: a tapered random cubic classical field
/// projected to zero knot divergence, and its quasi-interpolant in the
/// divergence-conforming space projected to exact feasibility. `amplitude`
/// is the peak speed at the knots in mm. The amplitude is reduced until at
/// most 1% of the trajectories on a half-spacing lattice leave the domain.
pub fn make_ground_truth_svf<T: Real>(grid: &ControlGrid<T>, seed: u64, amplitude: f64) -> Result<GroundTruth<T>> {
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::Config(format!("amplitude must be finite and nonnegative, got {amplitude}")));
    }
    let cubic = ControlGrid::new(grid.axes, SplineOrder::CUBIC);
    let quad = ControlGrid::new(grid.axes, SplineOrder::QUADRATIC);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = ClassicalSvf::<T>::new(cubic);
    let (lo, hi) = cubic.domain();
    let k = 3isize;
    for c in 0..3 {
        let comp = &mut base.components_mut()[c];
        for idx in 0..comp.len() {
            let s = comp.unravel(idx);
            let mut w = 1.0;
            for a in 0..3 {
                let i = s[a] as isize - k;
                let centre = cubic.axes[a].knot(i) + cubic.axes[a].spacing() * T::lit(2.0);
                w *= taper(((centre - lo[a]) / (hi[a] - lo[a])).as_f64());
            }
            comp.coeffs_mut()[idx] = T::lit(w * standard_normal(&mut rng));
        }
    }
    let projected = project_classical_at_knots(&base)?;
    let peak = max_speed_at_knots(&projected);
    let unit = if peak > 0.0 { projected.scaled(T::lit(1.0 / peak)) } else { projected };

    let system = full_domain_constraints(&quad)?;
    let projector = system.projector();
    let conforming_unit = {
        let q = DivConformingSvf::quasi_interpolate(quad, |p| {
            if unit.contains(p) { unit.velocity_unchecked(p) } else { [T::zero(); 3] }
        })?;
        let theta = projector.project(&q.coefficient_vector())?;
        DivConformingSvf::from_coefficient_vector(quad, &theta)?
    };

    let lattice = check_lattice(grid);
    let cfg = EulerConfig::default();
    let mut amp = amplitude;
    for _ in 0..12 {
        let a = T::lit(amp);
        let conforming = conforming_unit.scaled(a);
        let classical = unit.scaled(a);
        let flagged = exponential_euler(&conforming, &cfg, &lattice)?.flagged_fraction()
            .max(exponential_euler(&classical, &cfg, &lattice)?.flagged_fraction());
        if flagged <= 0.01 {
            return Ok(GroundTruth {
                classical,
                conforming,
                amplitude: amp,
            });
        }
        log::warn!("ground truth amplitude {amp} leaves the domain at {:.2}% of voxels; reducing", 100.0 * flagged);
        amp *= 0.7;
    }
    Err(Error::Config("could not keep ground-truth trajectories inside the domain".into()))
}

/// Smooth incompressible field from an analytic target: the curl of a
/// tapered random trigonometric potential, quasi-interpolated and projected
/// to exact feasibility on the whole domain. The target depends only on the
/// domain and `seed`, so lattices of different spacing over the same domain
/// approximate the same velocity. Peak target speed is `amplitude` mm.
pub fn smooth_incompressible_svf<T: Real>(grid: &ControlGrid<T>, amplitude: f64, seed: u64) -> Result<DivConformingSvf<T>> {
    let target = smooth_target(grid, amplitude, seed);
    let q = DivConformingSvf::quasi_interpolate(*grid, |p| {
        let v = target(p.map(|x| x.as_f64()));
        v.map(T::lit)
    })?;
    let system = full_domain_constraints(grid)?;
    let theta = system.projector().project(&q.coefficient_vector())?;
    DivConformingSvf::from_coefficient_vector(*grid, &theta)
}

/// The analytic target behind [`smooth_incompressible_svf`].
pub fn smooth_target<T: Real>(grid: &ControlGrid<T>, amplitude: f64, seed: u64) -> impl Fn([f64; 3]) -> [f64; 3] + Sync {
    let (lo, hi) = grid.domain();
    let lo = lo.map(|x| x.as_f64());
    let len = [0, 1, 2].map(|a| hi[a].as_f64() - lo[a]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    // A_c = alpha_c sin(k1 x_{c+1} + p1) sin(k2 x_{c+2} + p2)
    let terms: Vec<(f64, [f64; 2], [f64; 2])> = (0..3)
        .map(|c| {
            let a1 = (c + 1) % 3;
            let a2 = (c + 2) % 3;
            (
                rng.gen_range(0.5..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                [tau / (len[a1] * rng.gen_range(0.9..1.5)), tau / (len[a2] * rng.gen_range(0.9..1.5))],
                [rng.gen_range(0.0..tau), rng.gen_range(0.0..tau)],
            )
        })
        .collect();
    let raw = move |p: [f64; 3]| -> [f64; 3] {
        let t = [0, 1, 2].map(|a| ((p[a] - lo[a]) / len[a]).clamp(0.0, 1.0));
        let s2 = t.map(taper);
        let ds2 = [0, 1, 2].map(|a| std::f64::consts::PI / len[a] * (tau * t[a]).sin());
        let w = s2[0] * s2[1] * s2[2];
        let gw = [ds2[0] * s2[1] * s2[2], s2[0] * ds2[1] * s2[2], s2[0] * s2[1] * ds2[2]];
        // potential and its Jacobian dA[c][d] = dA_c / dx_d
        let mut a = [0.0; 3];
        let mut da = [[0.0; 3]; 3];
        for (c, (alpha, k, ph)) in terms.iter().enumerate() {
            let a1 = (c + 1) % 3;
            let a2 = (c + 2) % 3;
            let (u1, u2) = (k[0] * p[a1] + ph[0], k[1] * p[a2] + ph[1]);
            a[c] = alpha * u1.sin() * u2.sin();
            da[c][a1] = alpha * k[0] * u1.cos() * u2.sin();
            da[c][a2] = alpha * k[1] * u1.sin() * u2.cos();
        }
        let curl_a = [da[2][1] - da[1][2], da[0][2] - da[2][0], da[1][0] - da[0][1]];
        let cross = [gw[1] * a[2] - gw[2] * a[1], gw[2] * a[0] - gw[0] * a[2], gw[0] * a[1] - gw[1] * a[0]];
        [0, 1, 2].map(|c| w * curl_a[c] + cross[c])
    };
    // normalise the peak speed on a coarse sample
    let mut peak = 0.0f64;
    let n = 24;
    for z in 0..=n {
        for y in 0..=n {
            for x in 0..=n {
                let p = [x, y, z].map(|i| i as f64 / n as f64);
                let p = [0, 1, 2].map(|a| lo[a] + p[a] * len[a]);
                let v = raw(p);
                peak = peak.max((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
            }
        }
    }
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    move |p: [f64; 3]| raw(p).map(|v| v * scale)
}
