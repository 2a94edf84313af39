//! Continuous image sampling: trilinear and prefiltered cubic B-spline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline1d::{eval_centered, eval_centered_derivative, SplineOrder};
use crate::geometry::VoxelGrid;
use crate::io_image::Image3D;
use crate::scalar::{Real, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    #[default]
    Cubic,
}

/// Half-sample symmetric extension: the signal is reflected about the outer
/// voxel faces, which are the domain boundary.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let i = i.rem_euclid(period);
    if i >= n as isize {
        (period - 1 - i) as usize
    } else {
        i as usize
    }
}

/// In-place cubic B-spline prefilter of one line, half-sample symmetric
/// boundaries.
fn prefilter_line<T: Real>(c: &mut [T]) {
    let n = c.len();
    if n < 2 {
        return;
    }
    let z = T::lit(3.0f64.sqrt() - 2.0);
    let gain = T::lit(6.0);
    for v in c.iter_mut() {
        *v *= gain;
    }
    // causal initialisation summed over one period of the extension
    let mut sum = c[0] * (T::one() + z);
    for (j, &v) in c.iter().enumerate().skip(1) {
        sum += v * (z.powi(j as i32 + 1) + z.powi((2 * n - j) as i32));
    }
    c[0] = sum / (T::one() - z.powi(2 * n as i32));
    for k in 1..n {
        let prev = c[k - 1];
        c[k] += z * prev;
    }
    c[n - 1] = z / (z - T::one()) * c[n - 1];
    for k in (0..n - 1).rev() {
        let next = c[k + 1];
        c[k] = z * (next - c[k]);
    }
}

/// Cubic B-spline coefficients interpolating the image at voxel centres.
pub fn cubic_coefficients<T: Real>(img: &Image3D<T>) -> Vec<T> {
    let [nx, ny, nz] = img.grid.dims;
    let mut c = img.data().to_vec();
    c.par_chunks_mut(nx).for_each(prefilter_line);
    let mut line = Vec::new();
    for z in 0..nz {
        for x in 0..nx {
            line.clear();
            line.extend((0..ny).map(|y| c[x + nx * (y + ny * z)]));
            prefilter_line(&mut line);
            for (y, v) in line.iter().enumerate() {
                c[x + nx * (y + ny * z)] = *v;
            }
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            line.clear();
            line.extend((0..nz).map(|z| c[x + nx * (y + ny * z)]));
            prefilter_line(&mut line);
            for (z, v) in line.iter().enumerate() {
                c[x + nx * (y + ny * z)] = *v;
            }
        }
    }
    c
}

/// Samples an image at world positions. Positions outside the voxel domain
/// (outer faces of the edge voxels) return `padding` with zero gradient.
#[derive(Debug, Clone)]
pub struct ImageSampler<T> {
    grid: VoxelGrid<T>,
    kind: Interpolation,
    data: Vec<T>,
    padding: T,
}

impl<T: Real> ImageSampler<T> {
    pub fn new(img: &Image3D<T>, kind: Interpolation, padding: T) -> Self {
        let data = match kind {
            Interpolation::Trilinear => img.data().to_vec(),
            Interpolation::Cubic => cubic_coefficients(img),
        };
        ImageSampler {
            grid: img.grid,
            kind,
            data,
            padding,
        }
    }

    /// Padding defaults to the image minimum.
    pub fn with_default_padding(img: &Image3D<T>, kind: Interpolation) -> Self {
        Self::new(img, kind, img.min())
    }

    pub fn grid(&self) -> &VoxelGrid<T> {
        &self.grid
    }

    pub fn padding(&self) -> T {
        self.padding
    }

    pub fn sample(&self, p: Vec3<T>) -> T {
        self.sample_with_gradient(p).0
    }

    /// Value and world-space gradient at `p`.
    pub fn sample_with_gradient(&self, p: Vec3<T>) -> (T, Vec3<T>) {
        let v = self.grid.world_to_voxel(p);
        let half = T::lit(0.5);
        for a in 0..3 {
            let hi = T::from_usize_lossy(self.grid.dims[a]) - half;
            if !(v[a] >= -half && v[a] <= hi) {
                return (self.padding, [T::zero(); 3]);
            }
        }
        let (val, g) = match self.kind {
            Interpolation::Trilinear => self.trilinear(v),
            Interpolation::Cubic => self.cubic(v),
        };
        (
            val,
            [g[0] / self.grid.spacing[0], g[1] / self.grid.spacing[1], g[2] / self.grid.spacing[2]],
        )
    }

    #[inline]
    fn at(&self, i: usize, j: usize, k: usize) -> T {
        let d = self.grid.dims;
        self.data[i + d[0] * (j + d[1] * k)]
    }

    fn trilinear(&self, v: Vec3<T>) -> (T, Vec3<T>) {
        let d = self.grid.dims;
        let mut i0 = [0usize; 3];
        let mut i1 = [0usize; 3];
        let mut f = [T::zero(); 3];
        for a in 0..3 {
            // clamp to the centre lattice; half a voxel of constant extension
            let mut x = v[a].max(T::zero()).min(T::from_usize_lossy(d[a] - 1));
            // snap round-off so voxel centres reproduce samples exactly
            if (x - x.round()).abs() < T::epsilon() * T::lit(64.0) * (T::one() + x.abs()) {
                x = x.round();
            }
            let fl = x.floor();
            let base = fl.to_usize().unwrap_or(0).min(d[a] - 1);
            i0[a] = base;
            i1[a] = (base + 1).min(d[a] - 1);
            f[a] = if i1[a] == base { T::zero() } else { x - fl };
        }
        let c = |x: usize, y: usize, z: usize| {
            self.at(
                if x == 0 { i0[0] } else { i1[0] },
                if y == 0 { i0[1] } else { i1[1] },
                if z == 0 { i0[2] } else { i1[2] },
            )
        };
        let one = T::one();
        let w = |a: usize, s: usize| if s == 0 { one - f[a] } else { f[a] };
        let dw = |s: usize, inside: bool| {
            if !inside {
                T::zero()
            } else if s == 0 {
                -one
            } else {
                one
            }
        };
        let inside: [bool; 3] = [0, 1, 2].map(|a| {
            i1[a] != i0[a] && v[a] >= T::zero() && v[a] <= T::from_usize_lossy(d[a] - 1)
        });
        let mut val = T::zero();
        let mut g = [T::zero(); 3];
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    let cv = c(x, y, z);
                    val += w(0, x) * w(1, y) * w(2, z) * cv;
                    g[0] += dw(x, inside[0]) * w(1, y) * w(2, z) * cv;
                    g[1] += w(0, x) * dw(y, inside[1]) * w(2, z) * cv;
                    g[2] += w(0, x) * w(1, y) * dw(z, inside[2]) * cv;
                }
            }
        }
        (val, g)
    }

    fn cubic(&self, v: Vec3<T>) -> (T, Vec3<T>) {
        let d = self.grid.dims;
        let mut idx = [[0usize; 4]; 3];
        let mut w = [[T::zero(); 4]; 3];
        let mut dw = [[T::zero(); 4]; 3];
        for a in 0..3 {
            let fl = v[a].floor();
            let base = fl.to_isize().unwrap_or(0) - 1;
            for j in 0..4 {
                let i = base + j as isize;
                let t = v[a] - T::from_isize(i).expect("small index");
                idx[a][j] = reflect(i, d[a]);
                w[a][j] = eval_centered(SplineOrder::CUBIC, t);
                dw[a][j] = eval_centered_derivative(SplineOrder::CUBIC, t).expect("cubic");
            }
        }
        let mut val = T::zero();
        let mut g = [T::zero(); 3];
        for z in 0..4 {
            for y in 0..4 {
                let mut sv = T::zero();
                let mut sdx = T::zero();
                for x in 0..4 {
                    let c = self.at(idx[0][x], idx[1][y], idx[2][z]);
                    sv += w[0][x] * c;
                    sdx += dw[0][x] * c;
                }
                val += sv * w[1][y] * w[2][z];
                g[0] += sdx * w[1][y] * w[2][z];
                g[1] += sv * dw[1][y] * w[2][z];
                g[2] += sv * w[1][y] * dw[2][z];
            }
        }
        (val, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(dims: [usize; 3], seed: u64) -> Image3D<f64> {
        let grid = VoxelGrid::new(dims, [1.0, 1.5, 0.8], [2.0, -1.0, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image3D::new(grid, (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn both_interpolate_at_voxel_centres() {
        let img = random_image([7, 5, 6], 1);
        for kind in [Interpolation::Trilinear, Interpolation::Cubic] {
            let s = ImageSampler::new(&img, kind, 0.0);
            for idx in 0..img.len() {
                let v = s.sample(img.grid.center(idx));
                assert!((v - img.data()[idx]).abs() < 1e-12, "{kind:?} {idx}");
            }
        }
    }

    #[test]
    fn prefilter_matches_dense_interpolation_solve() {
        // reflected cubic spline must hit the samples exactly
        let data = [0.3, -1.0, 2.0, 0.5, 0.0, 1.25];
        let mut c = data.to_vec();
        prefilter_line(&mut c);
        for i in 0..data.len() {
            let mut acc = 0.0;
            for j in -3isize..9 {
                acc += c[reflect(j, 6)] * eval_centered(SplineOrder::CUBIC, i as f64 - j as f64);
            }
            assert!((acc - data[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let img = random_image([8, 7, 9], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [Interpolation::Trilinear, Interpolation::Cubic] {
            let s = ImageSampler::new(&img, kind, 0.0);
            for _ in 0..200 {
                let v: [f64; 3] = [rng.gen_range(0.2..6.8), rng.gen_range(0.2..5.8), rng.gen_range(0.2..7.8)];
                if kind == Interpolation::Trilinear && v.iter().any(|x| (x - x.round()).abs() < 1e-3) {
                    continue;
                }
                let p = img.grid.voxel_to_world(v);
                let (_, g) = s.sample_with_gradient(p);
                for a in 0..3 {
                    let h = 1e-6;
                    let mut pp = p;
                    let mut pm = p;
                    pp[a] += h;
                    pm[a] -= h;
                    let fd = (s.sample(pp) - s.sample(pm)) / (2.0 * h);
                    assert!((fd - g[a]).abs() < 1e-6 * (1.0 + g[a].abs()), "{kind:?} axis {a}: {fd} vs {}", g[a]);
                }
            }
        }
    }

    #[test]
    fn outside_returns_padding() {
        let img = random_image([4, 4, 4], 4);
        let s = ImageSampler::new(&img, Interpolation::Cubic, -7.0);
        assert_eq!(s.sample([-100.0, 0.0, 0.0]), -7.0);
        let d = ImageSampler::with_default_padding(&img, Interpolation::Trilinear);
        assert_eq!(d.padding(), img.min());
    }

    #[test]
    fn boundary_band_matches_reference_values() {
        // reference: half-sample symmetric cubic interpolation of 0..11
        let grid = VoxelGrid::new([12, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let img = Image3D::from_fn(grid, |p: [f64; 3]| p[0]);
        let s = ImageSampler::new(&img, Interpolation::Cubic, 0.0);
        for (x, want) in [(10.5, 10.558012583271651), (10.9, 10.930530717986677), (11.4, 11.152153960029608)] {
            let v = s.sample([x, 0.0, 0.0]);
            assert!((v - want).abs() < 1e-12, "{x}: {v} vs {want}");
        }
    }

    #[test]
    fn cubic_reproduces_linear_ramps() {
        // reflection perturbs the ramp only within a few voxels of the
        // faces; the perturbation decays like 0.268^distance
        let grid = VoxelGrid::new([40, 40, 40], [1.0; 3], [0.0; 3]).unwrap();
        let img = Image3D::from_fn(grid, |p: [f64; 3]| 0.5 * p[0] - 0.25 * p[1] + p[2]);
        let s = ImageSampler::new(&img, Interpolation::Cubic, 0.0);
        for p in [[19.3f64, 20.1, 18.7], [18.1, 21.9, 20.5]] {
            let (v, g) = s.sample_with_gradient(p);
            assert!((v - (0.5 * p[0] - 0.25 * p[1] + p[2])).abs() < 1e-8);
            assert!((g[0] - 0.5).abs() < 1e-8 && (g[1] + 0.25).abs() < 1e-8 && (g[2] - 1.0).abs() < 1e-8);
        }
    }
}
