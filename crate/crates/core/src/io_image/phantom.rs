use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::VoxelGrid;
use crate::scalar::Real;

use super::Image3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    SphereShells,
    SinusoidTexture,
    CheckerSmooth,
}

impl std::str::FromStr for PhantomKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sphere-shells" => Ok(PhantomKind::SphereShells),
            "sinusoid-texture" => Ok(PhantomKind::SinusoidTexture),
            "checker-smooth" => Ok(PhantomKind::CheckerSmooth),
            other => Err(format!("unknown phantom kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    /// Isotropic voxel size in mm.
    pub spacing: f64,
    pub seed: u64,
    /// Edge width of the smooth step profiles, in voxels.
    pub edge_voxels: f64,
    /// Also produce a second image with a nonlinear intensity transfer.
    pub second_modality: bool,
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, n: usize, seed: u64) -> Self {
        PhantomSpec {
            kind,
            dims: [n; 3],
            spacing: 1.0,
            seed,
            edge_voxels: 1.0,
            second_modality: false,
        }
    }

    pub fn with_second_modality(mut self) -> Self {
        self.second_modality = true;
        self
    }

    pub fn grid<T: Real>(&self) -> VoxelGrid<T> {
        let s = T::lit(self.spacing);
        VoxelGrid {
            dims: self.dims,
            spacing: [s; 3],
            origin: [s * T::lit(0.5); 3],
        }
    }

    /// Outer, middle and inner shell radii (mm) of the sphere-shells kind,
    /// and the centre.
    pub fn shell_geometry(&self) -> ([f64; 3], [f64; 3]) {
        let (c, r) = layout(self, &mut ChaCha8Rng::seed_from_u64(self.seed));
        (c, [0.9 * r, 0.6 * r, 0.3 * r])
    }
}

fn sigmoid(x: f64) -> f64 {
    0.5 * (1.0 + (0.5 * x).tanh())
}

/// Centre (jittered) and envelope radius.
fn layout(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> ([f64; 3], f64) {
    let ext = spec.dims.map(|d| d as f64 * spec.spacing);
    let r = 0.4 * ext.iter().copied().fold(f64::INFINITY, f64::min);
    let c = [0, 1, 2].map(|a| 0.5 * ext[a] + rng.gen_range(-0.03..0.03) * ext[a]);
    (c, r)
}

/// Second modality: strictly decreasing, strongly nonlinear response
/// (contrast inversion with a soft threshold near mid intensity).
pub(crate) fn transfer(v: f64) -> f64 {
    let u = v.clamp(0.0, 1.0);
    0.05 + 0.45 * (1.0 - u) * (1.0 - u) + 0.45 * (1.0 - sigmoid((u - 0.5) / 0.04))
}

/// Deterministic smooth phantom in `[0, 1]`, plus the paired second
/// modality when requested.
pub fn make_phantom<T: Real>(spec: &PhantomSpec) -> (Image3D<T>, Option<Image3D<T>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, r) = layout(spec, &mut rng);
    let w = spec.edge_voxels.max(1e-3) * spec.spacing;
    let blobs: Vec<([f64; 3], f64)> = (0..8)
        .map(|_| {
            let dir = [0; 3].map(|_| rng.gen_range(-0.5..0.5));
            let p = [0, 1, 2].map(|a| c[a] + dir[a] * r);
            (p, r * rng.gen_range(0.08..0.18))
        })
        .collect();
    let phases: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let kind = spec.kind;
    let f = move |p: [f64; 3]| -> f64 {
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let rad = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let env = sigmoid((0.9 * r - rad) / w);
        let texture = blobs
            .iter()
            .map(|(q, s)| {
                let dd = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                (-dd / (2.0 * s * s)).exp()
            })
            .fold(0.0, f64::max);
        match kind {
            PhantomKind::SphereShells => {
                0.3 * env
                    + 0.3 * sigmoid((0.6 * r - rad) / w)
                    + 0.3 * sigmoid((0.3 * r - rad) / w)
                    + 0.08 * texture * env
            }
            PhantomKind::SinusoidTexture => {
                let k = |wl: f64| std::f64::consts::TAU / (wl * r);
                let s1 = (k(0.9) * d[0] + phases[0]).sin() * (k(0.8) * d[1] + phases[1]).sin();
                let s2 = (k(0.45) * (d[1] + d[2]) + phases[2]).sin() * (k(0.5) * d[0] + phases[3]).cos();
                let s3 = (k(0.23) * d[2] + phases[4]).sin() * (k(0.27) * (d[0] - d[1]) + phases[5]).sin();
                env * (0.45 + 0.2 * s1 + 0.12 * s2 + 0.06 * s3 + 0.15 * texture)
            }
            PhantomKind::CheckerSmooth => {
                let l = 0.5 * r;
                let pi = std::f64::consts::PI;
                let big = (pi * d[0] / l + phases[6]).sin() * (pi * d[1] / l + phases[7]).sin() * (pi * d[2] / l + phases[8]).sin();
                let small = (2.0 * pi * d[0] / l).sin() * (2.0 * pi * d[1] / l).sin() * (2.0 * pi * d[2] / l).sin();
                env * (0.5 + 0.25 * (3.0 * big).tanh() + 0.1 * (3.0 * small).tanh() + 0.1 * texture)
            }
        }
    };
    let g64: VoxelGrid<f64> = spec.grid();
    let first = Image3D::from_fn(g64, f);
    let second = spec.second_modality.then(|| first.map(transfer).cast());
    (first.cast(), second)
}
