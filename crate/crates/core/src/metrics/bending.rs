use crate::field::SplineVelocity;
use crate::geometry::VoxelGrid;
use crate::scalar::Real;

/// Second-derivative multi-indices and their weights (mixed terms doubled).
pub(crate) const TERMS: [([usize; 3], f64); 6] = [
    ([2, 0, 0], 1.0),
    ([0, 2, 0], 1.0),
    ([0, 0, 2], 1.0),
    ([1, 1, 0], 2.0),
    ([1, 0, 1], 2.0),
    ([0, 1, 1], 2.0),
];

#[derive(Debug, Clone)]
struct ComponentGram<T> {
    counts: [usize; 3],
    offset: usize,
    /// `gram[axis][deriv]`, dense `counts[axis]^2`, row major.
    gram: [[Vec<T>; 3]; 3],
}

/// Bending energy as a fixed quadratic form.
///
/// On a tensor lattice of quadrature points every term factors into a
/// Kronecker product of per-axis Gram matrices
/// `G[i][j] = sum_q B_i^(d)(x_q) B_j^(d)(x_q)`, so value and gradient cost a
/// few small dense passes over the coefficients.
#[derive(Debug, Clone)]
pub struct BendingOperator<T> {
    comps: Vec<ComponentGram<T>>,
    params: usize,
    /// Total number of quadrature points (the mean's denominator).
    points: T,
}

impl<T: Real> BendingOperator<T> {
    /// Quadrature at the points of `quad`; points outside the control grid
    /// domain contribute zero.
    pub fn new<F: SplineVelocity<T>>(template: &F, quad: &VoxelGrid<T>) -> Self {
        let axes = template.grid().axes;
        let comps = template
            .components()
            .iter()
            .enumerate()
            .map(|(c, comp)| {
                let counts = comp.counts();
                let orders = comp.orders();
                let gram = [0, 1, 2].map(|a| {
                    [0, 1, 2].map(|d| {
                        let n = counts[a];
                        let mut g = vec![T::zero(); n * n];
                        for q in 0..quad.dims[a] {
                            let x = quad.origin[a] + T::from_usize_lossy(q) * quad.spacing[a];
                            if !axes[a].contains(x) {
                                continue;
                            }
                            let b = axes[a].local_basis(orders[a], d, x);
                            let valid: Vec<(usize, T)> = b.iter_valid(n).collect();
                            for &(i, wi) in &valid {
                                for &(j, wj) in &valid {
                                    g[i * n + j] += wi * wj;
                                }
                            }
                        }
                        g
                    })
                });
                ComponentGram {
                    counts,
                    offset: template.component_offset(c),
                    gram,
                }
            })
            .collect();
        BendingOperator {
            comps,
            params: template.param_count(),
            points: T::from_usize_lossy(quad.len()),
        }
    }

    /// Mean energy and gradient at `theta`.
    pub fn value_grad(&self, theta: &[T]) -> (T, Vec<T>) {
        assert_eq!(theta.len(), self.params, "coefficient vector length");
        let mut grad = vec![T::zero(); self.params];
        let mut energy = T::zero();
        for comp in &self.comps {
            let n = comp.counts[0] * comp.counts[1] * comp.counts[2];
            let x = &theta[comp.offset..comp.offset + n];
            for (d, w) in TERMS {
                let y = kron_apply(comp, d, x);
                let w = T::lit(w) / self.points;
                energy += w * x.iter().zip(&y).map(|(&a, &b)| a * b).sum::<T>();
                let g = &mut grad[comp.offset..comp.offset + n];
                g.iter_mut().zip(&y).for_each(|(gi, &yi)| *gi += T::lit(2.0) * w * yi);
            }
        }
        (energy, grad)
    }
}

/// `(G_z ⊗ G_y ⊗ G_x) x` for x-fastest storage.
fn kron_apply<T: Real>(comp: &ComponentGram<T>, d: [usize; 3], x: &[T]) -> Vec<T> {
    let [nx, ny, nz] = comp.counts;
    let mut cur = x.to_vec();
    let mut next = vec![T::zero(); cur.len()];
    for a in 0..3 {
        let g = &comp.gram[a][d[a]];
        let n = comp.counts[a];
        let stride = [1, nx, nx * ny][a];
        let lines = cur.len() / n;
        next.iter_mut().for_each(|v| *v = T::zero());
        for line in 0..lines {
            // base index of the line: all coordinates but axis `a`
            let base = match a {
                0 => line * nx,
                1 => (line % nx) + (line / nx) * nx * ny,
                _ => line,
            };
            for i in 0..n {
                let mut acc = T::zero();
                let row = &g[i * n..(i + 1) * n];
                for (j, &gij) in row.iter().enumerate() {
                    if gij != T::zero() {
                        acc += gij * cur[base + j * stride];
                    }
                }
                next[base + i * stride] = acc;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let _ = nz;
    cur
}

/// Mean over the points of `quad` of the squared second derivatives of all
/// three components, and its gradient.
pub fn bending_energy_value_grad<T: Real, F: SplineVelocity<T>>(svf: &F, quad: &VoxelGrid<T>) -> (T, Vec<T>) {
    BendingOperator::new(svf, quad).value_grad(&svf.coefficient_vector())
}

/// Bending energy on two samples per knot cell and axis.
pub fn bending_energy<T: Real, F: SplineVelocity<T>>(svf: &F) -> (T, Vec<T>) {
    bending_energy_value_grad(svf, &svf.grid().sample_lattice(2))
}
