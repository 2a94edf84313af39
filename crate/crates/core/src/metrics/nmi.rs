use serde::{Deserialize, Serialize};

use crate::bspline1d::{eval_centered, eval_centered_derivative, SplineOrder};
use crate::error::{Error, Result};
use crate::io_image::Image3D;
use crate::scalar::Real;

/// Parzen window of the joint histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ParzenWindow {
    /// Cubic B-spline kernel; differentiable.
    #[default]
    Cubic,
    /// Nearest-bin counting; value only.
    Hard,
}

/// Kernel half-width padding kept free at each end of the bin range.
const PAD: usize = 2;
const ENTROPY_FLOOR: f64 = 1e-12;

/// Intensity interval mapped onto the bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityRange {
    pub lo: f64,
    pub hi: f64,
}

impl IntensityRange {
    /// Image min/max widened by `margin` of the range on both sides.
    pub fn of<T: Real>(img: &Image3D<T>, margin: f64) -> Self {
        let (lo, hi) = (img.min().as_f64(), img.max().as_f64());
        let span = (hi - lo).max(1e-12);
        IntensityRange {
            lo: lo - margin * span,
            hi: hi + margin * span,
        }
    }
}

/// Binning: intensities to continuous bin coordinates.
#[derive(Debug, Clone, Copy)]
struct Binning {
    range: IntensityRange,
    bins: usize,
    window: ParzenWindow,
}

impl Binning {
    fn usable(&self) -> f64 {
        match self.window {
            ParzenWindow::Cubic => (self.bins - 1 - 2 * PAD) as f64,
            ParzenWindow::Hard => (self.bins - 1) as f64,
        }
    }

    fn offset(&self) -> f64 {
        match self.window {
            ParzenWindow::Cubic => PAD as f64,
            ParzenWindow::Hard => 0.0,
        }
    }

    /// Bin coordinate and `d coordinate / d intensity` (0 when clamped).
    fn coord(&self, v: f64) -> (f64, f64) {
        let span = self.range.hi - self.range.lo;
        let s = self.usable() / span;
        let t = (v - self.range.lo) / span;
        if t < 0.0 {
            (self.offset(), 0.0)
        } else if t > 1.0 {
            (self.offset() + self.usable(), 0.0)
        } else {
            (self.offset() + t * self.usable(), s)
        }
    }
}

/// Entries of one sample: first bin and up to four kernel weights.
fn weights(window: ParzenWindow, t: f64, with_deriv: bool) -> (usize, [f64; 4], [f64; 4]) {
    match window {
        ParzenWindow::Hard => {
            let mut w = [0.0; 4];
            w[0] = 1.0;
            (t.round() as usize, w, [0.0; 4])
        }
        ParzenWindow::Cubic => {
            let first = t.floor() as isize - 1;
            let mut w = [0.0; 4];
            let mut d = [0.0; 4];
            for j in 0..4 {
                let u = t - (first + j as isize) as f64;
                w[j] = eval_centered(SplineOrder::CUBIC, u);
                if with_deriv {
                    d[j] = eval_centered_derivative(SplineOrder::CUBIC, u).expect("cubic");
                }
            }
            (first.max(0) as usize, w, d)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NmiSettings {
    pub bins: usize,
    pub window: ParzenWindow,
    pub reference_range: IntensityRange,
    pub warped_range: IntensityRange,
}

/// `(H_ref + H_warped) / H_joint`, returned as the dissimilarity `-NMI`
/// with its gradient with respect to `warped` (zero for hard binning).
pub fn nmi_value_grad_with<T: Real>(reference: &Image3D<T>, warped: &Image3D<T>, s: &NmiSettings) -> Result<(T, Vec<T>)> {
    reference.grid.check_same_frame(&warped.grid, "nmi")?;
    if s.bins < 8 {
        return Err(Error::Config(format!("NMI needs at least 8 bins, got {}", s.bins)));
    }
    let nb = s.bins;
    let br = Binning { range: s.reference_range, bins: nb, window: s.window };
    let bw = Binning { range: s.warped_range, bins: nb, window: s.window };
    let n = reference.len();
    let inv_n = 1.0 / n as f64;
    let mut joint = vec![0.0f64; nb * nb];
    let r = reference.data();
    let w = warped.data();
    for x in 0..n {
        let (tr, _) = br.coord(r[x].as_f64());
        let (tw, _) = bw.coord(w[x].as_f64());
        let (i0, wi, _) = weights(s.window, tr, false);
        let (j0, wj, _) = weights(s.window, tw, false);
        for (a, &va) in wi.iter().enumerate() {
            if va == 0.0 {
                continue;
            }
            for (b, &vb) in wj.iter().enumerate() {
                if vb != 0.0 {
                    joint[(i0 + a) * nb + j0 + b] += va * vb * inv_n;
                }
            }
        }
    }
    let mut pr = vec![0.0; nb];
    let mut pw = vec![0.0; nb];
    for i in 0..nb {
        for j in 0..nb {
            pr[i] += joint[i * nb + j];
            pw[j] += joint[i * nb + j];
        }
    }
    let ent = |p: &[f64]| -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
    let (hr, hw) = (ent(&pr), ent(&pw));
    let mut hj = ent(&joint);
    if hj < ENTROPY_FLOOR {
        log::warn!("nmi: degenerate joint histogram (constant image); entropy floor applied");
        hj = ENTROPY_FLOOR;
    }
    let nmi = (hr + hw) / hj;
    let mut grad = vec![T::zero(); n];
    if s.window == ParzenWindow::Cubic {
        // dNMI/dp(i,j) with the constant terms dropped (total mass is fixed)
        let lg = |v: f64| if v > 0.0 { v.ln() } else { 0.0 };
        let g: Vec<f64> = (0..nb * nb)
            .map(|k| (-lg(pw[k % nb]) + nmi * lg(joint[k])) / hj)
            .collect();
        for x in 0..n {
            let (tw, dt) = bw.coord(w[x].as_f64());
            if dt == 0.0 {
                continue;
            }
            let (tr, _) = br.coord(r[x].as_f64());
            let (i0, wi, _) = weights(s.window, tr, false);
            let (j0, _, dj) = weights(s.window, tw, true);
            let mut acc = 0.0;
            for (a, &va) in wi.iter().enumerate() {
                if va == 0.0 {
                    continue;
                }
                for (b, &db) in dj.iter().enumerate() {
                    // d beta(j - t) / dt = -beta'(j - t); kernel arguments are t - j here
                    acc += g[(i0 + a) * nb + j0 + b] * va * db;
                }
            }
            // dNMI/dw = acc * dt / N; dissimilarity is -NMI
            grad[x] = T::lit(-acc * dt * inv_n);
        }
    }
    Ok((T::lit(-nmi), grad))
}

/// NMI dissimilarity with ranges taken from each image (5% margin).
pub fn nmi_value_grad<T: Real>(reference: &Image3D<T>, warped: &Image3D<T>, bins: usize) -> Result<(T, Vec<T>)> {
    nmi_value_grad_with(
        reference,
        warped,
        &NmiSettings {
            bins,
            window: ParzenWindow::Cubic,
            reference_range: IntensityRange::of(reference, 0.05),
            warped_range: IntensityRange::of(warped, 0.05),
        },
    )
}

/// Hard-binned NMI value (no margin), for invariance checks.
pub fn nmi_hard<T: Real>(reference: &Image3D<T>, warped: &Image3D<T>, bins: usize) -> Result<T> {
    let (v, _) = nmi_value_grad_with(
        reference,
        warped,
        &NmiSettings {
            bins,
            window: ParzenWindow::Hard,
            reference_range: IntensityRange::of(reference, 0.0),
            warped_range: IntensityRange::of(warped, 0.0),
        },
    )?;
    Ok(-v)
}
