use crate::error::Result;
use crate::io_image::Image3D;
use crate::scalar::Real;

/// Mean squared difference and its gradient with respect to `warped`.
pub fn ssd_value_grad<T: Real>(reference: &Image3D<T>, warped: &Image3D<T>) -> Result<(T, Vec<T>)> {
    reference.grid.check_same_frame(&warped.grid, "ssd")?;
    let n = T::from_usize_lossy(reference.len());
    let mut value = T::zero();
    let grad = reference
        .data()
        .iter()
        .zip(warped.data())
        .map(|(&r, &w)| {
            let d = w - r;
            value += d * d;
            T::lit(2.0) * d / n
        })
        .collect();
    Ok((value / n, grad))
}
