use super::KernelError;

pub const DEFAULT_ROTARY_BASE: f64 = 10_000.0;

/// Rotates each pair `(x[2i], x[2i+1])` by `position * base^(-2i/d)`.
pub fn rotary_apply(x: &[f64], position: u64, base: f64) -> Result<Vec<f64>, KernelError> {
    let d = x.len();
    if d % 2 != 0 {
        return Err(KernelError::OddDimension(d));
    }
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let theta = base.powf(-2.0 * i as f64 / d as f64);
        let (sin, cos) = (position as f64 * theta).sin_cos();
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        out[2 * i] = a * cos - b * sin;
        out[2 * i + 1] = a * sin + b * cos;
    }
    Ok(out)
}
