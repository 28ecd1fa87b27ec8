use crate::error::{Error, Result};

/// Rotates consecutive pairs `(v[2i], v[2i+1])` by `position · theta^(-2i/d)`.
pub fn apply_rope(vec: &[f32], position: usize, theta: f64) -> Result<Vec<f32>> {
    if !vec.len().is_multiple_of(2) {
        return Err(Error::Shape(format!("rotary embedding needs an even length, got {}", vec.len())));
    }
    let d = vec.len() as f64;
    let inv_freq: Vec<f64> = (0..vec.len() / 2).map(|i| theta.powf(-2.0 * i as f64 / d)).collect();
    let mut out = vec.to_vec();
    rotate_in_place(&mut out, position, &inv_freq);
    Ok(out)
}

pub(crate) fn rotate_in_place(v: &mut [f32], position: usize, inv_freq: &[f64]) {
    for (i, &f) in inv_freq.iter().enumerate() {
        let angle = position as f64 * f;
        let (s, c) = angle.sin_cos();
        let (x0, x1) = (v[2 * i] as f64, v[2 * i + 1] as f64);
        v[2 * i] = (x0 * c - x1 * s) as f32;
        v[2 * i + 1] = (x0 * s + x1 * c) as f32;
    }
}
