use crate::error::{OetrError, Result};

use super::{Real, Tensor};

/// Base of the geometric frequency progression.
pub const POSITIONAL_BASE: f64 = 10000.0;

/// 2-D sinusoidal encoding of a `height x width` grid, one row per cell in
/// row-major order.
///
/// For `k in 0..d/4` with `f_k = 10000^(-4k/d)` the row of cell `(x, y)` holds
/// `[sin(x f_k), cos(x f_k), sin(y f_k), cos(y f_k)]` at columns `4k..4k+4`.
pub fn positional_encoding<T: Real>(height: usize, width: usize, d: usize) -> Result<Tensor<T>> {
    if d == 0 || !d.is_multiple_of(4) {
        return Err(OetrError::InvalidConfig(format!(
            "positional encoding dimension {d} must be a positive multiple of 4"
        )));
    }
    let quarter = d / 4;
    let freqs: Vec<f64> = (0..quarter)
        .map(|k| POSITIONAL_BASE.powf(-(4.0 * k as f64) / d as f64))
        .collect();
    let mut data = Vec::with_capacity(height * width * d);
    for y in 0..height {
        for x in 0..width {
            for &f in &freqs {
                let (ax, ay) = (x as f64 * f, y as f64 * f);
                data.extend_from_slice(&[
                    T::lit(ax.sin()),
                    T::lit(ax.cos()),
                    T::lit(ay.sin()),
                    T::lit(ay.cos()),
                ]);
            }
        }
    }
    Tensor::new([height * width, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_bounded_and_origin_row() {
        let pe = positional_encoding::<f64>(5, 7, 16).unwrap();
        assert_eq!(pe.shape(), &[35, 16]);
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        let origin = &pe.data()[..16];
        for (c, &v) in origin.iter().enumerate() {
            let expected = if c % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(v, expected, "column {c}");
        }
    }

    #[test]
    fn rows_pairwise_distinct_on_small_grids() {
        for &(h, w, d) in &[(16, 16, 8), (16, 16, 32), (3, 16, 4), (16, 1, 12)] {
            let pe = positional_encoding::<f64>(h, w, d).unwrap();
            let n = h * w;
            for a in 0..n {
                for b in (a + 1)..n {
                    let ra = &pe.data()[a * d..(a + 1) * d];
                    let rb = &pe.data()[b * d..(b + 1) * d];
                    let dist: f64 = ra.iter().zip(rb).map(|(x, y)| (x - y).abs()).sum();
                    assert!(dist > 1e-6, "rows {a} and {b} collide for {h}x{w}x{d}");
                }
            }
        }
    }

    #[test]
    fn rejects_dimension_not_divisible_by_four() {
        assert!(matches!(
            positional_encoding::<f32>(2, 2, 6),
            Err(OetrError::InvalidConfig(_))
        ));
    }
}
