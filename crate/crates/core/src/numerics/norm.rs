//! Layer normalization and the masked spatial softmax.

use crate::error::{invalid_input, invalid_shape, Result};

use super::{Real, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub(crate) struct LayerNormCache<T> {
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>,
}

fn last_dim<T: Real>(x: &Tensor<T>) -> Result<(usize, usize)> {
    let d = *x
        .shape()
        .last()
        .ok_or_else(|| invalid_shape("layer_norm on a rank-0 tensor"))?;
    if d < 2 {
        return Err(invalid_shape(format!("layer_norm needs d >= 2, got {d}")));
    }
    Ok((x.numel() / d, d))
}

pub(crate) fn layer_norm_forward<T: Real>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    rows: usize,
    d: usize,
) -> (Vec<T>, LayerNormCache<T>) {
    let eps = T::lit(LAYER_NORM_EPS);
    let dt = T::lit(d as f64);
    let mut out = vec![T::zero(); rows * d];
    let mut x_hat = vec![T::zero(); rows * d];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dt;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let h = (row[c] - mean) * is;
            x_hat[r * d + c] = h;
            out[r * d + c] = h * gain[c] + bias[c];
        }
    }
    (out, LayerNormCache { x_hat, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
pub(crate) fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    gain: &[T],
    dy: &[T],
    rows: usize,
    d: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dt = T::lit(d as f64);
    let mut dx = vec![T::zero(); rows * d];
    let mut dgain = vec![T::zero(); d];
    let mut dbias = vec![T::zero(); d];
    let mut dxh = vec![T::zero(); d];
    for r in 0..rows {
        let xh = &cache.x_hat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for c in 0..d {
            dgain[c] += g[c] * xh[c];
            dbias[c] += g[c];
            dxh[c] = g[c] * gain[c];
            mean_dxh += dxh[c];
            mean_dxh_xh += dxh[c] * xh[c];
        }
        mean_dxh /= dt;
        mean_dxh_xh /= dt;
        let is = cache.inv_std[r];
        for c in 0..d {
            dx[r * d + c] = is * (dxh[c] - mean_dxh - xh[c] * mean_dxh_xh);
        }
    }
    (dx, dgain, dbias)
}

/// Normalizes each row over the last axis to zero mean and unit variance
/// (epsilon `1e-5`), then applies `gain * x + bias`.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, d) = last_dim(x)?;
    if gain.numel() != d || bias.numel() != d {
        return Err(invalid_shape(format!(
            "layer_norm affine params must have {d} entries"
        )));
    }
    let (out, _) = layer_norm_forward(x.data(), gain.data(), bias.data(), rows, d);
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn check_layer_norm<T: Real>(x: &Tensor<T>) -> Result<(usize, usize)> {
    last_dim(x)
}

pub(crate) fn softmax_forward<T: Real>(x: &[T], mask: Option<&[bool]>) -> Result<Vec<T>> {
    let valid = |i: usize| mask.is_none_or(|m| m[i]);
    let max = x
        .iter()
        .enumerate()
        .filter(|&(i, _)| valid(i))
        .map(|(_, &v)| v)
        .fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return Err(invalid_input("spatial softmax needs at least one finite, unmasked logit"));
    }
    let mut out: Vec<T> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| if valid(i) { (v - max).exp() } else { T::zero() })
        .collect();
    let total: T = out.iter().copied().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

pub(crate) fn softmax_backward<T: Real>(p: &[T], dy: &[T]) -> Vec<T> {
    let dot: T = p.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    p.iter().zip(dy).map(|(&pi, &gi)| pi * (gi - dot)).collect()
}

/// Softmax over every cell of `logits`. Cells whose mask entry is `false`
/// receive probability zero and take no part in the normalization.
pub fn spatial_softmax<T: Real>(logits: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
    if let Some(m) = mask {
        if m.len() != logits.numel() {
            return Err(invalid_shape(format!(
                "mask of {} entries for {} logits",
                m.len(),
                logits.numel()
            )));
        }
    }
    Tensor::new(logits.shape().to_vec(), softmax_forward(logits.data(), mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(x: &Tensor<f64>) -> Tensor<f64> {
        let d = *x.shape().last().unwrap();
        layer_norm(x, &Tensor::full([d], 1.0), &Tensor::zeros([d])).unwrap()
    }

    #[test]
    fn rows_are_standardized() {
        let x = Tensor::<f64>::from_fn([3, 6], |i| ((i * 37) % 11) as f64 - 3.0);
        let y = plain(&x);
        for r in 0..3 {
            let row = &y.data()[r * 6..(r + 1) * 6];
            let mean = row.iter().sum::<f64>() / 6.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_row_maps_to_zero() {
        let y = plain(&Tensor::full([1, 4], 3.25));
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn row_scaling_is_invisible() {
        let x = Tensor::<f64>::from_fn([2, 5], |i| (i as f64).sin());
        let y = plain(&x);
        let y10 = plain(&x.map(|v| v * 10.0));
        assert!(y.max_abs_diff(&y10) < 1e-4);
    }

    #[test]
    fn layer_norm_rejects_tiny_rows() {
        let x = Tensor::<f64>::zeros([3, 1]);
        assert!(layer_norm(&x, &Tensor::zeros([1]), &Tensor::zeros([1])).is_err());
    }

    #[test]
    fn softmax_constant_is_uniform() {
        let p = spatial_softmax(&Tensor::<f64>::full([3, 4], -2.0), None).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn softmax_peak_dominates() {
        let mut x = Tensor::<f64>::zeros([4, 4]);
        x.data_mut()[5] = 50.0;
        let p = spatial_softmax(&x, None).unwrap();
        assert!(p.data()[5] > 0.999);
    }

    #[test]
    fn softmax_shift_invariance_and_masking() {
        let x = Tensor::<f32>::from_fn([2, 3], |i| i as f32 * 0.7 - 1.0);
        let p = spatial_softmax(&x, None).unwrap();
        let q = spatial_softmax(&x.map(|v| v + 13.0), None).unwrap();
        assert!(p.max_abs_diff(&q) < 1e-7);

        let mask = [true, true, false, true, false, true];
        let m = spatial_softmax(&x, Some(&mask)).unwrap();
        assert_eq!(m.data()[2], 0.0);
        assert_eq!(m.data()[4], 0.0);
        assert!((m.sum() - 1.0).abs() < 1e-6);
        assert!(spatial_softmax(&x, Some(&[false; 6])).is_err());
    }
}
