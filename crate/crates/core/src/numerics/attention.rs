//! Kernelized attention with the positive feature map `phi(x) = elu(x) + 1`.
//!
//! [`linear_attention`] factors the weights so the cost is `O(N d^2)`;
//! [`reference_attention`] materializes the full `N x N` weight matrix and is
//! kept as an oracle for the fast path.

use crate::error::{invalid_shape, OetrError, Result};

use super::{Real, Tensor};

#[inline]
pub(crate) fn phi<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + T::one()
    } else {
        x.exp()
    }
}

#[inline]
pub(crate) fn phi_grad<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnDims {
    pub n_q: usize,
    pub n_k: usize,
    pub d: usize,
    pub d_v: usize,
}

pub(crate) fn attention_dims<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&[bool]>,
) -> Result<AttnDims> {
    let (n_q, d) = q.dims2()?;
    let (n_k, dk) = k.dims2()?;
    let (n_v, d_v) = v.dims2()?;
    if d == 0 || dk != d {
        return Err(invalid_shape(format!(
            "query dim {d} and key dim {dk} must match and be positive"
        )));
    }
    if n_v != n_k {
        return Err(invalid_shape(format!("{n_k} keys but {n_v} values")));
    }
    if let Some(m) = mask {
        if m.len() != n_k {
            return Err(invalid_shape(format!(
                "key mask has {} entries for {n_k} keys",
                m.len()
            )));
        }
    }
    Ok(AttnDims { n_q, n_k, d, d_v })
}

fn key_valid(mask: Option<&[bool]>, j: usize) -> bool {
    mask.is_none_or(|m| m[j])
}

/// Quantities retained from the forward pass for the backward pass.
pub(crate) struct LinearAttnCache<T> {
    pub phi_q: Vec<T>,
    pub phi_k: Vec<T>,
    pub kv: Vec<T>,
    pub k_sum: Vec<T>,
    pub denom: Vec<T>,
}

pub(crate) fn linear_attention_forward<T: Real>(
    dims: AttnDims,
    q: &[T],
    k: &[T],
    v: &[T],
    mask: Option<&[bool]>,
) -> Result<(Vec<T>, LinearAttnCache<T>)> {
    let AttnDims { n_q, n_k, d, d_v } = dims;
    let phi_q: Vec<T> = q.iter().map(|&x| phi(x)).collect();
    let mut phi_k: Vec<T> = k.iter().map(|&x| phi(x)).collect();
    for j in 0..n_k {
        if !key_valid(mask, j) {
            phi_k[j * d..(j + 1) * d].iter_mut().for_each(|x| *x = T::zero());
        }
    }
    // kv[a, b] = sum_j phi_k[j, a] v[j, b]
    let mut kv = vec![T::zero(); d * d_v];
    super::linalg::matmul_at_b_acc(&phi_k, v, &mut kv, n_k, d, d_v);
    let mut k_sum = vec![T::zero(); d];
    for j in 0..n_k {
        for (s, &x) in k_sum.iter_mut().zip(&phi_k[j * d..(j + 1) * d]) {
            *s += x;
        }
    }
    let mut out = vec![T::zero(); n_q * d_v];
    super::linalg::matmul_acc(&phi_q, &kv, &mut out, n_q, d, d_v);
    let mut denom = vec![T::zero(); n_q];
    for i in 0..n_q {
        let s: T = phi_q[i * d..(i + 1) * d]
            .iter()
            .zip(&k_sum)
            .map(|(&a, &b)| a * b)
            .sum();
        if !s.is_finite() || s <= T::zero() {
            return Err(OetrError::NumericalDegeneracy(format!(
                "attention normalizer {s} for query {i}"
            )));
        }
        denom[i] = s;
        out[i * d_v..(i + 1) * d_v].iter_mut().for_each(|o| *o /= s);
    }
    Ok((
        out,
        LinearAttnCache {
            phi_q,
            phi_k,
            kv,
            k_sum,
            denom,
        },
    ))
}

/// Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_attention_backward<T: Real>(
    dims: AttnDims,
    q: &[T],
    k: &[T],
    v: &[T],
    out: &[T],
    cache: &LinearAttnCache<T>,
    dout: &[T],
    mask: Option<&[bool]>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let AttnDims { n_q, n_k, d, d_v } = dims;
    // out_i = n_i / s_i with n_i = kv^T phi_q_i and s_i = phi_q_i . k_sum
    let mut dn = vec![T::zero(); n_q * d_v];
    let mut ds = vec![T::zero(); n_q];
    for (i, (&s, dsi)) in cache.denom.iter().zip(ds.iter_mut()).enumerate() {
        let row = i * d_v..(i + 1) * d_v;
        let dot: T = dout[row.clone()]
            .iter()
            .zip(&out[row.clone()])
            .map(|(&a, &b)| a * b)
            .sum();
        *dsi = -dot / s;
        for (t, &g) in dn[row.clone()].iter_mut().zip(&dout[row]) {
            *t = g / s;
        }
    }
    // d phi_q = dn kv^T + ds k_sum^T
    let mut dphi_q = vec![T::zero(); n_q * d];
    super::linalg::matmul_a_bt_acc(&dn, &cache.kv, &mut dphi_q, n_q, d_v, d);
    for i in 0..n_q {
        for (t, &ks) in dphi_q[i * d..(i + 1) * d].iter_mut().zip(&cache.k_sum) {
            *t += ds[i] * ks;
        }
    }
    // d kv = phi_q^T dn ; d k_sum = phi_q^T ds
    let mut dkv = vec![T::zero(); d * d_v];
    super::linalg::matmul_at_b_acc(&cache.phi_q, &dn, &mut dkv, n_q, d, d_v);
    let mut dk_sum = vec![T::zero(); d];
    super::linalg::matmul_at_b_acc(&cache.phi_q, &ds, &mut dk_sum, n_q, d, 1);

    // d phi_k_j = dkv v_j + dk_sum ; dv_j = dkv^T phi_k_j
    let mut dphi_k = vec![T::zero(); n_k * d];
    super::linalg::matmul_a_bt_acc(v, &dkv, &mut dphi_k, n_k, d_v, d);
    let mut dv = vec![T::zero(); n_k * d_v];
    super::linalg::matmul_acc(&cache.phi_k, &dkv, &mut dv, n_k, d, d_v);

    let dq: Vec<T> = dphi_q
        .iter()
        .zip(q)
        .map(|(&g, &x)| g * phi_grad(x))
        .collect();
    let mut dk = vec![T::zero(); n_k * d];
    for j in 0..n_k {
        if !key_valid(mask, j) {
            continue;
        }
        for (a, &ks) in dk_sum.iter().enumerate() {
            let idx = j * d + a;
            dk[idx] = (dphi_k[idx] + ks) * phi_grad(k[idx]);
        }
    }
    (dq, dk, dv)
}

/// Linear attention `out_i = phi(q_i)^T (sum_j phi(k_j) v_j^T) / phi(q_i)^T sum_j phi(k_j)`.
///
/// `q` is `[N_q, d]`, `k` is `[N_k, d]`, `v` is `[N_k, d_v]`. Keys whose mask
/// entry is `false` are excluded from both sums.
pub fn linear_attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&[bool]>,
) -> Result<Tensor<T>> {
    let dims = attention_dims(q, k, v, mask)?;
    let (out, _) = linear_attention_forward(dims, q.data(), k.data(), v.data(), mask)?;
    Tensor::new([dims.n_q, dims.d_v], out)
}

/// The same kernelized attention computed through the explicit `N_q x N_k`
/// weight matrix.
pub fn reference_attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&[bool]>,
) -> Result<Tensor<T>> {
    let AttnDims { n_q, n_k, d, d_v } = attention_dims(q, k, v, mask)?;
    let mut out = vec![T::zero(); n_q * d_v];
    let mut weights = vec![T::zero(); n_k];
    for i in 0..n_q {
        let qi = &q.data()[i * d..(i + 1) * d];
        let mut total = T::zero();
        for (j, w) in weights.iter_mut().enumerate() {
            *w = if key_valid(mask, j) {
                let kj = &k.data()[j * d..(j + 1) * d];
                qi.iter().zip(kj).map(|(&a, &b)| phi(a) * phi(b)).sum()
            } else {
                T::zero()
            };
            total += *w;
        }
        if !total.is_finite() || total <= T::zero() {
            return Err(OetrError::NumericalDegeneracy(format!(
                "attention normalizer {total} for query {i}"
            )));
        }
        let row = &mut out[i * d_v..(i + 1) * d_v];
        for (j, &w) in weights.iter().enumerate() {
            let vj = &v.data()[j * d_v..(j + 1) * d_v];
            for (o, &x) in row.iter_mut().zip(vj) {
                *o += (w / total) * x;
            }
        }
    }
    Tensor::new([n_q, d_v], out)
}
