//! Differentiable operations recorded on a [`Tape`].

use std::sync::Arc;

use crate::error::{invalid_shape, Result};

use super::attention::{attention_dims, linear_attention_backward, linear_attention_forward, phi, phi_grad};
use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use super::linalg::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, transpose};
use super::norm::{check_layer_norm, layer_norm_backward, layer_norm_forward, softmax_backward, softmax_forward};
use super::{Real, Tape, Tensor, Var};

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(invalid_shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn with_shape<T: Real>(like: &Tensor<T>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(like.shape().to_vec(), data).expect("shape preserved")
}

impl<T: Real> Tape<T> {
    fn unary(
        &self,
        a: Var,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var {
        let av = self.value(a);
        let out = av.map(f);
        let out_arc = Arc::new(out.clone());
        self.push(out, &[a], move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(av.data())
                .zip(out_arc.data())
                .map(|((&gi, &x), &y)| gi * df(x, y))
                .collect();
            vec![Some(with_shape(g, data))]
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(&av, &bv, "add")?;
        let out = av.zip_map(&bv, |x, y| x + y)?;
        Ok(self.push(out, &[a, b], |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(&av, &bv, "sub")?;
        let out = av.zip_map(&bv, |x, y| x - y)?;
        Ok(self.push(out, &[a, b], |g, _| {
            vec![Some(g.clone()), Some(g.map(|x| -x))]
        }))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(&av, &bv, "mul")?;
        let out = av.zip_map(&bv, |x, y| x * y)?;
        Ok(self.push(out, &[a, b], move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&bv, |gi, y| gi * y).expect("shape")),
                need[1].then(|| g.zip_map(&av, |gi, x| gi * x).expect("shape")),
            ]
        }))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(&av, &bv, "div")?;
        let out = av.zip_map(&bv, |x, y| x / y)?;
        let out_arc = Arc::new(out.clone());
        Ok(self.push(out, &[a, b], move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&bv, |gi, y| gi / y).expect("shape")),
                need[1].then(|| {
                    let data = g
                        .data()
                        .iter()
                        .zip(out_arc.data())
                        .zip(bv.data())
                        .map(|((&gi, &q), &y)| -gi * q / y)
                        .collect();
                    with_shape(g, data)
                }),
            ]
        }))
    }

    /// Elementwise minimum. Ties send the gradient to `a`.
    pub fn minimum(&self, a: Var, b: Var) -> Result<Var> {
        self.select(a, b, |x, y| x <= y, "minimum")
    }

    /// Elementwise maximum. Ties send the gradient to `a`.
    pub fn maximum(&self, a: Var, b: Var) -> Result<Var> {
        self.select(a, b, |x, y| x >= y, "maximum")
    }

    fn select(&self, a: Var, b: Var, pick_a: fn(T, T) -> bool, op: &str) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(&av, &bv, op)?;
        let choose: Vec<bool> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| pick_a(x, y))
            .collect();
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .zip(&choose)
            .map(|((&x, &y), &c)| if c { x } else { y })
            .collect();
        let out = with_shape(&av, data);
        Ok(self.push(out, &[a, b], move |g, _| {
            let ga = g
                .data()
                .iter()
                .zip(&choose)
                .map(|(&gi, &c)| if c { gi } else { T::zero() })
                .collect();
            let gb = g
                .data()
                .iter()
                .zip(&choose)
                .map(|(&gi, &c)| if c { T::zero() } else { gi })
                .collect();
            vec![Some(with_shape(g, ga)), Some(with_shape(g, gb))]
        }))
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x + c, |_, _| T::one())
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    /// `|x|`, with zero gradient at zero.
    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    /// The attention feature map `elu(x) + 1`.
    pub fn elu1(&self, a: Var) -> Var {
        self.unary(a, phi, |x, _| phi_grad(x))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self, a: Var) -> Var {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let out = Tensor::scalar(av.sum());
        self.push(out, &[a], move |g, _| {
            vec![Some(Tensor::full(shape.clone(), g.data()[0]))]
        })
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Matrix product `[n,k] x [k,m]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = av.dims2()?;
        let (k2, m) = bv.dims2()?;
        if k != k2 {
            return Err(invalid_shape(format!(
                "matmul inner dimensions {k} and {k2} differ"
            )));
        }
        let mut out = vec![T::zero(); n * m];
        matmul_acc(av.data(), bv.data(), &mut out, n, k, m);
        let out = Tensor::new([n, m], out)?;
        Ok(self.push(out, &[a, b], move |g, need| {
            let ga = need[0].then(|| {
                let mut d = vec![T::zero(); n * k];
                matmul_a_bt_acc(g.data(), bv.data(), &mut d, n, m, k);
                Tensor::new([n, k], d).expect("shape")
            });
            let gb = need[1].then(|| {
                let mut d = vec![T::zero(); k * m];
                matmul_at_b_acc(av.data(), g.data(), &mut d, n, k, m);
                Tensor::new([k, m], d).expect("shape")
            });
            vec![ga, gb]
        }))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.dims2()?;
        let out = Tensor::new([c, r], transpose(av.data(), r, c))?;
        Ok(self.push(out, &[a], move |g, _| {
            vec![Some(Tensor::new([r, c], transpose(g.data(), c, r)).expect("shape"))]
        }))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let orig = av.shape().to_vec();
        let out = (*av).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, &[a], move |g, _| {
            vec![Some(g.clone().reshape(orig.clone()).expect("shape"))]
        }))
    }

    /// Adds `bias [d]` to every row of `x [.., d]`.
    pub fn add_row_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = bv.numel();
        if xv.shape().last() != Some(&d) {
            return Err(invalid_shape(format!(
                "row bias of {d} entries for tensor {:?}",
                xv.shape()
            )));
        }
        let mut out = (*xv).clone();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, &[x, bias], move |g, need| {
            let gb = need[1].then(|| {
                let mut acc = vec![T::zero(); d];
                for row in g.data().chunks(d) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                Tensor::new([d], acc).expect("shape")
            });
            vec![Some(g.clone()), gb]
        }))
    }

    /// Adds `bias [C]` to every plane of `x [C, H, W]`.
    pub fn add_channel_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = bv.numel();
        if xv.shape().first() != Some(&c) {
            return Err(invalid_shape(format!(
                "channel bias of {c} entries for tensor {:?}",
                xv.shape()
            )));
        }
        let plane = xv.numel() / c.max(1);
        let mut out = (*xv).clone();
        for (ch, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let b = bv.data()[ch];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        Ok(self.push(out, &[x, bias], move |g, need| {
            let gb = need[1].then(|| {
                let sums = g.data().chunks(plane).map(|p| p.iter().copied().sum()).collect();
                Tensor::new([c], sums).expect("shape")
            });
            vec![Some(g.clone()), gb]
        }))
    }

    /// Multiplies row `i` of `x [n, d]` by `s[i]` where `s` holds `n` values.
    pub fn scale_rows(&self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let (n, d) = xv.dims2()?;
        if sv.numel() != n {
            return Err(invalid_shape(format!(
                "row scales of {} entries for {n} rows",
                sv.numel()
            )));
        }
        let mut out = (*xv).clone();
        for (row, &f) in out.data_mut().chunks_mut(d).zip(sv.data()) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        let s_shape = sv.shape().to_vec();
        Ok(self.push(out, &[x, s], move |g, need| {
            let gx = need[0].then(|| {
                let mut gx = g.clone();
                for (row, &f) in gx.data_mut().chunks_mut(d).zip(sv.data()) {
                    row.iter_mut().for_each(|v| *v *= f);
                }
                gx
            });
            let gs = need[1].then(|| {
                let data = g
                    .data()
                    .chunks(d)
                    .zip(xv.data().chunks(d))
                    .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                    .collect();
                Tensor::new(s_shape.clone(), data).expect("shape")
            });
            vec![gx, gs]
        }))
    }

    /// Row sums of `x [n, d]`, shape `[n, 1]`.
    pub fn row_sum(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = xv.dims2()?;
        let out = Tensor::new([n, 1], xv.data().chunks(d).map(|r| r.iter().copied().sum()).collect())?;
        Ok(self.push(out, &[x], move |g, _| {
            vec![Some(Tensor::from_fn([n, d], |i| g.data()[i / d]))]
        }))
    }

    /// Concatenates along the leading axis; trailing extents must agree.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let first = values
            .first()
            .ok_or_else(|| invalid_shape("concat of zero tensors"))?;
        let tail = first.shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for v in &values {
            if v.shape()[1..] != tail[..] {
                return Err(invalid_shape(format!(
                    "concat: {:?} does not match trailing extents {tail:?}",
                    v.shape()
                )));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let sizes: Vec<(usize, Vec<usize>)> =
            values.iter().map(|v| (v.numel(), v.shape().to_vec())).collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, parts, move |g, _| {
            let mut offset = 0;
            sizes
                .iter()
                .map(|(n, shape)| {
                    let t = Tensor::new(shape.clone(), g.data()[offset..offset + n].to_vec())
                        .expect("shape");
                    offset += n;
                    Some(t)
                })
                .collect()
        }))
    }

    /// Concatenates `[n, d1]` and `[n, d2]` into `[n, d1 + d2]`.
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, d1) = av.dims2()?;
        let (n2, d2) = bv.dims2()?;
        if n != n2 {
            return Err(invalid_shape(format!("concat_cols: {n} rows vs {n2} rows")));
        }
        let mut data = Vec::with_capacity(n * (d1 + d2));
        for i in 0..n {
            data.extend_from_slice(&av.data()[i * d1..(i + 1) * d1]);
            data.extend_from_slice(&bv.data()[i * d2..(i + 1) * d2]);
        }
        let out = Tensor::new([n, d1 + d2], data)?;
        Ok(self.push(out, &[a, b], move |g, _| {
            let w = d1 + d2;
            let mut ga = Vec::with_capacity(n * d1);
            let mut gb = Vec::with_capacity(n * d2);
            for row in g.data().chunks(w) {
                ga.extend_from_slice(&row[..d1]);
                gb.extend_from_slice(&row[d1..]);
            }
            vec![
                Some(Tensor::new([n, d1], ga).expect("shape")),
                Some(Tensor::new([n, d2], gb).expect("shape")),
            ]
        }))
    }

    /// Flat slice `[start, start + len)` of the row-major data, shape `[len]`.
    pub fn slice(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.numel() {
            return Err(invalid_shape(format!(
                "slice {start}..{} of {} elements",
                start + len,
                av.numel()
            )));
        }
        let out = Tensor::new([len], av.data()[start..start + len].to_vec())?;
        let shape = av.shape().to_vec();
        Ok(self.push(out, &[a], move |g, _| {
            let mut full = Tensor::zeros(shape.clone());
            full.data_mut()[start..start + len].copy_from_slice(g.data());
            vec![Some(full)]
        }))
    }

    pub fn conv2d(&self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv) = (self.value(input), self.value(kernel));
        let geo = ConvGeometry::new(xv.shape(), wv.shape(), stride, pad)?;
        let out = conv2d_forward(&geo, xv.data(), wv.data());
        let x_shape = xv.shape().to_vec();
        let w_shape = wv.shape().to_vec();
        Ok(self.push(out, &[input, kernel], move |g, need| {
            let (dx, dw) = conv2d_backward(&geo, xv.data(), wv.data(), g.data(), need[0], need[1]);
            vec![
                dx.map(|d| Tensor::new(x_shape.clone(), d).expect("shape")),
                dw.map(|d| Tensor::new(w_shape.clone(), d).expect("shape")),
            ]
        }))
    }

    /// Differentiable [`super::linear_attention`].
    pub fn linear_attention(&self, q: Var, k: Var, v: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let dims = attention_dims(&qv, &kv, &vv, mask)?;
        let (out, cache) = linear_attention_forward(dims, qv.data(), kv.data(), vv.data(), mask)?;
        let out = Tensor::new([dims.n_q, dims.d_v], out)?;
        let out_arc = Arc::new(out.clone());
        let mask: Option<Vec<bool>> = mask.map(<[bool]>::to_vec);
        Ok(self.push(out, &[q, k, v], move |g, _| {
            let (dq, dk, dv) = linear_attention_backward(
                dims,
                qv.data(),
                kv.data(),
                vv.data(),
                out_arc.data(),
                &cache,
                g.data(),
                mask.as_deref(),
            );
            vec![
                Some(Tensor::new([dims.n_q, dims.d], dq).expect("shape")),
                Some(Tensor::new([dims.n_k, dims.d], dk).expect("shape")),
                Some(Tensor::new([dims.n_k, dims.d_v], dv).expect("shape")),
            ]
        }))
    }

    /// The explicit `N_q x N_k` attention built from primitive tape ops, so
    /// its gradient is an independent route to the fused one.
    pub fn reference_attention(&self, q: Var, k: Var, v: Var) -> Result<Var> {
        let fq = self.elu1(q);
        let fk = self.elu1(k);
        let fkt = self.transpose(fk)?;
        let weights = self.matmul(fq, fkt)?;
        let numer = self.matmul(weights, v)?;
        let denom = self.row_sum(weights)?;
        let ones = self.constant(Tensor::full(self.shape(denom), T::one()));
        let inv = self.div(ones, denom)?;
        self.scale_rows(numer, inv)
    }

    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, d) = check_layer_norm(&xv)?;
        if gv.numel() != d || bv.numel() != d {
            return Err(invalid_shape(format!("layer_norm affine params must have {d} entries")));
        }
        let (out, cache) = layer_norm_forward(xv.data(), gv.data(), bv.data(), rows, d);
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let x_shape = xv.shape().to_vec();
        let g_shape = gv.shape().to_vec();
        let b_shape = bv.shape().to_vec();
        Ok(self.push(out, &[x, gain, bias], move |g, _| {
            let (dx, dg, db) = layer_norm_backward(&cache, gv.data(), g.data(), rows, d);
            vec![
                Some(Tensor::new(x_shape.clone(), dx).expect("shape")),
                Some(Tensor::new(g_shape.clone(), dg).expect("shape")),
                Some(Tensor::new(b_shape.clone(), db).expect("shape")),
            ]
        }))
    }

    /// Differentiable [`super::spatial_softmax`] over all elements of `x`.
    pub fn softmax(&self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(m) = mask {
            if m.len() != xv.numel() {
                return Err(invalid_shape(format!(
                    "mask of {} entries for {} logits",
                    m.len(),
                    xv.numel()
                )));
            }
        }
        let p = softmax_forward(xv.data(), mask)?;
        let out = Tensor::new(xv.shape().to_vec(), p)?;
        let out_arc = Arc::new(out.clone());
        Ok(self.push(out, &[x], move |g, _| {
            vec![Some(with_shape(g, softmax_backward(out_arc.data(), g.data())))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_on_tiny_graph() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([2], vec![3.0, -2.0]).unwrap());
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0, -4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.leaf(Tensor::scalar(5.0));
        let y = tape.mul(c, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(1.5));
        let a = tape.scale(x, 2.0);
        let b = tape.scale(x, 3.0);
        let y = tape.add(a, b).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros([2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn min_max_route_ties_to_first_argument() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let b = tape.leaf(Tensor::new([3], vec![1.0, 0.0, 4.0]).unwrap());
        let m = tape.minimum(a, b).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 0.0, 3.0]);
        let s = tape.sum(m);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 0.0, 1.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn reference_attention_on_tape_matches_plain_oracle() {
        let tape = Tape::<f64>::new();
        let q = Tensor::from_fn([3, 2], |i| (i as f64 * 0.37).sin());
        let k = Tensor::from_fn([4, 2], |i| (i as f64 * 0.91).cos());
        let v = Tensor::from_fn([4, 3], |i| i as f64 * 0.1 - 0.4);
        let (qv, kv, vv) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
        let out = tape.reference_attention(qv, kv, vv).unwrap();
        let oracle = super::super::reference_attention(&q, &k, &v, None).unwrap();
        assert!(tape.value(out).max_abs_diff(&oracle) < 1e-14);
    }
}
