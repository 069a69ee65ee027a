//! Finite-difference checks of every differentiable tape operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, GradCheckReport, Tensor};
use crate::error::Result;

const EPS: f64 = 1e-5;

struct Inputs(ChaCha8Rng);

impl Inputs {
    fn smooth(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.0.random_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape")
    }

    /// Values at least 0.2 away from zero, for ops with a kink there.
    fn away(&mut self, shape: &[usize]) -> Tensor<f64> {
        let mut t = self.smooth(shape);
        for v in t.data_mut() {
            *v += 0.2f64.copysign(*v);
        }
        t
    }

    fn positive(&mut self, shape: &[usize]) -> Tensor<f64> {
        let mut t = self.smooth(shape);
        for v in t.data_mut() {
            *v = 0.5 + v.abs();
        }
        t
    }
}

/// Runs [`grad_check`] on each tape operation with seeded random inputs kept
/// clear of non-differentiable points. Returns one report per operation.
type Build<'a> = &'a dyn Fn(&super::Tape<f64>, &[super::Var]) -> Result<super::Var>;

pub fn op_gradient_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut r = Inputs(ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::new();
    let mut check = |name: &str, inputs: Vec<Tensor<f64>>, build: Build| -> Result<()> {
        out.push(grad_check(name, &inputs, EPS, build)?);
        Ok(())
    };

    check("add", vec![r.smooth(&[3, 4]), r.smooth(&[3, 4])], &|t, v| t.add(v[0], v[1]))?;
    check("sub", vec![r.smooth(&[3, 4]), r.smooth(&[3, 4])], &|t, v| t.sub(v[0], v[1]))?;
    check("mul", vec![r.smooth(&[3, 4]), r.smooth(&[3, 4])], &|t, v| t.mul(v[0], v[1]))?;
    check("div", vec![r.smooth(&[3, 4]), r.positive(&[3, 4])], &|t, v| t.div(v[0], v[1]))?;
    let a = r.smooth(&[12]);
    let gap = r.away(&[12]);
    let b = Tensor::new([12], a.data().iter().zip(gap.data()).map(|(x, g)| x + g).collect())?;
    check("minimum", vec![a.clone(), b.clone()], &|t, v| t.minimum(v[0], v[1]))?;
    check("maximum", vec![a, b], &|t, v| t.maximum(v[0], v[1]))?;
    check("scale", vec![r.smooth(&[5])], &|t, v| Ok(t.scale(v[0], -1.7)))?;
    check("add_scalar", vec![r.smooth(&[5])], &|t, v| Ok(t.add_scalar(v[0], 0.3)))?;
    check("relu", vec![r.away(&[10])], &|t, v| Ok(t.relu(v[0])))?;
    check("sigmoid", vec![r.smooth(&[10])], &|t, v| Ok(t.sigmoid(v[0])))?;
    check("abs", vec![r.away(&[10])], &|t, v| Ok(t.abs(v[0])))?;
    check("elu1", vec![r.away(&[10])], &|t, v| Ok(t.elu1(v[0])))?;
    check("sum", vec![r.smooth(&[2, 3])], &|t, v| Ok(t.sum(v[0])))?;
    check("mean", vec![r.smooth(&[2, 3])], &|t, v| Ok(t.mean(v[0])))?;
    check("matmul", vec![r.smooth(&[3, 4]), r.smooth(&[4, 2])], &|t, v| t.matmul(v[0], v[1]))?;
    check("transpose", vec![r.smooth(&[3, 4])], &|t, v| t.transpose(v[0]))?;
    check("reshape", vec![r.smooth(&[3, 4])], &|t, v| t.reshape(v[0], &[2, 6]))?;
    check("add_row_bias", vec![r.smooth(&[3, 4]), r.smooth(&[4])], &|t, v| t.add_row_bias(v[0], v[1]))?;
    check("add_channel_bias", vec![r.smooth(&[2, 3, 3]), r.smooth(&[2])], &|t, v| {
        t.add_channel_bias(v[0], v[1])
    })?;
    check("scale_rows", vec![r.smooth(&[3, 4]), r.smooth(&[3])], &|t, v| t.scale_rows(v[0], v[1]))?;
    check("row_sum", vec![r.smooth(&[3, 4])], &|t, v| t.row_sum(v[0]))?;
    check("concat", vec![r.smooth(&[3]), r.smooth(&[2]), r.smooth(&[4])], &|t, v| t.concat(v))?;
    check("concat_cols", vec![r.smooth(&[3, 2]), r.smooth(&[3, 3])], &|t, v| t.concat_cols(v[0], v[1]))?;
    check("slice", vec![r.smooth(&[7])], &|t, v| t.slice(v[0], 2, 3))?;
    check("conv2d", vec![r.smooth(&[2, 6, 6]), r.smooth(&[3, 2, 3, 3])], &|t, v| {
        t.conv2d(v[0], v[1], 1, 1)
    })?;
    check("conv2d strided", vec![r.smooth(&[2, 8, 8]), r.smooth(&[2, 2, 4, 4])], &|t, v| {
        t.conv2d(v[0], v[1], 2, 1)
    })?;
    let mask = [true, false, true, true, false, true];
    check("linear_attention", vec![r.smooth(&[4, 3]), r.smooth(&[6, 3]), r.smooth(&[6, 2])], &|t, v| {
        t.linear_attention(v[0], v[1], v[2], Some(&mask))
    })?;
    check("reference_attention", vec![r.smooth(&[4, 3]), r.smooth(&[6, 3]), r.smooth(&[6, 2])], &|t, v| {
        t.reference_attention(v[0], v[1], v[2])
    })?;
    check("layer_norm", vec![r.smooth(&[3, 5]), r.smooth(&[5]), r.smooth(&[5])], &|t, v| {
        t.layer_norm(v[0], v[1], v[2])
    })?;
    let softmax_mask = [true, true, false, true, true, false, true, true];
    check("softmax", vec![r.smooth(&[2, 4])], &|t, v| t.softmax(v[0], Some(&softmax_mask)))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        let reports = op_gradient_suite(11).unwrap();
        assert_eq!(reports.len(), 30);
        assert!(reports.iter().all(|r| r.coordinates > 0));
        for r in &reports {
            assert!(r.max_rel_error < 1e-6, "{r:?}");
        }
    }
}
