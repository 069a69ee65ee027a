//! Central finite-difference verification of tape gradients.

use crate::error::{OetrError, Result};

use super::{Tape, Tensor, Var};

/// Gradient magnitude below which errors are measured against this floor
/// instead of the gradient itself. Exactly-zero gradients would otherwise be
/// judged on finite-difference roundoff alone.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Outcome of one [`grad_check`] run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Input index, coordinate, analytic and numeric value at the worst error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Fixed pseudo-random projection weights in `[0.5, 1.5)`. Reducing with these
/// rather than a plain sum keeps ops whose plain sum is constant (softmax,
/// layer norm) from passing vacuously.
fn projection(n: usize) -> Vec<f64> {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            0.5 + (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

fn reduce(tape: &Tape<f64>, out: Var) -> Result<Var> {
    let n = tape.value(out).numel();
    if n == 1 {
        return Ok(out);
    }
    let flat = tape.reshape(out, &[n])?;
    let w = tape.constant(Tensor::new([n], projection(n))?);
    let weighted = tape.mul(flat, w)?;
    Ok(tape.sum(weighted))
}

fn evaluate<F>(inputs: &[Tensor<f64>], build: &F) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&tape, &vars)?;
    let root = reduce(&tape, out)?;
    Ok(tape.scalar(root))
}

/// Compares tape gradients of `build` against central differences for every
/// coordinate of every input, in 64-bit arithmetic.
///
/// Non-scalar outputs are reduced with fixed projection weights. The error of
/// a coordinate is `|a - b| / max(|a|, |b|, GRAD_FLOOR)`; the maximum over all
/// coordinates is reported.
pub fn grad_check<F>(name: &str, inputs: &[Tensor<f64>], eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(OetrError::InvalidConfig(format!(
            "finite-difference step {eps} outside [1e-6, 1e-3]"
        )));
    }
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&tape, &vars)?;
    let root = reduce(&tape, out)?;
    let mut grads = tape.backward(root)?;

    let mut worst = 0.0f64;
    let mut worst_at = None;
    let mut coordinates = 0;
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.take_or_zeros(v, inputs[i].shape());
        if !analytic.is_finite() {
            return Err(OetrError::NumericalDegeneracy(format!(
                "{name}: non-finite gradient for input {i}"
            )));
        }
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + eps;
            let plus = evaluate(&probe, &build)?;
            probe[i].data_mut()[j] = x0 - eps;
            let minus = evaluate(&probe, &build)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            let err = (a - numeric).abs() / denom;
            if !err.is_finite() {
                return Err(OetrError::NumericalDegeneracy(format!(
                    "{name}: non-finite finite-difference estimate at input {i}[{j}]"
                )));
            }
            if err > worst || worst_at.is_none() {
                worst = worst.max(err);
                worst_at = Some((i, j, a, numeric));
            }
            coordinates += 1;
        }
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: worst,
        coordinates,
        worst: worst_at,
    })
}
