//! Training objectives.
//!
//! Four pattern-control terms shape the generated pattern (push it toward
//! zero, spread it out, smooth it, balance its channels), a binary
//! cross-entropy term scores message recovery, and three stage totals mix
//! them. All functions take and return tensors so gradients flow; batched
//! `(B, C, H, W)` inputs are scored per sample and averaged, which makes the
//! single-sample `(C, H, W)` case the plain definition.

use candle_core::{Tensor, D};

use crate::config::LossWeights;
use crate::error::{Error, Result};

/// Smoothing half-width used inside the absolute-value surrogate
/// `sqrt(x^2 + EPS^2)`; keeps the variation term differentiable at zero.
const ABS_EPS: f64 = 1e-8;

/// Probability clamp for the cross-entropy term.
const PROB_EPS: f64 = 1e-7;

fn smooth_abs(x: &Tensor) -> Result<Tensor> {
    let eps2 = ABS_EPS * ABS_EPS;
    Ok((x.sqr()? + eps2)?.sqrt()?)
}

/// Number of samples: leading dim for rank-4 tensors, 1 otherwise.
fn batch_len(t: &Tensor) -> usize {
    if t.rank() == 4 {
        t.dims()[0]
    } else {
        1
    }
}

/// Mean squared error between two same-shape tensors.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::input(format!(
            "mse shape mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Mean of squared entries: distance of the pattern from all-zeros.
pub fn l_zero(pattern: &Tensor) -> Result<Tensor> {
    Ok(pattern.sqr()?.mean_all()?)
}

/// Mean absolute value plus variance over all entries.
///
/// `sample_variance` divides by `n - 1` instead of `n`.
pub fn l_dispersion(pattern: &Tensor, sample_variance: bool) -> Result<Tensor> {
    let mean_abs = smooth_abs(pattern)?.mean_all()?;
    let mu = pattern.mean_all()?;
    let centered = pattern.broadcast_sub(&mu)?;
    let mut var = centered.sqr()?.mean_all()?;
    if sample_variance {
        let n = pattern.elem_count() as f64;
        if n > 1.0 {
            var = (var * (n / (n - 1.0)))?;
        }
    }
    Ok((mean_abs + var)?)
}

/// Sum of absolute neighbor differences, vertically and horizontally.
///
/// Out-of-range neighbors are excluded; channels are summed; batched inputs
/// average the per-sample sums.
pub fn l_variation(pattern: &Tensor) -> Result<Tensor> {
    let dims = pattern.dims();
    let rank = dims.len();
    if rank < 2 {
        return Err(Error::input("variation loss needs at least 2 spatial dims"));
    }
    let (h, w) = (dims[rank - 2], dims[rank - 1]);
    if h < 2 || w < 2 {
        return Err(Error::input(format!(
            "variation loss needs spatial size >= 2x2, got {h}x{w}"
        )));
    }
    let dv = (pattern.narrow(rank - 2, 1, h - 1)? - pattern.narrow(rank - 2, 0, h - 1)?)?;
    let dh = (pattern.narrow(rank - 1, 1, w - 1)? - pattern.narrow(rank - 1, 0, w - 1)?)?;
    let total = (smooth_abs(&dv)?.sum_all()? + smooth_abs(&dh)?.sum_all()?)?;
    Ok((total / batch_len(pattern) as f64)?)
}

/// Mean of the squared pairwise differences of the three channel means.
pub fn l_channel(pattern: &Tensor) -> Result<Tensor> {
    let rank = pattern.rank();
    if rank != 3 && rank != 4 {
        return Err(Error::input(format!(
            "channel loss expects (3, H, W) or (B, 3, H, W), got rank {rank}"
        )));
    }
    let c_dim = rank - 3;
    if pattern.dims()[c_dim] != 3 {
        return Err(Error::input(format!(
            "channel loss needs exactly 3 channels, got {}",
            pattern.dims()[c_dim]
        )));
    }
    // (B, 3) or (3,) channel means.
    let means = pattern.mean(D::Minus1)?.mean(D::Minus1)?;
    let r = means.narrow(c_dim, 0, 1)?;
    let g = means.narrow(c_dim, 1, 1)?;
    let b = means.narrow(c_dim, 2, 1)?;
    let sum = ((r.clone() - g.clone())?.sqr()? + (r - b.clone())?.sqr()?)?;
    let sum = (sum + (g - b)?.sqr()?)?;
    Ok((sum / 3.0)?.mean_all()?)
}

/// Weighted sum of the four pattern-control terms.
pub fn l_pattern(pattern: &Tensor, w: &LossWeights, sample_variance: bool) -> Result<Tensor> {
    let t = (l_zero(pattern)? * w.zero)?;
    let t = (t + (l_dispersion(pattern, sample_variance)? * w.dispersion)?)?;
    let t = (t + (l_variation(pattern)? * w.variation)?)?;
    Ok((t + (l_channel(pattern)? * w.channel)?)?)
}

/// Mean binary cross-entropy between target bits and predicted probabilities.
pub fn l_message(target_bits: &Tensor, predicted_probs: &Tensor) -> Result<Tensor> {
    if target_bits.dims() != predicted_probs.dims() {
        return Err(Error::input(format!(
            "message loss shape mismatch: {:?} vs {:?}",
            target_bits.dims(),
            predicted_probs.dims()
        )));
    }
    let p = predicted_probs.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let one = Tensor::ones_like(target_bits)?;
    let pos = (target_bits * p.log()?)?;
    let neg = ((&one - target_bits)? * (&one - &p)?.log()?)?;
    Ok((pos + neg)?.mean_all()?.neg()?)
}

/// Stage-1 total: pattern control mixed with message recovery.
pub fn l_stage1(
    pattern: &Tensor,
    target_bits: &Tensor,
    predicted_probs: &Tensor,
    w: &LossWeights,
    sample_variance: bool,
) -> Result<Tensor> {
    let p = (l_pattern(pattern, w, sample_variance)? * w.pattern)?;
    let m = (l_message(target_bits, predicted_probs)? * w.message)?;
    Ok((p + m)?)
}

/// Stage-2 total: MSE between the decoded pattern and its target.
pub fn l_stage2(decoded_pattern: &Tensor, target_pattern: &Tensor) -> Result<Tensor> {
    mse(decoded_pattern, target_pattern)
}

/// Stage-3 total: sum of the previous stage totals on the current batch.
pub fn l_stage3(stage1_total: &Tensor, stage2_total: &Tensor) -> Result<Tensor> {
    Ok((stage1_total + stage2_total)?)
}

/// Extracts a scalar loss as f64 regardless of tensor dtype.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}
