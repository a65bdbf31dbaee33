use super::{Matrix, Tensor};
use crate::{Error, Result};

/// `m · v + b`.
pub fn affine(m: &Matrix, v: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if m.cols() != v.len() || m.rows() != b.len() {
        return Err(Error::shape(
            "affine",
            m.shape(),
            format!("v[{}], b[{}]", v.len(), b.len()),
        ));
    }
    Ok(m.row_iter()
        .zip(b)
        .map(|(row, bias)| super::dot(row, v) + bias)
        .collect())
}

/// Gradients of `affine` with respect to `(m, v, b)`, in that order.
pub fn affine_backward(m: &Matrix, v: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gm = vec![0.0; m.rows() * m.cols()];
    let mut gv = vec![0.0; m.cols()];
    for (r, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = m.row(r);
        let dst = &mut gm[r * m.cols()..(r + 1) * m.cols()];
        for c in 0..m.cols() {
            dst[c] = g * v[c];
            gv[c] += g * row[c];
        }
    }
    (gm, gv, grad_out.to_vec())
}

pub fn leaky_relu(v: &[f64], slope: f64) -> Vec<f64> {
    v.iter()
        .map(|&x| if x >= 0.0 { x } else { slope * x })
        .collect()
}

pub fn leaky_relu_backward(v: &[f64], slope: f64, grad_out: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
        .collect()
}

/// Numerically stable log-softmax (max subtracted before exponentiating).
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
    scores.iter().map(|s| s - lse).collect()
}

/// Cross-entropy of `softmax(scores)` against `label`, with its gradient in
/// the scores.
pub fn softmax_xent(scores: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= scores.len() {
        return Err(Error::Index {
            index: label,
            len: scores.len(),
        });
    }
    let logp = log_softmax(scores);
    let loss = -logp[label];
    let mut grad: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Divides by the sum of magnitudes plus `eps`, preserving signs.
///
/// With `eps == 0` the input must have magnitude sum above `1e-12`, otherwise
/// `None` is returned; a positive `eps` always yields a value.
pub fn abs_normalize(a: &[f64], eps: f64) -> Option<Vec<f64>> {
    let total = a.iter().map(|x| x.abs()).sum::<f64>();
    if (eps == 0.0 && total <= 1e-12) || !(total + eps > 0.0) {
        return None;
    }
    let denom = total + eps;
    Some(a.iter().map(|x| x / denom).collect())
}

/// Quotient rule for `abs_normalize`, with `sign(0) = 0`.
pub fn abs_normalize_backward(a: &[f64], eps: f64, grad_out: &[f64]) -> Vec<f64> {
    let denom = a.iter().map(|x| x.abs()).sum::<f64>() + eps;
    let weighted = super::dot(grad_out, a);
    a.iter()
        .zip(grad_out)
        .map(|(&x, &g)| {
            let sign = if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            };
            g / denom - sign * weighted / (denom * denom)
        })
        .collect()
}

/// Which coordinates a clamp overwrote.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClampMask(pub Vec<bool>);

/// Caps `|a[0]|` at `gamma` and floors `|a[k]|`, `k >= 1`, at
/// `(1 - gamma) / K` where `K = a.len() - 1`. Signs are kept; a zero
/// neighbor coefficient is lifted to `+floor`.
pub fn clamp_alpha_bounds(a: &[f64], gamma: f64) -> (Vec<f64>, ClampMask) {
    let k = a.len().saturating_sub(1);
    let floor = if k > 0 { (1.0 - gamma) / k as f64 } else { 0.0 };
    let mut out = a.to_vec();
    let mut mask = vec![false; a.len()];
    if let Some(first) = out.first_mut() {
        if first.abs() > gamma {
            *first = gamma.copysign(*first);
            mask[0] = true;
        }
    }
    for (x, m) in out.iter_mut().zip(mask.iter_mut()).skip(1) {
        if x.abs() < floor {
            *x = if *x < 0.0 { -floor } else { floor };
            *m = true;
        }
    }
    (out, ClampMask(mask))
}

pub fn clamp_alpha_backward(mask: &ClampMask, grad_out: &[f64]) -> Vec<f64> {
    grad_out
        .iter()
        .zip(&mask.0)
        .map(|(&g, &clamped)| if clamped { 0.0 } else { g })
        .collect()
}

/// Heavy-ball update: `velocity = momentum * velocity + grads`, then
/// `params -= lr * velocity`.
pub fn sgd_momentum_step<T: Tensor + ?Sized>(
    params: &mut T,
    grads: &T,
    velocity: &mut T,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.shape() != grads.shape() || params.shape() != velocity.shape() {
        return Err(Error::shape(
            "sgd_momentum_step",
            params.shape(),
            format!("grads {}, velocity {}", grads.shape(), velocity.shape()),
        ));
    }
    if !(lr > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be > 0, got {lr}"
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    for ((p, g), v) in params
        .as_mut_slice()
        .iter_mut()
        .zip(grads.as_slice())
        .zip(velocity.as_mut_slice())
    {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}
