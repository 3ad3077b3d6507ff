//! Masked cross-entropy and Dice losses, the warm-up weight and the
//! composite objective.
//!
//! Gradients are returned with respect to the probability field, laid out
//! class-major (`c * H*W + i`), ready to be pushed through the softmax.

use crate::error::{check_dims, Result};
use crate::grid::{BinaryMask, LabelField, ProbField};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking the log.
pub const EPS: f64 = 1e-7;

fn check(y: &LabelField, p: &ProbField, w: &BinaryMask) -> Result<()> {
    check_dims(p.dims(), y.dims())?;
    check_dims(p.dims(), w.dims())?;
    assert_eq!(y.classes(), p.classes(), "label and probability class counts differ");
    Ok(())
}

/// `-(1/(H·W)) Σ w_i log p_i[y_i]`; masked pixels still count in the denominator.
pub fn weighted_ce(y: &LabelField, p: &ProbField, w: &BinaryMask) -> Result<f64> {
    check(y, p, w)?;
    let n = p.len();
    let sum: f64 =
        (0..n).filter(|&i| w.bit(i)).map(|i| -p.prob(y.as_slice()[i] as usize, i).clamp(EPS, 1.0 - EPS).ln()).sum();
    Ok(sum / n as f64)
}

pub fn weighted_ce_grad(y: &LabelField, p: &ProbField, w: &BinaryMask) -> Result<Vec<f64>> {
    check(y, p, w)?;
    let n = p.len();
    let mut grad = vec![0.0; p.classes() * n];
    for i in (0..n).filter(|&i| w.bit(i)) {
        let c = y.as_slice()[i] as usize;
        let v = p.prob(c, i);
        // Zero slope where the clamp is active.
        if v > EPS && v < 1.0 - EPS {
            grad[c * n + i] = -1.0 / (v * n as f64);
        }
    }
    Ok(grad)
}

/// Per-class sums `(Σ w p y, Σ w (p² + y²))` for the foreground classes.
fn dice_terms(y: &LabelField, p: &ProbField, w: &BinaryMask) -> Vec<(f64, f64)> {
    let n = p.len();
    (1..p.classes())
        .map(|c| {
            let (mut inter, mut denom) = (0.0, 0.0);
            for i in (0..n).filter(|&i| w.bit(i)) {
                let pv = p.prob(c, i);
                let yv = if y.as_slice()[i] as usize == c { 1.0 } else { 0.0 };
                inter += pv * yv;
                denom += pv * pv + yv * yv;
            }
            (inter, denom)
        })
        .collect()
}

/// `1 - 2 Σ w p y / Σ w (p² + y²)`, averaged over the foreground classes.
/// A class with an empty denominator contributes 0.
pub fn weighted_dice(y: &LabelField, p: &ProbField, w: &BinaryMask) -> Result<f64> {
    check(y, p, w)?;
    let terms = dice_terms(y, p, w);
    let total: f64 =
        terms.iter().map(|&(inter, denom)| if denom > 0.0 { 1.0 - 2.0 * inter / denom } else { 0.0 }).sum();
    Ok(total / terms.len() as f64)
}

pub fn weighted_dice_grad(y: &LabelField, p: &ProbField, w: &BinaryMask) -> Result<Vec<f64>> {
    check(y, p, w)?;
    let n = p.len();
    let terms = dice_terms(y, p, w);
    let scale = 1.0 / terms.len() as f64;
    let mut grad = vec![0.0; p.classes() * n];
    for (k, &(inter, denom)) in terms.iter().enumerate() {
        if denom <= 0.0 {
            continue;
        }
        let c = k + 1;
        let d2 = denom * denom;
        for i in (0..n).filter(|&i| w.bit(i)) {
            let pv = p.prob(c, i);
            let yv = if y.as_slice()[i] as usize == c { 1.0 } else { 0.0 };
            grad[c * n + i] = -2.0 * scale * (yv * denom - 2.0 * pv * inter) / d2;
        }
    }
    Ok(grad)
}

/// CE + Dice value and its gradient.
pub fn seg_loss_with_grad(y: &LabelField, p: &ProbField, w: &BinaryMask) -> Result<(f64, Vec<f64>)> {
    let value = weighted_ce(y, p, w)? + weighted_dice(y, p, w)?;
    let mut grad = weighted_ce_grad(y, p, w)?;
    for (g, d) in grad.iter_mut().zip(weighted_dice_grad(y, p, w)?) {
        *g += d;
    }
    Ok((value, grad))
}

/// Warm-up weight `exp(-5 (1 - t/T))`.
pub fn lambda_schedule(t: usize, t_total: usize) -> f64 {
    assert!(t_total > 0 && t <= t_total, "step {t} outside [0, {t_total}]");
    (-5.0 * (1.0 - t as f64 / t_total as f64)).exp()
}

/// Components of one iteration's objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_s: f64,
    pub l_in: f64,
    pub l_out: f64,
    pub l_sym: f64,
    pub l_total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    /// `d l_total / d (l_s, l_in, l_out, l_sym)`.
    pub fn coefficients(lambda: f64) -> [f64; 4] {
        [1.0, lambda, lambda, lambda * lambda]
    }
}

/// `L_s + λ (L_in + L_out + λ L_sym)`.
pub fn total_loss(l_s: f64, l_in: f64, l_out: f64, l_sym: f64, lambda: f64) -> LossBreakdown {
    LossBreakdown { l_s, l_in, l_out, l_sym, l_total: l_s + lambda * (l_in + l_out + lambda * l_sym), lambda }
}
