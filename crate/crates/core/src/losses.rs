//! Labeled, unlabeled and quality-aware loss terms and their weighted sum.
//!
//! Cross entropy is two-sided: `-[y ln p + (1 - y) ln(1 - p)]`, with `p`
//! clamped to `[eps, 1 - eps]` before the logs.

use serde::{Deserialize, Serialize};

use crate::data::{ClassMask, LabelVector};
use crate::error::{Error, Result};

pub const DEFAULT_PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_label: f64,
    pub lambda_unlabel: f64,
    pub lambda_quality: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_label: 1.0,
            lambda_unlabel: 1.0,
            lambda_quality: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("loss.lambda_label", self.lambda_label),
            ("loss.lambda_unlabel", self.lambda_unlabel),
            ("loss.lambda_quality", self.lambda_quality),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub label_term: f64,
    pub unlabel_term: f64,
    pub quality_term: f64,
    pub total: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    /// Samples with a flagged best answer.
    pub n_quality: usize,
    /// (sample, class) pairs that entered the unlabeled term.
    pub n_included: usize,
}

pub fn validate_tau(tau: f64) -> Result<()> {
    if !(tau > 0.5 && tau <= 1.0) {
        return Err(Error::config(
            "loss.tau",
            format!("must lie in (0.5, 1], got {tau}; at or below 0.5 every class passes"),
        ));
    }
    Ok(())
}

pub fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn bce(y: f64, p: f64, eps: f64) -> f64 {
    let p = clamp_prob(p, eps);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d bce / d logit for `p = sigmoid(logit)`; zero where the clamp is active.
pub fn bce_grad_logit(y: f64, p: f64, eps: f64) -> f64 {
    if p < eps || p > 1.0 - eps {
        0.0
    } else {
        p - y
    }
}

fn check_shapes(n_a: usize, n_b: usize, what: &str) -> Result<()> {
    if n_a != n_b {
        return Err(Error::Shape(format!("{what}: {n_a} vs {n_b} samples")));
    }
    Ok(())
}

/// Mean over samples of the summed per-class cross entropy.
pub fn label_loss(y: &[LabelVector], p: &[Vec<f64>], eps: f64) -> Result<f64> {
    check_shapes(y.len(), p.len(), "label_loss")?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (yl, pl) in y.iter().zip(p) {
        check_shapes(yl.len(), pl.len(), "label_loss classes")?;
        total += yl.as_f64().iter().zip(pl).map(|(&y, &p)| bce(y, p, eps)).sum::<f64>();
    }
    Ok(total / y.len() as f64)
}

/// Confidence gate and polarity for one probability vector: class `c` is
/// confident iff `max(p, 1 - p) >= tau`, and its label is `p >= tau`.
pub fn pseudo_targets(p: &[f64], tau: f64) -> (LabelVector, ClassMask) {
    let mask = p.iter().map(|&p| p.max(1.0 - p) >= tau).collect();
    let label = p.iter().map(|&p| p >= tau).collect();
    (LabelVector::new(label), ClassMask::new(mask))
}

/// Cross entropy summed over masked classes, averaged over all samples.
pub fn masked_label_loss(y: &[LabelVector], mask: &[ClassMask], p: &[Vec<f64>], eps: f64) -> Result<f64> {
    check_shapes(y.len(), p.len(), "masked_label_loss")?;
    check_shapes(mask.len(), p.len(), "masked_label_loss")?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ((yl, ml), pl) in y.iter().zip(mask).zip(p) {
        check_shapes(yl.len(), pl.len(), "masked_label_loss classes")?;
        for (c, &pc) in pl.iter().enumerate() {
            if ml.get(c) {
                total += bce(yl.get(c) as u8 as f64, pc, eps);
            }
        }
    }
    Ok(total / y.len() as f64)
}

/// Unlabeled term: targets and mask are derived from `p_tilde` itself and
/// held constant.
pub fn unlabeled_loss(p_tilde: &[Vec<f64>], tau: f64, eps: f64) -> Result<f64> {
    validate_tau(tau)?;
    let (y, m): (Vec<_>, Vec<_>) = p_tilde.iter().map(|p| pseudo_targets(p, tau)).unzip();
    masked_label_loss(&y, &m, p_tilde, eps)
}

/// `Σ_k 1(b_k) (w_k - max_j w_j)^2` for one sample.
pub fn quality_term(weights: &[f64], best: Option<usize>) -> f64 {
    match best {
        Some(b) if b < weights.len() => {
            let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (weights[b] - max).powi(2)
        }
        _ => 0.0,
    }
}

/// Gradient of [`quality_term`] with respect to the weights. The max is not
/// gradient-stopped: the first maximizer receives the opposite pull.
pub fn quality_term_grad(weights: &[f64], best: Option<usize>) -> Vec<f64> {
    let mut g = vec![0.0; weights.len()];
    if let Some(b) = best.filter(|&b| b < weights.len()) {
        let (arg, max) = argmax(weights);
        let diff = weights[b] - max;
        if arg != b && diff != 0.0 {
            g[b] += 2.0 * diff;
            g[arg] -= 2.0 * diff;
        }
    }
    g
}

pub(crate) fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &x) in v.iter().enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

/// Mean of [`quality_term`] over all samples, flagged or not.
pub fn quality_loss(weights: &[Vec<f64>], best: &[Option<usize>]) -> Result<f64> {
    check_shapes(weights.len(), best.len(), "quality_loss")?;
    if weights.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = weights.iter().zip(best).map(|(w, &b)| quality_term(w, b)).sum();
    Ok(sum / weights.len() as f64)
}

pub fn total_loss(label: f64, unlabel: f64, quality: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        label_term: label,
        unlabel_term: unlabel,
        quality_term: quality,
        total: w.lambda_label * label + w.lambda_unlabel * unlabel + w.lambda_quality * quality,
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const EPS: f64 = DEFAULT_PROB_CLAMP;

    fn lv(bits: &[u8]) -> LabelVector {
        LabelVector::from_bits(bits).unwrap()
    }

    #[test]
    fn label_loss_exact_prediction_is_zero() {
        let l = label_loss(&[lv(&[1, 0, 1])], &[vec![1.0, 0.0, 1.0]], EPS).unwrap();
        assert!(l < 1e-5);
    }

    #[test]
    fn label_loss_hand_value() {
        let l = label_loss(&[lv(&[1, 0, 0])], &[vec![0.8, 0.3, 0.3]], EPS).unwrap();
        let oracle = -(0.8f64.ln() + 0.7f64.ln() + 0.7f64.ln());
        assert_abs_diff_eq!(l, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(l, 0.9365, epsilon = 1e-4);
    }

    #[test]
    fn label_loss_at_half_is_three_ln2() {
        for y in [[0, 0, 0], [1, 0, 1], [1, 1, 1]] {
            let l = label_loss(&[lv(&y)], &[vec![0.5; 3]], EPS).unwrap();
            assert_abs_diff_eq!(l, 3.0 * 2f64.ln(), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(3.0 * 2f64.ln(), 2.0794, epsilon = 1e-4);
    }

    #[test]
    fn label_loss_shape_mismatch() {
        assert!(label_loss(&[lv(&[1, 0, 0])], &[], EPS).is_err());
        assert!(label_loss(&[lv(&[1, 0, 0])], &[vec![0.5, 0.5]], EPS).is_err());
    }

    #[test]
    fn unlabeled_loss_cases() {
        assert_eq!(unlabeled_loss(&[vec![0.6; 3]], 0.7, EPS).unwrap(), 0.0);
        let hi = unlabeled_loss(&[vec![0.95]], 0.9, EPS).unwrap();
        assert_abs_diff_eq!(hi, -(0.95f64.ln()), epsilon = 1e-12);
        let lo = unlabeled_loss(&[vec![0.05]], 0.9, EPS).unwrap();
        assert_abs_diff_eq!(lo, -(0.95f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn tau_at_or_below_half_is_config_error() {
        for tau in [0.5, 0.3, 1.01, f64::NAN] {
            match unlabeled_loss(&[vec![0.5]], tau, EPS) {
                Err(Error::Config { field, .. }) => assert_eq!(field, "loss.tau"),
                other => panic!("tau {tau}: {other:?}"),
            }
        }
    }

    #[test]
    fn quality_cases() {
        assert_eq!(quality_term(&[0.6, 0.4], Some(0)), 0.0);
        assert_abs_diff_eq!(quality_term(&[0.2, 0.5, 0.3], Some(0)), 0.09, epsilon = 1e-12);
        assert_eq!(quality_term(&[0.2, 0.5, 0.3], None), 0.0);
        let mean = quality_loss(&[vec![0.2, 0.5, 0.3], vec![0.5, 0.5]], &[Some(0), None]).unwrap();
        assert_abs_diff_eq!(mean, 0.045, epsilon = 1e-12);
    }

    #[test]
    fn quality_gradient_matches_finite_difference() {
        let w = [0.2, 0.5, 0.3];
        let g = quality_term_grad(&w, Some(0));
        let h = 1e-6;
        for k in 0..3 {
            let mut a = w;
            let mut b = w;
            a[k] += h;
            b[k] -= h;
            let fd = (quality_term(&a, Some(0)) - quality_term(&b, Some(0))) / (2.0 * h);
            assert_abs_diff_eq!(g[k], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn total_loss_weights() {
        let z = LossWeights {
            lambda_label: 0.0,
            lambda_unlabel: 0.0,
            lambda_quality: 0.0,
        };
        assert_eq!(total_loss(2.0, 4.0, 10.0, &z).total, 0.0);
        let only_label = LossWeights { lambda_label: 1.0, ..z };
        assert_eq!(total_loss(2.0, 4.0, 10.0, &only_label).total, 2.0);
        let w = LossWeights {
            lambda_label: 1.0,
            lambda_unlabel: 0.5,
            lambda_quality: 0.1,
        };
        assert_abs_diff_eq!(total_loss(2.0, 4.0, 10.0, &w).total, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn bce_logit_gradient() {
        for (y, z) in [(1.0, 0.3), (0.0, -1.2), (1.0, 4.0)] {
            let h = 1e-6;
            let fd = (bce(y, sigmoid(z + h), EPS) - bce(y, sigmoid(z - h), EPS)) / (2.0 * h);
            assert_abs_diff_eq!(bce_grad_logit(y, sigmoid(z), EPS), fd, epsilon = 1e-7);
        }
    }
}
