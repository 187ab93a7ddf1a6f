//! Mini-batch objective and its gradient.

use rand::{Rng as _, SeedableRng};
use rayon::prelude::*;

use super::{backward, forward_train, QaConfig, QaParams};
use crate::data::{ClassMask, LabelVector};
use crate::encoder::EncodedSample;
use crate::error::{Error, Result};
use crate::losses::{bce, bce_grad_logit, quality_term, quality_term_grad, LossBreakdown, LossWeights};
use crate::optim::ParamSet;
use crate::rng::Rng;

/// Training target of one sample. Pseudo targets are fixed when the sample is
/// admitted and only the confident classes in `mask` contribute.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Labeled(LabelVector),
    Pseudo { label: LabelVector, mask: ClassMask },
}

const CHUNK: usize = 8;

struct Partial {
    label: f64,
    unlabel: f64,
    quality: f64,
    n_quality: usize,
    n_included: usize,
    grads: Option<QaParams>,
}

/// Weighted loss over a mini-batch:
/// `λ_L · mean_labeled(BCE) + λ_U · mean_pseudo(masked BCE) + λ_Q · mean_all(quality)`.
/// When `grads` is given the gradient is added into it. With `rng` set,
/// dropout is active; each sample draws its own seed from `rng` up front, so
/// the result does not depend on thread scheduling.
pub fn batch_objective(
    params: &QaParams,
    cfg: &QaConfig,
    items: &[(&EncodedSample, &Target)],
    weights: &LossWeights,
    eps: f64,
    rng: Option<&mut Rng>,
    grads: Option<&mut QaParams>,
) -> Result<LossBreakdown> {
    let n = items.len();
    if n == 0 {
        return Ok(LossBreakdown::default());
    }
    let n_l = items.iter().filter(|(_, t)| matches!(t, Target::Labeled(_))).count();
    let n_u = n - n_l;
    let seeds: Option<Vec<u64>> = rng.map(|r| (0..n).map(|_| r.random()).collect());
    let want_grad = grads.is_some();
    let scale_l = if n_l > 0 {
        weights.lambda_label / n_l as f64
    } else {
        0.0
    };
    let scale_u = if n_u > 0 {
        weights.lambda_unlabel / n_u as f64
    } else {
        0.0
    };
    let scale_q = weights.lambda_quality / n as f64;

    let partials: Vec<Result<Partial>> = items
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut acc = Partial {
                label: 0.0,
                unlabel: 0.0,
                quality: 0.0,
                n_quality: 0,
                n_included: 0,
                grads: want_grad.then(|| QaParams::zeros(cfg)),
            };
            for (j, (x, target)) in chunk.iter().enumerate() {
                let idx = ci * CHUNK + j;
                let mut sample_rng = seeds.as_ref().map(|s| Rng::seed_from_u64(s[idx]));
                let trace = forward_train(params, cfg, x, sample_rng.as_mut())?;
                let classes = trace.probs.len();
                let mut dlogits = vec![0.0; classes];
                match target {
                    Target::Labeled(y) => {
                        if y.len() != classes {
                            return Err(Error::Shape(format!("label has {} classes, model {classes}", y.len())));
                        }
                        for (c, g) in dlogits.iter_mut().enumerate() {
                            let yc = y.get(c) as u8 as f64;
                            acc.label += bce(yc, trace.probs[c], eps);
                            *g = scale_l * bce_grad_logit(yc, trace.probs[c], eps);
                        }
                    }
                    Target::Pseudo { label, mask } => {
                        if label.len() != classes || mask.len() != classes {
                            return Err(Error::Shape(format!("pseudo target does not have {classes} classes")));
                        }
                        for c in (0..classes).filter(|&c| mask.get(c)) {
                            let yc = label.get(c) as u8 as f64;
                            acc.unlabel += bce(yc, trace.probs[c], eps);
                            acc.n_included += 1;
                            dlogits[c] = scale_u * bce_grad_logit(yc, trace.probs[c], eps);
                        }
                    }
                }
                let best = x.best_answer();
                acc.quality += quality_term(&trace.weights, best);
                acc.n_quality += best.is_some() as usize;
                if let Some(g) = acc.grads.as_mut() {
                    let dweights: Vec<f64> = quality_term_grad(&trace.weights, best)
                        .into_iter()
                        .map(|v| v * scale_q)
                        .collect();
                    backward(params, cfg, x, &trace, &dlogits, &dweights, g);
                }
            }
            Ok(acc)
        })
        .collect();

    let mut out = LossBreakdown {
        n_labeled: n_l,
        n_unlabeled: n_u,
        ..Default::default()
    };
    let (mut label, mut unlabel, mut quality) = (0.0, 0.0, 0.0);
    let mut grads = grads;
    for p in partials {
        let p = p?;
        label += p.label;
        unlabel += p.unlabel;
        quality += p.quality;
        out.n_quality += p.n_quality;
        out.n_included += p.n_included;
        if let (Some(total), Some(g)) = (grads.as_deref_mut(), p.grads.as_ref()) {
            total.add_assign(g);
        }
    }
    out.label_term = if n_l > 0 { label / n_l as f64 } else { 0.0 };
    out.unlabel_term = if n_u > 0 { unlabel / n_u as f64 } else { 0.0 };
    out.quality_term = quality / n as f64;
    out.total = weights.lambda_label * out.label_term
        + weights.lambda_unlabel * out.unlabel_term
        + weights.lambda_quality * out.quality_term;
    if !out.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite batch loss {}", out.total)));
    }
    if let Some(g) = grads {
        if !g.all_finite() {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncodedAnswer, SentenceShape};
    use crate::qa_model::{forward, QaConfig};
    use crate::rng;
    use ndarray::{Array1, Array2};
    use rand_distr::{Distribution, StandardNormal};

    fn sample(cfg: &QaConfig, r: &mut Rng, best: Option<usize>) -> EncodedSample {
        let d = cfg.dim;
        let mut mat = |rows| Array2::from_shape_fn((rows, d), |_| StandardNormal.sample(&mut *r));
        let q_sent: Array2<f64> = mat(cfg.shape.max_q);
        let answers = (0..2)
            .map(|k| {
                let sent: Array2<f64> = mat(cfg.shape.max_a);
                EncodedAnswer {
                    doc: sent.row(0).to_owned(),
                    sent,
                    count: cfg.shape.max_a,
                    is_best: best == Some(k),
                }
            })
            .collect();
        EncodedSample {
            q_doc: Array1::from_shape_fn(d, |i| q_sent[[0, i]] + q_sent[[1, i]]),
            q_count: cfg.shape.max_q,
            q_sent,
            answers,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = QaConfig {
            filters: 2,
            dropout: 0.0,
            ..QaConfig::new(8, SentenceShape { max_q: 2, max_a: 2 }, 3)
        };
        let mut r = rng::stream(7, "gradcheck");
        let params = QaParams::init(&cfg, &mut r);
        let mut xs = [
            sample(&cfg, &mut r, Some(1)),
            sample(&cfg, &mut r, Some(0)),
            sample(&cfg, &mut r, None),
        ];
        // Flag the less-attended answer so the quality term is active.
        for x in xs.iter_mut().take(2) {
            let w = forward(&params, &cfg, x).unwrap().weights;
            let low = if w[0] < w[1] { 0 } else { 1 };
            for (k, a) in x.answers.iter_mut().enumerate() {
                a.is_best = k == low;
            }
        }
        let targets = [
            Target::Labeled(LabelVector::from_bits(&[1, 0, 1]).unwrap()),
            Target::Labeled(LabelVector::from_bits(&[0, 1, 0]).unwrap()),
            Target::Pseudo {
                label: LabelVector::from_bits(&[1, 0, 0]).unwrap(),
                mask: ClassMask::new(vec![true, false, true]),
            },
        ];
        let items: Vec<_> = xs.iter().zip(&targets).collect();
        for x in &xs {
            let km = forward(&params, &cfg, x).unwrap().kink_margin(cfg.activation);
            assert!(km > 1e-4, "{km}");
        }
        let w = LossWeights::default();
        let mut grads = QaParams::zeros(&cfg);
        let base = batch_objective(&params, &cfg, &items, &w, 1e-7, None, Some(&mut grads)).unwrap();
        assert!(base.quality_term > 0.0);
        let analytic = grads.flatten();
        let flat = params.flatten();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..flat.len() {
            let mut p = params.clone();
            let mut v = flat.clone();
            v[i] += h;
            p.load_flat(&v).unwrap();
            let up = batch_objective(&p, &cfg, &items, &w, 1e-7, None, None).unwrap().total;
            v[i] -= 2.0 * h;
            p.load_flat(&v).unwrap();
            let down = batch_objective(&p, &cfg, &items, &w, 1e-7, None, None).unwrap().total;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}
