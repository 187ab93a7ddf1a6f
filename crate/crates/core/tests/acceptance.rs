//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Oracles here are written independently of the library
//! code paths they check.

#![allow(clippy::needless_range_loop)]

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use supportneeds::augment::{rescore, score_candidates, selection_curve, AugCandidate};
use supportneeds::config::RunConfig;
use supportneeds::data::{ClassMask, ClassSet, Dataset, DatasetKind, LabelVector, Sample};
use supportneeds::encoder::{EncodedAnswer, EncodedSample, SentenceShape};
use supportneeds::eval::{evaluate, micro_auc};
use supportneeds::losses::{quality_loss, LossWeights};
use supportneeds::optim::ParamSet;
use supportneeds::pipeline::{smoke, SmokeReport};
use supportneeds::qa_model::attention::{attention_scores, masked_softmax};
use supportneeds::qa_model::interaction::{apply_interaction_kernels, build_interaction_matrix};
use supportneeds::qa_model::{batch_objective, forward, QaConfig, QaParams, Target};
use supportneeds::rng::{self, Rng};
use supportneeds::trainer::{predict_pseudo, pseudo_from_probs};

// Pinned tolerances.
const ORACLE_TOL: f64 = 1e-9;
const AUC_TOL: f64 = 1e-6;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_FD_STEP: f64 = 1e-5;
const GRAD_REL_FLOOR: f64 = 1e-6;
const GRAD_KINK_EXCLUSION: f64 = 1e-6;
const GRAD_POINTS: usize = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const SIMPLEX_TOL: f64 = 1e-6;
const SMOKE_BUDGET: Duration = Duration::from_secs(300);
const SMOKE_MIN_F1: f64 = 0.85;
const SMOKE_F1_SLACK: f64 = 0.02;

type Outcome = Result<String, String>;

fn gauss(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn classes3() -> ClassSet {
    ClassSet::default()
}

// ---------------------------------------------------------------------------
// 1. Oracles
// ---------------------------------------------------------------------------

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Selection of the k best by repeated linear scans; ties go to the smaller id.
fn oracle_neighbors(query: &[f64], pool: &[Vec<f64>], ids: &[String], k: usize) -> Vec<(usize, f64)> {
    let sims: Vec<f64> = pool.iter().map(|p| cosine(query, p)).collect();
    let mut taken = vec![false; pool.len()];
    let mut out = Vec::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for j in 0..pool.len() {
            if taken[j] {
                continue;
            }
            best = match best {
                None => Some(j),
                Some(b) => {
                    let better = sims[j] > sims[b] + 1e-12 || ((sims[j] - sims[b]).abs() <= 1e-12 && ids[j] < ids[b]);
                    Some(if better { j } else { b })
                }
            };
        }
        let b = best.expect("pool has at least k entries");
        taken[b] = true;
        out.push((b, sims[b]));
    }
    out
}

fn random_label(r: &mut Rng, patterns: &[LabelVector]) -> LabelVector {
    patterns[r.random_range(0..patterns.len())].clone()
}

fn check_augment_oracle(r: &mut Rng) -> Result<(), String> {
    let dim = r.random_range(1..=16);
    let k = r.random_range(1..=5);
    let n_lab = r.random_range(k.max(2)..=50);
    let n_gen = r.random_range(1..=50);
    let delta: f64 = r.random();
    let eta: f64 = r.random();
    let patterns: Vec<LabelVector> = [[1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1]]
        .iter()
        .map(|b| LabelVector::from_bits(b).unwrap())
        .collect();

    let mut raw_lab: Vec<Vec<f64>> = (0..n_lab).map(|_| (0..dim).map(|_| gauss(r)).collect()).collect();
    // exact duplicates create genuine similarity ties
    for _ in 0..r.random_range(0..=3) {
        let (a, b) = (r.random_range(0..n_lab), r.random_range(0..n_lab));
        raw_lab[b] = raw_lab[a].clone();
    }
    let raw_gen: Vec<Vec<f64>> = (0..n_gen).map(|_| (0..dim).map(|_| gauss(r)).collect()).collect();
    let mut perm: Vec<usize> = (0..n_lab).collect();
    perm.shuffle(r);
    let ids: Vec<String> = perm.iter().map(|p| format!("l-{p:03}")).collect();
    let lab_labels: Vec<LabelVector> = (0..n_lab).map(|_| random_label(r, &patterns)).collect();
    let gen_labels: Vec<LabelVector> = (0..n_gen).map(|_| random_label(r, &patterns)).collect();

    let labeled = Dataset::new(
        DatasetKind::Labeled,
        classes3(),
        (0..n_lab)
            .map(|i| Sample::labeled(ids[i].clone(), "q?", vec![], lab_labels[i].clone()))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let generated = Dataset::new(
        DatasetKind::Augmented,
        classes3(),
        (0..n_gen)
            .map(|i| Sample::labeled(format!("g-{i:03}"), "q?", vec![], gen_labels[i].clone()))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let normalize = |v: &Vec<f64>| supportneeds::encoder::l2_normalized(Array1::from(v.clone())).to_vec();
    let lab_emb: Vec<Vec<f64>> = raw_lab.iter().map(normalize).collect();
    let gen_emb: Vec<Vec<f64>> = raw_gen.iter().map(normalize).collect();

    let cands = score_candidates(&generated, &gen_emb, &labeled, &lab_emb, k, delta, eta).map_err(|e| e.to_string())?;
    for (i, c) in cands.iter().enumerate() {
        let nb = oracle_neighbors(&raw_gen[i], &raw_lab, &ids, k);
        let hits = nb.iter().filter(|(j, _)| lab_labels[*j] == gen_labels[i]).count();
        let cons = hits as f64 / k as f64;
        let div = 1.0 - nb.iter().map(|(_, s)| s).sum::<f64>() / k as f64;
        let score = delta * cons + (1.0 - delta) * div;
        ensure((c.consistency - cons).abs() <= ORACLE_TOL, || {
            format!("consistency {} vs oracle {cons}", c.consistency)
        })?;
        ensure((c.diversity - div).abs() <= ORACLE_TOL, || {
            format!("diversity {} vs oracle {div}", c.diversity)
        })?;
        ensure((c.score - score).abs() <= ORACLE_TOL, || {
            format!("score {} vs oracle {score}", c.score)
        })?;
        if (score - eta).abs() > ORACLE_TOL {
            ensure(c.kept == (score > eta), || {
                format!("kept flag wrong at score {score}, eta {eta}")
            })?;
        }
    }
    Ok(())
}

fn check_metric_oracle(r: &mut Rng) -> Result<(), String> {
    let n = r.random_range(1..=50);
    let nc = 3;
    let y: Vec<LabelVector> = (0..n)
        .map(|_| LabelVector::new((0..nc).map(|_| r.random_bool(0.4)).collect()))
        .collect();
    // scores on a coarse grid so ties occur
    let p: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..nc).map(|_| r.random_range(0..=20) as f64 / 20.0).collect())
        .collect();
    let report = evaluate(&classes3(), &y, &p, 0.5).map_err(|e| e.to_string())?;

    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for c in 0..nc {
            let pred = p[i][c] >= 0.5;
            match (y[i].get(c), pred) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                _ => {}
            }
        }
    }
    let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if prec + rec > 0.0 {
        2.0 * prec * rec / (prec + rec)
    } else {
        0.0
    };
    let m = &report.micro;
    ensure((m.precision - prec).abs() <= ORACLE_TOL, || {
        format!("precision {} vs {prec}", m.precision)
    })?;
    ensure((m.recall - rec).abs() <= ORACLE_TOL, || {
        format!("recall {} vs {rec}", m.recall)
    })?;
    ensure((m.f1 - f1).abs() <= ORACLE_TOL, || format!("f1 {} vs {f1}", m.f1))?;

    // pair counting over all pooled (sample, class) decisions
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..n {
        for c in 0..nc {
            if y[i].get(c) {
                pos.push(p[i][c]);
            } else {
                neg.push(p[i][c]);
            }
        }
    }
    let lib = micro_auc(&y, &p);
    if pos.is_empty() || neg.is_empty() {
        return ensure(lib.is_err() && report.micro_auc.is_none(), || {
            "AUC should be undefined".into()
        });
    }
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    let auc = wins / (pos.len() * neg.len()) as f64;
    let got = lib.map_err(|e| e.to_string())?;
    ensure((got - auc).abs() <= AUC_TOL, || {
        format!("micro AUC {got} vs pair count {auc}")
    })?;
    ensure(report.micro_auc == Some(got), || {
        "report AUC differs from micro_auc".into()
    })
}

fn criterion_oracles() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(1, "acceptance-oracles");
    for i in 0..100 {
        check_augment_oracle(&mut r).map_err(|e| format!("instance {i}: {e}"))?;
        check_metric_oracle(&mut r).map_err(|e| format!("instance {i}: {e}"))?;
    }
    let t = start.elapsed();
    ensure(t < ORACLE_BUDGET, || format!("took {t:?}"))?;
    Ok(format!(
        "100 instances, tol {ORACLE_TOL:e} / AUC {AUC_TOL:e}, {:.2}s",
        t.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 2. Gradient check
// ---------------------------------------------------------------------------

fn random_encoded(cfg: &QaConfig, answers: usize, r: &mut Rng) -> EncodedSample {
    let d = cfg.dim;
    let mut mat = |rows: usize| Array2::from_shape_fn((rows, d), |_| gauss(r));
    let q_sent = mat(cfg.shape.max_q);
    let answers = (0..answers)
        .map(|_| {
            let sent = mat(cfg.shape.max_a);
            EncodedAnswer {
                doc: sent.row(0).to_owned() + sent.row(1),
                sent,
                count: cfg.shape.max_a,
                is_best: false,
            }
        })
        .collect();
    EncodedSample {
        q_doc: q_sent.row(0).to_owned() - q_sent.row(1),
        q_count: cfg.shape.max_q,
        q_sent,
        answers,
    }
}

fn grad_point(cfg: &QaConfig, r: &mut Rng) -> Result<Option<f64>, String> {
    let params = QaParams::init(cfg, r);
    let mut xs: Vec<EncodedSample> = (0..3).map(|_| random_encoded(cfg, 2, r)).collect();
    // flag the less-attended answer on two samples so the quality term is live
    for x in xs.iter_mut().take(2) {
        let w = forward(&params, cfg, x).map_err(|e| e.to_string())?.weights;
        let low = usize::from(w[1] < w[0]);
        x.answers[low].is_best = true;
    }
    for x in &xs {
        let margin = forward(&params, cfg, x)
            .map_err(|e| e.to_string())?
            .kink_margin(cfg.activation);
        if margin < GRAD_KINK_EXCLUSION {
            return Ok(None);
        }
    }
    let bits = |b: &[u8]| LabelVector::from_bits(b).unwrap();
    let targets = [
        Target::Labeled(bits(&[1, 0, 1])),
        Target::Labeled(bits(&[0, 1, 0])),
        Target::Pseudo {
            label: bits(&[1, 0, 0]),
            mask: ClassMask::new(vec![true, false, true]),
        },
    ];
    let items: Vec<_> = xs.iter().zip(&targets).collect();
    let w = LossWeights::default();
    let eps = 1e-7;
    let mut grads = QaParams::zeros(cfg);
    batch_objective(&params, cfg, &items, &w, eps, None, Some(&mut grads)).map_err(|e| e.to_string())?;
    let analytic = grads.flatten();
    let flat = params.flatten();
    let total = |v: &[f64]| -> Result<f64, String> {
        let mut p = params.clone();
        p.load_flat(v).map_err(|e| e.to_string())?;
        Ok(batch_objective(&p, cfg, &items, &w, eps, None, None)
            .map_err(|e| e.to_string())?
            .total)
    };
    let mut worst: f64 = 0.0;
    let mut v = flat.clone();
    for i in 0..flat.len() {
        // fourth-order central stencil
        let mut at = |off: f64| -> Result<f64, String> {
            v[i] = flat[i] + off;
            total(&v)
        };
        let (p1, m1) = (at(GRAD_FD_STEP)?, at(-GRAD_FD_STEP)?);
        let (p2, m2) = (at(2.0 * GRAD_FD_STEP)?, at(-2.0 * GRAD_FD_STEP)?);
        v[i] = flat[i];
        let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * GRAD_FD_STEP);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(GRAD_REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(Some(worst))
}

fn criterion_gradient() -> Outcome {
    let start = Instant::now();
    let cfg = QaConfig {
        filters: 2,
        dropout: 0.0,
        ..QaConfig::new(8, SentenceShape { max_q: 2, max_a: 2 }, 3)
    };
    let mut r = rng::stream(2, "acceptance-gradient");
    let (mut accepted, mut excluded) = (0, 0);
    let mut worst: f64 = 0.0;
    while accepted < GRAD_POINTS {
        match grad_point(&cfg, &mut r)? {
            Some(w) => {
                accepted += 1;
                worst = worst.max(w);
            }
            None => excluded += 1,
        }
        ensure(excluded < 1000, || "too many points near a kink".into())?;
    }
    let t = start.elapsed();
    ensure(worst < GRAD_REL_TOL, || format!("worst relative error {worst:e}"))?;
    ensure(t < GRAD_BUDGET, || format!("took {t:?}"))?;
    Ok(format!(
        "{GRAD_POINTS} points ({excluded} excluded near kinks), worst rel err {worst:.2e} < {GRAD_REL_TOL:e}, {:.2}s",
        t.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 3. Attention simplex
// ---------------------------------------------------------------------------

fn criterion_attention() -> Outcome {
    let mut r = rng::stream(3, "acceptance-attention");
    for trial in 0..1000 {
        let d = r.random_range(1..=16);
        let slots = r.random_range(1..=8);
        let mut mask: Vec<bool> = (0..slots).map(|_| r.random_bool(0.7)).collect();
        let keep = r.random_range(0..slots);
        mask[keep] = true;
        let scale = [0.1, 1.0, 10.0, 100.0][r.random_range(0..4)];
        let w_s = Array2::from_shape_fn((d, d), |_| scale * gauss(&mut r));
        let b_s = gauss(&mut r);
        let q = Array1::from_shape_fn(d, |_| gauss(&mut r));
        let docs: Vec<Array1<f64>> = (0..slots)
            .map(|_| Array1::from_shape_fn(d, |_| gauss(&mut r)))
            .collect();
        let views: Vec<_> = docs.iter().map(|a| a.view()).collect();
        let w = attention_scores(q.view(), &views, &mask, &w_s, b_s).map_err(|e| format!("trial {trial}: {e}"))?;
        let sum: f64 = w.iter().sum();
        ensure((sum - 1.0).abs() <= SIMPLEX_TOL, || {
            format!("trial {trial}: weights sum to {sum}")
        })?;
        for (k, (&wk, &real)) in w.iter().zip(&mask).enumerate() {
            if real {
                ensure(wk >= 0.0 && wk.is_finite(), || {
                    format!("trial {trial}: weight {k} = {wk}")
                })?;
            } else {
                ensure(wk == 0.0, || format!("trial {trial}: padded slot {k} got {wk}"))?;
            }
        }
    }
    Ok(format!(
        "1000 inputs, |sum - 1| <= {SIMPLEX_TOL:e}, padded slots exactly 0"
    ))
}

// ---------------------------------------------------------------------------
// 4. Quality loss
// ---------------------------------------------------------------------------

fn criterion_quality() -> Outcome {
    let mut r = rng::stream(4, "acceptance-quality");
    let (mut zeros, mut positives) = (0, 0);
    for trial in 0..1000 {
        let n = r.random_range(1..=6);
        let mut weights = Vec::new();
        let mut best = Vec::new();
        for _ in 0..n {
            let k = r.random_range(1..=5);
            // integer scores make exact ties common
            let scores: Vec<f64> = (0..k).map(|_| r.random_range(0..3) as f64).collect();
            let w = masked_softmax(&scores, &vec![true; k]).map_err(|e| e.to_string())?;
            best.push(if r.random_bool(0.8) {
                Some(r.random_range(0..k))
            } else {
                None
            });
            weights.push(w);
        }
        let expect_zero = weights.iter().zip(&best).all(|(w, b)| match b {
            Some(b) => w.iter().all(|&x| x <= w[*b]),
            None => true,
        });
        let loss = quality_loss(&weights, &best).map_err(|e| e.to_string())?;
        if expect_zero {
            zeros += 1;
            ensure(loss == 0.0, || format!("trial {trial}: expected 0, got {loss}"))?;
        } else {
            positives += 1;
            ensure(loss > 0.0, || format!("trial {trial}: expected > 0, got {loss}"))?;
        }
    }
    Ok(format!("1000 configs ({zeros} zero, {positives} positive)"))
}

// ---------------------------------------------------------------------------
// 5. Pseudo filter
// ---------------------------------------------------------------------------

fn unlabeled_set(n: usize) -> Dataset {
    let samples = (0..n)
        .map(|i| {
            Sample::unlabeled(
                format!("u-{i:04}"),
                format!("Question number {i}?"),
                vec![supportneeds::data::AnswerRecord {
                    text: "Some answer.".into(),
                    is_best: false,
                }],
            )
        })
        .collect();
    Dataset::new(DatasetKind::Unlabeled, classes3(), samples).unwrap()
}

/// Per class: confident iff the clamped probability is at least `tau` or at
/// most `1 - tau`; positive iff at least `tau`.
fn oracle_pseudo(probs: &[Vec<f64>], tau: f64, eps: f64) -> Vec<(usize, Vec<bool>, Vec<bool>)> {
    let mut out = Vec::new();
    for (i, row) in probs.iter().enumerate() {
        let mut label = Vec::new();
        let mut mask = Vec::new();
        for &p in row {
            let p = p.clamp(eps, 1.0 - eps);
            label.push(p >= tau);
            mask.push(p >= tau || 1.0 - p >= tau);
        }
        if mask.iter().any(|&m| m) {
            out.push((i, label, mask));
        }
    }
    out
}

fn compare_pseudo(
    outcome: &supportneeds::trainer::PseudoOutcome,
    probs: &[Vec<f64>],
    tau: f64,
    eps: f64,
) -> Result<(), String> {
    let expected = oracle_pseudo(probs, tau, eps);
    ensure(outcome.dataset.len() == expected.len(), || {
        format!(
            "tau {tau}: {} admitted, oracle {}",
            outcome.dataset.len(),
            expected.len()
        )
    })?;
    for ((s, &src), (i, label, mask)) in outcome.dataset.iter().zip(&outcome.source_index).zip(&expected) {
        ensure(src == *i, || format!("tau {tau}: admitted index {src}, oracle {i}"))?;
        ensure(s.label().map(|l| l.values()) == Some(label.as_slice()), || {
            format!("tau {tau}: label of {i}")
        })?;
        ensure(s.mask().as_ref().map(|m| m.values()) == Some(mask.as_slice()), || {
            format!("tau {tau}: mask of {i}")
        })?;
    }
    Ok(())
}

fn criterion_pseudo() -> Outcome {
    let mut r = rng::stream(5, "acceptance-pseudo");
    let eps = 1e-7;
    let n = 200;
    let d_u = unlabeled_set(n);
    for trial in 0..50 {
        let tau = [0.5 + 1e-9, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0][trial % 7];
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..3)
                    .map(|_| match r.random_range(0..10) {
                        0 => 0.0,
                        1 => 1.0,
                        2 => tau,
                        3 => 1.0 - tau,
                        _ => r.random(),
                    })
                    .collect()
            })
            .collect();
        let out = pseudo_from_probs(&d_u, probs.clone(), tau, eps).map_err(|e| e.to_string())?;
        compare_pseudo(&out, &probs, tau, eps).map_err(|e| format!("trial {trial}: {e}"))?;
    }

    // the same check through a model's own predictions
    let cfg = QaConfig::new(6, SentenceShape { max_q: 2, max_a: 2 }, 3);
    let params = QaParams::init(&cfg, &mut r);
    let enc: Vec<EncodedSample> = (0..n).map(|_| random_encoded(&cfg, 1, &mut r)).collect();
    for tau in [0.55, 0.7, 0.9] {
        let out = predict_pseudo(&params, &cfg, &d_u, &enc, tau, eps).map_err(|e| e.to_string())?;
        compare_pseudo(&out, &out.probs, tau, eps)?;
    }

    let interior: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..3).map(|_| r.random_range(0.001..0.999)).collect())
        .collect();
    let strict = pseudo_from_probs(&d_u, interior.clone(), 1.0, eps).map_err(|e| e.to_string())?;
    ensure(strict.dataset.is_empty(), || {
        format!("tau = 1 admitted {}", strict.dataset.len())
    })?;
    let saturated: Vec<Vec<f64>> = (0..n).map(|i| vec![(i % 2) as f64, 1.0, 0.0]).collect();
    let strict = pseudo_from_probs(&d_u, saturated, 1.0, eps).map_err(|e| e.to_string())?;
    ensure(strict.dataset.is_empty(), || {
        format!("tau = 1 admitted {} saturated rows", strict.dataset.len())
    })?;

    let loose = pseudo_from_probs(&d_u, interior, 0.5 + 1e-9, eps).map_err(|e| e.to_string())?;
    ensure(
        loose.dataset.len() == n && loose.all_confident.iter().all(|&b| b),
        || "tau just above 0.5 left some class unconfident".into(),
    )?;
    Ok("brute force agrees on 50 matrices + model outputs; tau=1 admits none; tau=0.5+1e-9 admits all".into())
}

// ---------------------------------------------------------------------------
// 6. Selection monotonicity
// ---------------------------------------------------------------------------

fn candidate_pool(r: &mut Rng) -> Result<Vec<AugCandidate>, String> {
    let dim = 16;
    let patterns: Vec<LabelVector> = [[1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1], [1, 0, 1]]
        .iter()
        .map(|b| LabelVector::from_bits(b).unwrap())
        .collect();
    let unit = |r: &mut Rng| supportneeds::encoder::l2_normalized(Array1::from_shape_fn(dim, |_| gauss(r))).to_vec();
    let lab_emb: Vec<Vec<f64>> = (0..120).map(|_| unit(r)).collect();
    let gen_emb: Vec<Vec<f64>> = (0..500).map(|_| unit(r)).collect();
    let labeled = Dataset::new(
        DatasetKind::Labeled,
        classes3(),
        (0..120)
            .map(|i| Sample::labeled(format!("l-{i:03}"), "q?", vec![], random_label(r, &patterns)))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let generated = Dataset::new(
        DatasetKind::Augmented,
        classes3(),
        (0..500)
            .map(|i| Sample::labeled(format!("g-{i:03}"), "q?", vec![], random_label(r, &patterns)))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    score_candidates(&generated, &gen_emb, &labeled, &lab_emb, 5, 0.4, 0.2).map_err(|e| e.to_string())
}

fn order_by(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

fn criterion_selection() -> Outcome {
    let mut r = rng::stream(6, "acceptance-selection");
    let mut cands = candidate_pool(&mut r)?;
    let etas: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    for delta in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let curve = selection_curve(&cands, delta, &etas).map_err(|e| e.to_string())?;
        for w in curve.windows(2) {
            ensure(w[1].1 <= w[0].1, || {
                format!(
                    "delta {delta}: kept rises from {} to {} at eta {}",
                    w[0].1, w[1].1, w[1].0
                )
            })?;
        }
        // and through the per-candidate verdicts
        let mut prev = usize::MAX;
        for &eta in &etas {
            rescore(&mut cands, delta, eta).map_err(|e| e.to_string())?;
            let kept = cands.iter().filter(|c| c.kept).count();
            ensure(kept <= prev, || format!("delta {delta}: kept rises at eta {eta}"))?;
            prev = kept;
        }
    }

    let cons: Vec<f64> = cands.iter().map(|c| c.consistency).collect();
    let div: Vec<f64> = cands.iter().map(|c| c.diversity).collect();
    rescore(&mut cands, 1.0, 0.5).map_err(|e| e.to_string())?;
    let by_score: Vec<f64> = cands.iter().map(|c| c.score).collect();
    ensure(order_by(&by_score) == order_by(&cons), || {
        "delta = 1 order differs from consistency order".into()
    })?;
    rescore(&mut cands, 0.0, 0.5).map_err(|e| e.to_string())?;
    let by_score: Vec<f64> = cands.iter().map(|c| c.score).collect();
    ensure(order_by(&by_score) == order_by(&div), || {
        "delta = 0 order differs from diversity order".into()
    })?;
    Ok("500 candidates, eta 0..1 step 0.01 for 6 deltas; delta=1/0 orders match".into())
}

// ---------------------------------------------------------------------------
// 7. Shape invariance
// ---------------------------------------------------------------------------

fn criterion_shape() -> Outcome {
    let cfg = QaConfig::new(12, SentenceShape::default(), 3);
    let expected = cfg.kernels.len() * cfg.filters * cfg.pool * cfg.pool;
    ensure(expected == 512, || format!("|kernels|·F·P² = {expected}"))?;
    ensure(cfg.interaction_len() == expected, || "interaction_len disagrees".into())?;
    let mut r = rng::stream(7, "acceptance-shape");
    let params = QaParams::init(&cfg, &mut r);
    let (m, n) = (cfg.shape.max_q, cfg.shape.max_a);
    let mut combos = 0;
    for q in 1..=m {
        for a in 1..=n {
            let mut x = random_encoded(&cfg, 2, &mut r);
            x.q_count = q;
            x.q_sent.slice_mut(ndarray::s![q.., ..]).fill(0.0);
            for ans in &mut x.answers {
                ans.count = a;
                ans.sent.slice_mut(ndarray::s![a.., ..]).fill(0.0);
            }
            let trace = forward(&params, &cfg, &x).map_err(|e| format!("({q},{a}): {e}"))?;
            for (k, (feat, ans)) in trace.interaction.iter().zip(&x.answers).enumerate() {
                ensure(feat.len() == expected, || {
                    format!("({q},{a}) answer {k}: length {}", feat.len())
                })?;
                let grid = build_interaction_matrix(x.q_sent.view(), ans.sent.view()).map_err(|e| e.to_string())?;
                let direct = apply_interaction_kernels(&grid, &params.kernels, cfg.pool, cfg.activation)
                    .map_err(|e| e.to_string())?;
                let diff = (&direct - feat).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                ensure(diff <= ORACLE_TOL, || {
                    format!("({q},{a}): direct and factorized forms differ by {diff}")
                })?;
            }
            combos += 1;
        }
    }
    Ok(format!("{combos} sentence-count combos, feature length {expected}"))
}

// ---------------------------------------------------------------------------
// 8. Smoke and 9. determinism
// ---------------------------------------------------------------------------

fn run_smoke() -> Result<(SmokeReport, Duration), String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let cfg = RunConfig::smoke();
    let start = Instant::now();
    let report = pool.install(|| smoke(&cfg)).map_err(|e| e.to_string())?;
    Ok((report, start.elapsed()))
}

fn minority_class(report: &SmokeReport) -> usize {
    (0..report.full.per_class.len())
        .min_by_key(|&c| report.full.per_class[c].support)
        .expect("at least one class")
}

fn criterion_smoke(first: &Result<(SmokeReport, Duration), String>) -> Outcome {
    let (rep, t) = first.as_ref().map_err(Clone::clone)?;
    let c = minority_class(rep);
    let share = rep.full.per_class[c].support as f64 / rep.n_test as f64;
    let (sup, ssl, full) = (rep.supervised.micro.f1, rep.semi_supervised.micro.f1, rep.full.micro.f1);
    let rec_with = rep.full.per_class[c].recall;
    let rec_without = rep.semi_supervised.per_class[c].recall;
    ensure(*t < SMOKE_BUDGET, || format!("took {t:?}"))?;
    ensure(full >= SMOKE_MIN_F1, || {
        format!("question-model micro-F1 {full:.4} < {SMOKE_MIN_F1}")
    })?;
    ensure(full >= sup - SMOKE_F1_SLACK, || {
        format!("full micro-F1 {full:.4} < supervised {sup:.4} - {SMOKE_F1_SLACK}")
    })?;
    ensure(rec_with >= rec_without, || {
        format!("minority recall with augmentation {rec_with:.4} < without {rec_without:.4}")
    })?;
    Ok(format!(
        "{:.1}s on 1 thread; micro-F1 full {full:.4} / semi {ssl:.4} / supervised {sup:.4}; \
         minority ({:.0}% of test) recall {rec_with:.3} with vs {rec_without:.3} without augmentation",
        t.as_secs_f64(),
        share * 100.0
    ))
}

fn criterion_determinism(first: &Result<(SmokeReport, Duration), String>) -> Outcome {
    let (a, _) = first.as_ref().map_err(Clone::clone)?;
    let (b, _) = run_smoke()?;
    let ja = serde_json::to_vec_pretty(a).map_err(|e| e.to_string())?;
    let jb = serde_json::to_vec_pretty(&b).map_err(|e| e.to_string())?;
    ensure(ja == jb, || "metric reports differ between runs".into())?;
    Ok(format!("two runs, {} identical report bytes", ja.len()))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS {n} {name}: {detail}"),
        Err(why) => {
            failed += 1;
            println!("FAIL {n} {name}: {why}");
        }
    };
    report(1, "oracles", criterion_oracles());
    report(2, "gradient-check", criterion_gradient());
    report(3, "attention-simplex", criterion_attention());
    report(4, "quality-loss", criterion_quality());
    report(5, "pseudo-filter", criterion_pseudo());
    report(6, "selection-monotonicity", criterion_selection());
    report(7, "shape-invariance", criterion_shape());
    let first = run_smoke();
    report(8, "end-to-end-smoke", criterion_smoke(&first));
    report(9, "determinism", criterion_determinism(&first));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
