//! Micro-averaged metrics, ROC/AUC, cross-validation and paired comparison.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_kfold, ClassSet, Dataset, LabelVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_class: Vec<ClassCounts>,
}

impl ConfusionCounts {
    pub fn pooled(&self) -> ClassCounts {
        self.per_class.iter().fold(ClassCounts::default(), |a, c| ClassCounts {
            tp: a.tp + c.tp,
            fp: a.fp + c.fp,
            fn_: a.fn_ + c.fn_,
            tn: a.tn + c.tn,
        })
    }
}

pub fn confusion(y_true: &[LabelVector], y_pred: &[LabelVector]) -> Result<ConfusionCounts> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} truths, {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let classes = y_true.first().map_or(0, |y| y.len());
    let mut per_class = vec![ClassCounts::default(); classes];
    for (t, p) in y_true.iter().zip(y_pred) {
        if t.len() != classes || p.len() != classes {
            return Err(Error::Shape(format!("label vectors must all have {classes} classes")));
        }
        for (c, counts) in per_class.iter_mut().enumerate() {
            match (t.get(c), p.get(c)) {
                (true, true) => counts.tp += 1,
                (false, true) => counts.fp += 1,
                (true, false) => counts.fn_ += 1,
                (false, false) => counts.tn += 1,
            }
        }
    }
    Ok(ConfusionCounts { per_class })
}

/// Precision, recall and F1. A ratio with a zero denominator is reported as
/// 0 and flagged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

pub fn prf(c: &ClassCounts) -> Prf {
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    let (f1, f1_undefined) = if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    };
    Prf {
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    }
}

/// Micro average: counts pooled over classes before the ratios.
pub fn micro_prf(counts: &ConfusionCounts) -> Prf {
    prf(&counts.pooled())
}

/// Area under the ROC curve of one binary scored set, by trapezoidal
/// integration with tied scores forming a single ROC step (equivalently the
/// probability that a random positive outscores a random negative, ties 1/2).
pub fn binary_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let roc = roc_curve(labels, scores)?;
    Ok(roc
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct score.
pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    if labels.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} labels, {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes present ({pos} positive, {neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

fn pooled(y_true: &[LabelVector], scores: &[Vec<f64>]) -> Result<(Vec<bool>, Vec<f64>)> {
    if y_true.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} truths, {} score rows",
            y_true.len(),
            scores.len()
        )));
    }
    let mut labels = Vec::new();
    let mut flat = Vec::new();
    for (t, s) in y_true.iter().zip(scores) {
        if t.len() != s.len() {
            return Err(Error::Shape("score row length differs from label length".into()));
        }
        labels.extend(t.values());
        flat.extend(s);
    }
    Ok((labels, flat))
}

/// AUC over all (sample, class) decisions pooled into one binary set.
pub fn micro_auc(y_true: &[LabelVector], scores: &[Vec<f64>]) -> Result<f64> {
    let (labels, flat) = pooled(y_true, scores)?;
    binary_auc(&labels, &flat)
}

pub fn micro_roc(y_true: &[LabelVector], scores: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let (labels, flat) = pooled(y_true, scores)?;
    roc_curve(&labels, &flat)
}

fn class_column(y_true: &[LabelVector], scores: &[Vec<f64>], c: usize) -> (Vec<bool>, Vec<f64>) {
    (
        y_true.iter().map(|y| y.get(c)).collect(),
        scores.iter().map(|s| s[c]).collect(),
    )
}

/// Hard labels `p >= threshold`.
pub fn threshold_labels(probs: &[Vec<f64>], threshold: f64) -> Vec<LabelVector> {
    probs
        .iter()
        .map(|p| LabelVector::new(p.iter().map(|&v| v >= threshold).collect()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the class is all-positive or all-negative in the truth.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub threshold: f64,
    pub micro: Prf,
    pub micro_auc: Option<f64>,
    pub counts: ConfusionCounts,
    pub per_class: Vec<ClassReport>,
}

pub fn evaluate(
    classes: &ClassSet,
    y_true: &[LabelVector],
    probs: &[Vec<f64>],
    threshold: f64,
) -> Result<MetricsReport> {
    if y_true.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let y_pred = threshold_labels(probs, threshold);
    let counts = confusion(y_true, &y_pred)?;
    if counts.per_class.len() != classes.len() {
        return Err(Error::Shape(format!(
            "labels have {} classes, class set has {}",
            counts.per_class.len(),
            classes.len()
        )));
    }
    let micro_auc = match micro_auc(y_true, probs) {
        Ok(a) => Some(a),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let per_class = classes
        .names()
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let (l, s) = class_column(y_true, probs, c);
            let k = prf(&counts.per_class[c]);
            ClassReport {
                class: name.clone(),
                support: counts.per_class[c].tp + counts.per_class[c].fn_,
                precision: k.precision,
                recall: k.recall,
                f1: k.f1,
                auc: binary_auc(&l, &s).ok(),
            }
        })
        .collect();
    Ok(MetricsReport {
        n_samples: y_true.len(),
        threshold,
        micro: micro_prf(&counts),
        micro_auc,
        counts,
        per_class,
    })
}

impl MetricsReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let auc = |a: Option<f64>| a.map_or("   n/a".to_string(), |v| format!("{v:6.4}"));
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>9} {:>9} {:>9} {:>9}",
            "class", "support", "precision", "recall", "f1", "auc"
        );
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<16} {:>7} {:>9.4} {:>9.4} {:>9.4} {:>9}",
                c.class,
                c.support,
                c.precision,
                c.recall,
                c.f1,
                auc(c.auc)
            );
        }
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>9.4} {:>9.4} {:>9.4} {:>9}",
            "micro",
            self.n_samples,
            self.micro.precision,
            self.micro.recall,
            self.micro.f1,
            auc(self.micro_auc)
        );
        s
    }
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// Something that can be trained on one fold and score its test part.
pub trait Pipeline: Sync {
    /// Class probabilities for every sample of `test`, in order.
    fn run_fold(&self, fold: usize, train: &Dataset, test: &Dataset) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for one fold.
    pub sd: f64,
}

pub fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanSd { mean: 0.0, sd: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanSd { mean, sd }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
    /// Over the folds where AUC is defined.
    pub auc: Option<MeanSd>,
    pub notes: Vec<String>,
}

impl CvReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>4} {:>7} {:>9} {:>9} {:>9} {:>9}",
            "fold", "n_test", "precision", "recall", "f1", "auc"
        );
        for f in &self.folds {
            let m = &f.metrics;
            let _ = writeln!(
                s,
                "{:>4} {:>7} {:>9.4} {:>9.4} {:>9.4} {:>9}",
                f.fold,
                f.n_test,
                m.micro.precision,
                m.micro.recall,
                m.micro.f1,
                m.micro_auc.map_or("n/a".into(), |a| format!("{a:.4}"))
            );
        }
        let ms = |m: MeanSd| format!("{:.4}±{:.4}", m.mean, m.sd);
        let _ = writeln!(
            s,
            "mean±sd precision {} recall {} f1 {} auc {}",
            ms(self.precision),
            ms(self.recall),
            ms(self.f1),
            self.auc.map_or("n/a".into(), ms)
        );
        s
    }
}

/// Runs `pipeline` on each of `folds` partitions of `dataset` (folds run
/// concurrently; the report is assembled in fold order).
pub fn cross_validate(
    pipeline: &dyn Pipeline,
    dataset: &Dataset,
    folds: usize,
    seed: u64,
    threshold: f64,
) -> Result<CvReport> {
    let splits = split_kfold(dataset, folds, seed)?;
    let results: Vec<Result<FoldResult>> = splits
        .par_iter()
        .enumerate()
        .map(|(fold, (train, test))| {
            let attribute = |e: Error| Error::Fold {
                fold,
                source: Box::new(e),
            };
            let probs = pipeline.run_fold(fold, train, test).map_err(attribute)?;
            let metrics = evaluate(dataset.classes(), &test.labels(), &probs, threshold).map_err(attribute)?;
            Ok(FoldResult {
                fold,
                n_train: train.len(),
                n_test: test.len(),
                metrics,
            })
        })
        .collect();
    let folds: Vec<FoldResult> = results.into_iter().collect::<Result<_>>()?;
    let col = |f: &dyn Fn(&FoldResult) -> f64| folds.iter().map(f).collect::<Vec<_>>();
    let aucs: Vec<f64> = folds.iter().filter_map(|f| f.metrics.micro_auc).collect();
    Ok(CvReport {
        precision: mean_sd(&col(&|f| f.metrics.micro.precision)),
        recall: mean_sd(&col(&|f| f.metrics.micro.recall)),
        f1: mean_sd(&col(&|f| f.metrics.micro.f1)),
        auc: (!aucs.is_empty()).then(|| mean_sd(&aucs)),
        folds,
        notes: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Paired comparison
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Number of non-zero paired differences.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub exact: bool,
}

const EXACT_LIMIT: usize = 30;

/// Wilcoxon signed-rank test on paired scores (zero differences dropped,
/// tied magnitudes get average ranks). Exact permutation distribution up to
/// 30 pairs, normal approximation with tie correction above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} paired values", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n,
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            exact: true,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    // Doubled ranks are integers even with ties.
    let mut rank2 = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let r2 = (i + 1 + j + 1) as u64; // 2 × average of ranks i+1..=j+1
        for &o in &order[i..=j] {
            rank2[o] = r2;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w_plus2: u64 = (0..n).filter(|&k| diffs[k] > 0.0).map(|k| rank2[k]).sum();
    let total2: u64 = rank2.iter().sum();
    let w_minus2 = total2 - w_plus2;
    let (w_plus, w_minus) = (w_plus2 as f64 / 2.0, w_minus2 as f64 / 2.0);
    if n <= EXACT_LIMIT {
        // Distribution of the doubled positive-rank sum under random signs.
        let mut dist = vec![0f64; total2 as usize + 1];
        dist[0] = 1.0;
        for &r in &rank2 {
            for s in (r as usize..dist.len()).rev() {
                dist[s] += dist[s - r as usize];
            }
        }
        let all: f64 = dist.iter().sum();
        let lo = w_plus2.min(w_minus2) as usize;
        let tail: f64 = dist[..=lo].iter().sum::<f64>() / all;
        return Ok(WilcoxonResult {
            n,
            w_plus,
            w_minus,
            p_value: (2.0 * tail).min(1.0),
            exact: true,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus.min(w_minus) - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        p_value: (2.0 * normal_sf(z)).min(1.0),
        exact: false,
    })
}

/// Upper tail of the standard normal (Abramowitz–Stegun 7.1.26 via erfc).
fn normal_sf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erfc = poly * (-x * x).exp();
    let erfc = if x >= 0.0 { erfc } else { 2.0 - erfc };
    erfc / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lv(bits: &[u8]) -> LabelVector {
        LabelVector::from_bits(bits).unwrap()
    }

    #[test]
    fn confusion_hand_count() {
        let c = confusion(&[lv(&[1, 0, 0])], &[lv(&[1, 1, 0])]).unwrap();
        assert_eq!(c.per_class[0].tp, 1);
        assert_eq!(c.per_class[1].fp, 1);
        assert_eq!(c.per_class[2].tn, 1);
        assert!(c.per_class.iter().all(|k| k.total() == 1));
        let same = confusion(&[lv(&[1, 0, 1]), lv(&[0, 1, 0])], &[lv(&[1, 0, 1]), lv(&[0, 1, 0])]).unwrap();
        assert!(same.per_class.iter().all(|k| k.fp == 0 && k.fn_ == 0));
        let none = confusion(&[lv(&[1, 0, 1])], &[lv(&[0, 0, 0])]).unwrap().pooled();
        assert_eq!((none.tp, none.fp), (0, 0));
        assert!(confusion(&[lv(&[1, 0, 0])], &[]).is_err());
    }

    #[test]
    fn micro_prf_cases() {
        let c = ClassCounts {
            tp: 3,
            fp: 1,
            fn_: 2,
            tn: 0,
        };
        let r = prf(&c);
        assert_abs_diff_eq!(r.precision, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(r.recall, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(r.f1, 2.0 * 0.45 / 1.35, epsilon = 1e-12);
        let zero = prf(&ClassCounts {
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 5,
        });
        assert_eq!((zero.precision, zero.recall, zero.f1), (0.0, 0.0, 0.0));
        assert!(zero.precision_undefined && zero.recall_undefined && zero.f1_undefined);
        let perfect = prf(&ClassCounts {
            tp: 4,
            fp: 0,
            fn_: 0,
            tn: 2,
        });
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn auc_cases() {
        let l = [true, false, true, false];
        assert_abs_diff_eq!(binary_auc(&l, &[0.9, 0.8, 0.7, 0.3]).unwrap(), 0.75, epsilon = 1e-12);
        assert_eq!(binary_auc(&l, &[0.9, 0.1, 0.8, 0.2]).unwrap(), 1.0);
        assert_eq!(binary_auc(&l, &[0.1, 0.9, 0.2, 0.8]).unwrap(), 0.0);
        assert_abs_diff_eq!(binary_auc(&l, &[0.5; 4]).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(
            binary_auc(&[true, true], &[0.1, 0.2]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn evaluate_report_is_consistent() {
        let classes = ClassSet::default();
        let y = vec![lv(&[1, 0, 0]), lv(&[0, 1, 1]), lv(&[1, 1, 0])];
        let p = vec![vec![0.9, 0.2, 0.1], vec![0.3, 0.7, 0.4], vec![0.6, 0.4, 0.2]];
        let r = evaluate(&classes, &y, &p, 0.5).unwrap();
        assert_eq!(r.per_class.len(), 3);
        let m = r.micro;
        assert_abs_diff_eq!(
            m.f1,
            2.0 * m.precision * m.recall / (m.precision + m.recall),
            epsilon = 1e-9
        );
        assert!(r.to_table().contains("micro"));
    }

    #[test]
    fn wilcoxon_exact_small() {
        // All eight differences positive with distinct ranks: p = 2 / 2^8.
        let a: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let b = vec![0.0; 8];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.w_plus, 36.0);
        assert_abs_diff_eq!(r.p_value, 2.0 / 256.0, epsilon = 1e-15);
        let same = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!(same.p_value, 1.0);
    }

    #[test]
    fn wilcoxon_symmetric() {
        let a = [0.8, 0.7, 0.9, 0.6, 0.75];
        let b = [0.7, 0.72, 0.85, 0.61, 0.7];
        let x = wilcoxon_signed_rank(&a, &b).unwrap();
        let y = wilcoxon_signed_rank(&b, &a).unwrap();
        assert_eq!(x.p_value, y.p_value);
        assert_eq!(x.w_plus, y.w_minus);
    }

    #[test]
    fn mean_sd_sample() {
        let m = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(m.mean, 2.5);
        assert_abs_diff_eq!(m.sd, (5.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    }
}
