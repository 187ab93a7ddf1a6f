//! Question-guided attention over answers.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Raw relevance `tanh(q · W_s · a + b_s)` for one answer.
pub fn relevance(q_doc: ArrayView1<f64>, a_doc: ArrayView1<f64>, w_s: &Array2<f64>, b_s: f64) -> f64 {
    (q_doc.dot(&w_s.dot(&a_doc)) + b_s).tanh()
}

/// Softmax over the slots where `mask` is true; masked slots get exactly 0.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(Error::Shape(format!(
            "{} scores, {} mask entries",
            scores.len(),
            mask.len()
        )));
    }
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidInput("attention needs at least one real answer".into()));
    }
    let exps: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Attention weights over answer slots; padded slots (`real_mask` false)
/// receive zero weight and no softmax mass.
pub fn attention_scores(
    q_doc: ArrayView1<f64>,
    a_docs: &[ArrayView1<f64>],
    real_mask: &[bool],
    w_s: &Array2<f64>,
    b_s: f64,
) -> Result<Vec<f64>> {
    if a_docs.len() != real_mask.len() {
        return Err(Error::Shape(format!(
            "{} answers, {} mask entries",
            a_docs.len(),
            real_mask.len()
        )));
    }
    let scores: Vec<f64> = a_docs
        .iter()
        .zip(real_mask)
        .map(|(a, &real)| if real { relevance(q_doc, *a, w_s, b_s) } else { 0.0 })
        .collect();
    masked_softmax(&scores, real_mask)
}

/// `Σ_k w_k · v_k`.
pub fn aggregate_answers(weights: &[f64], vectors: &[ArrayView1<f64>]) -> Result<Array1<f64>> {
    if weights.len() != vectors.len() {
        return Err(Error::Shape(format!(
            "{} weights, {} vectors",
            weights.len(),
            vectors.len()
        )));
    }
    let Some(first) = vectors.first() else {
        return Err(Error::InvalidInput("nothing to aggregate".into()));
    };
    let mut out = Array1::zeros(first.len());
    for (&w, v) in weights.iter().zip(vectors) {
        if v.len() != out.len() {
            return Err(Error::Shape("aggregated vectors differ in length".into()));
        }
        if w != 0.0 {
            out.scaled_add(w, v);
        }
    }
    Ok(out)
}
