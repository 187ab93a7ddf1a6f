//! Document- and sentence-level text encoders behind one port.
//!
//! Two backends exist: [`HashingEncoder`], a pure feature-hash encoder used
//! for tests and offline runs, and [`RemoteEncoder`], which calls an
//! embeddings endpoint serving a pretrained transformer.

mod hashing;
mod remote;

pub use hashing::HashingEncoder;
pub use remote::RemoteEncoder;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::text;

pub trait Encoder: Send + Sync {
    /// Output dimension `d`.
    fn dim(&self) -> usize;

    /// Stable identifier recorded in checkpoint manifests.
    fn identity(&self) -> String;

    /// Encodes each text to a `dim()`-vector.
    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;

    fn encode_document(&self, text: &str) -> Result<Array1<f64>> {
        let mut v = self.encode_batch(&[text])?;
        Ok(Array1::from(v.pop().expect("one output per input")))
    }
}

/// Sentence counts used for padding and truncation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SentenceShape {
    /// Question sentences `m`.
    pub max_q: usize,
    /// Answer sentences `n`.
    pub max_a: usize,
}

impl Default for SentenceShape {
    fn default() -> Self {
        Self { max_q: 8, max_a: 6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedAnswer {
    pub doc: Array1<f64>,
    /// `n × d`, zero rows beyond `count`.
    pub sent: Array2<f64>,
    pub count: usize,
    pub is_best: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub q_doc: Array1<f64>,
    /// `m × d`, zero rows beyond `q_count`.
    pub q_sent: Array2<f64>,
    pub q_count: usize,
    pub answers: Vec<EncodedAnswer>,
}

impl EncodedSample {
    pub fn best_answer(&self) -> Option<usize> {
        self.answers.iter().position(|a| a.is_best)
    }
}

/// Sentences of `text` that survive token normalization.
fn usable_sentences(text: &str) -> Vec<String> {
    text::split_sentences(text)
        .into_iter()
        .filter(|s| !text::tokenize(s).is_empty())
        .collect()
}

fn pad_rows(rows: Vec<Vec<f64>>, max: usize, dim: usize) -> Result<(Array2<f64>, usize)> {
    let count = rows.len().min(max);
    let mut m = Array2::zeros((max, dim));
    for (i, r) in rows.into_iter().take(max).enumerate() {
        if r.len() != dim {
            return Err(Error::Encoder(format!(
                "backend returned {} dims, expected {dim}",
                r.len()
            )));
        }
        m.row_mut(i).assign(&Array1::from(r));
    }
    Ok((m, count))
}

/// Encodes up to `max_sentences` sentences; rows past the returned count
/// are exactly zero.
pub fn encode_sentences(enc: &dyn Encoder, text: &str, max_sentences: usize) -> Result<(Array2<f64>, usize)> {
    if max_sentences == 0 {
        return Err(Error::InvalidInput("max_sentences must be at least 1".into()));
    }
    let sentences = usable_sentences(text);
    if sentences.is_empty() {
        return Err(Error::Encoder("text is empty after normalization".into()));
    }
    let refs: Vec<&str> = sentences.iter().take(max_sentences).map(String::as_str).collect();
    pad_rows(enc.encode_batch(&refs)?, max_sentences, enc.dim())
}

/// Encodes a question and its answers in one backend call.
pub fn encode_sample(enc: &dyn Encoder, sample: &Sample, shape: SentenceShape) -> Result<EncodedSample> {
    let q_sents = usable_sentences(&sample.question);
    if q_sents.is_empty() {
        return Err(Error::Encoder(format!(
            "question {} is empty after normalization",
            sample.id
        )));
    }
    let a_sents: Vec<Vec<String>> = sample.answers.iter().map(|a| usable_sentences(&a.text)).collect();
    if let Some(k) = a_sents.iter().position(Vec::is_empty) {
        return Err(Error::Encoder(format!(
            "answer {k} of {} is empty after normalization",
            sample.id
        )));
    }

    let mut texts: Vec<&str> = vec![sample.question.as_str()];
    texts.extend(q_sents.iter().take(shape.max_q).map(String::as_str));
    for (a, sents) in sample.answers.iter().zip(&a_sents) {
        texts.push(a.text.as_str());
        texts.extend(sents.iter().take(shape.max_a).map(String::as_str));
    }
    let mut vecs = enc.encode_batch(&texts)?.into_iter();
    let dim = enc.dim();
    let mut take = |n: usize| -> Vec<Vec<f64>> { vecs.by_ref().take(n).collect() };

    let q_doc = Array1::from(
        take(1)
            .pop()
            .ok_or_else(|| Error::Encoder("short backend output".into()))?,
    );
    let (q_sent, q_count) = pad_rows(take(q_sents.len().min(shape.max_q)), shape.max_q, dim)?;
    let mut answers = Vec::with_capacity(sample.answers.len());
    for (a, sents) in sample.answers.iter().zip(&a_sents) {
        let doc = Array1::from(
            take(1)
                .pop()
                .ok_or_else(|| Error::Encoder("short backend output".into()))?,
        );
        let (sent, count) = pad_rows(take(sents.len().min(shape.max_a)), shape.max_a, dim)?;
        answers.push(EncodedAnswer {
            doc,
            sent,
            count,
            is_best: a.is_best,
        });
    }
    if q_doc.len() != dim || answers.iter().any(|a| a.doc.len() != dim) {
        return Err(Error::Encoder(format!(
            "backend returned wrong dimension, expected {dim}"
        )));
    }
    Ok(EncodedSample {
        q_doc,
        q_sent,
        q_count,
        answers,
    })
}

/// Encodes every sample, in parallel, preserving order.
pub fn encode_dataset(enc: &dyn Encoder, ds: &Dataset, shape: SentenceShape) -> Result<Vec<EncodedSample>> {
    ds.samples().par_iter().map(|s| encode_sample(enc, s, shape)).collect()
}

/// L2-normalized document vectors for question texts.
pub fn question_embeddings(enc: &dyn Encoder, ds: &Dataset) -> Result<Vec<Array1<f64>>> {
    ds.samples()
        .par_iter()
        .map(|s| enc.encode_document(&s.question).map(l2_normalized))
        .collect()
}

pub fn l2_normalized(v: Array1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AnswerRecord, LabelVector};

    fn enc() -> HashingEncoder {
        HashingEncoder::new(16)
    }

    #[test]
    fn pads_with_exact_zeros() {
        let (m, count) = encode_sentences(&enc(), "One here. Two here.", 4).unwrap();
        assert_eq!(count, 2);
        assert_eq!(m.dim(), (4, 16));
        assert!(m.row(2).iter().chain(m.row(3).iter()).all(|&x| x == 0.0));
        assert!(m.row(1).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn truncates_long_text() {
        let text = "a one. b two. c three. d four. e five. f six.";
        let (m, count) = encode_sentences(&enc(), text, 4).unwrap();
        assert_eq!((m.nrows(), count), (4, 4));
        let (single, c1) = encode_sentences(&enc(), text, 1).unwrap();
        assert_eq!((single.nrows(), c1), (1, 1));
        assert_eq!(single.row(0), m.row(0));
    }

    #[test]
    fn empty_after_normalization_is_error() {
        assert!(encode_sentences(&enc(), "?! ...", 3).is_err());
        assert!(enc().encode_document("  !!").is_err());
    }

    #[test]
    fn sample_shapes_are_fixed() {
        let s = Sample::labeled(
            "x",
            "Short question?",
            vec![
                AnswerRecord {
                    text: "Answer one. With two sentences.".into(),
                    is_best: false,
                },
                AnswerRecord {
                    text: "Best".into(),
                    is_best: true,
                },
            ],
            LabelVector::zeros(3),
        );
        let shape = SentenceShape { max_q: 3, max_a: 2 };
        let e = encode_sample(&enc(), &s, shape).unwrap();
        assert_eq!(e.q_sent.dim(), (3, 16));
        assert_eq!(e.q_count, 1);
        assert_eq!(e.answers.len(), 2);
        assert_eq!(e.answers[0].count, 2);
        assert_eq!(e.answers[1].sent.dim(), (2, 16));
        assert_eq!(e.best_answer(), Some(1));
        assert_eq!(e.q_doc, enc().encode_document("Short question?").unwrap());
    }
}
