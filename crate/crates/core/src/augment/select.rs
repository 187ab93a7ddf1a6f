use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CandidateScores, Dataset, DatasetKind, LabelVector, Origin, Provenance, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub id: String,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugCandidate {
    pub sample: Sample,
    /// L2-normalized question embedding.
    pub embedding: Vec<f64>,
    pub neighbors: Vec<Neighbor>,
    pub consistency: f64,
    pub diversity: f64,
    pub score: f64,
    pub kept: bool,
}

impl AugCandidate {
    pub fn claimed_label(&self) -> &LabelVector {
        self.sample.label().expect("candidates are labeled")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The `k` labeled samples most similar to `query` by dot product of
/// normalized embeddings. Ties resolve by ascending sample id.
pub fn nearest_neighbors(query: &[f64], pool: &[Vec<f64>], ids: &[&str], k: usize) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::config("augment.k", "must be at least 1"));
    }
    if pool.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} labeled samples, need at least k = {k}",
            pool.len()
        )));
    }
    let mut all: Vec<Neighbor> = pool
        .iter()
        .zip(ids)
        .enumerate()
        .map(|(index, (e, id))| Neighbor {
            index,
            id: id.to_string(),
            similarity: dot(query, e),
        })
        .collect();
    all.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    all.truncate(k);
    Ok(all)
}

/// Share of `neighbors` whose label equals `claimed` on every class.
pub fn consistency(claimed: &LabelVector, neighbors: &[Neighbor], labels: &[LabelVector]) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::InvalidInput("consistency needs at least one neighbor".into()));
    }
    let hits = neighbors.iter().filter(|n| &labels[n.index] == claimed).count();
    Ok(hits as f64 / neighbors.len() as f64)
}

/// One minus the mean similarity to `neighbors`.
pub fn diversity(neighbors: &[Neighbor]) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::InvalidInput("diversity needs at least one neighbor".into()));
    }
    Ok(1.0 - neighbors.iter().map(|n| n.similarity).sum::<f64>() / neighbors.len() as f64)
}

pub fn score(consistency: f64, diversity: f64, delta: f64) -> f64 {
    delta * consistency + (1.0 - delta) * diversity
}

fn check_weights(delta: f64, eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::config("augment.delta", format!("{delta} is outside [0, 1]")));
    }
    if !eta.is_finite() {
        return Err(Error::config("augment.eta", "must be finite"));
    }
    Ok(())
}

/// Scores generated samples against the labeled set. Embeddings on both
/// sides must already be L2-normalized and in sample order.
#[allow(clippy::too_many_arguments)]
pub fn score_candidates(
    generated: &Dataset,
    generated_emb: &[Vec<f64>],
    labeled: &Dataset,
    labeled_emb: &[Vec<f64>],
    k: usize,
    delta: f64,
    eta: f64,
) -> Result<Vec<AugCandidate>> {
    check_weights(delta, eta)?;
    if generated.len() != generated_emb.len() || labeled.len() != labeled_emb.len() {
        return Err(Error::Shape("embedding count does not match sample count".into()));
    }
    let labels: Vec<LabelVector> = labeled
        .iter()
        .map(|s| {
            s.label()
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("reference sample {} has no label", s.id)))
        })
        .collect::<Result<_>>()?;
    let ids: Vec<&str> = labeled.iter().map(|s| s.id.as_str()).collect();
    generated
        .samples()
        .par_iter()
        .zip(generated_emb)
        .map(|(s, e)| {
            let claimed = s
                .label()
                .ok_or_else(|| Error::InvalidInput(format!("generated sample {} has no label", s.id)))?;
            let neighbors = nearest_neighbors(e, labeled_emb, &ids, k)?;
            let c = consistency(claimed, &neighbors, &labels)?;
            let d = diversity(&neighbors)?;
            let sc = score(c, d, delta);
            Ok(AugCandidate {
                sample: s.clone(),
                embedding: e.clone(),
                neighbors,
                consistency: c,
                diversity: d,
                score: sc,
                kept: sc > eta,
            })
        })
        .collect()
}

/// Recomputes score and verdict under new weights.
pub fn rescore(candidates: &mut [AugCandidate], delta: f64, eta: f64) -> Result<()> {
    check_weights(delta, eta)?;
    for c in candidates {
        c.score = score(c.consistency, c.diversity, delta);
        c.kept = c.score > eta;
    }
    Ok(())
}

fn with_scores(c: &AugCandidate) -> Sample {
    let mut s = c.sample.clone();
    let prov = s
        .provenance
        .take()
        .unwrap_or_else(|| Provenance::origin(Origin::Augmented));
    s.provenance = Some(Provenance {
        scores: Some(CandidateScores {
            consistency: c.consistency,
            diversity: c.diversity,
            score: c.score,
            kept: c.kept,
        }),
        ..prov
    });
    s
}

/// All candidates with their scores attached, for archiving.
pub fn archive(candidates: &[AugCandidate], template: &Dataset) -> Result<Dataset> {
    Dataset::new(
        DatasetKind::Augmented,
        template.classes().clone(),
        candidates.iter().map(with_scores).collect(),
    )
}

/// The kept candidates, in candidate order.
pub fn select(candidates: &[AugCandidate], template: &Dataset) -> Result<Dataset> {
    Dataset::new(
        DatasetKind::SelectedAugmented,
        template.classes().clone(),
        candidates.iter().filter(|c| c.kept).map(with_scores).collect(),
    )
}

/// Number of candidates kept at each threshold for a fixed weighting.
pub fn selection_curve(candidates: &[AugCandidate], delta: f64, etas: &[f64]) -> Result<Vec<(f64, usize)>> {
    check_weights(delta, 0.0)?;
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| score(c.consistency, c.diversity, delta))
        .collect();
    etas.iter()
        .map(|&eta| {
            check_weights(delta, eta)?;
            Ok((eta, scores.iter().filter(|&&s| s > eta).count()))
        })
        .collect()
}
