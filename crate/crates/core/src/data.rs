//! Samples, label vectors, dataset partitions and the line-delimited record
//! format.
//!
//! A dataset file holds one JSON object per line:
//!
//! ```text
//! {"id":"q1","question":"...","answers":[{"text":"...","is_best":true}],"labels":[1,1,0]}
//! ```
//!
//! Label order follows the configured [`ClassSet`], which defaults to
//! `[informational, emotional, network]`. Files written by this crate start
//! with a header object carrying `format`, `version`, `kind` and `classes`;
//! the header is optional on input.

use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const FORMAT_NAME: &str = "supportneeds-dataset";
pub const FORMAT_VERSION: u32 = 1;

/// Ordered class names. Index `c` of every [`LabelVector`] refers to
/// `names()[c]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidInput("class set is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() || names[..i].contains(n) {
                return Err(Error::InvalidInput(format!("bad class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl Default for ClassSet {
    fn default() -> Self {
        Self {
            names: vec!["informational".into(), "emotional".into(), "network".into()],
        }
    }
}

/// Multi-hot label over a [`ClassSet`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelVector(Vec<bool>);

impl LabelVector {
    pub fn new(values: Vec<bool>) -> Self {
        Self(values)
    }

    /// Builds from 0/1 integers; anything else is rejected.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::InvalidInput(format!("label entry {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, c: usize) -> bool {
        self.0[c]
    }

    pub fn set(&mut self, c: usize, v: bool) {
        self.0[c] = v;
    }

    pub fn values(&self) -> &[bool] {
        &self.0
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| b as u8).collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn count_positive(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for LabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", *b as u8)?;
        }
        write!(f, "]")
    }
}

/// Per-class confidence mask of a pseudo-labeled sample.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClassMask(Vec<bool>);

impl ClassMask {
    pub fn new(values: Vec<bool>) -> Self {
        Self(values)
    }

    pub fn full(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn get(&self, c: usize) -> bool {
        self.0[c]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&b| b)
    }

    pub fn values(&self) -> &[bool] {
        &self.0
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| b as u8).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRecord {
    pub text: String,
    pub is_best: bool,
}

/// What is known about a sample's classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Annotation {
    Unlabeled,
    /// A gold label, or the claimed label of a generated sample.
    Labeled(LabelVector),
    /// Model-assigned label; only classes set in `mask` are trusted.
    Pseudo {
        label: LabelVector,
        mask: ClassMask,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Labeled,
    Unlabeled,
    Pseudo,
    Augmented,
}

/// Selection statistics of a generated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateScores {
    pub consistency: f64,
    pub diversity: f64,
    pub score: f64,
    pub kept: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<CandidateScores>,
}

impl Provenance {
    pub fn origin(origin: Origin) -> Self {
        Self {
            origin,
            prompt_hash: None,
            response_id: None,
            scores: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub question: String,
    pub answers: Vec<AnswerRecord>,
    pub annotation: Annotation,
    pub provenance: Option<Provenance>,
}

impl Sample {
    pub fn labeled(
        id: impl Into<String>,
        question: impl Into<String>,
        answers: Vec<AnswerRecord>,
        label: LabelVector,
    ) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            answers,
            annotation: Annotation::Labeled(label),
            provenance: None,
        }
    }

    pub fn unlabeled(id: impl Into<String>, question: impl Into<String>, answers: Vec<AnswerRecord>) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            answers,
            annotation: Annotation::Unlabeled,
            provenance: None,
        }
    }

    pub fn label(&self) -> Option<&LabelVector> {
        match &self.annotation {
            Annotation::Unlabeled => None,
            Annotation::Labeled(l) | Annotation::Pseudo { label: l, .. } => Some(l),
        }
    }

    /// Trusted classes: full for labeled samples, the confidence mask for
    /// pseudo-labeled ones, `None` when unlabeled.
    pub fn mask(&self) -> Option<ClassMask> {
        match &self.annotation {
            Annotation::Unlabeled => None,
            Annotation::Labeled(l) => Some(ClassMask::full(l.len())),
            Annotation::Pseudo { mask, .. } => Some(mask.clone()),
        }
    }

    pub fn best_answer(&self) -> Option<usize> {
        self.answers.iter().position(|a| a.is_best)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Labeled,
    Unlabeled,
    Pseudo,
    Augmented,
    SelectedAugmented,
    Fused,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DatasetKind::Labeled => "labeled",
            DatasetKind::Unlabeled => "unlabeled",
            DatasetKind::Pseudo => "pseudo",
            DatasetKind::Augmented => "augmented",
            DatasetKind::SelectedAugmented => "selected_augmented",
            DatasetKind::Fused => "fused",
        };
        f.write_str(s)
    }
}

/// An immutable collection of samples of one kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    kind: DatasetKind,
    classes: ClassSet,
    samples: Vec<Sample>,
}

impl Dataset {
    /// Validates every sample against the kind invariants.
    pub fn new(kind: DatasetKind, classes: ClassSet, samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            check_sample(kind, &classes, s).map_err(|m| Error::InvalidInput(format!("sample {}: {m}", s.id)))?;
        }
        Ok(Self { kind, classes, samples })
    }

    pub fn empty(kind: DatasetKind, classes: ClassSet) -> Self {
        Self {
            kind,
            classes,
            samples: Vec::new(),
        }
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    /// Subset by sample index, preserving the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            kind: self.kind,
            classes: self.classes.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn labels(&self) -> Vec<LabelVector> {
        self.samples
            .iter()
            .map(|s| {
                s.label()
                    .cloned()
                    .unwrap_or_else(|| LabelVector::zeros(self.classes.len()))
            })
            .collect()
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

fn check_sample(kind: DatasetKind, classes: &ClassSet, s: &Sample) -> std::result::Result<(), String> {
    if s.id.is_empty() {
        return Err("empty id".into());
    }
    if s.question.trim().is_empty() {
        return Err("empty question".into());
    }
    if s.answers.iter().any(|a| a.text.trim().is_empty()) {
        return Err("empty answer text".into());
    }
    if s.answers.iter().filter(|a| a.is_best).count() > 1 {
        return Err("more than one best answer".into());
    }
    let n = classes.len();
    match &s.annotation {
        Annotation::Labeled(l) if l.len() != n => return Err(format!("label has {} entries, expected {n}", l.len())),
        Annotation::Pseudo { label, mask } if label.len() != n || mask.len() != n => {
            return Err(format!("pseudo label/mask length, expected {n}"))
        }
        _ => {}
    }
    let ok = match kind {
        DatasetKind::Labeled | DatasetKind::Augmented | DatasetKind::SelectedAugmented => {
            matches!(s.annotation, Annotation::Labeled(_))
        }
        DatasetKind::Unlabeled => matches!(s.annotation, Annotation::Unlabeled),
        DatasetKind::Pseudo => matches!(&s.annotation, Annotation::Pseudo { mask, .. } if mask.any()),
        DatasetKind::Fused => matches!(s.annotation, Annotation::Labeled(_)),
    };
    if !ok {
        return Err(format!("annotation {:?} not allowed in a {kind} dataset", s.annotation));
    }
    if kind == DatasetKind::Fused && !s.answers.is_empty() {
        return Err("fused samples carry no answers".into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Record format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    kind: DatasetKind,
    classes: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<AnswerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    all_confident: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Clone, Debug)]
pub struct ParseOptions {
    pub classes: ClassSet,
    /// Answers kept per question (K). The best answer is always kept.
    pub max_answers: usize,
    /// Skip malformed lines (collecting diagnostics) instead of failing.
    pub lenient: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            classes: ClassSet::default(),
            max_answers: 5,
            lenient: false,
        }
    }
}

#[derive(Debug)]
pub struct ParseOutcome {
    pub dataset: Dataset,
    /// Samples dropped because no answer carries the best-answer flag.
    pub dropped_no_best: usize,
    /// Rejected lines (only populated in lenient mode).
    pub diagnostics: Vec<Error>,
}

pub fn parse_dataset<R: BufRead>(reader: R, kind: DatasetKind, opts: &ParseOptions) -> Result<ParseOutcome> {
    let mut samples = Vec::new();
    let mut dropped_no_best = 0;
    let mut diagnostics = Vec::new();
    let mut records_seen = 0usize;
    let mut first = true;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Record {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if first {
            first = false;
            if let Some(header) = parse_header(&line, lineno)? {
                check_header(&header, kind, &opts.classes, lineno)?;
                continue;
            }
        }
        records_seen += 1;
        let parsed = serde_json::from_str::<Record>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| record_to_sample(r, kind, opts));
        match parsed {
            Ok(Some(sample)) => samples.push(sample),
            Ok(None) => dropped_no_best += 1,
            Err(message) => {
                let err = Error::Record { line: lineno, message };
                if opts.lenient {
                    diagnostics.push(err);
                } else {
                    return Err(err);
                }
            }
        }
    }
    if records_seen == 0 {
        return Err(Error::EmptyDataset);
    }
    if dropped_no_best > 0 {
        log::info!("dropped {dropped_no_best} {kind} records without a best answer");
    }
    let dataset = Dataset::new(kind, opts.classes.clone(), samples)?;
    Ok(ParseOutcome {
        dataset,
        dropped_no_best,
        diagnostics,
    })
}

fn parse_header(line: &str, lineno: usize) -> Result<Option<Header>> {
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(_) => return Ok(None),
    };
    if value.get("format").is_none() {
        return Ok(None);
    }
    serde_json::from_value(value).map(Some).map_err(|e| Error::Record {
        line: lineno,
        message: format!("bad header: {e}"),
    })
}

fn check_header(h: &Header, kind: DatasetKind, classes: &ClassSet, line: usize) -> Result<()> {
    let fail = |message: String| Err(Error::Record { line, message });
    if h.format != FORMAT_NAME {
        return fail(format!("unknown format {:?}", h.format));
    }
    if h.version != FORMAT_VERSION {
        return fail(format!("unsupported version {}", h.version));
    }
    if h.kind != kind {
        return fail(format!("file holds a {} dataset, expected {kind}", h.kind));
    }
    if h.classes != classes.names() {
        return fail(format!(
            "class order {:?} does not match {:?}",
            h.classes,
            classes.names()
        ));
    }
    Ok(())
}

fn record_to_sample(r: Record, kind: DatasetKind, opts: &ParseOptions) -> std::result::Result<Option<Sample>, String> {
    let n = opts.classes.len();
    if r.id.is_empty() {
        return Err("empty id".into());
    }
    if r.question.trim().is_empty() {
        return Err("empty question".into());
    }
    if r.answers.iter().any(|a| a.text.trim().is_empty()) {
        return Err("empty answer text".into());
    }
    if r.answers.iter().filter(|a| a.is_best).count() > 1 {
        return Err("more than one answer flagged is_best".into());
    }
    let bits = |v: &Option<Vec<u8>>, field: &str| -> std::result::Result<Option<Vec<bool>>, String> {
        match v {
            None => Ok(None),
            Some(v) if v.len() != n => Err(format!("`{field}` has {} entries, expected {n}", v.len())),
            Some(v) => LabelVector::from_bits(v)
                .map(|l| Some(l.0))
                .map_err(|e| format!("`{field}`: {e}")),
        }
    };
    let labels = bits(&r.labels, "labels")?;
    let mask = bits(&r.mask, "mask")?;

    let annotation = match kind {
        DatasetKind::Unlabeled => {
            if labels.is_some() || mask.is_some() {
                return Err("unlabeled records must not carry labels".into());
            }
            Annotation::Unlabeled
        }
        DatasetKind::Pseudo => {
            let (Some(l), Some(m)) = (labels, mask) else {
                return Err("pseudo records need `labels` and `mask`".into());
            };
            let mask = ClassMask(m);
            if let Some(flag) = r.all_confident {
                if flag != mask.is_full() {
                    return Err("`all_confident` disagrees with `mask`".into());
                }
            }
            if !mask.any() {
                return Err("pseudo record with an empty mask".into());
            }
            Annotation::Pseudo {
                label: LabelVector(l),
                mask,
            }
        }
        _ => {
            let Some(l) = labels else {
                return Err("missing `labels`".into());
            };
            if mask.is_some_and(|m| !m.iter().all(|&b| b)) {
                return Err("partial mask outside a pseudo dataset".into());
            }
            Annotation::Labeled(LabelVector(l))
        }
    };

    let mut answers = r.answers;
    if matches!(kind, DatasetKind::Labeled | DatasetKind::Unlabeled) && !answers.iter().any(|a| a.is_best) {
        return Ok(None);
    }
    if kind == DatasetKind::Fused {
        answers.clear();
    }
    Ok(Some(Sample {
        id: r.id,
        question: r.question,
        answers: cap_answers(answers, opts.max_answers),
        annotation,
        provenance: r.provenance,
    }))
}

/// Keeps the best answer plus the first `k - 1` others, in original order.
pub fn cap_answers(answers: Vec<AnswerRecord>, k: usize) -> Vec<AnswerRecord> {
    if answers.len() <= k {
        return answers;
    }
    let has_best = answers.iter().any(|a| a.is_best);
    let mut others_left = if has_best { k.saturating_sub(1) } else { k };
    answers
        .into_iter()
        .filter(|a| {
            if a.is_best {
                true
            } else if others_left > 0 {
                others_left -= 1;
                true
            } else {
                false
            }
        })
        .collect()
}

fn sample_to_record(s: &Sample) -> Record {
    let (labels, mask, all_confident) = match &s.annotation {
        Annotation::Unlabeled => (None, None, None),
        Annotation::Labeled(l) => (Some(l.to_bits()), None, None),
        Annotation::Pseudo { label, mask } => (Some(label.to_bits()), Some(mask.to_bits()), Some(mask.is_full())),
    };
    Record {
        id: s.id.clone(),
        question: s.question.clone(),
        answers: s.answers.clone(),
        labels,
        mask,
        all_confident,
        provenance: s.provenance.clone(),
    }
}

/// Writes one record per line, optionally preceded by the header object.
pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W, header: bool) -> std::io::Result<()> {
    if header {
        let h = Header {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            kind: ds.kind,
            classes: ds.classes.names().to_vec(),
        };
        serde_json::to_writer(&mut w, &h)?;
        w.write_all(b"\n")?;
    }
    for s in &ds.samples {
        serde_json::to_writer(&mut w, &sample_to_record(s))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn to_jsonl(ds: &Dataset, header: bool) -> String {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf, header).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

// ---------------------------------------------------------------------------
// Partitions
// ---------------------------------------------------------------------------

/// Shuffled k-fold partition. Fold sizes differ by at most one.
pub fn split_kfold(dataset: &Dataset, folds: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    if folds < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {folds}")));
    }
    if folds > dataset.len() {
        return Err(Error::InvalidInput(format!(
            "{folds} folds requested for {} samples",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(seed, "kfold"));
    let n = order.len();
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
        let test: Vec<usize> = order[lo..hi].to_vec();
        let train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
        out.push((dataset.select(&train), dataset.select(&test)));
    }
    Ok(out)
}

/// Shuffled two-way split; the second part holds `round(fraction * n)`
/// samples, at least one when `fraction > 0` and `n >= 2`.
pub fn split_holdout(dataset: &Dataset, fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let n = dataset.len();
    let mut k = (fraction * n as f64).round() as usize;
    if fraction > 0.0 && n >= 2 {
        k = k.clamp(1, n - 1);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "holdout"));
    let (hold, rest) = order.split_at(k);
    (dataset.select(rest), dataset.select(hold))
}

#[derive(Debug)]
pub struct FuseOutcome {
    pub dataset: Dataset,
    /// Pseudo-labeled samples left out because not every class was confident.
    pub excluded_partial: usize,
}

/// Builds the question-only training set from real, pseudo and selected
/// generated samples. Answers are stripped and the origin of every sample
/// is recorded.
pub fn fuse(d_l: &Dataset, d_u_star: &Dataset, d_a_star: &Dataset) -> Result<FuseOutcome> {
    let classes = d_l.classes().clone();
    for ds in [d_u_star, d_a_star] {
        if ds.classes() != &classes {
            return Err(Error::InvalidInput("class sets differ between fused inputs".into()));
        }
    }
    let mut samples = Vec::with_capacity(d_l.len() + d_u_star.len() + d_a_star.len());
    let mut excluded_partial = 0;
    let parts = [
        (d_l, Origin::Labeled),
        (d_u_star, Origin::Pseudo),
        (d_a_star, Origin::Augmented),
    ];
    for (ds, origin) in parts {
        for s in ds {
            let label = match &s.annotation {
                Annotation::Unlabeled => {
                    return Err(Error::InvalidInput(format!(
                        "sample {} has no label and cannot be fused",
                        s.id
                    )))
                }
                Annotation::Labeled(l) => l.clone(),
                Annotation::Pseudo { label, mask } => {
                    if !mask.is_full() {
                        excluded_partial += 1;
                        continue;
                    }
                    label.clone()
                }
            };
            let mut provenance = s.provenance.clone().unwrap_or_else(|| Provenance::origin(origin));
            provenance.origin = origin;
            samples.push(Sample {
                id: s.id.clone(),
                question: s.question.clone(),
                answers: Vec::new(),
                annotation: Annotation::Labeled(label),
                provenance: Some(provenance),
            });
        }
    }
    Ok(FuseOutcome {
        dataset: Dataset::new(DatasetKind::Fused, classes, samples)?,
        excluded_partial,
    })
}
