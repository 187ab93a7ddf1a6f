//! Deterministic synthetic health-question corpus for smoke runs and tests.
//!
//! Each class owns a pool of sentence templates; a question is a shuffled
//! mix of one or two sentences per positive class and a few neutral filler
//! sentences. Answers are drawn from per-class answer pools and the best
//! answer always addresses one of the question's needs. The network class
//! is rare by construction.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{AnswerRecord, ClassSet, Dataset, DatasetKind, LabelVector, Sample};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const CONDITIONS: &[&str] = &[
    "diabetes",
    "asthma",
    "migraines",
    "arthritis",
    "insomnia",
    "eczema",
    "anemia",
    "psoriasis",
    "back pain",
    "high blood pressure",
    "acid reflux",
    "thyroid problems",
];
const DRUGS: &[&str] = &[
    "ibuprofen",
    "metformin",
    "an inhaler",
    "melatonin",
    "iron tablets",
    "a steroid cream",
];
const RELATIVES: &[&str] = &["mother", "husband", "sister", "son", "best friend", "father"];
const TIMES: &[&str] = &["week", "month", "year", "spring", "winter"];
const FEELINGS: &[&str] = &[
    "scared",
    "hopeless",
    "overwhelmed",
    "anxious",
    "lonely",
    "heartbroken",
    "exhausted",
];

/// Question sentence templates per default class, in class order.
pub const CLASS_SENTENCES: [&[&str]; 3] = [
    &[
        "What is the right dose of {drug} for {condition}?",
        "How long does it take for {drug} to start working?",
        "Should I see a specialist about my {condition}?",
        "Can {condition} be treated without medication?",
        "Which tests are needed to confirm {condition}?",
        "Is it safe to combine {drug} with alcohol?",
        "What are the usual side effects of {drug}?",
        "Does diet make any difference for {condition}?",
    ],
    &[
        "I feel so {feeling} since the diagnosis.",
        "Some nights I just cry and cannot stop.",
        "I am {feeling} and I do not know how to cope anymore.",
        "Nobody understands how hard this is for me.",
        "I really need some encouragement right now.",
        "Honestly I feel {feeling} every single day.",
        "I am tired of pretending that I am fine.",
    ],
    &[
        "Are there any support groups for {condition} near me?",
        "I would love to connect with others who have {condition}.",
        "Does anyone here also live with {condition}?",
        "Is there an online community for people with {condition}?",
        "I want to meet people who are going through the same thing.",
        "Can someone recommend a club or meetup for {condition} patients?",
    ],
];

const FILLERS: &[&str] = &[
    "My {relative} was diagnosed with {condition} last {time}.",
    "I have had {condition} for a few years now.",
    "I am {age} years old.",
    "It all started after a stressful {time}.",
    "Thanks in advance.",
    "Sorry for the long post.",
    "I live in a small town.",
    "Work has been busy lately.",
];

const CLASS_ANSWERS: [&[&str]; 3] = [
    &[
        "Take {drug} with food and follow the label carefully.",
        "A specialist can order the right tests for {condition}.",
        "Most people notice an improvement within two weeks.",
        "Ask your pharmacist about interactions before mixing anything.",
    ],
    &[
        "Stay strong, you are not alone in this.",
        "It is okay to feel {feeling}, be gentle with yourself.",
        "Sending you a big hug, things will get better.",
    ],
    &[
        "Try the {condition} forum, the members are very welcoming.",
        "There is a weekly meetup for people with {condition} at the library.",
        "Message me, I have {condition} too and would love to chat.",
    ],
];

const GENERIC_ANSWERS: &[&str] = &[
    "I do not know, sorry.",
    "Just search online.",
    "Good luck with everything.",
    "Same here.",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    /// Per-class prevalence in default class order.
    pub prevalence: Vec<f64>,
    pub max_answers: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_labeled: 200,
            n_unlabeled: 800,
            n_test: 300,
            prevalence: vec![0.6, 0.45, 0.08],
            max_answers: 7,
        }
    }
}

pub struct SyntheticCorpus {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
}

pub fn fill(template: &str, condition: &str, rng: &mut Rng) -> String {
    let mut out = template.replace("{condition}", condition);
    if out.contains("{drug}") {
        out = out.replace("{drug}", DRUGS.choose(rng).expect("non-empty"));
    }
    if out.contains("{relative}") {
        out = out.replace("{relative}", RELATIVES.choose(rng).expect("non-empty"));
    }
    if out.contains("{time}") {
        out = out.replace("{time}", TIMES.choose(rng).expect("non-empty"));
    }
    if out.contains("{feeling}") {
        out = out.replace("{feeling}", FEELINGS.choose(rng).expect("non-empty"));
    }
    if out.contains("{age}") {
        out = out.replace("{age}", &rng.random_range(19..75).to_string());
    }
    out
}

fn draw_label(prevalence: &[f64], rng: &mut Rng) -> LabelVector {
    loop {
        let bits: Vec<bool> = prevalence.iter().map(|&p| rng.random::<f64>() < p).collect();
        if bits.iter().any(|&b| b) {
            return LabelVector::new(bits);
        }
    }
}

/// Question text expressing exactly the positive classes of `label`.
pub fn question_text(label: &LabelVector, condition: &str, rng: &mut Rng) -> String {
    let mut sentences = Vec::new();
    for (c, pool) in CLASS_SENTENCES.iter().enumerate() {
        if label.get(c) {
            let picks = if rng.random::<f64>() < 0.5 { 2 } else { 1 };
            for t in pool.choose_multiple(rng, picks) {
                sentences.push(fill(t, condition, rng));
            }
        }
    }
    let fillers = rng.random_range(1..=3);
    for t in FILLERS.choose_multiple(rng, fillers) {
        sentences.push(fill(t, condition, rng));
    }
    sentences.shuffle(rng);
    sentences.join(" ")
}

fn answers(label: &LabelVector, condition: &str, max_answers: usize, rng: &mut Rng) -> Vec<AnswerRecord> {
    let count = rng.random_range(1..=max_answers.max(1));
    let positive: Vec<usize> = (0..label.len()).filter(|&c| label.get(c)).collect();
    let best_class = *positive.choose(rng).expect("labels have a positive class");
    let best_pos = rng.random_range(0..count);
    (0..count)
        .map(|k| {
            let text = if k == best_pos {
                let a = fill(
                    CLASS_ANSWERS[best_class].choose(rng).expect("non-empty"),
                    condition,
                    rng,
                );
                let b = fill(
                    CLASS_ANSWERS[best_class].choose(rng).expect("non-empty"),
                    condition,
                    rng,
                );
                format!("{a} {b}")
            } else if rng.random::<f64>() < 0.5 {
                GENERIC_ANSWERS.choose(rng).expect("non-empty").to_string()
            } else {
                let c = rng.random_range(0..CLASS_ANSWERS.len());
                fill(CLASS_ANSWERS[c].choose(rng).expect("non-empty"), condition, rng)
            };
            AnswerRecord {
                text,
                is_best: k == best_pos,
            }
        })
        .collect()
}

fn make_sample(prefix: &str, i: usize, cfg: &SyntheticConfig, rng: &mut Rng) -> Sample {
    let label = draw_label(&cfg.prevalence, rng);
    let condition = CONDITIONS.choose(rng).expect("non-empty");
    let question = question_text(&label, condition, rng);
    let answers = answers(&label, condition, cfg.max_answers, rng);
    Sample::labeled(format!("{prefix}-{i:05}"), question, answers, label)
}

pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticCorpus> {
    let classes = ClassSet::default();
    if cfg.prevalence.len() != classes.len() {
        return Err(Error::config(
            "synthetic.prevalence",
            format!("needs {} entries", classes.len()),
        ));
    }
    if cfg.prevalence.iter().all(|&p| p <= 0.0) || cfg.prevalence.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::config(
            "synthetic.prevalence",
            "entries must lie in [0, 1], not all zero",
        ));
    }
    let build = |prefix: &str, n: usize, stream: &str| -> Vec<Sample> {
        let mut r = rng::stream(seed, stream);
        (0..n).map(|i| make_sample(prefix, i, cfg, &mut r)).collect()
    };
    let labeled = build("l", cfg.n_labeled, "synthetic-labeled");
    let unlabeled = build("u", cfg.n_unlabeled, "synthetic-unlabeled")
        .into_iter()
        .map(|s| Sample::unlabeled(s.id, s.question, s.answers))
        .collect();
    let test = build("t", cfg.n_test, "synthetic-test");
    Ok(SyntheticCorpus {
        labeled: Dataset::new(DatasetKind::Labeled, classes.clone(), labeled)?,
        unlabeled: Dataset::new(DatasetKind::Unlabeled, classes.clone(), unlabeled)?,
        test: Dataset::new(DatasetKind::Labeled, classes, test)?,
    })
}
