//! LLM-based generation of extra training questions and their selection by
//! label consistency and diversity against the labeled set.

mod llm;
mod select;

pub use llm::{ChatCompletionClient, GenerationRequest, LlmClient, LlmResponse, StubLlm};
pub use select::{
    archive, consistency, diversity, nearest_neighbors, rescore, score, score_candidates, select, selection_curve,
    AugCandidate, Neighbor,
};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::{ClassSet, Dataset, DatasetKind, LabelVector, Origin, Provenance, Sample};
use crate::error::{Error, Result};
use crate::rng;

/// Wire names of the default classes inside the prompt and the response.
pub const DEFAULT_PROMPT_LABELS: [&str; 3] = [
    "informational_support_need",
    "emotional_support_need",
    "social_support_need",
];

const EQUAL_BALANCE: &str =
    "The total number of True instances for each label should be as equal as possible across the entire set of samples.";

#[derive(Clone, Debug, PartialEq)]
pub enum BalanceDirective {
    /// Equal number of True instances per label across the batch.
    Equal,
    /// Replaces the balance sentence verbatim.
    Custom(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptInputs {
    pub few_shot: Vec<Sample>,
    pub requested_count: usize,
    pub balance: BalanceDirective,
    /// One wire name per class, in class order.
    pub label_names: Vec<String>,
    /// Subject area named in the context block.
    pub domain: String,
}

impl PromptInputs {
    pub fn new(few_shot: Vec<Sample>, requested_count: usize) -> Self {
        Self {
            few_shot,
            requested_count,
            balance: BalanceDirective::Equal,
            label_names: DEFAULT_PROMPT_LABELS.iter().map(|s| s.to_string()).collect(),
            domain: "mental health".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.requested_count == 0 {
            return Err(Error::InvalidInput("requested sample count must be at least 1".into()));
        }
        if self.few_shot.is_empty() {
            return Err(Error::InvalidInput("at least one few-shot sample is required".into()));
        }
        if self.label_names.is_empty() {
            return Err(Error::InvalidInput("no label names".into()));
        }
        for s in &self.few_shot {
            match s.label() {
                Some(l) if l.len() == self.label_names.len() => {}
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "few-shot sample {} needs a full label",
                        s.id
                    )))
                }
            }
        }
        Ok(())
    }
}

fn quoted_list(names: &[String]) -> String {
    let q: Vec<String> = names.iter().map(|n| format!("\u{201c}{n}\u{201d}")).collect();
    match q.len() {
        1 => q[0].clone(),
        2 => format!("{} and {}", q[0], q[1]),
        _ => format!("{}, and {}", q[..q.len() - 1].join(", "), q[q.len() - 1]),
    }
}

fn few_shot_json(inputs: &PromptInputs) -> String {
    let items: Vec<Value> = inputs
        .few_shot
        .iter()
        .map(|s| {
            let mut obj = serde_json::Map::new();
            obj.insert("question".into(), Value::String(s.question.clone()));
            if let Some(b) = s.best_answer() {
                obj.insert("best_answer".into(), Value::String(s.answers[b].text.clone()));
            }
            let label = s.label().expect("validated");
            for (c, name) in inputs.label_names.iter().enumerate() {
                obj.insert(name.clone(), Value::Bool(label.get(c)));
            }
            Value::Object(obj)
        })
        .collect();
    serde_json::to_string_pretty(&Value::Array(items)).expect("serializable")
}

/// The generation prompt. Byte-stable for fixed inputs.
pub fn build_prompt(inputs: &PromptInputs) -> Result<String> {
    inputs.validate()?;
    let labels = quoted_list(&inputs.label_names);
    let n = inputs.requested_count;
    let balance = match &inputs.balance {
        BalanceDirective::Equal => EQUAL_BALANCE.to_string(),
        BalanceDirective::Custom(s) => s.clone(),
    };
    let all_names = inputs.label_names.len();
    let not_all = if all_names == 3 {
        format!("All three labels ({labels}) should not be True simultaneously in any instance.")
    } else {
        format!("All {all_names} labels ({labels}) should not be True simultaneously in any instance.")
    };
    let keys = std::iter::once("\"question\"".to_string())
        .chain(inputs.label_names.iter().map(|n| format!("\"{n}\"")))
        .collect::<Vec<_>>()
        .join(", ");
    let domain = &inputs.domain;
    Ok(format!(
        "Context\n\n\
You are a data generator capable of producing new samples and corresponding labels based on a few given examples, i.e., Few-shot Samples. \
Your data generation focuses on {domain}-related questions and answers. \
Each item in the list below contains a question from an online {domain} community and the corresponding best answer. \
The labels are {labels}. \
Each item indicates whether the question reflects a need for one or more types of support.\n\n\
Instruction\n\n\
Please generate {n} new samples, each consisting of a question and corresponding labels. These samples should meet the following requirements:\n\n\
{balance} {not_all}\n\n\
Ensure the novelty of the generated samples; they should not just rephrase existing ones but instead offer new perspectives or scenarios.\n\n\
The generated samples must be of high quality, reflecting realistic and relatable situations in online {domain} discussions.\n\n\
Return only a JSON array of objects with the keys {keys}; label values are true or false.\n\n\
Few-shot Samples\n\n\
{shots}\n\n\
{n} new samples:\n",
        shots = few_shot_json(inputs),
    ))
}

pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One parsed item before scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedItem {
    pub question: String,
    pub label: LabelVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedBatch {
    pub items: Vec<GeneratedItem>,
    /// Items dropped as malformed or violating the label constraint.
    pub skipped: usize,
}

/// Extracts the outermost JSON array from free text (models often wrap it in
/// prose or code fences).
fn extract_array(text: &str) -> Option<Vec<Value>> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str::<Value>(&text[start..=end]).ok()? {
        Value::Array(v) => Some(v),
        _ => None,
    }
}

fn label_value(v: Option<&Value>) -> Option<bool> {
    match v? {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => match n.as_u64()? {
            0 => Some(false),
            1 => Some(true),
            _ => None,
        },
        Value::String(s) => match s.to_ascii_lowercase().as_str() {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Parses a generation response. Items without question text, with a
/// missing or non-boolean label, or with every label true are skipped.
pub fn parse_generated(response: &str, label_names: &[String]) -> Result<ParsedBatch> {
    let Some(values) = extract_array(response) else {
        return Err(Error::Generation {
            skipped: 0,
            raw: response.to_string(),
        });
    };
    let mut items = Vec::new();
    let mut skipped = 0;
    for v in &values {
        let parsed = (|| {
            let question = v.get("question")?.as_str()?.trim();
            if question.is_empty() {
                return None;
            }
            let bits: Option<Vec<bool>> = label_names.iter().map(|n| label_value(v.get(n))).collect();
            let bits = bits?;
            if bits.iter().all(|&b| b) {
                return None;
            }
            Some(GeneratedItem {
                question: question.to_string(),
                label: LabelVector::new(bits),
            })
        })();
        match parsed {
            Some(item) => items.push(item),
            None => skipped += 1,
        }
    }
    if items.is_empty() {
        return Err(Error::Generation {
            skipped,
            raw: response.to_string(),
        });
    }
    Ok(ParsedBatch { items, skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub batches: usize,
    pub per_batch: usize,
    pub few_shot: usize,
    /// Simultaneous requests to the backend.
    pub max_in_flight: usize,
    /// Share of few-shot slots reserved for samples of the rarest class.
    pub minority_share: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            batches: 10,
            per_batch: 20,
            few_shot: 8,
            max_in_flight: 4,
            minority_share: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchAudit {
    pub batch: usize,
    pub prompt_hash: String,
    pub response_id: String,
    pub parsed: usize,
    pub skipped: usize,
    /// Set when the whole batch failed to parse.
    pub error: Option<String>,
}

pub struct GenerationOutcome {
    pub candidates: Dataset,
    pub audit: Vec<BatchAudit>,
}

/// Index of the class with the fewest positives in `d`.
pub fn rarest_class(d: &Dataset) -> usize {
    let n = d.classes().len();
    let counts: Vec<usize> = (0..n)
        .map(|c| d.iter().filter(|s| s.label().is_some_and(|l| l.get(c))).count())
        .collect();
    (0..n).min_by_key(|&c| (counts[c], c)).unwrap_or(0)
}

fn pick_few_shot(d_l: &Dataset, cfg: &GenerationConfig, minority: usize, rng: &mut rng::Rng) -> Vec<Sample> {
    let (rare, rest): (Vec<&Sample>, Vec<&Sample>) =
        d_l.iter().partition(|s| s.label().is_some_and(|l| l.get(minority)));
    let want_rare = ((cfg.few_shot as f64 * cfg.minority_share).round() as usize).min(rare.len());
    let mut out: Vec<Sample> = rare.choose_multiple(rng, want_rare).map(|s| (*s).clone()).collect();
    let fill = cfg.few_shot.saturating_sub(out.len()).min(rest.len());
    out.extend(rest.choose_multiple(rng, fill).map(|s| (*s).clone()));
    out.shuffle(rng);
    out
}

/// Runs `cfg.batches` generation requests seeded from the labeled set.
/// Batches that fail to parse are recorded in the audit and skipped; an
/// error is returned only if no batch yields a candidate.
pub fn generate_candidates(
    client: &dyn LlmClient,
    d_l: &Dataset,
    cfg: &GenerationConfig,
    label_names: &[String],
    seed: u64,
) -> Result<GenerationOutcome> {
    if d_l.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if label_names.len() != d_l.classes().len() {
        return Err(Error::config(
            "augment.label_names",
            format!("{} names for {} classes", label_names.len(), d_l.classes().len()),
        ));
    }
    if cfg.max_in_flight == 0 || cfg.per_batch == 0 || cfg.few_shot == 0 {
        return Err(Error::config(
            "augment",
            "batch sizes and max_in_flight must be at least 1",
        ));
    }
    let minority = rarest_class(d_l);
    let requests: Vec<GenerationRequest> = (0..cfg.batches)
        .map(|b| {
            let mut r = rng::stream(seed, &format!("augment-batch-{b}"));
            let inputs = PromptInputs {
                label_names: label_names.to_vec(),
                ..PromptInputs::new(pick_few_shot(d_l, cfg, minority, &mut r), cfg.per_batch)
            };
            let prompt = build_prompt(&inputs)?;
            Ok(GenerationRequest {
                batch: b,
                prompt,
                inputs,
                seed: rng::derive_seed(seed, &format!("augment-response-{b}")),
            })
        })
        .collect::<Result<_>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight)
        .build()
        .map_err(|e| Error::Backend(format!("thread pool: {e}")))?;
    let responses: Vec<Result<LlmResponse>> = pool.install(|| {
        use rayon::prelude::*;
        requests.par_iter().map(|r| client.complete(r)).collect()
    });

    let mut samples = Vec::new();
    let mut audit = Vec::new();
    let mut last_error = None;
    for (req, resp) in requests.iter().zip(responses) {
        let hash = prompt_hash(&req.prompt);
        let resp = resp?;
        match parse_generated(&resp.text, label_names) {
            Ok(parsed) => {
                audit.push(BatchAudit {
                    batch: req.batch,
                    prompt_hash: hash.clone(),
                    response_id: resp.response_id.clone(),
                    parsed: parsed.items.len(),
                    skipped: parsed.skipped,
                    error: None,
                });
                for (i, item) in parsed.items.into_iter().enumerate() {
                    let mut s = Sample::labeled(
                        format!("a-{:03}-{:03}", req.batch, i),
                        item.question,
                        vec![],
                        item.label,
                    );
                    s.provenance = Some(Provenance {
                        prompt_hash: Some(hash.clone()),
                        response_id: Some(resp.response_id.clone()),
                        ..Provenance::origin(Origin::Augmented)
                    });
                    samples.push(s);
                }
            }
            Err(e) => {
                log::warn!("generation batch {} unusable: {e}", req.batch);
                audit.push(BatchAudit {
                    batch: req.batch,
                    prompt_hash: hash,
                    response_id: resp.response_id,
                    parsed: 0,
                    skipped: match &e {
                        Error::Generation { skipped, .. } => *skipped,
                        _ => 0,
                    },
                    error: Some(e.to_string()),
                });
                last_error = Some(e);
            }
        }
    }
    if samples.is_empty() {
        return Err(last_error.unwrap_or(Error::Generation {
            skipped: 0,
            raw: String::new(),
        }));
    }
    Ok(GenerationOutcome {
        candidates: Dataset::new(DatasetKind::Augmented, d_l.classes().clone(), samples)?,
        audit,
    })
}

/// Prompt label names for a class set: the standard names for the default
/// classes, `<class>_support_need` otherwise.
pub fn default_label_names(classes: &ClassSet) -> Vec<String> {
    if classes == &ClassSet::default() {
        DEFAULT_PROMPT_LABELS.iter().map(|s| s.to_string()).collect()
    } else {
        classes.names().iter().map(|n| format!("{n}_support_need")).collect()
    }
}
