use std::path::Path;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng as _, SeedableRng};
use serde_json::{json, Map, Value};

use super::PromptInputs;
use crate::error::{Error, Result};
use crate::http::{credential_from_env, AuditLog, JsonClient};
use crate::rng::{stable_hash, Rng};
use crate::synthetic;

#[derive(Clone, Debug)]
pub struct GenerationRequest {
    pub batch: usize,
    pub prompt: String,
    pub inputs: PromptInputs,
    /// Per-request seed; backends that sample should honour it when they can.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub response_id: String,
}

pub trait LlmClient: Send + Sync {
    fn identity(&self) -> String;
    fn complete(&self, request: &GenerationRequest) -> Result<LlmResponse>;
}

/// Offline generator. Produces label-balanced questions from the synthetic
/// sentence pools (or, for other class sets, from few-shot sentences), with
/// a configurable share of deliberately wrong labels so that selection has
/// something to reject.
#[derive(Clone, Debug)]
pub struct StubLlm {
    pub seed: u64,
    pub label_noise: f64,
}

impl StubLlm {
    pub fn new(seed: u64) -> Self {
        Self { seed, label_noise: 0.1 }
    }

    fn patterns(n: usize) -> Vec<Vec<bool>> {
        // every non-empty, not-all-true pattern; singles first so the
        // positives per class stay even across a batch
        let mut out: Vec<Vec<bool>> = (1u32..(1 << n) - 1)
            .map(|m| (0..n).map(|c| m >> c & 1 == 1).collect())
            .collect();
        out.sort_by_key(|p: &Vec<bool>| {
            (
                p.iter().filter(|&&b| b).count(),
                p.iter().rev().cloned().collect::<Vec<_>>(),
            )
        });
        if out.is_empty() {
            out.push(vec![true; n]);
        }
        out
    }

    fn sentences_for(inputs: &PromptInputs, c: usize) -> Vec<String> {
        inputs
            .few_shot
            .iter()
            .filter(|s| s.label().is_some_and(|l| l.get(c) && l.count_positive() == 1))
            .flat_map(|s| {
                s.question
                    .split_inclusive(['.', '?', '!'])
                    .map(|t| t.trim().to_string())
                    .collect::<Vec<_>>()
            })
            .filter(|t| !t.is_empty())
            .collect()
    }

    fn question(&self, inputs: &PromptInputs, bits: &[bool], rng: &mut Rng) -> String {
        if bits.len() == synthetic::CLASS_SENTENCES.len() {
            let condition = synthetic::CONDITIONS.choose(rng).expect("non-empty");
            return synthetic::question_text(&crate::data::LabelVector::new(bits.to_vec()), condition, rng);
        }
        let mut parts = Vec::new();
        for (c, &b) in bits.iter().enumerate() {
            if b {
                if let Some(s) = Self::sentences_for(inputs, c).choose(rng) {
                    parts.push(s.clone());
                }
            }
        }
        if parts.is_empty() {
            parts.push(inputs.few_shot.choose(rng).expect("validated").question.clone());
        }
        parts.join(" ")
    }
}

impl LlmClient for StubLlm {
    fn identity(&self) -> String {
        format!("stub(seed={},label_noise={})", self.seed, self.label_noise)
    }

    fn complete(&self, request: &GenerationRequest) -> Result<LlmResponse> {
        let inputs = &request.inputs;
        let n = inputs.label_names.len();
        let hash = stable_hash(request.prompt.as_bytes());
        let mut rng = Rng::seed_from_u64(self.seed ^ request.seed ^ hash);
        let patterns = Self::patterns(n);
        let items: Vec<Value> = (0..inputs.requested_count)
            .map(|i| {
                let truth = &patterns[i % patterns.len()];
                let question = self.question(inputs, truth, &mut rng);
                let mut claimed = truth.clone();
                if rng.random::<f64>() < self.label_noise {
                    claimed = patterns.choose(&mut rng).expect("non-empty").clone();
                }
                let mut obj = Map::new();
                obj.insert("question".into(), Value::String(question));
                for (c, name) in inputs.label_names.iter().enumerate() {
                    obj.insert(name.clone(), Value::Bool(claimed[c]));
                }
                Value::Object(obj)
            })
            .collect();
        Ok(LlmResponse {
            text: serde_json::to_string_pretty(&Value::Array(items)).expect("serializable"),
            response_id: format!("stub-{hash:016x}"),
        })
    }
}

/// OpenAI-compatible `/chat/completions` backend.
pub struct ChatCompletionClient {
    client: JsonClient,
    model: String,
    temperature: f64,
}

impl ChatCompletionClient {
    pub fn new(client: JsonClient, model: impl Into<String>, temperature: f64) -> Self {
        Self {
            client,
            model: model.into(),
            temperature,
        }
    }

    /// Builds a client whose credential comes from `credential_env`. A
    /// missing credential is an error rather than an unauthenticated call.
    pub fn from_env(
        base_url: &str,
        model: &str,
        credential_env: &str,
        temperature: f64,
        timeout: Duration,
        audit: Option<&Path>,
    ) -> Result<Self> {
        let key = credential_from_env(credential_env).ok_or_else(|| {
            Error::config(
                "augment.credential_env",
                format!("environment variable {credential_env} is not set; the chat backend needs a credential"),
            )
        })?;
        let mut client = JsonClient::new(base_url, Some(key), timeout)?;
        if let Some(p) = audit {
            client = client.with_audit(AuditLog::open(p)?);
        }
        Ok(Self::new(client, model, temperature))
    }
}

impl LlmClient for ChatCompletionClient {
    fn identity(&self) -> String {
        format!("chat:{}@{}", self.model, self.client.base_url())
    }

    fn complete(&self, request: &GenerationRequest) -> Result<LlmResponse> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": self.temperature,
            "seed": request.seed,
        });
        let resp = self.client.post_json("chat/completions", &body)?;
        let text = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Backend("chat response has no choices[0].message.content".into()))?;
        let id = resp.get("id").and_then(Value::as_str).unwrap_or("").to_string();
        Ok(LlmResponse {
            text: text.to_string(),
            response_id: id,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patterns_exclude_all_and_none() {
        let p = StubLlm::patterns(3);
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|b| b.iter().any(|&x| x) && !b.iter().all(|&x| x)));
        assert_eq!(p[0], vec![true, false, false]);
    }

    #[test]
    fn missing_credential_is_reported() {
        let err = ChatCompletionClient::from_env(
            "http://localhost:1",
            "m",
            "SUPPORTNEEDS_TEST_SURELY_UNSET_KEY",
            0.7,
            Duration::from_secs(1),
            None,
        )
        .err()
        .unwrap();
        assert!(err.to_string().contains("SUPPORTNEEDS_TEST_SURELY_UNSET_KEY"));
    }
}
