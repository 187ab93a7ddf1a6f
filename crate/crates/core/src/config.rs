//! Run configuration: one TOML document with a section per module.
//!
//! Layers, lowest first: built-in defaults, the config file, environment
//! variables `SUPPORTNEEDS__<SECTION>__<KEY>`, then `section.key=value`
//! overrides from the command line. Unknown keys are rejected at every layer.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{default_label_names, ChatCompletionClient, GenerationConfig, LlmClient, StubLlm};
use crate::data::{ClassSet, ParseOptions};
use crate::encoder::{Encoder, HashingEncoder, RemoteEncoder, SentenceShape};
use crate::error::{Error, Result};
use crate::http::{credential_from_env, JsonClient};
use crate::losses::{validate_tau, LossWeights, DEFAULT_PROB_CLAMP};
use crate::optim::{AdamConfig, LinearSchedule};
use crate::q_model::QModelConfig;
use crate::qa_model::{Activation, QaConfig};
use crate::synthetic::SyntheticConfig;
use crate::trainer::TrainConfig;

pub const ENV_PREFIX: &str = "SUPPORTNEEDS__";
/// Overrides `augment.base_url` when set.
pub const LLM_BASE_URL_ENV: &str = "SUPPORTNEEDS_LLM_BASE_URL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub classes: Vec<String>,
    /// Answers kept per question; the best answer always survives the cap.
    pub max_answers: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: ClassSet::default().names().to_vec(),
            max_answers: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderBackend {
    Stub,
    /// Remote embeddings endpoint serving a pretrained transformer.
    Transformer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub backend: EncoderBackend,
    pub dim: usize,
    pub model_id: String,
    pub base_url: String,
    pub credential_env: String,
    pub timeout_secs: u64,
    pub max_q_sentences: usize,
    pub max_a_sentences: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let shape = SentenceShape::default();
        Self {
            backend: EncoderBackend::Stub,
            dim: 768,
            model_id: "bert-base-uncased".into(),
            base_url: "http://localhost:8080/v1".into(),
            credential_env: "SUPPORTNEEDS_ENCODER_API_KEY".into(),
            timeout_secs: 60,
            max_q_sentences: shape.max_q,
            max_a_sentences: shape.max_a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kernels: Vec<[usize; 2]>,
    pub filters: usize,
    pub pool: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let qa = QaConfig::new(1, SentenceShape::default(), 1);
        Self {
            kernels: qa.kernels.iter().map(|&(h, w)| [h, w]).collect(),
            filters: qa.filters,
            pool: qa.pool,
            dropout: qa.dropout,
            activation: qa.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_label: f64,
    pub lambda_unlabel: f64,
    pub lambda_quality: f64,
    pub tau: f64,
    pub prob_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda_label: w.lambda_label,
            lambda_unlabel: w.lambda_unlabel,
            lambda_quality: w.lambda_quality,
            tau: 0.7,
            prob_clamp: DEFAULT_PROB_CLAMP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub schedule: LinearSchedule,
    pub max_epochs: usize,
    pub min_epochs: usize,
    pub loss_epsilon: f64,
    pub generation_epsilon: f64,
    pub max_generations: usize,
    pub validation_fraction: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            adam: t.adam,
            schedule: t.schedule,
            max_epochs: t.max_epochs,
            min_epochs: t.min_epochs,
            loss_epsilon: t.loss_epsilon,
            generation_epsilon: t.generation_epsilon,
            max_generations: t.max_generations,
            validation_fraction: t.validation_fraction,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmBackend {
    Stub,
    Chat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub backend: LlmBackend,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub batches: usize,
    pub per_batch: usize,
    pub few_shot: usize,
    pub max_in_flight: usize,
    pub minority_share: f64,
    /// Labels of each class as they appear in the prompt; derived from the
    /// class names when empty.
    pub label_names: Vec<String>,
    pub k: usize,
    pub delta: f64,
    pub eta: f64,
    pub stub_label_noise: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            backend: LlmBackend::Stub,
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            credential_env: "SUPPORTNEEDS_LLM_API_KEY".into(),
            temperature: 0.7,
            timeout_secs: 120,
            batches: g.batches,
            per_batch: g.per_batch,
            few_shot: g.few_shot,
            max_in_flight: g.max_in_flight,
            minority_share: g.minority_share,
            label_names: vec![],
            k: 5,
            delta: 0.4,
            eta: 0.2,
            stub_label_noise: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub folds: usize,
    pub threshold: f64,
    /// Write per-class ROC points next to the report.
    pub roc_export: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            threshold: 0.5,
            roc_export: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub trainer: TrainerConfig,
    pub augment: AugmentConfig,
    pub q_model: QModelConfig,
    pub eval: EvalConfig,
    pub synthetic: SyntheticConfig,
}

fn toml_error(origin: &str, e: impl std::fmt::Display) -> Error {
    Error::config(origin, e.to_string().trim().replace('\n', " "))
}

/// Parses `raw` as a TOML value, falling back to a plain string.
fn override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value, origin: &str) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(origin, format!("malformed key `{path}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Builds the effective configuration. `env` is usually
    /// `std::env::vars()`; `sets` are `section.key=value` strings.
    pub fn load(file: Option<&Path>, env: impl IntoIterator<Item = (String, String)>, sets: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(RunConfig::default()).map_err(|e| toml_error("defaults", e))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file_table: toml::Table = text.parse().map_err(|e| toml_error(&path.display().to_string(), e))?;
            // reject unknown keys against the file alone so the message
            // points at the file
            toml::Value::Table(file_table.clone())
                .try_into::<RunConfig>()
                .map_err(|e| toml_error(&path.display().to_string(), e))?;
            merge(&mut table, file_table);
        }
        let mut env: Vec<(String, String)> = env.into_iter().collect();
        env.sort();
        for (k, v) in env {
            if let Some(rest) = k.strip_prefix(ENV_PREFIX) {
                let path = rest.to_ascii_lowercase().replace("__", ".");
                set_path(&mut table, &path, override_value(&v), &k)?;
            } else if k == LLM_BASE_URL_ENV && !v.is_empty() {
                set_path(&mut table, "augment.base_url", toml::Value::String(v), &k)?;
            }
        }
        for s in sets {
            let (path, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::config("--set", format!("expected key=value, got `{s}`")))?;
            set_path(&mut table, path.trim(), override_value(raw.trim()), path.trim())?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| toml_error("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration for the synthetic smoke run: small encoder, small
    /// question model, few epochs.
    pub fn smoke() -> Self {
        let mut c = RunConfig::default();
        c.encoder.dim = 64;
        c.trainer.max_epochs = 20;
        c.trainer.max_generations = 3;
        c.augment.batches = 12;
        c.q_model.embed_dim = 32;
        c.q_model.hidden = 32;
        c.q_model.vocab_buckets = 4096;
        c.q_model.max_tokens = 64;
        c.q_model.max_epochs = 15;
        c.q_model.schedule.total_iters = 15;
        c.trainer.schedule.total_iters = 20;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.classes()?;
        if self.data.max_answers == 0 {
            return Err(Error::config("data.max_answers", "must be at least 1"));
        }
        if self.encoder.dim == 0 {
            return Err(Error::config("encoder.dim", "must be positive"));
        }
        if self.encoder.max_q_sentences == 0 {
            return Err(Error::config("encoder.max_q_sentences", "must be at least 1"));
        }
        if self.encoder.max_a_sentences == 0 {
            return Err(Error::config("encoder.max_a_sentences", "must be at least 1"));
        }
        validate_tau(self.loss.tau)?;
        self.qa_config(classes.len()).validate()?;
        self.train_config().validate()?;
        self.q_model.validate()?;
        let a = &self.augment;
        for (name, v) in [
            ("augment.batches", a.batches),
            ("augment.per_batch", a.per_batch),
            ("augment.few_shot", a.few_shot),
            ("augment.max_in_flight", a.max_in_flight),
            ("augment.k", a.k),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if !(0.0..=1.0).contains(&a.delta) {
            return Err(Error::config(
                "augment.delta",
                format!("must lie in [0, 1], got {}", a.delta),
            ));
        }
        if !a.eta.is_finite() {
            return Err(Error::config("augment.eta", "must be finite"));
        }
        if !(0.0..=1.0).contains(&a.minority_share) {
            return Err(Error::config("augment.minority_share", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&a.stub_label_noise) {
            return Err(Error::config("augment.stub_label_noise", "must lie in [0, 1]"));
        }
        if !a.label_names.is_empty() && a.label_names.len() != classes.len() {
            return Err(Error::config(
                "augment.label_names",
                format!("{} names for {} classes", a.label_names.len(), classes.len()),
            ));
        }
        if self.eval.folds < 2 {
            return Err(Error::config("eval.folds", "need at least 2 folds"));
        }
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(Error::config("eval.threshold", "must lie in (0, 1)"));
        }
        if self.synthetic.prevalence.len() != ClassSet::default().len() {
            return Err(Error::config(
                "synthetic.prevalence",
                "needs one entry per default class",
            ));
        }
        Ok(())
    }

    pub fn classes(&self) -> Result<ClassSet> {
        ClassSet::new(self.data.classes.iter().cloned()).map_err(|e| Error::config("data.classes", e.to_string()))
    }

    pub fn shape(&self) -> SentenceShape {
        SentenceShape {
            max_q: self.encoder.max_q_sentences,
            max_a: self.encoder.max_a_sentences,
        }
    }

    pub fn parse_options(&self) -> Result<ParseOptions> {
        Ok(ParseOptions {
            classes: self.classes()?,
            max_answers: self.data.max_answers,
            lenient: false,
        })
    }

    pub fn qa_config(&self, num_classes: usize) -> QaConfig {
        QaConfig {
            kernels: self.model.kernels.iter().map(|k| (k[0], k[1])).collect(),
            filters: self.model.filters,
            pool: self.model.pool,
            dropout: self.model.dropout,
            activation: self.model.activation,
            ..QaConfig::new(self.encoder.dim, self.shape(), num_classes)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.trainer;
        TrainConfig {
            batch_size: t.batch_size,
            adam: t.adam,
            schedule: t.schedule,
            max_epochs: t.max_epochs,
            min_epochs: t.min_epochs,
            loss_epsilon: t.loss_epsilon,
            generation_epsilon: t.generation_epsilon,
            max_generations: t.max_generations,
            validation_fraction: t.validation_fraction,
            tau: self.loss.tau,
            prob_clamp: self.loss.prob_clamp,
            weights: LossWeights {
                lambda_label: self.loss.lambda_label,
                lambda_unlabel: self.loss.lambda_unlabel,
                lambda_quality: self.loss.lambda_quality,
            },
        }
    }

    pub fn generation_config(&self) -> GenerationConfig {
        let a = &self.augment;
        GenerationConfig {
            batches: a.batches,
            per_batch: a.per_batch,
            few_shot: a.few_shot,
            max_in_flight: a.max_in_flight,
            minority_share: a.minority_share,
        }
    }

    pub fn label_names(&self) -> Result<Vec<String>> {
        if self.augment.label_names.is_empty() {
            Ok(default_label_names(&self.classes()?))
        } else {
            Ok(self.augment.label_names.clone())
        }
    }

    pub fn build_encoder(&self) -> Result<Box<dyn Encoder>> {
        let e = &self.encoder;
        match e.backend {
            EncoderBackend::Stub => Ok(Box::new(HashingEncoder::new(e.dim))),
            EncoderBackend::Transformer => {
                let client = JsonClient::new(
                    &e.base_url,
                    credential_from_env(&e.credential_env),
                    Duration::from_secs(e.timeout_secs),
                )?;
                Ok(Box::new(RemoteEncoder::new(client, e.model_id.clone(), e.dim)))
            }
        }
    }

    /// The configured generation backend; `audit` receives request and
    /// response bodies of the real backend.
    pub fn build_llm(&self, audit: Option<&Path>) -> Result<Box<dyn LlmClient>> {
        let a = &self.augment;
        match a.backend {
            LlmBackend::Stub => Ok(Box::new(StubLlm {
                seed: self.seed,
                label_noise: a.stub_label_noise,
            })),
            LlmBackend::Chat => {
                let c = ChatCompletionClient::from_env(
                    &a.base_url,
                    &a.model,
                    &a.credential_env,
                    a.temperature,
                    Duration::from_secs(a.timeout_secs),
                    audit,
                )?;
                Ok(Box::new(c))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the serialized configuration.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Writes `effective_config.toml` into `dir`.
    pub fn write_effective(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("effective_config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
