//! The four stages wired together: answer-aware self-training, pseudo
//! labeling, generation and selection of extra questions, and the final
//! question-only classifier on the fused set.

use serde::{Deserialize, Serialize};

use crate::augment::{self, AugCandidate, BatchAudit, LlmClient};
use crate::config::RunConfig;
use crate::data::{fuse, Dataset, DatasetKind, FuseOutcome};
use crate::encoder::{encode_dataset, question_embeddings, Encoder};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, evaluate, CvReport, MetricsReport, Pipeline};
use crate::q_model::{predict_dataset, train_q, QEpoch, QParams, TokenSource};
use crate::qa_model::QaConfig;
use crate::rng::derive_seed;
use crate::synthetic;
use crate::trainer::{predict_pseudo, self_train, GenerationHook, PseudoOutcome, SelfTrainOutcome};

/// Which stages feed the question model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Labeled data only.
    Supervised,
    /// Labeled plus fully confident pseudo-labeled data.
    SemiSupervised,
    /// Labeled, pseudo-labeled and selected generated data.
    Full,
}

impl Variant {
    fn uses_pseudo(self) -> bool {
        !matches!(self, Variant::Supervised)
    }

    fn uses_generated(self) -> bool {
        matches!(self, Variant::Full)
    }
}

/// Stage 1: warm-up and self-training of the answer-aware model.
pub fn train_qa(
    cfg: &RunConfig,
    encoder: &dyn Encoder,
    d_l: &Dataset,
    d_u: &Dataset,
    hook: &mut GenerationHook<'_>,
) -> Result<(QaConfig, SelfTrainOutcome)> {
    let qa = cfg.qa_config(d_l.classes().len());
    let enc_l = encode_dataset(encoder, d_l, qa.shape)?;
    let enc_u = encode_dataset(encoder, d_u, qa.shape)?;
    let outcome = self_train(
        d_l,
        &enc_l,
        d_u,
        &enc_u,
        &qa,
        &cfg.train_config(),
        derive_seed(cfg.seed, "stage-qa"),
        hook,
    )?;
    Ok((qa, outcome))
}

/// Stage 2: confident pseudo labels for the unlabeled pool.
pub fn pseudo_label(
    cfg: &RunConfig,
    encoder: &dyn Encoder,
    qa: &QaConfig,
    params: &crate::qa_model::QaParams,
    d_u: &Dataset,
) -> Result<PseudoOutcome> {
    let enc_u = encode_dataset(encoder, d_u, qa.shape)?;
    predict_pseudo(params, qa, d_u, &enc_u, cfg.loss.tau, cfg.loss.prob_clamp)
}

/// Stage 3a: candidate generation.
pub fn generate(cfg: &RunConfig, llm: &dyn LlmClient, d_l: &Dataset) -> Result<augment::GenerationOutcome> {
    augment::generate_candidates(
        llm,
        d_l,
        &cfg.generation_config(),
        &cfg.label_names()?,
        derive_seed(cfg.seed, "stage-augment"),
    )
}

/// Stage 3b: scoring of generated samples against the labeled set.
pub fn score(cfg: &RunConfig, encoder: &dyn Encoder, generated: &Dataset, d_l: &Dataset) -> Result<Vec<AugCandidate>> {
    let to_vecs = |v: Vec<ndarray::Array1<f64>>| v.into_iter().map(|a| a.to_vec()).collect::<Vec<_>>();
    let gen_emb = to_vecs(question_embeddings(encoder, generated)?);
    let lab_emb = to_vecs(question_embeddings(encoder, d_l)?);
    augment::score_candidates(
        generated,
        &gen_emb,
        d_l,
        &lab_emb,
        cfg.augment.k,
        cfg.augment.delta,
        cfg.augment.eta,
    )
}

fn q_encoder<'a>(cfg: &RunConfig, encoder: &'a dyn Encoder) -> Option<&'a dyn Encoder> {
    match cfg.q_model.token_source {
        TokenSource::Encoder => Some(encoder),
        TokenSource::Learned => None,
    }
}

/// Stage 4: question-only classifier.
pub fn train_question_model(cfg: &RunConfig, encoder: &dyn Encoder, d_f: &Dataset) -> Result<(QParams, Vec<QEpoch>)> {
    train_q(
        d_f,
        &cfg.q_model,
        q_encoder(cfg, encoder),
        derive_seed(cfg.seed, "stage-q"),
    )
}

pub fn predict_questions(
    cfg: &RunConfig,
    encoder: &dyn Encoder,
    params: &QParams,
    d: &Dataset,
) -> Result<Vec<Vec<f64>>> {
    predict_dataset(params, &cfg.q_model, d, q_encoder(cfg, encoder))
}

pub struct PipelineRun {
    pub qa: Option<(QaConfig, SelfTrainOutcome)>,
    pub pseudo: Option<PseudoOutcome>,
    pub generation_audit: Vec<BatchAudit>,
    pub candidates: Vec<AugCandidate>,
    pub selected: Dataset,
    pub fused: FuseOutcome,
    pub q_params: QParams,
    pub q_history: Vec<QEpoch>,
}

/// Runs the stages a variant needs, in process.
pub fn run(
    cfg: &RunConfig,
    encoder: &dyn Encoder,
    llm: &dyn LlmClient,
    d_l: &Dataset,
    d_u: &Dataset,
    variant: Variant,
) -> Result<PipelineRun> {
    cfg.validate()?;
    let classes = d_l.classes().clone();
    let (qa, pseudo) = if variant.uses_pseudo() && !d_u.is_empty() {
        let (qa, outcome) = train_qa(cfg, encoder, d_l, d_u, &mut |_, _| Ok(()))?;
        let pseudo = pseudo_label(cfg, encoder, &qa, &outcome.params, d_u)?;
        (Some((qa, outcome)), Some(pseudo))
    } else {
        (None, None)
    };
    let (generation_audit, candidates, selected) = if variant.uses_generated() {
        let gen = generate(cfg, llm, d_l)?;
        let cands = score(cfg, encoder, &gen.candidates, d_l)?;
        let selected = augment::select(&cands, d_l)?;
        (gen.audit, cands, selected)
    } else {
        (
            vec![],
            vec![],
            Dataset::empty(DatasetKind::SelectedAugmented, classes.clone()),
        )
    };
    let empty_pseudo = Dataset::empty(DatasetKind::Pseudo, classes);
    let d_u_star = pseudo.as_ref().map_or(&empty_pseudo, |p| &p.dataset);
    let fused = fuse(d_l, d_u_star, &selected)?;
    log::info!(
        "fused set: {} samples ({} labeled, {} pseudo left out as partial, {} generated)",
        fused.dataset.len(),
        d_l.len(),
        fused.excluded_partial,
        selected.len()
    );
    let (q_params, q_history) = train_question_model(cfg, encoder, &fused.dataset)?;
    Ok(PipelineRun {
        qa,
        pseudo,
        generation_audit,
        candidates,
        selected,
        fused,
        q_params,
        q_history,
    })
}

/// Cross-validation over the labeled set; the unlabeled pool is shared by
/// every fold.
pub struct CvPipeline<'a> {
    pub cfg: &'a RunConfig,
    pub encoder: &'a dyn Encoder,
    pub llm: &'a dyn LlmClient,
    pub unlabeled: &'a Dataset,
    pub variant: Variant,
}

impl Pipeline for CvPipeline<'_> {
    fn run_fold(&self, fold: usize, train: &Dataset, test: &Dataset) -> Result<Vec<Vec<f64>>> {
        let mut cfg = self.cfg.clone();
        cfg.seed = derive_seed(self.cfg.seed, &format!("fold-{fold}"));
        let run = run(&cfg, self.encoder, self.llm, train, self.unlabeled, self.variant)?;
        predict_questions(&cfg, self.encoder, &run.q_params, test)
    }
}

pub fn cross_validate_pipeline(
    cfg: &RunConfig,
    encoder: &dyn Encoder,
    llm: &dyn LlmClient,
    d_l: &Dataset,
    d_u: &Dataset,
    variant: Variant,
) -> Result<CvReport> {
    let p = CvPipeline {
        cfg,
        encoder,
        llm,
        unlabeled: d_u,
        variant,
    };
    let mut report = cross_validate(&p, d_l, cfg.eval.folds, cfg.seed, cfg.eval.threshold)?;
    if variant.uses_pseudo() {
        report.notes.push(format!(
            "the unlabeled pool ({} samples) is shared by all folds; only the labeled set is split",
            d_u.len()
        ));
    }
    report.notes.push(format!("variant: {variant:?}"));
    Ok(report)
}

/// Held-out metrics of the three variants on the synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmokeReport {
    pub seed: u64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub pseudo_admitted: usize,
    pub pseudo_all_confident: usize,
    pub generated: usize,
    pub selected: usize,
    pub fused: usize,
    pub supervised: MetricsReport,
    pub semi_supervised: MetricsReport,
    pub full: MetricsReport,
}

/// End-to-end run on generated data with the stub encoder and stub LLM.
/// `cfg.encoder` and `cfg.augment` backends are honoured, so callers pick
/// stubs through the config.
pub fn smoke(cfg: &RunConfig) -> Result<SmokeReport> {
    cfg.validate()?;
    let corpus = synthetic::generate(&cfg.synthetic, derive_seed(cfg.seed, "smoke-corpus"))?;
    let encoder = cfg.build_encoder()?;
    let llm = cfg.build_llm(None)?;
    let (d_l, d_u, test) = (&corpus.labeled, &corpus.unlabeled, &corpus.test);
    let classes = d_l.classes().clone();
    let y_test = test.labels();
    let report = |params: &QParams| -> Result<MetricsReport> {
        let probs = predict_questions(cfg, encoder.as_ref(), params, test)?;
        evaluate(&classes, &y_test, &probs, cfg.eval.threshold)
    };

    // The full run trains everything once; the other variants reuse its
    // pseudo labels and differ only in what the question model sees.
    let full = run(cfg, encoder.as_ref(), llm.as_ref(), d_l, d_u, Variant::Full)?;
    let pseudo = full
        .pseudo
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("no pseudo stage".into()))?;
    let empty_sel = Dataset::empty(DatasetKind::SelectedAugmented, classes.clone());
    let empty_pseudo = Dataset::empty(DatasetKind::Pseudo, classes.clone());
    let ssl_set = fuse(d_l, &pseudo.dataset, &empty_sel)?.dataset;
    let sup_set = fuse(d_l, &empty_pseudo, &empty_sel)?.dataset;
    let (ssl_params, _) = train_question_model(cfg, encoder.as_ref(), &ssl_set)?;
    let (sup_params, _) = train_question_model(cfg, encoder.as_ref(), &sup_set)?;

    Ok(SmokeReport {
        seed: cfg.seed,
        n_labeled: d_l.len(),
        n_unlabeled: d_u.len(),
        n_test: test.len(),
        pseudo_admitted: pseudo.dataset.len(),
        pseudo_all_confident: pseudo.all_confident.iter().filter(|&&b| b).count(),
        generated: full.candidates.len(),
        selected: full.selected.len(),
        fused: full.fused.dataset.len(),
        supervised: report(&sup_params)?,
        semi_supervised: report(&ssl_params)?,
        full: report(&full.q_params)?,
    })
}
