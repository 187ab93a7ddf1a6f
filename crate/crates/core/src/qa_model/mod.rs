//! Question–answer classifier.
//!
//! For every answer the question and answer sentence matrices form an
//! interaction grid that is scanned by 2D kernels of several sizes, max
//! pooled to a fixed `P × P` map and flattened. Question-guided attention
//! weighs the answers; the weighted interaction features and answer vectors
//! are concatenated with the question vector and mapped to one sigmoid
//! probability per class.
//!
//! Since every grid cell is `[q_i; a_j]`, a kernel response splits into a
//! question part that depends only on the row and an answer part that
//! depends only on the column. The forward pass evaluates the two parts
//! separately; [`interaction::apply_interaction_kernels`] is the direct
//! form and the tests hold them equal.

pub mod attention;
pub mod interaction;
mod objective;

pub use objective::{batch_objective, Target};

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodedSample, SentenceShape};
use crate::error::{Error, Result};
use crate::losses::sigmoid;
use crate::optim::ParamSet;
use crate::rng::Rng;

use interaction::adaptive_bins;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn passes(self, x: f64) -> bool {
        match self {
            Activation::Relu => x > 0.0,
            Activation::Identity => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaConfig {
    pub dim: usize,
    pub shape: SentenceShape,
    pub num_classes: usize,
    /// Kernel sizes `(rows over question sentences, columns over answer sentences)`.
    pub kernels: Vec<(usize, usize)>,
    /// Filters per kernel size.
    pub filters: usize,
    /// Side of the pooled map.
    pub pool: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl QaConfig {
    pub fn new(dim: usize, shape: SentenceShape, num_classes: usize) -> Self {
        Self {
            dim,
            shape,
            num_classes,
            kernels: vec![(1, 1), (1, 2), (2, 1), (2, 2)],
            filters: 8,
            pool: 4,
            dropout: 0.4,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: String| Err(Error::config(f, m));
        if self.dim == 0 {
            return err("encoder.dim", "must be positive".into());
        }
        if self.num_classes == 0 {
            return err("data.classes", "need at least one class".into());
        }
        if self.kernels.is_empty() {
            return err("model.kernels", "kernel set is empty".into());
        }
        if self.kernels.iter().any(|&(h, w)| h == 0 || w == 0) {
            return err("model.kernels", "kernel sizes must be positive".into());
        }
        let max_h = self.kernels.iter().map(|k| k.0).max().unwrap_or(0);
        let max_w = self.kernels.iter().map(|k| k.1).max().unwrap_or(0);
        if self.shape.max_q < max_h {
            return err(
                "encoder.max_q_sentences",
                format!("{} is smaller than the tallest kernel ({max_h})", self.shape.max_q),
            );
        }
        if self.shape.max_a < max_w {
            return err(
                "encoder.max_a_sentences",
                format!("{} is smaller than the widest kernel ({max_w})", self.shape.max_a),
            );
        }
        if self.filters == 0 {
            return err("model.filters", "must be positive".into());
        }
        if self.pool == 0 {
            return err("model.pool", "must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err("model.dropout", format!("must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Length of one answer's interaction feature vector.
    pub fn interaction_len(&self) -> usize {
        self.kernels.len() * self.filters * self.pool * self.pool
    }

    pub fn concat_len(&self) -> usize {
        2 * self.dim + self.interaction_len()
    }
}

/// One kernel size: `weight` is `F × height × width × 2d`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank {
    pub height: usize,
    pub width: usize,
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaParams {
    pub kernels: Vec<KernelBank>,
    /// Bilinear attention form, `d × d`.
    pub w_s: Array2<f64>,
    /// Attention bias (one element).
    pub b_s: Array1<f64>,
    /// `|C| × concat_len`.
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

fn uniform_fill(rng: &mut Rng, bound: f64, n: usize) -> Vec<f64> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl QaParams {
    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn init(cfg: &QaConfig, rng: &mut Rng) -> Self {
        let d = cfg.dim;
        let kernels = cfg
            .kernels
            .iter()
            .map(|&(h, w)| {
                let fan_in = (h * w * 2 * d) as f64;
                let bound = 1.0 / fan_in.sqrt();
                let shape = (cfg.filters, h, w, 2 * d);
                KernelBank {
                    height: h,
                    width: w,
                    weight: Array4::from_shape_vec(shape, uniform_fill(rng, bound, cfg.filters * h * w * 2 * d))
                        .expect("shape matches"),
                    bias: Array1::from(uniform_fill(rng, bound, cfg.filters)),
                }
            })
            .collect();
        let att = 1.0 / (d as f64).sqrt();
        let head = 1.0 / (cfg.concat_len() as f64).sqrt();
        Self {
            kernels,
            w_s: Array2::from_shape_vec((d, d), uniform_fill(rng, att, d * d)).expect("shape matches"),
            b_s: Array1::zeros(1),
            head_w: Array2::from_shape_vec(
                (cfg.num_classes, cfg.concat_len()),
                uniform_fill(rng, head, cfg.num_classes * cfg.concat_len()),
            )
            .expect("shape matches"),
            head_b: Array1::zeros(cfg.num_classes),
        }
    }

    /// Zero parameters with the geometry of `cfg`.
    pub fn zeros(cfg: &QaConfig) -> Self {
        let d = cfg.dim;
        Self {
            kernels: cfg
                .kernels
                .iter()
                .map(|&(h, w)| KernelBank {
                    height: h,
                    width: w,
                    weight: Array4::zeros((cfg.filters, h, w, 2 * d)),
                    bias: Array1::zeros(cfg.filters),
                })
                .collect(),
            w_s: Array2::zeros((d, d)),
            b_s: Array1::zeros(1),
            head_w: Array2::zeros((cfg.num_classes, cfg.concat_len())),
            head_b: Array1::zeros(cfg.num_classes),
        }
    }

    /// Names and shapes in [`ParamSet::tensors`] order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for k in &self.kernels {
            out.push((
                format!("kernel_{}x{}.weight", k.height, k.width),
                k.weight.shape().to_vec(),
            ));
            out.push((format!("kernel_{}x{}.bias", k.height, k.width), k.bias.shape().to_vec()));
        }
        out.push(("attention.w_s".into(), self.w_s.shape().to_vec()));
        out.push(("attention.b_s".into(), self.b_s.shape().to_vec()));
        out.push(("head.weight".into(), self.head_w.shape().to_vec()));
        out.push(("head.bias".into(), self.head_b.shape().to_vec()));
        out
    }
}

impl ParamSet for QaParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for k in &self.kernels {
            out.push(k.weight.as_slice().expect("standard layout"));
            out.push(k.bias.as_slice().expect("standard layout"));
        }
        out.push(self.w_s.as_slice().expect("standard layout"));
        out.push(self.b_s.as_slice().expect("standard layout"));
        out.push(self.head_w.as_slice().expect("standard layout"));
        out.push(self.head_b.as_slice().expect("standard layout"));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for k in &mut self.kernels {
            out.push(k.weight.as_slice_mut().expect("standard layout"));
            out.push(k.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.w_s.as_slice_mut().expect("standard layout"));
        out.push(self.b_s.as_slice_mut().expect("standard layout"));
        out.push(self.head_w.as_slice_mut().expect("standard layout"));
        out.push(self.head_b.as_slice_mut().expect("standard layout"));
        out
    }
}

/// Kernel weights summed over the axis that a grid half does not vary along:
/// `q_part[f, di, :] = Σ_dj W[f, di, dj, :d]`, `a_part[f, dj, :] = Σ_di W[f, di, dj, d:]`.
struct Collapsed {
    q_part: Array3<f64>,
    a_part: Array3<f64>,
}

fn collapse(bank: &KernelBank, d: usize) -> Collapsed {
    let (f_count, kh, kw, _) = bank.weight.dim();
    let mut q_part = Array3::zeros((f_count, kh, d));
    let mut a_part = Array3::zeros((f_count, kw, d));
    for f in 0..f_count {
        for di in 0..kh {
            for dj in 0..kw {
                for c in 0..d {
                    q_part[[f, di, c]] += bank.weight[[f, di, dj, c]];
                    a_part[[f, dj, c]] += bank.weight[[f, di, dj, d + c]];
                }
            }
        }
    }
    Collapsed { q_part, a_part }
}

/// Per-position partial responses: `out[f, p] = Σ_o part[f, o, :] · rows[p + o, :]`.
fn partial_response(part: &Array3<f64>, rows: ArrayView2<f64>, positions: usize) -> Array2<f64> {
    let (f_count, k, _) = part.dim();
    let mut out = Array2::zeros((f_count, positions));
    for f in 0..f_count {
        for p in 0..positions {
            let mut acc = 0.0;
            for o in 0..k {
                acc += part.slice(ndarray::s![f, o, ..]).dot(&rows.row(p + o));
            }
            out[[f, p]] = acc;
        }
    }
    out
}

#[derive(Clone, Debug)]
struct AnswerBankCache {
    /// Pre-activation response, `F × rows × cols`.
    pre: Array3<f64>,
    /// Arg-max cell of every pooled output, in flattened output order.
    argmax: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
struct Cache {
    /// `answers × banks`.
    banks: Vec<Vec<AnswerBankCache>>,
    /// Inverted-dropout multipliers per answer (training only).
    dropout: Vec<Option<Vec<f64>>>,
}

/// Everything the forward pass computed for one sample.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Relevance scores `s_k`.
    pub scores: Vec<f64>,
    /// Attention weights over the sample's answers.
    pub weights: Vec<f64>,
    /// Per-answer interaction features (after dropout in training mode).
    pub interaction: Vec<Array1<f64>>,
    /// Attention-weighted interaction features.
    pub aggregate: Array1<f64>,
    /// Attention-weighted answer vectors.
    pub answer_repr: Array1<f64>,
    pub concat: Array1<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Convolution output grid per kernel size.
    pub conv_shapes: Vec<(usize, usize)>,
    pub pool_shape: (usize, usize),
    cache: Cache,
}

impl ForwardTrace {
    /// Smallest distance of this evaluation point from a non-differentiable
    /// configuration: a pooling tie among active cells, a ReLU switching
    /// point at a pooled cell, or a tie for the largest attention weight.
    pub fn kink_margin(&self, activation: Activation) -> f64 {
        let mut margin = f64::INFINITY;
        for per_answer in &self.cache.banks {
            for bank in per_answer {
                let (f_count, rows, cols) = bank.pre.dim();
                let pool = (self.pool_shape.0, self.pool_shape.1);
                let row_bins = adaptive_bins(rows, pool.0);
                let col_bins = adaptive_bins(cols, pool.1);
                for f in 0..f_count {
                    for &(r0, r1) in &row_bins {
                        for &(c0, c1) in &col_bins {
                            let mut vals: Vec<f64> = Vec::new();
                            for r in r0..r1 {
                                for c in c0..c1 {
                                    vals.push(bank.pre[[f, r, c]]);
                                }
                            }
                            vals.sort_by(|a, b| b.total_cmp(a));
                            let top = vals[0];
                            let relu = activation == Activation::Relu;
                            if relu {
                                margin = margin.min(top.abs());
                            }
                            if vals.len() > 1 && (!relu || top > 0.0) {
                                margin = margin.min(top - vals[1]);
                            }
                        }
                    }
                }
            }
        }
        if self.weights.len() > 1 {
            let mut w = self.weights.clone();
            w.sort_by(|a, b| b.total_cmp(a));
            margin = margin.min(w[0] - w[1]);
        }
        margin
    }
}

fn check_input(cfg: &QaConfig, x: &EncodedSample) -> Result<()> {
    let d = cfg.dim;
    if x.q_doc.len() != d || x.q_sent.dim() != (cfg.shape.max_q, d) {
        return Err(Error::Shape(format!(
            "question encoding {:?}/{} does not match m={} d={d}",
            x.q_sent.dim(),
            x.q_doc.len(),
            cfg.shape.max_q
        )));
    }
    if x.answers.is_empty() {
        return Err(Error::InvalidInput("sample has no answers to attend over".into()));
    }
    for a in &x.answers {
        if a.doc.len() != d || a.sent.dim() != (cfg.shape.max_a, d) {
            return Err(Error::Shape(format!(
                "answer encoding {:?} does not match n={} d={d}",
                a.sent.dim(),
                cfg.shape.max_a
            )));
        }
    }
    Ok(())
}

/// Inference-mode forward pass (no dropout).
pub fn forward(params: &QaParams, cfg: &QaConfig, x: &EncodedSample) -> Result<ForwardTrace> {
    forward_impl(params, cfg, x, None)
}

/// Training-mode forward pass: dropout on the pooled interaction features
/// when `rng` is given.
pub fn forward_train(
    params: &QaParams,
    cfg: &QaConfig,
    x: &EncodedSample,
    rng: Option<&mut Rng>,
) -> Result<ForwardTrace> {
    forward_impl(params, cfg, x, rng)
}

fn forward_impl(
    params: &QaParams,
    cfg: &QaConfig,
    x: &EncodedSample,
    mut rng: Option<&mut Rng>,
) -> Result<ForwardTrace> {
    check_input(cfg, x)?;
    let d = cfg.dim;
    let (m, n) = (cfg.shape.max_q, cfg.shape.max_a);
    let pool = cfg.pool;
    let collapsed: Vec<Collapsed> = params.kernels.iter().map(|b| collapse(b, d)).collect();
    let q_resp: Vec<Array2<f64>> = params
        .kernels
        .iter()
        .zip(&collapsed)
        .map(|(b, c)| partial_response(&c.q_part, x.q_sent.view(), m - b.height + 1))
        .collect();

    let mut interaction = Vec::with_capacity(x.answers.len());
    let mut bank_caches = Vec::with_capacity(x.answers.len());
    let mut dropout_masks = Vec::with_capacity(x.answers.len());
    for a in &x.answers {
        let mut feats = Vec::with_capacity(cfg.interaction_len());
        let mut caches = Vec::with_capacity(params.kernels.len());
        for ((bank, col), qr) in params.kernels.iter().zip(&collapsed).zip(&q_resp) {
            let (rows, cols) = (m - bank.height + 1, n - bank.width + 1);
            let ar = partial_response(&col.a_part, a.sent.view(), cols);
            let f_count = bank.bias.len();
            let mut pre = Array3::zeros((f_count, rows, cols));
            for f in 0..f_count {
                for r in 0..rows {
                    for c in 0..cols {
                        pre[[f, r, c]] = bank.bias[f] + qr[[f, r]] + ar[[f, c]];
                    }
                }
            }
            let row_bins = adaptive_bins(rows, pool);
            let col_bins = adaptive_bins(cols, pool);
            let mut argmax = Vec::with_capacity(f_count * pool * pool);
            for f in 0..f_count {
                for &(r0, r1) in &row_bins {
                    for &(c0, c1) in &col_bins {
                        let mut best = (r0, c0);
                        for r in r0..r1 {
                            for c in c0..c1 {
                                if pre[[f, r, c]] > pre[[f, best.0, best.1]] {
                                    best = (r, c);
                                }
                            }
                        }
                        argmax.push(best);
                        feats.push(cfg.activation.apply(pre[[f, best.0, best.1]]));
                    }
                }
            }
            caches.push(AnswerBankCache { pre, argmax });
        }
        let mask = match rng.as_deref_mut() {
            Some(r) if cfg.dropout > 0.0 => {
                let keep = 1.0 - cfg.dropout;
                let mask: Vec<f64> = (0..feats.len())
                    .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                feats.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                Some(mask)
            }
            _ => None,
        };
        interaction.push(Array1::from(feats));
        bank_caches.push(caches);
        dropout_masks.push(mask);
    }

    let a_docs: Vec<_> = x.answers.iter().map(|a| a.doc.view()).collect();
    let real = vec![true; a_docs.len()];
    let scores: Vec<f64> = a_docs
        .iter()
        .map(|a| attention::relevance(x.q_doc.view(), *a, &params.w_s, params.b_s[0]))
        .collect();
    let weights = attention::masked_softmax(&scores, &real)?;
    let inter_views: Vec<_> = interaction.iter().map(|v| v.view()).collect();
    let aggregate = attention::aggregate_answers(&weights, &inter_views)?;
    let answer_repr = attention::aggregate_answers(&weights, &a_docs)?;

    let mut concat = Vec::with_capacity(cfg.concat_len());
    concat.extend(x.q_doc.iter());
    concat.extend(aggregate.iter());
    concat.extend(answer_repr.iter());
    let concat = Array1::from(concat);
    let logits: Vec<f64> = (params.head_w.dot(&concat) + &params.head_b).to_vec();
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numerical("non-finite logits".into()));
    }
    let probs = logits.iter().map(|&z| sigmoid(z)).collect();

    Ok(ForwardTrace {
        scores,
        weights,
        interaction,
        aggregate,
        answer_repr,
        concat,
        logits,
        probs,
        conv_shapes: params
            .kernels
            .iter()
            .map(|b| (m - b.height + 1, n - b.width + 1))
            .collect(),
        pool_shape: (pool, pool),
        cache: Cache {
            banks: bank_caches,
            dropout: dropout_masks,
        },
    })
}

/// Accumulates into `grads` the gradient of a loss whose partial derivatives
/// are `dlogits` (per class) and `dweights` (per answer, added to whatever
/// flows back from the head).
pub fn backward(
    params: &QaParams,
    cfg: &QaConfig,
    x: &EncodedSample,
    trace: &ForwardTrace,
    dlogits: &[f64],
    dweights: &[f64],
    grads: &mut QaParams,
) {
    let d = cfg.dim;
    let l = cfg.interaction_len();
    let (m, n) = (cfg.shape.max_q, cfg.shape.max_a);
    let pool = cfg.pool;
    let k_count = x.answers.len();

    // Head.
    let mut dconcat = Array1::<f64>::zeros(cfg.concat_len());
    for (c, &g) in dlogits.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grads.head_b[c] += g;
        grads.head_w.row_mut(c).scaled_add(g, &trace.concat);
        dconcat.scaled_add(g, &params.head_w.row(c));
    }
    let d_agg = dconcat.slice(ndarray::s![d..d + l]);
    let d_ans = dconcat.slice(ndarray::s![d + l..]);

    // Attention.
    let dw: Vec<f64> = (0..k_count)
        .map(|k| {
            dweights.get(k).copied().unwrap_or(0.0) + d_agg.dot(&trace.interaction[k]) + d_ans.dot(&x.answers[k].doc)
        })
        .collect();
    let mean_dw: f64 = trace.weights.iter().zip(&dw).map(|(w, g)| w * g).sum();
    for (k, &g) in dw.iter().enumerate() {
        let ds = trace.weights[k] * (g - mean_dw);
        let du = ds * (1.0 - trace.scores[k] * trace.scores[k]);
        if du == 0.0 {
            continue;
        }
        grads.b_s[0] += du;
        let a = &x.answers[k].doc;
        for i in 0..d {
            let qi = x.q_doc[i] * du;
            if qi != 0.0 {
                grads.w_s.row_mut(i).scaled_add(qi, a);
            }
        }
    }

    // Interaction kernels.
    let mut offset = 0;
    for (b, bank) in params.kernels.iter().enumerate() {
        let f_count = bank.bias.len();
        let (kh, kw) = (bank.height, bank.width);
        let (rows, cols) = (m - kh + 1, n - kw + 1);
        let mut d_q_resp = Array2::<f64>::zeros((f_count, rows));
        let mut d_a_part = Array3::<f64>::zeros((f_count, kw, d));
        for k in 0..k_count {
            let cache = &trace.cache.banks[k][b];
            let mask = trace.cache.dropout[k].as_deref();
            let mut d_a_resp = Array2::<f64>::zeros((f_count, cols));
            let mut any = false;
            for f in 0..f_count {
                for cell in 0..pool * pool {
                    let idx = f * pool * pool + cell;
                    let mut g = trace.weights[k] * d_agg[offset + idx];
                    if let Some(mask) = mask {
                        g *= mask[offset + idx];
                    }
                    if g == 0.0 {
                        continue;
                    }
                    let (r, c) = cache.argmax[idx];
                    if !cfg.activation.passes(cache.pre[[f, r, c]]) {
                        continue;
                    }
                    grads.kernels[b].bias[f] += g;
                    d_q_resp[[f, r]] += g;
                    d_a_resp[[f, c]] += g;
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let a_sent = &x.answers[k].sent;
            for f in 0..f_count {
                for c in 0..cols {
                    let g = d_a_resp[[f, c]];
                    if g == 0.0 {
                        continue;
                    }
                    for dj in 0..kw {
                        d_a_part
                            .slice_mut(ndarray::s![f, dj, ..])
                            .scaled_add(g, &a_sent.row(c + dj));
                    }
                }
            }
        }
        let mut d_q_part = Array3::<f64>::zeros((f_count, kh, d));
        for f in 0..f_count {
            for r in 0..rows {
                let g = d_q_resp[[f, r]];
                if g == 0.0 {
                    continue;
                }
                for di in 0..kh {
                    d_q_part
                        .slice_mut(ndarray::s![f, di, ..])
                        .scaled_add(g, &x.q_sent.row(r + di));
                }
            }
        }
        let gw = &mut grads.kernels[b].weight;
        for f in 0..f_count {
            for di in 0..kh {
                for dj in 0..kw {
                    for c in 0..d {
                        gw[[f, di, dj, c]] += d_q_part[[f, di, c]];
                        gw[[f, di, dj, d + c]] += d_a_part[[f, dj, c]];
                    }
                }
            }
        }
        offset += f_count * pool * pool;
    }
}

/// Class probabilities for a batch of encoded samples.
pub fn predict_probs(params: &QaParams, cfg: &QaConfig, xs: &[EncodedSample]) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    xs.par_iter()
        .map(|x| forward(params, cfg, x).map(|t| t.probs))
        .collect()
}
