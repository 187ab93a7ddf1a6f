//! Question-only classifier: token vectors → bidirectional LSTM → pooling
//! over time → linear head → per-class sigmoid. Trained with two-sided cross
//! entropy on the fused dataset.

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelVector};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::losses::{bce, bce_grad_logit, sigmoid};
use crate::optim::{Adam, AdamConfig, LinearSchedule, ParamSet};
use crate::rng::{self, stable_hash, Rng};
use crate::text::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    /// Hashed token ids into a trained embedding table.
    Learned,
    /// Frozen per-token vectors from the text encoder.
    Encoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Max,
    Mean,
    /// Final forward state joined with the first backward state.
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QModelConfig {
    pub token_source: TokenSource,
    pub vocab_buckets: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub max_tokens: usize,
    pub pooling: Pooling,
    pub threshold: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub schedule: LinearSchedule,
    pub max_epochs: usize,
    pub min_epochs: usize,
    pub loss_epsilon: f64,
    pub prob_clamp: f64,
}

impl Default for QModelConfig {
    fn default() -> Self {
        Self {
            token_source: TokenSource::Learned,
            vocab_buckets: 8192,
            embed_dim: 64,
            hidden: 256,
            max_tokens: 128,
            pooling: Pooling::Max,
            threshold: 0.5,
            batch_size: 64,
            adam: AdamConfig::default(),
            schedule: LinearSchedule::default(),
            max_epochs: 50,
            min_epochs: 3,
            loss_epsilon: 1e-3,
            prob_clamp: crate::losses::DEFAULT_PROB_CLAMP,
        }
    }
}

impl QModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("q_model.vocab_buckets", self.vocab_buckets),
            ("q_model.embed_dim", self.embed_dim),
            ("q_model.hidden", self.hidden),
            ("q_model.max_tokens", self.max_tokens),
            ("q_model.batch_size", self.batch_size),
            ("q_model.max_epochs", self.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("q_model.threshold", "must lie in (0, 1)"));
        }
        if !(self.loss_epsilon.is_finite() && self.loss_epsilon > 0.0) {
            return Err(Error::config("q_model.loss_epsilon", "must be finite and > 0"));
        }
        if !(self.adam.learning_rate.is_finite() && self.adam.learning_rate > 0.0) {
            return Err(Error::config("q_model.adam.learning_rate", "must be finite and > 0"));
        }
        if self.min_epochs > self.max_epochs {
            return Err(Error::config("q_model.min_epochs", "exceeds q_model.max_epochs"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `4H × input`, gate order input, forget, cell, output.
    pub w_x: Array2<f64>,
    /// `4H × H`.
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QParams {
    /// `vocab × embed_dim` for learned tokens; zero rows otherwise.
    pub embed: Array2<f64>,
    pub forward: LstmParams,
    pub backward: LstmParams,
    /// `|C| × 2H`.
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

fn uniform(shape: (usize, usize), bound: f64, rng: &mut Rng) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}

impl LstmParams {
    fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self {
            w_x: uniform((4 * hidden, input), bound, rng),
            w_h: uniform((4 * hidden, hidden), bound, rng),
            b,
        }
    }
}

impl QParams {
    /// `input_dim` is the token-vector width (`embed_dim`, or the encoder
    /// dimension for encoder tokens).
    pub fn init(cfg: &QModelConfig, input_dim: usize, classes: usize, rng: &mut Rng) -> Self {
        let embed = match cfg.token_source {
            TokenSource::Learned => uniform((cfg.vocab_buckets, input_dim), 0.1, rng),
            TokenSource::Encoder => Array2::zeros((0, input_dim)),
        };
        let h = cfg.hidden;
        Self {
            embed,
            forward: LstmParams::init(input_dim, h, rng),
            backward: LstmParams::init(input_dim, h, rng),
            head_w: uniform((classes, 2 * h), 1.0 / (2.0 * h as f64).sqrt(), rng),
            head_b: Array1::zeros(classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.forward.w_x.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.forward.w_h.ncols()
    }

    pub fn classes(&self) -> usize {
        self.head_b.len()
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![("embed".to_string(), self.embed.shape().to_vec())];
        for (dir, p) in [("forward", &self.forward), ("backward", &self.backward)] {
            out.push((format!("lstm.{dir}.w_x"), p.w_x.shape().to_vec()));
            out.push((format!("lstm.{dir}.w_h"), p.w_h.shape().to_vec()));
            out.push((format!("lstm.{dir}.b"), p.b.shape().to_vec()));
        }
        out.push(("head.weight".into(), self.head_w.shape().to_vec()));
        out.push(("head.bias".into(), self.head_b.shape().to_vec()));
        out
    }
}

impl ParamSet for QParams {
    fn tensors(&self) -> Vec<&[f64]> {
        fn sl(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        vec![
            sl(&self.embed),
            sl(&self.forward.w_x),
            sl(&self.forward.w_h),
            self.forward.b.as_slice().expect("standard layout"),
            sl(&self.backward.w_x),
            sl(&self.backward.w_h),
            self.backward.b.as_slice().expect("standard layout"),
            sl(&self.head_w),
            self.head_b.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.embed.as_slice_mut().expect("standard layout"),
            self.forward.w_x.as_slice_mut().expect("standard layout"),
            self.forward.w_h.as_slice_mut().expect("standard layout"),
            self.forward.b.as_slice_mut().expect("standard layout"),
            self.backward.w_x.as_slice_mut().expect("standard layout"),
            self.backward.w_h.as_slice_mut().expect("standard layout"),
            self.backward.b.as_slice_mut().expect("standard layout"),
            self.head_w.as_slice_mut().expect("standard layout"),
            self.head_b.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// A tokenized question ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub enum QInput {
    Ids(Vec<usize>),
    Vectors(Array2<f64>),
}

impl QInput {
    fn len(&self) -> usize {
        match self {
            QInput::Ids(v) => v.len(),
            QInput::Vectors(m) => m.nrows(),
        }
    }
}

/// Tokenizes and truncates a question. Encoder tokens need `encoder`.
pub fn prepare(text: &str, cfg: &QModelConfig, encoder: Option<&dyn Encoder>) -> Result<QInput> {
    let mut tokens = tokenize(text);
    tokens.truncate(cfg.max_tokens);
    if tokens.is_empty() {
        return Err(Error::Encoder("question is empty after normalization".into()));
    }
    match cfg.token_source {
        TokenSource::Learned => Ok(QInput::Ids(
            tokens
                .iter()
                .map(|t| (stable_hash(t.as_bytes()) % cfg.vocab_buckets as u64) as usize)
                .collect(),
        )),
        TokenSource::Encoder => {
            let enc = encoder.ok_or_else(|| Error::config("q_model.token_source", "encoder tokens need an encoder"))?;
            let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
            let rows = enc.encode_batch(&refs)?;
            let d = enc.dim();
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            Array2::from_shape_vec((tokens.len(), d), flat)
                .map(QInput::Vectors)
                .map_err(|e| Error::Encoder(format!("token vectors: {e}")))
        }
    }
}

fn token_matrix(params: &QParams, x: &QInput) -> Result<Array2<f64>> {
    match x {
        QInput::Ids(ids) => {
            let mut m = Array2::zeros((ids.len(), params.input_dim()));
            for (t, &id) in ids.iter().enumerate() {
                if id >= params.embed.nrows() {
                    return Err(Error::Shape(format!("token id {id} outside the embedding table")));
                }
                m.row_mut(t).assign(&params.embed.row(id));
            }
            Ok(m)
        }
        QInput::Vectors(v) => {
            if v.ncols() != params.input_dim() {
                return Err(Error::Shape(format!(
                    "token vectors have {} dims, model {}",
                    v.ncols(),
                    params.input_dim()
                )));
            }
            Ok(v.clone())
        }
    }
}

struct DirTrace {
    /// Gate activations per step, `T × 4H` (i, f, g, o).
    gates: Array2<f64>,
    /// Cell states `c_t`, `T × H`.
    cells: Array2<f64>,
    /// Hidden states `h_t`, `T × H`.
    hidden: Array2<f64>,
}

/// Runs one direction over `xs` rows in the given order of time indices.
fn lstm_forward(p: &LstmParams, xs: &Array2<f64>, order: &[usize]) -> DirTrace {
    let h = p.w_h.ncols();
    let t_len = order.len();
    let mut gates = Array2::zeros((t_len, 4 * h));
    let mut cells = Array2::zeros((t_len, h));
    let mut hidden = Array2::zeros((t_len, h));
    let mut h_prev = Array1::<f64>::zeros(h);
    let mut c_prev = Array1::<f64>::zeros(h);
    for (step, &t) in order.iter().enumerate() {
        let a = p.w_x.dot(&xs.row(t)) + p.w_h.dot(&h_prev) + &p.b;
        let mut g = gates.row_mut(step);
        for k in 0..h {
            let i = sigmoid(a[k]);
            let f = sigmoid(a[h + k]);
            let c_hat = a[2 * h + k].tanh();
            let o = sigmoid(a[3 * h + k]);
            g[k] = i;
            g[h + k] = f;
            g[2 * h + k] = c_hat;
            g[3 * h + k] = o;
            let c = f * c_prev[k] + i * c_hat;
            cells[[step, k]] = c;
            hidden[[step, k]] = o * c.tanh();
        }
        h_prev = hidden.row(step).to_owned();
        c_prev = cells.row(step).to_owned();
    }
    DirTrace { gates, cells, hidden }
}

/// BPTT for one direction. `dh` holds the loss gradient w.r.t. each step's
/// hidden state (step order). Returns the gradient w.r.t. the inputs in step
/// order.
fn lstm_backward(
    p: &LstmParams,
    xs: &Array2<f64>,
    order: &[usize],
    tr: &DirTrace,
    dh: &Array2<f64>,
    g: &mut LstmParams,
) -> Array2<f64> {
    let h = p.w_h.ncols();
    let t_len = order.len();
    let mut dx = Array2::zeros((t_len, p.w_x.ncols()));
    let mut dh_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);
    let mut da = Array1::<f64>::zeros(4 * h);
    for step in (0..t_len).rev() {
        let gates = tr.gates.row(step);
        for k in 0..h {
            let (i, f, c_hat, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let c = tr.cells[[step, k]];
            let c_prev = if step > 0 { tr.cells[[step - 1, k]] } else { 0.0 };
            let tc = c.tanh();
            let dhk = dh[[step, k]] + dh_next[k];
            let d_o = dhk * tc;
            let dc = dhk * o * (1.0 - tc * tc) + dc_next[k];
            da[k] = dc * c_hat * i * (1.0 - i);
            da[h + k] = dc * c_prev * f * (1.0 - f);
            da[2 * h + k] = dc * i * (1.0 - c_hat * c_hat);
            da[3 * h + k] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        let x = xs.row(order[step]);
        outer_add(&mut g.w_x, &da, x);
        if step > 0 {
            outer_add(&mut g.w_h, &da, tr.hidden.row(step - 1));
        }
        g.b += &da;
        dx.row_mut(step).assign(&p.w_x.t().dot(&da));
        dh_next = p.w_h.t().dot(&da);
    }
    dx
}

fn outer_add(m: &mut Array2<f64>, a: &Array1<f64>, b: ArrayView1<f64>) {
    for (r, &av) in a.iter().enumerate() {
        if av != 0.0 {
            m.row_mut(r).scaled_add(av, &b);
        }
    }
}

struct Trace {
    xs: Array2<f64>,
    fwd: DirTrace,
    bwd: DirTrace,
    pooled: Array1<f64>,
    /// Time index each pooled coordinate came from (max pooling).
    argmax: Vec<usize>,
    probs: Vec<f64>,
}

fn orders(t_len: usize) -> (Vec<usize>, Vec<usize>) {
    ((0..t_len).collect(), (0..t_len).rev().collect())
}

fn forward_trace(params: &QParams, cfg: &QModelConfig, x: &QInput) -> Result<Trace> {
    if x.len() == 0 {
        return Err(Error::InvalidInput("empty token sequence".into()));
    }
    let xs = token_matrix(params, x)?;
    let t_len = xs.nrows();
    let h = params.hidden();
    let (fo, bo) = orders(t_len);
    let fwd = lstm_forward(&params.forward, &xs, &fo);
    let bwd = lstm_forward(&params.backward, &xs, &bo);
    let mut states = Array2::zeros((t_len, 2 * h));
    for t in 0..t_len {
        states.slice_mut(s![t, ..h]).assign(&fwd.hidden.row(t));
        states.slice_mut(s![t, h..]).assign(&bwd.hidden.row(t_len - 1 - t));
    }
    let mut argmax = Vec::new();
    let pooled = match cfg.pooling {
        Pooling::Max => {
            let mut out = Array1::zeros(2 * h);
            argmax = vec![0; 2 * h];
            for j in 0..2 * h {
                let mut best = 0;
                for t in 1..t_len {
                    if states[[t, j]] > states[[best, j]] {
                        best = t;
                    }
                }
                argmax[j] = best;
                out[j] = states[[best, j]];
            }
            out
        }
        Pooling::Mean => states.mean_axis(ndarray::Axis(0)).expect("non-empty"),
        Pooling::Last => {
            let mut out = Array1::zeros(2 * h);
            out.slice_mut(s![..h]).assign(&fwd.hidden.row(t_len - 1));
            out.slice_mut(s![h..]).assign(&bwd.hidden.row(t_len - 1));
            out
        }
    };
    let logits = params.head_w.dot(&pooled) + &params.head_b;
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numerical("non-finite logits in question model".into()));
    }
    let probs = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok(Trace {
        xs,
        fwd,
        bwd,
        pooled,
        argmax,
        probs,
    })
}

pub fn predict_probs(params: &QParams, cfg: &QModelConfig, x: &QInput) -> Result<Vec<f64>> {
    forward_trace(params, cfg, x).map(|t| t.probs)
}

/// Class probabilities and hard labels (`p >= threshold`).
pub fn predict(
    text: &str,
    params: &QParams,
    cfg: &QModelConfig,
    encoder: Option<&dyn Encoder>,
) -> Result<(Vec<f64>, LabelVector)> {
    let x = prepare(text, cfg, encoder)?;
    let p = predict_probs(params, cfg, &x)?;
    let label = LabelVector::new(p.iter().map(|&v| v >= cfg.threshold).collect());
    Ok((p, label))
}

/// Summed per-class cross entropy of one sample; adds `scale ×` its gradient
/// into `grads` when given.
fn sample_loss(
    params: &QParams,
    cfg: &QModelConfig,
    x: &QInput,
    y: &LabelVector,
    scale: f64,
    grads: Option<&mut QParams>,
) -> Result<f64> {
    let tr = forward_trace(params, cfg, x)?;
    if y.len() != tr.probs.len() {
        return Err(Error::Shape(format!(
            "label has {} classes, model {}",
            y.len(),
            tr.probs.len()
        )));
    }
    let yf = y.as_f64();
    let loss: f64 = yf.iter().zip(&tr.probs).map(|(&y, &p)| bce(y, p, cfg.prob_clamp)).sum();
    let Some(g) = grads else {
        return Ok(loss);
    };
    let h = params.hidden();
    let t_len = tr.xs.nrows();
    let dlogits: Vec<f64> = yf
        .iter()
        .zip(&tr.probs)
        .map(|(&y, &p)| scale * bce_grad_logit(y, p, cfg.prob_clamp))
        .collect();
    let mut dpooled = Array1::<f64>::zeros(2 * h);
    for (c, &d) in dlogits.iter().enumerate() {
        g.head_b[c] += d;
        g.head_w.row_mut(c).scaled_add(d, &tr.pooled);
        dpooled.scaled_add(d, &params.head_w.row(c));
    }
    // Gradient w.r.t. the time-ordered states.
    let mut dstates = Array2::<f64>::zeros((t_len, 2 * h));
    match cfg.pooling {
        Pooling::Max => {
            for j in 0..2 * h {
                dstates[[tr.argmax[j], j]] += dpooled[j];
            }
        }
        Pooling::Mean => {
            let inv = 1.0 / t_len as f64;
            for t in 0..t_len {
                dstates.row_mut(t).scaled_add(inv, &dpooled);
            }
        }
        Pooling::Last => {
            dstates.slice_mut(s![t_len - 1, ..h]).assign(&dpooled.slice(s![..h]));
            dstates.slice_mut(s![0, h..]).assign(&dpooled.slice(s![h..]));
        }
    }
    let (fo, bo) = orders(t_len);
    let dh_f = dstates.slice(s![.., ..h]).to_owned();
    // Backward direction steps run over reversed time.
    let mut dh_b = Array2::<f64>::zeros((t_len, h));
    for step in 0..t_len {
        dh_b.row_mut(step).assign(&dstates.slice(s![t_len - 1 - step, h..]));
    }
    let dx_f = lstm_backward(&params.forward, &tr.xs, &fo, &tr.fwd, &dh_f, &mut g.forward);
    let dx_b = lstm_backward(&params.backward, &tr.xs, &bo, &tr.bwd, &dh_b, &mut g.backward);
    if let QInput::Ids(ids) = x {
        for (t, &id) in ids.iter().enumerate() {
            g.embed.row_mut(id).scaled_add(1.0, &dx_f.row(t));
            g.embed.row_mut(id).scaled_add(1.0, &dx_b.row(t_len - 1 - t));
        }
    }
    Ok(loss)
}

const CHUNK: usize = 8;

/// Mean loss over the batch; adds the gradient of that mean into `grads`.
pub fn batch_loss(
    params: &QParams,
    cfg: &QModelConfig,
    items: &[(&QInput, &LabelVector)],
    grads: Option<&mut QParams>,
) -> Result<f64> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / items.len() as f64;
    let want = grads.is_some();
    let parts: Vec<Result<(f64, Option<QParams>)>> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = want.then(|| params.zeros_like());
            let mut loss = 0.0;
            for (x, y) in chunk {
                loss += sample_loss(params, cfg, x, y, scale, g.as_mut())?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = grads;
    for p in parts {
        let (l, g) = p?;
        total += l;
        if let (Some(acc), Some(g)) = (grads.as_deref_mut(), g.as_ref()) {
            acc.add_assign(g);
        }
    }
    let mean = total * scale;
    if !mean.is_finite() {
        return Err(Error::Numerical(format!("non-finite question-model loss {mean}")));
    }
    Ok(mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QEpoch {
    pub epoch: usize,
    pub loss: f64,
}

/// Trains on every sample of a fully labeled dataset.
pub fn train_q(
    d_f: &Dataset,
    cfg: &QModelConfig,
    encoder: Option<&dyn Encoder>,
    seed: u64,
) -> Result<(QParams, Vec<QEpoch>)> {
    cfg.validate()?;
    if d_f.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs: Vec<QInput> = d_f
        .samples()
        .par_iter()
        .map(|s| prepare(&s.question, cfg, encoder))
        .collect::<Result<_>>()?;
    let labels: Vec<LabelVector> = d_f
        .iter()
        .map(|s| match &s.annotation {
            crate::data::Annotation::Labeled(l) => Ok(l.clone()),
            _ => Err(Error::InvalidInput(format!("sample {} lacks a complete label", s.id))),
        })
        .collect::<Result<_>>()?;
    let input_dim = match cfg.token_source {
        TokenSource::Learned => cfg.embed_dim,
        TokenSource::Encoder => encoder.map_or(cfg.embed_dim, |e| e.dim()),
    };
    let mut params = QParams::init(cfg, input_dim, d_f.classes().len(), &mut rng::stream(seed, "q-init"));
    let mut opt = Adam::new(cfg.adam, &params);
    let mut order_rng = rng::stream(seed, "q-batches");
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history: Vec<QEpoch> = Vec::new();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let lr = cfg.schedule.factor(epoch);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| (&inputs[i], &labels[i])).collect();
            let mut g = params.zeros_like();
            let l = batch_loss(&params, cfg, &batch, Some(&mut g)).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}: {m}")),
                other => other,
            })?;
            opt.step(&mut params, &g, lr);
            sum += l * chunk.len() as f64;
        }
        let loss = sum / inputs.len() as f64;
        log::debug!("question model epoch {epoch}: loss {loss:.5}");
        let settled = history.last().is_some_and(|p| (p.loss - loss).abs() < cfg.loss_epsilon);
        history.push(QEpoch { epoch, loss });
        if settled && epoch + 1 >= cfg.min_epochs {
            break;
        }
    }
    Ok((params, history))
}

/// Probabilities for every question of a dataset.
pub fn predict_dataset(
    params: &QParams,
    cfg: &QModelConfig,
    d: &Dataset,
    encoder: Option<&dyn Encoder>,
) -> Result<Vec<Vec<f64>>> {
    d.samples()
        .par_iter()
        .map(|s| {
            let x = prepare(&s.question, cfg, encoder)?;
            predict_probs(params, cfg, &x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HashingEncoder;
    use approx::assert_abs_diff_eq;

    fn tiny_cfg(pooling: Pooling) -> QModelConfig {
        QModelConfig {
            vocab_buckets: 16,
            embed_dim: 3,
            hidden: 4,
            pooling,
            ..Default::default()
        }
    }

    fn grad_check(cfg: &QModelConfig, x: &QInput, input_dim: usize) {
        let mut r = rng::stream(5, "q-gradcheck");
        let params = QParams::init(cfg, input_dim, 3, &mut r);
        let y = LabelVector::from_bits(&[1, 0, 1]).unwrap();
        let items = [(x, &y)];
        let mut g = params.zeros_like();
        batch_loss(&params, cfg, &items, Some(&mut g)).unwrap();
        let analytic = g.flatten();
        let flat = params.flatten();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut p = params.clone();
            let mut v = flat.clone();
            v[i] += h;
            p.load_flat(&v).unwrap();
            let up = batch_loss(&p, cfg, &items, None).unwrap();
            v[i] -= 2.0 * h;
            p.load_flat(&v).unwrap();
            let down = batch_loss(&p, cfg, &items, None).unwrap();
            let fd = (up - down) / (2.0 * h);
            // Floor keeps central-difference round-off (~1e-10 here) from
            // dominating tiny gradients.
            let denom = fd.abs().max(analytic[i].abs()).max(1e-5);
            assert!(
                (fd - analytic[i]).abs() / denom < 1e-4,
                "param {i}: fd {fd} analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for pooling in [Pooling::Mean, Pooling::Last, Pooling::Max] {
            let cfg = tiny_cfg(pooling);
            grad_check(&cfg, &QInput::Ids(vec![3, 7, 3, 12]), 3);
        }
        let cfg = QModelConfig {
            token_source: TokenSource::Encoder,
            ..tiny_cfg(Pooling::Mean)
        };
        let enc = HashingEncoder::new(5);
        let x = prepare("how do I treat asthma", &cfg, Some(&enc)).unwrap();
        grad_check(&cfg, &x, 5);
    }

    #[test]
    fn predict_shape_purity_and_errors() {
        let cfg = tiny_cfg(Pooling::Max);
        let params = QParams::init(&cfg, 3, 3, &mut rng::stream(1, "t"));
        let (p1, l1) = predict("Where can I find a support group?", &params, &cfg, None).unwrap();
        let (p2, l2) = predict("Where can I find a support group?", &params, &cfg, None).unwrap();
        assert_eq!(p1.len(), 3);
        assert!(p1.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!((p1, l1), (p2, l2));
        assert!(matches!(predict(" ?! ", &params, &cfg, None), Err(Error::Encoder(_))));
    }

    #[test]
    fn classes_are_independent() {
        let cfg = tiny_cfg(Pooling::Max);
        let params = QParams::init(&cfg, 3, 3, &mut rng::stream(2, "t"));
        let (before, _) = predict("my back hurts a lot", &params, &cfg, None).unwrap();
        let mut flipped = params.clone();
        flipped.head_w.row_mut(1).mapv_inplace(|v| -v);
        flipped.head_b[1] = 3.0;
        let (after, _) = predict("my back hurts a lot", &flipped, &cfg, None).unwrap();
        assert_eq!(before[0], after[0]);
        assert_eq!(before[2], after[2]);
        assert!((before[1] - after[1]).abs() > 1e-6);
    }

    #[test]
    fn truncates_long_questions() {
        let cfg = QModelConfig {
            max_tokens: 4,
            ..tiny_cfg(Pooling::Max)
        };
        match prepare("one two three four five six", &cfg, None).unwrap() {
            QInput::Ids(ids) => assert_eq!(ids.len(), 4),
            _ => unreachable!(),
        }
        assert_abs_diff_eq!(cfg.threshold, 0.5);
    }
}
