use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::http::JsonClient;

use super::Encoder;

/// Pretrained-transformer backend reached through an OpenAI-style
/// `/embeddings` endpoint (`{"model": .., "input": [..]}` →
/// `{"data": [{"index": i, "embedding": [..]}]}`).
pub struct RemoteEncoder {
    client: JsonClient,
    model_id: String,
    dim: usize,
    batch: usize,
}

impl RemoteEncoder {
    pub fn new(client: JsonClient, model_id: impl Into<String>, dim: usize) -> Self {
        Self {
            client,
            model_id: model_id.into(),
            dim,
            batch: 64,
        }
    }

    fn call(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let body = json!({ "model": self.model_id, "input": texts });
        let resp = self
            .client
            .post_json("embeddings", &body)
            .map_err(|e| Error::Encoder(e.to_string()))?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Encoder("response has no `data` array".into()))?;
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item
                .get("index")
                .and_then(Value::as_u64)
                .map(|i| i as usize)
                .unwrap_or(pos);
            let emb: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Encoder(format!("item {pos} has no embedding")))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| Error::Encoder("non-numeric embedding entry".into()))
                })
                .collect::<Result<_>>()?;
            if emb.len() != self.dim {
                return Err(Error::Encoder(format!(
                    "embedding has {} dims, expected {}",
                    emb.len(),
                    self.dim
                )));
            }
            if emb.iter().any(|x| !x.is_finite()) {
                return Err(Error::Encoder("non-finite embedding".into()));
            }
            *out.get_mut(idx)
                .ok_or_else(|| Error::Encoder(format!("index {idx} out of range")))? = Some(emb);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::Encoder(format!("no embedding returned for input {i}"))))
            .collect()
    }
}

impl Encoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> String {
        format!("remote:{}:dim={}", self.model_id, self.dim)
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::Encoder(format!("input {i} is empty")));
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch) {
            out.extend(self.call(chunk)?);
        }
        Ok(out)
    }
}
