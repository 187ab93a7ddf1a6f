//! Versioned model checkpoints: a directory with `manifest.json` and
//! `params.bin` (little-endian f64, tensors concatenated in manifest order).
//! Loading verifies the format version, blob size and SHA-256, the tensor
//! layout, and optionally the class order and encoder identity.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ClassSet;
use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::q_model::{QModelConfig, QParams};
use crate::qa_model::{QaConfig, QaParams};
use crate::rng::Rng;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    QuestionAnswer,
    Question,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: ModelKind,
    pub classes: Vec<String>,
    pub encoder: String,
    pub config_hash: String,
    /// Architecture settings needed to rebuild the model.
    pub model: serde_json::Value,
    /// Width of the token vectors fed to the question model.
    #[serde(default)]
    pub input_dim: Option<usize>,
    pub tensors: Vec<TensorEntry>,
    pub num_params: usize,
    pub blob_sha256: String,
    /// Free-form training metadata.
    #[serde(default)]
    pub notes: serde_json::Value,
}

/// What the caller expects a loaded checkpoint to match.
#[derive(Clone, Debug, Default)]
pub struct Expect<'a> {
    pub classes: Option<&'a ClassSet>,
    pub encoder: Option<&'a str>,
}

fn layout_entries(layout: Vec<(String, Vec<usize>)>) -> Vec<TensorEntry> {
    layout
        .into_iter()
        .map(|(name, shape)| TensorEntry { name, shape })
        .collect()
}

fn to_bytes(flat: &[f64]) -> Vec<u8> {
    flat.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn write(dir: &Path, mut manifest: Manifest, flat: &[f64]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = to_bytes(flat);
    manifest.num_params = flat.len();
    manifest.blob_sha256 = hex::encode(Sha256::digest(&bytes));
    let blob = dir.join(BLOB);
    std::fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read(dir: &Path, kind: ModelKind, expect: &Expect) -> Result<(Manifest, Vec<f64>)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    if m.kind != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind:?} checkpoint, found {:?}",
            m.kind
        )));
    }
    if let Some(c) = expect.classes {
        if c.names() != m.classes.as_slice() {
            return Err(Error::Checkpoint(format!(
                "class order mismatch: checkpoint {:?}, configured {:?}",
                m.classes,
                c.names()
            )));
        }
    }
    if let Some(e) = expect.encoder {
        if e != m.encoder {
            return Err(Error::Checkpoint(format!(
                "encoder mismatch: checkpoint `{}`, configured `{e}`",
                m.encoder
            )));
        }
    }
    let blob = dir.join(BLOB);
    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if hex::encode(Sha256::digest(&bytes)) != m.blob_sha256 {
        return Err(Error::Checkpoint(format!(
            "{} does not match its recorded hash",
            blob.display()
        )));
    }
    if bytes.len() != m.num_params * 8 {
        return Err(Error::Checkpoint(format!(
            "blob holds {} bytes, manifest declares {} parameters",
            bytes.len(),
            m.num_params
        )));
    }
    let flat = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((m, flat))
}

fn check_layout(m: &Manifest, expected: Vec<(String, Vec<usize>)>) -> Result<()> {
    if m.tensors != layout_entries(expected) {
        return Err(Error::Checkpoint(
            "tensor layout does not match the configured architecture".into(),
        ));
    }
    Ok(())
}

pub fn save_qa(
    dir: &Path,
    params: &QaParams,
    cfg: &QaConfig,
    classes: &ClassSet,
    encoder: &str,
    config_hash: &str,
    notes: serde_json::Value,
) -> Result<()> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: ModelKind::QuestionAnswer,
        classes: classes.names().to_vec(),
        encoder: encoder.to_string(),
        config_hash: config_hash.to_string(),
        model: serde_json::to_value(cfg).expect("config serializes"),
        input_dim: None,
        tensors: layout_entries(params.layout()),
        num_params: 0,
        blob_sha256: String::new(),
        notes,
    };
    write(dir, manifest, &params.flatten())
}

pub fn load_qa(dir: &Path, expect: &Expect) -> Result<(QaParams, QaConfig, Manifest)> {
    let (m, flat) = read(dir, ModelKind::QuestionAnswer, expect)?;
    let cfg: QaConfig =
        serde_json::from_value(m.model.clone()).map_err(|e| Error::Checkpoint(format!("model settings: {e}")))?;
    cfg.validate()
        .map_err(|e| Error::Checkpoint(format!("model settings: {e}")))?;
    let mut params = QaParams::zeros(&cfg);
    check_layout(&m, params.layout())?;
    params.load_flat(&flat)?;
    Ok((params, cfg, m))
}

pub fn save_q(
    dir: &Path,
    params: &QParams,
    cfg: &QModelConfig,
    classes: &ClassSet,
    encoder: &str,
    config_hash: &str,
    notes: serde_json::Value,
) -> Result<()> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: ModelKind::Question,
        classes: classes.names().to_vec(),
        encoder: encoder.to_string(),
        config_hash: config_hash.to_string(),
        model: serde_json::to_value(cfg).expect("config serializes"),
        input_dim: Some(params.input_dim()),
        tensors: layout_entries(params.layout()),
        num_params: 0,
        blob_sha256: String::new(),
        notes,
    };
    write(dir, manifest, &params.flatten())
}

pub fn load_q(dir: &Path, expect: &Expect) -> Result<(QParams, QModelConfig, Manifest)> {
    let (m, flat) = read(dir, ModelKind::Question, expect)?;
    let cfg: QModelConfig =
        serde_json::from_value(m.model.clone()).map_err(|e| Error::Checkpoint(format!("model settings: {e}")))?;
    cfg.validate()
        .map_err(|e| Error::Checkpoint(format!("model settings: {e}")))?;
    let input_dim = m
        .input_dim
        .ok_or_else(|| Error::Checkpoint("question-model manifest lacks input_dim".into()))?;
    // values are overwritten below; the generator only fixes shapes
    let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut params = QParams::init(&cfg, input_dim, m.classes.len(), &mut rng);
    check_layout(&m, params.layout())?;
    params.load_flat(&flat)?;
    Ok((params, cfg, m))
}
