//! Single-file model checkpoints.
//!
//! Layout: the magic line `G2GCKPT1`, the byte length of a UTF-8 header on its own
//! line, the header, then every tensor as little-endian `f32` in header order. The
//! header has three sections: `[manifest]` (format, seed, config hash and the full
//! `model.*`/`variant.*` configuration), `[tensors]` (`name<TAB>f32<TAB>rows<TAB>cols`)
//! and `[vocab]` (the vocabulary tables).

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ModelConfig, ModelError, ModelVariant, ParserModel};
use crate::tensor::{ParamStore, Tensor};
use crate::treebank::TreebankError;
use crate::vocab::Vocabulary;

pub const MAGIC: &str = "G2GCKPT1";
const FORMAT: &str = "1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint holds variant {found}, expected {expected}")]
    VariantMismatch { expected: String, found: String },
    #[error("checkpoint vocabulary: {0}")]
    Vocab(#[from] TreebankError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn format_err(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

/// SHA-256 over the canonical `key=value` configuration lines.
pub fn config_hash(config: &ModelConfig) -> String {
    let mut h = Sha256::new();
    for (k, v) in config.to_lines() {
        h.update(format!("{k}={v}\n").as_bytes());
    }
    hex::encode(h.finalize())
}

/// Metadata read back from a checkpoint alongside the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    /// `(name, [rows, cols])` in storage order.
    pub tensors: Vec<(String, [usize; 2])>,
}

/// Serializes `model`; parameter values are stored as `f32`.
pub fn to_bytes(model: &ParserModel, seed: u64) -> Vec<u8> {
    let mut header = String::from("[manifest]\n");
    header.push_str(&format!("format={FORMAT}\nseed={seed}\nconfig_hash={}\n", config_hash(&model.config)));
    for (k, v) in model.config.to_lines() {
        header.push_str(&format!("{k}={v}\n"));
    }
    header.push_str("[tensors]\n");
    for (_, name, t) in model.params.iter() {
        header.push_str(&format!("{name}\tf32\t{}\t{}\n", t.rows(), t.cols()));
    }
    header.push_str("[vocab]\n");
    header.push_str(&model.vocab.to_text());

    let mut out = format!("{MAGIC}\n{}\n", header.len()).into_bytes();
    out.extend_from_slice(header.as_bytes());
    for (_, _, t) in model.params.iter() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn take_line<'a>(bytes: &'a [u8], at: &mut usize) -> Result<&'a str, CheckpointError> {
    let rest = &bytes[*at..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err("truncated preamble"))?;
    *at += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| format_err("preamble is not UTF-8"))
}

/// Parses a checkpoint produced by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<(ParserModel, Manifest), CheckpointError> {
    let mut at = 0;
    if take_line(bytes, &mut at)? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let header_len: usize = take_line(bytes, &mut at)?
        .parse()
        .map_err(|_| format_err("bad header length"))?;
    let header_end = at
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| format_err("truncated header"))?;
    let header = std::str::from_utf8(&bytes[at..header_end]).map_err(|_| format_err("header is not UTF-8"))?;

    let manifest_start = header
        .strip_prefix("[manifest]\n")
        .ok_or_else(|| format_err("missing [manifest]"))?;
    let (manifest_text, rest) = manifest_start
        .split_once("[tensors]\n")
        .ok_or_else(|| format_err("missing [tensors]"))?;
    let (tensor_text, vocab_text) = rest.split_once("[vocab]\n").ok_or_else(|| format_err("missing [vocab]"))?;

    let mut config = ModelConfig::default();
    let (mut seed, mut hash, mut format) = (None, None, None);
    for line in manifest_text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(format!("manifest line {line:?}")))?;
        match k {
            "format" => format = Some(v.to_string()),
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| format_err("bad seed"))?),
            "config_hash" => hash = Some(v.to_string()),
            _ => config.set(k, v).map_err(format_err)?,
        }
    }
    if format.as_deref() != Some(FORMAT) {
        return Err(format_err(format!("unsupported format {format:?}")));
    }
    let hash = hash.ok_or_else(|| format_err("missing config_hash"))?;
    if hash != config_hash(&config) {
        return Err(format_err("config hash does not match the stored configuration"));
    }

    let mut tensors = Vec::new();
    for line in tensor_text.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 || f[1] != "f32" {
            return Err(format_err(format!("tensor line {line:?}")));
        }
        let dim = |s: &str| s.parse::<usize>().map_err(|_| format_err(format!("tensor line {line:?}")));
        tensors.push((f[0].to_string(), [dim(f[2])?, dim(f[3])?]));
    }
    let vocab = Vocabulary::from_text(vocab_text)?;

    let mut params = ParamStore::new();
    let mut pos = header_end;
    for (name, [rows, cols]) in &tensors {
        let len = rows * cols;
        let end = pos + 4 * len;
        if end > bytes.len() {
            return Err(format_err(format!("payload of {name} is truncated")));
        }
        let data = bytes[pos..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        pos = end;
        if params.id(name).is_some() {
            return Err(format_err(format!("duplicate tensor {name}")));
        }
        params.add(name.clone(), Tensor::from_vec(*rows, *cols, data).expect("sized"));
    }
    if pos != bytes.len() {
        return Err(format_err("trailing bytes after the last tensor"));
    }
    let model = ParserModel::from_parts(config, vocab, params)?;
    let manifest = Manifest {
        seed: seed.ok_or_else(|| format_err("missing seed"))?,
        config_hash: hash,
        tensors,
    };
    Ok((model, manifest))
}

pub fn save(model: &ParserModel, seed: u64, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model, seed)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<(ParserModel, Manifest), CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and refuses it unless it was trained with `expected` flags.
pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelVariant) -> Result<(ParserModel, Manifest), CheckpointError> {
    let (model, manifest) = load(path)?;
    if &model.config.variant != expected {
        return Err(CheckpointError::VariantMismatch {
            expected: expected.to_string(),
            found: model.config.variant.to_string(),
        });
    }
    Ok((model, manifest))
}
