//! Single-file checkpoints. Little-endian throughout:
//!
//! ```text
//! "DCCK" | u32 version | u32 manifest_len | manifest JSON | u32 tensor_count
//! per tensor: u32 name_len | name | u32 ndim | u32 x ndim dims | f32 x prod(dims)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::caption::CaptionModelParams;
use crate::corpus::{ConceptSet, Vocabulary};
use crate::error::{DccError, Result};
use crate::langmodel::LanguageModelParams;
use crate::lexical::LexicalParams;
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"DCCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `lexical`, `language_model` or `caption`.
    pub kind: String,
    #[serde(default)]
    pub dims: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vocabulary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts: Option<ConceptSet>,
    /// Tool name and version; no timestamps so that files are reproducible.
    pub created_by: String,
    #[serde(default)]
    pub config: serde_json::Value,
    /// Filled in from the store on save.
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn new(kind: impl Into<String>) -> Self {
        Manifest {
            kind: kind.into(),
            dims: serde_json::Value::Null,
            vocab: None,
            concepts: None,
            created_by: concat!("dcc ", env!("CARGO_PKG_VERSION")).to_string(),
            config: serde_json::Value::Null,
            tensors: Vec::new(),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(DccError::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn vocab(&self) -> Result<&Vocabulary> {
        self.vocab.as_ref().ok_or_else(|| DccError::Checkpoint("manifest has no vocabulary".into()))
    }

    pub fn concepts(&self) -> Result<&ConceptSet> {
        self.concepts.as_ref().ok_or_else(|| DccError::Checkpoint("manifest has no concept set".into()))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| DccError::Checkpoint(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(store: &ParamStore, manifest: &Manifest) -> Result<Vec<u8>> {
    let mut manifest = manifest.clone();
    manifest.tensors = store.iter().map(|(n, p)| TensorEntry { name: n.to_string(), shape: p.tensor.shape().to_vec() }).collect();
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, store.len())?;
    for (name, p) in store.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, p.tensor.shape().len())?;
        for &d in p.tensor.shape() {
            put_u32(&mut out, d)?;
        }
        out.extend_from_slice(&p.tensor.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(DccError::Checkpoint(format!("truncated file while reading {what}")));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ParamStore, Manifest)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(DccError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    r.take(4, "magic")?;
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(DccError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mlen = r.u32("manifest length")?;
    let manifest: Manifest = serde_json::from_slice(r.take(mlen, "manifest")?)
        .map_err(|e| DccError::Checkpoint(format!("bad manifest: {e}")))?;
    let count = r.u32("tensor count")?;
    if count != manifest.tensors.len() {
        return Err(DccError::Checkpoint(format!(
            "manifest declares {} tensors but file holds {count}",
            manifest.tensors.len()
        )));
    }
    let mut store = ParamStore::new();
    for entry in &manifest.tensors {
        let nlen = r.u32("tensor name length")?;
        let name = std::str::from_utf8(r.take(nlen, "tensor name")?)
            .map_err(|_| DccError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        if name != entry.name {
            return Err(DccError::Checkpoint(format!("expected tensor `{}`, found `{name}`", entry.name)));
        }
        let ndim = r.u32(&name)?;
        let shape = (0..ndim).map(|_| r.u32(&name)).collect::<Result<Vec<_>>>()?;
        if shape != entry.shape {
            return Err(DccError::Checkpoint(format!(
                "tensor `{name}` has shape {shape:?} but manifest declares {:?}",
                entry.shape
            )));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| DccError::Checkpoint(format!("tensor `{name}` too large")))?, &name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let t = Tensor::new(shape, data).map_err(|e| DccError::Checkpoint(format!("tensor `{name}`: {e}")))?;
        store.insert(name, t, true)?;
    }
    if r.pos != bytes.len() {
        return Err(DccError::Checkpoint(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
    }
    Ok((store, manifest))
}

pub fn save_checkpoint(store: &ParamStore, manifest: &Manifest, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(store, manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, Manifest)> {
    from_bytes(&std::fs::read(path)?)
}

pub const KIND_LEXICAL: &str = "lexical";
pub const KIND_LANGUAGE_MODEL: &str = "language_model";
pub const KIND_CAPTION: &str = "caption";

pub fn save_lexical(params: &LexicalParams, config: serde_json::Value, path: &Path) -> Result<()> {
    let mut m = Manifest::new(KIND_LEXICAL);
    m.dims = serde_json::json!({
        "features": params.feature_dim(),
        "concepts": params.concepts().len(),
        "hidden": params.has_hidden(),
    });
    m.concepts = Some(params.concepts().clone());
    m.config = config;
    save_checkpoint(params.store(), &m, path)
}

pub fn load_lexical(path: &Path) -> Result<LexicalParams> {
    let (store, m) = load_checkpoint(path)?;
    m.expect_kind(KIND_LEXICAL)?;
    LexicalParams::from_store(store, m.concepts()?.clone())
}

pub fn save_language_model(params: &LanguageModelParams, vocab: &Vocabulary, config: serde_json::Value, path: &Path) -> Result<()> {
    let d = params.dims();
    let mut m = Manifest::new(KIND_LANGUAGE_MODEL);
    m.dims = serde_json::json!({"vocab": d.vocab, "embed": d.embed, "hidden": d.hidden});
    m.vocab = Some(vocab.clone());
    m.config = config;
    save_checkpoint(params.store(), &m, path)
}

pub fn load_language_model(path: &Path) -> Result<(LanguageModelParams, Vocabulary)> {
    let (store, m) = load_checkpoint(path)?;
    m.expect_kind(KIND_LANGUAGE_MODEL)?;
    let params = LanguageModelParams::from_store(store)?;
    let vocab = m.vocab()?.clone();
    if vocab.len() != params.dims().vocab {
        return Err(DccError::Checkpoint("vocabulary size does not match the embedding table".into()));
    }
    Ok((params, vocab))
}

pub fn save_caption(model: &CaptionModelParams, config: serde_json::Value, path: &Path) -> Result<()> {
    let d = model.language_model().dims();
    let mut m = Manifest::new(KIND_CAPTION);
    m.dims = serde_json::json!({
        "vocab": d.vocab,
        "embed": d.embed,
        "hidden": d.hidden,
        "features": model.lexical().feature_dim(),
        "concepts": model.concepts().len(),
    });
    m.vocab = Some(model.vocab().clone());
    m.concepts = Some(model.concepts().clone());
    m.config = config;
    save_checkpoint(&model.full_store(), &m, path)
}

pub fn load_caption(path: &Path) -> Result<CaptionModelParams> {
    let (store, m) = load_checkpoint(path)?;
    m.expect_kind(KIND_CAPTION)?;
    CaptionModelParams::from_store(&store, m.vocab()?.clone(), m.concepts()?.clone())
}
