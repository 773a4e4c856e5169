//! The embedding bundle and its SPB1 on-disk container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic    "SPB1"
//! u32      version (= 1)
//! u32      matrix count
//! repeated:
//!   u16    name length, then UTF-8 name
//!   u32    rows
//!   u32    cols
//!   f32    rows*cols values, row-major
//! u32      metadata length, then a UTF-8 JSON object
//! ```
//!
//! Required matrices are `speech`, `text`, `wq` and `wk`. The metadata object
//! must carry an integer `tokens_per_second` and may carry `needle_start`,
//! `needle_length` and `label`. Anything else is kept verbatim so that
//! rewriting a bundle does not drop fields added by other producers.

use std::io::{Read, Write};

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"SPB1";
pub const VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "spb";

const REQUIRED: [&str; 4] = ["speech", "text", "wq", "wk"];
const KEY_TPS: &str = "tokens_per_second";
const KEY_NEEDLE_START: &str = "needle_start";
const KEY_NEEDLE_LENGTH: &str = "needle_length";
const KEY_LABEL: &str = "label";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bad magic {found:?} at offset 0")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { version: u32, offset: usize },
    #[error("truncated payload at offset {offset}: {what} needs {needed} bytes, {available} available")]
    Truncated { offset: usize, what: &'static str, needed: u64, available: usize },
    #[error("matrix name at offset {offset} is not valid UTF-8")]
    BadName { offset: usize },
    #[error("matrix {name:?} appears twice (second copy at offset {offset})")]
    DuplicateMatrix { name: String, offset: usize },
    #[error("required matrix {name:?} is missing")]
    MissingMatrix { name: &'static str },
    #[error("invalid metadata at offset {offset}: {reason}")]
    Metadata { offset: usize, reason: String },
    #[error("shape inconsistency: {0}")]
    Shape(String),
    #[error("needle [{start}, {start}+{length}) is out of range for {n_tokens} speech tokens")]
    NeedleOutOfRange { start: u64, length: u64, n_tokens: usize },
    #[error("matrix {name:?} contains a non-finite value")]
    NonFinite { name: &'static str },
    #[error("{0} trailing bytes after metadata")]
    TrailingBytes(usize),
    #[error("invalid bundle: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BundleError {
    /// Stable short name for the error kind, used on the command line.
    pub fn kind(&self) -> &'static str {
        match self {
            BundleError::BadMagic { .. } => "bad-magic",
            BundleError::UnsupportedVersion { .. } => "unsupported-version",
            BundleError::Truncated { .. } => "truncated",
            BundleError::BadName { .. } => "bad-name",
            BundleError::DuplicateMatrix { .. } => "duplicate-matrix",
            BundleError::MissingMatrix { .. } => "missing-matrix",
            BundleError::Metadata { .. } => "bad-metadata",
            BundleError::Shape(_) => "shape-inconsistency",
            BundleError::NeedleOutOfRange { .. } => "needle-out-of-range",
            BundleError::NonFinite { .. } => "non-finite",
            BundleError::TrailingBytes(_) => "trailing-bytes",
            BundleError::Invalid(_) => "invalid",
            BundleError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NeedleSpan {
    pub start: usize,
    pub length: usize,
}

impl NeedleSpan {
    pub fn end(&self) -> usize {
        self.start + self.length
    }

    pub fn contains(&self, index: usize) -> bool {
        index >= self.start && index < self.end()
    }
}

/// One pruning problem: speech and text embeddings plus the first-layer
/// query/key projections.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    /// N×D speech token embeddings.
    pub speech: Matrix,
    /// L×D text-query embeddings (no system prompt or special tokens).
    pub text: Matrix,
    /// D×Dk query projection.
    pub wq: Matrix,
    /// D×Dk key projection.
    pub wk: Matrix,
    pub tokens_per_second: usize,
    pub needle: Option<NeedleSpan>,
    pub label: Option<String>,
    /// Matrices with unrecognised names, in file order.
    pub extra_matrices: Vec<(String, Matrix)>,
    /// Metadata keys the engine does not interpret.
    pub extra_metadata: Map<String, Value>,
}

impl EmbeddingBundle {
    pub fn new(speech: Matrix, text: Matrix, wq: Matrix, wk: Matrix, tokens_per_second: usize) -> Result<Self, BundleError> {
        let b = Self {
            speech,
            text,
            wq,
            wk,
            tokens_per_second,
            needle: None,
            label: None,
            extra_matrices: Vec::new(),
            extra_metadata: Map::new(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn n_tokens(&self) -> usize {
        self.speech.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.speech.cols()
    }

    pub fn proj_dim(&self) -> usize {
        self.wq.cols()
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        let d = self.speech.cols();
        if self.text.cols() != d || self.wq.rows() != d || self.wk.rows() != d {
            return Err(BundleError::Shape(format!(
                "embedding width differs: speech {:?}, text {:?}, wq {:?}, wk {:?}",
                self.speech.shape(),
                self.text.shape(),
                self.wq.shape(),
                self.wk.shape()
            )));
        }
        if self.wq.cols() != self.wk.cols() {
            return Err(BundleError::Shape(format!(
                "projection width differs: wq {:?}, wk {:?}",
                self.wq.shape(),
                self.wk.shape()
            )));
        }
        if self.speech.rows() == 0 {
            return Err(BundleError::Shape("speech has no tokens".into()));
        }
        if self.text.rows() == 0 {
            return Err(BundleError::Shape("text has no tokens".into()));
        }
        if self.tokens_per_second == 0 {
            return Err(BundleError::Invalid("tokens_per_second must be at least 1".into()));
        }
        if let Some(n) = self.needle {
            if n.length == 0 || n.start.checked_add(n.length).is_none_or(|end| end > self.speech.rows()) {
                return Err(BundleError::NeedleOutOfRange {
                    start: n.start as u64,
                    length: n.length as u64,
                    n_tokens: self.speech.rows(),
                });
            }
        }
        for (name, m) in REQUIRED.iter().zip([&self.speech, &self.text, &self.wq, &self.wk]) {
            if m.data().iter().any(|x| !x.is_finite()) {
                return Err(BundleError::NonFinite { name });
            }
        }
        for (name, _) in &self.extra_matrices {
            if REQUIRED.contains(&name.as_str()) || name.len() > u16::MAX as usize {
                return Err(BundleError::Invalid(format!("extra matrix name {name:?} is reserved or too long")));
            }
        }
        for key in [KEY_TPS, KEY_NEEDLE_START, KEY_NEEDLE_LENGTH, KEY_LABEL] {
            if self.extra_metadata.contains_key(key) {
                return Err(BundleError::Invalid(format!("extra metadata may not redefine {key:?}")));
            }
        }
        Ok(())
    }

    fn metadata_json(&self) -> Vec<u8> {
        let mut meta = self.extra_metadata.clone();
        meta.insert(KEY_TPS.into(), Value::from(self.tokens_per_second));
        if let Some(n) = self.needle {
            meta.insert(KEY_NEEDLE_START.into(), Value::from(n.start));
            meta.insert(KEY_NEEDLE_LENGTH.into(), Value::from(n.length));
        }
        if let Some(label) = &self.label {
            meta.insert(KEY_LABEL.into(), Value::from(label.clone()));
        }
        serde_json::to_vec(&Value::Object(meta)).expect("metadata map serializes")
    }

    /// Encodes the bundle as SPB1 bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>, BundleError> {
        self.validate()?;
        let named = REQUIRED
            .iter()
            .map(|&n| n.to_string())
            .zip([&self.speech, &self.text, &self.wq, &self.wk])
            .chain(self.extra_matrices.iter().map(|(n, m)| (n.clone(), m)));
        let meta = self.metadata_json();

        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.write_u32::<LittleEndian>(VERSION)?;
        buf.write_u32::<LittleEndian>(dim_u32(4 + self.extra_matrices.len(), "matrix count")?)?;
        for (name, m) in named {
            buf.write_u16::<LittleEndian>(name.len() as u16)?;
            buf.extend_from_slice(name.as_bytes());
            buf.write_u32::<LittleEndian>(dim_u32(m.rows(), "rows")?)?;
            buf.write_u32::<LittleEndian>(dim_u32(m.cols(), "cols")?)?;
            buf.reserve(m.data().len() * 4);
            for &x in m.data() {
                buf.write_f32::<LittleEndian>(x)?;
            }
        }
        buf.write_u32::<LittleEndian>(dim_u32(meta.len(), "metadata length")?)?;
        buf.extend_from_slice(&meta);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        parse(bytes)
    }
}

fn dim_u32(v: usize, what: &str) -> Result<u32, BundleError> {
    u32::try_from(v).map_err(|_| BundleError::Invalid(format!("{what} {v} exceeds u32")))
}

/// Writes `bundle` to `sink` and returns the byte count. Nothing is written
/// when validation fails.
pub fn write_bundle<W: Write>(bundle: &EmbeddingBundle, mut sink: W) -> Result<usize, BundleError> {
    let bytes = bundle.to_bytes()?;
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(bytes.len())
}

pub fn read_bundle<R: Read>(mut source: R) -> Result<EmbeddingBundle, BundleError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: u64, what: &'static str) -> Result<&'a [u8], BundleError> {
        let available = self.bytes.len() - self.pos;
        if n > available as u64 {
            return Err(BundleError::Truncated { offset: self.pos, what, needed: n, available });
        }
        let s = &self.bytes[self.pos..self.pos + n as usize];
        self.pos += n as usize;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, BundleError> {
        Ok(LittleEndian::read_u16(self.take(2, what)?))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, BundleError> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }
}

fn parse(bytes: &[u8]) -> Result<EmbeddingBundle, BundleError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(BundleError::BadMagic { found: magic.try_into().expect("4 bytes") });
    }
    let version_offset = cur.pos;
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(BundleError::UnsupportedVersion { version, offset: version_offset });
    }
    let count = cur.u32("matrix count")?;

    let mut required: [Option<Matrix>; 4] = [None, None, None, None];
    let mut extra_matrices: Vec<(String, Matrix)> = Vec::new();
    for _ in 0..count {
        let name_offset = cur.pos;
        let name_len = cur.u16("matrix name length")?;
        let name = std::str::from_utf8(cur.take(name_len as u64, "matrix name")?)
            .map_err(|_| BundleError::BadName { offset: name_offset + 2 })?
            .to_string();
        let rows = cur.u32("rows")? as usize;
        let cols = cur.u32("cols")? as usize;
        let n_bytes = (rows as u64 * cols as u64).saturating_mul(4);
        let payload = cur.take(n_bytes, "matrix payload")?;
        let mut data = vec![0f32; rows * cols];
        LittleEndian::read_f32_into(payload, &mut data);
        let m = Matrix::new(rows, cols, data).expect("length matches declared shape");

        let duplicate = || BundleError::DuplicateMatrix { name: name.clone(), offset: name_offset };
        match REQUIRED.iter().position(|r| *r == name) {
            Some(slot) => {
                if required[slot].is_some() {
                    return Err(duplicate());
                }
                required[slot] = Some(m);
            }
            None => {
                if extra_matrices.iter().any(|(n, _)| *n == name) {
                    return Err(duplicate());
                }
                extra_matrices.push((name, m));
            }
        }
    }

    let meta_offset = cur.pos;
    let meta_len = cur.u32("metadata length")?;
    let meta_bytes = cur.take(meta_len as u64, "metadata")?;
    if cur.pos != bytes.len() {
        return Err(BundleError::TrailingBytes(bytes.len() - cur.pos));
    }
    let meta_err = |reason: String| BundleError::Metadata { offset: meta_offset + 4, reason };
    let mut meta = match serde_json::from_slice::<Value>(meta_bytes) {
        Ok(Value::Object(map)) => map,
        Ok(_) => return Err(meta_err("metadata is not a JSON object".into())),
        Err(e) => return Err(meta_err(e.to_string())),
    };

    let as_count = |key: &str, v: Value| -> Result<u64, BundleError> {
        v.as_u64().ok_or_else(|| meta_err(format!("{key:?} must be a non-negative integer")))
    };
    let tokens_per_second = match meta.remove(KEY_TPS) {
        Some(v) => as_count(KEY_TPS, v)?,
        None => return Err(meta_err(format!("missing required key {KEY_TPS:?}"))),
    };
    let needle_start = meta.remove(KEY_NEEDLE_START).map(|v| as_count(KEY_NEEDLE_START, v)).transpose()?;
    let needle_length = meta.remove(KEY_NEEDLE_LENGTH).map(|v| as_count(KEY_NEEDLE_LENGTH, v)).transpose()?;
    let label = match meta.remove(KEY_LABEL) {
        None => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => return Err(meta_err(format!("{KEY_LABEL:?} must be a string"))),
    };

    let [speech, text, wq, wk] = required;
    let take = |m: Option<Matrix>, name: &'static str| m.ok_or(BundleError::MissingMatrix { name });
    let speech = take(speech, "speech")?;
    let text = take(text, "text")?;
    let wq = take(wq, "wq")?;
    let wk = take(wk, "wk")?;

    let needle = match (needle_start, needle_length) {
        (None, None) => None,
        (Some(start), Some(length)) => {
            if length == 0 || start.checked_add(length).is_none_or(|end| end > speech.rows() as u64) {
                return Err(BundleError::NeedleOutOfRange { start, length, n_tokens: speech.rows() });
            }
            Some(NeedleSpan { start: start as usize, length: length as usize })
        }
        _ => return Err(meta_err("needle_start and needle_length must appear together".into())),
    };

    let bundle = EmbeddingBundle {
        speech,
        text,
        wq,
        wk,
        tokens_per_second: usize::try_from(tokens_per_second).map_err(|_| meta_err("tokens_per_second too large".into()))?,
        needle,
        label,
        extra_matrices,
        extra_metadata: meta,
    };
    bundle.validate()?;
    Ok(bundle)
}
