//! Binary model format.
//!
//! ```text
//! "TBNT" | version: u16 | body_len: u64 | body | crc32c: u32
//! body = section*, section = tag: u8 | len: u64 | payload
//!   tag 1: model_version, config
//!   tag 2: parameter tensors (name, rows, cols, f64 LE data)
//!   tag 3: normalization statistics (width, means, variances)
//! ```
//! All integers little-endian. The CRC-32C covers every byte before it.

use crate::config::ModelConfig;
use crate::error::LoadError;
use crate::matrix::Matrix;
use crate::model::{NormStats, TrainedModel};

pub const MAGIC: &[u8; 4] = b"TBNT";
pub const FORMAT_VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 8;

const TAG_HEADER: u8 = 1;
const TAG_PARAMS: u8 = 2;
const TAG_NORM: u8 = 3;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn section(&mut self, tag: u8, payload: Writer) {
        self.u8(tag);
        self.u64(payload.0.len() as u64);
        self.0.extend_from_slice(&payload.0);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LoadError> {
        if self.buf.len() - self.pos < n {
            return Err(LoadError::Malformed(format!(
                "field of {n} bytes overruns section at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, LoadError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, LoadError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, LoadError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, LoadError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize, LoadError> {
        Ok(self.u32()? as usize)
    }
    fn str(&mut self) -> Result<String, LoadError> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| LoadError::Malformed("invalid utf-8 string".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, LoadError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| LoadError::Malformed("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Serializes a model; the bytes round-trip bit-exactly through [`load_model`].
pub fn save_model(model: &TrainedModel) -> Vec<u8> {
    let cfg = &model.config;
    let mut header = Writer::default();
    header.str(&model.model_version);
    header.u32(cfg.n_d as u32);
    header.u32(cfg.n_a as u32);
    header.u32(cfg.n_steps as u32);
    header.f64(cfg.lambda_sparse);
    header.f64(cfg.gamma);
    header.u32(cfg.feature_count as u32);
    header.u32(cfg.n_classes as u32);
    header.u64(cfg.seed);

    let mut params = Writer::default();
    params.u32(model.params.len() as u32);
    for (name, p) in model.param_names.iter().zip(&model.params) {
        params.str(name);
        params.u32(p.rows as u32);
        params.u32(p.cols as u32);
        p.data.iter().for_each(|&v| params.f64(v));
    }

    let mut norms = Writer::default();
    norms.u32(model.norm_stats.len() as u32);
    for s in &model.norm_stats {
        norms.u32(s.mean.len() as u32);
        s.mean.iter().for_each(|&v| norms.f64(v));
        s.var.iter().for_each(|&v| norms.f64(v));
    }

    let mut body = Writer::default();
    body.section(TAG_HEADER, header);
    body.section(TAG_PARAMS, params);
    body.section(TAG_NORM, norms);

    let mut out = Writer::default();
    out.0.extend_from_slice(MAGIC);
    out.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.u64(body.0.len() as u64);
    out.0.extend_from_slice(&body.0);
    let crc = crc32c::crc32c(&out.0);
    out.u32(crc);
    out.0
}

/// Decodes a model. Checks run in order: magic, version, declared length,
/// checksum, then structure; nothing is returned unless all pass.
pub fn load_model(bytes: &[u8]) -> Result<TrainedModel, LoadError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(LoadError::BadMagic);
    }
    if bytes.len() < 6 {
        return Err(LoadError::Truncated {
            expected: PREAMBLE + 4,
            actual: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(LoadError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if bytes.len() < PREAMBLE {
        return Err(LoadError::Truncated {
            expected: PREAMBLE + 4,
            actual: bytes.len(),
        });
    }
    let body_len = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let expected = usize::try_from(body_len)
        .ok()
        .and_then(|b| b.checked_add(PREAMBLE + 4))
        .ok_or_else(|| LoadError::Malformed("body length overflow".into()))?;
    if bytes.len() < expected {
        return Err(LoadError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(LoadError::Malformed(format!(
            "{} trailing bytes after checksum",
            bytes.len() - expected
        )));
    }
    let crc_at = expected - 4;
    let stored = u32::from_le_bytes(bytes[crc_at..].try_into().unwrap());
    let computed = crc32c::crc32c(&bytes[..crc_at]);
    if stored != computed {
        return Err(LoadError::ChecksumMismatch { stored, computed });
    }

    let mut body = Reader {
        buf: &bytes[PREAMBLE..crc_at],
        pos: 0,
    };
    let mut header = None;
    let mut params = None;
    let mut norms = None;
    while !body.done() {
        let tag = body.u8()?;
        let len = usize::try_from(body.u64()?).map_err(|_| LoadError::Malformed("section too large".into()))?;
        let mut sec = Reader {
            buf: body.take(len)?,
            pos: 0,
        };
        match tag {
            TAG_HEADER => header = Some(read_header(&mut sec)?),
            TAG_PARAMS => params = Some(read_params(&mut sec)?),
            TAG_NORM => norms = Some(read_norms(&mut sec)?),
            other => return Err(LoadError::Malformed(format!("unknown section tag {other}"))),
        }
        if !sec.done() {
            return Err(LoadError::Malformed(format!("section {tag} has trailing bytes")));
        }
    }
    let (version_tag, config) = header.ok_or_else(|| LoadError::Malformed("missing header section".into()))?;
    let (names, params) = params.ok_or_else(|| LoadError::Malformed("missing parameter section".into()))?;
    let norms = norms.ok_or_else(|| LoadError::Malformed("missing normalization section".into()))?;
    let model = TrainedModel::from_parts(config, params, norms, version_tag)
        .map_err(|e| LoadError::Malformed(e.to_string()))?;
    if model.param_names != names {
        return Err(LoadError::Malformed("parameter names do not match the architecture".into()));
    }
    Ok(model)
}

fn read_header(r: &mut Reader) -> Result<(String, ModelConfig), LoadError> {
    let version = r.str()?;
    let config = ModelConfig {
        n_d: r.usize()?,
        n_a: r.usize()?,
        n_steps: r.usize()?,
        lambda_sparse: r.f64()?,
        gamma: r.f64()?,
        feature_count: r.usize()?,
        n_classes: r.usize()?,
        seed: r.u64()?,
    };
    Ok((version, config))
}

fn read_params(r: &mut Reader) -> Result<(Vec<String>, Vec<Matrix>), LoadError> {
    let n = r.usize()?;
    let mut names = Vec::new();
    let mut out = Vec::new();
    for _ in 0..n {
        names.push(r.str()?);
        let rows = r.usize()?;
        let cols = r.usize()?;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| LoadError::Malformed("tensor size overflow".into()))?;
        out.push(Matrix::from_vec(rows, cols, r.f64s(count)?));
    }
    Ok((names, out))
}

fn read_norms(r: &mut Reader) -> Result<Vec<NormStats>, LoadError> {
    let n = r.usize()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let w = r.usize()?;
        let mean = r.f64s(w)?;
        let var = r.f64s(w)?;
        out.push(NormStats { mean, var });
    }
    Ok(out)
}
