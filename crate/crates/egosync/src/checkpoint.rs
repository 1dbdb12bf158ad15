//! Versioned binary checkpoints for the embedding model and the pose regressor.
//!
//! Layout: magic `EGCK`, `u32` version, `u8` kind, payload, then an FNV-1a
//! checksum of everything before it. Any truncation, bit flip or version
//! change is reported as `CorruptCheckpoint`.

use std::path::Path;

use egosync_core::flow::ChannelStats;
use egosync_core::net::{BackboneKind, Linear, ModelConfig, SemiSiameseModel};
use egosync_core::transfer::Regressor;

use crate::error::{AppError, Result};
use crate::formats::{read_bytes, write_atomic};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EGCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const KIND_MODEL: u8 = 1;
const KIND_REGRESSOR: u8 = 2;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
    fn finish(mut self) -> Vec<u8> {
        let sum = fnv1a(&self.0);
        self.u64(sum);
        self.0
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> AppError {
        AppError::CorruptCheckpoint { path: self.path.to_path_buf(), reason: reason.into() }
    }

    fn open(bytes: &'a [u8], path: &'a Path, kind: u8) -> Result<Self> {
        let r = Reader { bytes, pos: 0, path };
        if bytes.len() < 17 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(r.corrupt("bad magic or truncated header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(r.corrupt(format!("format version {version}, this build reads version {CHECKPOINT_VERSION}")));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(r.corrupt("checksum mismatch (truncated or modified)"));
        }
        if bytes[8] != kind {
            return Err(r.corrupt(format!("checkpoint kind {} where {kind} was expected", bytes[8])));
        }
        Ok(Reader { bytes: body, pos: 9, path })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt("unexpected end of payload"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.corrupt("size out of range"))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.corrupt("length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.corrupt("trailing bytes"));
        }
        Ok(())
    }
}

fn header(kind: u8) -> Writer {
    let mut w = Writer::default();
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    w.u8(kind);
    w
}

fn backbone_code(b: BackboneKind) -> u8 {
    match b {
        BackboneKind::Tiny => 0,
        BackboneKind::Residual => 1,
        BackboneKind::Flatten => 2,
    }
}

pub fn encode_model(model: &SemiSiameseModel) -> Vec<u8> {
    let c = model.config();
    let mut w = header(KIND_MODEL);
    w.u8(backbone_code(c.backbone));
    for v in [c.height, c.width, c.hidden_dim, c.embed_dim] {
        w.u64(v as u64);
    }
    w.u8(c.normalize_embeddings as u8);
    w.u64(c.seed);
    match &model.input_stats {
        Some(s) => {
            w.u8(1);
            w.f64s(&s.mean);
            w.f64s(&s.std);
        }
        None => w.u8(0),
    }
    w.f64s(&model.parameters());
    w.finish()
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<SemiSiameseModel> {
    let mut r = Reader::open(bytes, path, KIND_MODEL)?;
    let backbone = match r.u8()? {
        0 => BackboneKind::Tiny,
        1 => BackboneKind::Residual,
        2 => BackboneKind::Flatten,
        c => return Err(r.corrupt(format!("unknown backbone code {c}"))),
    };
    let (height, width, hidden_dim, embed_dim) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
    let normalize_embeddings = r.u8()? != 0;
    let seed = r.u64()?;
    let config = ModelConfig { backbone, height, width, hidden_dim, embed_dim, normalize_embeddings, seed };
    let stats = match r.u8()? {
        0 => None,
        _ => Some(ChannelStats { mean: r.f64s()?, std: r.f64s()? }),
    };
    let params = r.f64s()?;
    r.done()?;
    let mut model = SemiSiameseModel::new(config).map_err(|e| r.corrupt(e.to_string()))?;
    model.set_parameters(&params).map_err(|e| r.corrupt(e.to_string()))?;
    model.input_stats = stats;
    Ok(model)
}

pub fn save_model(path: &Path, model: &SemiSiameseModel) -> Result<()> {
    write_atomic(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<SemiSiameseModel> {
    decode_model(&read_bytes(path)?, path)
}

fn write_linear(w: &mut Writer, l: &Linear) {
    w.u64(l.in_dim as u64);
    w.u64(l.out_dim as u64);
    w.f64s(&l.weight);
    w.f64s(&l.bias);
}

fn read_linear(r: &mut Reader<'_>) -> Result<Linear> {
    let (i, o) = (r.usize()?, r.usize()?);
    let (weight, bias) = (r.f64s()?, r.f64s()?);
    Linear::from_weights(i, o, weight, bias).map_err(|e| r.corrupt(e.to_string()))
}

pub fn encode_regressor(reg: &Regressor) -> Vec<u8> {
    let mut w = header(KIND_REGRESSOR);
    w.u8(reg.use_embedding as u8);
    for v in [&reg.input_mean, &reg.input_scale, &reg.target_mean, &reg.target_scale] {
        w.f64s(v);
    }
    write_linear(&mut w, &reg.hidden);
    write_linear(&mut w, &reg.output);
    w.finish()
}

pub fn decode_regressor(bytes: &[u8], path: &Path) -> Result<Regressor> {
    let mut r = Reader::open(bytes, path, KIND_REGRESSOR)?;
    let use_embedding = r.u8()? != 0;
    let (input_mean, input_scale, target_mean, target_scale) = (r.f64s()?, r.f64s()?, r.f64s()?, r.f64s()?);
    let hidden = read_linear(&mut r)?;
    let output = read_linear(&mut r)?;
    r.done()?;
    if input_mean.len() != hidden.in_dim
        || input_scale.len() != hidden.in_dim
        || output.in_dim != hidden.out_dim
        || target_mean.len() != output.out_dim
        || target_scale.len() != output.out_dim
    {
        return Err(r.corrupt("inconsistent layer sizes"));
    }
    Ok(Regressor { use_embedding, input_mean, input_scale, target_mean, target_scale, hidden, output })
}

pub fn save_regressor(path: &Path, reg: &Regressor) -> Result<()> {
    write_atomic(path, &encode_regressor(reg))
}

pub fn load_regressor(path: &Path) -> Result<Regressor> {
    decode_regressor(&read_bytes(path)?, path)
}
