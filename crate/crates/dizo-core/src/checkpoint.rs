//! Self-describing binary container for parameters and anchors.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "ZOCP" | version u32 | kind u8 (0 params, 1 anchor)
//! rng algo id: len u16 + utf8
//! anchor only: precision u8 (0 f64, 1 q8) | source total dim u64
//! layer count u32
//! per layer: name (len u16 + utf8) | role u8 | encoding u8 | dim u64 | payload
//!   encoding 0: dim × f64 bits
//!   encoding 1: scale f64 | zero f64 | dim × u8
//! ```
//!
//! Values round-trip bit-exactly; the embedded RNG algorithm id must match
//! the build that reads the file, since stored seeds are meaningless under
//! any other stream algorithm.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::anchor::{AnchorBlock, AnchorLayer, AnchorPrecision, AnchorStore};
use crate::error::{Error, Result};
use crate::param::{LayerRole, LayerSpec, ParamSet};
use crate::rng::RNG_ALGO_ID;

const MAGIC: &[u8; 4] = b"ZOCP";
const VERSION: u32 = 1;

/// Writes bytes to `path` atomically (temp file + rename).
pub fn atomic_write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::config(format!("string too long: {} bytes", bytes.len())));
    }
    buf.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    buf.extend_from_slice(bytes);
    Ok(())
}

fn role_code(role: LayerRole) -> u8 {
    LayerRole::ALL.iter().position(|r| *r == role).unwrap() as u8
}

fn role_from_code(code: u8) -> Result<LayerRole> {
    LayerRole::ALL
        .get(code as usize)
        .copied()
        .ok_or_else(|| Error::format(format!("unknown role code {code}")))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                Error::format("checkpoint truncated")
            } else {
                Error::Io(e)
            }
        })?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.bytes(len)?).map_err(|_| Error::format("invalid utf8 in checkpoint"))
    }
}

fn write_header(buf: &mut Vec<u8>, kind: u8) -> Result<()> {
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind);
    put_str(buf, RNG_ALGO_ID)
}

fn read_header<R: Read>(r: &mut Reader<R>, want_kind: u8) -> Result<()> {
    let magic = r.bytes(4)?;
    if magic != MAGIC {
        return Err(Error::format("bad magic; not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let kind = r.u8()?;
    if kind != want_kind {
        return Err(Error::format(format!(
            "wrong checkpoint kind: found {kind}, expected {want_kind}"
        )));
    }
    let algo = r.string()?;
    if algo != RNG_ALGO_ID {
        return Err(Error::format(format!(
            "checkpoint was written with rng `{algo}`, this build uses `{RNG_ALGO_ID}`"
        )));
    }
    Ok(())
}

/// Serializes a ParamSet to the container format.
pub fn params_to_bytes(params: &ParamSet) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_header(&mut buf, 0)?;
    buf.extend_from_slice(&(params.num_layers() as u32).to_le_bytes());
    for (spec, values) in params.iter() {
        put_str(&mut buf, spec.name())?;
        buf.push(role_code(spec.role()));
        buf.push(0); // encoding: f64
        buf.extend_from_slice(&(spec.dim() as u64).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { inner: bytes };
    read_header(&mut r, 0)?;
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let role = role_from_code(r.u8()?)?;
        let encoding = r.u8()?;
        if encoding != 0 {
            return Err(Error::format("param checkpoint with non-f64 encoding"));
        }
        let dim = r.u64()? as usize;
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(r.f64()?);
        }
        layers.push((LayerSpec::new(name, role, dim)?, values));
    }
    ParamSet::new(layers)
}

pub fn save_params(path: &Path, params: &ParamSet) -> Result<()> {
    atomic_write_bytes(path, &params_to_bytes(params)?)
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    params_from_bytes(&fs::read(path)?)
}

/// Serializes an AnchorStore (precision tag included).
pub fn anchor_to_bytes(anchor: &AnchorStore) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_header(&mut buf, 1)?;
    buf.push(match anchor.precision() {
        AnchorPrecision::F64 => 0,
        AnchorPrecision::Q8 => 1,
    });
    buf.extend_from_slice(&(anchor.source_total_dim() as u64).to_le_bytes());
    buf.extend_from_slice(&(anchor.layers().len() as u32).to_le_bytes());
    for layer in anchor.layers() {
        put_str(&mut buf, &layer.name)?;
        buf.push(role_code(layer.role));
        match &layer.block {
            AnchorBlock::F64(values) => {
                buf.push(0);
                buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
                for v in values {
                    buf.extend_from_slice(&v.to_bits().to_le_bytes());
                }
            }
            AnchorBlock::Q8 { scale, zero, codes } => {
                buf.push(1);
                buf.extend_from_slice(&(codes.len() as u64).to_le_bytes());
                buf.extend_from_slice(&scale.to_bits().to_le_bytes());
                buf.extend_from_slice(&zero.to_bits().to_le_bytes());
                buf.extend_from_slice(codes);
            }
        }
    }
    Ok(buf)
}

pub fn anchor_from_bytes(bytes: &[u8]) -> Result<AnchorStore> {
    let mut r = Reader { inner: bytes };
    read_header(&mut r, 1)?;
    let precision = match r.u8()? {
        0 => AnchorPrecision::F64,
        1 => AnchorPrecision::Q8,
        other => return Err(Error::format(format!("unknown precision code {other}"))),
    };
    let source_total_dim = r.u64()? as usize;
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let role = role_from_code(r.u8()?)?;
        let encoding = r.u8()?;
        let dim = r.u64()? as usize;
        let block = match encoding {
            0 => {
                let mut values = Vec::with_capacity(dim);
                for _ in 0..dim {
                    values.push(r.f64()?);
                }
                AnchorBlock::F64(values)
            }
            1 => {
                let scale = r.f64()?;
                let zero = r.f64()?;
                let codes = r.bytes(dim)?;
                AnchorBlock::Q8 { scale, zero, codes }
            }
            other => return Err(Error::format(format!("unknown encoding code {other}"))),
        };
        layers.push(AnchorLayer { name, role, block });
    }
    Ok(AnchorStore::from_layers(layers, precision, source_total_dim))
}

pub fn save_anchor(path: &Path, anchor: &AnchorStore) -> Result<()> {
    atomic_write_bytes(path, &anchor_to_bytes(anchor)?)
}

pub fn load_anchor(path: &Path) -> Result<AnchorStore> {
    anchor_from_bytes(&fs::read(path)?)
}
