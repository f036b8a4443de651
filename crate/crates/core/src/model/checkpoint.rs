//! Little-endian binary checkpoints.
//!
//! ```text
//! magic       8 bytes  "ADVCKPT\0"
//! version     u32
//! config      u32 length + UTF-8 canonical key=value text
//! seed        u64
//! count       u32
//! per tensor  u32 name length + UTF-8 name, u32 rank, rank x u32 extents,
//!             extents.product() x f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

use super::config::ModelConfig;

pub const MAGIC: [u8; 8] = *b"ADVCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Fills `buf`, reporting a short read as truncation of `what`.
fn take(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(what),
        _ => Error::Io(e),
    })
}

fn get_u32(r: &mut impl Read, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    take(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str(r: &mut impl Read, what: &'static str, limit: usize) -> Result<String> {
    let len = get_u32(r, what)? as usize;
    if len > limit {
        return Err(Error::Format(format!("{what} length {len} exceeds {limit}")));
    }
    let mut b = vec![0u8; len];
    take(r, &mut b, what)?;
    String::from_utf8(b).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        put_str(w, &self.config.to_text())?;
        w.write_all(&self.seed.to_le_bytes())?;
        put_u32(w, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_str(w, name)?;
            put_u32(w, t.rank())?;
            for &e in t.shape() {
                put_u32(w, e)?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        take(r, &mut magic, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic bytes {magic:02x?}")));
        }
        let version = get_u32(r, "version")?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let text = get_str(r, "config", 1 << 16)?;
        let config = ModelConfig::from_text(&text)?;
        let mut seed = [0u8; 8];
        take(r, &mut seed, "seed")?;
        let count = get_u32(r, "tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = get_str(r, "tensor name", 1 << 12)?;
            let rank = get_u32(r, "tensor rank")? as usize;
            if rank > MAX_RANK {
                return Err(Error::Format(format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(get_u32(r, "tensor extent")? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; 4 * numel];
            take(r, &mut raw, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Self {
            config,
            seed: u64::from_le_bytes(seed),
            tensors,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
