//! On-disk formats and the synthetic paired-embedding generator.
//!
//! All integers are little-endian. Every reader checks magic and version
//! before touching the payload and reports failures with a byte offset.
//!
//! Embedding file (`HCEM`, version 1):
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `HCEM` |
//! | 4  | 4 | version `u32` |
//! | 8  | 8 | count `u64` |
//! | 16 | 4 | dim `u32` |
//! | 20 | 1 | modality `u8` (0 text, 1 observation) |
//! | 21 | 3 | zero padding |
//! | 24 | 8 | labels offset `u64` |
//! | 32 | 8 | categories offset `u64` |
//! | 40 | 8 | name table offset `u64` |
//! | 48 | count·dim·4 | rows, row-major `f32` |
//!
//! followed by `count` label ids (`u32`), `count` category ids (`u32`) and a
//! name table: `u32` label-name count, each name as `u32` byte length plus
//! UTF-8 bytes, then the same for category names.

mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use synth::{generate_synthetic, nearest_mean_accuracy, SynthConfig, SynthData};

use crate::data::{EmbeddingSet, Modality};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"HCEM";
pub const EMBEDDING_VERSION: u32 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 48;

/// Writes through a sibling temp file and renames on success, so a failed
/// write never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Cursor over a byte buffer that reports every failure with its offset.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn seek(&mut self, offset: u64) -> Result<()> {
        if offset > self.bytes.len() as u64 {
            return Err(Error::TruncatedPayload {
                offset,
                needed: 0,
                available: 0,
            });
        }
        self.pos = offset as usize;
        Ok(())
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::TruncatedPayload {
                offset: self.pos as u64,
                needed: n as u64,
                available: available as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// Fails early if `count` items of `width` bytes cannot fit.
    pub(crate) fn require(&self, count: u64, width: u64) -> Result<usize> {
        let available = (self.bytes.len() - self.pos) as u64;
        let needed = count.saturating_mul(width);
        if needed > available {
            return Err(Error::TruncatedPayload {
                offset: self.pos as u64,
                needed,
                available,
            });
        }
        Ok(needed as usize)
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            let mut found = [0u8; 4];
            found.copy_from_slice(got);
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, supported: u32) -> Result<()> {
        let v = self.u32()?;
        if v != supported {
            return Err(Error::VersionUnsupported {
                found: v,
                supported,
            });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u32_vec(&mut self, n: u64) -> Result<Vec<u32>> {
        let len = self.require(n, 4)?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn u64_vec(&mut self, n: u64) -> Result<Vec<u64>> {
        let len = self.require(n, 8)?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = self.require(n as u64, 4)?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let at = self.pos as u64;
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Malformed {
            offset: at,
            reason: "name is not valid UTF-8".into(),
        })
    }

    /// Errors if unread bytes remain.
    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Malformed {
                offset: self.pos as u64,
                reason: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn push_names(out: &mut Vec<u8>, names: &[String]) {
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for n in names {
        out.extend_from_slice(&(n.len() as u32).to_le_bytes());
        out.extend_from_slice(n.as_bytes());
    }
}

pub fn embeddings_to_bytes(set: &EmbeddingSet) -> Vec<u8> {
    let count = set.count() as u64;
    let payload = count * set.dim() as u64 * 4;
    let labels_off = EMBEDDING_HEADER_LEN as u64 + payload;
    let cats_off = labels_off + 4 * count;
    let names_off = cats_off + 4 * count;

    let mut out = Vec::with_capacity(names_off as usize + 16);
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    out.push(set.modality().tag());
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&labels_off.to_le_bytes());
    out.extend_from_slice(&cats_off.to_le_bytes());
    out.extend_from_slice(&names_off.to_le_bytes());
    debug_assert_eq!(out.len(), EMBEDDING_HEADER_LEN);
    for &x in set.rows() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &l in set.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &c in set.categories() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    push_names(&mut out, set.label_names());
    push_names(&mut out, set.category_names());
    out
}

pub fn embeddings_from_bytes(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut r = ByteReader::new(bytes);
    r.magic(EMBEDDING_MAGIC)?;
    r.version(EMBEDDING_VERSION)?;
    let count = r.u64()?;
    let dim = r.u32()? as usize;
    let tag_at = r.position() as u64;
    let modality = Modality::from_tag(r.u8()?).ok_or_else(|| Error::Malformed {
        offset: tag_at,
        reason: "unknown modality tag".into(),
    })?;
    r.take(3)?;
    let labels_off = r.u64()?;
    let cats_off = r.u64()?;
    let names_off = r.u64()?;

    let n_floats = count
        .checked_mul(dim as u64)
        .ok_or_else(|| Error::Malformed {
            offset: 8,
            reason: "count x dim overflows".into(),
        })?;
    let payload_start = r.position() as u64;
    r.require(n_floats, 4)?;
    let rows = r.f32_vec(n_floats as usize)?;
    if let Some(i) = rows.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInFile {
            offset: payload_start + 4 * i as u64,
            row: i / dim,
            col: i % dim,
        });
    }

    r.seek(labels_off)?;
    let labels = r.u32_vec(count)?;
    r.seek(cats_off)?;
    let categories = r.u32_vec(count)?;
    r.seek(names_off)?;
    let read_table = |r: &mut ByteReader| -> Result<Vec<String>> {
        let n = r.u32()?;
        // Each name needs at least its 4-byte length prefix.
        r.require(u64::from(n), 4)?;
        (0..n).map(|_| r.string()).collect()
    };
    let label_names = read_table(&mut r)?;
    let category_names = read_table(&mut r)?;
    r.finish()?;

    Ok(
        EmbeddingSet::new(count as usize, dim, rows, labels, categories, modality)?
            .with_names(label_names, category_names),
    )
}

pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    write_atomic(path, &embeddings_to_bytes(set))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    embeddings_from_bytes(&bytes)
}
