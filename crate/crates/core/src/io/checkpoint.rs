//! Model checkpoint file format.
//!
//! Layout: 8-byte magic `VPFORGE1`, format version u32, then repeated records
//! of (name length u32, UTF-8 name, rank u32, dims u32 x rank, little-endian
//! f32 payload). The final record is named `crc32` and carries, as its four
//! payload bytes, the IEEE CRC32 of every preceding byte of the file, so
//! truncation or bit corruption anywhere is detected on load.

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"VPFORGE1";
pub const VERSION: u32 = 1;
const CRC_RECORD_NAME: &str = "crc32";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl ParamRecord {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, data: Vec<f32>) -> Self {
        let rec = ParamRecord {
            name: name.into(),
            dims,
            data,
        };
        debug_assert_eq!(rec.expected_len(), rec.data.len());
        rec
    }

    fn expected_len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

pub fn crc32(bytes: &[u8]) -> u32 {
    const POLY: u32 = 0xEDB8_8320;
    static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u32; 256];
        for (i, entry) in t.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { POLY ^ (c >> 1) } else { c >> 1 };
            }
            *entry = c;
        }
        t
    });
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

fn push_record(out: &mut Vec<u8>, name: &str, dims: &[u32], payload_le: &[u8]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(payload_le);
}

pub fn save_checkpoint(path: &Path, records: &[ParamRecord]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for rec in records {
        if rec.name == CRC_RECORD_NAME {
            return Err(Error::Config(format!(
                "record name '{CRC_RECORD_NAME}' is reserved"
            )));
        }
        if !seen.insert(rec.name.as_str()) {
            return Err(Error::Config(format!(
                "duplicate record name '{}'",
                rec.name
            )));
        }
        if rec.expected_len() != rec.data.len() {
            return Err(Error::shape(
                "checkpoint record payload",
                rec.expected_len(),
                rec.data.len(),
            ));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for rec in records {
        let mut payload = Vec::with_capacity(rec.data.len() * 4);
        for v in &rec.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        push_record(&mut out, &rec.name, &rec.dims, &payload);
    }
    let crc = crc32(&out);
    push_record(&mut out, CRC_RECORD_NAME, &[1], &crc.to_le_bytes());
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path.display(),
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<ParamRecord>> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path.display(), "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            path.display(),
            format!("unknown format version {version}"),
        ));
    }

    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut crc_checked = false;
    while r.pos < bytes.len() {
        if crc_checked {
            return Err(Error::format(path.display(), "data after crc32 record"));
        }
        let record_start = r.pos;
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format(path.display(), "record name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()?);
        }
        let count: usize = dims.iter().map(|&d| d as usize).product();
        let payload = r.take(count * 4)?;

        if name == CRC_RECORD_NAME {
            let stored = u32::from_le_bytes(
                payload
                    .try_into()
                    .map_err(|_| Error::format(path.display(), "malformed crc32 record"))?,
            );
            let computed = crc32(&bytes[..record_start]);
            if stored != computed {
                return Err(Error::format(
                    path.display(),
                    format!("crc mismatch: stored {stored:#010x}, computed {computed:#010x}"),
                ));
            }
            crc_checked = true;
            continue;
        }
        if !seen.insert(name.clone()) {
            return Err(Error::format(
                path.display(),
                format!("duplicate record name '{name}'"),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(ParamRecord { name, dims, data });
    }
    if !crc_checked {
        return Err(Error::format(path.display(), "missing crc32 record"));
    }
    Ok(records)
}

/// Helpers for storing a UTF-8 blob (e.g. a config document) as a record:
/// each byte becomes one f32 payload value, which the fixed record layout
/// represents exactly.
pub fn string_record(name: &str, text: &str) -> ParamRecord {
    let data: Vec<f32> = text.bytes().map(|b| b as f32).collect();
    ParamRecord::new(name, vec![data.len() as u32], data)
}

pub fn record_to_string(rec: &ParamRecord) -> Result<String> {
    let bytes: Vec<u8> = rec
        .data
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::Config(format!(
                    "record '{}' does not hold byte values",
                    rec.name
                )))
            }
        })
        .collect::<Result<_>>()?;
    String::from_utf8(bytes)
        .map_err(|_| Error::Config(format!("record '{}' is not UTF-8", rec.name)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_checkpoint_body_is_magic_plus_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ckpt");
        save_checkpoint(&path, &[]).unwrap();
        let bytes = fs::read(&path).unwrap();
        // 12 bytes of header, then the trailing crc record
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert!(load_checkpoint(&path).unwrap().is_empty());
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let rec = ParamRecord::new("w", vec![2, 2], vec![1.0, -2.5, 3.25e-8, f32::MIN_POSITIVE]);
        save_checkpoint(&path, std::slice::from_ref(&rec)).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, vec![rec]);
    }

    #[test]
    fn corrupted_payload_byte_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let rec = ParamRecord::new("w", vec![4], vec![1.0, 2.0, 3.0, 4.0]);
        save_checkpoint(&path, &[rec]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let i = bytes.len() - 30; // inside the w payload
        bytes[i] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("crc mismatch"), "{err}");
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &[]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn duplicate_names_rejected_on_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let a = ParamRecord::new("p", vec![1], vec![1.0]);
        assert!(save_checkpoint(&path, &[a.clone(), a]).is_err());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let rec = ParamRecord::new("w", vec![8], vec![0.5; 8]);
        save_checkpoint(&path, &[rec]).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn string_record_roundtrip() {
        let rec = string_record("meta", "{\"a\":1}");
        assert_eq!(record_to_string(&rec).unwrap(), "{\"a\":1}");
    }
}
