//! Embedding-database file, all integers little-endian:
//!
//! ```text
//! header:  "SMLY" | version u32 | dim u32 | name_len u32 | name (UTF-8) | count u64
//! record:  patch_id u64 | slide_id u32 | mag u8 | orientation u8 | x u32 | y u32 | side u16 | dim x f32
//! ```
//!
//! `mag` is the objective power (40, 20, 10, 5). Records are sorted by
//! (patch id, orientation code).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::shard::{DbHeader, IndexParams, ShardSet};
use super::IndexEntry;
use crate::error::{Error, Result};
use crate::model::{Embedding, Magnification, Orientation, PatchMeta};

pub const MAGIC: &[u8; 4] = b"SMLY";
pub const FORMAT_VERSION: u32 = 1;
/// Fixed bytes of a record before the vector payload.
pub const RECORD_META_BYTES: usize = 8 + 4 + 1 + 1 + 4 + 4 + 2;

pub fn header_size(embedder: &str) -> usize {
    4 + 4 + 4 + 4 + embedder.len() + 8
}

pub fn record_size(dim: usize) -> usize {
    RECORD_META_BYTES + 4 * dim
}

/// Exact byte length of a database file.
pub fn file_size(embedder: &str, dim: usize, count: u64) -> u64 {
    header_size(embedder) as u64 + count * record_size(dim) as u64
}

/// Serializes a header and entries; entries are written in the order given.
pub fn encode(header: &DbHeader, entries: &[IndexEntry]) -> Result<Vec<u8>> {
    if header.count != entries.len() as u64 {
        return Err(Error::Format(format!(
            "header count {} but {} entries",
            header.count,
            entries.len()
        )));
    }
    let mut buf =
        Vec::with_capacity(file_size(&header.embedder, header.dim, header.count) as usize);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(header.embedder.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.embedder.as_bytes());
    buf.extend_from_slice(&header.count.to_le_bytes());
    for e in entries {
        if e.embedding.dim() != header.dim {
            return Err(Error::DimMismatch {
                expected: header.dim,
                found: e.embedding.dim(),
            });
        }
        let p = &e.patch;
        let side = u16::try_from(p.side_px)
            .map_err(|_| Error::Format(format!("patch side {} exceeds u16", p.side_px)))?;
        buf.extend_from_slice(&p.patch_id.to_le_bytes());
        buf.extend_from_slice(&p.slide_id.to_le_bytes());
        buf.push(p.magnification.power());
        buf.push(e.orientation.code());
        buf.extend_from_slice(&p.x.to_le_bytes());
        buf.extend_from_slice(&p.y.to_le_bytes());
        buf.extend_from_slice(&side.to_le_bytes());
        for c in e.embedding.as_slice() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated file: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn decode_header(c: &mut Cursor<'_>) -> Result<DbHeader> {
    if c.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = c.u32()? as usize;
    if dim == 0 {
        return Err(Error::Format("zero dimension".into()));
    }
    let name_len = c.u32()? as usize;
    let embedder = std::str::from_utf8(c.take(name_len)?)
        .map_err(|_| Error::Format("embedder name is not UTF-8".into()))?
        .to_string();
    let count = c.u64()?;
    Ok(DbHeader {
        embedder,
        dim,
        count,
    })
}

/// Parses a database file, validating magic, version and exact length.
pub fn decode(buf: &[u8]) -> Result<(DbHeader, Vec<IndexEntry>)> {
    let mut c = Cursor { buf, pos: 0 };
    let DbHeader {
        embedder,
        dim,
        count,
    } = decode_header(&mut c)?;
    let expected = file_size(&embedder, dim, count);
    if buf.len() as u64 != expected {
        return Err(Error::Format(format!(
            "file is {} bytes, header implies {expected}",
            buf.len()
        )));
    }
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let patch_id = c.u64()?;
        let slide_id = c.u32()?;
        let power = c.u8()?;
        let magnification = Magnification::from_power(power)
            .ok_or_else(|| Error::Format(format!("bad magnification {power}")))?;
        let code = c.u8()?;
        let orientation = Orientation::from_code(code)
            .ok_or_else(|| Error::Format(format!("bad orientation code {code}")))?;
        let x = c.u32()?;
        let y = c.u32()?;
        let side_px = c.u16()? as u32;
        let raw = c.take(4 * dim)?;
        let v: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        entries.push(IndexEntry {
            patch: PatchMeta {
                patch_id,
                slide_id,
                magnification,
                x,
                y,
                side_px,
            },
            orientation,
            embedding: Embedding::new(v).map_err(|e| Error::Format(e.to_string()))?,
        });
    }
    Ok((
        DbHeader {
            embedder,
            dim,
            count,
        },
        entries,
    ))
}

pub fn write_db_file(
    path: impl AsRef<Path>,
    header: &DbHeader,
    entries: &[IndexEntry],
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(header, entries)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_db_file(path: impl AsRef<Path>) -> Result<(DbHeader, Vec<IndexEntry>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Reads only the header of a database file.
pub fn read_db_header(path: impl AsRef<Path>) -> Result<DbHeader> {
    use std::io::Read;
    let path = path.as_ref();
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = vec![0u8; 16];
    let short = |_| Error::Format("truncated header".into());
    f.read_exact(&mut buf).map_err(short)?;
    let name_len = u32::from_le_bytes(buf[12..16].try_into().expect("4 bytes")) as usize;
    if name_len > 1 << 16 {
        return Err(Error::Format("embedder name too long".into()));
    }
    buf.resize(16 + name_len + 8, 0);
    f.read_exact(&mut buf[16..]).map_err(short)?;
    decode_header(&mut Cursor { buf: &buf, pos: 0 })
}

/// Writes every entry of `db` in canonical order.
pub fn save_db(db: &ShardSet, path: impl AsRef<Path>) -> Result<()> {
    write_db_file(path, db.header(), &db.entries())
}

/// Reads a database file and rebuilds its shards with `params`.
pub fn load_db(path: impl AsRef<Path>, params: &IndexParams) -> Result<ShardSet> {
    let (header, entries) = read_db_file(path)?;
    ShardSet::build(&header.embedder, header.dim, entries, params)
}

/// [`load_db`], additionally requiring a specific embedder name and dimension.
pub fn load_db_for(
    path: impl AsRef<Path>,
    params: &IndexParams,
    embedder: &str,
    dim: usize,
) -> Result<ShardSet> {
    let db = load_db(path, params)?;
    if db.embedder() != embedder {
        return Err(Error::EmbedderMismatch {
            database: db.embedder().to_string(),
            query: embedder.to_string(),
        });
    }
    if db.dim() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            found: db.dim(),
        });
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_shards;
    use crate::index::testutil::random_entries;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.smly");
        let db = build_shards("reference-v1", 16, random_entries(80, 16, 1), 3, 100_000).unwrap();
        save_db(&db, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len() as u64, file_size("reference-v1", 16, 80));
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 12 + 8 + 80 * (24 + 64));
        let loaded = load_db(&path, db.params()).unwrap();
        assert_eq!(loaded.entries(), db.entries());
        save_db(&loaded, dir.path().join("again.smly")).unwrap();
        assert_eq!(fs::read(dir.path().join("again.smly")).unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_rejected() {
        let db = build_shards("e", 4, random_entries(10, 4, 2), 1, 100).unwrap();
        let bytes = encode(db.header(), &db.entries()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(Error::Format(m)) if m.contains("version")));
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long).is_err());
        assert!(decode(&bytes[..10]).is_err());
    }

    #[test]
    fn embedder_checked_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.smly");
        let db = build_shards("a", 4, random_entries(10, 4, 2), 1, 100).unwrap();
        save_db(&db, &path).unwrap();
        let p = IndexParams::default();
        assert!(load_db_for(&path, &p, "a", 4).is_ok());
        assert!(matches!(
            load_db_for(&path, &p, "b", 4),
            Err(Error::EmbedderMismatch { .. })
        ));
        assert!(matches!(
            load_db_for(&path, &p, "a", 8),
            Err(Error::DimMismatch { .. })
        ));
        assert_eq!(&read_db_header(&path).unwrap(), db.header());
        fs::write(&path, &fs::read(&path).unwrap()[..20]).unwrap();
        assert!(read_db_header(&path).is_err());
    }
}
