//! Binary container for keyed score tables (phrase table, reordering
//! table). Entries are grouped by source phrase; an in-memory index maps
//! each source phrase to its file offset so lookups seek straight to the
//! group instead of scanning the table.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"PSTB";
const VERSION: u8 = 1;
const HEADER_LEN: u64 = 30;

/// FNV-1a 64-bit hash, used as the file checksum and for manifest entries.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// One record under a source-phrase key: target tokens plus a fixed number
/// of scores.
#[derive(Debug, Clone, PartialEq)]
pub struct BinRecord {
    pub tgt: Vec<String>,
    pub scores: Vec<f64>,
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    let bytes = s.as_bytes();
    buf.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    buf.extend_from_slice(bytes);
}

/// Writes a binary table. `groups` must be sorted by key; every record must
/// carry exactly `score_count` scores.
pub fn write_table(path: &Path, score_count: u8, groups: &[(String, Vec<BinRecord>)]) -> Result<()> {
    let mut records = Vec::new();
    let mut index_entries: Vec<(String, u64, u32)> = Vec::new();
    let mut entry_count = 0u64;
    for (key, recs) in groups {
        let offset = HEADER_LEN + records.len() as u64;
        for rec in recs {
            if rec.scores.len() != score_count as usize {
                return Err(Error::InvalidArg(format!(
                    "record under '{key}' has {} scores, expected {score_count}",
                    rec.scores.len()
                )));
            }
            records.extend_from_slice(&(rec.tgt.len() as u16).to_le_bytes());
            for tok in &rec.tgt {
                push_str(&mut records, tok);
            }
            for &s in &rec.scores {
                records.extend_from_slice(&s.to_le_bytes());
            }
            entry_count += 1;
        }
        index_entries.push((key.clone(), offset, recs.len() as u32));
    }

    let index_offset = HEADER_LEN + records.len() as u64;
    let mut index = Vec::new();
    index.extend_from_slice(&(index_entries.len() as u64).to_le_bytes());
    for (key, offset, count) in &index_entries {
        push_str(&mut index, key);
        index.extend_from_slice(&offset.to_le_bytes());
        index.extend_from_slice(&count.to_le_bytes());
    }

    let mut payload = records;
    payload.extend_from_slice(&index);
    let checksum = fnv1a(&payload);

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&MAGIC).map_err(io)?;
    w.write_all(&[VERSION, score_count]).map_err(io)?;
    w.write_all(&entry_count.to_le_bytes()).map_err(io)?;
    w.write_all(&index_offset.to_le_bytes()).map_err(io)?;
    w.write_all(&checksum.to_le_bytes()).map_err(io)?;
    w.write_all(&payload).map_err(io)?;
    w.flush().map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!(
                "{}: truncated binary table",
                self.path.display()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Data(format!("{}: invalid UTF-8 in table", self.path.display())))
    }
}

/// Reader over a binary table. The index lives in memory; record groups are
/// read from the file on demand.
#[derive(Debug)]
pub struct BinTable {
    path: PathBuf,
    file: File,
    score_count: u8,
    entry_count: u64,
    index: HashMap<String, (u64, u32)>,
}

impl BinTable {
    /// Opens a table, validating magic number, version and checksum.
    pub fn open(path: &Path) -> Result<BinTable> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header)
            .map_err(|_| Error::Data(format!("{}: not a binary table (short file)", path.display())))?;
        if header[0..4] != MAGIC {
            return Err(Error::Data(format!(
                "{}: bad magic number (not a binary table)",
                path.display()
            )));
        }
        if header[4] != VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported table version {}",
                path.display(),
                header[4]
            )));
        }
        let score_count = header[5];
        let entry_count = u64::from_le_bytes(header[6..14].try_into().unwrap());
        let index_offset = u64::from_le_bytes(header[14..22].try_into().unwrap());
        let checksum = u64::from_le_bytes(header[22..30].try_into().unwrap());

        let mut payload = Vec::new();
        file.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
        if fnv1a(&payload) != checksum {
            return Err(Error::Data(format!(
                "{}: checksum mismatch (corrupt table)",
                path.display()
            )));
        }
        if index_offset < HEADER_LEN || index_offset as usize - HEADER_LEN as usize > payload.len() {
            return Err(Error::Data(format!(
                "{}: index offset out of range",
                path.display()
            )));
        }

        let mut cur = Cursor {
            bytes: &payload[(index_offset - HEADER_LEN) as usize..],
            pos: 0,
            path,
        };
        let group_count = cur.u64()?;
        let mut index = HashMap::with_capacity(group_count as usize);
        for _ in 0..group_count {
            let key = cur.string()?;
            let offset = cur.u64()?;
            let count = cur.u32()?;
            index.insert(key, (offset, count));
        }

        Ok(BinTable {
            path: path.to_path_buf(),
            file,
            score_count,
            entry_count,
            index,
        })
    }

    pub fn score_count(&self) -> u8 {
        self.score_count
    }

    pub fn entry_count(&self) -> u64 {
        self.entry_count
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    /// Reads the records stored under one key; empty when the key is absent.
    pub fn lookup(&mut self, key: &str) -> Result<Vec<BinRecord>> {
        let (offset, count) = match self.index.get(key) {
            Some(&v) => v,
            None => return Ok(Vec::new()),
        };
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut records = Vec::with_capacity(count as usize);
        let mut reader = std::io::BufReader::new(&self.file);
        for _ in 0..count {
            records.push(read_record(&mut reader, self.score_count, &self.path)?);
        }
        Ok(records)
    }

    /// All keys, sorted.
    pub fn keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.index.keys().cloned().collect();
        keys.sort();
        keys
    }

    /// Reads the whole table as sorted (key, records) groups.
    pub fn read_all(&mut self) -> Result<Vec<(String, Vec<BinRecord>)>> {
        let keys = self.keys();
        let mut out = Vec::with_capacity(keys.len());
        for key in keys {
            let records = self.lookup(&key)?;
            out.push((key, records));
        }
        Ok(out)
    }
}

fn read_record(reader: &mut impl Read, score_count: u8, path: &Path) -> Result<BinRecord> {
    let mut buf2 = [0u8; 2];
    let mut buf8 = [0u8; 8];
    let io = |_| Error::Data(format!("{}: truncated record", path.display()));
    reader.read_exact(&mut buf2).map_err(io)?;
    let tok_count = u16::from_le_bytes(buf2);
    let mut tgt = Vec::with_capacity(tok_count as usize);
    for _ in 0..tok_count {
        reader.read_exact(&mut buf2).map_err(io)?;
        let len = u16::from_le_bytes(buf2) as usize;
        let mut bytes = vec![0u8; len];
        reader.read_exact(&mut bytes).map_err(io)?;
        tgt.push(
            String::from_utf8(bytes)
                .map_err(|_| Error::Data(format!("{}: invalid UTF-8 in record", path.display())))?,
        );
    }
    let mut scores = Vec::with_capacity(score_count as usize);
    for _ in 0..score_count {
        reader.read_exact(&mut buf8).map_err(io)?;
        scores.push(f64::from_le_bytes(buf8));
    }
    Ok(BinRecord { tgt, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_groups() -> Vec<(String, Vec<BinRecord>)> {
        vec![
            (
                "der hund".to_string(),
                vec![BinRecord {
                    tgt: vec!["the".into(), "dog".into()],
                    scores: vec![0.5, 0.25, 1.0, 0.125],
                }],
            ),
            (
                "die katze".to_string(),
                vec![
                    BinRecord {
                        tgt: vec!["the".into(), "cat".into()],
                        scores: vec![0.75, 0.5, 0.9, 0.1],
                    },
                    BinRecord {
                        tgt: vec!["cat".into()],
                        scores: vec![0.25, 0.125, 0.3, 0.2],
                    },
                ],
            ),
        ]
    }

    #[test]
    fn roundtrip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.bin");
        let groups = sample_groups();
        write_table(&path, 4, &groups).unwrap();
        let mut table = BinTable::open(&path).unwrap();
        assert_eq!(table.entry_count(), 3);
        assert_eq!(table.score_count(), 4);
        assert_eq!(table.read_all().unwrap(), groups);
    }

    #[test]
    fn missing_key_yields_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.bin");
        write_table(&path, 4, &sample_groups()).unwrap();
        let mut table = BinTable::open(&path).unwrap();
        assert!(table.lookup("der tisch").unwrap().is_empty());
    }

    #[test]
    fn corrupt_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.bin");
        write_table(&path, 4, &sample_groups()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        match BinTable::open(&path) {
            Err(Error::Data(msg)) => assert!(msg.contains("checksum")),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.bin");
        std::fs::write(&path, b"NOTATABLE_AND_THEN_SOME_PADDING_BYTES").unwrap();
        match BinTable::open(&path) {
            Err(Error::Data(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected magic error, got {other:?}"),
        }
    }
}
