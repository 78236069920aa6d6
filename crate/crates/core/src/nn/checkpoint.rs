//! Checkpoint container: named f64 arrays and raw byte blobs behind a
//! versioned binary header. Serialization is byte-deterministic.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

use super::tape::Array;

const MAGIC: &[u8; 8] = b"RSCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Array(Array),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Entry)>,
}

impl Checkpoint {
    pub fn new() -> Checkpoint {
        Checkpoint::default()
    }

    pub fn put_array(&mut self, name: impl Into<String>, a: Array) {
        self.entries.push((name.into(), Entry::Array(a)));
    }

    pub fn put_bytes(&mut self, name: impl Into<String>, b: Vec<u8>) {
        self.entries.push((name.into(), Entry::Bytes(b)));
    }

    pub fn array(&self, name: &str) -> Result<&Array> {
        match self.entries.iter().find(|(n, _)| n == name) {
            Some((_, Entry::Array(a))) => Ok(a),
            _ => Err(CoreError::Checkpoint(format!("missing array entry {name}"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.entries.iter().find(|(n, _)| n == name) {
            Some((_, Entry::Bytes(b))) => Ok(b),
            _ => Err(CoreError::Checkpoint(format!("missing bytes entry {name}"))),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            match entry {
                Entry::Array(a) => {
                    out.push(0);
                    out.extend_from_slice(&(a.rows as u32).to_le_bytes());
                    out.extend_from_slice(&(a.cols as u32).to_le_bytes());
                    for x in &a.data {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Entry::Bytes(b) => {
                    out.push(1);
                    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    out.extend_from_slice(b);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut cur = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(bad("header"))?;
        if &magic != MAGIC {
            return Err(CoreError::Checkpoint("bad magic".into()));
        }
        let mut u32b = [0u8; 4];
        cur.read_exact(&mut u32b).map_err(bad("count"))?;
        let count = u32::from_le_bytes(u32b) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let mut u16b = [0u8; 2];
            cur.read_exact(&mut u16b).map_err(bad("name len"))?;
            let name_len = u16::from_le_bytes(u16b) as usize;
            let mut name = vec![0u8; name_len];
            cur.read_exact(&mut name).map_err(bad("name"))?;
            let name = String::from_utf8(name)
                .map_err(|_| CoreError::Checkpoint("non-utf8 name".into()))?;
            let mut kind = [0u8; 1];
            cur.read_exact(&mut kind).map_err(bad("kind"))?;
            match kind[0] {
                0 => {
                    cur.read_exact(&mut u32b).map_err(bad("rows"))?;
                    let rows = u32::from_le_bytes(u32b) as usize;
                    cur.read_exact(&mut u32b).map_err(bad("cols"))?;
                    let cols = u32::from_le_bytes(u32b) as usize;
                    let mut data = vec![0.0; rows * cols];
                    let mut f64b = [0u8; 8];
                    for x in &mut data {
                        cur.read_exact(&mut f64b).map_err(bad("data"))?;
                        *x = f64::from_le_bytes(f64b);
                    }
                    entries.push((name, Entry::Array(Array::from_vec(rows, cols, data))));
                }
                1 => {
                    let mut u64b = [0u8; 8];
                    cur.read_exact(&mut u64b).map_err(bad("blob len"))?;
                    let len = u64::from_le_bytes(u64b) as usize;
                    let mut blob = vec![0u8; len];
                    cur.read_exact(&mut blob).map_err(bad("blob"))?;
                    entries.push((name, Entry::Bytes(blob)));
                }
                k => return Err(CoreError::Checkpoint(format!("unknown entry kind {k}"))),
            }
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn bad(what: &'static str) -> impl Fn(std::io::Error) -> CoreError {
    move |e| CoreError::Checkpoint(format!("truncated {what}: {e}"))
}
