//! Flat binary tensor archive: a text header listing
//! `(name, shape, dtype=float32, byte offset)` followed by raw little-endian
//! f32 payload. Loading then saving reproduces the file byte-exactly.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &str = "NDTA1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub entries: Vec<TensorEntry>,
}

impl TensorArchive {
    pub fn get(&self, name: &str) -> Result<&TensorEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::config(format!("weights file is missing tensor `{name}`")))
    }

    pub fn push(&mut self, entry: TensorEntry) {
        self.entries.push(entry);
    }

    pub fn extend(&mut self, entries: Vec<TensorEntry>) {
        self.entries.extend(entries);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        header.push_str(&format!("{}\n", self.entries.len()));
        let mut offset = 0usize;
        for e in &self.entries {
            let dims = e
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            header.push_str(&format!("{} {} float32 {}\n", e.name, dims, offset));
            offset += e.data.len() * 4;
        }
        header.push_str("DATA\n");
        let mut bytes = header.into_bytes();
        for e in &self.entries {
            for v in &e.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let data_tag = b"DATA\n";
        let split = bytes
            .windows(data_tag.len())
            .position(|w| w == data_tag)
            .ok_or_else(|| Error::config("weights file has no DATA marker"))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::config("weights header is not utf-8"))?;
        let payload = &bytes[split + data_tag.len()..];

        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::config("weights file has wrong magic"));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.parse().ok())
            .ok_or_else(|| Error::config("weights header has no entry count"))?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| Error::config("weights header truncated"))?;
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 4 || parts[2] != "float32" {
                return Err(Error::config(format!("bad weights header line `{line}`")));
            }
            let name = parts[0].to_string();
            let shape: Vec<usize> = parts[1]
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::config(format!("bad shape in `{line}`")))?;
            let offset: usize = parts[3]
                .parse()
                .map_err(|_| Error::config(format!("bad offset in `{line}`")))?;
            let len: usize = shape.iter().product();
            let end = offset + len * 4;
            if end > payload.len() {
                return Err(Error::config(format!("tensor `{name}` exceeds payload")));
            }
            let mut data = Vec::with_capacity(len);
            for chunk in payload[offset..end].chunks_exact(4) {
                data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
            }
            entries.push(TensorEntry { name, shape, data });
        }
        Ok(TensorArchive { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
