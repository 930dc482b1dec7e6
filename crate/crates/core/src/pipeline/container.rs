//! The `UNRB` container: a header, a section table and CRC-checked little-endian sections.
//!
//! ```text
//! header (16 bytes)   magic "UNRB" | version u32 | section count u32 | reserved u32
//! table (56 bytes × n) name [u8; 32] (UTF-8, zero padded) | offset u64 | length u64 | crc32 u32 | reserved u32
//! payloads            each section starts on an 8-byte boundary, gaps are zero
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"UNRB";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 16;
pub const ENTRY_BYTES: usize = 56;
pub const NAME_BYTES: usize = 32;
const ALIGN: usize = 8;

/// Where a section lives in the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionEntry {
    pub name: String,
    pub offset: u64,
    pub length: u64,
    pub crc32: u32,
}

/// Named byte sections in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Container {
    pub sections: Vec<(String, Vec<u8>)>,
}

fn corrupt(section: &str, reason: impl Into<String>) -> Error {
    Error::Corruption {
        section: section.into(),
        reason: reason.into(),
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

impl Container {
    pub fn push(&mut self, name: impl Into<String>, data: Vec<u8>) {
        self.sections.push((name.into(), data));
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[u8]> {
        self.get(name)
            .ok_or_else(|| corrupt(name, "section missing"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    /// Table entries as they would be written.
    pub fn layout(&self) -> Result<Vec<SectionEntry>> {
        let mut offset = HEADER_BYTES + ENTRY_BYTES * self.sections.len();
        let mut out = Vec::with_capacity(self.sections.len());
        for (i, (name, data)) in self.sections.iter().enumerate() {
            if name.is_empty() || name.len() > NAME_BYTES || name.contains('\0') {
                return Err(Error::Argument(format!(
                    "section name `{name}` must be 1..={NAME_BYTES} bytes without NUL"
                )));
            }
            if self.sections[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Argument(format!("duplicate section `{name}`")));
            }
            offset = offset.next_multiple_of(ALIGN);
            out.push(SectionEntry {
                name: name.clone(),
                offset: offset as u64,
                length: data.len() as u64,
                crc32: crc32fast::hash(data),
            });
            offset += data.len();
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let table = self.layout()?;
        let total = table
            .last()
            .map_or(HEADER_BYTES, |e| (e.offset + e.length) as usize);
        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(table.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for e in &table {
            let mut name = [0u8; NAME_BYTES];
            name[..e.name.len()].copy_from_slice(e.name.as_bytes());
            out.extend_from_slice(&name);
            out.extend_from_slice(&e.offset.to_le_bytes());
            out.extend_from_slice(&e.length.to_le_bytes());
            out.extend_from_slice(&e.crc32.to_le_bytes());
            out.extend_from_slice(&0u32.to_le_bytes());
        }
        for (e, (_, data)) in table.iter().zip(&self.sections) {
            out.resize(e.offset as usize, 0);
            out.extend_from_slice(data);
        }
        Ok(out)
    }

    /// Parses and validates the header and table without checking section payloads.
    pub fn read_table(bytes: &[u8]) -> Result<Vec<SectionEntry>> {
        if bytes.len() < HEADER_BYTES {
            return Err(corrupt(
                "header",
                format!("file is {} bytes, shorter than the header", bytes.len()),
            ));
        }
        if bytes[..4] != MAGIC {
            return Err(corrupt("header", "bad magic"));
        }
        let version = u32_at(bytes, 4);
        if version != VERSION {
            return Err(corrupt("header", format!("unsupported version {version}")));
        }
        let n = u32_at(bytes, 8) as usize;
        let table_end = n
            .checked_mul(ENTRY_BYTES)
            .and_then(|t| t.checked_add(HEADER_BYTES))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                corrupt(
                    "table",
                    format!("table of {n} entries runs past the end of the file"),
                )
            })?;
        let mut entries = Vec::with_capacity(n);
        let mut prev_end = table_end as u64;
        for i in 0..n {
            let at = HEADER_BYTES + i * ENTRY_BYTES;
            let raw = &bytes[at..at + NAME_BYTES];
            let len = raw.iter().position(|&b| b == 0).unwrap_or(NAME_BYTES);
            let name = std::str::from_utf8(&raw[..len])
                .map_err(|_| corrupt("table", format!("entry {i} name is not UTF-8")))?
                .to_string();
            let e = SectionEntry {
                offset: u64_at(bytes, at + NAME_BYTES),
                length: u64_at(bytes, at + NAME_BYTES + 8),
                crc32: u32_at(bytes, at + NAME_BYTES + 16),
                name,
            };
            if e.offset < prev_end {
                return Err(corrupt(&e.name, "section overlaps its predecessor"));
            }
            let end = e
                .offset
                .checked_add(e.length)
                .filter(|&end| end <= bytes.len() as u64);
            prev_end = end.ok_or_else(|| {
                corrupt(
                    &e.name,
                    "section runs past the end of the file (truncated?)",
                )
            })?;
            entries.push(e);
        }
        Ok(entries)
    }

    /// Parses a whole file; any inconsistency fails the load without returning partial data.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let table = Self::read_table(bytes)?;
        let mut sections = Vec::with_capacity(table.len());
        for e in table {
            let data = &bytes[e.offset as usize..(e.offset + e.length) as usize];
            if crc32fast::hash(data) != e.crc32 {
                return Err(corrupt(&e.name, "checksum mismatch"));
            }
            sections.push((e.name, data.to_vec()));
        }
        Ok(Self { sections })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Little-endian encoders and decoders for section payloads.
pub mod le {
    use crate::error::Result;

    pub fn f32s(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
        values.into_iter().flat_map(f32::to_le_bytes).collect()
    }

    pub fn f64s(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
        values.into_iter().flat_map(f64::to_le_bytes).collect()
    }

    pub fn u32s(values: impl IntoIterator<Item = u32>) -> Vec<u8> {
        values.into_iter().flat_map(u32::to_le_bytes).collect()
    }

    fn chunks<'a, const N: usize>(
        section: &str,
        b: &'a [u8],
    ) -> Result<impl Iterator<Item = [u8; N]> + 'a> {
        if b.len() % N != 0 {
            return Err(super::corrupt(
                section,
                format!("length {} is not a multiple of {N}", b.len()),
            ));
        }
        Ok(b.chunks_exact(N)
            .map(|c| c.try_into().expect("exact chunk")))
    }

    pub fn read_f32s(section: &str, b: &[u8]) -> Result<Vec<f32>> {
        Ok(chunks::<4>(section, b)?.map(f32::from_le_bytes).collect())
    }

    pub fn read_f64s(section: &str, b: &[u8]) -> Result<Vec<f64>> {
        Ok(chunks::<8>(section, b)?.map(f64::from_le_bytes).collect())
    }

    pub fn read_u32s(section: &str, b: &[u8]) -> Result<Vec<u32>> {
        Ok(chunks::<4>(section, b)?.map(u32::from_le_bytes).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::default();
        c.push("manifest", b"{\"a\":1}".to_vec());
        c.push("odd", vec![1, 2, 3]);
        c.push("empty", Vec::new());
        c.push("floats", le::f32s([1.5, -2.0, f32::MAX]));
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"UNRB");
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let t = Container::read_table(&bytes).unwrap();
        assert!(t.iter().all(|e| e.offset % 8 == 0));
        assert_eq!(
            le::read_f32s("floats", back.get("floats").unwrap()).unwrap(),
            vec![1.5, -2.0, f32::MAX]
        );
    }

    #[test]
    fn truncation_detected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 3, 15, 40, bytes.len() - 1] {
            assert!(
                matches!(
                    Container::from_bytes(&bytes[..cut]),
                    Err(Error::Corruption { .. })
                ),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn bit_flip_names_section() {
        let c = sample();
        let mut bytes = c.to_bytes().unwrap();
        let e = &Container::read_table(&bytes).unwrap()[3];
        bytes[e.offset as usize + 2] ^= 0x40;
        match Container::from_bytes(&bytes) {
            Err(Error::Corruption { section, .. }) => assert_eq!(section, "floats"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_names() {
        let mut c = Container::default();
        c.push("x".repeat(33), vec![]);
        assert!(c.to_bytes().is_err());
        let mut c = Container::default();
        c.push("a", vec![]);
        c.push("a", vec![]);
        assert!(c.to_bytes().is_err());
    }
}
