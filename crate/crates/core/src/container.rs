//! Binary container for datasets, models and trajectories.
//!
//! Layout: magic `PDEF`, version u32 LE, header byte length u64 LE, a UTF-8
//! structured-text header listing named arrays `{name, dtype, shape, byte
//! offset}` plus an optional one-line JSON metadata record, then the payload
//! of little-endian raw arrays (each 64-byte aligned, offsets relative to the
//! payload start) and a trailing CRC32 of the payload region.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PDEF";
pub const VERSION: u32 = 1;
const ALIGN: u64 = 64;

/// Full-precision float formatting for CSV output (17 significant digits).
pub fn fmt_g17(x: f64) -> String {
    format!("{:.16e}", x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone)]
enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    data: ArrayData,
}

impl Entry {
    fn dtype(&self) -> Dtype {
        match self.data {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
        }
    }

    fn len(&self) -> usize {
        match &self.data {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    fn byte_len(&self) -> u64 {
        (self.len() * self.dtype().size()) as u64
    }
}

/// In-memory container. Arrays keep insertion order; writing the same
/// container twice produces byte-identical files.
#[derive(Debug, Clone, Default)]
pub struct Container {
    meta: Option<String>,
    entries: Vec<Entry>,
}

impl Container {
    pub fn new() -> Container {
        Container::default()
    }

    /// Attach a JSON metadata record (serialized once, stored verbatim).
    pub fn set_meta<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let text = serde_json::to_string(value)
            .map_err(|e| Error::Format(format!("meta serialization: {e}")))?;
        self.meta = Some(text);
        Ok(())
    }

    pub fn meta_text(&self) -> Option<&str> {
        self.meta.as_deref()
    }

    pub fn meta<T: DeserializeOwned>(&self) -> Result<T> {
        let text = self
            .meta
            .as_deref()
            .ok_or_else(|| Error::Format("container has no metadata record".into()))?;
        serde_json::from_str(text).map_err(|e| Error::Format(format!("meta parse: {e}")))
    }

    pub fn push_f64(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        self.push(name, shape, ArrayData::F64(data))
    }

    pub fn push_f32(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<()> {
        self.push(name, shape, ArrayData::F32(data))
    }

    fn push(&mut self, name: &str, shape: &[usize], data: ArrayData) -> Result<()> {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Format(format!("invalid array name {name:?}")));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Format(format!("duplicate array name {name:?}")));
        }
        let entry = Entry { name: name.to_string(), shape: shape.to_vec(), data };
        let want: usize = shape.iter().product();
        if entry.len() != want {
            return Err(Error::Shape(format!(
                "array {name}: {} values do not fill shape {:?}",
                entry.len(),
                shape
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn get_f64(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let e = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("array {name:?} not found")))?;
        match &e.data {
            ArrayData::F64(v) => Ok((&e.shape, v)),
            ArrayData::F32(_) => Err(Error::Format(format!("array {name:?} is f32, wanted f64"))),
        }
    }

    pub fn get_f32(&self, name: &str) -> Result<(&[usize], &[f32])> {
        let e = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("array {name:?} not found")))?;
        match &e.data {
            ArrayData::F32(v) => Ok((&e.shape, v)),
            ArrayData::F64(_) => Err(Error::Format(format!("array {name:?} is f64, wanted f32"))),
        }
    }

    fn offsets(&self) -> Vec<u64> {
        let mut cur = 0u64;
        let mut out = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            out.push(cur);
            cur = (cur + e.byte_len()).div_ceil(ALIGN) * ALIGN;
        }
        out
    }

    fn header_text(&self) -> String {
        let offsets = self.offsets();
        let mut text = String::from("pdeforge-container\n");
        if let Some(meta) = &self.meta {
            text.push_str("meta ");
            text.push_str(meta);
            text.push('\n');
        }
        for (e, off) in self.entries.iter().zip(&offsets) {
            let shape = e.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            text.push_str(&format!("array {} {} {} {}\n", e.name, e.dtype().name(), shape, off));
        }
        text
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = self.header_text();
        let offsets = self.offsets();
        let payload_len = match self.entries.last() {
            Some(e) => offsets[offsets.len() - 1] + e.byte_len(),
            None => 0,
        };
        let mut payload = vec![0u8; payload_len as usize];
        for (e, off) in self.entries.iter().zip(&offsets) {
            let dst = &mut payload[*off as usize..*off as usize + e.byte_len() as usize];
            match &e.data {
                ArrayData::F32(v) => {
                    for (chunk, val) in dst.chunks_exact_mut(4).zip(v) {
                        chunk.copy_from_slice(&val.to_le_bytes());
                    }
                }
                ArrayData::F64(v) => {
                    for (chunk, val) in dst.chunks_exact_mut(8).zip(v) {
                        chunk.copy_from_slice(&val.to_le_bytes());
                    }
                }
            }
        }
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&payload);
        let crc = hasher.finalize();

        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        // pad so the payload region starts 64-byte aligned
        let pos = 16 + header.len() as u64;
        let pad = pos.div_ceil(ALIGN) * ALIGN - pos;
        w.write_all(&vec![0u8; pad as usize])?;
        w.write_all(&payload)?;
        w.write_all(&crc.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Container> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic: not a pdeforge container".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let mut word8 = [0u8; 8];
        r.read_exact(&mut word8)?;
        let header_len = u64::from_le_bytes(word8) as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header =
            String::from_utf8(header).map_err(|_| Error::Format("header is not UTF-8".into()))?;

        let mut meta = None;
        struct Decl {
            name: String,
            dtype: Dtype,
            shape: Vec<usize>,
            offset: u64,
        }
        let mut decls: Vec<Decl> = Vec::new();
        let mut lines = header.lines();
        if lines.next() != Some("pdeforge-container") {
            return Err(Error::Format("missing container header tag".into()));
        }
        for line in lines {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                meta = Some(rest.to_string());
                continue;
            }
            let rest = line
                .strip_prefix("array ")
                .ok_or_else(|| Error::Format(format!("unrecognized header line: {line}")))?;
            let parts: Vec<&str> = rest.split(' ').collect();
            if parts.len() != 4 {
                return Err(Error::Format(format!("malformed array line: {line}")));
            }
            let dtype = match parts[1] {
                "f32" => Dtype::F32,
                "f64" => Dtype::F64,
                other => return Err(Error::Format(format!("array {}: unknown dtype {other}", parts[0]))),
            };
            let shape: Vec<usize> = parts[2]
                .split('x')
                .map(|d| d.parse().map_err(|_| Error::Format(format!("array {}: bad shape", parts[0]))))
                .collect::<Result<_>>()?;
            let offset: u64 = parts[3]
                .parse()
                .map_err(|_| Error::Format(format!("array {}: bad offset", parts[0])))?;
            decls.push(Decl { name: parts[0].to_string(), dtype, shape, offset });
        }
        // offsets 64-aligned, ascending, non-overlapping
        let mut prev_end = 0u64;
        for d in &decls {
            if d.offset % ALIGN != 0 {
                return Err(Error::Format(format!("array {}: offset not 64-byte aligned", d.name)));
            }
            if d.offset < prev_end {
                return Err(Error::Format(format!("array {}: overlapping offset", d.name)));
            }
            prev_end = d.offset + (d.shape.iter().product::<usize>() * d.dtype.size()) as u64;
        }
        let payload_len = prev_end as usize;

        // skip alignment padding between header and payload
        let pos = 16 + header_len as u64;
        let pad = (pos.div_ceil(ALIGN) * ALIGN - pos) as usize;
        let mut scratch = vec![0u8; pad];
        r.read_exact(&mut scratch)?;
        let mut payload = vec![0u8; payload_len];
        r.read_exact(&mut payload)?;
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let stored_crc = u32::from_le_bytes(word);
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&payload);
        if hasher.finalize() != stored_crc {
            return Err(Error::Format("payload CRC32 mismatch".into()));
        }

        let mut out = Container { meta, entries: Vec::new() };
        for d in decls {
            let count: usize = d.shape.iter().product();
            let bytes = &payload[d.offset as usize..d.offset as usize + count * d.dtype.size()];
            let data = match d.dtype {
                Dtype::F32 => ArrayData::F32(
                    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                Dtype::F64 => ArrayData::F64(
                    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
            };
            out.entries.push(Entry { name: d.name, shape: d.shape, data });
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Container> {
        let mut r = BufReader::new(File::open(path)?);
        Container::read_from(&mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.set_meta(&serde_json::json!({"kind": "test", "seed": 7})).unwrap();
        c.push_f64("a/solution", &[4, 4], (0..16).map(|i| i as f64 * 0.5).collect()).unwrap();
        c.push_f32("a/small", &[3], vec![1.0, 2.5, -3.0]).unwrap();
        c.push_f64("b", &[2, 2, 2], (0..8).map(|i| (i as f64).sin()).collect()).unwrap();
        c
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let c = sample();
        let mut buf1 = Vec::new();
        c.write_to(&mut buf1).unwrap();
        let read = Container::read_from(&mut buf1.as_slice()).unwrap();
        let mut buf2 = Vec::new();
        read.write_to(&mut buf2).unwrap();
        assert_eq!(buf1, buf2);
        let (shape, data) = read.get_f64("a/solution").unwrap();
        assert_eq!(shape, &[4, 4]);
        assert_eq!(data[3], 1.5);
        assert_eq!(read.meta_text(), c.meta_text());
    }

    #[test]
    fn corrupted_payload_fails_crc() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let n = buf.len();
        buf[n - 20] ^= 0xff; // inside the last array
        let err = Container::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(format!("{err}").contains("CRC32"));
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut buf = b"XXXX".to_vec();
        buf.extend_from_slice(&[0u8; 12]);
        assert!(Container::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn duplicate_and_invalid_names_rejected() {
        let mut c = Container::new();
        c.push_f64("x", &[1], vec![1.0]).unwrap();
        assert!(c.push_f64("x", &[1], vec![2.0]).is_err());
        assert!(c.push_f64("bad name", &[1], vec![1.0]).is_err());
        assert!(c.push_f64("wrong", &[3], vec![1.0]).is_err());
    }

    #[test]
    fn offsets_are_aligned() {
        let c = sample();
        for off in c.offsets() {
            assert_eq!(off % 64, 0);
        }
    }
}
