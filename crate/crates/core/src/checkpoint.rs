//! Single-file little-endian container of named arrays.
//!
//! Layout: magic, version (u32), array count (u32), directory, data. Each
//! directory entry holds the name, dtype, shape, data offset, byte length and
//! a CRC-32 of the bytes.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"HIMLOCO\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("corrupted checkpoint: {0}")]
    Corrupted(String),
    #[error("checkpoint is missing array {0}")]
    Missing(String),
    #[error("array {name}: expected {expected}, found {found}")]
    Mismatch { name: String, expected: String, found: String },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
}

impl DType {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::F32),
            1 => Some(Self::F64),
            2 => Some(Self::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
            Self::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
            Self::U8 => "u8",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Little-endian element bytes.
    pub bytes: Vec<u8>,
}

/// Values that can be stored as checkpoint arrays.
pub trait Element: Copy {
    const DTYPE: DType;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(b: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> Self {
        f32::from_le_bytes(b.try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> Self {
        f64::from_le_bytes(b.try_into().unwrap())
    }
}

impl Element for u8 {
    const DTYPE: DType = DType::U8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(b: &[u8]) -> Self {
        b[0]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub arrays: Vec<Array>,
}

impl Container {
    pub fn push<E: Element>(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[E]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut bytes = Vec::with_capacity(data.len() * E::DTYPE.size());
        for &v in data {
            v.write_le(&mut bytes);
        }
        self.arrays.push(Array { name: name.into(), dtype: E::DTYPE, shape, bytes });
    }

    pub fn get(&self, name: &str) -> Result<&Array, CheckpointError> {
        self.arrays.iter().find(|a| a.name == name).ok_or_else(|| CheckpointError::Missing(name.into()))
    }

    /// Reads an array, checking dtype and shape.
    pub fn read<E: Element>(&self, name: &str, shape: &[usize]) -> Result<Vec<E>, CheckpointError> {
        let a = self.get(name)?;
        if a.dtype != E::DTYPE {
            return Err(CheckpointError::Mismatch {
                name: name.into(),
                expected: E::DTYPE.name().into(),
                found: a.dtype.name().into(),
            });
        }
        if a.shape != shape {
            return Err(CheckpointError::Mismatch {
                name: name.into(),
                expected: format!("{shape:?}"),
                found: format!("{:?}", a.shape),
            });
        }
        Ok(a.bytes.chunks_exact(E::DTYPE.size()).map(E::read_le).collect())
    }

    pub fn read_bytes(&self, name: &str) -> Result<&[u8], CheckpointError> {
        let a = self.get(name)?;
        if a.dtype != DType::U8 {
            return Err(CheckpointError::Mismatch { name: name.into(), expected: "u8".into(), found: a.dtype.name().into() });
        }
        Ok(&a.bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut dir = Vec::new();
        let mut dir_len = 0usize;
        for a in &self.arrays {
            dir_len += 4 + a.name.len() + 1 + 4 + 8 * a.shape.len() + 8 + 8 + 4;
        }
        let header = MAGIC.len() + 4 + 4;
        let mut offset = (header + dir_len) as u64;
        for a in &self.arrays {
            dir.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            dir.extend_from_slice(a.name.as_bytes());
            dir.push(a.dtype as u8);
            dir.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                dir.extend_from_slice(&(d as u64).to_le_bytes());
            }
            dir.extend_from_slice(&offset.to_le_bytes());
            dir.extend_from_slice(&(a.bytes.len() as u64).to_le_bytes());
            dir.extend_from_slice(&crc32fast::hash(&a.bytes).to_le_bytes());
            offset += a.bytes.len() as u64;
        }
        let mut out = Vec::with_capacity(offset as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        out.extend_from_slice(&dir);
        for a in &self.arrays {
            out.extend_from_slice(&a.bytes);
        }
        out
    }

    /// Parses and verifies every array; nothing is returned unless all checks pass.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let n = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CheckpointError::Corrupted("array name is not utf-8".into()))?;
            let dtype = DType::from_u8(r.take(1)?[0])
                .ok_or_else(|| CheckpointError::Corrupted(format!("{name}: unknown dtype")))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let offset = r.u64()? as usize;
            let byte_len = r.u64()? as usize;
            let crc = r.u32()?;
            let expected = shape.iter().try_fold(dtype.size(), |a, &d| a.checked_mul(d));
            if expected != Some(byte_len) {
                return Err(CheckpointError::Corrupted(format!("{name}: shape {shape:?} does not match {byte_len} bytes")));
            }
            let end = offset
                .checked_add(byte_len)
                .filter(|&e| e <= buf.len())
                .ok_or_else(|| CheckpointError::Corrupted(format!("{name}: data runs past end of file (truncated?)")))?;
            let bytes = buf[offset..end].to_vec();
            if crc32fast::hash(&bytes) != crc {
                return Err(CheckpointError::Corrupted(format!("{name}: checksum mismatch")));
            }
            arrays.push(Array { name, dtype, shape, bytes });
        }
        Ok(Self { arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
        // Write to a sibling temp file first so a crash never leaves a half file.
        let tmp = path.with_extension("bin.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&buf)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Corrupted("directory runs past end of file (truncated?)".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::default();
        c.push("a", vec![2, 2], &[1.0f32, 2.0, 3.0, 4.0]);
        c.push("b", vec![3], &[0.5f64, -1.0, 1e300]);
        c.push("s", vec![5], b"hello");
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.read::<f64>("b", &[3]).unwrap(), vec![0.5, -1.0, 1e300]);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes();
        for len in 0..bytes.len() {
            assert!(Container::from_bytes(&bytes[..len]).is_err(), "length {len} accepted");
        }
    }

    #[test]
    fn flipped_data_byte_fails_checksum() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        assert!(matches!(Container::from_bytes(&bytes), Err(CheckpointError::Corrupted(_))));
    }

    #[test]
    fn wrong_version_and_magic() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert!(matches!(Container::from_bytes(&bytes), Err(CheckpointError::Version(9))));
        bytes[0] = b'X';
        assert!(matches!(Container::from_bytes(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn dtype_and_shape_checked_on_read() {
        let c = sample();
        assert!(matches!(c.read::<f64>("a", &[2, 2]), Err(CheckpointError::Mismatch { .. })));
        assert!(matches!(c.read::<f32>("a", &[4]), Err(CheckpointError::Mismatch { .. })));
    }
}
