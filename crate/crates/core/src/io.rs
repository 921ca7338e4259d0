//! Little-endian binary containers and content hashing for artifacts.
//!
//! Every artifact file starts with an 8-byte magic tag and a `u32` format
//! version, followed by a payload written with the helpers below.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub struct BinWriter {
    buf: Vec<u8>,
}

impl BinWriter {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.write_u32::<LittleEndian>(version).unwrap();
        BinWriter { buf }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).unwrap();
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).unwrap();
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).unwrap();
    }

    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn u64_slice(&mut self, vs: &[u64]) {
        self.buf.reserve(vs.len() * 8);
        for &v in vs {
            self.u64(v);
        }
    }

    pub fn f64_slice(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct BinReader<'a> {
    cur: Cursor<&'a [u8]>,
    artifact: &'static str,
}

impl<'a> BinReader<'a> {
    /// Checks the magic tag and version, leaving the cursor at the payload.
    pub fn open(
        bytes: &'a [u8],
        magic: &[u8; 8],
        version: u32,
        artifact: &'static str,
    ) -> Result<Self> {
        let mut r = BinReader {
            cur: Cursor::new(bytes),
            artifact,
        };
        let mut tag = [0u8; 8];
        r.cur.read_exact(&mut tag).map_err(|e| r.malformed(e))?;
        if &tag != magic {
            return Err(Error::Malformed {
                artifact,
                reason: "bad magic tag".into(),
            });
        }
        let found = r.u32()?;
        if found != version {
            return Err(Error::VersionMismatch {
                artifact,
                expected: version,
                found,
            });
        }
        Ok(r)
    }

    fn malformed(&self, e: impl std::fmt::Display) -> Error {
        Error::Malformed {
            artifact: self.artifact,
            reason: e.to_string(),
        }
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LittleEndian>().map_err(|e| self.malformed(e))
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LittleEndian>().map_err(|e| self.malformed(e))
    }

    /// Reads a length or index, rejecting values that cannot be a sane size.
    pub fn usize(&mut self, limit: usize) -> Result<usize> {
        let v = self.u64()?;
        if v > limit as u64 {
            return Err(self.malformed(format!("size {v} exceeds limit {limit}")));
        }
        Ok(v as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LittleEndian>().map_err(|e| self.malformed(e))
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self.usize(1 << 20)?;
        let mut bytes = vec![0u8; len];
        self.cur.read_exact(&mut bytes).map_err(|e| self.malformed(e))?;
        String::from_utf8(bytes).map_err(|e| self.malformed(e))
    }

    pub fn u64_vec(&mut self, len: usize) -> Result<Vec<u64>> {
        self.check_remaining(len * 8)?;
        (0..len).map(|_| self.u64()).collect()
    }

    pub fn f64_vec(&mut self, len: usize) -> Result<Vec<f64>> {
        self.check_remaining(len * 8)?;
        (0..len).map(|_| self.f64()).collect()
    }

    fn check_remaining(&self, bytes: usize) -> Result<()> {
        let left = self.cur.get_ref().len() as u64 - self.cur.position();
        if (bytes as u64) > left {
            return Err(self.malformed(format!("needs {bytes} bytes, {left} left")));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let left = self.cur.get_ref().len() as u64 - self.cur.position();
        if left != 0 {
            return Err(self.malformed(format!("{left} trailing bytes")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_checks() {
        let mut w = BinWriter::new(b"TESTTAG1", 3);
        w.u64(42);
        w.str("hello");
        w.f64(-0.5);
        let bytes = w.finish();

        let mut r = BinReader::open(&bytes, b"TESTTAG1", 3, "test").unwrap();
        assert_eq!(r.u64().unwrap(), 42);
        assert_eq!(r.str().unwrap(), "hello");
        assert_eq!(r.f64().unwrap(), -0.5);
        r.finish().unwrap();

        assert!(matches!(
            BinReader::open(&bytes, b"TESTTAG1", 4, "test"),
            Err(Error::VersionMismatch { found: 3, .. })
        ));
        assert!(matches!(
            BinReader::open(&bytes, b"OTHERTAG", 3, "test"),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let mut w = BinWriter::new(b"TESTTAG1", 1);
        w.u64(10);
        let bytes = w.finish();
        let mut r = BinReader::open(&bytes[..bytes.len() - 1], b"TESTTAG1", 1, "test").unwrap();
        assert!(r.u64().is_err());
    }

    #[test]
    fn sha_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
