//! Binary tensor encoding, the `OCT1` tensor file, and CSV vector ingestion.
//!
//! All multi-byte values are little-endian. A tensor body is
//! `u8 rank, rank × u32 dims, f64 data`. Files end in a CRC32 over every
//! preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"OCT1";
pub const TENSOR_VERSION: u16 = 1;

/// Appends a tensor body to `buf`.
pub fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    buf.push(t.rank() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Sequential little-endian reader over a byte slice.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("truncated: need {n} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        if n.saturating_mul(8) > self.remaining() {
            return Err(Error::Format(format!("truncated tensor of shape {shape:?}")));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Wraps `payload` as `magic, version, payload, crc32`.
pub fn seal(magic: &[u8; 4], version: u16, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 10);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Checks magic, version and checksum; returns the version and payload.
pub fn unseal<'a>(magic: &[u8; 4], max_version: u16, bytes: &'a [u8]) -> Result<(u16, &'a [u8])> {
    if bytes.len() < 10 {
        return Err(Error::Format("file too short".into()));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic bytes {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version > max_version {
        return Err(Error::Version { found: version, supported: max_version });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok((version, &body[6..]))
}

pub fn encode_tensor_file(t: &Tensor) -> Vec<u8> {
    let mut payload = Vec::with_capacity(t.len() * 8 + 16);
    put_tensor(&mut payload, t);
    seal(TENSOR_MAGIC, TENSOR_VERSION, &payload)
}

pub fn decode_tensor_file(bytes: &[u8]) -> Result<Tensor> {
    let (_, payload) = unseal(TENSOR_MAGIC, TENSOR_VERSION, bytes)?;
    let mut r = Reader::new(payload);
    let t = r.tensor()?;
    if !r.is_done() {
        return Err(Error::Format("trailing bytes after tensor".into()));
    }
    Ok(t)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor_file(t))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = read_artifact(path)?;
    decode_tensor_file(&bytes)
}

/// Reads a file, mapping "not found" to [`Error::MissingArtifact`].
pub fn read_artifact(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// On-disk layout of an ingested dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IngestFormat {
    BinaryTensor,
    CsvVectors,
}

/// Parses comma-separated rows of reals into an `n × d` matrix.
///
/// Blank lines and lines starting with `#` are skipped; a non-numeric first
/// row is treated as a header.
pub fn parse_csv_vectors(text: &str) -> Result<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if rows.is_empty() && width.is_none() => {
                width = Some(line.split(',').count());
                continue;
            }
            Err(e) => return Err(Error::Parse { line: lineno, msg: format!("not a number: {e}") }),
        };
        match width {
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("row has {} fields, expected {w}", row.len()),
                })
            }
            _ => width = Some(row.len()),
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse { line: lineno, msg: "non-finite value".into() });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("csv contains no data rows".into()));
    }
    Tensor::from_rows(&rows)
}

pub fn ingest(path: &Path, format: IngestFormat) -> Result<Tensor> {
    match format {
        IngestFormat::BinaryTensor => read_tensor(path),
        IngestFormat::CsvVectors => {
            let bytes = read_artifact(path)?;
            let text = String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?;
            parse_csv_vectors(&text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_file_layout() {
        let t = Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap();
        let bytes = encode_tensor_file(&t);
        assert_eq!(&bytes[..4], b"OCT1");
        assert_eq!(&bytes[4..6], &1u16.to_le_bytes());
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[7..11], &1u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &2u32.to_le_bytes());
        assert_eq!(&bytes[15..23], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 4 + 2 + 1 + 8 + 16 + 4);
        assert_eq!(decode_tensor_file(&bytes).unwrap(), t);
    }

    #[test]
    fn corruption_is_detected() {
        let t = Tensor::vector(vec![0.5; 4]).unwrap();
        let mut bytes = encode_tensor_file(&t);
        let n = bytes.len();
        bytes[n - 8] ^= 1;
        assert!(matches!(decode_tensor_file(&bytes), Err(Error::Checksum { .. })));

        let mut bad = encode_tensor_file(&t);
        bad[0] = b'X';
        assert!(matches!(decode_tensor_file(&bad), Err(Error::Format(_))));

        let mut newer = encode_tensor_file(&t);
        newer[4] = 9;
        assert!(matches!(decode_tensor_file(&newer), Err(Error::Version { found: 9, .. })));

        let good = encode_tensor_file(&t);
        assert!(decode_tensor_file(&good[..good.len() - 12]).is_err());
    }

    #[test]
    fn csv_ragged_row_names_line() {
        let err = parse_csv_vectors("1,2,3\n4,5,6\n7,8\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn csv_with_header_and_comments() {
        let t = parse_csv_vectors("a,b\n# note\n1,2\n\n3.5,-4\n").unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.5, -4.0]);
    }

    #[test]
    fn csv_garbage_after_data_is_error() {
        assert!(matches!(parse_csv_vectors("1,2\nx,y\n"), Err(Error::Parse { line: 2, .. })));
    }
}
