//! NMLF tensor container.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic    4 bytes  "NMLF"
//! version  u32      1
//! count    u32      number of entries
//! entry*   name_len u16, name (UTF-8), dtype u8 (0 = f32, 1 = f64),
//!          rows u32, cols u32, rows*cols values in row-major order
//! ```
//!
//! A file must end exactly after its last entry.

use std::fs;
use std::path::Path;

use crate::error::{ForgeError, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"NMLF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn from_code(code: u8) -> Option<Dtype> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: Dtype,
    /// Values are always held as f64; f32 payloads are widened on read.
    pub matrix: Matrix,
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| ForgeError::Format("too many entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for e in entries {
        let name_len =
            u16::try_from(e.name.len()).map_err(|_| ForgeError::Format(format!("name too long: {}", e.name)))?;
        let dim =
            |d: usize| u32::try_from(d).map_err(|_| ForgeError::Format(format!("{}: dimension too large", e.name)));
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.dtype as u8);
        out.extend_from_slice(&dim(e.matrix.rows())?.to_le_bytes());
        out.extend_from_slice(&dim(e.matrix.cols())?.to_le_bytes());
        for &v in e.matrix.as_slice() {
            match e.dtype {
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ForgeError::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(ForgeError::Format("bad magic (expected NMLF)".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(ForgeError::Format(format!("unsupported version {version}")));
    }
    let count = cur.u32("entry count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| ForgeError::Format("entry name is not UTF-8".into()))?
            .to_string();
        let code = cur.take(1, "dtype")?[0];
        let dtype =
            Dtype::from_code(code).ok_or_else(|| ForgeError::Format(format!("{name}: unknown dtype {code}")))?;
        let rows = cur.u32("rows")? as usize;
        let cols = cur.u32("cols")? as usize;
        let payload_len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(dtype.width()))
            .ok_or_else(|| ForgeError::Format(format!("{name}: payload size overflows")))?;
        let payload = cur.take(payload_len, &format!("payload of `{name}`"))?;
        let data = match dtype {
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        entries.push(Entry {
            name,
            dtype,
            matrix: Matrix::from_vec(rows, cols, data),
        });
    }
    if cur.pos != bytes.len() {
        return Err(ForgeError::Format(format!(
            "{} trailing bytes after last entry",
            bytes.len() - cur.pos
        )));
    }
    Ok(entries)
}

pub fn read(path: &Path) -> Result<Vec<Entry>> {
    let bytes = fs::read(path).map_err(|e| ForgeError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        ForgeError::Format(msg) => ForgeError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, entries: &[Entry]) -> Result<()> {
    fs::write(path, encode(entries)?).map_err(|e| ForgeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Vec<Entry> {
        vec![
            Entry {
                name: "a".into(),
                dtype: Dtype::F64,
                matrix: Matrix::from_rows(&[vec![1.0, 2.0]]),
            },
            Entry {
                name: "层.b".into(),
                dtype: Dtype::F32,
                matrix: Matrix::from_rows(&[vec![0.5], vec![-3.0]]),
            },
        ]
    }

    #[test]
    fn exact_layout() {
        let bytes = encode(&sample()[..1]).unwrap();
        let mut expected = b"NMLF".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u16.to_le_bytes());
        expected.push(b'a');
        expected.push(1);
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(1.0f64.to_le_bytes());
        expected.extend(2.0f64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn validation_errors() {
        let good = encode(&sample()).unwrap();
        assert_eq!(decode(&good).unwrap(), sample());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic).unwrap_err().to_string().contains("magic"));
        assert!(decode(&good[..good.len() - 1])
            .unwrap_err()
            .to_string()
            .contains("truncated"));
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(decode(&trailing).unwrap_err().to_string().contains("trailing"));
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(decode(&bad_version).is_err());
        let mut bad_dtype = encode(&sample()[..1]).unwrap();
        bad_dtype[4 + 4 + 4 + 2 + 1] = 7;
        assert!(decode(&bad_dtype).unwrap_err().to_string().contains("dtype"));
    }

    proptest! {
        #[test]
        fn f64_round_trip(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..24), cols in 1usize..4) {
            let rows = values.len() / cols;
            let m = Matrix::from_vec(rows, cols, values[..rows * cols].to_vec());
            let entries = vec![Entry { name: "w".into(), dtype: Dtype::F64, matrix: m }];
            prop_assert_eq!(decode(&encode(&entries).unwrap()).unwrap(), entries);
        }
    }
}
