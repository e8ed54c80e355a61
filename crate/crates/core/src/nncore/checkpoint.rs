//! Checkpoint container.
//!
//! ```text
//! SSPSLAB-CHECKPOINT 1
//! key=value                    (any number, order preserved)
//! array <name> <d0>x<d1>...    (one line per array, declaration order)
//! end
//! <f64 little-endian payload, arrays concatenated in declaration order>
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "SSPSLAB-CHECKPOINT 1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointFile {
    pub header: Vec<(String, String)>,
    pub arrays: Vec<NamedArray>,
}

impl CheckpointFile {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        debug_assert!(!value.contains('\n'));
        match self.header.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.header.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing header key `{key}`")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::CorruptCheckpoint(format!("unparseable header key `{key}`")))
    }

    pub fn push_array(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push(NamedArray {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing array `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let _ = writeln!(out, "{MAGIC}");
        for (k, v) in &self.header {
            let _ = writeln!(out, "{k}={v}");
        }
        for a in &self.arrays {
            let shape: Vec<String> = a.shape.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "array {} {}", a.name, shape.join("x"));
        }
        let _ = writeln!(out, "end");
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| corrupt("truncated header"))?;
            pos += nl + 1;
            std::str::from_utf8(&rest[..nl]).map_err(|_| corrupt("header is not utf-8"))
        };
        if next_line()? != MAGIC {
            return Err(corrupt("bad magic line"));
        }
        let mut file = CheckpointFile::default();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("array ") {
                let (name, shape) = rest
                    .split_once(' ')
                    .ok_or_else(|| corrupt("bad array line"))?;
                let shape = if shape.is_empty() {
                    Vec::new()
                } else {
                    shape
                        .split('x')
                        .map(|d| d.parse().map_err(|_| corrupt("bad array shape")))
                        .collect::<Result<Vec<usize>>>()?
                };
                file.arrays.push(NamedArray {
                    name: name.to_string(),
                    shape,
                    data: Vec::new(),
                });
            } else {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| corrupt("bad header line"))?;
                file.header.push((k.to_string(), v.to_string()));
            }
        }
        let payload = &bytes[pos..];
        let total: usize = file
            .arrays
            .iter()
            .map(|a| a.shape.iter().product::<usize>())
            .sum();
        if payload.len() != total * 8 {
            return Err(Error::CorruptCheckpoint(format!(
                "payload has {} bytes, header declares {}",
                payload.len(),
                total * 8
            )));
        }
        let mut chunks = payload.chunks_exact(8);
        for a in &mut file.arrays {
            let n = a.shape.iter().product();
            a.data = chunks
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 0..40), step in any::<u64>()) {
            let mut f = CheckpointFile::default();
            f.set("step", step);
            f.push_array("a", vec![values.len()], values.clone());
            f.push_array("b", vec![2, 3], vec![1.5; 6]);
            let back = CheckpointFile::from_bytes(&f.to_bytes()).unwrap();
            prop_assert_eq!(back.get_parsed::<u64>("step").unwrap(), step);
            let got = &back.array("a").unwrap().data;
            prop_assert_eq!(got.len(), values.len());
            for (x, y) in got.iter().zip(&values) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut f = CheckpointFile::default();
        f.push_array("w", vec![4], vec![1.0, 2.0, 3.0, 4.0]);
        let mut bytes = f.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            CheckpointFile::from_bytes(&bytes),
            Err(Error::CorruptCheckpoint(_))
        ));
        assert!(CheckpointFile::from_bytes(b"garbage\n").is_err());
    }
}
