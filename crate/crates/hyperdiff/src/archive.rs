//! Checkpoint container: a JSON header listing parameter names and
//! shapes, then the raw little-endian f32 payloads concatenated in
//! name order. Round-trips are bit-exact.
//!
//! Layout: u32 LE header length, UTF-8 JSON header, payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use hyperdiff_core::tensor::Tensor;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    parameters: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

/// Write named tensors; entries are sorted by name before writing.
pub fn write_archive(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut sorted: Vec<&(String, Tensor)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::format(format!(
                "duplicate tensor name {:?} in checkpoint",
                pair[0].0
            )));
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        parameters: sorted
            .iter()
            .map(|(n, t)| Entry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::with_capacity(4 + header_bytes.len());
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, t) in &sorted {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read all named tensors back, in header (name) order.
pub fn read_archive(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(Error::format(format!("{}: truncated checkpoint", path.display())));
    }
    let hlen = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if bytes.len() < 4 + hlen {
        return Err(Error::format(format!("{}: truncated header", path.display())));
    }
    let header: Header =
        serde_json::from_slice(&bytes[4..4 + hlen]).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            header.format_version
        )));
    }
    let mut off = 4 + hlen;
    let mut out = Vec::with_capacity(header.parameters.len());
    for e in &header.parameters {
        let n: usize = e.shape.iter().product();
        let need = n * 4;
        if bytes.len() < off + need {
            return Err(Error::format(format!(
                "{}: payload too short for {:?}",
                path.display(),
                e.name
            )));
        }
        let mut data = Vec::with_capacity(n);
        for chunk in bytes[off..off + need].chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        off += need;
        out.push((e.name.clone(), Tensor::from_vec(&e.shape, data)));
    }
    if off != bytes.len() {
        return Err(Error::format(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() - off
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let entries = vec![
            (
                "z.weight".to_string(),
                Tensor::from_vec(&[2, 2], vec![1.5, -0.25, f32::MIN_POSITIVE, 3.0e8]),
            ),
            ("a.bias".to_string(), Tensor::from_vec(&[3], vec![0.0, -0.0, 7.25])),
        ];
        write_archive(&path, &entries).unwrap();
        let back = read_archive(&path).unwrap();
        // sorted by name on disk
        assert_eq!(back[0].0, "a.bias");
        assert_eq!(back[1].0, "z.weight");
        for (name, t) in &entries {
            let (_, got) = back.iter().find(|(n, _)| n == name).unwrap();
            assert_eq!(got.shape(), t.shape());
            for (a, b) in got.data().iter().zip(t.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        // byte-identical on rewrite
        let bytes1 = std::fs::read(&path).unwrap();
        write_archive(&path, &back).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn duplicate_names_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let entries = vec![
            ("w".to_string(), Tensor::zeros(&[1])),
            ("w".to_string(), Tensor::zeros(&[1])),
        ];
        assert!(write_archive(&path, &entries).is_err());
    }

    #[test]
    fn truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_archive(
            &path,
            &[("w".to_string(), Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]))],
        )
        .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(read_archive(&path).is_err());
    }
}
