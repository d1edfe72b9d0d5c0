//! The on-disk cube container: a directory with `header.json`,
//! `data.bin` (raw little-endian f32, row-major over (row, col, band)),
//! `labels.bin` (raw little-endian u16, 0 = unlabeled), and an optional
//! `classes.json` naming classes and, optionally, fixing their colors.
//!
//! A plain CSV of `row,col,band,value` lines (plus an optional
//! `row,col,label` CSV) can be ingested into the same container for
//! tests and small datasets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hyperdiff_core::hsi::{HsiCube, LabelMap};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
}

impl CubeHeader {
    pub fn for_cube(cube: &HsiCube) -> Self {
        Self {
            height: cube.height(),
            width: cube.width(),
            bands: cube.bands(),
            dtype: "f32".to_string(),
            byte_order: "little".to_string(),
            layout: "band-interleaved-by-pixel".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dtype != "f32" {
            return Err(Error::format(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.byte_order != "little" {
            return Err(Error::format(format!(
                "unsupported byte order {:?}",
                self.byte_order
            )));
        }
        if self.layout != "band-interleaved-by-pixel" {
            return Err(Error::format(format!("unsupported layout {:?}", self.layout)));
        }
        Ok(())
    }
}

/// Entry in `classes.json`: either a bare name or a name plus color.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassEntry {
    Name(String),
    Full {
        name: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        color: Option<[u8; 3]>,
    },
}

impl ClassEntry {
    pub fn name(&self) -> &str {
        match self {
            ClassEntry::Name(n) => n,
            ClassEntry::Full { name, .. } => name,
        }
    }

    pub fn color(&self) -> Option<[u8; 3]> {
        match self {
            ClassEntry::Name(_) => None,
            ClassEntry::Full { color, .. } => *color,
        }
    }
}

pub type ClassTable = BTreeMap<u16, ClassEntry>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path)
}

/// Write a cube + labels (+ optional class table) as a container dir.
pub fn write_cube(
    dir: &Path,
    cube: &HsiCube,
    labels: &LabelMap,
    classes: Option<&ClassTable>,
) -> Result<()> {
    labels.matches(cube)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("header.json"), &CubeHeader::for_cube(cube))?;

    let mut bytes = Vec::with_capacity(cube.data().len() * 4);
    for v in cube.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let data_path = dir.join("data.bin");
    fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))?;

    let mut lbytes = Vec::with_capacity(labels.labels().len() * 2);
    for l in labels.labels() {
        lbytes.extend_from_slice(&l.to_le_bytes());
    }
    let labels_path = dir.join("labels.bin");
    fs::write(&labels_path, lbytes).map_err(|e| Error::io(&labels_path, e))?;

    if let Some(table) = classes {
        write_json(&dir.join("classes.json"), table)?;
    }
    Ok(())
}

/// Load a container directory.
pub fn read_cube(dir: &Path) -> Result<(HsiCube, LabelMap, Option<ClassTable>)> {
    let header: CubeHeader = read_json(&dir.join("header.json"))?;
    header.validate()?;
    let expected = header.height * header.width * header.bands;

    let data_path = dir.join("data.bin");
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::format(format!(
            "payload size mismatch: data.bin holds {} bytes, header implies {}",
            bytes.len(),
            expected * 4
        )));
    }
    let mut data = Vec::with_capacity(expected);
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cube".to_string());
    let cube = HsiCube::new(header.height, header.width, header.bands, data, &name)?;

    let labels_path = dir.join("labels.bin");
    let lbytes = fs::read(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    if lbytes.len() != header.height * header.width * 2 {
        return Err(Error::format(format!(
            "labels.bin holds {} bytes, expected {}",
            lbytes.len(),
            header.height * header.width * 2
        )));
    }
    let mut labels = Vec::with_capacity(header.height * header.width);
    for chunk in lbytes.chunks_exact(2) {
        labels.push(u16::from_le_bytes([chunk[0], chunk[1]]));
    }
    let labels = LabelMap::new(header.height, header.width, labels)?;

    let classes_path = dir.join("classes.json");
    let classes = if classes_path.exists() {
        Some(read_json(&classes_path)?)
    } else {
        None
    };
    Ok((cube, labels, classes))
}

fn parse_csv_line(line: &str, lineno: usize, cols: usize) -> Result<Vec<f64>> {
    let parts: Vec<&str> = line.split(',').map(str::trim).collect();
    if parts.len() != cols {
        return Err(Error::format(format!(
            "csv line {lineno}: expected {cols} fields, found {}",
            parts.len()
        )));
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<f64>().map_err(|_| {
                Error::format(format!("csv line {lineno}: {p:?} is not a number"))
            })
        })
        .collect()
}

fn is_header_line(line: &str) -> bool {
    line.split(',')
        .map(str::trim)
        .any(|f| f.parse::<f64>().is_err())
}

/// Ingest a `row,col,band,value` CSV (optionally with a header line).
/// Dimensions come from the maximum indices; every (row, col, band)
/// cell must appear exactly once.
pub fn read_csv_cube(path: &Path, name: &str) -> Result<HsiCube> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<(usize, usize, usize, f32)> = Vec::new();
    let mut max = (0usize, 0usize, 0usize);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && is_header_line(line)) {
            continue;
        }
        let v = parse_csv_line(line, i + 1, 4)?;
        let (r, c, b) = (v[0] as usize, v[1] as usize, v[2] as usize);
        if v[0] < 0.0 || v[1] < 0.0 || v[2] < 0.0 || v[0].fract() != 0.0 || v[1].fract() != 0.0 || v[2].fract() != 0.0
        {
            return Err(Error::format(format!(
                "csv line {}: indices must be non-negative integers",
                i + 1
            )));
        }
        max = (max.0.max(r), max.1.max(c), max.2.max(b));
        rows.push((r, c, b, v[3] as f32));
    }
    if rows.is_empty() {
        return Err(Error::format("csv holds no data rows"));
    }
    let (h, w, b) = (max.0 + 1, max.1 + 1, max.2 + 1);
    let mut data = vec![f32::NAN; h * w * b];
    let mut seen = vec![false; h * w * b];
    for (r, c, band, v) in rows {
        let idx = (r * w + c) * b + band;
        if seen[idx] {
            return Err(Error::format(format!(
                "duplicate cell (row {r}, col {c}, band {band})"
            )));
        }
        seen[idx] = true;
        data[idx] = v;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        let r = missing / (w * b);
        let c = (missing / b) % w;
        let band = missing % b;
        return Err(Error::format(format!(
            "missing cell (row {r}, col {c}, band {band}); csv must cover the full cube"
        )));
    }
    Ok(HsiCube::new(h, w, b, data, name)?)
}

/// Ingest a `row,col,label` CSV; unlisted pixels stay unlabeled.
pub fn read_csv_labels(path: &Path, height: usize, width: usize) -> Result<LabelMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = vec![0u16; height * width];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && is_header_line(line)) {
            continue;
        }
        let v = parse_csv_line(line, i + 1, 3)?;
        let (r, c) = (v[0] as usize, v[1] as usize);
        if r >= height || c >= width {
            return Err(Error::format(format!(
                "csv line {}: pixel ({r}, {c}) outside the cube",
                i + 1
            )));
        }
        labels[r * width + c] = v[2] as u16;
    }
    Ok(LabelMap::new(height, width, labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (HsiCube, LabelMap) {
        let cube = HsiCube::new(2, 2, 3, (0..12).map(|i| i as f32 * 0.5).collect(), "t").unwrap();
        let labels = LabelMap::new(2, 2, vec![1, 0, 2, 1]).unwrap();
        (cube, labels)
    }

    #[test]
    fn container_roundtrip() {
        let (cube, labels) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let mut classes = ClassTable::new();
        classes.insert(1, ClassEntry::Name("water".into()));
        classes.insert(
            2,
            ClassEntry::Full {
                name: "soil".into(),
                color: Some([10, 20, 30]),
            },
        );
        write_cube(dir.path(), &cube, &labels, Some(&classes)).unwrap();
        let (c2, l2, t2) = read_cube(dir.path()).unwrap();
        assert_eq!(cube.data(), c2.data());
        assert_eq!(labels.labels(), l2.labels());
        let t2 = t2.unwrap();
        assert_eq!(t2[&1].name(), "water");
        assert_eq!(t2[&2].color(), Some([10, 20, 30]));
    }

    #[test]
    fn payload_size_mismatch_detected() {
        let (cube, labels) = tiny();
        let dir = tempfile::tempdir().unwrap();
        write_cube(dir.path(), &cube, &labels, None).unwrap();
        // drop 4 bytes (one value) off the payload
        let data = std::fs::read(dir.path().join("data.bin")).unwrap();
        std::fs::write(dir.path().join("data.bin"), &data[..data.len() - 4]).unwrap();
        let err = read_cube(dir.path()).unwrap_err();
        assert!(err.to_string().contains("payload size mismatch"), "{err}");
    }

    #[test]
    fn non_finite_payload_rejected() {
        let (cube, labels) = tiny();
        let dir = tempfile::tempdir().unwrap();
        write_cube(dir.path(), &cube, &labels, None).unwrap();
        let mut data = std::fs::read(dir.path().join("data.bin")).unwrap();
        data[0..4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(dir.path().join("data.bin"), data).unwrap();
        assert!(read_cube(dir.path()).is_err());
    }

    #[test]
    fn missing_header_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_cube(dir.path()).is_err());
    }

    #[test]
    fn csv_ingest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("cube.csv");
        let mut text = String::from("row,col,band,value\n");
        for r in 0..2 {
            for c in 0..2 {
                for b in 0..3 {
                    text.push_str(&format!("{r},{c},{b},{}\n", (r * 6 + c * 3 + b) as f32 * 0.5));
                }
            }
        }
        std::fs::write(&csv, text).unwrap();
        let cube = read_csv_cube(&csv, "csvcube").unwrap();
        assert_eq!(cube.height(), 2);
        assert_eq!(cube.bands(), 3);
        assert_eq!(cube.at(1, 1, 2), 5.5);
    }

    #[test]
    fn csv_duplicate_cell_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("cube.csv");
        std::fs::write(&csv, "0,0,0,1.0\n0,0,0,2.0\n").unwrap();
        let err = read_csv_cube(&csv, "x").unwrap_err();
        assert!(err.to_string().contains("duplicate cell"), "{err}");
    }

    #[test]
    fn csv_missing_cell_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("cube.csv");
        std::fs::write(&csv, "0,0,0,1.0\n0,0,2,2.0\n").unwrap();
        let err = read_csv_cube(&csv, "x").unwrap_err();
        assert!(err.to_string().contains("missing cell"), "{err}");
    }

    #[test]
    fn indian_pines_shaped_container_loads() {
        // 145 x 145 x 200 cube with 16 classes; values synthetic
        let h = 145;
        let w = 145;
        let b = 200;
        let data: Vec<f32> = (0..h * w * b).map(|i| (i % 97) as f32 / 97.0).collect();
        let cube = HsiCube::new(h, w, b, data, "ip").unwrap();
        let labels: Vec<u16> = (0..h * w).map(|i| (i % 17) as u16).collect();
        let labels = LabelMap::new(h, w, labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cube(dir.path(), &cube, &labels, None).unwrap();
        let (c2, l2, _) = read_cube(dir.path()).unwrap();
        assert_eq!((c2.height(), c2.width(), c2.bands()), (145, 145, 200));
        assert_eq!(l2.class_count(), 16);
        assert_eq!(l2.validate_contiguous().unwrap(), 16);
    }
}
