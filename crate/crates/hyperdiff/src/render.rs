//! Lossless map rendering: class palettes and PNG encode/decode.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use hyperdiff_core::hsi::{HsiCube, LabelMap};

use crate::container::ClassTable;
use crate::error::{Error, Result};

/// Deterministic palette: index 0 (unlabeled) is black; classes step
/// around the hue wheel by the golden ratio. Entries from
/// `classes.json` override the generated colors. Colors are kept
/// injective so rendered maps decode exactly.
pub fn build_palette(classes: usize, table: Option<&ClassTable>) -> Vec<[u8; 3]> {
    let mut palette = vec![[0u8, 0, 0]];
    let mut used: HashMap<[u8; 3], u16> = HashMap::new();
    used.insert([0, 0, 0], 0);
    for class in 1..=classes {
        let mut color = table
            .and_then(|t| t.get(&(class as u16)))
            .and_then(|e| e.color())
            .unwrap_or_else(|| golden_color(class));
        // nudge the value channel until the color is unique
        let mut tries = 0;
        while used.contains_key(&color) {
            tries += 1;
            color = golden_color_with_value(class, 0.95 - 0.07 * tries as f32);
            if tries > 12 {
                color = [
                    (class & 0xff) as u8,
                    ((class >> 8) & 0xff) as u8,
                    ((class * 37) & 0xff) as u8,
                ];
            }
        }
        used.insert(color, class as u16);
        palette.push(color);
    }
    palette
}

fn golden_color(class: usize) -> [u8; 3] {
    golden_color_with_value(class, 0.95)
}

fn golden_color_with_value(class: usize, value: f32) -> [u8; 3] {
    let hue = (class as f32 * 0.618_034) % 1.0;
    hsv_to_rgb(hue, 0.72, value.clamp(0.2, 1.0))
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match (i as i32).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Render a label map as an RGB PNG, one pixel per cube pixel.
pub fn render_map(labels: &LabelMap, palette: &[[u8; 3]], path: &Path) -> Result<()> {
    let mut rgb = Vec::with_capacity(labels.labels().len() * 3);
    for &l in labels.labels() {
        let color = palette.get(l as usize).ok_or_else(|| {
            Error::format(format!("palette has no entry for class {l}"))
        })?;
        rgb.extend_from_slice(color);
    }
    write_png(path, labels.width() as u32, labels.height() as u32, &rgb)
}

/// Decode a rendered map back into labels via the palette.
pub fn decode_map(path: &Path, palette: &[[u8; 3]]) -> Result<LabelMap> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png("expected 8-bit RGB".to_string()));
    }
    let lookup: HashMap<[u8; 3], u16> = palette
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i as u16))
        .collect();
    let (w, h) = (info.width as usize, info.height as usize);
    let mut labels = Vec::with_capacity(w * h);
    for px in buf[..w * h * 3].chunks_exact(3) {
        let color = [px[0], px[1], px[2]];
        let l = lookup
            .get(&color)
            .ok_or_else(|| Error::format(format!("color {color:?} not in palette")))?;
        labels.push(*l);
    }
    Ok(LabelMap::new(h, w, labels)?)
}

/// False-color composite of three bands, each min-max stretched.
pub fn render_composite(cube: &HsiCube, bands: [usize; 3], path: &Path) -> Result<()> {
    for &b in &bands {
        if b >= cube.bands() {
            return Err(Error::format(format!(
                "composite band {b} outside 0..{}",
                cube.bands()
            )));
        }
    }
    let (h, w) = (cube.height(), cube.width());
    let mut ranges = Vec::new();
    for &b in &bands {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for r in 0..h {
            for c in 0..w {
                let v = cube.at(r, c, b);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        ranges.push((lo, hi));
    }
    let mut rgb = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            for (i, &b) in bands.iter().enumerate() {
                let (lo, hi) = ranges[i];
                let v = if hi > lo {
                    (cube.at(r, c, b) - lo) / (hi - lo)
                } else {
                    0.0
                };
                rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    write_png(path, w as u32, h as u32, &rgb)
}

fn write_png(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let w = BufWriter::new(file);
    let mut encoder = png::Encoder::new(w, width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Png(e.to_string()))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| Error::Png(e.to_string()))?;
    Ok(())
}

/// Default false-color band triplet: 10% / 50% / 90% of the range.
pub fn default_composite_bands(bands: usize) -> [usize; 3] {
    let pick = |f: f32| (((bands - 1) as f32) * f).round() as usize;
    [pick(0.9), pick(0.5), pick(0.1)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_is_injective_and_black_for_unlabeled() {
        let p = build_palette(40, None);
        assert_eq!(p[0], [0, 0, 0]);
        let mut seen = std::collections::HashSet::new();
        for c in &p {
            assert!(seen.insert(*c), "palette repeats color {c:?}");
        }
    }

    #[test]
    fn class_table_colors_win() {
        let mut table = ClassTable::new();
        table.insert(
            1,
            crate::container::ClassEntry::Full {
                name: "x".into(),
                color: Some([1, 2, 3]),
            },
        );
        let p = build_palette(2, Some(&table));
        assert_eq!(p[1], [1, 2, 3]);
    }

    #[test]
    fn render_decode_roundtrip() {
        let labels = LabelMap::new(2, 2, vec![1, 2, 0, 1]).unwrap();
        let palette = build_palette(2, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.png");
        render_map(&labels, &palette, &path).unwrap();
        let back = decode_map(&path, &palette).unwrap();
        assert_eq!(back.labels(), labels.labels());
    }

    #[test]
    fn rendering_is_byte_deterministic() {
        let labels = LabelMap::new(3, 3, vec![0, 1, 2, 2, 1, 0, 1, 1, 2]).unwrap();
        let palette = build_palette(2, None);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        render_map(&labels, &palette, &a).unwrap();
        render_map(&labels, &palette, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn missing_palette_entry_is_an_error() {
        let labels = LabelMap::new(1, 1, vec![9]).unwrap();
        let palette = build_palette(2, None);
        let dir = tempfile::tempdir().unwrap();
        assert!(render_map(&labels, &palette, &dir.path().join("x.png")).is_err());
    }
}
