//! Hyperspectral cube containers, normalization, patch extraction, and
//! stratified train/test splitting.
//!
//! A cube is H x W x B reflectance values stored row-major over
//! (row, col, band). Labels are a parallel H x W map of class ids with
//! 0 meaning unlabeled. Patches use symmetric mirror reflection at the
//! borders, so no artificial zero spectra enter the models.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use core::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum HsiError {
    PayloadSizeMismatch { expected: usize, actual: usize },
    NonFiniteValue { index: usize },
    EmptyDimension,
    LabelDimensionMismatch,
    NonContiguousClasses { missing: u16 },
    CoordsOutOfRange { row: usize, col: usize },
    PatchTooLarge { k: usize, limit: usize },
    ClassTooSmall { class: u16, available: usize, requested: usize },
    InvalidRatio(f64),
    UnknownClassInSpec(u16),
}

impl fmt::Display for HsiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HsiError::PayloadSizeMismatch { expected, actual } => {
                write!(f, "payload size mismatch: expected {expected} values, got {actual}")
            }
            HsiError::NonFiniteValue { index } => {
                write!(f, "non-finite value at flat index {index}")
            }
            HsiError::EmptyDimension => write!(f, "height, width, and bands must all be >= 1"),
            HsiError::LabelDimensionMismatch => {
                write!(f, "label map dimensions do not match the cube")
            }
            HsiError::NonContiguousClasses { missing } => {
                write!(f, "class ids are not contiguous: class {missing} has no pixels")
            }
            HsiError::CoordsOutOfRange { row, col } => {
                write!(f, "pixel ({row}, {col}) outside the cube")
            }
            HsiError::PatchTooLarge { k, limit } => {
                write!(f, "patch side {k} exceeds mirror-padding limit {limit}")
            }
            HsiError::ClassTooSmall { class, available, requested } => {
                write!(
                    f,
                    "class {class} has {available} labeled pixels, {requested} requested for training"
                )
            }
            HsiError::InvalidRatio(r) => write!(f, "train ratio {r} outside (0, 1)"),
            HsiError::UnknownClassInSpec(c) => {
                write!(f, "split spec names class {c} absent from the label map")
            }
        }
    }
}

impl core::error::Error for HsiError {}

/// H x W x B reflectance raster.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
    name: String,
}

impl HsiCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f32>,
        name: &str,
    ) -> Result<Self, HsiError> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(HsiError::EmptyDimension);
        }
        let expected = height * width * bands;
        if data.len() != expected {
            return Err(HsiError::PayloadSizeMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(HsiError::NonFiniteValue { index });
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
            name: String::from(name),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[(row * self.width + col) * self.bands + band]
    }

    /// Spectrum of one pixel.
    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.width + col) * self.bands;
        &self.data[base..base + self.bands]
    }

    /// Per-band min-max normalization to [0, 1] over the whole cube.
    /// Constant bands map to zero everywhere.
    pub fn normalize_bands(&self) -> HsiCube {
        let mut mins = alloc::vec![f32::INFINITY; self.bands];
        let mut maxs = alloc::vec![f32::NEG_INFINITY; self.bands];
        for px in 0..self.height * self.width {
            let base = px * self.bands;
            for b in 0..self.bands {
                let v = self.data[base + b];
                if v < mins[b] {
                    mins[b] = v;
                }
                if v > maxs[b] {
                    maxs[b] = v;
                }
            }
        }
        let mut out = Vec::with_capacity(self.data.len());
        for px in 0..self.height * self.width {
            let base = px * self.bands;
            for b in 0..self.bands {
                let range = maxs[b] - mins[b];
                if range > 0.0 {
                    out.push((self.data[base + b] - mins[b]) / range);
                } else {
                    out.push(0.0);
                }
            }
        }
        HsiCube {
            height: self.height,
            width: self.width,
            bands: self.bands,
            data: out,
            name: self.name.clone(),
        }
    }
}

/// Per-pixel class ids; 0 = unlabeled, 1..=C labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self, HsiError> {
        if labels.len() != height * width {
            return Err(HsiError::PayloadSizeMismatch {
                expected: height * width,
                actual: labels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    /// Highest class id present.
    pub fn class_count(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    /// Checks that class ids cover 1..=C with no gaps.
    pub fn validate_contiguous(&self) -> Result<usize, HsiError> {
        let c = self.class_count();
        let mut seen = alloc::vec![false; c + 1];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        for (id, &s) in seen.iter().enumerate().skip(1) {
            if !s {
                return Err(HsiError::NonContiguousClasses { missing: id as u16 });
            }
        }
        Ok(c)
    }

    /// Count of labeled (non-zero) pixels.
    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn matches(&self, cube: &HsiCube) -> Result<(), HsiError> {
        if self.height != cube.height() || self.width != cube.width() {
            return Err(HsiError::LabelDimensionMismatch);
        }
        Ok(())
    }
}

/// A K x K x B spectral-spatial patch centered on a pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Patch values with shape [K, K, B].
    pub patch: Tensor,
    pub center_row: usize,
    pub center_col: usize,
    /// Class id of the center pixel; 0 if unlabeled.
    pub label: u16,
}

/// Symmetric mirror reflection about the image border: -1 -> 0,
/// n -> n-1, and so on. Valid for offsets up to n beyond each edge.
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(i >= -n && i < 2 * n, "offset {i} beyond single reflection");
    let m = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - 1 - i
    } else {
        i
    };
    m as usize
}

/// Largest patch side the single-reflection rule supports.
pub fn max_patch_side(height: usize, width: usize) -> usize {
    2 * height.min(width)
}

/// Extract the K x K x B patch centered at (row, col), mirror-padding
/// outside the borders.
pub fn extract_patch(
    cube: &HsiCube,
    labels: Option<&LabelMap>,
    row: usize,
    col: usize,
    k: usize,
) -> Result<Instance, HsiError> {
    if row >= cube.height() || col >= cube.width() {
        return Err(HsiError::CoordsOutOfRange { row, col });
    }
    let limit = max_patch_side(cube.height(), cube.width());
    if k == 0 || k > limit {
        return Err(HsiError::PatchTooLarge { k, limit });
    }
    let b = cube.bands();
    let lead = (k - 1) / 2;
    let mut data = Vec::with_capacity(k * k * b);
    for dr in 0..k {
        let r = mirror_index(row as isize + dr as isize - lead as isize, cube.height());
        for dc in 0..k {
            let c = mirror_index(col as isize + dc as isize - lead as isize, cube.width());
            data.extend_from_slice(cube.spectrum(r, c));
        }
    }
    Ok(Instance {
        patch: Tensor::from_vec(&[k, k, b], data),
        center_row: row,
        center_col: col,
        label: labels.map_or(0, |l| l.at(row, col)),
    })
}

/// Same patch in [B, K, K] layout, ready to feed the denoiser.
pub fn patch_chw(cube: &HsiCube, row: usize, col: usize, k: usize) -> Tensor {
    let b = cube.bands();
    let lead = (k - 1) / 2;
    let mut out = alloc::vec![0.0f32; b * k * k];
    for dr in 0..k {
        let r = mirror_index(row as isize + dr as isize - lead as isize, cube.height());
        for dc in 0..k {
            let c = mirror_index(col as isize + dc as isize - lead as isize, cube.width());
            let spec = cube.spectrum(r, c);
            for (band, &v) in spec.iter().enumerate() {
                out[(band * k + dr) * k + dc] = v;
            }
        }
    }
    Tensor::from_vec(&[b, k, k], out)
}

/// K x K tile whose top-left corner is (row0, col0), mirror-padded past
/// the bottom/right edges; [B, K, K] layout.
pub fn tile_chw(cube: &HsiCube, row0: usize, col0: usize, k: usize) -> Tensor {
    let b = cube.bands();
    let mut out = alloc::vec![0.0f32; b * k * k];
    for dr in 0..k {
        let r = mirror_index((row0 + dr) as isize, cube.height());
        for dc in 0..k {
            let c = mirror_index((col0 + dc) as isize, cube.width());
            let spec = cube.spectrum(r, c);
            for (band, &v) in spec.iter().enumerate() {
                out[(band * k + dr) * k + dc] = v;
            }
        }
    }
    Tensor::from_vec(&[b, k, k], out)
}

/// How training pixels are chosen per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitRule {
    /// Exact per-class training counts (replicates published tables).
    PerClassCounts(BTreeMap<u16, usize>),
    /// floor(ratio * n_c) per class, with a minimum of 2.
    Ratio(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub rule: SplitRule,
    pub seed: u64,
}

/// Disjoint train/test pixel indices (row-major linear ids), sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split over labeled pixels; deterministic given the seed.
pub fn stratified_split(labels: &LabelMap, spec: &SplitSpec) -> Result<Split, HsiError> {
    let c = labels.validate_contiguous()?;
    if let SplitRule::Ratio(r) = spec.rule {
        if !(r > 0.0 && r < 1.0) {
            return Err(HsiError::InvalidRatio(r));
        }
    }
    if let SplitRule::PerClassCounts(counts) = &spec.rule {
        for &class in counts.keys() {
            if class == 0 || class as usize > c {
                return Err(HsiError::UnknownClassInSpec(class));
            }
        }
    }

    let mut per_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); c + 1];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l != 0 {
            per_class[l as usize].push(i);
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 1..=c {
        let pixels = &mut per_class[class];
        let n = pixels.len();
        let want = match &spec.rule {
            SplitRule::PerClassCounts(counts) => counts.get(&(class as u16)).copied().unwrap_or(0),
            SplitRule::Ratio(r) => (((n as f64) * r) as usize).max(2),
        };
        if want > n {
            return Err(HsiError::ClassTooSmall {
                class: class as u16,
                available: n,
                requested: want,
            });
        }
        let mut class_rng = rng::substream(spec.seed, "split", class as u64);
        pixels.shuffle(&mut class_rng);
        train.extend_from_slice(&pixels[..want]);
        test.extend_from_slice(&pixels[want..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}
