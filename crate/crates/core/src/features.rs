//! Per-pixel diffusion features: noise the cube, run the denoiser, tap
//! an up-block input, and reduce each pixel's activation column with
//! PCA.
//!
//! Extraction tiles the cube into non-overlapping K x K patches
//! (mirror-padding the ragged edge), shares one fixed-seed noise draw
//! across every tile, and assigns each pixel the activation vector at
//! its spatial position. Labels never enter this module; the caller
//! passes the pixel set used to fit the PCA basis, which keeps test
//! pixels out of the fit by construction.

use alloc::vec::Vec;

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::hsi::{mirror_index, tile_chw, HsiCube};
use crate::pca::{fit_pca, PcaError, PcaModel};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::ssdn::SsdnNetwork;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureError {
    TimestepOutOfRange { t: usize, max: usize },
    Pca(PcaError),
    BadLayerIndex(usize),
    DimensionMismatch,
}

impl fmt::Display for FeatureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureError::TimestepOutOfRange { t, max } => {
                write!(f, "timestamp {t} outside 1..={max}")
            }
            FeatureError::Pca(e) => write!(f, "PCA fit failed: {e}"),
            FeatureError::BadLayerIndex(i) => write!(f, "layer index {i} not in 0..=2"),
            FeatureError::DimensionMismatch => write!(f, "feature dimensions do not match"),
        }
    }
}

impl core::error::Error for FeatureError {}

impl From<PcaError> for FeatureError {
    fn from(e: PcaError) -> Self {
        FeatureError::Pca(e)
    }
}

/// Where a feature cube came from; stored in its container header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProvenance {
    /// "diffusion" or "raw".
    pub source: alloc::string::String,
    pub timestamp: usize,
    pub layer_index: usize,
    pub noise_seed: u64,
    pub pca_dim: usize,
}

/// H x W x D per-pixel feature raster.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCube {
    height: usize,
    width: usize,
    dim: usize,
    /// Row-major over (row, col, feature).
    data: Vec<f32>,
    pub provenance: FeatureProvenance,
}

impl FeatureCube {
    pub fn new(
        height: usize,
        width: usize,
        dim: usize,
        data: Vec<f32>,
        provenance: FeatureProvenance,
    ) -> Result<Self, FeatureError> {
        if data.len() != height * width * dim || !data.iter().all(|v| v.is_finite()) {
            return Err(FeatureError::DimensionMismatch);
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
            provenance,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.width + col) * self.dim;
        &self.data[base..base + self.dim]
    }

    /// The normalized spectra themselves as features (the raw-input
    /// ablation path).
    pub fn from_raw_cube(cube: &HsiCube) -> Self {
        Self {
            height: cube.height(),
            width: cube.width(),
            dim: cube.bands(),
            data: cube.data().to_vec(),
            provenance: FeatureProvenance {
                source: alloc::string::String::from("raw"),
                timestamp: 0,
                layer_index: 0,
                noise_seed: 0,
                pca_dim: cube.bands(),
            },
        }
    }

    /// K_c x K_c token matrix [K_c^2, D] centered on a pixel, mirror-
    /// padded at the borders. Token order is row-major over the window.
    pub fn patch_tokens(&self, row: usize, col: usize, context: usize) -> Tensor {
        let lead = (context - 1) / 2;
        let mut out = Vec::with_capacity(context * context * self.dim);
        for dr in 0..context {
            let r = mirror_index(row as isize + dr as isize - lead as isize, self.height);
            for dc in 0..context {
                let c = mirror_index(col as isize + dc as isize - lead as isize, self.width);
                out.extend_from_slice(self.pixel(r, c));
            }
        }
        Tensor::from_vec(&[context * context, self.dim], out)
    }
}

/// Raw tap activations for every pixel, before PCA: an
/// (H*W) x (channels * spectral extent) matrix in pixel row-major order.
pub fn raw_tap_matrix(
    cube: &HsiCube,
    net: &SsdnNetwork,
    sched: &NoiseSchedule,
    t: usize,
    layer_index: usize,
    noise_seed: u64,
) -> Result<Tensor, FeatureError> {
    if t < 1 || t > sched.len() {
        return Err(FeatureError::TimestepOutOfRange {
            t,
            max: sched.len(),
        });
    }
    if layer_index > 2 {
        return Err(FeatureError::BadLayerIndex(layer_index));
    }
    let k = net.config.patch_size;
    let (h, w) = (cube.height(), cube.width());
    let tiles_r = h.div_ceil(k);
    let tiles_c = w.div_ceil(k);
    let d_raw = net.config.tap_feature_dim(layer_index);

    // one shared noise draw for every tile
    let mut noise_rng = rng::substream(noise_seed, "feature-noise", 0);
    let eps = rng::normal_tensor(&[cube.bands(), k, k], &mut noise_rng);

    let mut matrix = alloc::vec![0.0f32; h * w * d_raw];

    // batch tiles in chunks to bound graph memory
    let all_tiles: Vec<(usize, usize)> = (0..tiles_r)
        .flat_map(|tr| (0..tiles_c).map(move |tc| (tr, tc)))
        .collect();
    for chunk in all_tiles.chunks(8) {
        let mut xt_data = Vec::with_capacity(chunk.len() * cube.bands() * k * k);
        for &(tr, tc) in chunk {
            let x0 = tile_chw(cube, tr * k, tc * k, k);
            let xt = crate::diffusion::forward_sample(&x0, t, &eps, sched);
            xt_data.extend_from_slice(xt.data());
        }
        let xt = Tensor::from_vec(&[chunk.len(), cube.bands(), k, k], xt_data);
        let ts = alloc::vec![t; chunk.len()];
        let act = net
            .activations(&xt, &ts, layer_index)
            .expect("tile batch matches the denoiser config");
        // act: [n, C, S, K, K]; pixel vector = flattened (C, S) column
        let (c, s) = (act.shape()[1], act.shape()[2]);
        debug_assert_eq!(c * s, d_raw);
        let ad = act.data();
        for (i, &(tr, tc)) in chunk.iter().enumerate() {
            for dr in 0..k {
                let row = tr * k + dr;
                if row >= h {
                    continue;
                }
                for dc in 0..k {
                    let col = tc * k + dc;
                    if col >= w {
                        continue;
                    }
                    let out_base = (row * w + col) * d_raw;
                    for ci in 0..c {
                        for si in 0..s {
                            matrix[out_base + ci * s + si] =
                                ad[(((i * c + ci) * s + si) * k + dr) * k + dc];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[h * w, d_raw], matrix))
}

/// Extract the per-pixel diffusion FeatureCube.
///
/// When `pca` is `None`, a basis of `pca_dim` components is fitted on
/// `fit_pixels` (linear pixel ids — the training split) and returned;
/// otherwise the provided model is reused and `pca_dim`/`fit_pixels`
/// are ignored.
#[allow(clippy::too_many_arguments)]
pub fn extract_features(
    cube: &HsiCube,
    net: &SsdnNetwork,
    sched: &NoiseSchedule,
    t: usize,
    layer_index: usize,
    pca: Option<&PcaModel>,
    pca_dim: usize,
    noise_seed: u64,
    fit_pixels: &[usize],
) -> Result<(FeatureCube, PcaModel), FeatureError> {
    let raw = raw_tap_matrix(cube, net, sched, t, layer_index, noise_seed)?;
    let (h, w) = (cube.height(), cube.width());
    let d_raw = raw.shape()[1];

    let model = match pca {
        Some(m) => {
            if m.d_in() != d_raw {
                return Err(FeatureError::DimensionMismatch);
            }
            m.clone()
        }
        None => {
            let mut fit_data = Vec::with_capacity(fit_pixels.len() * d_raw);
            for &px in fit_pixels {
                fit_data.extend_from_slice(&raw.data()[px * d_raw..(px + 1) * d_raw]);
            }
            let fit_matrix = Tensor::from_vec(&[fit_pixels.len(), d_raw], fit_data);
            fit_pca(&fit_matrix, pca_dim.min(d_raw))?
        }
    };

    let projected = model.project(&raw);
    // Whiten: scale each component to unit train-split variance. The
    // scales derive from the fit (train pixels only) and travel with
    // the model, so reusing a basis reproduces identical features.
    let floor = model
        .explained_variance
        .first()
        .copied()
        .unwrap_or(1.0)
        .max(1e-12)
        * 1e-6;
    let inv_scale: Vec<f32> = model
        .explained_variance
        .iter()
        .map(|&v| {
            let sd = crate::math::sqrtf(v.max(floor));
            if sd > 0.0 && sd.is_finite() {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    let dim = model.d_out();
    let mut data = projected.into_vec();
    for (i, v) in data.iter_mut().enumerate() {
        *v *= inv_scale[i % dim];
    }
    let fc = FeatureCube::new(
        h,
        w,
        dim,
        data,
        FeatureProvenance {
            source: alloc::string::String::from("diffusion"),
            timestamp: t,
            layer_index,
            noise_seed,
            pca_dim: dim,
        },
    )?;
    Ok((fc, model))
}
