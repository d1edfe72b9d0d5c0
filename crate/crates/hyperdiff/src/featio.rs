//! Feature-cube container (mirrors the cube container with a
//! provenance object in the header) and the PCA model archive.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hyperdiff_core::features::{FeatureCube, FeatureProvenance};
use hyperdiff_core::pca::PcaModel;
use hyperdiff_core::tensor::Tensor;

use crate::archive::{read_archive, write_archive};
use crate::container::{load_json, write_json};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    pub provenance: FeatureProvenance,
}

pub fn write_features(dir: &Path, fc: &FeatureCube) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = FeatureHeader {
        height: fc.height(),
        width: fc.width(),
        bands: fc.dim(),
        dtype: "f32".to_string(),
        byte_order: "little".to_string(),
        layout: "band-interleaved-by-pixel".to_string(),
        provenance: fc.provenance.clone(),
    };
    write_json(&dir.join("header.json"), &header)?;
    let mut bytes = Vec::with_capacity(fc.data().len() * 4);
    for v in fc.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let path = dir.join("data.bin");
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

pub fn read_features(dir: &Path) -> Result<FeatureCube> {
    let header: FeatureHeader = load_json(&dir.join("header.json"))?;
    let path = dir.join("data.bin");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = header.height * header.width * header.bands;
    if bytes.len() != expected * 4 {
        return Err(Error::format(format!(
            "feature payload holds {} bytes, header implies {}",
            bytes.len(),
            expected * 4
        )));
    }
    let mut data = Vec::with_capacity(expected);
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    FeatureCube::new(header.height, header.width, header.bands, data, header.provenance)
        .map_err(Error::from)
}

pub fn write_pca(path: &Path, model: &PcaModel) -> Result<()> {
    let entries = vec![
        (
            "mean".to_string(),
            Tensor::from_vec(&[model.mean.len()], model.mean.clone()),
        ),
        ("components".to_string(), model.components.clone()),
        (
            "explained_variance".to_string(),
            Tensor::from_vec(
                &[model.explained_variance.len()],
                model.explained_variance.clone(),
            ),
        ),
        ("rank".to_string(), Tensor::scalar(model.rank as f32)),
    ];
    write_archive(path, &entries)
}

pub fn read_pca(path: &Path) -> Result<PcaModel> {
    let entries = read_archive(path)?;
    let get = |name: &str| -> Result<&Tensor> {
        entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::format(format!("pca archive missing {name:?}")))
    };
    let mean = get("mean")?.data().to_vec();
    let components = get("components")?.clone();
    let explained = get("explained_variance")?.data().to_vec();
    let rank = get("rank")?.item() as usize;
    if components.rank() != 2 || components.shape()[1] != mean.len() {
        return Err(Error::format("pca archive shapes are inconsistent"));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_container_roundtrip_is_bitwise() {
        let fc = FeatureCube::new(
            2,
            3,
            4,
            (0..24).map(|i| i as f32 * 0.125 - 1.0).collect(),
            FeatureProvenance {
                source: "diffusion".into(),
                timestamp: 5,
                layer_index: 1,
                noise_seed: 42,
                pca_dim: 4,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let fdir = dir.path().join("features");
        write_features(&fdir, &fc).unwrap();
        let back = read_features(&fdir).unwrap();
        assert_eq!(back.provenance, fc.provenance);
        for (a, b) in back.data().iter().zip(fc.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // files byte-identical when rewritten
        let bytes1 = std::fs::read(fdir.join("data.bin")).unwrap();
        write_features(&fdir, &back).unwrap();
        let bytes2 = std::fs::read(fdir.join("data.bin")).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn pca_roundtrip() {
        use hyperdiff_core::pca::fit_pca;
        use hyperdiff_core::rng;
        let mut r = rng::seeded(3);
        let samples = rng::normal_tensor(&[50, 6], &mut r);
        let model = fit_pca(&samples, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pca.ckpt");
        write_pca(&path, &model).unwrap();
        let back = read_pca(&path).unwrap();
        assert_eq!(back.rank, model.rank);
        assert_eq!(back.components.data(), model.components.data());
        let proj_a = model.project(&samples);
        let proj_b = back.project(&samples);
        assert_eq!(proj_a.data(), proj_b.data());
    }
}
