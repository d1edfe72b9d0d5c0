//! Synthetic labeled cubes for desk-scale runs and tests.
//!
//! Each class gets a smooth random spectral signature; space is carved
//! into Voronoi blobs so classes form contiguous regions; Gaussian
//! pixel noise is added on top. The `hard` preset shrinks the
//! signature separation and raises the noise so that per-pixel raw
//! spectra overlap while the joint spectral-spatial structure stays
//! learnable.

use alloc::vec::Vec;

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::hsi::{HsiCube, LabelMap, Split};
use crate::math;
use crate::rng::{self, Prng};

#[derive(Debug, Clone, PartialEq)]
pub enum SynthError {
    InvalidParams(&'static str),
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::InvalidParams(msg) => write!(f, "invalid synth params: {msg}"),
        }
    }
}

impl core::error::Error for SynthError {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// Peak spectral distance between class signatures.
    pub separation: f32,
    /// Std-dev of per-value Gaussian noise.
    pub noise_sigma: f32,
    /// Voronoi blobs per class.
    pub regions_per_class: usize,
    pub seed: u64,
}

/// Well-separated signatures, light noise.
pub fn default_preset(
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    seed: u64,
) -> SynthParams {
    SynthParams {
        height,
        width,
        bands,
        classes,
        separation: 0.6,
        noise_sigma: 0.05,
        regions_per_class: 3,
        seed,
    }
}

/// Overlapping raw spectra: small separation, heavy noise.
pub fn hard_preset(
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    seed: u64,
) -> SynthParams {
    SynthParams {
        separation: 0.18,
        noise_sigma: 0.15,
        ..default_preset(height, width, bands, classes, seed)
    }
}

/// Smooth random curve over the band axis: a few Gaussian bumps.
fn smooth_curve(bands: usize, rng: &mut Prng, amplitude: f32) -> Vec<f32> {
    let bumps = 3 + (bands / 8).min(3);
    let mut curve = alloc::vec![0.0f32; bands];
    for _ in 0..bumps {
        let center = rng::uniform(rng, 0.0, bands as f32);
        let width = rng::uniform(rng, bands as f32 * 0.08, bands as f32 * 0.35);
        let amp = rng::uniform(rng, -amplitude, amplitude);
        for (b, v) in curve.iter_mut().enumerate() {
            let d = (b as f32 - center) / width;
            *v += amp * math::expf(-0.5 * d * d);
        }
    }
    curve
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(SynthError::InvalidParams("dimensions must be >= 1"));
        }
        if self.classes == 0 || self.classes > u16::MAX as usize {
            return Err(SynthError::InvalidParams("class count out of range"));
        }
        if self.classes * self.regions_per_class > self.height * self.width {
            return Err(SynthError::InvalidParams("more regions than pixels"));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(SynthError::InvalidParams("noise sigma must be finite and >= 0"));
        }
        if self.separation <= 0.0 || !self.separation.is_finite() {
            return Err(SynthError::InvalidParams("separation must be positive"));
        }
        Ok(())
    }

    /// Per-class spectral signatures, before noise.
    pub fn signatures(&self) -> Vec<Vec<f32>> {
        let mut rng = rng::substream(self.seed, "synth-signature", 0);
        let base = smooth_curve(self.bands, &mut rng, 0.25);
        (0..self.classes)
            .map(|c| {
                let mut class_rng = rng::substream(self.seed, "synth-class", c as u64);
                let pert = smooth_curve(self.bands, &mut class_rng, 1.0);
                let peak = pert
                    .iter()
                    .map(|v| math::absf(*v))
                    .fold(0.0f32, f32::max)
                    .max(1e-6);
                base.iter()
                    .zip(&pert)
                    .map(|(b, p)| 0.5 + b + self.separation * p / peak * 0.5)
                    .collect()
            })
            .collect()
    }

    /// Deterministic cube + dense label map.
    pub fn generate(&self) -> Result<(HsiCube, LabelMap), SynthError> {
        self.validate()?;
        let sigs = self.signatures();

        // Voronoi seeds, round-robin class assignment
        let mut seed_rng = rng::substream(self.seed, "synth-regions", 0);
        let nseeds = self.classes * self.regions_per_class;
        let mut seeds = Vec::with_capacity(nseeds);
        for i in 0..nseeds {
            let r = rng::uniform(&mut seed_rng, 0.0, self.height as f32);
            let c = rng::uniform(&mut seed_rng, 0.0, self.width as f32);
            seeds.push((r, c, (i % self.classes + 1) as u16));
        }

        let mut labels = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                let mut best = 0usize;
                let mut best_d = f32::INFINITY;
                for (i, &(sr, sc, _)) in seeds.iter().enumerate() {
                    let dr = sr - r as f32;
                    let dc = sc - c as f32;
                    let d = dr * dr + dc * dc;
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                labels.push(seeds[best].2);
            }
        }

        // every class must appear; nudge missing classes onto pixels
        for class in 1..=self.classes as u16 {
            if !labels.contains(&class) {
                let at = (class as usize - 1) * (labels.len() / self.classes);
                labels[at] = class;
            }
        }

        let mut noise_rng = rng::substream(self.seed, "synth-noise", 0);
        let mut data = Vec::with_capacity(self.height * self.width * self.bands);
        for &l in &labels {
            let sig = &sigs[l as usize - 1];
            for &s in sig {
                data.push(s + self.noise_sigma * rng::normal(&mut noise_rng));
            }
        }

        let cube = HsiCube::new(self.height, self.width, self.bands, data, "synthetic")
            .map_err(|_| SynthError::InvalidParams("generated payload invalid"))?;
        let labels = LabelMap::new(self.height, self.width, labels)
            .map_err(|_| SynthError::InvalidParams("generated labels invalid"))?;
        Ok((cube, labels))
    }
}

/// Floor baseline: classify every test pixel by the nearest train-split
/// class-mean spectrum. Returns overall accuracy on the test indices.
pub fn nearest_mean_accuracy(cube: &HsiCube, labels: &LabelMap, split: &Split) -> f64 {
    let c = labels.class_count();
    let b = cube.bands();
    let mut means = alloc::vec![alloc::vec![0.0f64; b]; c];
    let mut counts = alloc::vec![0usize; c];
    for &px in &split.train {
        let l = labels.labels()[px] as usize;
        let spec = cube.spectrum(px / cube.width(), px % cube.width());
        for (m, &v) in means[l - 1].iter_mut().zip(spec) {
            *m += v as f64;
        }
        counts[l - 1] += 1;
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        if n > 0 {
            for v in m.iter_mut() {
                *v /= n as f64;
            }
        }
    }
    let mut hits = 0usize;
    for &px in &split.test {
        let spec = cube.spectrum(px / cube.width(), px % cube.width());
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (ci, m) in means.iter().enumerate() {
            let mut d = 0.0f64;
            for (&mv, &sv) in m.iter().zip(spec) {
                let diff = mv - sv as f64;
                d += diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = ci;
            }
        }
        if best + 1 == labels.labels()[px] as usize {
            hits += 1;
        }
    }
    hits as f64 / split.test.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsi::{stratified_split, SplitRule, SplitSpec};

    #[test]
    fn generation_is_deterministic() {
        let p = default_preset(16, 16, 8, 3, 42);
        let (a, la) = p.generate().unwrap();
        let (b, lb) = p.generate().unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(la.labels(), lb.labels());
    }

    #[test]
    fn all_classes_present_and_labeled() {
        let p = default_preset(32, 32, 16, 4, 7);
        let (cube, labels) = p.generate().unwrap();
        assert_eq!(labels.validate_contiguous().unwrap(), 4);
        assert_eq!(labels.labeled_count(), 32 * 32);
        assert_eq!(cube.bands(), 16);
    }

    #[test]
    fn noiseless_separable_cube_is_solved_by_nearest_mean() {
        let p = SynthParams {
            noise_sigma: 0.0,
            ..default_preset(16, 16, 8, 2, 3)
        };
        let (cube, labels) = p.generate().unwrap();
        let split = stratified_split(
            &labels,
            &SplitSpec {
                rule: SplitRule::Ratio(0.2),
                seed: 1,
            },
        )
        .unwrap();
        let oa = nearest_mean_accuracy(&cube, &labels, &split);
        assert_eq!(oa, 1.0, "zero-noise well-separated cube must be trivial");
    }

    #[test]
    fn hard_preset_confuses_nearest_mean() {
        let p = hard_preset(32, 32, 16, 2, 11);
        let (cube, labels) = p.generate().unwrap();
        let split = stratified_split(
            &labels,
            &SplitSpec {
                rule: SplitRule::Ratio(0.1),
                seed: 1,
            },
        )
        .unwrap();
        let oa = nearest_mean_accuracy(&cube, &labels, &split);
        assert!(oa < 0.999, "hard preset should not be trivially separable, oa = {oa}");
        assert!(oa > 0.5, "hard preset should still beat chance, oa = {oa}");
    }
}
