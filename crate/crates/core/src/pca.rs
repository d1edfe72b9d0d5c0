//! Principal component analysis by covariance eigendecomposition.
//!
//! The eigensolve is a cyclic Jacobi sweep in f64 — exact enough for
//! the feature dimensions this pipeline produces (a few hundred) and
//! fully deterministic. Component signs follow the convention that the
//! largest-magnitude coordinate of each component is positive.

use alloc::vec;
use alloc::vec::Vec;

use core::fmt;

use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum PcaError {
    TooFewSamples { samples: usize, requested: usize },
    BadDimension,
}

impl fmt::Display for PcaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PcaError::TooFewSamples { samples, requested } => write!(
                f,
                "PCA needs more samples ({samples}) than output dimensions ({requested})"
            ),
            PcaError::BadDimension => write!(f, "output dimension must be >= 1 and <= input"),
        }
    }
}

impl core::error::Error for PcaError {}

/// Fitted PCA basis.
#[derive(Debug, Clone)]
pub struct PcaModel {
    /// Input-space mean, length D_in.
    pub mean: Vec<f32>,
    /// D_out x D_in orthonormal rows, ordered by explained variance.
    pub components: Tensor,
    /// Sample variance captured by each component (nonincreasing).
    pub explained_variance: Vec<f32>,
    /// Number of components backed by positive variance; the rest pad
    /// out the basis with zero-variance directions.
    pub rank: usize,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major
/// d x d). Returns (eigenvalues, eigenvectors as rows), sorted by
/// descending eigenvalue.
fn jacobi_eigh(mut a: Vec<f64>, d: usize) -> (Vec<f64>, Vec<f64>) {
    // v starts as identity; rows accumulate the eigenvectors
    let mut v = vec![0.0f64; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[i * d + j] * a[i * d + j];
                }
            }
        }
        s
    };
    let mut norm = 0.0f64;
    for &x in &a {
        norm += x * x;
    }
    let tol = 1e-22 * norm.max(1e-300);
    for _sweep in 0..64 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if math::abs(apq) < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + math::hypot(1.0, theta))
                } else {
                    1.0 / (theta - math::hypot(1.0, theta))
                };
                let c = 1.0 / math::hypot(1.0, t);
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vpk = v[p * d + k];
                    let vqk = v[q * d + k];
                    v[p * d + k] = c * vpk - s * vqk;
                    v[q * d + k] = s * vpk + c * vqk;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    let eig: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap());
    let mut vals = Vec::with_capacity(d);
    let mut vecs = vec![0.0f64; d * d];
    for (rank, &src) in order.iter().enumerate() {
        vals.push(eig[src]);
        vecs[rank * d..(rank + 1) * d].copy_from_slice(&v[src * d..(src + 1) * d]);
    }
    (vals, vecs)
}

/// Fit the top `d_out` principal components of `samples` (N x D_in).
///
/// Requires N > d_out. When the sample covariance has rank below d_out
/// the basis is completed with zero-variance directions (`rank` records
/// how many components carry real variance).
pub fn fit_pca(samples: &Tensor, d_out: usize) -> Result<PcaModel, PcaError> {
    let s = samples.shape();
    assert_eq!(s.len(), 2, "PCA expects an N x D sample matrix");
    let (n, d) = (s[0], s[1]);
    if d_out == 0 || d_out > d {
        return Err(PcaError::BadDimension);
    }
    if n <= d_out {
        return Err(PcaError::TooFewSamples {
            samples: n,
            requested: d_out,
        });
    }
    let x = samples.data();

    let mut mean = vec![0.0f64; d];
    for row in 0..n {
        for (m, &v) in mean.iter_mut().zip(&x[row * d..(row + 1) * d]) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // sample covariance, f64
    let mut cov = vec![0.0f64; d * d];
    for row in 0..n {
        let base = row * d;
        for i in 0..d {
            let ci = x[base + i] as f64 - mean[i];
            for j in i..d {
                cov[i * d + j] += ci * (x[base + j] as f64 - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }

    let (vals, vecs) = jacobi_eigh(cov, d);

    let variance_floor = vals[0].max(0.0) * 1e-9 + 1e-30;
    let mut rank = 0;
    for &v in vals.iter().take(d_out) {
        if v > variance_floor {
            rank += 1;
        }
    }

    let mut components = Vec::with_capacity(d_out * d);
    let mut explained = Vec::with_capacity(d_out);
    for k in 0..d_out {
        let row = &vecs[k * d..(k + 1) * d];
        // sign convention: largest-magnitude coordinate positive
        let mut arg = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if math::abs(v) > math::abs(row[arg]) {
                arg = i;
            }
        }
        let flip = if row[arg] < 0.0 { -1.0 } else { 1.0 };
        for &v in row {
            components.push((flip * v) as f32);
        }
        explained.push(if k < rank { vals[k].max(0.0) as f32 } else { 0.0 });
    }

    Ok(PcaModel {
        mean: mean.iter().map(|&m| m as f32).collect(),
        components: Tensor::from_vec(&[d_out, d], components),
        explained_variance: explained,
        rank,
    })
}

impl PcaModel {
    pub fn d_in(&self) -> usize {
        self.components.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.components.shape()[0]
    }

    /// Project rows of an N x D_in matrix into component space.
    pub fn project(&self, samples: &Tensor) -> Tensor {
        let s = samples.shape();
        assert_eq!(s.len(), 2);
        let (n, d) = (s[0], s[1]);
        assert_eq!(d, self.d_in(), "sample dimension does not match the PCA basis");
        let d_out = self.d_out();
        let x = samples.data();
        let c = self.components.data();
        let mut out = vec![0.0f32; n * d_out];
        for row in 0..n {
            let base = row * d;
            for k in 0..d_out {
                let crow = &c[k * d..(k + 1) * d];
                let mut acc = 0.0f32;
                for (i, &cv) in crow.iter().enumerate() {
                    acc += cv * (x[base + i] - self.mean[i]);
                }
                out[row * d_out + k] = acc;
            }
        }
        Tensor::from_vec(&[n, d_out], out)
    }

    /// Map projected rows back into input space.
    pub fn reconstruct(&self, projected: &Tensor) -> Tensor {
        let s = projected.shape();
        assert_eq!(s.len(), 2);
        let (n, d_out) = (s[0], s[1]);
        assert_eq!(d_out, self.d_out());
        let d = self.d_in();
        let c = self.components.data();
        let p = projected.data();
        let mut out = vec![0.0f32; n * d];
        for row in 0..n {
            let orow = &mut out[row * d..(row + 1) * d];
            orow.copy_from_slice(&self.mean);
            for k in 0..d_out {
                let pv = p[row * d_out + k];
                for (o, &cv) in orow.iter_mut().zip(&c[k * d..(k + 1) * d]) {
                    *o += pv * cv;
                }
            }
        }
        Tensor::from_vec(&[n, d], out)
    }

    /// Max absolute deviation of components * components^T from identity.
    pub fn orthonormality_error(&self) -> f32 {
        let d_out = self.d_out();
        let d = self.d_in();
        let c = self.components.data();
        let mut worst = 0.0f32;
        for i in 0..d_out {
            for j in 0..d_out {
                let mut acc = 0.0f64;
                for k in 0..d {
                    acc += c[i * d + k] as f64 * c[j * d + k] as f64;
                }
                let want = if i == j { 1.0 } else { 0.0 };
                let err = math::abs(acc - want) as f32;
                if err > worst {
                    worst = err;
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn line_data_has_one_component() {
        // points on y = x: first component +-(1, 1)/sqrt(2), second
        // explained variance zero
        let n = 32;
        let mut data = Vec::new();
        for i in 0..n {
            let v = i as f32 / n as f32 - 0.5;
            data.push(v);
            data.push(v);
        }
        let samples = Tensor::from_vec(&[n, 2], data);
        let m = fit_pca(&samples, 2).unwrap();
        let c0 = &m.components.data()[..2];
        let inv_sqrt2 = 1.0 / 2.0f32.sqrt();
        assert!((c0[0].abs() - inv_sqrt2).abs() < 1e-4);
        assert!((c0[1].abs() - inv_sqrt2).abs() < 1e-4);
        // sign convention makes the big coordinate positive
        assert!(c0[0] > 0.0 && c0[1] > 0.0);
        assert!(m.explained_variance[1].abs() < 1e-6);
        assert_eq!(m.rank, 1);
        assert!(m.orthonormality_error() < 1e-4);
    }

    #[test]
    fn isotropic_data_has_unit_variances() {
        let mut r = rng::seeded(5);
        let samples = rng::normal_tensor(&[10_000, 4], &mut r);
        let m = fit_pca(&samples, 4).unwrap();
        for &v in &m.explained_variance {
            assert!((v - 1.0).abs() < 0.1, "explained variance {v} not near 1");
        }
    }

    #[test]
    fn reconstruction_error_equals_discarded_variance() {
        // eigendecomposition identity: mean squared reconstruction error
        // equals the variance not retained. Verified against a
        // brute-force power-iteration eigensolve of the covariance.
        let mut r = rng::seeded(6);
        let n = 400;
        let d = 6;
        // anisotropic data: scale each axis differently and mix
        let raw = rng::normal_tensor(&[n, d], &mut r);
        let mut data = raw.data().to_vec();
        for row in 0..n {
            for j in 0..d {
                data[row * d + j] *= (j + 1) as f32 * 0.5;
            }
        }
        let samples = Tensor::from_vec(&[n, d], data);
        let keep = 3;
        let m = fit_pca(&samples, keep).unwrap();
        let proj = m.project(&samples);
        let rec = m.reconstruct(&proj);
        let mut err = 0.0f64;
        for (a, b) in samples.data().iter().zip(rec.data()) {
            let dlt = (a - b) as f64;
            err += dlt * dlt;
        }
        err /= (n - 1) as f64;

        // total variance via independent accumulation
        let mut mean = vec![0.0f64; d];
        for row in 0..n {
            for j in 0..d {
                mean[j] += samples.data()[row * d + j] as f64;
            }
        }
        for v in &mut mean {
            *v /= n as f64;
        }
        let mut total = 0.0f64;
        for row in 0..n {
            for j in 0..d {
                let c = samples.data()[row * d + j] as f64 - mean[j];
                total += c * c;
            }
        }
        total /= (n - 1) as f64;
        let retained: f64 = m.explained_variance.iter().map(|&v| v as f64).sum();
        assert!(
            (err - (total - retained)).abs() < 1e-3 * total,
            "reconstruction error {err} vs total-retained {}",
            total - retained
        );

        // top eigenvalue cross-checked by power iteration on the
        // covariance (independent of the Jacobi path)
        let top = power_iteration_top_eigenvalue(&samples);
        assert!(
            (top - m.explained_variance[0] as f64).abs() < 1e-3 * top,
            "power iteration {top} vs jacobi {}",
            m.explained_variance[0]
        );
    }

    fn power_iteration_top_eigenvalue(samples: &Tensor) -> f64 {
        let (n, d) = (samples.shape()[0], samples.shape()[1]);
        let x = samples.data();
        let mut mean = vec![0.0f64; d];
        for row in 0..n {
            for j in 0..d {
                mean[j] += x[row * d + j] as f64;
            }
        }
        for v in &mut mean {
            *v /= n as f64;
        }
        let mut cov = vec![0.0f64; d * d];
        for row in 0..n {
            for i in 0..d {
                let ci = x[row * d + i] as f64 - mean[i];
                for j in 0..d {
                    cov[i * d + j] += ci * (x[row * d + j] as f64 - mean[j]);
                }
            }
        }
        for v in &mut cov {
            *v /= (n - 1) as f64;
        }
        let mut v = vec![1.0f64; d];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut nv = vec![0.0f64; d];
            for i in 0..d {
                for j in 0..d {
                    nv[i] += cov[i * d + j] * v[j];
                }
            }
            let norm = nv.iter().map(|a| a * a).sum::<f64>().sqrt();
            for x in &mut nv {
                *x /= norm;
            }
            lambda = norm;
            v = nv;
        }
        lambda
    }

    #[test]
    fn projection_preserves_inner_products_in_subspace() {
        let mut r = rng::seeded(7);
        let samples = rng::normal_tensor(&[200, 5], &mut r);
        let m = fit_pca(&samples, 5).unwrap();
        // full-rank projection is an isometry on centered data
        let proj = m.project(&samples);
        for a in 0..10 {
            for b in 0..10 {
                let mut dot_in = 0.0f64;
                let mut dot_out = 0.0f64;
                for j in 0..5 {
                    let ca = samples.data()[a * 5 + j] - m.mean[j];
                    let cb = samples.data()[b * 5 + j] - m.mean[j];
                    dot_in += ca as f64 * cb as f64;
                    dot_out += proj.data()[a * 5 + j] as f64 * proj.data()[b * 5 + j] as f64;
                }
                assert!((dot_in - dot_out).abs() < 1e-4 * dot_in.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rank_deficiency_pads_with_zero_variance() {
        // 8 samples in 4-D but data lies on a 2-D plane
        let mut data = Vec::new();
        let mut r = rng::seeded(8);
        for _ in 0..8 {
            let a = rng::uniform(&mut r, -1.0, 1.0);
            let b = rng::uniform(&mut r, -1.0, 1.0);
            data.extend_from_slice(&[a, b, a + b, a - b]);
        }
        let samples = Tensor::from_vec(&[8, 4], data);
        let m = fit_pca(&samples, 4).unwrap();
        assert_eq!(m.rank, 2);
        assert!(m.explained_variance[2] == 0.0 && m.explained_variance[3] == 0.0);
        // padded directions still orthonormal
        assert!(m.orthonormality_error() < 1e-4);
    }

    #[test]
    fn too_few_samples_rejected() {
        let samples = Tensor::zeros(&[3, 8]);
        assert!(matches!(
            fit_pca(&samples, 3),
            Err(PcaError::TooFewSamples { .. })
        ));
        assert!(matches!(fit_pca(&samples, 0), Err(PcaError::BadDimension)));
    }

    #[test]
    fn explained_variance_is_nonincreasing() {
        let mut r = rng::seeded(9);
        let samples = rng::normal_tensor(&[300, 6], &mut r);
        let m = fit_pca(&samples, 6).unwrap();
        for w in m.explained_variance.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }
}
