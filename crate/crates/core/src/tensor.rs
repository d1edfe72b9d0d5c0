//! Dense row-major f32 tensors.
//!
//! Shapes are plain `Vec<usize>`; a rank-0 tensor (empty shape, one
//! element) is the scalar convention used by losses. Structural
//! mistakes (shape/product mismatches) are programmer errors and
//! panic; data-driven failures are reported by the loaders that own
//! them.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            data.len(),
            "shape {:?} implies {} elements, got {}",
            shape,
            n,
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True for the scalar convention: rank 0 or a single element.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f32 {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Same data, new shape; element counts must agree.
    pub fn reshape(&self, shape: &[usize]) -> Self {
        Self::from_vec(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Self {
        assert_eq!(
            self.shape, other.shape,
            "elementwise op on mismatched shapes"
        );
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, c: f32) -> Self {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    /// self += c * other, shapes equal.
    pub fn axpy(&mut self, c: f32, other: &Self) {
        assert_eq!(self.shape, other.shape, "axpy on mismatched shapes");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "dot on mismatched shapes");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }

    /// Mean of all elements, accumulated in f64.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Offset of a multi-index in the row-major layout.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &ext)) in idx.iter().zip(self.shape.iter()).enumerate() {
            debug_assert!(ix < ext, "index {ix} out of extent {ext} at axis {i}");
            let _ = i;
            off = off * ext + ix;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> f32 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f32) {
        let off = self.offset(idx);
        self.data[off] = v;
    }
}

/// Swap axes 1 and 2 of a rank-4 tensor: [a, b, c, d] -> [a, c, b, d].
pub fn transpose_12(t: &Tensor) -> Tensor {
    let s = t.shape();
    assert_eq!(s.len(), 4, "transpose_12 expects rank 4, got {:?}", s);
    let (a, b, c, d) = (s[0], s[1], s[2], s[3]);
    let mut out = vec![0.0f32; t.len()];
    let src = t.data();
    for ia in 0..a {
        for ib in 0..b {
            for ic in 0..c {
                let src_off = ((ia * b + ib) * c + ic) * d;
                let dst_off = ((ia * c + ic) * b + ib) * d;
                out[dst_off..dst_off + d].copy_from_slice(&src[src_off..src_off + d]);
            }
        }
    }
    Tensor::from_vec(&[a, c, b, d], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_roundtrip() {
        let s = Tensor::scalar(2.5);
        assert!(s.is_scalar());
        assert_eq!(s.rank(), 0);
        assert_eq!(s.item(), 2.5);
    }

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::from_vec(&[2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(t.at(&[0, 2]), 2.0);
        assert_eq!(t.at(&[1, 0]), 3.0);
    }

    #[test]
    #[should_panic(expected = "implies")]
    fn shape_product_must_match() {
        let _ = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn transpose_12_roundtrip() {
        let t = Tensor::from_vec(&[2, 3, 4, 2], (0..48).map(|i| i as f32).collect());
        let tt = transpose_12(&transpose_12(&t));
        assert_eq!(t, tt);
        let once = transpose_12(&t);
        assert_eq!(once.shape(), &[2, 4, 3, 2]);
        assert_eq!(once.at(&[1, 2, 0, 1]), t.at(&[1, 0, 2, 1]));
    }
}
